//! Alphabet encodings and the Y/Z swap transformation.
//!
//! Letters are indexed `A = 0 .. Z = 25`. An [`Encoding`] assigns one code
//! vector to every letter; one-hot and Haar encodings are orthonormal sets,
//! distributed and Gaussian encodings are not.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EncodingError, GraphError};
use crate::rng::{substream_rng, Stream};
use crate::tensor::Tensor;

pub const ALPHABET: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Letter(u8);

impl Letter {
    pub const Y: Letter = Letter(24);
    pub const Z: Letter = Letter(25);

    pub fn new(index: usize) -> Result<Self, GraphError> {
        if index < ALPHABET {
            Ok(Letter(index as u8))
        } else {
            Err(GraphError::LetterOutOfRange(index))
        }
    }

    pub fn from_char(c: char) -> Result<Self, GraphError> {
        let c = c.to_ascii_uppercase();
        if c.is_ascii_uppercase() {
            Ok(Letter(c as u8 - b'A'))
        } else {
            Err(GraphError::LetterOutOfRange(c as usize))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }

    pub fn all() -> impl Iterator<Item = Letter> {
        (0..ALPHABET as u8).map(Letter)
    }
}

/// A two-letter word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word(pub Letter, pub Letter);

impl Word {
    pub fn parse(s: &str) -> Result<Self, GraphError> {
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(a), Some(b), None) => Ok(Word(Letter::from_char(a)?, Letter::from_char(b)?)),
            _ => Err(GraphError::Parse(format!("not a two-letter word: {s:?}"))),
        }
    }

    pub fn is_identical(&self) -> bool {
        self.0 == self.1
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.0.as_char(), self.1.as_char())
    }
}

/// Swaps a second letter Y with Z and vice versa; everything else is fixed.
pub fn apply_tau_word(word: Word) -> Word {
    let second = match word.1 {
        Letter::Y => Letter::Z,
        Letter::Z => Letter::Y,
        other => other,
    };
    Word(word.0, second)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodingKind {
    OneHot,
    Haar,
    Distributed { active_bits: usize },
    Gaussian { dim: usize },
}

impl EncodingKind {
    pub fn is_orthogonal(&self) -> bool {
        matches!(self, EncodingKind::OneHot | EncodingKind::Haar)
    }

    pub fn name(&self) -> String {
        match self {
            EncodingKind::OneHot => "one_hot".into(),
            EncodingKind::Haar => "haar".into(),
            EncodingKind::Distributed { active_bits } => format!("distributed{active_bits}"),
            EncodingKind::Gaussian { dim } => format!("gaussian{dim}"),
        }
    }

    /// Builds the encoding; `seed` is ignored for one-hot.
    pub fn build(&self, seed: u64) -> Result<Encoding, EncodingError> {
        match *self {
            EncodingKind::OneHot => Ok(make_one_hot()),
            EncodingKind::Haar => make_haar(seed),
            EncodingKind::Distributed { active_bits } => make_distributed(active_bits, seed),
            EncodingKind::Gaussian { dim } => make_gaussian(dim, seed),
        }
    }
}

/// Parses `one_hot`, `haar`, `distributed[:j]` (default 6) and
/// `gaussian[:n]` (default 16).
impl std::str::FromStr for EncodingKind {
    type Err = EncodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |default: usize| -> Result<usize, EncodingError> {
            arg.map_or(Ok(default), |a| a.parse().map_err(|_| EncodingError::UnknownKind(s.into())))
        };
        match head {
            "one_hot" | "onehot" if arg.is_none() => Ok(EncodingKind::OneHot),
            "haar" if arg.is_none() => Ok(EncodingKind::Haar),
            "distributed" => Ok(EncodingKind::Distributed { active_bits: num(6)? }),
            "gaussian" => Ok(EncodingKind::Gaussian { dim: num(16)? }),
            _ => Err(EncodingError::UnknownKind(s.into())),
        }
    }
}

/// Immutable set of 26 code vectors of common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub kind: EncodingKind,
    pub seed: Option<u64>,
    pub dim: usize,
    codes: Vec<Vec<f64>>,
}

impl Encoding {
    pub fn code(&self, letter: Letter) -> &[f64] {
        &self.codes[letter.index()]
    }

    pub fn codes(&self) -> &[Vec<f64>] {
        &self.codes
    }

    /// `dim x 26` matrix whose columns are the codes.
    fn code_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, ALPHABET, |r, c| self.codes[c][r])
    }

    /// Largest deviation of the code Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let c = self.code_matrix();
        let gram = c.transpose() * &c;
        (gram - DMatrix::identity(ALPHABET, ALPHABET)).amax()
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Letter `i` is the canonical basis vector `e_{i+1}` of R^26.
pub fn make_one_hot() -> Encoding {
    let codes = (0..ALPHABET)
        .map(|i| {
            let mut v = vec![0.0; ALPHABET];
            v[i] = 1.0;
            v
        })
        .collect();
    Encoding {
        kind: EncodingKind::OneHot,
        seed: None,
        dim: ALPHABET,
        codes,
    }
}

/// Columns of a Haar-distributed orthogonal 26x26 matrix: QR of a standard
/// Gaussian matrix with Q's columns multiplied by the signs of diag(R).
pub fn make_haar(seed: u64) -> Result<Encoding, EncodingError> {
    let q = haar_orthogonal(ALPHABET, seed)?;
    let codes = (0..ALPHABET)
        .map(|c| (0..ALPHABET).map(|r| q[(r, c)]).collect())
        .collect();
    Ok(Encoding {
        kind: EncodingKind::Haar,
        seed: Some(seed),
        dim: ALPHABET,
        codes,
    })
}

pub(crate) fn haar_orthogonal(n: usize, seed: u64) -> Result<DMatrix<f64>, EncodingError> {
    for attempt in 0..8 {
        let mut rng = substream_rng(seed, Stream::Encoding, attempt);
        let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let qr = g.qr();
        let r = qr.r();
        if (0..n).any(|i| r[(i, i)].abs() < 1e-10) {
            continue;
        }
        let mut q = qr.q();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        return Ok(q);
    }
    Err(EncodingError::RankDeficient)
}

/// 26 distinct binary codes with exactly `active_bits` ones each.
pub fn make_distributed(active_bits: usize, seed: u64) -> Result<Encoding, EncodingError> {
    // j = 26 admits a single code, so 26 distinct ones cannot exist
    if !(1..ALPHABET).contains(&active_bits) {
        return Err(EncodingError::BadActiveBits(active_bits));
    }
    let mut rng = substream_rng(seed, Stream::Encoding, 0);
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(ALPHABET);
    while codes.len() < ALPHABET {
        let mut v = vec![0.0; ALPHABET];
        for i in sample(&mut rng, ALPHABET, active_bits) {
            v[i] = 1.0;
        }
        if !codes.contains(&v) {
            codes.push(v);
        }
    }
    Ok(Encoding {
        kind: EncodingKind::Distributed { active_bits },
        seed: Some(seed),
        dim: ALPHABET,
        codes,
    })
}

/// 26 i.i.d. standard normal vectors in R^dim.
pub fn make_gaussian(dim: usize, seed: u64) -> Result<Encoding, EncodingError> {
    if dim == 0 {
        return Err(EncodingError::ZeroDimension);
    }
    let mut rng = substream_rng(seed, Stream::Encoding, 0);
    let codes = (0..ALPHABET)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    Ok(Encoding {
        kind: EncodingKind::Gaussian { dim },
        seed: Some(seed),
        dim,
        codes,
    })
}

/// Matrix of the second-letter swap in encoding coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tau2Matrix {
    /// `T2 = B^-1 P B`.
    pub t2: Tensor,
    /// Change of basis from encoding space to code coordinates.
    pub basis: Tensor,
    /// Permutation swapping the Y and Z coordinates (the last two codes).
    pub permutation: Tensor,
    pub orthogonal: bool,
    pub symmetric: bool,
}

const FLAG_TOL: f64 = 1e-10;

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let mut t = Tensor::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            t.set(r, c, m[(r, c)]);
        }
    }
    t
}

fn flags(t2: &DMatrix<f64>) -> (bool, bool) {
    let n = t2.nrows();
    let orth = (t2.transpose() * t2 - DMatrix::identity(n, n)).amax() < FLAG_TOL;
    let sym = (t2 - t2.transpose()).amax() < FLAG_TOL;
    (orth, sym)
}

/// The linear map sending code(Y) to code(Z), code(Z) to code(Y) and fixing
/// every other code. When the codes span less than the whole space they are
/// completed to a basis with orthonormal complement vectors, which the map
/// fixes as well.
pub fn tau2_of(enc: &Encoding) -> Result<Tau2Matrix, EncodingError> {
    let d = enc.dim;
    if d < ALPHABET {
        return Err(EncodingError::LinearlyDependent);
    }
    let codes = enc.code_matrix();
    let sv = codes.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smax == 0.0 || smin / smax < 1e-10 {
        return Err(EncodingError::LinearlyDependent);
    }

    // Basis matrix M: the 26 codes followed by an orthonormal complement.
    let mut m = DMatrix::zeros(d, d);
    m.view_mut((0, 0), (d, ALPHABET)).copy_from(&codes);
    if d > ALPHABET {
        let mut ortho: Vec<nalgebra::DVector<f64>> = Vec::new();
        for c in 0..ALPHABET {
            let mut v = codes.column(c).into_owned();
            for q in &ortho {
                v -= q * q.dot(&v);
            }
            let n = v.norm();
            if n > 1e-12 {
                ortho.push(v / n);
            }
        }
        let mut col = ALPHABET;
        for i in 0..d {
            if col == d {
                break;
            }
            let mut v = nalgebra::DVector::zeros(d);
            v[i] = 1.0;
            for q in &ortho {
                v -= q * q.dot(&v);
            }
            let n = v.norm();
            if n > 1e-8 {
                let v = v / n;
                m.set_column(col, &v);
                ortho.push(v);
                col += 1;
            }
        }
    }

    let mut p = DMatrix::<f64>::identity(d, d);
    let (y, z) = (Letter::Y.index(), Letter::Z.index());
    p[(y, y)] = 0.0;
    p[(z, z)] = 0.0;
    p[(y, z)] = 1.0;
    p[(z, y)] = 1.0;

    let basis = m.clone().try_inverse().ok_or(EncodingError::LinearlyDependent)?;
    let t2 = &m * &p * &basis;
    let (orthogonal, symmetric) = flags(&t2);
    Ok(Tau2Matrix {
        t2: to_tensor(&t2),
        basis: to_tensor(&basis),
        permutation: to_tensor(&p),
        orthogonal,
        symmetric,
    })
}

/// Swap of code(Y) and code(Z) that fixes the orthogonal complement of their
/// span. Defined whenever those two codes are independent, so it also covers
/// encodings whose 26 codes cannot be linearly independent (dim < 26).
/// Coincides with [`tau2_of`] for orthonormal encodings.
pub fn tau2_pair_swap(enc: &Encoding) -> Result<Tau2Matrix, EncodingError> {
    let d = enc.dim;
    let cy = nalgebra::DVector::from_column_slice(enc.code(Letter::Y));
    let cz = nalgebra::DVector::from_column_slice(enc.code(Letter::Z));
    let pair = DMatrix::from_columns(&[cy.clone(), cz.clone()]);
    let swapped = DMatrix::from_columns(&[cz, cy]);
    let gram = pair.transpose() * &pair;
    let gram_inv = gram.try_inverse().ok_or(EncodingError::LinearlyDependent)?;
    let pinv = &gram_inv * pair.transpose();
    let proj = &pair * &pinv;
    if (proj.trace() - 2.0).abs() > 1e-8 {
        return Err(EncodingError::LinearlyDependent);
    }
    let t2 = DMatrix::identity(d, d) - &proj + &swapped * &pinv;
    let (orthogonal, symmetric) = flags(&t2);
    let mut p = DMatrix::<f64>::identity(2, 2);
    p.swap_rows(0, 1);
    Ok(Tau2Matrix {
        t2: to_tensor(&t2),
        basis: to_tensor(&pinv),
        permutation: to_tensor(&p),
        orthogonal,
        symmetric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn apply(t: &Tensor, v: &[f64]) -> Vec<f64> {
        (0..t.rows()).map(|r| dot(t.row(r), v)).collect()
    }

    #[test]
    fn kind_strings_parse() {
        assert_eq!("one_hot".parse::<EncodingKind>().unwrap(), EncodingKind::OneHot);
        assert_eq!("distributed".parse::<EncodingKind>().unwrap(), EncodingKind::Distributed { active_bits: 6 });
        assert_eq!("gaussian:8".parse::<EncodingKind>().unwrap(), EncodingKind::Gaussian { dim: 8 });
        assert!("haar:3".parse::<EncodingKind>().is_err());
        assert!("distributed:x".parse::<EncodingKind>().is_err());
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn letters_and_words() {
        assert_eq!(Letter::from_char('a').unwrap().index(), 0);
        assert_eq!(Letter::from_char('Z').unwrap(), Letter::Z);
        assert!(Letter::from_char('3').is_err());
        let w = Word::parse("EY").unwrap();
        assert_eq!(w.to_string(), "EY");
        assert!(Word::parse("ABC").is_err());
    }

    #[test]
    fn tau_word_rule() {
        let tau = |s: &str| apply_tau_word(Word::parse(s).unwrap()).to_string();
        assert_eq!(tau("EY"), "EZ");
        assert_eq!(tau("AB"), "AB");
        assert_eq!(tau("ZZ"), "ZY");
        assert_eq!(tau("YA"), "YA");
    }

    #[test]
    fn one_hot_codes() {
        let e = make_one_hot();
        assert_eq!(e.dim, 26);
        assert_eq!(e.code(Letter::new(0).unwrap())[0], 1.0);
        assert_eq!(e.orthonormality_defect(), 0.0);
    }

    #[test]
    fn haar_is_orthonormal_and_seeded() {
        let a = make_haar(1).unwrap();
        assert!(a.orthonormality_defect() < 1e-12);
        let b = make_haar(2).unwrap();
        assert_ne!(a.codes(), b.codes());
        assert_eq!(a, make_haar(1).unwrap());
    }

    #[test]
    fn distributed_codes() {
        let e = make_distributed(6, 11).unwrap();
        for c in e.codes() {
            assert_eq!(c.iter().filter(|&&x| x == 1.0).count(), 6);
            assert_eq!(c.iter().filter(|&&x| x != 0.0 && x != 1.0).count(), 0);
        }
        for i in 0..26 {
            for j in 0..i {
                assert_ne!(e.codes()[i], e.codes()[j]);
            }
        }
        assert!(make_distributed(0, 1).is_err());
        assert!(make_distributed(27, 1).is_err());
        assert!(make_distributed(25, 1).is_ok());
    }

    #[test]
    fn gaussian_codes() {
        let e = make_gaussian(16, 5).unwrap();
        assert_eq!(e.dim, 16);
        assert_eq!(e, make_gaussian(16, 5).unwrap());
        let mut max_dot: f64 = 0.0;
        for i in 0..26 {
            for j in 0..i {
                max_dot = max_dot.max(dot(&e.codes()[i], &e.codes()[j]).abs());
            }
        }
        assert!(max_dot > 0.0);
        assert!(make_gaussian(0, 1).is_err());
    }

    #[test]
    fn one_hot_tau2_is_the_swap_permutation() {
        let t = tau2_of(&make_one_hot()).unwrap();
        let mut p = Tensor::identity(26);
        p.set(24, 24, 0.0);
        p.set(25, 25, 0.0);
        p.set(24, 25, 1.0);
        p.set(25, 24, 1.0);
        assert_eq!(t.t2, p);
        assert!(t.orthogonal && t.symmetric);
    }

    #[test]
    fn haar_tau2_properties() {
        for seed in 0..5 {
            let e = make_haar(seed).unwrap();
            let t = tau2_of(&e).unwrap();
            assert!(t.orthogonal && t.symmetric, "seed {seed}");
            let sq = t.t2.matmul(&t.t2).unwrap();
            assert!(sq.max_abs_diff(&Tensor::identity(26)) < 1e-12);
            let y = e.code(Letter::Y);
            let z = e.code(Letter::Z);
            assert!(max_diff(&apply(&t.t2, y), z) < 1e-12);
            assert!(max_diff(&apply(&t.t2, z), y) < 1e-12);
            for l in Letter::all().filter(|&l| l != Letter::Y && l != Letter::Z) {
                assert!(max_diff(&apply(&t.t2, e.code(l)), e.code(l)) < 1e-12);
            }
            let pair = tau2_pair_swap(&e).unwrap();
            assert!(pair.t2.max_abs_diff(&t.t2) < 1e-10);
        }
    }

    #[test]
    fn non_orthogonal_tau2() {
        let e = make_distributed(6, 3).unwrap();
        match tau2_of(&e) {
            Ok(t) => {
                assert!(!(t.orthogonal && t.symmetric));
                let y = e.code(Letter::Y);
                let z = e.code(Letter::Z);
                assert!(max_diff(&apply(&t.t2, y), z) < 1e-8);
                let a = e.code(Letter::new(0).unwrap());
                assert!(max_diff(&apply(&t.t2, a), a) < 1e-8);
            }
            Err(err) => assert_eq!(err, EncodingError::LinearlyDependent),
        }
        let g = make_gaussian(16, 1).unwrap();
        assert_eq!(tau2_of(&g).unwrap_err(), EncodingError::LinearlyDependent);
        let pair = tau2_pair_swap(&g).unwrap();
        assert!(max_diff(&apply(&pair.t2, g.code(Letter::Y)), g.code(Letter::Z)) < 1e-10);
        assert!(!pair.orthogonal);

        let wide = make_gaussian(30, 2).unwrap();
        let t = tau2_of(&wide).unwrap();
        let y = wide.code(Letter::Y);
        let z = wide.code(Letter::Z);
        assert!(max_diff(&apply(&t.t2, y), z) < 1e-8);
        assert_eq!(t.t2.shape(), (30, 30));
    }

    #[test]
    fn encoding_json_round_trip() {
        let e = make_haar(9).unwrap();
        let back = Encoding::from_json(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);
    }
}

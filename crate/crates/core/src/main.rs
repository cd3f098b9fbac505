use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use idlab::encodings::EncodingKind;
use idlab::experiments::emit::{svg_bars, svg_dicyclic_coloring, svg_heatmap, write_csv, write_json};
use idlab::experiments::invariance::{gradient_invariance_check, invariance_deterministic_check, invariance_statistical_check};
use idlab::experiments::{run_trials, Case, ExperimentConfig, Split, TrialResult};
use idlab::gnn::ModelKind;
use idlab::graph::{make_cycle, make_dicyclic, DicyclicSpec};
use idlab::optim::OptimizerKind;
use idlab::wl::{dicyclic_symmetric_by_wl, single_marked_init, wl_refine, Coloring, ColoringTrace, SymmetryVerdict};
use idlab::{Error, Result};

#[derive(Parser)]
#[command(name = "lab", version, about = "GNN identity-effect experiments and 1-WL tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-letter word rating experiments.
    Words(WordsArgs),
    /// Dicyclic-graph extraction / extrapolation experiments.
    Dicyclic(DicyclicArgs),
    /// Rating-invariance checks; exits with status 1 when a check fails.
    Invariance(InvarianceArgs),
    /// 1-WL refinement of a cycle or dicyclic graph.
    Wl(WlArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "gconv_glob", alias = "glob")]
    GconvGlob,
    #[value(name = "gconv_diff", alias = "diff")]
    GconvDiff,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::GconvGlob => ModelKind::GconvGlob,
            ModelArg::GconvDiff => ModelKind::GconvDiff,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
    Amsgrad,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Amsgrad => OptimizerKind::Amsgrad,
        }
    }
}

/// Training overrides shared by the experiment commands. Flags win over `--config`.
#[derive(Args)]
struct Common {
    /// JSON experiment config to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Option<ExperimentConfig>> {
        let Some(path) = &self.config else { return Ok(None) };
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(m) = self.model {
            cfg.model = m.into();
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(o) = self.optimizer {
            cfg.train.optimizer = o.into();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

#[derive(Args)]
struct WordsArgs {
    /// Comma-separated kinds (one_hot, haar, distributed[:j], gaussian[:n]) or `all`.
    #[arg(long, default_value = "one_hot")]
    encoding: String,
    #[arg(long)]
    encoding_seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Extraction,
    Extrapolation,
}

#[derive(Args)]
struct DicyclicArgs {
    #[arg(long, value_enum, default_value = "extraction")]
    task: Task,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    g: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gradient,
    Deterministic,
    Statistical,
}

#[derive(Args)]
struct InvarianceArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value = "one_hot")]
    encoding: String,
    /// Random parameter points (gradient mode).
    #[arg(long, default_value_t = 50)]
    draws: usize,
    /// Number of consecutive seeds (deterministic mode).
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// SGD steps (deterministic mode).
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Skip the perturbed control runs.
    #[arg(long)]
    no_control: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct WlArgs {
    /// `cycle:m` or `dicyclic:m,n`.
    #[arg(long)]
    graph: String,
    /// Start from one marked node instead of a uniform coloring (cycles only).
    #[arg(long)]
    marked: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also write result.json into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_encodings(spec: &str) -> Result<Vec<EncodingKind>> {
    let list = if spec == "all" { "one_hot,haar,distributed:6,gaussian:16" } else { spec };
    list.split(',').map(|s| Ok(s.trim().parse()?)).collect()
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    seconds: f64,
}

fn write_timing(dir: &Path, start: Instant) -> Result<()> {
    write_json(&Timing { seconds: start.elapsed().as_secs_f64() }, &dir.join("timing.json"))
}

fn write_results(dir: &Path, results: &[TrialResult]) -> Result<()> {
    write_json(&results, &dir.join("result.json"))?;
    write_csv(results, &dir.join("result.csv"))
}

fn print_summary(r: &TrialResult) {
    println!(
        "{}: train acc {:.3} ± {:.3}, test acc {:.3} ± {:.3}, failed trials {}",
        r.config.tag(),
        r.train_accuracy.mean,
        r.train_accuracy.std,
        r.test_accuracy.mean,
        r.test_accuracy.std,
        r.failed_trials
    );
}

fn words(a: WordsArgs) -> Result<bool> {
    let start = Instant::now();
    let base = a.common.load()?;
    let mut results = Vec::new();
    for kind in parse_encodings(&a.encoding)? {
        let mut cfg = base.clone().unwrap_or_else(|| ExperimentConfig::words(kind, ModelKind::GconvDiff, 1));
        cfg.case = Case::Words;
        cfg.encoding = Some(kind);
        if let Some(s) = a.encoding_seed {
            cfg.encoding_seed = s;
        }
        a.common.apply(&mut cfg);
        let r = run_trials(&cfg)?;
        print_summary(&r);
        for i in &r.inputs {
            println!("  {:>3}  {:.4} ± {:.4}", i.name, i.mean, i.std);
        }
        results.push(r);
    }
    prepare_out(&a.common.out)?;
    write_results(&a.common.out, &results)?;
    let title = format!("word ratings, {}, T={}", results[0].config.model.name(), results[0].config.layers);
    std::fs::write(a.common.out.join("ratings.svg"), svg_bars(&results, &title))?;
    write_timing(&a.common.out, start)?;
    Ok(true)
}

fn dicyclic(a: DicyclicArgs) -> Result<bool> {
    let start = Instant::now();
    let mut cfg = match (a.common.load()?, a.task) {
        (Some(c), _) => c,
        (None, Task::Extraction) => ExperimentConfig::extraction(8, 7, ModelKind::GconvDiff),
        (None, Task::Extrapolation) => ExperimentConfig::extrapolation(8, 1, ModelKind::GconvDiff),
    };
    match a.task {
        Task::Extraction => {
            cfg.case = Case::Extraction;
            cfg.k = a.k.or(cfg.k).or(Some(7));
        }
        Task::Extrapolation => {
            cfg.case = Case::Extrapolation;
            cfg.g = a.g.or(cfg.g).or(Some(1));
        }
    }
    cfg.n_max = a.nmax.or(cfg.n_max).or(Some(8));
    // depth follows the task unless given explicitly
    cfg.layers = cfg.n_max.unwrap_or(0) + if matches!(a.task, Task::Extrapolation) { cfg.g.unwrap_or(0) } else { 0 };
    a.common.apply(&mut cfg);
    let r = run_trials(&cfg)?;
    print_summary(&r);
    let n_max = cfg.n_max.unwrap_or(0);
    let wrong = r.misclassified(Split::Test);
    let outside = wrong.iter().filter(|i| i.cell.is_some_and(|(m, n)| m > n_max && n > n_max)).count();
    println!("misclassified test cells: {} ({} with m,n > {n_max})", wrong.len(), outside);
    for i in &wrong {
        println!("  {} mean {:.3} label {}", i.name, i.mean, i.label);
    }
    prepare_out(&a.common.out)?;
    write_results(&a.common.out, std::slice::from_ref(&r))?;
    std::fs::write(a.common.out.join("heatmap.svg"), svg_heatmap(&r, &cfg.tag()))?;
    write_timing(&a.common.out, start)?;
    Ok(true)
}

fn invariance(a: InvarianceArgs) -> Result<bool> {
    let start = Instant::now();
    let kind: EncodingKind = a.encoding.parse()?;
    let model: ModelKind = a.common.model.map_or(ModelKind::GconvDiff, Into::into);
    let seed = a.common.seed.unwrap_or(0);
    let out = &a.common.out;
    prepare_out(out)?;
    let passed = match a.mode {
        Mode::Gradient => {
            let enc = kind.build(seed)?;
            let r = gradient_invariance_check(&enc, a.draws, seed, model)?;
            println!(
                "gradient {}: max deviation upd {:.3e}, agg {:.3e}, control {:.3e} (tol {:.0e}) -> {}",
                r.encoding,
                r.max_deviation_upd,
                r.max_deviation_agg,
                r.control_deviation,
                r.tolerance,
                verdict(r.passed)
            );
            write_json(&r, &out.join("result.json"))?;
            r.passed
        }
        Mode::Deterministic => {
            let lr = a.common.lr.unwrap_or(0.1);
            let reports = (0..a.seeds as u64)
                .map(|s| {
                    let enc = kind.build(seed + s)?;
                    invariance_deterministic_check(&enc, seed + s, model, a.steps, lr, !a.no_control)
                })
                .collect::<Result<Vec<_>>>()?;
            for r in &reports {
                println!(
                    "deterministic {} seed {}: max gap {:.3e} (x = {}), control {} -> {}",
                    r.encoding,
                    r.seed,
                    r.max_gap,
                    r.worst_letter,
                    r.control_gap.map_or("-".into(), |g| format!("{g:.3e}")),
                    verdict(r.passed)
                );
            }
            write_json(&reports, &out.join("result.json"))?;
            reports.iter().all(|r| r.passed)
        }
        Mode::Statistical => {
            let mut cfg = a.common.load()?.unwrap_or_else(|| ExperimentConfig::words(kind, model, 1));
            cfg.case = Case::Words;
            cfg.encoding = Some(kind);
            a.common.apply(&mut cfg);
            let r = invariance_statistical_check(&cfg)?;
            for p in &r.pairs {
                println!(
                    "{} vs {}: means {:.4} / {:.4}, KS D = {:.3} (critical {:.3}){}",
                    p.a,
                    p.b,
                    p.mean_a,
                    p.mean_b,
                    p.ks.statistic,
                    p.ks.critical,
                    if p.ks.rejects { " rejects" } else { "" }
                );
            }
            println!("statistical {} {}: {}", r.encoding, r.model.name(), verdict(r.passed));
            write_json(&r, &out.join("result.json"))?;
            r.passed
        }
    };
    write_timing(out, start)?;
    Ok(passed)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

#[derive(Serialize)]
struct WlOutput {
    graph: String,
    trace: ColoringTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    dicyclic: Option<SymmetryVerdict>,
}

fn parse_dicyclic(s: &str) -> Option<(usize, usize)> {
    let (m, n) = s.split_once(',')?;
    Some((m.trim().parse().ok()?, n.trim().parse().ok()?))
}

fn wl(a: WlArgs) -> Result<bool> {
    let bad = || Error::Config(format!("cannot parse graph `{}` (cycle:m or dicyclic:m,n)", a.graph));
    let (kind, arg) = a.graph.split_once(':').ok_or_else(bad)?;
    let (graph, spec) = match kind {
        "cycle" => (make_cycle(arg.parse().map_err(|_| bad())?)?, None),
        "dicyclic" => {
            let (m, n) = parse_dicyclic(arg).ok_or_else(bad)?;
            let spec = DicyclicSpec::new(m, n)?;
            (make_dicyclic(spec)?, Some(spec))
        }
        _ => return Err(bad()),
    };
    let n = graph.num_nodes();
    let init = match (a.marked, spec) {
        (false, _) => Coloring::uniform(n),
        (true, None) => single_marked_init(n),
        (true, Some(_)) => return Err(Error::Config("--marked applies to cycles only".into())),
    };
    let trace = wl_refine(&graph, &init, a.max_iter.unwrap_or(n))?;
    if let (Some(path), Some(spec)) = (&a.svg, spec) {
        std::fs::write(path, svg_dicyclic_coloring(spec, trace.last()))?;
    } else if a.svg.is_some() {
        return Err(Error::Config("--svg is available for dicyclic graphs".into()));
    }
    let output = WlOutput {
        graph: a.graph.clone(),
        trace,
        dicyclic: spec.map(dicyclic_symmetric_by_wl).transpose()?,
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
        write_json(&output, &dir.join("result.json"))?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Words(a) => words(a),
        Command::Dicyclic(a) => dicyclic(a),
        Command::Invariance(a) => invariance(a),
        Command::Wl(a) => wl(a),
    };
    match run {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

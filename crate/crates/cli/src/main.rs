use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use volcal::dupire::OptionKind;
use volcal::io::{
    export_surface, load_config, read_quotes, save_config, write_dataset, write_key_values,
    CalibrationReport, Coordinates, ExperimentConfig, ExportGrid, Metric, Reference, RunResult, SurfaceSource,
};
use volcal::mc::{ExactField, Scheme};
use volcal::pipeline::{generate, run_ablation, Evaluation};
use volcal::trainer::{checkpoint_load, Checkpoint};
use volcal::Error;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (volcal-format v1)");

#[derive(Parser, Debug)]
#[command(name = "volcal", version = VERSION, about = "Self-consistent local-volatility calibration")]
struct Cli {
    /// Worker threads for path simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Iterations between progress lines on stderr; 0 disables them.
    #[arg(long, global = true, default_value_t = 500)]
    progress_every: usize,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate synthetic quotes under the closed-form test volatility.
    Generate(GenerateArgs),
    /// Calibrate price and volatility networks to a quote file.
    Calibrate(CalibrateArgs),
    /// Monte Carlo repricing of quotes under a calibrated volatility.
    Reprice(RepriceArgs),
    /// Surface errors of a checkpoint against the exact test volatility.
    Evaluate(EvaluateArgs),
    /// Write a surface of a checkpoint on a grid.
    Export(ExportArgs),
    /// Calibrate over several Dupire weights and seeds.
    Ablate(AblateArgs),
}

/// Market constants; override the configuration file.
#[derive(Args, Debug, Clone, Default)]
struct MarketArgs {
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    kind: Option<OptionKind>,
    #[arg(long)]
    k_max: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spot price; required unless a configuration file supplies it.
    #[arg(long, required_unless_present = "config")]
    s0: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    kind: Option<OptionKind>,
    /// Maturities x strikes, e.g. 10x20.
    #[arg(long, value_parser = parse_dims)]
    grid: Option<(usize, usize)>,
    /// Strike range lo:hi.
    #[arg(long, value_parser = parse_range)]
    k: Option<(f64, f64)>,
    /// Maturity range lo:hi in years.
    #[arg(long, value_parser = parse_range)]
    t: Option<(f64, f64)>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Output quote CSV.
    #[arg(long, default_value = "quotes.csv")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    #[arg(long)]
    lambda_ini: Option<f64>,
    #[arg(long)]
    lambda_arb: Option<f64>,
    #[arg(long)]
    lambda_dup: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    m2: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_interval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    eval_chunk: Option<usize>,
    /// Run the full iteration budget.
    #[arg(long)]
    no_early_stop: bool,
    /// Leave the volatility network untouched when lambda-dup is 0.
    #[arg(long)]
    freeze_vol_when_unregularized: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct EvalArgs {
    /// exact (synthetic data) or none (market data).
    #[arg(long)]
    reference: Option<Reference>,
    /// Evaluation grid, maturities x strikes.
    #[arg(long, value_parser = parse_dims)]
    eval_grid: Option<(usize, usize)>,
    /// Paths for reference prices and repricing.
    #[arg(long)]
    eval_paths: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
}

/// Inputs shared by `calibrate` and `ablate`.
#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    quotes: PathBuf,
    #[command(flatten)]
    market: MarketArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated Dupire weights.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

#[derive(Args, Debug)]
struct RepriceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    quotes: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    market: MarketArgs,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "reprice.txt")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "exact")]
    reference: Reference,
    #[arg(long, value_parser = parse_dims, default_value = "256x256")]
    grid: (usize, usize),
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Strike range lo:hi of the evaluation grid.
    #[arg(long, value_parser = parse_range)]
    k: Option<(f64, f64)>,
    /// Maturity range lo:hi of the evaluation grid.
    #[arg(long, value_parser = parse_range)]
    t: Option<(f64, f64)>,
    #[arg(long, default_value = "evaluation.txt")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum SurfaceArg {
    Price,
    Vol,
    ExactVol,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    surface: SurfaceArg,
    #[arg(long, default_value = "original")]
    coords: Coordinates,
    #[arg(long, value_parser = parse_dims, default_value = "256x256")]
    grid: (usize, usize),
    #[arg(long, value_parser = parse_range)]
    k: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_range)]
    t: Option<(f64, f64)>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad row count in {s:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad column count in {s:?}"))?;
    if a == 0 || b == 0 {
        return Err(format!("grid {s:?} is empty"));
    }
    Ok((a, b))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad lower bound in {s:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad upper bound in {s:?}"))?;
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(format!("range {s:?} must be finite and ordered"));
    }
    Ok((a, b))
}

fn base_config(path: &Option<PathBuf>) -> volcal::Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_market(cfg: &mut ExperimentConfig, m: &MarketArgs) {
    if let Some(v) = m.s0 {
        cfg.market.spot = v;
    }
    if let Some(v) = m.r {
        cfg.market.rate = v;
    }
    if let Some(v) = m.kind {
        cfg.market.kind = v;
    }
    if m.k_max.is_some() {
        cfg.market.k_max = m.k_max;
    }
    if m.t_max.is_some() {
        cfg.market.t_max = m.t_max;
    }
}

fn apply_train(cfg: &mut ExperimentConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field { t.$field = v; })*};
    }
    set!(lambda_ini, lambda_arb, lambda_dup, max_iters, m1, m2, lr0, lr_decay, lr_interval, seed, checkpoint_every);
    if let Some(v) = a.blocks {
        t.net.blocks = v;
    }
    if let Some(v) = a.width {
        t.net.width = v;
    }
    if a.eval_chunk.is_some() {
        t.eval_chunk = a.eval_chunk;
    }
    if a.no_early_stop {
        t.early_stop = false;
    }
    if a.freeze_vol_when_unregularized {
        t.freeze_vol_when_unregularized = true;
    }
}

fn apply_eval(cfg: &mut ExperimentConfig, a: &EvalArgs) {
    if let Some(r) = a.reference {
        cfg.eval.reference = r;
    }
    if let Some((m, k)) = a.eval_grid {
        cfg.eval.maturities = m;
        cfg.eval.strikes = k;
    }
    if let Some(p) = a.eval_paths {
        cfg.eval.paths = p;
    }
    if let Some(s) = a.eval_seed {
        cfg.eval.seed = s;
    }
}

fn cmd_generate(a: &GenerateArgs) -> volcal::Result<()> {
    let mut cfg = base_config(&a.config)?;
    let market = MarketArgs {
        s0: a.s0,
        r: a.r,
        kind: a.kind,
        ..Default::default()
    };
    apply_market(&mut cfg, &market);
    if let Some((m, k)) = a.grid {
        cfg.grid.maturities = m;
        cfg.grid.strikes = k;
    }
    if let Some((lo, hi)) = a.k {
        cfg.grid.strike_range = [lo, hi];
    }
    if let Some((lo, hi)) = a.t {
        cfg.grid.maturity_range = [lo, hi];
    }
    if let Some(p) = a.paths {
        cfg.sim.n_paths = p;
    }
    if let Some(s) = a.seed {
        cfg.sim.seed = s;
    }
    if let Some(dt) = a.dt {
        cfg.sim.dt = dt;
    }
    if let Some(s) = a.scheme {
        cfg.sim.scheme = s;
    }
    cfg.sim.horizon = a.horizon.unwrap_or(cfg.sim.horizon.max(cfg.grid.maturity_range[1]));
    let (dataset, frame) = generate(&cfg)?;
    write_dataset(&a.out, &dataset, &frame)?;
    info!("wrote {} quotes to {}", dataset.quotes.len(), a.out.display());
    Ok(())
}

fn load_quotes(path: &Path, cfg: &ExperimentConfig) -> volcal::Result<Vec<volcal::dupire::OptionQuote>> {
    let file = read_quotes(path, cfg.market.spot, cfg.market.kind)?;
    if !file.rejections.is_empty() {
        log::warn!("{} of {} rows rejected", file.rejections.len(), file.rejections.len() + file.quotes.len());
    }
    Ok(file.quotes)
}

fn ablate(a: &RunArgs, lambdas: Option<&[f64]>, repeats: usize, progress_every: usize) -> volcal::Result<()> {
    let mut cfg = base_config(&a.config)?;
    apply_market(&mut cfg, &a.market);
    apply_train(&mut cfg, &a.train);
    apply_eval(&mut cfg, &a.eval);
    if let Some(d) = &a.out_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    let quotes = load_quotes(&a.quotes, &cfg)?;
    let frame = cfg.market.frame_for(&quotes)?;
    cfg.sim.horizon = cfg.sim.horizon.max(frame.t_max);
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    save_config(&out.join("config.toml"), &cfg)?;
    let single = [cfg.train.lambda_dup];
    let lambdas = lambdas.unwrap_or(&single);
    let report = run_ablation(&quotes, &frame, &cfg, lambdas, repeats, Some(&out), progress_every)?;
    info!("report written to {}", out.join("report.csv").display());
    summarize(&report);
    Ok(())
}

fn summarize(report: &CalibrationReport) {
    for lambda in report.lambdas() {
        let show = |pick: fn(&RunResult) -> Option<Metric>| match report.spread(lambda, pick) {
            Some(s) => format!("{:.5} ± {:.5}", s.mean, s.std),
            None => "n/a".into(),
        };
        info!(
            "lambda {lambda}: price rmse {}, vol rmse {}, reprice rmse {}",
            show(|r| r.price_rmse),
            show(|r| r.vol_rmse),
            show(|r| r.reprice_rmse)
        );
    }
}

fn frames_agree(a: &volcal::dupire::MarketFrame, b: &volcal::dupire::MarketFrame) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
    a.kind == b.kind && close(a.spot, b.spot) && close(a.rate, b.rate) && close(a.k_max, b.k_max) && close(a.t_max, b.t_max)
}

fn cmd_reprice(a: &RepriceArgs) -> volcal::Result<()> {
    let cp = checkpoint_load(&a.checkpoint)?;
    let mut cfg = base_config(&a.config)?;
    cfg.market.spot = cp.frame.spot;
    cfg.market.rate = cp.frame.rate;
    cfg.market.kind = cp.frame.kind;
    apply_market(&mut cfg, &a.market);
    let quotes = load_quotes(&a.quotes, &cfg)?;
    let frame = cfg.market.frame_for(&quotes)?;
    if !frames_agree(&frame, &cp.frame) {
        return Err(Error::ConfigMismatch(format!(
            "quotes imply market frame {frame:?} but the checkpoint was trained on {:?}",
            cp.frame
        )));
    }
    if let Some(p) = a.paths {
        cfg.eval.paths = p;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed = s;
    }
    cfg.eval.reference = Reference::None;
    cfg.sim.horizon = cfg.sim.horizon.max(frame.t_max);
    let eval = Evaluation::prepare(&cfg, &frame)?;
    let report = eval.reprice(&cp.vol_model(), &quotes)?;
    let mut out = std::collections::BTreeMap::new();
    out.insert("reprice_rmse".to_string(), format!("{:?}", report.rmse));
    out.insert("quotes".to_string(), report.quotes.to_string());
    out.insert("mean_std_error".to_string(), format!("{:?}", report.mean_std_error));
    out.insert("clamped_queries".to_string(), report.clamped_queries.to_string());
    out.insert("paths".to_string(), cfg.eval.paths.to_string());
    out.insert("seed".to_string(), cfg.eval.seed.to_string());
    write_key_values(&a.out, &out)?;
    info!("reprice rmse {:.6} over {} quotes", report.rmse, report.quotes);
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> volcal::Result<()> {
    let cp = checkpoint_load(&a.checkpoint)?;
    let mut cfg = base_config(&a.config)?;
    cfg.eval.reference = a.reference;
    cfg.eval.maturities = a.grid.0;
    cfg.eval.strikes = a.grid.1;
    if let Some(p) = a.paths {
        cfg.eval.paths = p;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed = s;
    }
    if let Some((lo, hi)) = a.k {
        cfg.grid.strike_range = [lo, hi];
    }
    if let Some((lo, hi)) = a.t {
        cfg.grid.maturity_range = [lo, hi];
    }
    cfg.sim.horizon = cfg.sim.horizon.max(cp.frame.t_max).max(cfg.grid.maturity_range[1]);
    if a.reference == Reference::None {
        return Err(Error::InvalidConfig("evaluate needs a reference surface; use --reference exact".into()));
    }
    let eval = Evaluation::prepare(&cfg, &cp.frame)?;
    let price = eval.price_rmse(&cp.price_model())?;
    let vol = eval.vol_rmse(&cp.vol_model())?;
    let mut out = std::collections::BTreeMap::new();
    let fmt = |m: Metric| m.value().map_or("na".to_string(), |v| format!("{v:?}"));
    out.insert("price_rmse".to_string(), fmt(price));
    out.insert("vol_rmse".to_string(), fmt(vol));
    out.insert("grid".to_string(), format!("{}x{}", a.grid.0, a.grid.1));
    out.insert("paths".to_string(), cfg.eval.paths.to_string());
    out.insert("seed".to_string(), cfg.eval.seed.to_string());
    out.insert("checkpoint_iteration".to_string(), cp.state.iter.to_string());
    write_key_values(&a.out, &out)?;
    info!("price rmse {}, local-vol rmse {}", fmt(price), fmt(vol));
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> volcal::Result<()> {
    let cp: Checkpoint = checkpoint_load(&a.checkpoint)?;
    let grid = ExportGrid {
        rows: a.grid.0,
        cols: a.grid.1,
        maturity_range: a.t,
        strike_range: a.k,
    };
    let price = cp.price_model();
    let vol = cp.vol_model();
    let exact = ExactField::new(cp.frame);
    let source = match a.surface {
        SurfaceArg::Price => SurfaceSource::Price(&price),
        SurfaceArg::Vol => SurfaceSource::Vol(&vol),
        SurfaceArg::ExactVol => SurfaceSource::ExactVol(&exact),
    };
    export_surface(&source, &grid, a.coords, &a.out)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigMismatch(_)
        | Error::VersionMismatch(_)
        | Error::MalformedHeader { .. }
        | Error::EmptyAfterValidation(_)
        | Error::SchemaViolation(_)
        | Error::InvalidConfig(_)
        | Error::OutOfDomain(_) => 3,
        Error::DivergedTraining { .. } | Error::NonFiniteGradient | Error::NonFiniteParams => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let pe = cli.progress_every;
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Calibrate(a) => ablate(&a.run, None, a.repeats, pe),
        Command::Ablate(a) => ablate(&a.run, Some(&a.lambdas), a.repeats, pe),
        Command::Reprice(a) => cmd_reprice(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

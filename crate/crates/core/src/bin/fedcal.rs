use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedcal::conformal::{
    evaluate, fedcp_avg_calibrate, fedcp_qq_calibrate, fedcp_qq_unbalanced_calibrate, read_scores_path,
    split_cp_calibrate, CalibrationParams, CalibrationResult, Method, PredictionInterval, ScoreFunction, ScoreKind,
};
use fedcal::config::RunConfig;
use fedcal::coverage_table::{cache_file_name, CoverageTable, TableKey};
use fedcal::federation::{
    coverage_experiment, heterogeneity_gap, poisson_binomial_diagnostic, ExponentialScores, FederationSpec,
    HeterogeneityModel, Heterogeneous, Iid, ProtocolOptions, Scenario, SyntheticModel, SyntheticScenario,
    UniformScores,
};
use fedcal::order_stats::ScoreMatrix;
use fedcal::privacy::{fedcp2_qq_calibrate, BinGrid, DpConfig, GammaChoice, DEFAULT_BINS};
use fedcal::rng::Streams;
use fedcal::{FedcalError, Result};

const CONFIG_KEYS: &[&str] = &[
    "m", "n", "sizes", "alpha", "method", "epsilon", "bins", "smax", "gamma", "seed", "reps", "cache", "out",
    "scenario", "test-size", "shift", "score-kind", "result", "predictions", "probs", "full",
];

#[derive(Parser)]
#[command(name = "fedcal", version, about = "One-shot federated conformal calibration")]
struct Cli {
    /// `key = value` file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select (l*, k*) for (m, n, alpha), reusing and updating a cached table.
    Table(TableArgs),
    /// Calibrate a threshold from score files.
    Calibrate(CalibrateArgs),
    /// Turn point or quantile predictions into prediction intervals.
    Predict(PredictArgs),
    /// Monte Carlo coverage and length of a calibration method.
    Simulate(SimulateArgs),
    /// Poisson-Binomial distance and the heterogeneity penalty.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Cache file. Defaults to `$FEDCAL_CACHE_DIR/coverage_m<m>_n<n>.txt`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Evaluate every entry, not only those the search visits.
    #[arg(long)]
    full: bool,
}

#[derive(Args, Clone)]
struct DpArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    /// Upper bound on scores; must be fixed before seeing the data.
    #[arg(long)]
    smax: Option<f64>,
    /// A value in (0, 1) or `auto`.
    #[arg(long)]
    gamma: Option<String>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Score files: one score per line, or `agent,score` rows.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[command(flatten)]
    dp: DpArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Record which score function produced the scores.
    #[arg(long)]
    score_kind: Option<ScoreKindArg>,
    /// Write the calibration result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScoreKindArg {
    AbsoluteResidual,
    Cqr,
}

impl From<ScoreKindArg> for ScoreKind {
    fn from(k: ScoreKindArg) -> Self {
        match k {
            ScoreKindArg::AbsoluteResidual => ScoreKind::AbsoluteResidual,
            ScoreKindArg::Cqr => ScoreKind::Cqr,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    /// JSON written by `calibrate --out`.
    #[arg(long)]
    result: Option<PathBuf>,
    /// CSV with `prediction` or `lower,upper` columns and an optional `y`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Interval CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScenarioArg {
    Uniform,
    Exponential,
    Synthetic,
    SyntheticClean,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated local sizes instead of `--m/--n`.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[command(flatten)]
    dp: DpArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Spread of per-agent location shifts (score scenarios only).
    #[arg(long)]
    shift: Option<f64>,
    /// Per-replication CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Comma-separated probabilities for the Poisson-Binomial check.
    #[arg(long)]
    probs: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Spread of per-agent location shifts of uniform scores.
    #[arg(long)]
    shift: Option<f64>,
}

/// Flag value, else config value.
struct Settings(RunConfig);

impl Settings {
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.0.get(key),
        }
    }

    fn require<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| FedcalError::InvalidArgument(format!("--{key} is required")))
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.0.raw(key).map(PathBuf::from))
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.0.get::<bool>(key)?.unwrap_or(false))
    }

    fn dp_config(&self, dp: &DpArgs, need: bool) -> Result<Option<DpConfig>> {
        let epsilon = self.pick(dp.epsilon, "epsilon")?;
        let smax = self.pick(dp.smax, "smax")?;
        let (epsilon, smax) = match (epsilon, smax, need) {
            (Some(e), Some(s), _) => (e, s),
            (_, _, false) => return Ok(None),
            _ => return Err(FedcalError::InvalidArgument("fedcp2-qq needs --epsilon and --smax".into())),
        };
        let bins = self.pick(dp.bins, "bins")?.unwrap_or(DEFAULT_BINS);
        let gamma = match self.pick(dp.gamma.clone(), "gamma")?.as_deref() {
            None | Some("auto") => GammaChoice::Auto,
            Some(g) => GammaChoice::Fixed(
                g.parse()
                    .map_err(|_| FedcalError::InvalidArgument(format!("--gamma must be a number or `auto`, got `{g}`")))?,
            ),
        };
        let cfg = DpConfig::new(epsilon, BinGrid::uniform(bins, smax)?).with_gamma(gamma);
        cfg.validate()?;
        Ok(Some(cfg))
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| FedcalError::InvalidArgument(format!("bad {what} entry `{}`", s.trim())))
        })
        .collect()
}

fn default_cache(key: TableKey) -> Option<PathBuf> {
    std::env::var_os("FEDCAL_CACHE_DIR").map(|d| PathBuf::from(d).join(cache_file_name(key)))
}

/// Load a cached table for `key` if one exists.
fn open_table(key: TableKey, path: Option<&Path>) -> Result<CoverageTable> {
    match path {
        Some(p) if p.exists() => {
            let t = CoverageTable::load(p)?;
            if t.key() != key {
                return Err(FedcalError::InvalidArgument(format!(
                    "cache {} holds m={}, n={}, not m={}, n={}",
                    p.display(),
                    t.key().m(),
                    t.key().n(),
                    key.m(),
                    key.n()
                )));
            }
            Ok(t)
        }
        _ => Ok(CoverageTable::new(key)),
    }
}

fn store_table(table: &CoverageTable, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        if table.computed_entries() > 0 {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            table.save(p)?;
            eprintln!("cache: wrote {} entries to {}", table.len(), p.display());
        } else {
            eprintln!("cache: reused {}", p.display());
        }
    }
    Ok(())
}

fn cmd_table(s: &Settings, a: TableArgs) -> Result<()> {
    let key = TableKey::new(s.require(a.m, "m")?, s.require(a.n, "n")?)?;
    let alpha = s.require(a.alpha, "alpha")?;
    let path = s.path(a.cache, "cache").or_else(|| default_cache(key));
    let mut table = open_table(key, path.as_deref())?;
    let cached = table.len();
    let sel = table.select(alpha)?;
    if cached > 0 {
        // Spot-check the cache against a fresh evaluation of the selected entry.
        let fresh = fedcal::coverage_table::m_lk_fast(key, sel.index)?;
        if (fresh - sel.coverage).abs() > 1e-12 {
            return Err(FedcalError::Internal(format!(
                "cached M_{{{},{}}} = {} disagrees with recomputed {fresh}",
                sel.index.l, sel.index.k, sel.coverage
            )));
        }
    }
    if s.flag(a.full, "full")? {
        table.fill_all()?;
    }
    store_table(&table, path.as_deref())?;
    println!("l*={} k*={} M={:.12}", sel.index.l, sel.index.k, sel.coverage);
    Ok(())
}

fn load_agents(files: &[PathBuf]) -> Result<ScoreMatrix> {
    let mut agents = Vec::new();
    for f in files {
        let m = read_scores_path(f).map_err(|e| match e {
            FedcalError::Parse { line, message } => FedcalError::Parse {
                line,
                message: format!("{}: {message}", f.display()),
            },
            other => other,
        })?;
        agents.extend(m.agents().iter().cloned());
    }
    ScoreMatrix::new(agents)
}

fn describe_params(p: &CalibrationParams) -> String {
    match p {
        CalibrationParams::Centralized { n, rank } => format!("n={n} rank={rank}"),
        CalibrationParams::FedcpQq { m, n, l, k } => format!("m={m} n={n} l*={l} k*={k}"),
        CalibrationParams::FedcpQqUnbalanced { local_ranks, k, .. } => {
            format!("local ranks={local_ranks:?} k*={k}")
        }
        CalibrationParams::FedcpAvg { m, n, rank } => format!("m={m} n={n} local rank={rank}"),
        CalibrationParams::Fedcp2Qq(p) => format!(
            "m={} n={} epsilon={} B={} s_max={} gamma={:.6} l_gamma={} k_gamma={} l_cor={} q={:.6} M_corrected={:.12} seed={}",
            p.m, p.n, p.epsilon, p.bins, p.s_max, p.gamma, p.l_gamma, p.k_gamma, p.l_cor, p.q, p.m_corrected, p.seed
        ),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| FedcalError::Internal(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_calibrate(s: &Settings, a: CalibrateArgs) -> Result<()> {
    let alpha = s.require(a.alpha, "alpha")?;
    let method = s.pick(a.method, "method")?.unwrap_or(Method::FedcpQq);
    let seed = s.pick(a.seed, "seed")?.unwrap_or(0);
    let scores = load_agents(&a.files)?;
    let balanced = scores.balanced_size();
    let cache = match balanced {
        Some(n) => s
            .path(a.cache, "cache")
            .or_else(|| TableKey::new(scores.num_agents(), n).ok().and_then(default_cache)),
        None => None,
    };
    let mut result: CalibrationResult = match method {
        Method::Centralized => split_cp_calibrate(&scores.pooled(), alpha)?,
        Method::FedcpAvg => fedcp_avg_calibrate(&scores, alpha)?,
        Method::FedcpQq if balanced.is_none() => fedcp_qq_unbalanced_calibrate(&scores, alpha)?,
        Method::FedcpQq | Method::Fedcp2Qq => {
            let key = TableKey::new(scores.num_agents(), scores.require_balanced()?)?;
            let mut table = open_table(key, cache.as_deref())?;
            let r = if method == Method::FedcpQq {
                fedcp_qq_calibrate(&scores, alpha, Some(&mut table))?
            } else {
                let cfg = s.dp_config(&a.dp, true)?.expect("required");
                fedcp2_qq_calibrate(&scores, alpha, &cfg, Streams::new(seed), 0, Some(&mut table))?.0
            };
            store_table(&table, cache.as_deref())?;
            r
        }
    };
    if let Some(k) = s.pick(a.score_kind.map(|k| match k {
        ScoreKindArg::AbsoluteResidual => "absolute-residual".to_string(),
        ScoreKindArg::Cqr => "cqr".to_string(),
    }), "score-kind")?
    {
        result = result.with_score_kind(parse_score_kind(&k)?);
    }
    println!("method: {}", result.method);
    println!("agents: {} sizes: {:?}", scores.num_agents(), scores.sizes());
    println!("parameters: {}", describe_params(&result.params));
    println!("q_hat: {}", result.q_hat);
    match result.guaranteed_coverage {
        Some(c) => println!("guaranteed coverage: {c:.12}"),
        None => println!("guaranteed coverage: none"),
    }
    if let Some(out) = s.path(a.out, "out") {
        write_json(&out, &result)?;
    }
    Ok(())
}

fn parse_score_kind(k: &str) -> Result<ScoreKind> {
    match k.replace('_', "-").as_str() {
        "absolute-residual" => Ok(ScoreKind::AbsoluteResidual),
        "cqr" => Ok(ScoreKind::Cqr),
        other => Err(FedcalError::InvalidArgument(format!("unknown score kind `{other}`"))),
    }
}

struct PredictionRows {
    kind: ScoreKind,
    /// `(lower, upper)` predictions; equal for point predictions.
    base: Vec<(f64, f64)>,
    y: Option<Vec<f64>>,
}

fn read_predictions(path: &Path) -> Result<PredictionRows> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header: Vec<String> = match lines.next() {
        Some((_, h)) => h.split(',').map(|c| c.trim().to_ascii_lowercase()).collect(),
        None => return Err(FedcalError::Parse { line: 1, message: "empty predictions file".into() }),
    };
    let col = |name: &str| header.iter().position(|c| c == name);
    let (kind, lo, hi) = match (col("prediction"), col("lower"), col("upper")) {
        (Some(p), None, None) => (ScoreKind::AbsoluteResidual, p, p),
        (None, Some(l), Some(u)) => (ScoreKind::Cqr, l, u),
        _ => {
            return Err(FedcalError::Parse {
                line: 1,
                message: "header needs either `prediction` or `lower,upper`".into(),
            })
        }
    };
    let y_col = col("y");
    let mut base = Vec::new();
    let mut y = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(FedcalError::Parse {
                line: i + 1,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        let num = |c: usize| -> Result<f64> {
            fields[c].trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| FedcalError::Parse {
                line: i + 1,
                message: format!("`{}` is not a finite number", fields[c].trim()),
            })
        };
        base.push((num(lo)?, num(hi)?));
        if let Some(c) = y_col {
            y.push(num(c)?);
        }
    }
    Ok(PredictionRows {
        kind,
        base,
        y: y_col.map(|_| y),
    })
}

fn cmd_predict(s: &Settings, a: PredictArgs) -> Result<()> {
    let result_path = s
        .path(a.result, "result")
        .ok_or_else(|| FedcalError::InvalidArgument("--result is required".into()))?;
    let pred_path = s
        .path(a.predictions, "predictions")
        .ok_or_else(|| FedcalError::InvalidArgument("--predictions is required".into()))?;
    let text = fs::read_to_string(&result_path)?;
    let result: CalibrationResult = serde_json::from_str(&text)
        .map_err(|e| FedcalError::InvalidArgument(format!("{}: {e}", result_path.display())))?;
    let rows = read_predictions(&pred_path)?;
    // Row-indexed predictors: the "feature" of row i is i itself.
    let base = std::sync::Arc::new(rows.base);
    let sf: ScoreFunction<usize> = match rows.kind {
        ScoreKind::AbsoluteResidual => {
            let b = base.clone();
            ScoreFunction::absolute_residual(move |i: &usize| b[*i].0)
        }
        ScoreKind::Cqr => {
            let (b1, b2) = (base.clone(), base.clone());
            ScoreFunction::cqr(move |i: &usize| b1[*i].0, move |i: &usize| b2[*i].1)
        }
    };
    let intervals = (0..base.len())
        .map(|i| fedcal::conformal::predict_interval(&i, &result, &sf))
        .collect::<Result<Vec<PredictionInterval>>>()?;
    println!("intervals: {} (q_hat {}, {})", intervals.len(), result.q_hat, result.method);
    if let Some(y) = &rows.y {
        let m = evaluate(&intervals, y)?;
        println!("coverage: {:.6}", m.coverage);
        println!("mean length: {:.6}", m.mean_length);
        if m.unbounded > 0 {
            println!("unbounded intervals: {}", m.unbounded);
        }
    }
    if let Some(out) = s.path(a.out, "out") {
        let mut w = BufWriter::new(File::create(&out)?);
        match &rows.y {
            Some(y) => {
                writeln!(w, "lower,upper,y,covered")?;
                for (iv, yi) in intervals.iter().zip(y) {
                    writeln!(w, "{},{},{},{}", iv.lower, iv.upper, yi, iv.contains(*yi))?;
                }
            }
            None => {
                writeln!(w, "lower,upper")?;
                for iv in &intervals {
                    writeln!(w, "{},{}", iv.lower, iv.upper)?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn federation_spec(s: &Settings, m: Option<usize>, n: Option<usize>, sizes: Option<String>, alpha: f64, seed: u64) -> Result<FederationSpec> {
    match s.pick(sizes, "sizes")? {
        Some(list) => FederationSpec::unbalanced(parse_list(&list, "size")?, alpha, seed),
        None => FederationSpec::balanced(s.require(m, "m")?, s.require(n, "n")?, alpha, seed),
    }
}

fn cmd_simulate(s: &Settings, a: SimulateArgs) -> Result<()> {
    let alpha = s.require(a.alpha, "alpha")?;
    let seed = s.pick(a.seed, "seed")?.unwrap_or(0);
    let spec = federation_spec(s, a.m, a.n, a.sizes, alpha, seed)?;
    let method = s.pick(a.method, "method")?.unwrap_or(Method::FedcpQq);
    let reps = s.pick(a.reps, "reps")?.unwrap_or(100);
    let test_size = s.pick(a.test_size, "test-size")?.unwrap_or(1000);
    let scenario_name = match s.0.raw("scenario") {
        Some(v) if a.scenario.is_none() => Some(
            <ScenarioArg as clap::ValueEnum>::from_str(v, true)
                .map_err(|e| FedcalError::InvalidArgument(format!("scenario: {e}")))?,
        ),
        _ => a.scenario,
    }
    .unwrap_or(ScenarioArg::Uniform);
    let shift: Option<f64> = s.pick(a.shift, "shift")?;
    let scenario: Box<dyn Scenario> = match (scenario_name, shift) {
        (ScenarioArg::Uniform, None) => Box::new(Iid(UniformScores::standard())),
        (ScenarioArg::Uniform, Some(sp)) => Box::new(Heterogeneous {
            base: UniformScores::standard(),
            model: HeterogeneityModel::location_shifts(spec.m, sp)?,
        }),
        (ScenarioArg::Exponential, None) => Box::new(Iid(ExponentialScores::new(1.0)?)),
        (ScenarioArg::Exponential, Some(sp)) => Box::new(Heterogeneous {
            base: ExponentialScores::new(1.0)?,
            model: HeterogeneityModel::location_shifts(spec.m, sp)?,
        }),
        (ScenarioArg::Synthetic | ScenarioArg::SyntheticClean, Some(_)) => {
            return Err(FedcalError::InvalidArgument("--shift applies to uniform or exponential scores".into()))
        }
        (ScenarioArg::Synthetic, None) => Box::new(SyntheticScenario::new(SyntheticModel::default(), alpha)?),
        (ScenarioArg::SyntheticClean, None) => {
            Box::new(SyntheticScenario::new(SyntheticModel { outliers: false }, alpha)?)
        }
    };
    let opts = ProtocolOptions {
        dp: s.dp_config(&a.dp, method == Method::Fedcp2Qq)?,
        qq_index: None,
    };
    let summary = coverage_experiment(&spec, reps, method, scenario.as_ref(), test_size, &opts)?;
    println!("method: {}", summary.method);
    println!("scenario: {}", summary.scenario);
    println!("replications: {} test points each: {}", summary.replications, summary.test_size);
    println!("mean coverage: {:.6} (se {:.6})", summary.mean_coverage, summary.se);
    println!("mean length: {:.6}", summary.mean_length);
    if summary.infinite_replications > 0 {
        println!("replications with infinite threshold: {}", summary.infinite_replications);
    }
    match summary.guaranteed_coverage {
        Some(g) => println!("guaranteed coverage: {g:.12}"),
        None => println!("guaranteed coverage: none"),
    }
    if let Some(out) = s.path(a.out, "out") {
        let mut w = BufWriter::new(File::create(&out)?);
        summary.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_diagnose(s: &Settings, a: DiagnoseArgs) -> Result<()> {
    if let Some(list) = s.pick(a.probs, "probs")? {
        let p: Vec<f64> = parse_list(&list, "probability")?;
        let d = poisson_binomial_diagnostic(&p)?;
        println!("exact TV to Bin(m, mean p): {:.12}", d.exact_tv_to_binomial);
        println!("lower bound: {:.12}", d.ehm_lower);
        println!("upper bound: {:.12}", d.ehm_upper);
        return Ok(());
    }
    let (m, n) = (s.require(a.m, "m")?, s.require(a.n, "n")?);
    let alpha = s.require(a.alpha, "alpha")?;
    let shift = s.require(a.shift, "shift")?;
    let key = TableKey::new(m, n)?;
    let mut table = open_table(key, default_cache(key).as_deref())?;
    let sel = table.select(alpha)?;
    let model = HeterogeneityModel::location_shifts(m, shift)?;
    let gap = heterogeneity_gap(&UniformScores::standard(), &model, n, sel.index.l, 2000)?;
    println!("l*={} k*={} M={:.12}", sel.index.l, sel.index.k, sel.coverage);
    println!("expected TV penalty: {gap:.12}");
    println!("coverage lower bound under shifts: {:.12}", sel.coverage - gap);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p, CONFIG_KEYS).map_err(|e| match e {
            FedcalError::Parse { line, message } => FedcalError::Parse {
                line,
                message: format!("{}: {message}", p.display()),
            },
            other => other,
        })?,
        None => RunConfig::default(),
    };
    let s = Settings(cfg);
    match cli.command {
        Command::Table(a) => cmd_table(&s, a),
        Command::Calibrate(a) => cmd_calibrate(&s, a),
        Command::Predict(a) => cmd_predict(&s, a),
        Command::Simulate(a) => cmd_simulate(&s, a),
        Command::Diagnose(a) => cmd_diagnose(&s, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

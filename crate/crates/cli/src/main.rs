use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tickforge::eval_report::export_report;
use tickforge::features::{assemble, read_features_csv, write_features_csv, FeatureMatrix};
use tickforge::market_data::{
    chronological_split, parse_candles_csv, parse_kline_json, to_kline_json, write_candles_csv,
    CandleSeries, GapPolicy, IngestOptions, DEFAULT_INTERVAL_MS,
};
use tickforge::pipeline::{check_compatible, evaluate_rows, train_model, RowSelection};
use tickforge::synthetic::{generate, SyntheticConfig};
use tickforge::tuning::{
    grid_search, make_cv_plan, make_shuffled_plan, paper_grid, write_leaderboard_csv, CvPlan,
    ParamGrid, SearchOptions,
};
use tickforge::{Error, ErrorKind, GbtModel, Hyperparams, Result};

const SEED_ENV: &str = "TICKFORGE_SEED";
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "tickforge",
    version,
    about = "Forecast candle closes with gradient-boosted trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw klines and write canonical candles CSV.
    Ingest(IngestArgs),
    /// Compute the 18-column feature matrix from candles CSV.
    Features(FeaturesArgs),
    /// Fit the scaler and ensemble on the training split.
    Train(TrainArgs),
    /// Grid search with cross-validation on the training split.
    Tune(TuneArgs),
    /// Score a model and write metrics and plot data.
    Evaluate(EvaluateArgs),
    /// Predict every row of a features CSV.
    Predict(PredictArgs),
    /// Generate synthetic klines from a mean-reverting random walk.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RawFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct SeriesArgs {
    /// Candle interval in milliseconds.
    #[arg(long, default_value_t = DEFAULT_INTERVAL_MS)]
    interval_ms: i64,
    /// Record gaps in the timeline instead of rejecting them.
    #[arg(long)]
    allow_gaps: bool,
}

impl SeriesArgs {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            interval_ms: self.interval_ms,
            gap_policy: if self.allow_gaps {
                GapPolicy::Flag
            } else {
                GapPolicy::Reject
            },
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = RawFormat::Json)]
    format: RawFormat,
    #[command(flatten)]
    series: SeriesArgs,
    #[arg(short, long, default_value = "candles.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Candles CSV written by `ingest`.
    candles: PathBuf,
    /// Candles between a feature row and its target close; 0 targets the
    /// row's own close.
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[command(flatten)]
    series: SeriesArgs,
    #[arg(short, long, default_value = "features.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct HyperparamOverrides {
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_child_weight: Option<f64>,
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    colsample: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

impl HyperparamOverrides {
    fn apply(&self, hp: &mut Hyperparams) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { hp.$field = v; })*
            };
        }
        set!(n_trees => n_trees, eta => learning_rate, max_depth => max_depth,
            min_child_weight => min_child_weight, subsample => subsample,
            colsample => colsample, gamma => gamma, alpha => alpha, lambda => lambda);
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Features CSV written by `features`.
    features: PathBuf,
    /// `paper-best` or a hyperparameter JSON file such as `best_params.json`.
    #[arg(long, default_value = "paper-best")]
    params: String,
    #[command(flatten)]
    overrides: HyperparamOverrides,
    /// Must match the horizon the features were built with.
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Takes precedence over TICKFORGE_SEED and the params file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    features: PathBuf,
    /// `paper` or a grid JSON file.
    #[arg(long, default_value = "paper")]
    grid: String,
    /// Folds for expanding-window cross-validation.
    #[arg(long, default_value_t = 3)]
    cv_k: usize,
    /// `expanding:K` or `shuffled:K`; overrides --cv-k.
    #[arg(long)]
    cv: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rows {
    Test,
    Train,
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    model: PathBuf,
    features: PathBuf,
    #[arg(long, value_enum, default_value_t = Rows::Test)]
    rows: Rows,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    model: PathBuf,
    features: PathBuf,
    #[arg(short, long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    n_candles: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.004)]
    volatility: f64,
    #[arg(long, value_enum, default_value_t = RawFormat::Json)]
    format: RawFormat,
    #[arg(short, long, default_value = "klines.json")]
    out: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

/// Writes every file only once all contents are rendered.
fn write_all(files: &[(PathBuf, String)]) -> Result<()> {
    for (path, contents) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        fs::write(path, contents).map_err(|e| Error::file(path, e))?;
    }
    Ok(())
}

fn json_line<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Error::InvalidParameter(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
        }),
        Err(_) => Ok(None),
    }
}

fn load_candles(path: &Path, series: &SeriesArgs) -> Result<CandleSeries> {
    parse_candles_csv(&read(path)?, &series.options())
}

fn load_features(path: &Path, horizon: usize) -> Result<FeatureMatrix> {
    read_features_csv(&read(path)?, horizon)
}

fn candles_csv(series: &CandleSeries) -> Result<String> {
    let mut buf = Vec::new();
    write_candles_csv(series.candles(), &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let raw = read(&args.input)?;
    let series = match args.format {
        RawFormat::Json => parse_kline_json(&raw, &args.series.options())?,
        RawFormat::Csv => parse_candles_csv(&raw, &args.series.options())?,
    };
    write_all(&[(args.out.clone(), candles_csv(&series)?)])?;
    eprintln!(
        "wrote {} candles to {} ({} gaps)",
        series.len(),
        args.out.display(),
        series.gaps().len()
    );
    Ok(())
}

fn features(args: FeaturesArgs) -> Result<()> {
    let series = load_candles(&args.candles, &args.series)?;
    let f = assemble(&series, args.horizon)?;
    let mut buf = Vec::new();
    write_features_csv(&f, &mut buf)?;
    write_all(&[(
        args.out.clone(),
        String::from_utf8(buf).expect("csv output is utf-8"),
    )])?;
    eprintln!("wrote {} feature rows to {}", f.len(), args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut hp = if args.params == "paper-best" {
        Hyperparams::paper_best()
    } else {
        serde_json::from_slice(&read(Path::new(&args.params))?)?
    };
    args.overrides.apply(&mut hp);
    if let Some(seed) = args.seed.or(env_seed()?) {
        hp.seed = seed;
    }
    hp.validate()?;
    let f = load_features(&args.features, args.horizon)?;
    let out = train_model(&f, &hp, args.train_fraction)?;
    let files = [
        (args.out_dir.join("model.json"), out.model.to_json()?),
        (
            args.out_dir.join("train_report.json"),
            json_line(&out.report())?,
        ),
    ];
    write_all(&files)?;
    eprintln!(
        "trained {} trees on {} of {} rows; train RMSE {:.4}",
        out.model.trees.len(),
        out.split.m_train,
        out.split.m,
        out.train_metrics.rmse
    );
    Ok(())
}

fn parse_cv(spec: &str) -> Result<(bool, usize)> {
    let bad = || {
        Error::InvalidParameter(format!(
            "--cv must be expanding:K or shuffled:K, got {spec:?}"
        ))
    };
    let (mode, k) = spec.split_once(':').ok_or_else(bad)?;
    let k: usize = k.parse().map_err(|_| bad())?;
    match mode {
        "expanding" => Ok((false, k)),
        "shuffled" => Ok((true, k)),
        _ => Err(bad()),
    }
}

fn tune(args: TuneArgs) -> Result<()> {
    let grid = if args.grid == "paper" {
        paper_grid()
    } else {
        ParamGrid::from_json(&read(Path::new(&args.grid))?)?
    };
    grid.validate()?;
    let (shuffled, k) = match &args.cv {
        Some(spec) => parse_cv(spec)?,
        None => (false, args.cv_k),
    };
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    let seed = args.seed.or(env_seed()?).unwrap_or(DEFAULT_SEED);

    let f = load_features(&args.features, args.horizon)?;
    let split = chronological_split(f.len(), args.train_fraction)?;
    let train = f.slice(split.train_range());
    let plan: CvPlan = if shuffled {
        make_shuffled_plan(train.len(), k, seed)?
    } else {
        make_cv_plan(train.len(), k)?
    };
    let result = grid_search(
        &train.rows,
        &train.targets,
        &grid,
        &plan,
        &SearchOptions {
            base_seed: seed,
            jobs: args.jobs,
        },
    )?;
    let mut board = Vec::new();
    write_leaderboard_csv(&result, &mut board)?;
    let files = [
        (
            args.out_dir.join("leaderboard.csv"),
            String::from_utf8(board).expect("csv output is utf-8"),
        ),
        (
            args.out_dir.join("best_params.json"),
            json_line(&result.best_params)?,
        ),
    ];
    write_all(&files)?;
    for failure in &result.failures {
        eprintln!("candidate {} failed: {}", failure.index, failure.error);
    }
    eprintln!(
        "evaluated {} candidates; best mean CV RMSE {:.4}",
        result.leaderboard.len(),
        result.best_rmse
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<GbtModel> {
    GbtModel::from_json(&read(path)?)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let f = load_features(&args.features, model.horizon)?;
    let rows = match args.rows {
        Rows::Test => RowSelection::Test,
        Rows::Train => RowSelection::Train,
        Rows::All => RowSelection::All,
    };
    let report = evaluate_rows(&model, &f, rows)?;
    export_report(&report, &args.out_dir)?;
    print!("{}", report.metrics.table());
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let f = load_features(&args.features, model.horizon)?;
    check_compatible(&model, &f)?;
    let predicted = model.predict_raw(&f.rows)?;
    let mut out = String::from("timestamp,predicted\n");
    for (t, p) in f.timestamps.iter().zip(&predicted) {
        out.push_str(&format!("{t},{p}\n"));
    }
    write_all(&[(args.out.clone(), out)])?;
    eprintln!(
        "wrote {} predictions to {}",
        predicted.len(),
        args.out.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let defaults = SyntheticConfig::default();
    let series = generate(&SyntheticConfig {
        n_candles: args.n_candles,
        seed: args.seed.or(env_seed()?).unwrap_or(defaults.seed),
        volatility: args.volatility,
        ..defaults
    })?;
    let contents = match args.format {
        RawFormat::Json => to_kline_json(series.candles()),
        RawFormat::Csv => candles_csv(&series)?,
    };
    write_all(&[(args.out.clone(), contents)])?;
    eprintln!("wrote {} candles to {}", series.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Tune(a) => tune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Data => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}

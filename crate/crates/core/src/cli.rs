//! Command-line front end. The `cmd_*` functions do the work and are callable
//! directly; [`main_with_args`] parses arguments and maps errors to exit codes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::evalkit::{self, HorizonTag, MetricRow, MetricTable, Scores};
use crate::forecaster::{self, BoundaryExtension, DecompositionMode, FitOptions, ForecastResult};
use crate::modwt::{self, WaveletFilter};
use crate::plot::{self, Line, Panel};
use crate::series::{self, ColumnSelector, CsvOptions, SplitSpec, TimeSeries};
use crate::transformer::{TransformerConfig, DEFAULT_SEED};

pub const SEED_ENV: &str = "WAVECAST_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config file or unreadable input; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A stage failed while computing or writing results; exit code 1.
    #[error("{stage}: {msg}")]
    Compute { stage: String, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute { .. } => 1,
        }
    }

    fn compute(stage: impl Into<String>, err: impl std::fmt::Display) -> Self {
        CliError::Compute {
            stage: stage.into(),
            msg: err.to_string(),
        }
    }

    fn input(stage: &str, err: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("{stage}: {err}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    WTransformer,
    Transformer,
    Naive,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::WTransformer => forecaster::WTRANSFORMER_TAG,
            ModelKind::Transformer => forecaster::TRANSFORMER_TAG,
            ModelKind::Naive => forecaster::NAIVE_TAG,
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wtransformer" | "w-transformer" => Ok(ModelKind::WTransformer),
            "transformer" => Ok(ModelKind::Transformer),
            "naive" => Ok(ModelKind::Naive),
            other => Err(format!("unknown model {other:?}; expected wtransformer, transformer or naive")),
        }
    }
}

/// Everything a `run` needs; echoed in full to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub column: ColumnSelector,
    pub has_header: bool,
    pub dataset: Option<String>,
    pub test_len: usize,
    pub horizon: HorizonTag,
    pub models: Vec<ModelKind>,
    pub transformer: TransformerConfig,
    pub levels: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub paper_mode: bool,
    pub boundary: BoundaryExtension,
    pub season: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            column: ColumnSelector::Index(0),
            has_header: true,
            dataset: None,
            test_len: 0,
            horizon: HorizonTag::Long,
            models: vec![ModelKind::WTransformer, ModelKind::Transformer, ModelKind::Naive],
            transformer: TransformerConfig::default(),
            levels: None,
            seed: DEFAULT_SEED,
            jobs: 0,
            paper_mode: false,
            boundary: BoundaryExtension::Forecast,
            season: 1,
            out: PathBuf::from("wavecast-out"),
        }
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(format!("expected a boolean, got {other:?}")),
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.trim().parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

impl RunConfig {
    pub fn dataset_name(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| {
            self.data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into())
        })
    }

    /// Applies one `key=value` setting. Transformer hyperparameters use the
    /// same keys as checkpoint files (`epochs`, `d_model`, `lr`, ...).
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key.trim() {
            "data" => self.data = PathBuf::from(value),
            "column" => self.column = value.parse().expect("infallible"),
            "header" => self.has_header = parse_bool(value)?,
            "dataset" => self.dataset = Some(value.to_string()),
            "test_len" => self.test_len = parse_num(key, value)?,
            "horizon" => self.horizon = value.parse().map_err(|e: evalkit::EvalError| e.to_string())?,
            "models" => {
                self.models = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()?
            }
            "levels" => {
                self.levels = match value {
                    "" | "auto" | "default" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "jobs" => self.jobs = parse_num(key, value)?,
            "paper_mode" => self.paper_mode = parse_bool(value)?,
            "boundary" => self.boundary = value.parse()?,
            "season" => self.season = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => self.transformer.set(other, value).map_err(|e| e.to_string())?,
        }
        Ok(())
    }

    /// `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file_text(&mut self, text: &str) -> std::result::Result<(), String> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            self.set(k, v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    /// The config as a file that [`RunConfig::apply_file_text`] reads back
    /// to an equal value.
    pub fn to_file_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("data", self.data.display().to_string());
        kv("column", self.column.to_string());
        kv("header", self.has_header.to_string());
        if let Some(d) = &self.dataset {
            kv("dataset", d.clone());
        }
        kv("test_len", self.test_len.to_string());
        kv("horizon", self.horizon.to_string());
        kv("models", self.models.iter().map(|m| m.tag()).collect::<Vec<_>>().join(","));
        kv("levels", self.levels.map_or_else(|| "auto".into(), |l| l.to_string()));
        kv("seed", self.seed.to_string());
        kv("jobs", self.jobs.to_string());
        kv("paper_mode", self.paper_mode.to_string());
        kv("boundary", self.boundary.to_string());
        kv("season", self.season.to_string());
        kv("out", self.out.display().to_string());
        for (k, v) in self.transformer.to_pairs() {
            kv(&k, v);
        }
        s
    }

    fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            column: self.column.clone(),
            has_header: self.has_header,
        }
    }
}

fn load(cfg: &RunConfig) -> Result<TimeSeries> {
    series::load_csv(&cfg.data, &cfg.csv_options()).map_err(|e| CliError::input("load", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::compute("output", format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::result::Result<(), String>) -> Result<()> {
    let stage = || format!("write {}", path.display());
    let file = fs::File::create(path).map_err(|e| CliError::compute(stage(), e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| CliError::compute(stage(), e))?;
    w.flush().map_err(|e| CliError::compute(stage(), e))
}

#[derive(Debug, Clone)]
pub struct DecomposeOutcome {
    pub band_names: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// MRA of the training split (the whole series when `test_len` is 0):
/// `band_<name>.csv` per band, `bands.csv` with every band side by side, and
/// `decomposition.svg`.
pub fn cmd_decompose(cfg: &RunConfig) -> Result<DecomposeOutcome> {
    let all = load(cfg)?;
    let train = if cfg.test_len == 0 {
        all
    } else {
        series::split(&all, SplitSpec { test_len: cfg.test_len }).map_err(|e| CliError::input("split", e))?.0
    };
    let levels = match cfg.levels {
        Some(j) => j,
        None => modwt::default_level_count(train.len()).map_err(|e| CliError::input("decompose", e))?,
    };
    let d = modwt::decompose(train.values(), &WaveletFilter::haar(), levels)
        .map_err(|e| CliError::input("decompose", e))?;
    create_dir(&cfg.out)?;
    let names = d.band_names();
    let mut files = Vec::new();
    let t0 = train.start_index();
    for (name, band) in names.iter().zip(d.bands()) {
        let path = cfg.out.join(format!("band_{name}.csv"));
        write_file(&path, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["t", "value"]).map_err(|e| e.to_string())?;
            for (i, v) in band.iter().enumerate() {
                c.write_record([(t0 + i as i64).to_string(), format!("{v:?}")]).map_err(|e| e.to_string())?;
            }
            c.flush().map_err(|e| e.to_string())
        })?;
        files.push(path);
    }
    let wide = cfg.out.join("bands.csv");
    write_file(&wide, |w| {
        let mut c = csv::Writer::from_writer(w);
        let header: Vec<&str> = std::iter::once("t").chain(names.iter().map(String::as_str)).collect();
        c.write_record(&header).map_err(|e| e.to_string())?;
        let bands: Vec<&[f64]> = d.bands().collect();
        for i in 0..d.len() {
            let mut rec = vec![(t0 + i as i64).to_string()];
            rec.extend(bands.iter().map(|b| format!("{:?}", b[i])));
            c.write_record(&rec).map_err(|e| e.to_string())?;
        }
        c.flush().map_err(|e| e.to_string())
    })?;
    files.push(wide);

    let xs = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| ((t0 + i as i64) as f64, y)).collect::<Vec<_>>();
    let mut panels = vec![Panel {
        title: "series",
        lines: vec![Line {
            label: "series",
            points: xs(train.values()),
        }],
    }];
    for (name, band) in names.iter().zip(d.bands()) {
        panels.push(Panel {
            title: name,
            lines: vec![Line {
                label: name,
                points: xs(band),
            }],
        });
    }
    let svg_path = cfg.out.join("decomposition.svg");
    let svg = plot::line_panels(&format!("MODWT MRA of {}", cfg.dataset_name()), &panels);
    write_file(&svg_path, |w| w.write_all(svg.as_bytes()).map_err(|e| e.to_string()))?;
    files.push(svg_path);
    Ok(DecomposeOutcome { band_names: names, files })
}

#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub tag: String,
    pub forecast: ForecastResult,
    pub scores: Scores,
    pub prediction_file: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub models: Vec<ModelOutcome>,
    pub metrics: MetricTable,
    pub metrics_file: PathBuf,
    pub manifest_file: PathBuf,
}

struct Fitted {
    forecast: ForecastResult,
    /// (band name, per-epoch mean loss)
    losses: Vec<(String, Vec<f64>)>,
    levels: Option<usize>,
}

fn fit_model(kind: ModelKind, cfg: &RunConfig, train: &TimeSeries, test: &TimeSeries) -> Result<Fitted> {
    let h = test.len();
    let stage = || format!("fit {}", kind.tag());
    match kind {
        ModelKind::Naive => Ok(Fitted {
            forecast: forecaster::naive_forecast(train, h).map_err(|e| CliError::compute(stage(), e))?,
            losses: Vec::new(),
            levels: None,
        }),
        ModelKind::WTransformer | ModelKind::Transformer => {
            let levels = if kind == ModelKind::Transformer { Some(0) } else { cfg.levels };
            let opts = FitOptions {
                config: cfg.transformer.clone(),
                levels,
                base_seed: cfg.seed,
                mode: if cfg.paper_mode && kind == ModelKind::WTransformer {
                    DecompositionMode::Joint
                } else {
                    DecompositionMode::TrainOnly
                },
                boundary: cfg.boundary,
                jobs: cfg.jobs,
            };
            let ens = forecaster::fit_with_test(train, Some(test), &opts).map_err(|e| CliError::compute(stage(), e))?;
            let mut forecast = ens.forecast(h).map_err(|e| CliError::compute(format!("forecast {}", kind.tag()), e))?;
            forecast.model_tag = kind.tag().to_string();
            Ok(Fitted {
                forecast,
                losses: ens.bands.iter().map(|b| (b.name.clone(), b.report.epoch_losses.clone())).collect(),
                levels: Some(ens.levels()),
            })
        }
    }
}

/// Split, fit every selected model, forecast the test span, score against
/// the raw test values and write all artifacts into `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    if cfg.models.is_empty() {
        return Err(CliError::Usage("no models selected".into()));
    }
    cfg.transformer.validate().map_err(|e| CliError::input("config", e))?;
    let all = load(cfg)?;
    let (train, test) =
        series::split(&all, SplitSpec { test_len: cfg.test_len }).map_err(|e| CliError::input("split", e))?;
    create_dir(&cfg.out)?;

    let dataset = cfg.dataset_name();
    let mut metrics = MetricTable::new();
    let mut models = Vec::new();
    let mut manifest_models = String::new();
    for &kind in &cfg.models {
        if models.iter().any(|m: &ModelOutcome| m.tag == kind.tag()) {
            continue;
        }
        let t = Instant::now();
        let fitted = fit_model(kind, cfg, &train, &test)?;
        let elapsed = t.elapsed();
        let pred = &fitted.forecast.predictions;
        let scores = Scores::compute(test.values(), pred, train.values(), cfg.season)
            .map_err(|e| CliError::compute(format!("evaluate {}", kind.tag()), e))?;
        metrics
            .push(MetricRow {
                dataset: dataset.clone(),
                horizon: cfg.horizon,
                model: kind.tag().to_string(),
                scores,
            })
            .map_err(|e| CliError::compute("evaluate", e))?;

        let prediction_file = cfg.out.join(format!("predictions_{}.csv", kind.tag()));
        write_file(&prediction_file, |w| {
            series::write_predictions(w, test.start_index(), test.values(), pred).map_err(|e| e.to_string())
        })?;
        if kind == ModelKind::WTransformer {
            let path = cfg.out.join(format!("band_predictions_{}.csv", kind.tag()));
            let f = &fitted.forecast;
            write_file(&path, |w| {
                let mut c = csv::Writer::from_writer(w);
                let header: Vec<&str> = std::iter::once("index").chain(f.band_names.iter().map(String::as_str)).collect();
                c.write_record(&header).map_err(|e| e.to_string())?;
                for i in 0..f.horizon() {
                    let mut rec = vec![(test.start_index() + i as i64).to_string()];
                    rec.extend(f.band_predictions.iter().map(|b| format!("{:?}", b[i])));
                    c.write_record(&rec).map_err(|e| e.to_string())?;
                }
                c.flush().map_err(|e| e.to_string())
            })?;
        }
        manifest_models.push_str(&format!("model {}\n", kind.tag()));
        if let Some(j) = fitted.levels {
            manifest_models.push_str(&format!("  levels {j}\n"));
        }
        manifest_models.push_str(&format!("  wall_clock_s {:.3}\n", elapsed.as_secs_f64()));
        for (i, (band, losses)) in fitted.losses.iter().enumerate() {
            let path = cfg.out.join(format!("loss_{}_{band}.csv", kind.tag()));
            write_file(&path, |w| {
                writeln!(w, "epoch,mean_loss").map_err(|e| e.to_string())?;
                for (e, l) in losses.iter().enumerate() {
                    writeln!(w, "{},{l:?}", e + 1).map_err(|e| e.to_string())?;
                }
                Ok(())
            })?;
            manifest_models.push_str(&format!(
                "  band {band} seed {} final_loss {:?} trace {}\n",
                cfg.seed + i as u64,
                losses.last().copied().unwrap_or(f64::NAN),
                path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            ));
        }
        models.push(ModelOutcome {
            tag: kind.tag().to_string(),
            forecast: fitted.forecast,
            scores,
            prediction_file,
        });
    }

    let metrics_file = cfg.out.join("metrics.csv");
    write_file(&metrics_file, |w| metrics.write_csv(w).map_err(|e| e.to_string()))?;

    let xs = |start: i64, v: &[f64]| v.iter().enumerate().map(|(i, &y)| ((start + i as i64) as f64, y)).collect();
    let tail = train.len().saturating_sub(4 * test.len());
    let mut lines = vec![Line {
        label: "actual",
        points: xs(train.time_of(tail), &all.values()[tail..]),
    }];
    for m in &models {
        lines.push(Line {
            label: &m.tag,
            points: xs(test.start_index(), &m.forecast.predictions),
        });
    }
    let svg = plot::line_panels(
        &format!("{dataset} ({}, h = {})", cfg.horizon, test.len()),
        &[Panel {
            title: "forecast vs actual",
            lines,
        }],
    );
    write_file(&cfg.out.join("forecast.svg"), |w| w.write_all(svg.as_bytes()).map_err(|e| e.to_string()))?;

    let config_file = cfg.out.join("run.cfg");
    write_file(&config_file, |w| w.write_all(cfg.to_file_text().as_bytes()).map_err(|e| e.to_string()))?;
    let manifest_file = cfg.out.join("manifest.txt");
    let manifest = format!(
        "wavecast {version}\n\
         replay wavecast run --config {cfg_name}\n\
         data {data}\n\
         column {column}\n\
         dataset {dataset}\n\
         split train {ntrain} test {ntest}\n\
         horizon {horizon}\n\
         seed {seed}\n\
         decomposition {mode}\n\
         jobs {jobs}\n\
         {config}\
         {manifest_models}\
         wall_clock_s {total:.3}\n",
        version = env!("CARGO_PKG_VERSION"),
        cfg_name = config_file.display(),
        data = cfg.data.display(),
        column = cfg.column,
        ntrain = train.len(),
        ntest = test.len(),
        horizon = cfg.horizon,
        seed = cfg.seed,
        mode = if cfg.paper_mode { "joint train+test".to_string() } else { format!("train only, {} boundary", cfg.boundary) },
        jobs = cfg.jobs,
        config = cfg
            .transformer
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("config {k} {v}\n"))
            .collect::<String>(),
        total = started.elapsed().as_secs_f64(),
    );
    write_file(&manifest_file, |w| w.write_all(manifest.as_bytes()).map_err(|e| e.to_string()))?;

    Ok(RunOutcome {
        models,
        metrics,
        metrics_file,
        manifest_file,
    })
}

/// Scores existing prediction files against the test split of `cfg.data`.
pub fn cmd_evaluate(cfg: &RunConfig, predictions: &[(String, PathBuf)]) -> Result<MetricTable> {
    if predictions.is_empty() {
        return Err(CliError::Usage("no prediction files given".into()));
    }
    let all = load(cfg)?;
    let (train, test) =
        series::split(&all, SplitSpec { test_len: cfg.test_len }).map_err(|e| CliError::input("split", e))?;
    let mut table = MetricTable::new();
    for (model, path) in predictions {
        let file = fs::File::open(path).map_err(|e| CliError::input("load", format!("{}: {e}", path.display())))?;
        let (_, _, pred) = series::read_predictions(file).map_err(|e| CliError::input("load", format!("{}: {e}", path.display())))?;
        let scores = Scores::compute(test.values(), &pred, train.values(), cfg.season)
            .map_err(|e| CliError::input("evaluate", format!("{model}: {e}")))?;
        table
            .push(MetricRow {
                dataset: cfg.dataset_name(),
                horizon: cfg.horizon,
                model: model.clone(),
                scores,
            })
            .map_err(|e| CliError::input("evaluate", e))?;
    }
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("metrics.csv"), |w| table.write_csv(w).map_err(|e| e.to_string()))?;
    Ok(table)
}

/// MCB ranking over merged metric files: `ranks.csv` plus one chart per
/// ranking. `pooled` ranks all horizons together instead of one per horizon.
pub fn cmd_mcb(metric_files: &[PathBuf], alpha: f64, pooled: bool, out: &Path) -> Result<Vec<(Option<HorizonTag>, evalkit::McbResult)>> {
    if metric_files.is_empty() {
        return Err(CliError::Usage("no metrics files given".into()));
    }
    let mut table = MetricTable::new();
    for path in metric_files {
        let file = fs::File::open(path).map_err(|e| CliError::input("load", format!("{}: {e}", path.display())))?;
        let t = MetricTable::read_csv(file).map_err(|e| CliError::input("load", format!("{}: {e}", path.display())))?;
        table.extend(t).map_err(|e| CliError::input("merge", e))?;
    }
    let results: Vec<(Option<HorizonTag>, evalkit::McbResult)> = if pooled {
        vec![(None, evalkit::mcb(&table, alpha).map_err(|e| CliError::input("mcb", e))?)]
    } else {
        evalkit::mcb_per_horizon(&table, alpha)
            .map_err(|e| CliError::input("mcb", e))?
            .into_iter()
            .map(|(h, r)| (Some(h), r))
            .collect()
    };
    create_dir(out)?;
    write_file(&out.join("ranks.csv"), |w| evalkit::write_rank_csv(&results, w).map_err(|e| e.to_string()))?;
    for (tag, r) in &results {
        let name = tag.map_or_else(|| "all".to_string(), |t| t.to_string());
        let svg = plot::mcb_chart(&format!("MCB average ranks ({name})"), r);
        write_file(&out.join(format!("mcb_{name}.svg")), |w| w.write_all(svg.as_bytes()).map_err(|e| e.to_string()))?;
    }
    Ok(results)
}

#[derive(Debug, Parser)]
#[command(name = "wavecast", version, about = "Wavelet-decomposed transformer forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MODWT multiresolution analysis of the training split
    Decompose(DataArgs),
    /// Fit models, forecast the test split, score and write artifacts
    Run(RunArgs),
    /// Score prediction files against the test split
    Evaluate(EvaluateArgs),
    /// Average-rank MCB comparison over metric files
    Mcb(McbArgs),
    /// Print the version
    Version,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// key=value config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column index or header name
    #[arg(long)]
    pub column: Option<String>,
    /// The CSV has no header row
    #[arg(long)]
    pub no_header: bool,
    /// Dataset name used in metrics (defaults to the file stem)
    #[arg(long)]
    pub dataset: Option<String>,
    /// Trailing observations held out as the test split
    #[arg(long)]
    pub test_len: Option<usize>,
    /// Detail levels J (defaults to floor(ln N) - 1)
    #[arg(long)]
    pub levels: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model to run; repeat for several (wtransformer, transformer, naive)
    #[arg(long = "model")]
    pub models: Vec<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Base seed; band i trains with seed + i. Falls back to $WAVECAST_SEED
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for band training (0 = all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Decompose train and test together before cutting the training bands
    #[arg(long)]
    pub paper_mode: bool,
    /// Band boundary handling before the transform: forecast, reflect or circular
    #[arg(long)]
    pub boundary: Option<BoundaryExtension>,
    /// Horizon tag written to the metrics (short or long)
    #[arg(long)]
    pub horizon: Option<HorizonTag>,
    /// Extra key=value override, e.g. --set d_model=32
    #[arg(long = "set")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// model=path prediction file; repeatable
    #[arg(long = "pred", required = true)]
    pub predictions: Vec<String>,
    #[arg(long)]
    pub horizon: Option<HorizonTag>,
}

#[derive(Debug, Args)]
pub struct McbArgs {
    /// Metrics CSV; repeatable
    #[arg(long = "metrics", required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Rank all horizons together instead of one ranking per horizon
    #[arg(long)]
    pub pooled: bool,
    #[arg(long, default_value = "wavecast-out")]
    pub out: PathBuf,
}

/// Builds a config: defaults, then `$WAVECAST_SEED`, then the config file,
/// then flags.
fn base_config(a: &DataArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}: cannot parse {s:?} as a seed")))?;
    }
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))?;
        cfg.apply_file_text(&text)
            .map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))?;
    }
    if let Some(d) = &a.data {
        cfg.data = d.clone();
    }
    if let Some(c) = &a.column {
        cfg.column = c.parse().expect("infallible");
    }
    if a.no_header {
        cfg.has_header = false;
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(t) = a.test_len {
        cfg.test_len = t;
    }
    if a.levels.is_some() {
        cfg.levels = a.levels;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if cfg.data.as_os_str().is_empty() {
        return Err(CliError::Usage("no input: pass --data or set data= in the config file".into()));
    }
    Ok(cfg)
}

pub fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = base_config(&a.data)?;
    if !a.models.is_empty() {
        cfg.models = a.models.clone();
    }
    if let Some(e) = a.epochs {
        cfg.transformer.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if a.paper_mode {
        cfg.paper_mode = true;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if let Some(b) = a.boundary {
        cfg.boundary = b;
    }
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set {o:?}: expected key=value")))?;
        cfg.set(k, v).map_err(|e| CliError::Usage(format!("--set {o:?}: {e}")))?;
    }
    if cfg.test_len == 0 {
        return Err(CliError::Usage("--test-len is required".into()));
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Version => println!("wavecast {}", env!("CARGO_PKG_VERSION")),
        Command::Decompose(a) => {
            let cfg = base_config(&a)?;
            let out = cmd_decompose(&cfg)?;
            println!("{} bands written to {}", out.band_names.len(), cfg.out.display());
        }
        Command::Run(a) => {
            let cfg = run_config(&a)?;
            let out = cmd_run(&cfg)?;
            for m in &out.models {
                let s = m.scores;
                println!(
                    "{:<13} rmse {:.6} mae {:.6} smape {:.4} mase {:.4}",
                    m.tag, s.rmse, s.mae, s.smape, s.mase
                );
            }
            println!("artifacts in {}", cfg.out.display());
        }
        Command::Evaluate(a) => {
            let mut cfg = base_config(&a.data)?;
            if let Some(h) = a.horizon {
                cfg.horizon = h;
            }
            let preds = a
                .predictions
                .iter()
                .map(|p| {
                    p.split_once('=')
                        .map(|(m, f)| (m.to_string(), PathBuf::from(f)))
                        .ok_or_else(|| CliError::Usage(format!("--pred {p:?}: expected model=path")))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = cmd_evaluate(&cfg, &preds)?;
            table
                .write_csv(std::io::stdout().lock())
                .map_err(|e| CliError::compute("output", e))?;
        }
        Command::Mcb(a) => {
            for (tag, r) in cmd_mcb(&a.metrics, a.alpha, a.pooled, &a.out)? {
                let tag = tag.map_or_else(|| "all".to_string(), |t| t.to_string());
                println!("[{tag}] {} cases, half-width {:.4}", r.n_cases, r.half_width);
                for e in &r.entries {
                    let mark = if e.not_significantly_worse { "" } else { "  (significantly worse)" };
                    println!("  {:<16} {:.3}{mark}", e.model, e.mean_rank);
                }
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wavecast: {e}");
            e.exit_code()
        }
    }
}

//! Pipeline stages and the files they exchange.
//!
//! Each stage reads the raw inputs named by the run configuration and
//! recomputes what it needs, so stages can be run in any order once their
//! inputs exist. Every artifact records the hash of the configuration that
//! produced it: CSV files start with a `# config_hash: ...` line and JSON
//! files carry a `config_hash` field.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ThresholdScope, DEFAULT_HORIZON};
use crate::data::{
    interpolate_population, label_outbreaks, monthly_incidence, outbreak_threshold, parse_case_csv,
    parse_population_csv, CaseSeries, IncidenceSeries, IngestReport, OutbreakLabels, PopulationTable,
    YearMonth,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_predictions, MetricsReport, Predictions};
use crate::forecast::{rolling_forecast, ForecastMode, ForecastResult};
use crate::nn::{init_params, ModelArtifact, ModelParams};
use crate::preprocess::{chronological_split, fit_scaler, make_windows, DailySeries, ScalerParams, Split, WindowedDataset};
use crate::synth::{synth_generate, write_case_csv, write_population_csv};
use crate::training::{train, TrainHistory};
use crate::tuning::{random_search, ts_cross_validate, write_fold_csv, FoldResult, LstmTrialTrainer, SearchOutcome};

pub const CASES_FILE: &str = "cases.csv";
pub const POPULATION_FILE: &str = "population.csv";
pub const INGEST_FILE: &str = "ingest_report.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const BEST_CONFIG_FILE: &str = "best_config.json";
pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const FOLDS_FILE: &str = "folds.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const FORECAST_FILE: &str = "forecast.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Label,
    Tune,
    Train,
    Evaluate,
    Forecast,
    Synth,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ingest" => Stage::Ingest,
            "label" => Stage::Label,
            "tune" => Stage::Tune,
            "train" => Stage::Train,
            "evaluate" => Stage::Evaluate,
            "forecast" => Stage::Forecast,
            "synth" => Stage::Synth,
            _ => return Err(Error::Config(format!("unknown stage {s:?}"))),
        })
    }
}

pub fn cases_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.cases_path.clone().unwrap_or_else(|| out.join(CASES_FILE))
}

pub fn population_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.population_path.clone().unwrap_or_else(|| out.join(POPULATION_FILE))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

/// Creates `path` and writes the config-hash comment line.
fn create_stamped(path: &Path, hash: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash: {hash}")?;
    Ok(w)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamped<T> {
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfig {
    pub arch: String,
    pub units: Vec<usize>,
    pub val_loss: f64,
    pub trial: usize,
    pub seed: u64,
}

pub struct Inputs {
    pub cases: CaseSeries,
    pub report: IngestReport,
    pub population: PopulationTable,
}

pub fn load_inputs(cfg: &RunConfig, out: &Path) -> Result<Inputs> {
    let (cases, report) = parse_case_csv(open(&cases_path(cfg, out))?, cfg.disease, &cfg.municipality)?;
    let population = parse_population_csv(open(&population_path(cfg, out))?)?;
    Ok(Inputs {
        cases,
        report,
        population,
    })
}

pub struct Labelled {
    pub incidence: IncidenceSeries,
    pub labels: OutbreakLabels,
}

/// Monthly incidence and outbreak labels; with the default scope the
/// threshold only sees months before the test year.
pub fn label(cfg: &RunConfig, cases: &CaseSeries, population: &PopulationTable) -> Result<Labelled> {
    let incidence = monthly_incidence(cases, population)?;
    let basis = match cfg.threshold_scope {
        ThresholdScope::Train => incidence.filter_years(|y| y < cfg.test_year),
        ThresholdScope::All => incidence.clone(),
    };
    if basis.entries.is_empty() {
        return Err(Error::Insufficient(format!("no months before test year {}", cfg.test_year)));
    }
    let p = cfg.percentile();
    let threshold = outbreak_threshold(&basis, p)?;
    let labels = label_outbreaks(&incidence, threshold, p);
    Ok(Labelled { incidence, labels })
}

/// Windowed, split and normalized samples plus the scaler fitted on the
/// training targets.
pub struct Prepared {
    pub daily: DailySeries,
    pub dataset: WindowedDataset,
    pub scaler: ScalerParams,
}

pub fn prepare(cfg: &RunConfig, cases: &CaseSeries, labels: &OutbreakLabels) -> Result<Prepared> {
    let daily = DailySeries {
        start: cases.start(),
        values: cases.values(),
    };
    let raw = chronological_split(make_windows(&daily, labels, cfg.window_len)?, cfg.test_year, cfg.val_fraction)?;
    let scaler = fit_scaler(&raw.train_targets())?;
    Ok(Prepared {
        dataset: raw.scaled(&scaler),
        daily,
        scaler,
    })
}

pub fn tune(cfg: &RunConfig, prep: &Prepared) -> Result<SearchOutcome> {
    let space = crate::tuning::SearchSpace {
        n_layers: cfg.arch.lstm_layers(),
        ..cfg.search.clone()
    };
    let trainer = LstmTrialTrainer {
        ds: &prep.dataset,
        arch: cfg.arch,
        dropout_rate: cfg.dropout_rate,
        train: cfg.train_config(),
        epochs: space.trial_epochs,
    };
    random_search(&space, &trainer, cfg.seed(), cfg.exec)
}

pub fn fit(cfg: &RunConfig, prep: &Prepared, units: &[usize]) -> Result<(ModelParams, TrainHistory)> {
    let model = init_params(&cfg.model_config(units)?, cfg.seed())?;
    train(model, &prep.dataset, &cfg.train_config())
}

/// Expanding-window folds over the samples before the test year.
pub fn cross_validate(cfg: &RunConfig, prep: &Prepared, units: &[usize]) -> Result<Vec<FoldResult>> {
    let pre_test = prep
        .dataset
        .subset(|s| matches!(s.split, Some(Split::Train | Split::Val)));
    ts_cross_validate(&pre_test, cfg.cv_folds, &cfg.model_config(units)?, &cfg.train_config(), &prep.scaler)
}

fn year_bounds(daily: &DailySeries, year: i32) -> Result<(usize, usize)> {
    let first = NaiveDate::from_ymd_opt(year, 1, 1).ok_or_else(|| Error::Config(format!("bad year {year}")))?;
    let last = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid date");
    let lo = daily
        .index_of(first)
        .or_else(|| (daily.start > first && daily.start <= last).then_some(0))
        .ok_or_else(|| Error::Insufficient(format!("no observations in {year}")))?;
    let hi = daily.index_of(last).map_or(daily.values.len(), |i| i + 1);
    Ok((lo, hi))
}

/// Teacher-forced one-day-ahead predictions over the test year, scored
/// against observed cases and outbreak labels.
pub fn evaluate_test(
    cfg: &RunConfig,
    model: &ModelParams,
    scaler: &ScalerParams,
    daily: &DailySeries,
    labels: &OutbreakLabels,
) -> Result<MetricsReport> {
    let (lo, hi) = year_bounds(daily, cfg.test_year)?;
    let scaled: Vec<f64> = daily.values.iter().map(|&v| scaler.transform(v)).collect();
    let fc = rolling_forecast(
        model,
        scaler,
        &scaled[..lo],
        daily.date_at(lo),
        hi - lo,
        ForecastMode::TeacherForced,
        Some(&scaled[lo..hi]),
    )?;
    let y_clf = fc
        .entries
        .iter()
        .map(|e| {
            labels
                .label(YearMonth::of(e.date))
                .ok_or_else(|| Error::Data(format!("no outbreak label for {}", e.date)))
        })
        .collect::<Result<Vec<u8>>>()?;
    let preds = Predictions {
        p_outbreak: fc.entries.iter().map(|e| e.p_outbreak).collect(),
        y_clf,
        cases_pred: fc.entries.iter().map(|e| e.y_pred_cases).collect(),
        cases_obs: daily.values[lo..hi].to_vec(),
    };
    let mut report = evaluate_predictions(&preds, Some(&cfg.bootstrap_config()))?;
    report.config_hash = Some(cfg.config_hash());
    Ok(report)
}

/// Rolling forecast from `forecast_start` (default: the first test-year day).
pub fn forecast(cfg: &RunConfig, model: &ModelParams, scaler: &ScalerParams, daily: &DailySeries) -> Result<ForecastResult> {
    let start = match cfg.forecast_start {
        Some(d) => d,
        None => daily.date_at(year_bounds(daily, cfg.test_year)?.0),
    };
    let offset = (start - daily.start).num_days();
    if offset < 0 || offset as usize > daily.values.len() {
        return Err(Error::Insufficient(format!(
            "forecast start {start} is not within or just after the observed days"
        )));
    }
    let lo = offset as usize;
    let scaled: Vec<f64> = daily.values.iter().map(|&v| scaler.transform(v)).collect();
    let observed = &scaled[lo..];
    let horizon = cfg
        .horizon
        .unwrap_or(if observed.is_empty() { DEFAULT_HORIZON } else { observed.len() });
    rolling_forecast(
        model,
        scaler,
        &scaled[..lo],
        start,
        horizon,
        cfg.forecast_mode,
        Some(&observed[..horizon.min(observed.len())]),
    )
}

/// Result of [`run_end_to_end`].
pub struct EndToEnd {
    pub report: MetricsReport,
    pub history: TrainHistory,
    pub model: ModelParams,
    pub labels: OutbreakLabels,
}

/// Synthetic data through labeling, training and test-year evaluation,
/// entirely in memory.
pub fn run_end_to_end(cfg: &RunConfig) -> Result<EndToEnd> {
    cfg.validate()?;
    let (cases, population) = synth_generate(&cfg.synth_spec())?;
    let Labelled { labels, .. } = label(cfg, &cases, &population)?;
    let prep = prepare(cfg, &cases, &labels)?;
    let (model, history) = fit(cfg, &prep, &cfg.model_units())?;
    let report = evaluate_test(cfg, &model, &prep.scaler, &prep.daily, &labels)?;
    Ok(EndToEnd {
        report,
        history,
        model,
        labels,
    })
}

pub fn metrics_json(report: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Unit counts for training: explicit config first, then a matching tuning
/// result in `out`, then the default width.
fn training_units(cfg: &RunConfig, out: &Path) -> Result<Vec<usize>> {
    if let Some(u) = &cfg.units {
        return Ok(u.clone());
    }
    let path = out.join(BEST_CONFIG_FILE);
    if path.exists() {
        let best: Stamped<BestConfig> = serde_json::from_reader(open(&path)?)?;
        if best.body.arch == cfg.arch.as_str() && best.body.units.len() == cfg.arch.lstm_layers() {
            info!("using tuned units {:?} from {}", best.body.units, path.display());
            return Ok(best.body.units);
        }
    }
    Ok(cfg.model_units())
}

fn load_model(out: &Path) -> Result<ModelArtifact> {
    let path = out.join(MODEL_FILE);
    if !path.exists() {
        return Err(Error::Data(format!(
            "no trained model at {}; run the train stage first",
            path.display()
        )));
    }
    ModelArtifact::load(&path)
}

/// Runs one stage, writing its artifacts under `out`, and returns their paths.
pub fn run_stage(stage: Stage, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let hash = cfg.config_hash();
    let mut written = Vec::new();
    match stage {
        Stage::Synth => {
            let (cases, population) = synth_generate(&cfg.synth_spec())?;
            let (cp, pp) = (cases_path(cfg, out), population_path(cfg, out));
            let mut w = create_stamped(&cp, &hash)?;
            write_case_csv(&[&cases], &mut w)?;
            w.flush()?;
            let mut w = create_stamped(&pp, &hash)?;
            write_population_csv(&population, &mut w)?;
            w.flush()?;
            written.extend([cp, pp]);
        }
        Stage::Ingest => {
            let inputs = load_inputs(cfg, out)?;
            let path = out.join(INGEST_FILE);
            write_json(
                &path,
                &Stamped {
                    config_hash: hash,
                    body: inputs.report,
                },
            )?;
            written.push(path);
        }
        Stage::Label => {
            let inputs = load_inputs(cfg, out)?;
            let lab = label(cfg, &inputs.cases, &inputs.population)?;
            let path = out.join(LABELS_FILE);
            let mut w = create_stamped(&path, &hash)?;
            write_labels_csv(&inputs, &lab, &mut w)?;
            w.flush()?;
            written.push(path);
        }
        Stage::Tune => {
            let inputs = load_inputs(cfg, out)?;
            let lab = label(cfg, &inputs.cases, &inputs.population)?;
            let prep = prepare(cfg, &inputs.cases, &lab.labels)?;
            let outcome = tune(cfg, &prep)?;
            let trials = out.join(TRIALS_FILE);
            let mut w = create_stamped(&trials, &hash)?;
            outcome.write_csv(&mut w)?;
            w.flush()?;
            let best = out.join(BEST_CONFIG_FILE);
            write_json(
                &best,
                &Stamped {
                    config_hash: hash,
                    body: BestConfig {
                        arch: cfg.arch.as_str().into(),
                        units: outcome.best.units.clone(),
                        val_loss: outcome.best.val_loss,
                        trial: outcome.best.trial,
                        seed: outcome.best.seed,
                    },
                },
            )?;
            written.extend([trials, best]);
        }
        Stage::Train => {
            let inputs = load_inputs(cfg, out)?;
            let lab = label(cfg, &inputs.cases, &inputs.population)?;
            let prep = prepare(cfg, &inputs.cases, &lab.labels)?;
            let units = training_units(cfg, out)?;
            if cfg.cv_folds > 0 {
                let folds = cross_validate(cfg, &prep, &units)?;
                let path = out.join(FOLDS_FILE);
                let mut w = create_stamped(&path, &hash)?;
                write_fold_csv(&folds, &mut w)?;
                w.flush()?;
                written.push(path);
            }
            let (model, history) = fit(cfg, &prep, &units)?;
            info!(
                "trained {} epochs, best epoch {} (val loss {:.6})",
                history.stopped_epoch,
                history.best_epoch,
                history.best_val_loss()
            );
            let model_path = out.join(MODEL_FILE);
            ModelArtifact::new(model, prep.scaler, hash.clone()).save(&model_path)?;
            let hist_path = out.join(HISTORY_FILE);
            let mut w = create_stamped(&hist_path, &hash)?;
            history.write_csv(&mut w)?;
            w.flush()?;
            written.extend([model_path, hist_path]);
        }
        Stage::Evaluate => {
            let art = load_model(out)?;
            let inputs = load_inputs(cfg, out)?;
            let lab = label(cfg, &inputs.cases, &inputs.population)?;
            let daily = DailySeries {
                start: inputs.cases.start(),
                values: inputs.cases.values(),
            };
            let report = evaluate_test(cfg, &art.params, &art.scaler, &daily, &lab.labels)?;
            let path = out.join(METRICS_FILE);
            write_json(&path, &report)?;
            written.push(path);
        }
        Stage::Forecast => {
            let art = load_model(out)?;
            let inputs = load_inputs(cfg, out)?;
            let daily = DailySeries {
                start: inputs.cases.start(),
                values: inputs.cases.values(),
            };
            let fc = forecast(cfg, &art.params, &art.scaler, &daily)?;
            let path = out.join(FORECAST_FILE);
            let mut w = create_stamped(&path, &hash)?;
            fc.write_csv(&mut w)?;
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes `month,cases,population,incidence,threshold,label`.
fn write_labels_csv<W: Write>(inputs: &Inputs, lab: &Labelled, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["month", "cases", "population", "incidence", "threshold", "label"])?;
    let totals = inputs.cases.monthly_totals();
    for ((month, total), (m2, inc)) in totals.iter().zip(&lab.incidence.entries) {
        debug_assert_eq!(month, m2);
        let pop = interpolate_population(&inputs.population, *month)?;
        let l = lab.labels.label(*month).unwrap_or(0);
        w.write_record([
            month.to_string(),
            total.to_string(),
            pop.to_string(),
            inc.to_string(),
            lab.labels.threshold.to_string(),
            l.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use crate::data::Disease;
use crate::error::{Error, Result};
use crate::evaluation::BootstrapConfig;
use crate::forecast::ForecastMode;
use crate::nn::{Architecture, ModelConfig};
use crate::par::Exec;
use crate::synth::{Injection, SynthSpec};
use crate::training::TrainConfig;
use crate::tuning::SearchSpace;

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "ARBOCAST_SEED";
pub const STANDARD_WINDOWS: [usize; 3] = [60, 90, 120];
/// Hidden units per layer when neither the config nor a tuning run sets them.
pub const DEFAULT_UNITS: usize = 32;
pub const DEFAULT_HORIZON: usize = 30;

/// Which months feed the outbreak threshold percentile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdScope {
    /// Only months before the test year.
    Train,
    All,
}

impl FromStr for ThresholdScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("threshold_scope must be train or all, got {s:?}"))),
        }
    }
}

impl ThresholdScope {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub disease: Disease,
    pub municipality: String,
    pub window_len: usize,
    /// Permits window lengths outside 60/90/120.
    pub allow_any_window: bool,
    pub arch: Architecture,
    /// Overrides the disease's default percentile.
    pub percentile: Option<f64>,
    pub threshold_scope: ThresholdScope,
    pub test_year: i32,
    pub val_fraction: f64,
    pub cases_path: Option<PathBuf>,
    pub population_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub units: Option<Vec<usize>>,
    pub dropout_rate: f64,
    pub train: TrainConfig,
    pub search: SearchSpace,
    /// Expanding-window folds run after training; 0 disables.
    pub cv_folds: usize,
    pub bootstrap: BootstrapConfig,
    pub forecast_mode: ForecastMode,
    /// Forecast length in days; `None` covers every observed day from the
    /// start, or [`DEFAULT_HORIZON`] days when none are observed.
    pub horizon: Option<usize>,
    pub synth: SynthSpec,
    /// First forecast day; defaults to January 1 of the test year.
    pub forecast_start: Option<NaiveDate>,
    /// How data-parallel work runs. Not part of the file format.
    pub exec: Exec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = Architecture::Simple;
        Self {
            disease: Disease::Dengue,
            municipality: "261160".into(),
            window_len: 60,
            allow_any_window: false,
            arch,
            percentile: None,
            threshold_scope: ThresholdScope::Train,
            test_year: 2023,
            val_fraction: 0.2,
            cases_path: None,
            population_path: None,
            seed: None,
            units: None,
            dropout_rate: 0.2,
            train: TrainConfig::default(),
            search: SearchSpace::for_arch(arch),
            cv_folds: 0,
            bootstrap: BootstrapConfig::default(),
            forecast_mode: ForecastMode::TeacherForced,
            horizon: None,
            synth: SynthSpec::default(),
            forecast_start: None,
            exec: Exec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| Error::Config(format!("bad date {value:?} for {key}")))
}

/// `start:length:multiplier` entries separated by `;`.
fn parse_injections(key: &str, value: &str) -> Result<Vec<Injection>> {
    if value.trim().is_empty() {
        return Ok(vec![]);
    }
    value
        .split(';')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!("{key}: expected start:length:multiplier, got {item:?}")));
            }
            Ok(Injection {
                start: parse_date(key, parts[0])?,
                length_days: parse(key, parts[1])?,
                multiplier: parse(key, parts[2])?,
            })
        })
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_str_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", k + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("config line {}: {}", k + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str_kv(&text)
    }

    /// Sets one key; values use the same syntax as the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "disease" => self.disease = value.parse().map_err(|_| Error::Config(format!("unknown disease {value:?}")))?,
            "municipality" => self.municipality = value.to_string(),
            "window" => self.window_len = parse(key, value)?,
            "allow_any_window" => self.allow_any_window = parse(key, value)?,
            "arch" => {
                self.arch = value.parse()?;
                self.search.n_layers = self.arch.lstm_layers();
            }
            "percentile" => {
                self.percentile = match value {
                    "" | "default" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "threshold_scope" => self.threshold_scope = value.parse()?,
            "test_year" => self.test_year = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "cases" => self.cases_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "population" => self.population_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "seed" => self.seed = Some(parse(key, value)?),
            "units" => {
                self.units = match value {
                    "" | "default" => None,
                    v => Some(parse_list(key, v)?),
                }
            }
            "dropout" => self.dropout_rate = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "patience_stop" => {
                self.train.patience_stop = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "lr_init" => self.train.lr_init = parse(key, value)?,
            "plateau_factor" => self.train.plateau_factor = parse(key, value)?,
            "plateau_patience" => self.train.plateau_patience = parse(key, value)?,
            "lr_min" => self.train.lr_min = parse(key, value)?,
            "search_units_min" => self.search.units_min = parse(key, value)?,
            "search_units_max" => self.search.units_max = parse(key, value)?,
            "search_layers" => self.search.n_layers = parse(key, value)?,
            "search_trials" => self.search.n_trials = parse(key, value)?,
            "search_epochs" => self.search.trial_epochs = parse(key, value)?,
            "cv_folds" => self.cv_folds = parse(key, value)?,
            "bootstrap_iters" => self.bootstrap.n_iter = parse(key, value)?,
            "bootstrap_level" => self.bootstrap.level = parse(key, value)?,
            "forecast_mode" => {
                self.forecast_mode = match value {
                    "teacher_forced" => ForecastMode::TeacherForced,
                    "autoregressive" => ForecastMode::Autoregressive,
                    _ => return Err(Error::Config(format!("unknown forecast_mode {value:?}"))),
                }
            }
            "horizon" => {
                self.horizon = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "forecast_start" => {
                self.forecast_start = match value {
                    "" | "auto" => None,
                    v => Some(parse_date(key, v)?),
                }
            }
            "synth_start" => self.synth.start = parse_date(key, value)?,
            "synth_end" => self.synth.end = parse_date(key, value)?,
            "synth_base_rate" => self.synth.base_rate = parse(key, value)?,
            "synth_amplitude" => self.synth.amplitude = parse(key, value)?,
            "synth_period" => self.synth.period_days = parse(key, value)?,
            "synth_noise" => self.synth.noise = parse(key, value)?,
            "synth_outbreaks" => self.synth.injections = parse_injections(key, value)?,
            "synth_population" => self.synth.population = parse(key, value)?,
            "synth_population_growth" => self.synth.population_growth = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if !self.allow_any_window && !STANDARD_WINDOWS.contains(&self.window_len) {
            return Err(Error::Config(format!(
                "window {} is not one of 60, 90, 120 (set allow_any_window = true to override)",
                self.window_len
            )));
        }
        if let Some(p) = self.percentile {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("percentile {p} not in (0, 1)")));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} not in (0, 1)", self.val_fraction)));
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) || self.bootstrap.n_iter == 0 {
            return Err(Error::Config("bootstrap needs iterations and a level in (0, 1)".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.cv_folds == 1 {
            return Err(Error::Config("cv_folds must be 0 or at least 2".into()));
        }
        self.train.validate()?;
        self.search.validate()?;
        self.model_config(&self.model_units())?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn percentile(&self) -> f64 {
        self.percentile.unwrap_or_else(|| self.disease.default_percentile())
    }

    pub fn model_units(&self) -> Vec<usize> {
        self.units
            .clone()
            .unwrap_or_else(|| vec![DEFAULT_UNITS; self.arch.lstm_layers()])
    }

    pub fn model_config(&self, units: &[usize]) -> Result<ModelConfig> {
        ModelConfig::new(self.arch, self.window_len, units, self.dropout_rate)
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed(),
            exec: self.exec,
            ..self.train.clone()
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            seed: self.seed(),
            exec: self.exec,
            ..self.bootstrap
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            disease: self.disease,
            municipality: self.municipality.clone(),
            seed: self.seed(),
            ..self.synth.clone()
        }
    }

    /// Canonical rendering of every setting, one `key = value` per line.
    pub fn to_kv(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let s = &self.search;
        let injections = self
            .synth
            .injections
            .iter()
            .map(|i| format!("{}:{}:{}", i.start, i.length_days, i.multiplier))
            .collect::<Vec<_>>()
            .join(";");
        let pairs: Vec<(&str, String)> = vec![
            ("disease", self.disease.to_string()),
            ("municipality", self.municipality.clone()),
            ("window", self.window_len.to_string()),
            ("allow_any_window", self.allow_any_window.to_string()),
            ("arch", self.arch.as_str().into()),
            ("percentile", self.percentile().to_string()),
            ("threshold_scope", self.threshold_scope.as_str().into()),
            ("test_year", self.test_year.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("cases", opt_path(&self.cases_path)),
            ("population", opt_path(&self.population_path)),
            ("seed", self.seed().to_string()),
            ("units", self.units.as_deref().map(join).unwrap_or_else(|| "default".into())),
            ("dropout", self.dropout_rate.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("patience_stop", t.patience_stop.map_or("none".into(), |p| p.to_string())),
            ("lr_init", t.lr_init.to_string()),
            ("plateau_factor", t.plateau_factor.to_string()),
            ("plateau_patience", t.plateau_patience.to_string()),
            ("lr_min", t.lr_min.to_string()),
            ("search_units_min", s.units_min.to_string()),
            ("search_units_max", s.units_max.to_string()),
            ("search_layers", s.n_layers.to_string()),
            ("search_trials", s.n_trials.to_string()),
            ("search_epochs", s.trial_epochs.to_string()),
            ("cv_folds", self.cv_folds.to_string()),
            ("bootstrap_iters", self.bootstrap.n_iter.to_string()),
            ("bootstrap_level", self.bootstrap.level.to_string()),
            (
                "forecast_mode",
                match self.forecast_mode {
                    ForecastMode::TeacherForced => "teacher_forced",
                    ForecastMode::Autoregressive => "autoregressive",
                }
                .into(),
            ),
            ("horizon", self.horizon.map_or("auto".into(), |h| h.to_string())),
            ("forecast_start", self.forecast_start.map_or("auto".into(), |d| d.to_string())),
            ("synth_start", self.synth.start.to_string()),
            ("synth_end", self.synth.end.to_string()),
            ("synth_base_rate", self.synth.base_rate.to_string()),
            ("synth_amplitude", self.synth.amplitude.to_string()),
            ("synth_period", self.synth.period_days.to_string()),
            ("synth_noise", self.synth.noise.to_string()),
            ("synth_outbreaks", injections),
            ("synth_population", self.synth.population.to_string()),
            ("synth_population_growth", self.synth.population_growth.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the canonical rendering, as lowercase hex.
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

//! Random-search tuning of layer widths and expanding-window cross-validation.

use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_predictions, MetricsReport, Predictions};
use crate::nn::{init_params, Architecture, ModelConfig, ModelParams};
use crate::par::{self, derive_seed, Exec};
use crate::preprocess::{Sample, ScalerParams, Split, WindowedDataset};
use crate::training::{train, TrainConfig, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub units_min: usize,
    pub units_max: usize,
    pub n_layers: usize,
    pub n_trials: usize,
    pub trial_epochs: usize,
}

impl SearchSpace {
    pub fn for_arch(arch: Architecture) -> Self {
        Self {
            units_min: 128,
            units_max: 512,
            n_layers: arch.lstm_layers(),
            n_trials: 30,
            trial_epochs: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units_min == 0 || self.units_min > self.units_max {
            return Err(Error::Config(format!(
                "unit range [{}, {}] is empty",
                self.units_min, self.units_max
            )));
        }
        if self.n_layers == 0 || self.n_trials == 0 || self.trial_epochs == 0 {
            return Err(Error::Config("search needs layers, trials and epochs".into()));
        }
        Ok(())
    }

    /// Every trial's unit counts, drawn up front from the search seed.
    pub fn sample(&self, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.n_trials)
            .map(|_| {
                (0..self.n_layers)
                    .map(|_| rng.random_range(self.units_min..=self.units_max))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub units: Vec<usize>,
    pub val_loss: f64,
    pub seed: u64,
}

/// Runs one trial and reports its validation loss.
pub trait TrialTrainer: Sync {
    fn run_trial(&self, units: &[usize], seed: u64) -> Result<f64>;
}

impl<F> TrialTrainer for F
where
    F: Fn(&[usize], u64) -> Result<f64> + Sync,
{
    fn run_trial(&self, units: &[usize], seed: u64) -> Result<f64> {
        self(units, seed)
    }
}

/// Trains a fresh model per trial for a fixed number of epochs with early
/// stopping off, scoring it by its best validation loss.
pub struct LstmTrialTrainer<'a> {
    pub ds: &'a WindowedDataset,
    pub arch: Architecture,
    pub dropout_rate: f64,
    pub train: TrainConfig,
    pub epochs: usize,
}

impl TrialTrainer for LstmTrialTrainer<'_> {
    fn run_trial(&self, units: &[usize], seed: u64) -> Result<f64> {
        let cfg = ModelConfig::new(self.arch, self.ds.window_len, units, self.dropout_rate)?;
        let model = init_params(&cfg, seed)?;
        let tc = TrainConfig {
            epochs: self.epochs,
            patience_stop: None,
            seed,
            ..self.train.clone()
        };
        let (_, history) = train(model, self.ds, &tc)?;
        Ok(history.best_val_loss())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: TrialResult,
    pub trials: Vec<TrialResult>,
}

impl SearchOutcome {
    /// Writes `trial,units_l1,units_l2[,units_l3],val_loss,seed`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let layers = self.best.units.len();
        let mut header = vec!["trial".to_string()];
        header.extend((1..=layers).map(|l| format!("units_l{l}")));
        header.extend(["val_loss".to_string(), "seed".to_string()]);
        w.write_record(&header)?;
        for t in &self.trials {
            let mut row = vec![t.trial.to_string()];
            row.extend(t.units.iter().map(usize::to_string));
            row.extend([t.val_loss.to_string(), t.seed.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every sampled configuration and returns the lowest validation
/// loss; ties go to the earliest trial.
pub fn random_search<T: TrialTrainer + ?Sized>(
    space: &SearchSpace,
    trainer: &T,
    seed: u64,
    exec: Exec,
) -> Result<SearchOutcome> {
    space.validate()?;
    let configs = space.sample(seed);
    let trials = par::try_map_indexed(exec, configs.len(), |k| {
        let trial_seed = derive_seed(seed, &[k as u64, 0x0074_7269_616c]);
        let val_loss = trainer.run_trial(&configs[k], trial_seed)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss of trial {k}")));
        }
        Ok(TrialResult {
            trial: k,
            units: configs[k].clone(),
            val_loss,
            seed: trial_seed,
        })
    })?;
    let best = trials
        .iter()
        .fold(None::<&TrialResult>, |best, t| match best {
            Some(b) if b.val_loss <= t.val_loss => Some(b),
            _ => Some(t),
        })
        .expect("at least one trial")
        .clone();
    Ok(SearchOutcome { best, trials })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Range<usize>,
    pub val: Range<usize>,
}

/// Expanding-window folds over `n` time-ordered samples: the series is cut
/// into `k+1` equal blocks (remainder joins the first), fold `i` trains on
/// blocks `0..i` and validates on block `i`.
pub fn expanding_folds(n: usize, k: usize) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
    }
    if n < k + 1 {
        return Err(Error::Insufficient(format!(
            "{k}-fold time-series CV needs at least {} samples, got {n}",
            k + 1
        )));
    }
    let block = n / (k + 1);
    let head = n - block * (k + 1);
    Ok((1..=k)
        .map(|i| {
            let cut = head + i * block;
            Fold {
                train: 0..cut,
                val: cut..cut + block,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub report: MetricsReport,
    pub history: TrainHistory,
}

/// Writes one row of fold metrics per fold.
pub fn write_fold_csv<W: Write>(folds: &[FoldResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "fold", "train_start", "train_end", "val_start", "val_end", "f1", "auc_roc", "mape",
        "medape", "best_epoch", "stopped_epoch",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in folds {
        w.write_record([
            f.fold.to_string(),
            f.train.start.to_string(),
            f.train.end.to_string(),
            f.val.start.to_string(),
            f.val.end.to_string(),
            f.report.f1.to_string(),
            opt(f.report.auc_roc),
            opt(f.report.mape),
            opt(f.report.medape),
            f.history.best_epoch.to_string(),
            f.history.stopped_epoch.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Case-scale predictions of `model` on `samples`, which are on the normalized scale.
pub fn predict_samples(
    model: &ModelParams,
    samples: &[&Sample],
    scaler: &ScalerParams,
    exec: Exec,
) -> Result<Predictions> {
    let outs = par::try_map_indexed(exec, samples.len(), |k| model.predict(&samples[k].x))?;
    Ok(Predictions {
        p_outbreak: outs.iter().map(|o| o.p_outbreak).collect(),
        y_clf: samples.iter().map(|s| s.y_clf).collect(),
        cases_pred: outs
            .iter()
            .map(|o| scaler.inverse_transform(o.y_hat).max(0.0))
            .collect(),
        cases_obs: samples.iter().map(|s| scaler.inverse_transform(s.y_reg)).collect(),
    })
}

/// Trains and scores one model per expanding-window fold.
///
/// `ds` holds the pre-test samples on the normalized scale, in any split
/// state; they are ordered by target date here.
pub fn ts_cross_validate(
    ds: &WindowedDataset,
    k: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    scaler: &ScalerParams,
) -> Result<Vec<FoldResult>> {
    let mut ordered: Vec<&Sample> = ds.samples.iter().collect();
    ordered.sort_by_key(|s| s.target_date);
    let folds = expanding_folds(ordered.len(), k)?;
    par::try_map_indexed(train_cfg.exec, folds.len(), |i| {
        let fold = &folds[i];
        let tag = |range: &Range<usize>, split: Split| {
            ordered[range.clone()].iter().map(move |s| Sample {
                split: Some(split),
                ..(*s).clone()
            })
        };
        let fold_ds = WindowedDataset {
            window_len: ds.window_len,
            samples: tag(&fold.train, Split::Train)
                .chain(tag(&fold.val, Split::Val))
                .collect(),
        };
        let seed = derive_seed(train_cfg.seed, &[i as u64, 0x666f_6c64]);
        let model = init_params(model_cfg, seed)?;
        let tc = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let (best, history) = train(model, &fold_ds, &tc)?;
        let val: Vec<&Sample> = fold_ds.split(Split::Val).collect();
        let preds = predict_samples(&best, &val, scaler, train_cfg.exec)?;
        let report = evaluate_predictions(&preds, None)?;
        Ok(FoldResult {
            fold: i + 1,
            train: fold.train.clone(),
            val: fold.val.clone(),
            report,
            history,
        })
    })
}

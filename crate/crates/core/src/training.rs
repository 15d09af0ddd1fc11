//! Mini-batch Adam training with early stopping and plateau learning-rate decay.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{multitask_loss, Mode, ModelParams, Parameters, Target};
use crate::par::{self, derive_seed, Exec};
use crate::preprocess::{Sample, Split, WindowedDataset};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
/// A validation loss counts as an improvement only when it beats the best by this much.
pub const MIN_DELTA: f64 = 1e-6;

/// Samples per gradient chunk. Fixed so the reduction order never depends on thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything is modified.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let grads = grads.tensors();
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.len() || tensors.len() != state.m.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for (k, ((_, theta), (name, g))) in tensors.iter_mut().zip(&grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        if theta.len() != g.len() || m.len() != g.len() {
            return Err(Error::Shape(format!("tensor {name}")));
        }
        for j in 0..g.len() {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= state.lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` disables early stopping.
    pub patience_stop: Option<usize>,
    pub lr_init: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_min: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            patience_stop: Some(10),
            lr_init: 1e-3,
            plateau_factor: 0.5,
            plateau_patience: 5,
            lr_min: 1e-5,
            seed: 42,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.plateau_patience == 0 {
            return bad("epochs, batch_size and plateau_patience must be positive");
        }
        if self.patience_stop == Some(0) {
            return bad("patience_stop must be positive");
        }
        if !(self.lr_init > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return bad("learning rates must satisfy 0 < lr_min <= lr_init");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must be in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }

    /// Writes `epoch,train_loss,val_loss,lr`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What the monitor wants the loop to do after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochDecision {
    pub improved: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

/// Early-stopping and plateau bookkeeping on a monitored loss.
#[derive(Debug, Clone)]
pub struct EpochMonitor {
    best: f64,
    stop_wait: usize,
    plateau_wait: usize,
    patience_stop: Option<usize>,
    plateau_patience: usize,
}

impl EpochMonitor {
    pub fn new(patience_stop: Option<usize>, plateau_patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            stop_wait: 0,
            plateau_wait: 0,
            patience_stop,
            plateau_patience,
        }
    }

    pub fn observe(&mut self, loss: f64) -> EpochDecision {
        let improved = loss < self.best - MIN_DELTA;
        let mut reduce_lr = false;
        if improved {
            self.best = loss;
            self.stop_wait = 0;
            self.plateau_wait = 0;
        } else {
            self.stop_wait += 1;
            self.plateau_wait += 1;
            if self.plateau_wait >= self.plateau_patience {
                reduce_lr = true;
                self.plateau_wait = 0;
            }
        }
        let stop = self.patience_stop.is_some_and(|p| self.stop_wait >= p);
        EpochDecision {
            improved,
            reduce_lr,
            stop,
        }
    }
}

fn target(s: &Sample) -> Target {
    Target {
        y_clf: s.y_clf,
        y_reg: s.y_reg,
    }
}

/// Mean loss and mean gradient over a batch in train mode.
///
/// `seeds[k]` drives the dropout masks of `batch[k]`.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[&Sample],
    seeds: &[u64],
    exec: Exec,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Insufficient("empty batch".into()));
    }
    let n_chunks = batch.len().div_ceil(GRAD_CHUNK);
    let partials = par::try_map_indexed(exec, n_chunks, |c| -> Result<(f64, ModelParams)> {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(batch.len());
        let mut grad = params.zeros_like();
        let mut loss = 0.0;
        for k in lo..hi {
            let trace = params.forward(&batch[k].x, Mode::Train { seed: seeds[k] })?;
            let t = target(batch[k]);
            loss += multitask_loss(trace.output.p_outbreak, trace.output.y_hat, t.y_clf, t.y_reg);
            params.backward_into(&trace, t, &mut grad)?;
        }
        Ok((loss, grad))
    })?;
    let mut iter = partials.into_iter();
    let (mut loss, mut grad) = iter.next().expect("at least one chunk");
    for (l, g) in iter {
        loss += l;
        grad.add_assign(&g);
    }
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// Mean eval-mode multitask loss.
pub fn mean_loss<'a>(
    params: &ModelParams,
    samples: impl IntoIterator<Item = &'a Sample>,
    exec: Exec,
) -> Result<f64> {
    let samples: Vec<&Sample> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(Error::Insufficient("no samples to evaluate".into()));
    }
    let losses = par::try_map_indexed(exec, samples.len(), |k| {
        params.loss(&samples[k].x, target(samples[k]), Mode::Eval)
    })?;
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(loss)
}

/// Trains on the train-tagged samples, monitoring the val-tagged ones, and
/// returns the parameters of the best validation epoch.
pub fn train(
    model: ModelParams,
    ds: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    if ds.window_len != model.config.window_len {
        return Err(Error::Shape(format!(
            "dataset windows are {} long, model expects {}",
            ds.window_len, model.config.window_len
        )));
    }
    let train: Vec<&Sample> = ds.split(Split::Train).collect();
    let val: Vec<&Sample> = ds.split(Split::Val).collect();
    if train.is_empty() || val.is_empty() {
        return Err(Error::Insufficient(format!(
            "training needs train and val samples (have {} and {})",
            train.len(),
            val.len()
        )));
    }

    let mut params = model;
    let mut best = params.clone();
    let mut state = AdamState::new(&params, cfg.lr_init);
    let mut monitor = EpochMonitor::new(cfg.patience_stop, cfg.plateau_patience);
    let mut records = Vec::new();
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| train[i]).collect();
            let seeds: Vec<u64> = idx
                .iter()
                .map(|&i| derive_seed(cfg.seed, &[epoch as u64, b as u64, i as u64]))
                .collect();
            let (loss, grad) = batch_gradient(&params, &batch, &seeds, cfg.exec)?;
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut params, &grad, &mut state)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let val_loss = mean_loss(&params, val.iter().copied(), cfg.exec)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: state.lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {:.2e}", state.lr);

        let decision = monitor.observe(val_loss);
        if decision.improved {
            best = params.clone();
            best_epoch = epoch;
        }
        if decision.stop {
            break;
        }
        if decision.reduce_lr {
            state.lr = (state.lr * cfg.plateau_factor).max(cfg.lr_min);
        }
    }
    if best_epoch == 0 {
        // no epoch beat +inf: only possible with a non-finite monitor
        return Err(Error::NonFinite("validation loss".into()));
    }
    let stopped_epoch = records.len();
    Ok((
        best,
        TrainHistory {
            epochs: records,
            stopped_epoch,
            best_epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Architecture, ModelConfig};
    use chrono::NaiveDate;

    /// A flat vector of parameters for optimizer tests.
    #[derive(Debug, Clone, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<(String, &[f64])> {
            vec![("theta".into(), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
            vec![("theta".into(), &mut self.0)]
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = Flat(vec![1.0]);
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &Flat(vec![0.3]), &mut s).unwrap();
        assert!((p.0[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Flat(vec![1.0, -2.0]);
        let mut s = AdamState::new(&p, 1e-3);
        for _ in 0..10 {
            adam_step(&mut p, &Flat(vec![0.0, 0.0]), &mut s).unwrap();
        }
        assert_eq!(p.0, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_matches_straight_line_reference() {
        // f(θ) = (θ − 3)², g = 2(θ − 3)
        let lr = 0.1;
        let mut p = Flat(vec![0.0]);
        let mut s = AdamState::new(&p, lr);
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * (p.0[0] - 3.0);
            adam_step(&mut p, &Flat(vec![g]), &mut s).unwrap();

            let g_ref = 2.0 * (theta - 3.0);
            m = 0.9 * m + 0.1 * g_ref;
            v = 0.999 * v + 0.001 * g_ref * g_ref;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((p.0[0] - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = Flat(vec![1.0]);
        let mut s = AdamState::new(&p, 1e-3);
        let err = adam_step(&mut p, &Flat(vec![f64::NAN]), &mut s).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn monitor_stops_after_patience() {
        let mut m = EpochMonitor::new(Some(10), 5);
        let mut stopped = None;
        let mut reductions = 0;
        for epoch in 1..=50 {
            let d = m.observe(1.0);
            reductions += d.reduce_lr as usize;
            if d.stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(11));
        assert_eq!(reductions, 2);
    }

    #[test]
    fn monitor_ignores_tiny_improvements() {
        let mut m = EpochMonitor::new(None, 100);
        assert!(m.observe(1.0).improved);
        assert!(!m.observe(1.0 - 5e-7).improved);
        assert!(m.observe(1.0 - 2e-6).improved);
    }

    pub(crate) fn toy_dataset(n_train: usize, n_val: usize, t: usize, seed: u64) -> WindowedDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let samples = (0..n_train + n_val)
            .map(|k| {
                let x: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
                let mean = x.iter().sum::<f64>() / t as f64;
                Sample {
                    y_reg: mean,
                    y_clf: u8::from(mean > 0.5),
                    x,
                    target_date: start + chrono::Days::new(k as u64),
                    split: Some(if k < n_train { Split::Train } else { Split::Val }),
                }
            })
            .collect();
        WindowedDataset {
            window_len: t,
            samples,
        }
    }

    fn small_model(t: usize, h: usize, dropout: f64, seed: u64) -> ModelParams {
        init_params(&ModelConfig::new(Architecture::Simple, t, &[h, h], dropout).unwrap(), seed).unwrap()
    }

    #[test]
    fn constant_val_loss_stops_at_patience_plus_one() {
        let ds = toy_dataset(12, 4, 5, 1);
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 4,
            lr_init: 1e-300,
            lr_min: 1e-305,
            ..TrainConfig::default()
        };
        let (_, h) = train(small_model(5, 3, 0.0, 1), &ds, &cfg).unwrap();
        assert_eq!(h.stopped_epoch, 11);
        assert_eq!(h.best_epoch, 1);
        // reduced once after epoch 6; the second reduction coincides with the stop
        assert_eq!(h.epochs[10].lr, 1e-300 * 0.5);
    }

    #[test]
    fn lr_schedule_is_monotone_and_floored() {
        let ds = toy_dataset(12, 4, 5, 2);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 4,
            patience_stop: None,
            lr_init: 1e-300,
            lr_min: 1e-301,
            plateau_patience: 2,
            ..TrainConfig::default()
        };
        let (_, h) = train(small_model(5, 3, 0.0, 1), &ds, &cfg).unwrap();
        assert_eq!(h.stopped_epoch, 40);
        // reductions after epochs 3 and 5
        assert_eq!(h.epochs[5].lr, 1e-300 * 0.25);
        for w in h.epochs.windows(2) {
            assert!(w[1].lr <= w[0].lr);
        }
        assert!(h.epochs.iter().all(|r| r.lr >= 1e-301));
    }

    #[test]
    fn best_parameters_are_restored_and_runs_repeat() {
        let ds = toy_dataset(24, 8, 6, 3);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 5,
            lr_init: 1e-2,
            ..TrainConfig::default()
        };
        let model = small_model(6, 4, 0.2, 5);
        let (best, h) = train(model.clone(), &ds, &cfg).unwrap();
        let val = mean_loss(&best, ds.split(Split::Val), Exec::Sequential).unwrap();
        assert_eq!(val, h.best_val_loss());
        let min = h.epochs.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(h.best_val_loss(), min);

        let (best2, h2) = train(model, &ds, &cfg).unwrap();
        assert_eq!(h, h2);
        assert_eq!(best, best2);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let ds = toy_dataset(16, 4, 5, 4);
        let model = small_model(5, 3, 0.3, 2);
        let batch: Vec<&Sample> = ds.split(Split::Train).collect();
        let seeds: Vec<u64> = (0..batch.len() as u64).collect();
        let (l1, g1) = batch_gradient(&model, &batch, &seeds, Exec::Sequential).unwrap();
        let (l2, g2) = batch_gradient(&model, &batch, &seeds, Exec::Parallel).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn training_errors() {
        let mut ds = toy_dataset(8, 0, 5, 1);
        assert!(train(small_model(5, 3, 0.0, 1), &ds, &TrainConfig::default()).is_err());
        ds.samples.iter_mut().for_each(|s| s.split = Some(Split::Val));
        assert!(train(small_model(5, 3, 0.0, 1), &ds, &TrainConfig::default()).is_err());
        let ds = toy_dataset(8, 2, 5, 1);
        assert!(train(small_model(6, 3, 0.0, 1), &ds, &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(small_model(5, 3, 0.0, 1), &ds, &bad).is_err());
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                lr: 0.001,
            }],
            stopped_epoch: 1,
            best_epoch: 1,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss,lr\n1,0.5,0.25,0.001\n");
    }
}

//! Classification and regression metrics with percentile-bootstrap intervals.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::percentile;
use crate::error::{Error, Result};
use crate::par::{self, derive_seed, Exec};

/// Probabilities strictly above this are classified as outbreaks.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn classify(p: f64) -> u8 {
    u8::from(p > DECISION_THRESHOLD)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Insufficient("metric of an empty sample".into()));
    }
    Ok(())
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(pred: &[u8], actual: &[u8]) -> Result<f64> {
    check_lengths(pred.len(), actual.len())?;
    let (mut tp, mut fp, mut fnc) = (0usize, 0usize, 0usize);
    for (&p, &a) in pred.iter().zip(actual) {
        match (p != 0, a != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnc += 1,
            (false, false) => {}
        }
    }
    // 2PR/(P+R) reduces to 2TP/(2TP+FP+FN)
    let denom = 2 * tp + fp + fnc;
    Ok(if tp == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Area under the ROC curve as the Mann-Whitney statistic (ties count ½),
/// computed from mid-ranks.
pub fn auc_roc(scores: &[f64], actual: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), actual.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let n_pos = actual.iter().filter(|&&a| a != 0).count();
    let n_neg = actual.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps mid-ranks integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the mid-rank (i+j+2)/2
        let mid2 = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if actual[k] != 0 {
                rank_sum2 += mid2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    // U·2 = 2R − p(p+1)
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Absolute percentage errors over pairs with a non-zero actual value.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentErrors {
    pub errors: Vec<f64>,
    pub excluded_zero_actuals: usize,
}

pub fn percentage_errors(pred: &[f64], actual: &[f64]) -> Result<PercentErrors> {
    check_lengths(pred.len(), actual.len())?;
    let mut errors = Vec::with_capacity(pred.len());
    let mut excluded = 0;
    for (&p, &a) in pred.iter().zip(actual) {
        if a == 0.0 {
            excluded += 1;
        } else {
            errors.push((p - a).abs() / a.abs() * 100.0);
        }
    }
    if errors.is_empty() {
        return Err(Error::Insufficient(
            "every actual value is zero; percentage error undefined".into(),
        ));
    }
    Ok(PercentErrors {
        errors,
        excluded_zero_actuals: excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentMetric {
    pub value: f64,
    pub excluded_zero_actuals: usize,
}

pub fn mape(pred: &[f64], actual: &[f64]) -> Result<PercentMetric> {
    let pe = percentage_errors(pred, actual)?;
    Ok(PercentMetric {
        value: pe.errors.iter().sum::<f64>() / pe.errors.len() as f64,
        excluded_zero_actuals: pe.excluded_zero_actuals,
    })
}

pub fn medape(pred: &[f64], actual: &[f64]) -> Result<PercentMetric> {
    let pe = percentage_errors(pred, actual)?;
    Ok(PercentMetric {
        value: median(pe.errors),
        excluded_zero_actuals: pe.excluded_zero_actuals,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_iter: usize,
    pub level: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_iter: 1000,
            level: 0.95,
            seed: 42,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Percentile bootstrap over `n` items.
///
/// `metric` receives resampled indices. Resamples on which it fails with
/// [`Error::SingleClass`] are redrawn; more than `10·n_iter` redraws in total
/// is an error.
pub fn bootstrap_ci<F>(n: usize, metric: F, cfg: &BootstrapConfig) -> Result<Interval>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    if n == 0 {
        return Err(Error::Insufficient("bootstrap of an empty sample".into()));
    }
    if cfg.n_iter == 0 || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Config("bootstrap needs n_iter > 0 and level in (0, 1)".into()));
    }
    let limit = 10 * cfg.n_iter;
    let draws = par::map_indexed(cfg.exec, cfg.n_iter, |it| -> Result<(f64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[it as u64]));
        let mut idx = vec![0usize; n];
        let mut redraws = 0;
        loop {
            idx.iter_mut().for_each(|k| *k = rng.random_range(0..n));
            match metric(&idx) {
                Err(Error::SingleClass) if redraws < limit => redraws += 1,
                Err(Error::SingleClass) => return Err(Error::RedrawLimit { attempts: redraws }),
                other => return other.map(|v| (v, redraws)),
            }
        }
    });
    let mut values = Vec::with_capacity(cfg.n_iter);
    let mut redraws = 0;
    for d in draws {
        let (v, r) = d?;
        values.push(v);
        redraws += r;
    }
    if redraws > limit {
        return Err(Error::RedrawLimit { attempts: redraws });
    }
    let tail = (1.0 - cfg.level) / 2.0;
    Ok(Interval {
        lo: percentile(&values, tail)?,
        hi: percentile(&values, 1.0 - tail)?,
        level: cfg.level,
    })
}

/// Wraps a label-based metric so resamples lacking either class are redrawn.
pub fn require_both_classes(labels: &[u8], idx: &[usize]) -> Result<()> {
    let pos = idx.iter().filter(|&&k| labels[k] != 0).count();
    if pos == 0 || pos == idx.len() {
        Err(Error::SingleClass)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    /// Undefined when the evaluated samples hold a single class.
    pub auc_roc: Option<f64>,
    pub mape: Option<f64>,
    pub medape: Option<f64>,
    #[serde(rename = "n")]
    pub n_samples: usize,
    #[serde(default)]
    pub ci: BTreeMap<String, Interval>,
    pub excluded_zero_actuals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Predictions paired with what actually happened.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub p_outbreak: Vec<f64>,
    pub y_clf: Vec<u8>,
    /// Case-scale predictions and observations.
    pub cases_pred: Vec<f64>,
    pub cases_obs: Vec<f64>,
}

impl Predictions {
    fn f1_on(&self, idx: &[usize]) -> Result<f64> {
        let pred: Vec<u8> = idx.iter().map(|&k| classify(self.p_outbreak[k])).collect();
        let act: Vec<u8> = idx.iter().map(|&k| self.y_clf[k]).collect();
        f1_score(&pred, &act)
    }

    fn auc_on(&self, idx: &[usize]) -> Result<f64> {
        let s: Vec<f64> = idx.iter().map(|&k| self.p_outbreak[k]).collect();
        let a: Vec<u8> = idx.iter().map(|&k| self.y_clf[k]).collect();
        auc_roc(&s, &a)
    }
}

/// Point metrics, plus bootstrap intervals for F1 and AUC when `bootstrap` is given.
pub fn evaluate_predictions(
    preds: &Predictions,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<MetricsReport> {
    let n = preds.y_clf.len();
    check_lengths(preds.p_outbreak.len(), n)?;
    check_lengths(preds.cases_pred.len(), preds.cases_obs.len())?;
    let all: Vec<usize> = (0..n).collect();
    let f1 = preds.f1_on(&all)?;
    let auc = match preds.auc_on(&all) {
        Ok(v) => Some(v),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    let (mape_v, medape_v, excluded) = match percentage_errors(&preds.cases_pred, &preds.cases_obs) {
        Ok(pe) => {
            let ex = pe.excluded_zero_actuals;
            let mean = pe.errors.iter().sum::<f64>() / pe.errors.len() as f64;
            (Some(mean), Some(median(pe.errors)), ex)
        }
        Err(Error::Insufficient(_)) => (None, None, preds.cases_obs.len()),
        Err(e) => return Err(e),
    };

    let mut ci = BTreeMap::new();
    if let (Some(cfg), Some(_)) = (bootstrap, auc) {
        let labels = &preds.y_clf;
        ci.insert(
            "f1".to_string(),
            bootstrap_ci(
                n,
                |idx| {
                    require_both_classes(labels, idx)?;
                    preds.f1_on(idx)
                },
                cfg,
            )?,
        );
        ci.insert(
            "auc_roc".to_string(),
            bootstrap_ci(n, |idx| preds.auc_on(idx), cfg)?,
        );
    }
    Ok(MetricsReport {
        f1,
        auc_roc: auc,
        mape: mape_v,
        medape: medape_v,
        n_samples: n,
        ci,
        excluded_zero_actuals: excluded,
        config_hash: None,
    })
}

//! Rolling one-day-ahead forecasting.

use std::io::Write;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::classify;
use crate::nn::{ModelParams, Output};
use crate::preprocess::ScalerParams;

/// Anything that maps a normalized window to the two task outputs.
pub trait Predictor {
    fn window_len(&self) -> usize;
    fn predict_window(&self, window: &[f64]) -> Result<Output>;
}

impl Predictor for ModelParams {
    fn window_len(&self) -> usize {
        self.config.window_len
    }

    fn predict_window(&self, window: &[f64]) -> Result<Output> {
        self.predict(window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    TeacherForced,
    Autoregressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEntry {
    pub date: NaiveDate,
    /// Model output on the normalized scale.
    pub y_pred_norm: f64,
    /// Case-scale prediction, floored at zero.
    pub y_pred_cases: f64,
    pub y_obs_cases: Option<f64>,
    pub p_outbreak: f64,
    pub outbreak_flag: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub mode: ForecastMode,
    pub entries: Vec<ForecastEntry>,
}

impl ForecastResult {
    /// Writes `date,y_pred_cases,y_obs_cases,p_outbreak,outbreak_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "y_pred_cases", "y_obs_cases", "p_outbreak", "outbreak_flag"])?;
        for e in &self.entries {
            w.write_record([
                e.date.to_string(),
                e.y_pred_cases.to_string(),
                e.y_obs_cases.map(|v| v.to_string()).unwrap_or_default(),
                e.p_outbreak.to_string(),
                e.outbreak_flag.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Predicts `horizon` consecutive days starting at `first_date`.
///
/// `history` holds normalized values ending the day before `first_date`.
/// In teacher-forced mode `observed` supplies the normalized truth for each
/// forecast day, which replaces the prediction in the working window; in
/// autoregressive mode the prediction itself is appended.
pub fn rolling_forecast<P: Predictor + ?Sized>(
    model: &P,
    scaler: &ScalerParams,
    history: &[f64],
    first_date: NaiveDate,
    horizon: usize,
    mode: ForecastMode,
    observed: Option<&[f64]>,
) -> Result<ForecastResult> {
    let t = model.window_len();
    if history.len() < t {
        return Err(Error::Insufficient(format!(
            "forecast needs {t} days of history, got {}",
            history.len()
        )));
    }
    let observed = match (mode, observed) {
        (ForecastMode::TeacherForced, None) => {
            return Err(Error::Insufficient("teacher-forced forecast needs observations".into()))
        }
        (ForecastMode::TeacherForced, Some(o)) if o.len() < horizon => {
            return Err(Error::Insufficient(format!(
                "teacher-forced forecast of {horizon} days has only {} observations",
                o.len()
            )))
        }
        (_, o) => o,
    };

    let mut working: Vec<f64> = history[history.len() - t..].to_vec();
    working.reserve(horizon);
    let mut entries = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let window = &working[working.len() - t..];
        let out = model.predict_window(window)?;
        if !out.y_hat.is_finite() || !out.p_outbreak.is_finite() {
            return Err(Error::NonFinite(format!("forecast step {step}")));
        }
        let obs = observed.and_then(|o| o.get(step).copied());
        entries.push(ForecastEntry {
            date: first_date + Days::new(step as u64),
            y_pred_norm: out.y_hat,
            y_pred_cases: scaler.inverse_transform(out.y_hat).max(0.0),
            y_obs_cases: obs.map(|v| scaler.inverse_transform(v)),
            p_outbreak: out.p_outbreak,
            outbreak_flag: classify(out.p_outbreak),
        });
        let next = match (mode, obs) {
            (ForecastMode::TeacherForced, Some(v)) => v,
            _ => out.y_hat,
        };
        working.push(next);
    }
    Ok(ForecastResult { mode, entries })
}

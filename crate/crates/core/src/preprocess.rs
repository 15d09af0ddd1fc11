//! Min-max scaling, sliding windows and chronological splits.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::{OutbreakLabels, YearMonth};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub x_min: f64,
    pub x_max: f64,
    pub fitted_on: Split,
    /// Set when the fitted range is empty and every value maps to 0.
    pub degenerate: bool,
}

impl ScalerParams {
    pub fn transform(&self, x: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (x - self.x_min) / (self.x_max - self.x_min)
        }
    }

    pub fn inverse_transform(&self, z: f64) -> f64 {
        z * (self.x_max - self.x_min) + self.x_min
    }
}

/// Fits min/max on training values. Out-of-range inputs are not clipped later.
pub fn fit_scaler(values: &[f64]) -> Result<ScalerParams> {
    if values.is_empty() {
        return Err(Error::Insufficient("cannot fit a scaler on no values".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("scaler input ({v})")));
    }
    let x_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = x_max == x_min;
    if degenerate {
        log::warn!("degenerate scaler: all training values equal {x_min}");
    }
    Ok(ScalerParams {
        x_min,
        x_max,
        fitted_on: Split::Train,
        degenerate,
    })
}

pub fn transform(params: &ScalerParams, x: f64) -> f64 {
    params.transform(x)
}

pub fn inverse_transform(params: &ScalerParams, z: f64) -> f64 {
    params.inverse_transform(z)
}

/// A daily series starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

impl DailySeries {
    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start + Days::new(i as u64)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DailySeries {
        DailySeries {
            start: self.start,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index of `date`, if it falls inside the series.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.start).num_days();
        (off >= 0 && (off as usize) < self.values.len()).then_some(off as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `x[i]` is the value on `target_date − T + i`.
    pub x: Vec<f64>,
    pub y_reg: f64,
    pub y_clf: u8,
    pub target_date: NaiveDate,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub window_len: usize,
    pub samples: Vec<Sample>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Regression targets of the training samples, the only values a scaler may see.
    pub fn train_targets(&self) -> Vec<f64> {
        self.split(Split::Train).map(|s| s.y_reg).collect()
    }

    /// Applies the scaler to every window value and regression target.
    pub fn scaled(&self, scaler: &ScalerParams) -> WindowedDataset {
        WindowedDataset {
            window_len: self.window_len,
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    x: s.x.iter().map(|&v| scaler.transform(v)).collect(),
                    y_reg: scaler.transform(s.y_reg),
                    ..s.clone()
                })
                .collect(),
        }
    }

    /// Samples satisfying `keep`, cloned into a dataset of their own.
    pub fn subset(&self, keep: impl Fn(&Sample) -> bool) -> WindowedDataset {
        WindowedDataset {
            window_len: self.window_len,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Writes `target_date,y_reg,y_clf,split,x_0..x_{T-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["target_date", "y_reg", "y_clf", "split"].map(String::from).to_vec();
        header.extend((0..self.window_len).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![
                s.target_date.to_string(),
                s.y_reg.to_string(),
                s.y_clf.to_string(),
                s.split.map_or("none", Split::as_str).to_string(),
            ];
            row.extend(s.x.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds every (T-day window, next-day target) pair of the series.
///
/// Sample `j` covers `values[j..j+T]` and targets `values[j+T]`; its class
/// target is the outbreak label of the target day's month.
pub fn make_windows(
    daily: &DailySeries,
    labels: &OutbreakLabels,
    window_len: usize,
) -> Result<WindowedDataset> {
    let n = daily.values.len();
    if window_len == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    if n <= window_len {
        return Err(Error::Insufficient(format!(
            "series of {n} days is too short for a {window_len}-day window"
        )));
    }
    let samples = (0..n - window_len)
        .map(|j| {
            let target_date = daily.date_at(j + window_len);
            let month = YearMonth::of(target_date);
            let y_clf = labels
                .label(month)
                .ok_or_else(|| Error::Data(format!("no outbreak label for {month}")))?;
            Ok(Sample {
                x: daily.values[j..j + window_len].to_vec(),
                y_reg: daily.values[j + window_len],
                y_clf,
                target_date,
                split: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowedDataset {
        window_len,
        samples,
    })
}

/// Tags samples in `test_year` as test, and splits the earlier samples
/// chronologically into train (first ⌊(1−val_fraction)·n⌋) and val.
///
/// Samples after the test year stay untagged.
pub fn chronological_split(
    mut ds: WindowedDataset,
    test_year: i32,
    val_fraction: f64,
) -> Result<WindowedDataset> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} not in (0, 1)"
        )));
    }
    ds.samples.sort_by_key(|s| s.target_date);
    if !ds.samples.iter().any(|s| s.target_date.year() == test_year) {
        return Err(Error::Insufficient(format!("no samples in test year {test_year}")));
    }
    let n_pre = ds
        .samples
        .iter()
        .filter(|s| s.target_date.year() < test_year)
        .count();
    let n_train = ((1.0 - val_fraction) * n_pre as f64).floor() as usize;
    let mut seen = 0;
    for s in &mut ds.samples {
        let year = s.target_date.year();
        s.split = if year == test_year {
            Some(Split::Test)
        } else if year < test_year {
            seen += 1;
            Some(if seen <= n_train { Split::Train } else { Split::Val })
        } else {
            None
        };
    }
    Ok(ds)
}

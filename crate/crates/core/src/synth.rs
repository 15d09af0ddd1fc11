//! Synthetic seasonal case series with injected outbreaks.

use std::f64::consts::PI;
use std::io::Write;

use chrono::{Datelike, Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{CaseSeries, Disease, PopulationTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub start: NaiveDate,
    pub length_days: u32,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub disease: Disease,
    pub municipality: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Mean daily cases before seasonality and outbreaks.
    pub base_rate: f64,
    /// Relative seasonal swing, in [0, 1).
    pub amplitude: f64,
    pub period_days: f64,
    /// Coefficient of variation of the gamma rate multiplier; 0 gives a
    /// noiseless series of rounded rates.
    pub noise: f64,
    pub injections: Vec<Injection>,
    pub population: u64,
    /// Annual relative population growth.
    pub population_growth: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Seven years of daily data (2017–2023) with three one-month outbreaks a year.
    fn default() -> Self {
        let start = NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date");
        let end = NaiveDate::from_ymd_opt(2023, 12, 31).expect("valid date");
        // rotate the outbreak months so every season sees some
        let mut injections = Vec::new();
        for (k, year) in (2017..=2023).enumerate() {
            for month in [2 + (k % 3) as u32, 6 + (k % 2) as u32, 10 + (k % 3) as u32] {
                let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid date");
                let next = if month == 12 {
                    NaiveDate::from_ymd_opt(year + 1, 1, 1)
                } else {
                    NaiveDate::from_ymd_opt(year, month + 1, 1)
                }
                .expect("valid date");
                injections.push(Injection {
                    start: first,
                    length_days: (next - first).num_days() as u32,
                    multiplier: 3.0,
                });
            }
        }
        Self {
            disease: Disease::Dengue,
            municipality: "261160".into(),
            start,
            end,
            base_rate: 200.0,
            amplitude: 0.3,
            period_days: 365.0,
            noise: 0.05,
            injections,
            population: 1_650_000,
            population_growth: 0.004,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.end < self.start {
            return bad("synthetic end precedes start".into());
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return bad(format!("base rate {} must be positive", self.base_rate));
        }
        if !(0.0..1.0).contains(&self.amplitude) {
            return bad(format!("amplitude {} must be in [0, 1)", self.amplitude));
        }
        if self.period_days.is_nan() || self.period_days <= 0.0 {
            return bad("period must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        if self.population == 0 || self.population_growth.is_nan() || self.population_growth <= -1.0 {
            return bad("population must be positive and growth above -100%".into());
        }
        for inj in &self.injections {
            let last = inj.start + Days::new(inj.length_days.max(1) as u64 - 1);
            if inj.length_days == 0 || inj.start < self.start || last > self.end {
                return bad(format!("injection at {} lies outside the date range", inj.start));
            }
            if inj.multiplier.is_nan() || inj.multiplier <= 0.0 {
                return bad(format!("injection at {} needs a positive multiplier", inj.start));
            }
        }
        Ok(())
    }

    /// Expected daily rate before noise.
    pub fn rate(&self, date: NaiveDate) -> f64 {
        let day = (date - self.start).num_days() as f64;
        let mut rate = self.base_rate * (1.0 + self.amplitude * (2.0 * PI * day / self.period_days).sin());
        for inj in &self.injections {
            let off = (date - inj.start).num_days();
            if off >= 0 && off < inj.length_days as i64 {
                rate *= inj.multiplier;
            }
        }
        rate
    }
}

/// Draws the case series and a matching population table.
pub fn synth_generate(spec: &SynthSpec) -> Result<(CaseSeries, PopulationTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let days = (spec.end - spec.start).num_days() as usize + 1;
    let gamma = if spec.noise > 0.0 {
        let shape = 1.0 / (spec.noise * spec.noise);
        Some(Gamma::new(shape, 1.0 / shape).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut counts = Vec::with_capacity(days);
    for k in 0..days {
        let rate = spec.rate(spec.start + Days::new(k as u64));
        let count = match &gamma {
            None => rate.round(),
            Some(g) => {
                // gamma-mixed Poisson: negative binomial with mean `rate`
                let lambda = rate * g.sample(&mut rng);
                if lambda > 0.0 {
                    Poisson::new(lambda)
                        .map_err(|e| Error::Config(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    0.0
                }
            }
        };
        counts.push(count.max(0.0) as u64);
    }
    let series = CaseSeries::new(spec.disease, spec.municipality.clone(), spec.start, counts)?;
    let pops = (spec.start.year()..=spec.end.year())
        .enumerate()
        .map(|(k, year)| {
            let p = spec.population as f64 * (1.0 + spec.population_growth).powi(k as i32);
            (year, p.round().max(1.0) as u64)
        })
        .collect();
    Ok((series, PopulationTable::new(pops)?))
}

/// Writes cases as `date,disease,municipality,count`.
pub fn write_case_csv<W: Write>(series: &[&CaseSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "disease", "municipality", "count"])?;
    for s in series {
        for (date, count) in s.entries() {
            w.write_record([
                date.to_string(),
                s.disease.to_string(),
                s.municipality.clone(),
                count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `year,population`.
pub fn write_population_csv<W: Write>(table: &PopulationTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "population"])?;
    for (y, p) in table.entries() {
        w.write_record([y.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

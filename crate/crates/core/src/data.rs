//! Case and population ingestion, monthly incidence, and outbreak labelling.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate denominator: incidence is expressed per this many inhabitants.
pub const PER_INHABITANTS: f64 = 100_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disease {
    Dengue,
    Chikungunya,
    Zika,
}

impl Disease {
    pub const ALL: [Disease; 3] = [Disease::Dengue, Disease::Chikungunya, Disease::Zika];

    /// Default outbreak percentile: dengue has the higher baseline and gets the stricter cutoff.
    pub fn default_percentile(self) -> f64 {
        match self {
            Disease::Dengue => 0.75,
            Disease::Chikungunya | Disease::Zika => 0.70,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Disease::Dengue => "dengue",
            Disease::Chikungunya => "chikungunya",
            Disease::Zika => "zika",
        }
    }
}

impl fmt::Display for Disease {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Disease {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dengue" => Ok(Disease::Dengue),
            "chikungunya" => Ok(Disease::Chikungunya),
            "zika" => Ok(Disease::Zika),
            other => Err(Error::Data(format!("unknown disease {other:?}"))),
        }
    }
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    /// 1..=12
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Data(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Months elapsed since year 0, used for index arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::Data(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| Error::Data(format!("bad year in {s:?}")))?;
        let month = m
            .parse()
            .map_err(|_| Error::Data(format!("bad month in {s:?}")))?;
        YearMonth::new(year, month)
    }
}

/// Gap-free daily confirmed case counts for one disease in one municipality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSeries {
    pub disease: Disease,
    pub municipality: String,
    start: NaiveDate,
    counts: Vec<u64>,
}

impl CaseSeries {
    pub fn new(
        disease: Disease,
        municipality: impl Into<String>,
        start: NaiveDate,
        counts: Vec<u64>,
    ) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Data("case series is empty".into()));
        }
        Ok(Self {
            disease,
            municipality: municipality.into(),
            start,
            counts,
        })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Days::new(self.counts.len() as u64 - 1)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start + Days::new(i as u64)
    }

    pub fn entries(&self) -> impl Iterator<Item = (NaiveDate, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.date_at(i), c))
    }

    /// Counts as reals, the model's input resolution.
    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Totals per calendar month, in order.
    pub fn monthly_totals(&self) -> Vec<(YearMonth, u64)> {
        let mut out: Vec<(YearMonth, u64)> = Vec::new();
        for (date, count) in self.entries() {
            let ym = YearMonth::of(date);
            match out.last_mut() {
                Some((last, total)) if *last == ym => *total += count,
                _ => out.push((ym, count)),
            }
        }
        out
    }
}

/// Summary of what ingestion did to the raw rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_matched: usize,
    pub duplicate_dates: usize,
    pub zero_filled_days: usize,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
    pub total_cases: u64,
}

const CASE_COLUMNS: [&str; 4] = ["date", "disease", "municipality", "count"];

/// Reads a `date,disease,municipality,count` CSV and keeps the rows for one
/// disease/municipality pair. Missing days become zero-count days and
/// duplicate dates are summed.
pub fn parse_case_csv<R: Read>(
    stream: R,
    disease: Disease,
    municipality: &str,
) -> Result<(CaseSeries, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(stream);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Data("case CSV is empty".into()));
    }
    let mut col = [0usize; 4];
    for (k, name) in CASE_COLUMNS.iter().enumerate() {
        col[k] = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing column {name:?} in header"),
            })?;
    }

    let mut by_date: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    let mut report = IngestReport::default();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: String| Error::Parse { line, msg };
        report.rows_read += 1;
        let field = |k: usize| record.get(col[k]).ok_or_else(|| bad("missing field".into()));

        let date = NaiveDate::parse_from_str(field(0)?, "%Y-%m-%d")
            .map_err(|e| bad(format!("bad date {:?}: {e}", field(0).unwrap_or(""))))?;
        let row_disease: Disease = field(1)?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let row_muni = field(2)?;
        let raw = field(3)?;
        let count: i64 = raw
            .parse()
            .map_err(|_| bad(format!("count {raw:?} is not an integer")))?;
        if count < 0 {
            return Err(bad(format!("negative count {count}")));
        }
        if row_disease != disease || row_muni != municipality {
            continue;
        }
        report.rows_matched += 1;
        match by_date.entry(date) {
            Entry::Occupied(mut e) => {
                report.duplicate_dates += 1;
                *e.get_mut() += count as u64;
            }
            Entry::Vacant(e) => {
                e.insert(count as u64);
            }
        }
    }
    if report.rows_read == 0 {
        return Err(Error::Data("case CSV has no data rows".into()));
    }
    let (&first, _) = by_date.iter().next().ok_or_else(|| {
        Error::Data(format!("no rows for {disease} in municipality {municipality:?}"))
    })?;
    let (&last, _) = by_date.iter().next_back().expect("non-empty");
    let n_days = (last - first).num_days() as usize + 1;
    let mut counts = vec![0u64; n_days];
    for (date, count) in &by_date {
        counts[(*date - first).num_days() as usize] = *count;
    }
    report.zero_filled_days = n_days - by_date.len();
    report.first_date = Some(first);
    report.last_date = Some(last);
    report.total_cases = counts.iter().sum();
    let series = CaseSeries::new(disease, municipality, first, counts)?;
    Ok((series, report))
}

/// Annual population estimates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationTable {
    entries: Vec<(i32, u64)>,
}

impl PopulationTable {
    pub fn new(entries: Vec<(i32, u64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Data("population table is empty".into()));
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Data(format!(
                    "population years not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some((year, _)) = entries.iter().find(|(_, p)| *p == 0) {
            return Err(Error::Data(format!("population for {year} must be positive")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(i32, u64)] {
        &self.entries
    }

    pub fn first_year(&self) -> i32 {
        self.entries[0].0
    }

    pub fn last_year(&self) -> i32 {
        self.entries[self.entries.len() - 1].0
    }
}

/// Reads a `year,population` CSV.
pub fn parse_population_csv<R: Read>(stream: R) -> Result<PopulationTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(stream);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing column {name:?} in header"),
            })
    };
    let (yc, pc) = (find("year")?, find("population")?);
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: String| Error::Parse { line, msg };
        let year: i32 = record
            .get(yc)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad year".into()))?;
        let pop: u64 = record
            .get(pc)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad population".into()))?;
        if pop == 0 {
            return Err(bad("population must be positive".into()));
        }
        entries.push((year, pop));
    }
    PopulationTable::new(entries)
}

/// Population for a month, with each annual estimate anchored at January.
///
/// Between two tabulated years the value moves linearly month by month; the
/// final tabulated year is held constant.
pub fn interpolate_population(table: &PopulationTable, month: YearMonth) -> Result<f64> {
    let entries = table.entries();
    let y = month.year;
    if y < table.first_year() || y > table.last_year() {
        return Err(Error::Data(format!(
            "month {month} outside population table ({}..={})",
            table.first_year(),
            table.last_year()
        )));
    }
    // index of the last anchor at or before y
    let k = entries.partition_point(|&(year, _)| year <= y) - 1;
    let (y0, p0) = entries[k];
    if k + 1 == entries.len() {
        return Ok(p0 as f64);
    }
    let (y1, p1) = entries[k + 1];
    let elapsed = ((y - y0) * 12) as f64 + (month.month as f64 - 1.0);
    let span = ((y1 - y0) * 12) as f64;
    Ok(p0 as f64 + (elapsed / span) * (p1 as f64 - p0 as f64))
}

/// Monthly incidence per 100,000 inhabitants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceSeries {
    pub disease: Disease,
    pub entries: Vec<(YearMonth, f64)>,
}

impl IncidenceSeries {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|&(_, v)| v).collect()
    }

    /// Restricts to months whose year satisfies `keep`.
    pub fn filter_years(&self, keep: impl Fn(i32) -> bool) -> IncidenceSeries {
        IncidenceSeries {
            disease: self.disease,
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|(m, _)| keep(m.year))
                .collect(),
        }
    }
}

pub fn monthly_incidence(cases: &CaseSeries, pop: &PopulationTable) -> Result<IncidenceSeries> {
    let entries = cases
        .monthly_totals()
        .into_iter()
        .map(|(ym, total)| {
            let p = interpolate_population(pop, ym)?;
            Ok((ym, total as f64 / p * PER_INHABITANTS))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IncidenceSeries {
        disease: cases.disease,
        entries,
    })
}

/// Empirical percentile with linear interpolation between order statistics
/// at zero-based rank `p·(n−1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Insufficient("percentile of an empty series".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("percentile {p} not in (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn outbreak_threshold(series: &IncidenceSeries, p: f64) -> Result<f64> {
    percentile(&series.values(), p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutbreakLabels {
    pub threshold: f64,
    pub percentile: f64,
    pub entries: Vec<(YearMonth, u8)>,
}

impl OutbreakLabels {
    pub fn label(&self, month: YearMonth) -> Option<u8> {
        let first = self.entries.first()?.0;
        let idx = month.ordinal() - first.ordinal();
        if idx < 0 {
            return None;
        }
        self.entries
            .get(idx as usize)
            .filter(|(m, _)| *m == month)
            .map(|&(_, l)| l)
    }
}

/// Labels a month 1 when its incidence strictly exceeds `threshold`.
pub fn label_outbreaks(series: &IncidenceSeries, threshold: f64, percentile: f64) -> OutbreakLabels {
    OutbreakLabels {
        threshold,
        percentile,
        entries: series
            .entries
            .iter()
            .map(|&(m, v)| (m, u8::from(v > threshold)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn ym(y: i32, m: u32) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    const HDR: &str = "date,disease,municipality,count\n";

    #[test]
    fn gap_fill_inserts_zero_days() {
        let csv = format!(
            "{HDR}2020-01-01,dengue,recife,4\n2020-01-03,dengue,recife,1\n2020-01-05,dengue,recife,2\n"
        );
        let (s, rep) = parse_case_csv(csv.as_bytes(), Disease::Dengue, "recife").unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.counts(), &[4, 0, 1, 0, 2]);
        assert_eq!(rep.zero_filled_days, 2);
        assert_eq!(s.end(), d("2020-01-05"));
    }

    #[test]
    fn duplicate_dates_are_summed() {
        let csv = format!("{HDR}2020-01-01,dengue,recife,2\n2020-01-01,dengue,recife,3\n");
        let (s, rep) = parse_case_csv(csv.as_bytes(), Disease::Dengue, "recife").unwrap();
        assert_eq!(s.counts(), &[5]);
        assert_eq!(rep.duplicate_dates, 1);
    }

    #[test]
    fn negative_count_names_line() {
        let csv = format!("{HDR}2020-01-01,dengue,recife,2\n2020-01-02,dengue,recife,-1\n");
        match parse_case_csv(csv.as_bytes(), Disease::Dengue, "recife") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_date_and_empty_file() {
        let csv = format!("{HDR}2020-13-01,dengue,recife,2\n");
        assert!(matches!(
            parse_case_csv(csv.as_bytes(), Disease::Dengue, "recife"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_case_csv("".as_bytes(), Disease::Dengue, "recife").is_err());
        assert!(parse_case_csv(HDR.as_bytes(), Disease::Dengue, "recife").is_err());
    }

    #[test]
    fn filters_disease_and_municipality() {
        let csv = format!(
            "{HDR}2020-01-01,zika,recife,9\n2020-01-01,dengue,olinda,7\n2020-01-02,dengue,recife,1\n"
        );
        let (s, _) = parse_case_csv(csv.as_bytes(), Disease::Dengue, "recife").unwrap();
        assert_eq!(s.start(), d("2020-01-02"));
        assert_eq!(s.counts(), &[1]);
    }

    fn pop() -> PopulationTable {
        PopulationTable::new(vec![(2020, 1_000_000), (2021, 1_012_000)]).unwrap()
    }

    #[test]
    fn population_interpolation() {
        let t = pop();
        assert_eq!(interpolate_population(&t, ym(2020, 7)).unwrap(), 1_006_000.0);
        assert_eq!(interpolate_population(&t, ym(2020, 1)).unwrap(), 1_000_000.0);
        // P + (3/12)·ΔP
        let oracle = 1_000_000.0 + (3.0 / 12.0) * 12_000.0;
        assert_eq!(interpolate_population(&t, ym(2020, 4)).unwrap(), oracle);
        assert_eq!(interpolate_population(&t, ym(2021, 9)).unwrap(), 1_012_000.0);
        assert!(interpolate_population(&t, ym(2019, 12)).is_err());
        assert!(interpolate_population(&t, ym(2022, 1)).is_err());
    }

    #[test]
    fn population_gap_year_interpolates_across() {
        let t = PopulationTable::new(vec![(2018, 100), (2020, 124)]).unwrap();
        assert_eq!(interpolate_population(&t, ym(2019, 1)).unwrap(), 112.0);
    }

    #[test]
    fn population_table_validation() {
        assert!(PopulationTable::new(vec![(2020, 1), (2020, 2)]).is_err());
        assert!(PopulationTable::new(vec![(2020, 0)]).is_err());
        let csv = "year,population\n2020,10\n2021,0\n";
        assert!(matches!(
            parse_population_csv(csv.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn incidence_arithmetic() {
        let t = PopulationTable::new(vec![(2020, 1_000_000)]).unwrap();
        let mut counts = vec![0u64; 31];
        counts[3] = 50;
        let s = CaseSeries::new(Disease::Dengue, "x", d("2020-01-01"), counts).unwrap();
        let inc = monthly_incidence(&s, &t).unwrap();
        assert_eq!(inc.entries, vec![(ym(2020, 1), 5.0)]);

        let zero = CaseSeries::new(Disease::Zika, "x", d("2020-01-01"), vec![0; 3]).unwrap();
        assert_eq!(monthly_incidence(&zero, &t).unwrap().entries[0].1, 0.0);

        // 37 cases at the July population of the 2020→2021 ramp
        let mut counts = vec![0u64; 31];
        counts[0] = 37;
        let s = CaseSeries::new(Disease::Dengue, "x", d("2020-07-01"), counts).unwrap();
        let v = monthly_incidence(&s, &pop()).unwrap().entries[0].1;
        assert!((v - 37.0 / 1_006_000.0 * 1e5).abs() < 1e-12);
        assert!((v - 3.677_932_4).abs() < 1e-6);
    }

    #[test]
    fn threshold_examples() {
        let vals: Vec<f64> = (1..=12).map(f64::from).collect();
        assert_eq!(percentile(&vals, 0.75).unwrap(), 9.25);
        assert_eq!(percentile(&[3.5; 7], 0.3).unwrap(), 3.5);
        assert_eq!(percentile(&[2.0], 0.75).unwrap(), 2.0);
        assert!(percentile(&[], 0.75).is_err());
        assert!(percentile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn strict_exceedance_labels() {
        let s = IncidenceSeries {
            disease: Disease::Dengue,
            entries: vec![(ym(2020, 1), 10.0), (ym(2020, 2), 9.25), (ym(2020, 3), 0.0)],
        };
        let l = label_outbreaks(&s, 9.25, 0.75);
        assert_eq!(l.entries.iter().map(|e| e.1).collect::<Vec<_>>(), vec![1, 0, 0]);
        assert_eq!(l.label(ym(2020, 2)), Some(0));
        assert_eq!(l.label(ym(2020, 4)), None);
        let zeros = IncidenceSeries {
            disease: Disease::Zika,
            entries: vec![(ym(2020, 1), 0.0), (ym(2020, 2), 0.0)],
        };
        assert!(label_outbreaks(&zeros, 0.0, 0.7).entries.iter().all(|e| e.1 == 0));
    }

    #[test]
    fn year_month_roundtrip() {
        let m: YearMonth = "2023-12".parse().unwrap();
        assert_eq!(m.succ(), ym(2024, 1));
        assert_eq!(m.to_string(), "2023-12");
        assert!("2023-13".parse::<YearMonth>().is_err());
    }

    fn series_from(values: &[f64]) -> IncidenceSeries {
        let mut m = ym(2000, 1);
        let mut entries = Vec::new();
        for &v in values {
            entries.push((m, v));
            m = m.succ();
        }
        IncidenceSeries {
            disease: Disease::Dengue,
            entries,
        }
    }

    proptest! {
        #[test]
        fn ingest_is_gap_free(days in proptest::collection::btree_map(0u64..200, 0u32..50, 1..40)) {
            let base = d("2019-06-01");
            let mut csv = HDR.to_string();
            for (off, c) in &days {
                csv.push_str(&format!("{},dengue,m,{c}\n", base + Days::new(*off)));
            }
            let (s, _) = parse_case_csv(csv.as_bytes(), Disease::Dengue, "m").unwrap();
            let dates: Vec<_> = s.entries().map(|e| e.0).collect();
            for w in dates.windows(2) {
                prop_assert_eq!((w[1] - w[0]).num_days(), 1);
            }
            prop_assert_eq!(s.counts().iter().sum::<u64>(), days.values().map(|&c| c as u64).sum::<u64>());
        }

        #[test]
        fn incidence_scales_linearly(counts in proptest::collection::vec(0u64..100, 30..120), k in 1u64..20) {
            let t = PopulationTable::new(vec![(2020, 500_000), (2021, 520_000)]).unwrap();
            let a = CaseSeries::new(Disease::Dengue, "m", d("2020-02-10"), counts.clone()).unwrap();
            let b = CaseSeries::new(Disease::Dengue, "m", d("2020-02-10"), counts.iter().map(|c| c * k).collect()).unwrap();
            let ia = monthly_incidence(&a, &t).unwrap();
            let ib = monthly_incidence(&b, &t).unwrap();
            for (x, y) in ia.entries.iter().zip(&ib.entries) {
                prop_assert!((y.1 - x.1 * k as f64).abs() <= 1e-12 * y.1.abs().max(1.0));
            }
        }

        #[test]
        fn threshold_within_range(values in proptest::collection::vec(0.0f64..1e4, 1..80), p in 0.01f64..0.99) {
            let t = outbreak_threshold(&series_from(&values), p).unwrap();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= t && t <= hi);
        }

        #[test]
        fn label_fraction_bounded(values in proptest::collection::hash_set(0u32..100_000, 1..80)) {
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let s = series_from(&values);
            let t = outbreak_threshold(&s, 0.75).unwrap();
            let ones = label_outbreaks(&s, t, 0.75).entries.iter().filter(|e| e.1 == 1).count();
            // brute force: count strictly-above values
            let brute = values.iter().filter(|&&v| v > t).count();
            prop_assert_eq!(ones, brute);
            let n = values.len();
            // distinct values: everything above rank 0.75(n-1) lies at index ≥ ceil(rank)
            let max_ones = n - 1 - (0.75 * (n - 1) as f64).floor() as usize;
            prop_assert!(ones <= max_ones);
            prop_assert!(ones as f64 <= 0.25 * n as f64 + 1.0);
        }
    }
}

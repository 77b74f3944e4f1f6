//! Price and consumption ingestion.
//!
//! Price files are two-column CSV with header `timestamp,price`, naive local
//! market time in ISO-8601 (`2018-06-15T00:00:00`), one row per hour.
//! Consumption files have the single header `consumption_kwh`.

use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Discretization, Instance, StorageSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceUnit {
    #[default]
    EurPerMwh,
    EurPerKwh,
    EurPer100Kwh,
}

impl PriceUnit {
    /// Factor converting a source value into €/kWh.
    pub fn to_eur_per_kwh(self) -> f64 {
        match self {
            PriceUnit::EurPerMwh => 1e-3,
            PriceUnit::EurPerKwh => 1.0,
            PriceUnit::EurPer100Kwh => 1e-2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PriceUnit::EurPerMwh => "eur_per_mwh",
            PriceUnit::EurPerKwh => "eur_per_kwh",
            PriceUnit::EurPer100Kwh => "eur_per_100kwh",
        }
    }
}

impl fmt::Display for PriceUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriceUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eur_per_mwh" => Ok(PriceUnit::EurPerMwh),
            "eur_per_kwh" => Ok(PriceUnit::EurPerKwh),
            "eur_per_100kwh" => Ok(PriceUnit::EurPer100Kwh),
            other => Err(Error::invalid(format!(
                "unknown price unit `{other}` (expected eur_per_mwh, eur_per_kwh or eur_per_100kwh)"
            ))),
        }
    }
}

/// Hourly prices normalized to €/kWh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSeries {
    timestamps: Vec<NaiveDateTime>,
    prices: Vec<f64>,
    source_unit: PriceUnit,
}

impl PriceSeries {
    /// Consecutive hourly prices (already in €/kWh) starting at `start`.
    pub fn hourly(start: NaiveDateTime, prices: Vec<f64>, source_unit: PriceUnit) -> Self {
        let timestamps = (0..prices.len())
            .map(|i| start + Duration::hours(i as i64))
            .collect();
        PriceSeries {
            timestamps,
            prices,
            source_unit,
        }
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn source_unit(&self) -> PriceUnit {
        self.source_unit
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// First and last timestamp.
    pub fn span(&self) -> Option<(NaiveDateTime, NaiveDateTime)> {
        Some((*self.timestamps.first()?, *self.timestamps.last()?))
    }

    /// Index range of `range` inside the series.
    pub fn locate(&self, range: &TimeRange) -> Result<std::ops::Range<usize>> {
        let (first, last) = self
            .span()
            .ok_or_else(|| Error::Data("price series is empty".into()))?;
        let end = range.start + Duration::hours(range.hours as i64 - 1);
        if range.hours == 0 || range.start < first || end > last {
            return Err(Error::Data(format!(
                "range {} .. {} lies outside the data ({first} .. {last})",
                range.start, end
            )));
        }
        let offset = (range.start - first).num_hours() as usize;
        Ok(offset..offset + range.hours)
    }
}

/// `hours` consecutive hourly steps beginning at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeRange {
    pub start: NaiveDateTime,
    pub hours: usize,
}

impl TimeRange {
    /// Whole days `from ..= to`.
    pub fn days(from: NaiveDate, to: NaiveDate) -> Result<Self> {
        if to < from {
            return Err(Error::invalid(format!(
                "date range ends before it starts ({from} .. {to})"
            )));
        }
        let days = (to - from).num_days() as usize + 1;
        Ok(TimeRange {
            start: from.and_time(NaiveTime::MIN),
            hours: days * 24,
        })
    }

    pub fn hours(start: NaiveDateTime, hours: usize) -> Self {
        TimeRange { start, hours }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Reads a price CSV, normalizing to €/kWh.
pub fn parse_price_csv(path: &Path, unit: PriceUnit) -> Result<PriceSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let series = read_price_csv(file, unit, &path.display().to_string())?;
    let (first, last) = series.span().expect("non-empty after parsing");
    log::info!(
        "{}: {} hourly prices, {first} .. {last}",
        path.display(),
        series.len()
    );
    Ok(series)
}

/// Like [`parse_price_csv`] over any reader; `origin` labels error messages.
pub fn read_price_csv<R: Read>(reader: R, unit: PriceUnit, origin: &str) -> Result<PriceSeries> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols != ["timestamp", "price"] {
        return Err(parse_err(
            1,
            format!(
                "expected header `timestamp,price`, found `{}`",
                cols.join(",")
            ),
        ));
    }
    let factor = unit.to_eur_per_kwh();
    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut prices = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(line, format!("bad timestamp `{}`", &record[0])))?;
        let price: f64 = record[1]
            .trim()
            .parse()
            .ok()
            .filter(|p: &f64| p.is_finite())
            .ok_or_else(|| parse_err(line, format!("bad price `{}`", &record[1])))?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(parse_err(
                    line,
                    format!("timestamp {ts} does not follow {prev}"),
                ));
            }
            if ts - prev != Duration::hours(1) {
                return Err(parse_err(
                    line,
                    format!("gap in hourly series: {prev} is followed by {ts}"),
                ));
            }
        }
        timestamps.push(ts);
        prices.push(price * factor);
    }
    if prices.is_empty() {
        return Err(Error::Data(format!("{origin}: no price rows")));
    }
    Ok(PriceSeries {
        timestamps,
        prices,
        source_unit: unit,
    })
}

/// Writes the normalized series (€/kWh) in the same two-column layout.
pub fn write_price_csv(series: &PriceSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "price"])?;
    for (ts, p) in series.timestamps.iter().zip(&series.prices) {
        w.write_record([ts.format("%Y-%m-%dT%H:%M:%S").to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_consumption_csv(path: &Path) -> Result<Vec<f64>> {
    let origin = path.display().to_string();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.clone(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["consumption_kwh"] {
        return Err(parse_err(1, "expected header `consumption_kwh`".into()));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let z: f64 = record[0]
            .trim()
            .parse()
            .ok()
            .filter(|z: &f64| z.is_finite() && *z >= 0.0)
            .ok_or_else(|| parse_err(line, format!("bad consumption `{}`", &record[0])))?;
        out.push(z);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{origin}: no consumption rows")));
    }
    Ok(out)
}

/// Consumption profile for an instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Consumption {
    Constant(f64),
    Profile(Vec<f64>),
    Csv(PathBuf),
}

impl Consumption {
    pub fn resolve(&self, hours: usize) -> Result<Vec<f64>> {
        let profile = match self {
            Consumption::Constant(z) => return Ok(vec![*z; hours]),
            Consumption::Profile(p) => p.clone(),
            Consumption::Csv(path) => parse_consumption_csv(path)?,
        };
        if profile.len() != hours {
            return Err(Error::Data(format!(
                "consumption profile has {} rows, range has {hours} hours",
                profile.len()
            )));
        }
        Ok(profile)
    }

    /// Largest per-step value for a given horizon.
    pub fn peak(&self, hours: usize) -> Result<f64> {
        Ok(self.resolve(hours)?.into_iter().fold(0.0, f64::max))
    }
}

/// Slices `range` out of `series` and validates the resulting instance.
#[allow(clippy::too_many_arguments)]
pub fn make_instance(
    series: &PriceSeries,
    range: &TimeRange,
    consumption: &Consumption,
    spec: StorageSpec,
    v_init: f64,
    v_final: f64,
    disc: Discretization,
) -> Result<Instance> {
    let idx = series.locate(range)?;
    let prices = series.prices[idx].to_vec();
    let demand = consumption.resolve(range.hours)?;
    Instance::new(spec, prices, demand, v_init, v_final, disc)
}

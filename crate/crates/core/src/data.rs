//! Ingestion and feature engineering for hourly wind-farm records.
//!
//! The ingestion format is comma-separated text with header
//! `TIMESTAMP,ZONEID,TARGETVAR,U10,V10,U100,V100`, timestamps written
//! `YYYYMMDD HH:MM`, one row per zone-hour. Targets are normalized
//! power in [0, 1] and may be missing (empty field); wind components
//! are zonal/meridional forecasts in m/s at 10 m and 100 m.
//!
//! From parsed records this module builds per-horizon training samples
//! whose features are the three most recent power observations at the
//! issue time plus wind speed and angle at both heights at the target
//! time, computes correlation diagnostics, splits samples
//! chronologically into two training sets and a validation set, and
//! standardizes features with statistics of the first training set.
//! Missing data is skipped and counted, never imputed.

use std::collections::BTreeMap;
use std::io;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected CSV header of the ingestion format.
pub const INGESTION_HEADER: [&str; 7] =
    ["TIMESTAMP", "ZONEID", "TARGETVAR", "U10", "V10", "U100", "V100"];
/// Timestamp format of the ingestion format.
pub const TIMESTAMP_FORMAT: &str = "%Y%m%d %H:%M";
/// Number of trailing power observations used as lag features.
pub const DEFAULT_LAG_COUNT: usize = 3;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// One zone-hour of input data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub timestamp: NaiveDateTime,
    pub zone: u32,
    /// Normalized power in [0, 1]; `None` when the field is empty.
    pub target: Option<f64>,
    pub u10: f64,
    pub v10: f64,
    pub u100: f64,
    pub v100: f64,
}

/// Wind vector in polar form: speed in m/s and angle in [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindVector {
    pub speed: f64,
    pub angle: f64,
}

/// Transform zonal/meridional components to magnitude and angle.
///
/// The angle follows the three-branch arctangent convention mapping
/// into [0, 2π); the zero vector maps to speed 0, angle 0.
pub fn wind_transform(u: f64, v: f64) -> WindVector {
    // Normalize -0.0 so the branch on the sign of u is well defined.
    let u = if u == 0.0 { 0.0 } else { u };
    let v = if v == 0.0 { 0.0 } else { v };
    let speed = u.hypot(v);
    if speed == 0.0 {
        return WindVector { speed: 0.0, angle: 0.0 };
    }
    let mut angle = if u >= 0.0 && v >= 0.0 {
        (v / u).atan()
    } else if u >= 0.0 {
        TWO_PI + (v / u).atan()
    } else {
        std::f64::consts::PI + (v / u).atan()
    };
    if angle >= TWO_PI {
        angle -= TWO_PI;
    }
    WindVector { speed, angle }
}

/// One training or evaluation record: a feature vector, the observed
/// normalized power at the target time, and the issue time / horizon
/// that generated it.
///
/// Feature layout with the default lag count of 3:
/// `[y(t0), y(t0-1), y(t0-2), V10(t), θ10(t), V100(t), θ100(t)]`
/// where `t0` is the issue time and `t = t0 + horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
    pub issue_time: NaiveDateTime,
    pub horizon: u32,
}

/// Samples produced for one horizon plus the number of candidate issue
/// times that had to be skipped (missing lags, targets, or weather).
#[derive(Debug, Clone)]
pub struct BuiltSamples {
    pub samples: Vec<Sample>,
    pub skipped: usize,
}

impl BuiltSamples {
    /// Total candidate issue times examined.
    pub fn candidates(&self) -> usize {
        self.samples.len() + self.skipped
    }
}

/// Parse the ingestion format, validating the header, field ranges and
/// per-zone timestamp ordering. Missing targets are flagged, not dropped.
pub fn parse_records<R: io::Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    {
        let header = csv_reader
            .headers()
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        let got: Vec<&str> = header.iter().collect();
        if got != INGESTION_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header {:?}, got {:?}",
                    INGESTION_HEADER.join(","),
                    got.join(",")
                ),
            });
        }
    }

    let mut records = Vec::new();
    let mut last_per_zone: BTreeMap<u32, NaiveDateTime> = BTreeMap::new();
    for row in csv_reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };

        if row.len() != INGESTION_HEADER.len() {
            return Err(parse_err(format!(
                "expected {} fields, got {}",
                INGESTION_HEADER.len(),
                row.len()
            )));
        }
        let timestamp = NaiveDateTime::parse_from_str(&row[0], TIMESTAMP_FORMAT)
            .map_err(|e| parse_err(format!("bad timestamp {:?}: {e}", &row[0])))?;
        let zone: u32 = row[1]
            .parse()
            .map_err(|e| parse_err(format!("bad zone {:?}: {e}", &row[1])))?;
        let target = if row[2].is_empty() {
            None
        } else {
            let value: f64 = row[2]
                .parse()
                .map_err(|e| parse_err(format!("bad target {:?}: {e}", &row[2])))?;
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(parse_err(format!("target {value} outside [0, 1]")));
            }
            Some(value)
        };
        let mut wind = [0.0; 4];
        for (slot, idx) in wind.iter_mut().zip(3..7) {
            let value: f64 = row[idx]
                .parse()
                .map_err(|e| parse_err(format!("bad {} {:?}: {e}", INGESTION_HEADER[idx], &row[idx])))?;
            if !value.is_finite() {
                return Err(parse_err(format!(
                    "{} must be finite, got {value}",
                    INGESTION_HEADER[idx]
                )));
            }
            *slot = value;
        }

        if let Some(prev) = last_per_zone.get(&zone) {
            if timestamp <= *prev {
                return Err(Error::Ordering(format!(
                    "zone {zone} timestamp {timestamp} at line {line} does not increase past {prev}"
                )));
            }
        }
        last_per_zone.insert(zone, timestamp);

        records.push(RawRecord {
            timestamp,
            zone,
            target,
            u10: wind[0],
            v10: wind[1],
            u100: wind[2],
            v100: wind[3],
        });
    }
    Ok(records)
}

/// Records of a single zone, in input order.
pub fn zone_records(records: &[RawRecord], zone: u32) -> Vec<RawRecord> {
    records.iter().filter(|r| r.zone == zone).cloned().collect()
}

/// Build lag-feature samples for one horizon from the records of a
/// single zone.
///
/// Every record is a candidate issue time `t0`; a sample is emitted
/// when the `lag_count` trailing hourly targets ending at `t0` are all
/// present and the record at `t0 + horizon` exists with an observed
/// target. Candidates failing either condition are skipped and counted.
pub fn build_samples(records: &[RawRecord], horizon: u32, lag_count: usize) -> Result<BuiltSamples> {
    if !(1..=24).contains(&horizon) {
        return Err(Error::Domain(format!(
            "horizon must lie in 1..=24, got {horizon}"
        )));
    }
    if lag_count == 0 {
        return Err(Error::Domain("lag count must be at least 1".into()));
    }
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.zone != first.zone) {
            return Err(Error::Data(
                "build_samples expects records of a single zone".into(),
            ));
        }
    }

    let by_time: BTreeMap<NaiveDateTime, &RawRecord> =
        records.iter().map(|r| (r.timestamp, r)).collect();

    let mut samples = Vec::new();
    let mut skipped = 0usize;
    'candidates: for record in records {
        let t0 = record.timestamp;
        let mut lags = Vec::with_capacity(lag_count);
        for back in 0..lag_count {
            let t = t0 - Duration::hours(back as i64);
            match by_time.get(&t).and_then(|r| r.target) {
                Some(y) => lags.push(y),
                None => {
                    skipped += 1;
                    continue 'candidates;
                }
            }
        }
        let target_time = t0 + Duration::hours(horizon as i64);
        let Some(target_record) = by_time.get(&target_time) else {
            skipped += 1;
            continue;
        };
        let Some(target) = target_record.target else {
            skipped += 1;
            continue;
        };

        let w10 = wind_transform(target_record.u10, target_record.v10);
        let w100 = wind_transform(target_record.u100, target_record.v100);
        let mut features = lags;
        features.extend_from_slice(&[w10.speed, w10.angle, w100.speed, w100.angle]);
        samples.push(Sample {
            features,
            target,
            issue_time: t0,
            horizon,
        });
    }
    Ok(BuiltSamples { samples, skipped })
}

/// Sample autocorrelation of a series up to `max_lag`; the coefficient
/// at lag 0 is 1 by definition.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if series.len() <= max_lag {
        return Err(Error::Data(format!(
            "series of length {} too short for max lag {max_lag}",
            series.len()
        )));
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let denom: f64 = series.iter().map(|y| (y - mean) * (y - mean)).sum();
    if denom <= 0.0 {
        return Err(Error::Data(
            "autocorrelation undefined for a constant series".into(),
        ));
    }
    let mut coefficients = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let num: f64 = (0..n - lag)
            .map(|t| (series[t] - mean) * (series[t + lag] - mean))
            .sum();
        coefficients.push(num / denom);
    }
    Ok(coefficients)
}

/// Pearson correlation between two equal-length series.
pub fn cross_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data(format!(
            "cross-correlation needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return Err(Error::Data(
            "cross-correlation undefined for a constant series".into(),
        ));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Chronological three-way partition of samples by issue time:
/// member-model fitting, combination-weight fitting, and validation.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train_a: Vec<Sample>,
    pub train_b: Vec<Sample>,
    pub validation: Vec<Sample>,
}

/// Partition samples by issue time. Training set A takes issue times up
/// to and including `train_a_end`, training set B up to and including
/// `train_b_end`, the validation set everything later.
pub fn split_dataset(
    samples: Vec<Sample>,
    train_a_end: NaiveDateTime,
    train_b_end: NaiveDateTime,
) -> Result<DatasetSplit> {
    if train_a_end >= train_b_end {
        return Err(Error::Config(format!(
            "split boundaries must be ordered, got {train_a_end} >= {train_b_end}"
        )));
    }
    let mut split = DatasetSplit {
        train_a: Vec::new(),
        train_b: Vec::new(),
        validation: Vec::new(),
    };
    for sample in samples {
        if sample.issue_time <= train_a_end {
            split.train_a.push(sample);
        } else if sample.issue_time <= train_b_end {
            split.train_b.push(sample);
        } else {
            split.validation.push(sample);
        }
    }
    if split.train_a.is_empty() || split.train_b.is_empty() || split.validation.is_empty() {
        return Err(Error::Config(format!(
            "split boundaries leave an empty partition (sizes {}, {}, {})",
            split.train_a.len(),
            split.train_b.len(),
            split.validation.len()
        )));
    }
    Ok(split)
}

/// Record counts of the three calendar windows delimited by the split
/// boundaries; a dataset-level diagnostic independent of lag feasibility.
pub fn record_window_counts(
    records: &[RawRecord],
    train_a_end: NaiveDateTime,
    train_b_end: NaiveDateTime,
) -> (usize, usize, usize) {
    let mut counts = (0usize, 0usize, 0usize);
    for r in records {
        if r.timestamp <= train_a_end {
            counts.0 += 1;
        } else if r.timestamp <= train_b_end {
            counts.1 += 1;
        } else {
            counts.2 += 1;
        }
    }
    counts
}

/// Per-feature standardization fitted on training set A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl FeatureScaler {
    /// Fit per-dimension mean and population standard deviation, so the
    /// standardized training features have mean 0 and spread exactly 1.
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Data("cannot fit a scaler on no samples".into()));
        };
        let dim = first.features.len();
        let n = samples.len() as f64;
        let mut means = vec![0.0; dim];
        for sample in samples {
            if sample.features.len() != dim {
                return Err(Error::Data(format!(
                    "inconsistent feature dimension: {} vs {dim}",
                    sample.features.len()
                )));
            }
            for (m, &x) in means.iter_mut().zip(&sample.features) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = vec![0.0; dim];
        for sample in samples {
            for ((s, &m), &x) in stds.iter_mut().zip(&means).zip(&sample.features) {
                *s += (x - m) * (x - m);
            }
        }
        for (index, s) in stds.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !(s.is_finite() && *s > 1e-12) {
                return Err(Error::Data(format!(
                    "feature {index} is constant on training set A; cannot standardize"
                )));
            }
        }
        Ok(Self { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// Standardize one feature vector.
    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    /// Standardize a whole partition, keeping targets and metadata.
    pub fn apply_samples(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .map(|s| Sample {
                features: self.apply(&s.features),
                ..s.clone()
            })
            .collect()
    }
}

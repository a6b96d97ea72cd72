//! CSV loading, split presets and sliding windows.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use divscale_core::seed::{avalanche, SeedTree};
use divscale_core::{Forecast, TimeSeries};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Row counts `(train, val, test)` of the public benchmark splits.
pub const PRESETS: [(&str, (usize, usize, usize)); 4] = [
    ("etth1", (8640, 2880, 2880)),
    ("ettm1", (34560, 11520, 11520)),
    ("electricity", (18412, 2630, 5261)),
    ("traffic", (12280, 1754, 3509)),
];

/// Which part of the file is evaluated: `"full"`, a preset name, or explicit
/// `{"train": .., "val": .., "test": ..}` counts (the test block follows the
/// first `train + val` rows).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Split {
    Named(String),
    Counts { train: usize, val: usize, test: usize },
}

impl Default for Split {
    fn default() -> Self {
        Split::Named("full".into())
    }
}

impl Split {
    pub fn counts(&self) -> Result<Option<(usize, usize, usize)>, CliError> {
        match self {
            Split::Named(n) if n == "full" => Ok(None),
            Split::Named(n) => PRESETS
                .iter()
                .find(|(name, _)| name.eq_ignore_ascii_case(n))
                .map(|(_, c)| Some(*c))
                .ok_or_else(|| {
                    let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                    CliError::Config(format!("unknown split {n:?}; expected full, {}", names.join(", ")))
                }),
            Split::Counts { train, val, test } => Ok(Some((*train, *val, *test))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.counts().map(|_| ())
    }
}

fn dataset_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Dataset {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Frequency string for a sampling interval, as understood by the period
/// lookup (`15min`, `h`, `d`, ...).
pub fn freq_from_minutes(minutes: i64) -> Option<String> {
    match minutes {
        m if m <= 0 => None,
        60 => Some("h".into()),
        1440 => Some("d".into()),
        m if m % 60 == 0 => Some(format!("{}h", m / 60)),
        m => Some(format!("{m}min")),
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y/%m/%d %H:%M",
        "%m/%d/%Y %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Interval between the first two timestamps, when both parse.
pub fn infer_freq(dates: &[String]) -> Option<String> {
    let a = parse_timestamp(dates.first()?)?;
    let b = parse_timestamp(dates.get(1)?)?;
    freq_from_minutes((b - a).num_minutes())
}

/// Reads `target` from a CSV file with a header row and returns the
/// evaluation split as a univariate series. A column named `date` (or the
/// first column) is used only to infer the sampling frequency.
pub fn load_dataset(path: &Path, target: &str, split: &Split) -> Result<TimeSeries, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| dataset_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| dataset_err(path, e.to_string()))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(dataset_err(path, "empty file"));
    }
    let col = headers.iter().position(|h| h.trim() == target).ok_or_else(|| {
        let available: Vec<&str> = headers.iter().collect();
        dataset_err(
            path,
            format!(
                "column {target:?} not found; available columns: {}",
                available.join(", ")
            ),
        )
    })?;
    let date_col = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("date"))
        .or(if col != 0 { Some(0) } else { None });

    let mut values = Vec::new();
    let mut dates = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| dataset_err(path, format!("row {row}: {e}")))?;
        let cell = record.get(col).unwrap_or("");
        let v: f64 = cell
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| dataset_err(path, format!("row {row}, column {target}: non-numeric value {cell:?}")))?;
        values.push(v);
        if dates.len() < 2 {
            if let Some(d) = date_col.and_then(|c| record.get(c)) {
                dates.push(d.to_owned());
            }
        }
    }
    if values.is_empty() {
        return Err(dataset_err(path, "empty file"));
    }
    let values = match split.counts()? {
        None => values,
        Some((train, val, test)) => {
            let end = train + val + test;
            if values.len() < end {
                return Err(dataset_err(path, format!("{} rows, split needs {end}", values.len())));
            }
            values[train + val..end].to_vec()
        }
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TimeSeries::univariate(values)
        .map_err(|e| dataset_err(path, e.to_string()))?
        .with_name(name)
        .with_freq_hint(infer_freq(&dates)))
}

/// A deterministic hourly series with daily and weekly cycles plus AR(1)
/// noise, used when no dataset is configured.
pub fn synthetic_series(len: usize, seed: u64) -> TimeSeries {
    let key = SeedTree::new(seed).derive("synthetic", 0);
    let uniform = |t: u64, k: u64| (avalanche(key ^ avalanche(t * 4 + k)) >> 11) as f64 / (1u64 << 53) as f64;
    let mut e = 0.0;
    let values = (0..len)
        .map(|t| {
            let xi: f64 = (0..4).map(|k| uniform(t as u64, k)).sum::<f64>() - 2.0;
            e = 0.7 * e + 0.4 * xi;
            let tf = t as f64;
            10.0 + 3.0 * (tf * std::f64::consts::TAU / 24.0).sin()
                + 1.0 * (tf * std::f64::consts::TAU / 168.0).cos()
                + e
        })
        .collect();
    TimeSeries::univariate(values)
        .expect("finite synthetic values")
        .with_name("synthetic")
        .with_freq_hint(Some("h".into()))
}

/// Windows at offsets `0, stride, 2 * stride, ...` while
/// `offset + l + h <= len`.
pub fn sliding_windows(
    series: &TimeSeries,
    l: usize,
    h: usize,
    stride: usize,
) -> Result<Vec<(TimeSeries, Forecast)>, CliError> {
    if l == 0 || h == 0 || stride == 0 {
        return Err(CliError::Config("L, H and stride must be >= 1".into()));
    }
    let need = l + h;
    if series.len() < need {
        return Err(CliError::Dataset {
            path: PathBuf::from(&series.name),
            message: format!(
                "series has {} points, windows need at least L + H = {need}",
                series.len()
            ),
        });
    }
    let count = (series.len() - need) / stride + 1;
    Ok((0..count)
        .map(|k| {
            let start = k * stride;
            let context = series.slice(start, start + l);
            let truth = series.slice(start + l, start + need);
            let truth = Forecast::from_flat(truth.flat().to_vec(), truth.channels()).expect("window shape");
            (context, truth)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_target_column() {
        let f = write("date,OT\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n2016-07-01 02:00:00,3\n");
        let s = load_dataset(f.path(), "OT", &Split::default()).unwrap();
        assert_eq!(s.flat(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.freq_hint.as_deref(), Some("h"));
    }

    #[test]
    fn fifteen_minute_frequency() {
        let f = write("date,HUFL,OT\n2016-07-01 00:00,5,1\n2016-07-01 00:15,5,2\n");
        let s = load_dataset(f.path(), "OT", &Split::default()).unwrap();
        assert_eq!(s.freq_hint.as_deref(), Some("15min"));
    }

    #[test]
    fn missing_column_lists_available() {
        let f = write("date,HUFL\n2016-07-01,1\n");
        let err = load_dataset(f.path(), "OT", &Split::default()).unwrap_err().to_string();
        assert!(err.contains("\"OT\" not found"), "{err}");
        assert!(err.contains("date, HUFL"), "{err}");
    }

    #[test]
    fn non_numeric_cell_reports_row_and_column() {
        let f = write("date,OT\n2016-07-01,1\n2016-07-02,abc\n");
        let err = load_dataset(f.path(), "OT", &Split::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let msg = err.to_string();
        assert!(
            msg.contains("row 2") && msg.contains("column OT") && msg.contains("abc"),
            "{msg}"
        );
    }

    #[test]
    fn empty_file() {
        let f = write("");
        assert!(load_dataset(f.path(), "OT", &Split::default())
            .unwrap_err()
            .to_string()
            .contains("empty"));
        let f = write("date,OT\n");
        assert!(load_dataset(f.path(), "OT", &Split::default())
            .unwrap_err()
            .to_string()
            .contains("empty"));
    }

    #[test]
    fn preset_selects_test_block() {
        let mut text = String::from("date,OT\n");
        for i in 0..14400 {
            text.push_str(&format!("x,{i}\n"));
        }
        let f = write(&text);
        let s = load_dataset(f.path(), "OT", &Split::Named("etth1".into())).unwrap();
        assert_eq!(s.len(), 2880);
        assert_eq!(s.flat()[0], 11520.0);
        assert_eq!(*s.flat().last().unwrap(), 14399.0);
        assert!(load_dataset(f.path(), "OT", &Split::Named("ettm1".into())).is_err());
        assert!(Split::Named("nope".into()).validate().is_err());
    }

    #[test]
    fn window_counts() {
        let s = TimeSeries::univariate((0..640).map(f64::from).collect()).unwrap();
        let w = sliding_windows(&s, 512, 96, 32).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].0.flat()[0], 32.0);
        assert_eq!(w[1].1.flat()[0], 544.0);
        let s = TimeSeries::univariate((0..608).map(f64::from).collect()).unwrap();
        assert_eq!(sliding_windows(&s, 512, 96, 32).unwrap().len(), 1);
        assert_eq!(sliding_windows(&s, 512, 96, 10_000).unwrap().len(), 1);
        let err = sliding_windows(&s, 600, 96, 1).unwrap_err().to_string();
        assert!(err.contains("696"), "{err}");
    }

    #[test]
    fn window_count_formula() {
        for len in [100usize, 137, 250] {
            let s = TimeSeries::univariate(vec![1.0; len]).unwrap();
            for (l, h, stride) in [(32, 8, 5), (50, 50, 7), (10, 1, 1)] {
                let n = sliding_windows(&s, l, h, stride).unwrap().len();
                assert_eq!(n, (len - l - h) / stride + 1);
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(synthetic_series(100, 3), synthetic_series(100, 3));
        assert_ne!(synthetic_series(100, 3), synthetic_series(100, 4));
    }
}

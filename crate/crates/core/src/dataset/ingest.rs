//! Adapters for the IMS and PRONOSTIA directory layouts.
//!
//! IMS: one plain-text file per snapshot, tab separated, one row per tick,
//! with the snapshot timestamp encoded in the file name
//! (`2004.02.12.10.32.39`). PRONOSTIA: one `acc_*.csv` file per snapshot,
//! comma separated, with hour/minute/second/microsecond columns followed by
//! the acceleration channels. Column positions and delimiters are
//! configurable.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::Run;
use crate::signal::RawWindow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Ims,
    Pronostia,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Minutes,
    Hours,
    Days,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Minutes => 60.0,
            TimeUnit::Hours => 3_600.0,
            TimeUnit::Days => 86_400.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "seconds",
            TimeUnit::Minutes => "minutes",
            TimeUnit::Hours => "hours",
            TimeUnit::Days => "days",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub format: DataFormat,
    /// Zero-based column holding the acceleration channel.
    pub channel: usize,
    /// Hz.
    pub sample_rate: f64,
    #[serde(default)]
    pub delimiter: Option<char>,
    /// Expected column count; inferred from the first file when absent.
    #[serde(default)]
    pub columns: Option<usize>,
    /// PRONOSTIA hour, minute, second, microsecond columns.
    #[serde(default = "default_time_columns")]
    pub time_columns: [usize; 4],
    #[serde(default = "default_time_unit")]
    pub time_unit: TimeUnit,
    #[serde(default = "default_failed")]
    pub failed: bool,
}

fn default_time_columns() -> [usize; 4] {
    [0, 1, 2, 3]
}

fn default_time_unit() -> TimeUnit {
    TimeUnit::Seconds
}

fn default_failed() -> bool {
    true
}

impl IngestConfig {
    pub fn ims(channel: usize) -> Self {
        Self {
            format: DataFormat::Ims,
            channel,
            sample_rate: 20_480.0,
            delimiter: None,
            columns: None,
            time_columns: default_time_columns(),
            time_unit: TimeUnit::Seconds,
            failed: true,
        }
    }

    pub fn pronostia() -> Self {
        Self {
            format: DataFormat::Pronostia,
            channel: 4,
            sample_rate: 25_600.0,
            delimiter: None,
            columns: None,
            time_columns: default_time_columns(),
            time_unit: TimeUnit::Seconds,
            failed: true,
        }
    }

    fn delimiter(&self) -> u8 {
        let c = self.delimiter.unwrap_or(match self.format {
            DataFormat::Ims => '\t',
            DataFormat::Pronostia => ',',
        });
        c as u8
    }
}

struct Snapshot {
    path: PathBuf,
    seconds: f64,
}

/// Reads one run directory into a [`Run`] named `id`.
pub fn ingest_run(dir: &Path, id: &str, config: &IngestConfig) -> Result<Run> {
    let ingest_err = |path: &Path, message: String| Error::Ingest { path: path.to_path_buf(), message };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ingest_err(dir, format!("cannot read directory: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            !name.starts_with('.')
                && match config.format {
                    DataFormat::Ims => true,
                    DataFormat::Pronostia => name.starts_with("acc"),
                }
        })
        .collect();
    if paths.is_empty() {
        return Err(ingest_err(dir, "no data files found".into()));
    }
    paths.sort();

    let mut expected = config.columns;
    let mut snapshots = Vec::with_capacity(paths.len());
    let mut windows = Vec::with_capacity(paths.len());
    for path in &paths {
        let (samples, first_row) = read_table(path, config, &mut expected)?;
        let seconds = match config.format {
            DataFormat::Ims => ims_timestamp(path)?,
            DataFormat::Pronostia => {
                let c = config.time_columns;
                if c.iter().any(|&i| i >= first_row.len()) {
                    return Err(ingest_err(path, format!("time columns {c:?} out of range")));
                }
                first_row[c[0]] * 3_600.0 + first_row[c[1]] * 60.0 + first_row[c[2]] + first_row[c[3]] * 1e-6
            }
        };
        snapshots.push(Snapshot { path: path.clone(), seconds });
        windows.push(RawWindow::new(samples, config.sample_rate).map_err(|e| ingest_err(path, e.to_string()))?);
    }

    if config.format == DataFormat::Ims {
        let mut paired: Vec<(Snapshot, RawWindow)> = snapshots.into_iter().zip(windows).collect();
        paired.sort_by(|a, b| a.0.seconds.total_cmp(&b.0.seconds));
        (snapshots, windows) = paired.into_iter().unzip();
    } else {
        // Time of day only: a backwards jump of more than half a day is a midnight rollover.
        let mut offset = 0.0;
        for i in 1..snapshots.len() {
            let prev = snapshots[i - 1].seconds;
            if snapshots[i].seconds + offset < prev - 43_200.0 {
                offset += 86_400.0;
            }
            snapshots[i].seconds += offset;
        }
    }
    for pair in snapshots.windows(2) {
        if pair[1].seconds <= pair[0].seconds {
            return Err(ingest_err(
                &pair[1].path,
                format!("timestamp does not advance past {}", pair[0].path.display()),
            ));
        }
    }

    let scale = config.time_unit.seconds();
    let t0 = snapshots[0].seconds;
    let times: Vec<f64> = snapshots.iter().map(|s| (s.seconds - t0) / scale).collect();
    let duration = windows.last().map(|w| w.duration()).unwrap_or(0.0) / scale;
    let total = times.last().copied().unwrap_or(0.0) + duration;
    Run::new(id, windows, times, total, config.failed)
}

fn ims_timestamp(path: &Path) -> Result<f64> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let stem = name.trim_end_matches(".txt");
    let ts = NaiveDateTime::parse_from_str(stem, "%Y.%m.%d.%H.%M.%S").map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        message: format!("file name is not a YYYY.MM.DD.hh.mm.ss timestamp: {e}"),
    })?;
    Ok(ts.and_utc().timestamp() as f64)
}

/// Channel samples plus the parsed first row.
fn read_table(path: &Path, config: &IngestConfig, expected: &mut Option<usize>) -> Result<(Vec<f64>, Vec<f64>)> {
    let err = |message: String| Error::Ingest { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(config.delimiter())
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(format!("cannot open: {e}")))?;
    let mut samples = Vec::new();
    let mut first_row = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(format!("line {}: {e}", line + 1)))?;
        let fields: Vec<&str> = record.iter().filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        let arity = *expected.get_or_insert(fields.len());
        if fields.len() != arity {
            return Err(err(format!(
                "line {}: expected {arity} columns, found {}",
                line + 1,
                fields.len()
            )));
        }
        if config.channel >= arity {
            return Err(err(format!("channel {} out of range for {arity} columns", config.channel)));
        }
        if first_row.is_empty() {
            first_row = fields
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("line {}: {e}", line + 1)))?;
        }
        let v: f64 = fields[config.channel]
            .parse()
            .map_err(|e| err(format!("line {}: bad value {:?}: {e}", line + 1, fields[config.channel])))?;
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(err("file holds no rows".into()));
    }
    Ok((samples, first_row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) {
        let mut f = fs::File::create(dir.join(name)).unwrap();
        f.write_all(body.as_bytes()).unwrap();
    }

    fn ims_body(rows: usize, cols: usize, scale: f64) -> String {
        (0..rows)
            .map(|i| (0..cols).map(|c| format!("{:.3}", scale * ((i * (c + 1)) as f64).sin())).collect::<Vec<_>>().join("\t"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn ims_three_files_ten_minutes_apart() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "2004.02.12.10.52.39", &ims_body(32, 4, 2.0));
        write(tmp.path(), "2004.02.12.10.32.39", &ims_body(32, 4, 1.0));
        write(tmp.path(), "2004.02.12.10.42.39", &ims_body(32, 4, 1.5));
        let run = ingest_run(tmp.path(), "b1", &IngestConfig::ims(0)).unwrap();
        assert_eq!(run.times, vec![0.0, 600.0, 1200.0]);
        assert!((run.total_runtime - (1200.0 + 32.0 / 20_480.0)).abs() < 1e-9);
        assert_eq!(run.windows[0].samples[1], 0.841);
        assert_eq!(run.windows[2].samples[1], 1.683);
        assert!(run.failed);

        let hours = IngestConfig { time_unit: TimeUnit::Hours, ..IngestConfig::ims(0) };
        let run = ingest_run(tmp.path(), "b1", &hours).unwrap();
        assert!((run.times[2] - 1200.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn empty_directory_errors() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_run(tmp.path(), "x", &IngestConfig::ims(0)), Err(Error::Ingest { .. })));
    }

    #[test]
    fn wrong_column_count_names_file() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "2004.02.12.10.32.39", &ims_body(8, 4, 1.0));
        write(tmp.path(), "2004.02.12.10.42.39", &ims_body(8, 3, 1.0));
        let cfg = IngestConfig { columns: Some(4), ..IngestConfig::ims(1) };
        let err = ingest_run(tmp.path(), "x", &cfg).unwrap_err().to_string();
        assert!(err.contains("2004.02.12.10.42.39"), "{err}");
        assert!(err.contains("expected 4 columns"), "{err}");
    }

    #[test]
    fn unparseable_file_name_and_value() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "notes", &ims_body(8, 4, 1.0));
        let err = ingest_run(tmp.path(), "x", &IngestConfig::ims(0)).unwrap_err().to_string();
        assert!(err.contains("notes"), "{err}");

        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "2004.02.12.10.32.39", "1.0\t2.0\nabc\t3.0\n");
        let err = ingest_run(tmp.path(), "x", &IngestConfig::ims(0)).unwrap_err().to_string();
        assert!(err.contains("2004.02.12.10.32.39") && err.contains("line 2"), "{err}");
    }

    fn pronostia_body(h: u32, m: u32, s: u32, us: u32, rows: usize) -> String {
        (0..rows)
            .map(|i| format!("{h},{m},{s},{},{:.3},{:.3}", us + i as u32 * 39, (i as f64 * 0.2).sin(), (i as f64 * 0.3).cos()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn pronostia_layout_and_rollover() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "acc_00001.csv", &pronostia_body(23, 59, 40, 0, 16));
        write(tmp.path(), "acc_00002.csv", &pronostia_body(23, 59, 50, 0, 16));
        write(tmp.path(), "acc_00003.csv", &pronostia_body(0, 0, 0, 0, 16));
        write(tmp.path(), "temp_00001.csv", "garbage");
        let run = ingest_run(tmp.path(), "Bearing1_1", &IngestConfig::pronostia()).unwrap();
        assert_eq!(run.times, vec![0.0, 10.0, 20.0]);
        assert_eq!(run.windows[0].samples.len(), 16);
        assert!((run.windows[0].samples[1] - 0.199).abs() < 1e-12);
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "acc_00001.csv", &pronostia_body(10, 0, 0, 0, 8));
        write(tmp.path(), "acc_00002.csv", &pronostia_body(10, 0, 0, 0, 8));
        assert!(ingest_run(tmp.path(), "x", &IngestConfig::pronostia()).is_err());
    }
}

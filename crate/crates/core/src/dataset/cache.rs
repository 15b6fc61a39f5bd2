//! Flat-text feature cache.
//!
//! ```text
//! # bearing-rul feature cache v1
//! # bin_count=20
//! # kaiser_shape=14
//! # beta=2
//! # eta=83.95...
//! # manifest_hash=<hex>
//! # scaler_min=<;-separated>
//! # scaler_max=<;-separated>
//! # record=<run_id>;<time>;<failed|censored>
//! # content_hash=<sha256 of every line below>
//! split,run_id,time,run_length,label,f0,...,f{bins-1}
//! train,run-00,0,123.4,0,0.12,...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! read-back cache is bit-identical to what was written.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{ExperimentData, FeatureSet, MinMaxScaler, RunRecord, Split};
use crate::signal::SignalConfig;
use crate::weibull::FailureRecord;
use crate::{Error, Result};

const MAGIC: &str = "# bearing-rul feature cache v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CacheMeta {
    pub beta: f64,
    pub eta: f64,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub data: ExperimentData,
    pub meta: CacheMeta,
    pub content_hash: String,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn body(data: &ExperimentData) -> String {
    let bins = data.train.bin_count();
    let mut out = String::from("split,run_id,time,run_length,label");
    for j in 0..bins {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for split in Split::ALL {
        let fs = data.split(split);
        for i in 0..fs.len() {
            let _ = write!(
                out,
                "{split},{},{},{},{}",
                fs.run_ids[i], fs.sample_times[i], fs.run_lengths[i], fs.labels[i]
            );
            for v in fs.features.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Renders the cache text; returns it with its content hash.
pub fn render_feature_cache(data: &ExperimentData, meta: &CacheMeta) -> (String, String) {
    let body = body(data);
    let hash = content_hash(&body);
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "# bin_count={}", data.signal.bin_count);
    let _ = writeln!(out, "# kaiser_shape={}", data.signal.kaiser_shape);
    let _ = writeln!(out, "# beta={}", meta.beta);
    let _ = writeln!(out, "# eta={}", meta.eta);
    let _ = writeln!(out, "# manifest_hash={}", meta.manifest_hash);
    let _ = writeln!(out, "# scaler_min={}", join(&data.scaler.mins));
    let _ = writeln!(out, "# scaler_max={}", join(&data.scaler.maxs));
    for r in &data.records {
        let status = if r.record.failed { "failed" } else { "censored" };
        let _ = writeln!(out, "# record={};{};{status}", r.run_id, r.record.time);
    }
    let _ = writeln!(out, "# content_hash={hash}");
    out.push_str(&body);
    (out, hash)
}

pub fn write_feature_cache(path: &Path, data: &ExperimentData, meta: &CacheMeta) -> Result<String> {
    let (text, hash) = render_feature_cache(data, meta);
    fs::write(path, text)?;
    Ok(hash)
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureCache> {
    let text = fs::read_to_string(path)?;
    parse_feature_cache(&text).map_err(|e| Error::Ingest { path: path.to_path_buf(), message: e.to_string() })
}

pub fn parse_feature_cache(text: &str) -> Result<FeatureCache> {
    let bad = |m: String| Error::Config(format!("feature cache: {m}"));
    let num = |k: &str, v: &str| v.parse::<f64>().map_err(|e| bad(format!("{k}: {e}")));
    if text.lines().next() != Some(MAGIC) {
        return Err(bad("missing header line".into()));
    }

    let mut bin_count = None;
    let mut kaiser_shape = None;
    let (mut beta, mut eta, mut manifest_hash) = (None, None, None);
    let (mut mins, mut maxs) = (Vec::new(), Vec::new());
    let mut records = Vec::new();
    let mut stated_hash = None;
    let mut body_start = text.lines().count();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let Some(meta) = line.strip_prefix("# ") else {
            body_start = idx;
            break;
        };
        let (key, value) = meta.split_once('=').ok_or_else(|| bad(format!("malformed header {line:?}")))?;
        match key {
            "bin_count" => bin_count = Some(value.parse::<usize>().map_err(|e| bad(format!("bin_count: {e}")))?),
            "kaiser_shape" => kaiser_shape = Some(num(key, value)?),
            "beta" => beta = Some(num(key, value)?),
            "eta" => eta = Some(num(key, value)?),
            "manifest_hash" => manifest_hash = Some(value.to_string()),
            "scaler_min" | "scaler_max" => {
                let parsed = value.split(';').map(|v| num(key, v)).collect::<Result<Vec<_>>>()?;
                if key == "scaler_min" { mins = parsed } else { maxs = parsed }
            }
            "record" => {
                let parts: Vec<&str> = value.split(';').collect();
                let [run_id, time, status] = parts[..] else {
                    return Err(bad(format!("malformed record {value:?}")));
                };
                let failed = match status {
                    "failed" => true,
                    "censored" => false,
                    other => return Err(bad(format!("unknown record status {other:?}"))),
                };
                records.push(RunRecord { run_id: run_id.to_string(), record: FailureRecord::new(num(key, time)?, failed)? });
            }
            "content_hash" => stated_hash = Some(value.to_string()),
            other => return Err(bad(format!("unknown header key {other:?}"))),
        }
    }
    let missing = |k: &str| bad(format!("missing header {k}"));
    let bin_count = bin_count.ok_or_else(|| missing("bin_count"))?;
    let stated_hash = stated_hash.ok_or_else(|| missing("content_hash"))?;

    let body: String = text.lines().skip(body_start).flat_map(|l| [l, "\n"]).collect();
    let actual = content_hash(&body);
    if actual != stated_hash {
        return Err(bad(format!("content hash mismatch: header {stated_hash}, data {actual}")));
    }
    if mins.len() != bin_count || maxs.len() != bin_count {
        return Err(bad("scaler statistics do not match bin_count".into()));
    }

    let mut sets: Vec<(FeatureSet, Vec<f64>)> =
        Split::ALL.iter().map(|&s| (FeatureSet::empty(s, bin_count), Vec::new())).collect();
    for (n, line) in body.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + bin_count {
            return Err(bad(format!("row {n}: expected {} fields, found {}", 5 + bin_count, fields.len())));
        }
        let split: Split = fields[0].parse()?;
        let (fs, rows) = &mut sets[split as usize];
        fs.run_ids.push(fields[1].to_string());
        fs.sample_times.push(num("time", fields[2])?);
        fs.run_lengths.push(num("run_length", fields[3])?);
        fs.labels.push(num("label", fields[4])?);
        for v in &fields[5..] {
            rows.push(num("feature", v)?);
        }
    }
    let mut built = sets.into_iter().map(|(mut fs, rows)| {
        fs.features = Array2::from_shape_vec((fs.labels.len(), bin_count), rows).expect("row lengths checked");
        fs.check().map(|_| fs)
    });
    let (train, validation, test) = (built.next().unwrap()?, built.next().unwrap()?, built.next().unwrap()?);

    let data = ExperimentData {
        train,
        validation,
        test,
        scaler: MinMaxScaler { mins, maxs },
        records,
        signal: SignalConfig { bin_count, kaiser_shape: kaiser_shape.ok_or_else(|| missing("kaiser_shape"))? },
    };
    let meta = CacheMeta {
        beta: beta.ok_or_else(|| missing("beta"))?,
        eta: eta.ok_or_else(|| missing("eta"))?,
        manifest_hash: manifest_hash.ok_or_else(|| missing("manifest_hash"))?,
    };
    Ok(FeatureCache { data, meta, content_hash: stated_hash })
}

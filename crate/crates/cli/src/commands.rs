use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{anyhow, bail, Context, Result};
use bearing_rul::dataset::{
    assemble, ingest_run, read_feature_cache, synthesize_runs, write_feature_cache, CacheMeta, FeatureCache, Run,
    RunRecord, Split,
};
use bearing_rul::network::Checkpoint;
use bearing_rul::search::{
    best_trial, derive_seed, filter_results, parse_results_csv, plan_search, prediction_points, render_curves_csv,
    render_predictions_csv, render_results_csv, run_trials, train_trial, AnalysisTables, ReportContext, TrialConfig,
    TrialJob,
};
use bearing_rul::trainer::Metrics;
use bearing_rul::weibull::{weibayes, FailureRecord, WeibullParams};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, ProvenanceRecord};
use crate::manifest::{manifest_hash, DataSection, LoadedManifest};
use crate::{Cli, Command};

const SYNTH_STREAM: u64 = 1;
const SEARCH_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// Effective settings after applying flag overrides to the manifest.
struct Ctx {
    loaded: LoadedManifest,
    seed: u64,
    out: PathBuf,
    workers: usize,
    hash: String,
    overrides: BTreeMap<String, String>,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let path = cli
            .manifest
            .as_ref()
            .ok_or_else(|| anyhow!("this subcommand needs --manifest <path>"))?;
        let loaded = LoadedManifest::load(path)?;
        let mut overrides = BTreeMap::new();
        let seed = match cli.seed {
            Some(s) => {
                overrides.insert("seed".into(), s.to_string());
                s
            }
            None => loaded.manifest.seed,
        };
        let out = match &cli.out {
            Some(o) => {
                overrides.insert("out".into(), o.display().to_string());
                o.clone()
            }
            None => loaded.resolve(&loaded.manifest.out),
        };
        let workers = match cli.workers {
            Some(0) => bail!("--workers must be >= 1"),
            Some(w) => {
                overrides.insert("workers".into(), w.to_string());
                w
            }
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let hash = manifest_hash(&loaded.bytes, seed);
        Ok(Self { loaded, seed, out, workers, hash, overrides })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn provenance(&self, command: &str, artifacts: &[&str]) -> Result<()> {
        artifacts::record_provenance(
            &self.out,
            command,
            ProvenanceRecord {
                manifest: self.loaded.path.clone(),
                manifest_hash: self.hash.clone(),
                seed: self.seed,
                overrides: self.overrides.clone(),
                workers: self.workers,
                version: env!("CARGO_PKG_VERSION").to_string(),
                artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    fn runs(&self) -> Result<Vec<Run>> {
        artifacts::read_stamped_json(&self.path(artifacts::RUNS), &self.hash, "synth` or `bearing-rul ingest")
    }

    fn features(&self) -> Result<FeatureCache> {
        let path = self.path(artifacts::FEATURES);
        artifacts::require(&path, "features")?;
        let cache = read_feature_cache(&path)?;
        artifacts::check_hash(&path, &cache.meta.manifest_hash, &self.hash, "features")?;
        Ok(cache)
    }

    fn results(&self, name: &str, producer: &str) -> Result<Vec<bearing_rul::search::TrialResult>> {
        let path = self.path(name);
        let body = artifacts::read_stamped_text(&path, &self.hash, producer)?;
        parse_results_csv(&body).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Weibayes { records: Some(records), beta } if cli.manifest.is_none() => {
            weibayes_records(records, beta.unwrap_or(bearing_rul::weibull::BALL_BEARING_BETA))
        }
        Command::Synth => synth(&Ctx::new(&cli)?),
        Command::Ingest => ingest(&Ctx::new(&cli)?),
        Command::Features => features(&Ctx::new(&cli)?),
        Command::Weibayes { records, beta } => weibayes_cmd(&Ctx::new(&cli)?, records.as_deref(), *beta),
        Command::Train => train(&Ctx::new(&cli)?),
        Command::Search => search(&Ctx::new(&cli)?),
        Command::Filter => filter(&Ctx::new(&cli)?),
        Command::Report => report(&Ctx::new(&cli)?),
    }
}

fn write_runs(ctx: &Ctx, runs: &[Run], command: &str) -> Result<()> {
    artifacts::write_stamped_json(&ctx.path(artifacts::RUNS), &ctx.hash, &runs)?;
    ctx.provenance(command, &[artifacts::RUNS])?;
    let censored = runs.iter().filter(|r| !r.failed).count();
    println!("wrote {} runs ({censored} censored) to {}", runs.len(), ctx.path(artifacts::RUNS).display());
    Ok(())
}

fn synth(ctx: &Ctx) -> Result<()> {
    let DataSection::Synthetic { spec } = &ctx.loaded.manifest.data else {
        bail!("data.source is \"recorded\"; use `bearing-rul ingest`");
    };
    let runs = synthesize_runs(spec, derive_seed(ctx.seed, SYNTH_STREAM))?;
    write_runs(ctx, &runs, "synth")
}

fn ingest(ctx: &Ctx) -> Result<()> {
    let DataSection::Recorded { ingest, runs } = &ctx.loaded.manifest.data else {
        bail!("data.source is \"synthetic\"; use `bearing-rul synth`");
    };
    let runs = runs
        .iter()
        .map(|src| {
            let mut cfg = ingest.clone();
            if let Some(f) = src.failed {
                cfg.failed = f;
            }
            ingest_run(&ctx.loaded.resolve(&src.path), &src.id, &cfg).with_context(|| format!("ingesting run {}", src.id))
        })
        .collect::<Result<Vec<_>>>()?;
    write_runs(ctx, &runs, "ingest")
}

fn features(ctx: &Ctx) -> Result<()> {
    let m = &ctx.loaded.manifest;
    let runs = ctx.runs()?;
    let splits = m.splits.assign(&runs)?;
    let data = assemble(&runs, &splits, m.features.signal())?;
    let weibull = data.weibull(m.weibull.beta)?;
    let meta = CacheMeta { beta: weibull.beta(), eta: weibull.eta(), manifest_hash: ctx.hash.clone() };
    write_feature_cache(&ctx.path(artifacts::FEATURES), &data, &meta)?;
    ctx.provenance("features", &[artifacts::FEATURES])?;
    for split in Split::ALL {
        let fs = data.split(split);
        println!("{split}: {} runs, {} samples", fs.distinct_run_ids().len(), fs.len());
    }
    println!("beta = {}, eta = {}", meta.beta, meta.eta);
    Ok(())
}

fn parse_records(text: &str) -> Result<Vec<FailureRecord>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|tok| {
            let (num, failed) = match tok.strip_suffix(['c', 'C']) {
                Some(n) => (n, false),
                None => (tok.strip_suffix(['f', 'F']).unwrap_or(tok), true),
            };
            let t: f64 = num.trim().parse().with_context(|| format!("bad record time {tok:?}"))?;
            Ok(FailureRecord::new(t, failed)?)
        })
        .collect()
}

fn describe_records(records: &[FailureRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{} {}", r.time, if r.failed { "failed" } else { "censored" }))
        .collect::<Vec<_>>()
        .join(", ")
}

fn weibayes_records(text: &str, beta: f64) -> Result<()> {
    let records = parse_records(text)?;
    let w = weibayes(&records, beta)?;
    println!("eta = {}", w.eta());
    println!("beta = {beta}; records: {}", describe_records(&records));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct WeibayesArtifact {
    beta: f64,
    eta: f64,
    records: Vec<RunRecord>,
}

fn weibayes_cmd(ctx: &Ctx, records: Option<&str>, beta: Option<f64>) -> Result<()> {
    let beta = beta.unwrap_or(ctx.loaded.manifest.weibull.beta);
    let records: Vec<RunRecord> = match records {
        Some(text) => parse_records(text)?
            .into_iter()
            .enumerate()
            .map(|(i, record)| RunRecord { run_id: format!("record-{i}"), record })
            .collect(),
        None => ctx.features()?.data.records,
    };
    let plain: Vec<FailureRecord> = records.iter().map(|r| r.record).collect();
    let w = weibayes(&plain, beta)?;
    artifacts::write_stamped_json(
        &ctx.path(artifacts::WEIBAYES),
        &ctx.hash,
        &WeibayesArtifact { beta, eta: w.eta(), records: records.clone() },
    )?;
    ctx.provenance("weibayes", &[artifacts::WEIBAYES])?;
    println!("eta = {}", w.eta());
    let listed: Vec<String> = records
        .iter()
        .map(|r| format!("{} {} {}", r.run_id, r.record.time, if r.record.failed { "failed" } else { "censored" }))
        .collect();
    println!("beta = {beta}; records: {}", listed.join(", "));
    Ok(())
}

fn cache_weibull(cache: &FeatureCache) -> Result<WeibullParams> {
    Ok(WeibullParams::new(cache.meta.beta, cache.meta.eta)?)
}

fn print_metrics(label: &str, m: &Metrics) {
    let r2 = m.r2.map_or("undefined".to_string(), |r| format!("{r:.4}"));
    println!("{label:<10} mse {:.5}  rmse {:.5}  rmsle {:.5}  r2 {r2}", m.mse, m.rmse, m.rmsle);
}

fn checkpoint(ctx: &Ctx, config: &TrialConfig, cache: &FeatureCache, state: bearing_rul::network::NetworkState) -> Checkpoint {
    Checkpoint {
        architecture: state.architecture,
        layers: state.layers,
        loss: config.loss.name().to_string(),
        lambda: config.lambda,
        beta: cache.meta.beta,
        eta: cache.meta.eta,
        scaler: cache.data.scaler.clone(),
        seed: config.seed,
        manifest_hash: ctx.hash.clone(),
    }
}

fn train(ctx: &Ctx) -> Result<()> {
    let t = &ctx.loaded.manifest.train;
    let cache = ctx.features()?;
    let config = TrialConfig {
        trial_id: 0,
        arch_index: 0,
        seed: derive_seed(ctx.seed, TRAIN_STREAM),
        loss: t.loss,
        lambda: t.lambda,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        hidden_layers: t.hidden_layers,
        units_per_layer: t.units_per_layer,
        dropout: t.dropout,
        max_epochs: t.max_epochs,
        patience: t.patience,
    };
    let job = TrialJob { config, data: &cache.data, weibull: cache_weibull(&cache)? };
    let (fit, metrics) = train_trial(&job)?;
    let curves = render_curves_csv(&fit);
    let ckpt = checkpoint(ctx, &config, &cache, fit.state);
    fs::write(ctx.path(artifacts::CHECKPOINT), ckpt.to_json()?)?;
    artifacts::write_stamped_text(&ctx.path(artifacts::TRAIN_CURVES), &ctx.hash, &curves)?;
    ctx.provenance("train", &[artifacts::CHECKPOINT, artifacts::TRAIN_CURVES])?;
    println!("{} trained for {} epochs; restored epoch {}", config.loss, fit.epochs_run, fit.stop_epoch);
    for split in Split::ALL {
        print_metrics(split.as_str(), metrics.get(split));
    }
    Ok(())
}

fn install_interrupt_handler() -> Result<()> {
    // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
    unsafe { signal_hook_registry::register(libc::SIGINT, || INTERRUPTED.store(true, Ordering::SeqCst)) }
        .context("installing the interrupt handler")?;
    Ok(())
}

fn search(ctx: &Ctx) -> Result<()> {
    let s = &ctx.loaded.manifest.search;
    let cache = ctx.features()?;
    let weibull = cache_weibull(&cache)?;
    let plan = plan_search(&s.space, s.architectures, derive_seed(ctx.seed, SEARCH_STREAM), s.max_epochs, s.patience)?;
    let jobs: Vec<TrialJob<'_>> = plan.iter().map(|&config| TrialJob { config, data: &cache.data, weibull }).collect();
    install_interrupt_handler()?;
    let results = run_trials(&jobs, ctx.workers, Some(&INTERRUPTED))?;
    artifacts::write_stamped_text(&ctx.path(artifacts::RESULTS), &ctx.hash, &render_results_csv(&results)?)?;
    ctx.provenance("search", &[artifacts::RESULTS])?;
    if INTERRUPTED.load(Ordering::SeqCst) {
        bail!("interrupted; {} of {} completed trials saved to {}", results.len(), jobs.len(), ctx.path(artifacts::RESULTS).display());
    }
    let ok = results.iter().filter(|r| r.is_ok()).count();
    println!("{} trials ({ok} ok, {} not ok) written to {}", results.len(), results.len() - ok, ctx.path(artifacts::RESULTS).display());
    Ok(())
}

fn filter(ctx: &Ctx) -> Result<()> {
    let results = ctx.results(artifacts::RESULTS, "search")?;
    let kept = filter_results(&results, &ctx.loaded.manifest.filter);
    artifacts::write_stamped_text(&ctx.path(artifacts::FILTERED), &ctx.hash, &render_results_csv(&kept)?)?;
    ctx.provenance("filter", &[artifacts::FILTERED])?;
    println!("{} of {} trials pass the thresholds", kept.len(), results.len());
    Ok(())
}

fn write_report_file(dir: &Path, name: &str, hash: &str, body: &str) -> Result<()> {
    artifacts::write_stamped_text(&dir.join(name), hash, body)
}

fn report(ctx: &Ctx) -> Result<()> {
    let m = &ctx.loaded.manifest;
    let all = ctx.results(artifacts::RESULTS, "search")?;
    let filtered = ctx.results(artifacts::FILTERED, "filter")?;
    let cache = ctx.features()?;
    let weibull = cache_weibull(&cache)?;
    let tables = AnalysisTables::build(
        &all,
        &filtered,
        &ReportContext { manifest_hash: ctx.hash.clone(), beta: weibull.beta(), eta: weibull.eta(), thresholds: m.filter },
    );
    let dir = ctx.path(artifacts::REPORT_DIR);
    fs::create_dir_all(&dir)?;
    write_report_file(&dir, "loss_frequency.csv", &ctx.hash, &tables.loss_frequency_csv)?;
    write_report_file(&dir, "correlations.csv", &ctx.hash, &tables.correlations_csv)?;
    write_report_file(&dir, "early_stop.csv", &ctx.hash, &tables.early_stop_csv)?;
    fs::write(dir.join("summary.txt"), &tables.summary_txt)?;
    let mut written = vec!["report/loss_frequency.csv", "report/correlations.csv", "report/early_stop.csv", "report/summary.txt"];

    if let Some(best) = best_trial(&filtered) {
        let job = TrialJob { config: best.config, data: &cache.data, weibull };
        let (fit, metrics) = train_trial(&job)?;
        if Some(metrics) != best.metrics {
            log::warn!("retrained best trial {} does not reproduce its recorded metrics", best.config.trial_id);
        }
        let points = prediction_points(&fit.state, &cache.data)?;
        write_report_file(&dir, "curves.csv", &ctx.hash, &render_curves_csv(&fit))?;
        write_report_file(&dir, "predictions.csv", &ctx.hash, &render_predictions_csv(&points, m.report.rolling_window))?;
        fs::write(dir.join("best_checkpoint.json"), checkpoint(ctx, &best.config, &cache, fit.state).to_json()?)?;
        written.extend(["report/curves.csv", "report/predictions.csv", "report/best_checkpoint.json"]);
    }
    ctx.provenance("report", &written)?;
    print!("{}", tables.summary_txt);
    println!("report written to {}", dir.display());
    Ok(())
}

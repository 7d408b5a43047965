//! Multi-seed experiments, ablation variants and the λ sweep.

use std::fs;
use std::path::{Path, PathBuf};

use highair_core::dataset::SampleWindow;
use highair_core::metrics::{self, Forecasts, HorizonMetrics};
use highair_core::train::EpochLog;
use highair_core::{AblationFlag, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{self, config_hash, EpochWriter, Prepared, Scores};
use crate::svg;
use crate::synth::{self, SynthSpec};

pub const HA_METHOD: &str = "HA";
pub const FULL_METHOD: &str = "HighAir";

fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn d_period() -> usize {
    168
}

/// A named set of ablation flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub ablate: Vec<AblationFlag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub train: TrainConfig,
    /// Corpus directory; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Generate the corpus instead of reading `data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub synth_seed: u64,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    /// Ablated variants trained next to the full model.
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default = "d_period")]
    pub ha_period: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(Error::json(path))?;
        if let (Some(d), Some(base)) = (&cfg.data, path.parent()) {
            if d.is_relative() {
                cfg.data = Some(base.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::Validation(e.to_string()))?;
        if self.data.is_some() == self.synth.is_some() {
            return Err(Error::Validation("set exactly one of `data` and `synth`".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("`seeds` is empty".into()));
        }
        if self.ha_period == 0 {
            return Err(Error::Validation("`ha_period` must be positive".into()));
        }
        let mut names = vec![HA_METHOD, FULL_METHOD];
        for v in &self.variants {
            if names.contains(&v.name.as_str()) {
                return Err(Error::Validation(format!("duplicate method name `{}`", v.name)));
            }
            names.push(&v.name);
            let mut flags = self.train.ablate.clone();
            flags.extend(&v.ablate);
            highair_core::Ablation::from_flags(&flags).map_err(|e| Error::Validation(e.to_string()))?;
        }
        Ok(())
    }

    /// The training config of `variant` (`None` for the full model) under `seed`.
    pub fn train_config(&self, variant: Option<&Variant>, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = seed;
        if let Some(v) = variant {
            for f in &v.ablate {
                if !cfg.ablate.contains(f) {
                    cfg.ablate.push(*f);
                }
            }
        }
        cfg
    }

    /// Writes the synthetic corpus into `out/data` when needed and returns the data directory.
    pub fn materialize(&self, out: &Path) -> Result<PathBuf> {
        match (&self.data, &self.synth) {
            (Some(d), _) => Ok(d.clone()),
            (None, Some(spec)) => {
                let dir = out.join("data");
                let corpus = synth::generate(spec, self.synth_seed)?;
                synth::write_corpus(&corpus, &dir)?;
                Ok(dir)
            }
            (None, None) => Err(Error::Validation("set exactly one of `data` and `synth`".into())),
        }
    }
}

/// Scores of one method under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub seed: u64,
    pub scores: Vec<Scores>,
    pub best_epoch: Option<usize>,
    pub curve: Vec<EpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Metrics averaged over seeds.
    pub mean: Vec<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub stamp: Stamp,
    pub horizons: Vec<usize>,
    pub runs: Vec<RunResult>,
    pub summary: Vec<MethodSummary>,
}

impl ExperimentReport {
    pub fn summary_of(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|m| m.method == method)
    }

    /// Seed-averaged MAE over all evaluated stations at horizon `k`.
    pub fn mean_mae(&self, method: &str, k: usize) -> Option<f64> {
        self.summary_of(method)?.mean.first()?.horizons.iter().find(|h| h.horizon == k).map(|h| h.mae)
    }
}

/// HA forecasts for `windows` from the training history.
pub fn ha_forecasts(prepared: &Prepared, windows: &[SampleWindow], period: usize) -> Result<Forecasts> {
    let (f, fallbacks) = metrics::ha_forecasts(prepared.data.raw(), windows, prepared.split.train_hours(), period)?;
    if fallbacks > 0 {
        log::warn!("historical average fell back to the training mean for {fallbacks} forecasts");
    }
    Ok(f)
}

fn average(runs: &[&RunResult]) -> Vec<Scores> {
    let first = &runs[0].scores;
    first
        .iter()
        .enumerate()
        .map(|(i, s)| Scores {
            city: s.city.clone(),
            horizons: s
                .horizons
                .iter()
                .enumerate()
                .map(|(j, h)| {
                    let n = runs.len() as f64;
                    HorizonMetrics {
                        horizon: h.horizon,
                        mae: runs.iter().map(|r| r.scores[i].horizons[j].mae).sum::<f64>() / n,
                        rmse: runs.iter().map(|r| r.scores[i].horizons[j].rmse).sum::<f64>() / n,
                        count: h.count,
                    }
                })
                .collect(),
        })
        .collect()
}

/// Runs HA, the full model and every variant for every seed; writes
/// `metrics.csv`, `report.json`, `mae.svg` and per-run logs under `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    config.validate()?;
    fs::create_dir_all(out.join("logs")).map_err(Error::io(out))?;
    let data_dir = config.materialize(out)?;
    let prepared = pipeline::prepare(&data_dir, &config.train)?;
    let test = &prepared.split.test;
    if test.is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    let targets = Forecasts::targets(prepared.data.raw(), test)?;

    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let cfg = config.train_config(None, seed);
        let preds = ha_forecasts(&prepared, test, config.ha_period)?;
        runs.push(RunResult {
            method: HA_METHOD.into(),
            seed,
            scores: pipeline::score(&prepared, &cfg, &preds, &targets)?,
            best_epoch: None,
            curve: Vec::new(),
        });
    }
    let methods: Vec<(String, Option<&Variant>)> = std::iter::once((FULL_METHOD.to_string(), None))
        .chain(config.variants.iter().map(|v| (v.name.clone(), Some(v))))
        .collect();
    for (name, variant) in &methods {
        for &seed in &config.seeds {
            let cfg = config.train_config(*variant, seed);
            log::info!("training {name} (seed {seed})");
            let log_path = out.join("logs").join(format!("{}_seed{seed}.csv", file_stem(name)));
            let mut writer = EpochWriter::create(&log_path, cfg.tau_out)?;
            let mut write_err = None;
            let (model, outcome) = pipeline::train_model(&prepared, &cfg, |e| {
                if let Err(err) = writer.write(e) {
                    write_err.get_or_insert(err);
                }
            })?;
            if let Some(err) = write_err {
                return Err(err);
            }
            let preds = model.predict(&outcome.params, &prepared.data, test, cfg.batch_size)?;
            runs.push(RunResult {
                method: name.clone(),
                seed,
                scores: pipeline::score(&prepared, &cfg, &preds, &targets)?,
                best_epoch: outcome.best_epoch,
                curve: outcome.log,
            });
        }
    }

    let summary = std::iter::once(HA_METHOD.to_string())
        .chain(methods.iter().map(|(n, _)| n.clone()))
        .map(|method| {
            let of: Vec<&RunResult> = runs.iter().filter(|r| r.method == method).collect();
            MethodSummary {
                mean: average(&of),
                method,
            }
        })
        .collect();
    let report = ExperimentReport {
        config: config.clone(),
        stamp: Stamp {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            config_hash: config_hash(&config.train),
        },
        horizons: metrics::report_horizons(config.train.tau_out),
        runs,
        summary,
    };
    write_report(&report, out)?;
    Ok(report)
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// `method,seed,city,horizon,mae,rmse,count`; seed is `mean` for the averages.
pub fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("method,seed,city,horizon,mae,rmse,count\n");
    let mut row = |method: &str, seed: &str, scores: &[Scores]| {
        for s in scores {
            for h in &s.horizons {
                out.push_str(&format!(
                    "{method},{seed},{},{},{:.6},{:.6},{}\n",
                    s.city.as_deref().unwrap_or("all"),
                    h.horizon,
                    h.mae,
                    h.rmse,
                    h.count
                ));
            }
        }
    };
    for m in &report.summary {
        for r in report.runs.iter().filter(|r| r.method == m.method) {
            row(&r.method, &r.seed.to_string(), &r.scores);
        }
        row(&m.method, "mean", &m.mean);
    }
    out
}

fn write_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    let path = out.join("metrics.csv");
    fs::write(&path, metrics_csv(report)).map_err(Error::io(&path))?;
    let path = out.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(Error::json(&path))?;
    fs::write(&path, json + "\n").map_err(Error::io(&path))?;
    let series: Vec<svg::Series> = report
        .summary
        .iter()
        .map(|m| svg::Series {
            name: m.method.clone(),
            points: m.mean[0].horizons.iter().map(|h| (h.horizon as f64, h.mae)).collect(),
        })
        .collect();
    let chart = svg::line_chart("Test MAE by horizon", "horizon (h)", "MAE", &series);
    let path = out.join("mae.svg");
    fs::write(&path, chart).map_err(Error::io(&path))
}

/// One row of the λ sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// Best validation MAE (mean over horizons), averaged over seeds.
    pub val_mae: f64,
    pub city_edges: usize,
    /// `(city id, station-graph edge count)`
    pub station_edges: Vec<(String, usize)>,
}

/// Parses `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_values(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Validation(format!("bad value list `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let (start, end, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || !(end >= start) {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        // round to the step's precision so 1.0:1.5:0.1 yields 1.1, not 1.1000000000000001
        let digits = step.to_string().split('.').nth(1).map_or(0, str::len) as i32;
        let scale = 10f64.powi(digits);
        return Ok((0..=n).map(|i| ((start + i as f64 * step) * scale).round() / scale).collect());
    }
    spec.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
}

/// Trains the full model at each λ and reports validation MAE and graph sizes.
pub fn lambda_sweep(config: &ExperimentConfig, values: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::Validation("no λ values".into()));
    }
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let data_dir = config.materialize(out)?;
    let mut rows = Vec::with_capacity(values.len());
    for &lambda in values {
        let mut base = config.train.clone();
        base.lambda = lambda;
        let prepared = pipeline::prepare(&data_dir, &base)?;
        let mut total = 0.0;
        for &seed in &config.seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            log::info!("λ = {lambda}, seed {seed}");
            let (_, outcome) = pipeline::train_model(&prepared, &cfg, |_| {})?;
            let best = outcome
                .log
                .iter()
                .filter_map(|e| e.val_score)
                .fold(f64::INFINITY, f64::min);
            if !best.is_finite() {
                return Err(Error::Data("λ sweep needs a validation split and epochs > 0".into()));
            }
            total += best;
        }
        let data = &prepared.data;
        rows.push(SweepRow {
            lambda,
            val_mae: total / config.seeds.len() as f64,
            city_edges: data.city_topology().edge_count(),
            station_edges: data
                .network()
                .cities()
                .iter()
                .zip(data.station_topologies())
                .map(|(c, t)| (c.id.clone(), t.edge_count()))
                .collect(),
        });
    }
    write_sweep(&rows, out)?;
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,val_mae,city_edges");
    if let Some(r) = rows.first() {
        for (c, _) in &r.station_edges {
            out.push_str(&format!(",station_edges_{c}"));
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{:.6},{}", r.lambda, r.val_mae, r.city_edges));
        for (_, n) in &r.station_edges {
            out.push_str(&format!(",{n}"));
        }
        out.push('\n');
    }
    out
}

fn write_sweep(rows: &[SweepRow], out: &Path) -> Result<()> {
    let path = out.join("sweep.csv");
    fs::write(&path, sweep_csv(rows)).map_err(Error::io(&path))?;
    let series = [svg::Series {
        name: "HighAir".into(),
        points: rows.iter().map(|r| (r.lambda, r.val_mae)).collect(),
    }];
    let chart = svg::line_chart("Validation MAE by λ", "λ", "MAE", &series);
    let path = out.join("sweep.svg");
    fs::write(&path, chart).map_err(Error::io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_ranges() {
        assert_eq!(parse_values("1.0:1.5:0.1").unwrap(), [1.0, 1.1, 1.2, 1.3, 1.4, 1.5]);
        assert_eq!(parse_values("1.2").unwrap(), [1.2]);
        assert_eq!(parse_values("1.1, 1.3").unwrap(), [1.1, 1.3]);
        assert!(parse_values("1.5:1.0:0.1").is_err());
    }

    #[test]
    fn defaults_parse() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"synth": {}}"#).unwrap();
        assert_eq!(cfg.seeds, [1, 2, 3, 4, 5]);
        assert_eq!(cfg.ha_period, 168);
        cfg.validate().unwrap();
    }
}

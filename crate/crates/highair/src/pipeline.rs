//! End-to-end steps shared by the CLI and the experiment runner.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use highair_core::dataset::{make_windows, split_chronological, NormStats, SampleWindow, Split};
use highair_core::encoder::ModelData;
use highair_core::metrics::{self, Forecasts, HorizonMetrics};
use highair_core::nn::{checkpoint, ParamStore};
use highair_core::train::{self, EpochLog, TrainOutcome};
use highair_core::{HighAir, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frame::{self, format_timestamp, TimeSeriesFrame};

/// A loaded corpus with its windows, split and model-ready tensors.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub frame: TimeSeriesFrame,
    pub windows: Vec<SampleWindow>,
    pub split: Split,
    pub data: ModelData,
}

impl Prepared {
    pub fn windows_of(&self, split: SplitName) -> &[SampleWindow] {
        match split {
            SplitName::Train => &self.split.train,
            SplitName::Val => &self.split.val,
            SplitName::Test => &self.split.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Loads `dir` and fits normalization on the training hours.
pub fn prepare(dir: &Path, config: &TrainConfig) -> Result<Prepared> {
    prepare_with(dir, config, None)
}

/// Like [`prepare`] but reuses `norm` (from a checkpoint) when given.
pub fn prepare_with(dir: &Path, config: &TrainConfig, norm: Option<NormStats>) -> Result<Prepared> {
    config.validate().map_err(|e| Error::Validation(e.to_string()))?;
    if config.lambda == 1.0 {
        log::warn!("lambda = 1 keeps only each node's farthest nearest-neighbour pair at the radius boundary; connectivity is not guaranteed");
    }
    let (frame, network, obs) = frame::load_dataset(dir)?;
    let windows = make_windows(obs.hours(), config.tau_in, config.tau_out)?;
    let split = split_chronological(&windows, config.split)?;
    let norm = match norm {
        Some(n) => n,
        None => {
            let n = NormStats::fit(&network, &obs, split.train_hours())?;
            for name in n.constant_features() {
                log::warn!("feature `{name}` is constant on the training span; its std was floored");
            }
            n
        }
    };
    let data = ModelData::new(network, obs, norm, config.lambda)?;
    if let Some(cities) = &config.eval_cities {
        data.station_mask(Some(cities))?;
    }
    Ok(Prepared {
        frame,
        windows,
        split,
        data,
    })
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Metadata stored alongside the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub lambda: f64,
    pub norm: NormStats,
    pub best_epoch: Option<usize>,
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, manifest: &CheckpointManifest) -> Result<()> {
    let json = serde_json::to_vec(manifest).map_err(Error::json(path))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    fs::write(path, checkpoint::encode(params, &json)).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, CheckpointManifest)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let (params, json) = checkpoint::decode(&bytes)?;
    let manifest: CheckpointManifest = serde_json::from_slice(&json).map_err(Error::json(path))?;
    if manifest.config_hash != config_hash(&manifest.config) {
        return Err(Error::Data(format!("{}: config hash mismatch", path.display())));
    }
    Ok((params, manifest))
}

/// Trains one model, logging every epoch.
pub fn train_model(
    prepared: &Prepared,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(HighAir, TrainOutcome)> {
    let (model, params) = HighAir::new(config).map_err(|e| Error::Validation(e.to_string()))?;
    let outcome = train::train(&model, params, &prepared.data, &prepared.split, config, |e| {
        log::info!(
            "epoch {:>4}  loss {:.5}  val {}",
            e.epoch,
            e.train_loss,
            e.val_score.map_or("-".into(), |v| format!("{v:.4}"))
        );
        on_epoch(e)
    })?;
    Ok((model, outcome))
}

/// Appends epoch rows to a CSV log, flushing after each one.
pub struct EpochWriter {
    path: PathBuf,
    file: fs::File,
    started: std::time::Instant,
    horizons: Vec<usize>,
}

impl EpochWriter {
    pub fn create(path: &Path, tau_out: usize) -> Result<Self> {
        let horizons = metrics::report_horizons(tau_out);
        let mut file = fs::File::create(path).map_err(Error::io(path))?;
        let mut header = String::from("epoch,train_loss");
        for k in &horizons {
            header.push_str(&format!(",val_mae_{k}h"));
        }
        header.push_str(",val_mae_mean,wall_seconds");
        writeln!(file, "{header}").map_err(Error::io(path))?;
        Ok(EpochWriter {
            path: path.to_path_buf(),
            file,
            started: std::time::Instant::now(),
            horizons,
        })
    }

    pub fn write(&mut self, e: &EpochLog) -> Result<()> {
        let mut row = format!("{},{:.6}", e.epoch, e.train_loss);
        for k in &self.horizons {
            match e.val_mae.iter().find(|(h, _)| h == k) {
                Some((_, v)) => row.push_str(&format!(",{v:.6}")),
                None => row.push(','),
            }
        }
        row.push_str(&e.val_score.map_or(",".into(), |v| format!(",{v:.6}")));
        row.push_str(&format!(",{:.3}", self.started.elapsed().as_secs_f64()));
        writeln!(self.file, "{row}").map_err(Error::io(&self.path))?;
        self.file.flush().map_err(Error::io(&self.path))
    }
}

/// `train` subcommand: fits a model and writes `checkpoint.bin` and `train_log.csv`.
pub fn run_train(data_dir: &Path, config: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    let prepared = prepare(data_dir, config)?;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut writer = EpochWriter::create(&out.join("train_log.csv"), config.tau_out)?;
    let mut write_err = None;
    let (_, outcome) = train_model(&prepared, config, |e| {
        if let Err(err) = writer.write(e) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err);
    }
    let manifest = CheckpointManifest {
        config: config.clone(),
        config_hash: config_hash(config),
        seed: config.seed,
        lambda: config.lambda,
        norm: prepared.data.norm().clone(),
        best_epoch: outcome.best_epoch,
    };
    save_checkpoint(&out.join("checkpoint.bin"), &outcome.params, &manifest)?;
    Ok(outcome)
}

/// Loads a checkpoint and the corpus it should run on.
pub fn restore(checkpoint: &Path, data_dir: &Path) -> Result<(HighAir, ParamStore, CheckpointManifest, Prepared)> {
    let (params, manifest) = load_checkpoint(checkpoint)?;
    let model = HighAir::with_params(&manifest.config, &params)?;
    let prepared = prepare_with(data_dir, &manifest.config, Some(manifest.norm.clone()))?;
    Ok((model, params, manifest, prepared))
}

/// Per-horizon metrics, overall and per evaluated city.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// `None` for the union of evaluated cities.
    pub city: Option<String>,
    pub horizons: Vec<HorizonMetrics>,
}

/// Scores forecasts over the evaluated cities and each of them alone.
pub fn score(prepared: &Prepared, config: &TrainConfig, preds: &Forecasts, targets: &Forecasts) -> Result<Vec<Scores>> {
    let horizons = metrics::report_horizons(config.tau_out);
    let data = &prepared.data;
    let mask = data.station_mask(config.eval_cities.as_deref())?;
    let mut out = vec![Scores {
        city: None,
        horizons: metrics::horizon_metrics(preds, targets, &horizons, Some(&mask))?,
    }];
    let cities: Vec<String> = match &config.eval_cities {
        Some(c) => c.clone(),
        None => data.network().cities().iter().map(|c| c.id.clone()).collect(),
    };
    for city in cities {
        let m = data.station_mask(Some(std::slice::from_ref(&city)))?;
        out.push(Scores {
            city: Some(city),
            horizons: metrics::horizon_metrics(preds, targets, &horizons, Some(&m))?,
        });
    }
    Ok(out)
}

pub fn write_scores_csv(path: &Path, scores: &[Scores]) -> Result<()> {
    let mut text = String::from("city,horizon,mae,rmse,count\n");
    for s in scores {
        for h in &s.horizons {
            text.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                s.city.as_deref().unwrap_or("all"),
                h.horizon,
                h.mae,
                h.rmse,
                h.count
            ));
        }
    }
    fs::write(path, text).map_err(Error::io(path))
}

/// `evaluate` subcommand.
pub fn run_evaluate(checkpoint: &Path, data_dir: &Path, split: SplitName, out: &Path) -> Result<Vec<Scores>> {
    let (model, params, manifest, prepared) = restore(checkpoint, data_dir)?;
    let windows = prepared.windows_of(split);
    if windows.is_empty() {
        return Err(Error::Data(format!("the {split:?} split is empty")));
    }
    let preds = model.predict(&params, &prepared.data, windows, manifest.config.batch_size)?;
    let targets = Forecasts::targets(prepared.data.raw(), windows)?;
    let scores = score(&prepared, &manifest.config, &preds, &targets)?;
    write_scores_csv(out, &scores)?;
    Ok(scores)
}

/// `forecast` subcommand: `at` is the last observed hour.
pub fn run_forecast(checkpoint: &Path, data_dir: &Path, at: DateTime<Utc>, out: &Path) -> Result<()> {
    let (model, params, manifest, prepared) = restore(checkpoint, data_dir)?;
    let cfg = &manifest.config;
    let origin = prepared
        .frame
        .hour_index(at)
        .ok_or_else(|| Error::Data(format!("{} is not an hour in the data", format_timestamp(at))))?;
    if origin + 1 < cfg.tau_in || origin + cfg.tau_out >= prepared.frame.hours() {
        return Err(Error::Data(format!(
            "forecast at {} needs {} hours of history and {} hours of weather after it",
            format_timestamp(at),
            cfg.tau_in,
            cfg.tau_out
        )));
    }
    let window = SampleWindow {
        origin,
        tau_in: cfg.tau_in,
        tau_out: cfg.tau_out,
    };
    let result = model.forecast(&params, &prepared.data, window)?;
    let mut text = String::from("station_id,city_id,horizon,timestamp,aqi\n");
    for (s, row) in result.per_station.iter().enumerate() {
        let station = &prepared.data.network().stations()[s];
        let city = &prepared.data.network().cities()[station.city].id;
        for (i, v) in row.iter().enumerate() {
            let t = at + Duration::hours(i as i64 + 1);
            text.push_str(&format!("{},{city},{},{},{v:.6}\n", station.id, i + 1, format_timestamp(t)));
        }
    }
    fs::write(out, text).map_err(Error::io(out))
}

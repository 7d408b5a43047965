//! Mini-batch Adam training with best-validation selection.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::dataset::Split;
use crate::encoder::{Batch, ModelData};
use crate::error::{Error, Result};
use crate::metrics::{self, Forecasts};
use crate::model::{batch_loss, HighAir};
use crate::nn::{Adam, AdamConfig, ParamStore};

/// Summary of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `(horizon, validation MAE)` for the reported horizons.
    pub val_mae: Vec<(usize, f64)>,
    /// Validation MAE averaged over every horizon; drives checkpoint selection.
    pub val_score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation score (the last
    /// epoch when there is no validation split).
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_45;

/// Trains `params` in place of a copy and returns the best one.
pub fn train(
    model: &HighAir,
    params: ParamStore,
    data: &ModelData,
    split: &Split,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            log: Vec::new(),
            best_epoch: None,
        });
    }
    if split.train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let loss_mask = if config.loss_on_eval_cities {
        Some(data.station_mask(config.eval_cities.as_deref())?)
    } else {
        None
    };
    let eval_mask = data.station_mask(config.eval_cities.as_deref())?;
    let val_targets = if split.val.is_empty() {
        None
    } else {
        Some(Forecasts::targets(data.raw(), &split.val)?)
    };
    let horizons = metrics::report_horizons(config.tau_out);

    let mut store = params;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order = split.train.clone();
    let mut tape = Tape::new();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            tape.reset();
            let batch = Batch::build(data, chunk, &model.ablation())?;
            let bound = store.bind(&mut tape);
            let loss = batch_loss(model, &mut tape, &bound, &batch, loss_mask.as_deref())?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(alloc::format!(
                    "loss is {value} at epoch {epoch}, batch {bi} (window origins {}..={})",
                    chunk.iter().map(|w| w.origin).min().unwrap_or(0),
                    chunk.iter().map(|w| w.origin).max().unwrap_or(0),
                )));
            }
            tape.backward(loss)?;
            let mut grads = store.grads(&tape, &bound);
            adam.step(&mut store, &mut grads)?;
            total += value;
            batches += 1;
        }

        let (val_mae, val_score) = match &val_targets {
            Some(targets) => {
                let preds = model.predict(&store, data, &split.val, config.batch_size)?;
                let per: Vec<(usize, f64)> = horizons
                    .iter()
                    .map(|&k| Ok((k, metrics::mae(&preds, targets, k, Some(&eval_mask))?)))
                    .collect::<Result<_>>()?;
                let mut all = 0.0;
                for k in 1..=config.tau_out {
                    all += metrics::mae(&preds, targets, k, Some(&eval_mask))?;
                }
                (per, Some(all / config.tau_out as f64))
            }
            None => (Vec::new(), None),
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / batches as f64,
            val_mae,
            val_score,
        };
        on_epoch(&entry);
        let score = val_score.unwrap_or(f64::INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score < *b,
        };
        if improved && val_score.is_some() {
            best = Some((score, epoch, store.clone()));
        }
        log.push(entry);
    }

    Ok(match best {
        Some((_, epoch, params)) => TrainOutcome {
            params,
            log,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            params: store,
            log,
            best_epoch: None,
        },
    })
}

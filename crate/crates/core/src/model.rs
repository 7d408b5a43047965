//! The HighAir network: hierarchical encoder feeding a per-station LSTM
//! encoder-decoder, plus the training objective.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::config::{Ablation, TrainConfig};
use crate::dataset::{SampleWindow, WEATHER_DIM};
use crate::encoder::{
    lower_update, message_pass_city, message_pass_station, upper_delivery_step, Batch, ModelData,
    EDGE_DIM, STATION_ATTR_DIM, WIND_DIM,
};
use crate::error::{Error, Result};
use crate::metrics::Forecasts;
use crate::nn::{Activation, Bound, Fnn, Lstm, ParamStore};
use crate::tensor::Tensor;

/// Layer widths derived from a [`TrainConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub tau_in: usize,
    pub tau_out: usize,
    pub gnn_hidden: usize,
    pub lstm_hidden: usize,
    pub lu_dim: usize,
}

impl ModelDims {
    pub fn from_config(config: &TrainConfig) -> Self {
        ModelDims {
            tau_in: config.tau_in,
            tau_out: config.tau_out,
            gnn_hidden: config.gnn_hidden,
            lstm_hidden: config.lstm_hidden,
            lu_dim: config.lu_width(),
        }
    }
}

/// Structure of the model; the learnable values live in a [`ParamStore`].
///
/// City-level groups are shared by all cities and the station-level groups,
/// encoder, decoder and head by all stations: each group exists once and is
/// applied to every row of the batched layout.
#[derive(Clone, Debug)]
pub struct HighAir {
    dims: ModelDims,
    ablation: Ablation,
    city_lstm: Option<Lstm>,
    city_proj: Option<Fnn>,
    city_msg: Option<Fnn>,
    city_update: Option<Fnn>,
    lu: Option<Fnn>,
    station_msg: Fnn,
    station_update: Fnn,
    encoder: Lstm,
    decoder: Lstm,
    head: Fnn,
}

/// Denormalized forecast for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub window: SampleWindow,
    /// `per_station[s][k - 1]` is the forecast for hour `origin + k`.
    pub per_station: Vec<Vec<f64>>,
}

impl HighAir {
    /// Allocates and initializes the model's parameters.
    pub fn new(config: &TrainConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let ablation = config.ablation()?;
        let dims = ModelDims::from_config(config);
        let seed = config.seed;
        let g = dims.gnn_hidden;
        let h = dims.lstm_hidden;
        let tanh = [Activation::Tanh];
        let mut store = ParamStore::new();

        let (mut city_lstm, mut city_proj, mut city_msg, mut city_update, mut lu) =
            (None, None, None, None, None);
        if !ablation.no_hierarchy {
            if ablation.no_city_lstm {
                city_proj = Some(Fnn::new(&mut store, "city_proj_fnn", &[1, g], &tanh, seed)?);
            } else {
                city_lstm = Some(Lstm::new(&mut store, "city_lstm", 1, g, seed)?);
            }
            city_msg = Some(Fnn::new(&mut store, "city_msg_fnn", &[2 * g + EDGE_DIM, g], &tanh, seed)?);
            city_update = Some(Fnn::new(&mut store, "city_update_fnn", &[2 * g, g], &tanh, seed)?);
            lu = Some(Fnn::new(&mut store, "lu_fnn", &[g, dims.lu_dim], &tanh, seed)?);
        }
        let u_dim = Self::u_dim_for(&dims, &ablation);
        let station_msg = Fnn::new(
            &mut store,
            "station_msg_fnn",
            &[2 * STATION_ATTR_DIM + EDGE_DIM, g],
            &tanh,
            seed,
        )?;
        let station_update = Fnn::new(
            &mut store,
            "station_update_fnn",
            &[g + STATION_ATTR_DIM + u_dim, g],
            &tanh,
            seed,
        )?;
        let encoder = Lstm::new(&mut store, "encoder_lstm", g, h, seed)?;
        let decoder = Lstm::new(&mut store, "decoder_lstm", 1 + WEATHER_DIM, h, seed)?;
        let head = Fnn::new(&mut store, "output_head", &[h, 1], &[Activation::Linear], seed)?;
        let model = HighAir {
            dims,
            ablation,
            city_lstm,
            city_proj,
            city_msg,
            city_update,
            lu,
            station_msg,
            station_update,
            encoder,
            decoder,
            head,
        };
        Ok((model, store))
    }

    /// Rebuilds the structure for `config` and checks that `store` matches it
    /// name-for-name and shape-for-shape.
    pub fn with_params(config: &TrainConfig, store: &ParamStore) -> Result<Self> {
        let (model, fresh) = Self::new(config)?;
        if fresh.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                fresh.len(),
                store.len()
            )));
        }
        for (name, t) in fresh.iter() {
            let other = store
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if other.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    other.shape(),
                    t.shape()
                )));
            }
            if store.id(name) != fresh.id(name) {
                return Err(Error::Checkpoint(format!("parameter `{name}` out of order")));
            }
        }
        Ok(model)
    }

    fn u_dim_for(dims: &ModelDims, ablation: &Ablation) -> usize {
        WEATHER_DIM + if ablation.no_dynamic { WIND_DIM } else { 0 } + dims.lu_dim
    }

    /// Width of the global attribute `u`.
    pub fn u_dim(&self) -> usize {
        Self::u_dim_for(&self.dims, &self.ablation)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn city_lstm(&self) -> Option<&Lstm> {
        self.city_lstm.as_ref()
    }

    pub fn city_proj(&self) -> Option<&Fnn> {
        self.city_proj.as_ref()
    }

    pub fn city_msg(&self) -> Option<&Fnn> {
        self.city_msg.as_ref()
    }

    pub fn city_update(&self) -> Option<&Fnn> {
        self.city_update.as_ref()
    }

    pub fn lu(&self) -> Option<&Fnn> {
        self.lu.as_ref()
    }

    pub fn station_msg(&self) -> &Fnn {
        &self.station_msg
    }

    pub fn station_update(&self) -> &Fnn {
        &self.station_update
    }

    pub fn encoder(&self) -> &Lstm {
        &self.encoder
    }

    pub fn decoder(&self) -> &Lstm {
        &self.decoder
    }

    pub fn head(&self) -> &Fnn {
        &self.head
    }

    /// Runs the hierarchical encoder over every input slot, returning the
    /// station representations `x'` per slot (`[B*S, gnn_hidden]` each).
    pub fn encode_window(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Vec<Var>> {
        if batch.slots.len() != self.dims.tau_in {
            return Err(Error::Data(format!(
                "batch has {} input slots, model expects {}",
                batch.slots.len(),
                self.dims.tau_in
            )));
        }
        let city_rows = batch.windows.len() * batch.cities;
        let mut city_state = self.city_lstm.as_ref().map(|l| l.zero_state(tape, city_rows));
        let mut out = Vec::with_capacity(batch.slots.len());
        for slot in &batch.slots {
            let context = tape.constant(slot.city_context.clone());
            let city_repr = if self.ablation.no_hierarchy {
                None
            } else {
                let aqi = tape.constant(slot.city_aqi.clone());
                let x = match (&self.city_lstm, city_state) {
                    (Some(lstm), Some(state)) => {
                        let next = upper_delivery_step(tape, bound, lstm, aqi, state)?;
                        city_state = Some(next);
                        next.h
                    }
                    _ => self
                        .city_proj
                        .as_ref()
                        .expect("city projection present without city LSTM")
                        .forward(tape, bound, aqi)?,
                };
                let ew = tape.constant(slot.city_edge_weights.clone());
                let msg = self.city_msg.as_ref().expect("hierarchy enabled");
                let upd = self.city_update.as_ref().expect("hierarchy enabled");
                Some(message_pass_city(tape, bound, msg, upd, x, &batch.city_edges, ew)?)
            };
            let u_city = lower_update(tape, bound, self.lu.as_ref(), city_repr, context, self.dims.lu_dim)?;
            let u = tape.gather_rows(u_city, &batch.station_city)?;
            let x = tape.constant(slot.station_attr.clone());
            let ew = tape.constant(slot.station_edge_weights.clone());
            let xp = message_pass_station(
                tape,
                bound,
                &self.station_msg,
                &self.station_update,
                x,
                &batch.station_edges,
                ew,
                u,
            )?;
            out.push(xp);
        }
        Ok(out)
    }

    /// Normalized predictions `[B*S, tau_out]`.
    ///
    /// The decoder starts from the encoder's final state; step `k` consumes
    /// `[previous forecast ‖ weather at origin + k]`, where step 1's previous
    /// forecast is the last observed AQI.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        if batch.decoder_weather.len() != self.dims.tau_out {
            return Err(Error::Data(format!(
                "batch carries {} future weather slots, model forecasts {}",
                batch.decoder_weather.len(),
                self.dims.tau_out
            )));
        }
        let xs = self.encode_window(tape, bound, batch)?;
        let rows = batch.rows();
        let start = self.encoder.zero_state(tape, rows);
        let encoded = self.encoder.unroll(tape, bound, &xs, start)?;
        let mut state = *encoded.last().expect("tau_in > 0");
        let mut prev = tape.constant(batch.last_aqi.clone());
        let mut preds = Vec::with_capacity(self.dims.tau_out);
        for weather in &batch.decoder_weather {
            let w = tape.constant(weather.clone());
            let input = tape.concat(&[prev, w], 1)?;
            state = self.decoder.step(tape, bound, input, state)?;
            let y = self.head.forward(tape, bound, state.h)?;
            preds.push(y);
            prev = y;
        }
        tape.concat(&preds, 1)
    }

    /// Denormalized forecasts for `windows`, evaluated in chunks of `batch_size`.
    pub fn predict(
        &self,
        store: &ParamStore,
        data: &ModelData,
        windows: &[SampleWindow],
        batch_size: usize,
    ) -> Result<Forecasts> {
        let s = data.network().station_count();
        let k = self.dims.tau_out;
        let mut values = Vec::with_capacity(windows.len() * s * k);
        let mut tape = Tape::new();
        for chunk in windows.chunks(batch_size.max(1)) {
            tape.reset();
            let batch = Batch::build(data, chunk, &self.ablation)?;
            let bound = store.bind_frozen(&mut tape);
            let y = self.forward(&mut tape, &bound, &batch)?;
            let stats = data.norm().aqi;
            values.extend(tape.value(y).data().iter().map(|z| stats.invert(*z)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite forecast".into()));
        }
        Forecasts::new(windows.iter().map(|w| w.origin).collect(), s, k, values)
    }

    /// Forecast for a single window.
    pub fn forecast(&self, store: &ParamStore, data: &ModelData, window: SampleWindow) -> Result<ForecastResult> {
        let f = self.predict(store, data, &[window], 1)?;
        let per_station = (0..f.stations())
            .map(|s| (1..=f.horizon()).map(|k| f.get(0, s, k)).collect())
            .collect();
        Ok(ForecastResult { window, per_station })
    }
}

/// Per-element weights that turn a weighted squared-error sum into the
/// objective: each window contributes its mean over `tau_out` horizons and the
/// included stations, and windows are averaged.
pub fn loss_weights(windows: usize, tau_out: usize, station_mask: &[bool]) -> Result<Tensor> {
    let included = station_mask.iter().filter(|m| **m).count();
    if included == 0 || windows == 0 {
        return Err(Error::Config("loss over an empty station set".into()));
    }
    let w = 1.0 / (windows * tau_out * included) as f64;
    let mut data = Vec::with_capacity(windows * station_mask.len() * tau_out);
    for _ in 0..windows {
        for m in station_mask {
            data.extend(core::iter::repeat_n(if *m { w } else { 0.0 }, tau_out));
        }
    }
    Ok(Tensor::matrix(windows * station_mask.len(), tau_out, data))
}

/// L = Σ (aqi − âqi)² / (tau_out · Σ_a |S_a|), in normalized units.
///
/// `weights` comes from [`loss_weights`].
pub fn mse_loss(tape: &mut Tape, preds: Var, targets: Var, weights: &Tensor) -> Result<Var> {
    if tape.shape(preds) != weights.shape() {
        return Err(Error::Shape {
            op: "loss",
            lhs: tape.shape(preds).to_vec(),
            rhs: weights.shape().to_vec(),
        });
    }
    let diff = tape.sub(preds, targets)?;
    let sq = tape.mul(diff, diff)?;
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(sq, w)?;
    Ok(tape.sum_all(weighted))
}

/// Loss over a batch with every station included.
pub fn batch_loss(
    model: &HighAir,
    tape: &mut Tape,
    bound: &Bound,
    batch: &Batch,
    station_mask: Option<&[bool]>,
) -> Result<Var> {
    let preds = model.forward(tape, bound, batch)?;
    let all = vec![true; batch.stations];
    let mask = station_mask.unwrap_or(&all);
    let weights = loss_weights(batch.windows.len(), model.dims.tau_out, mask)?;
    let targets = tape.constant(batch.targets.clone());
    mse_loss(tape, preds, targets, &weights)
}

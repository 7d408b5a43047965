//! Per-slot hierarchical state computation.
//!
//! Each slot runs, in order: upper delivery (city mean AQI through the shared
//! city LSTM), one message-passing round on the city graph, lower updating
//! into the per-city global attribute `u`, and one message-passing round on
//! the station graphs conditioned on `u`.
//!
//! All functions operate on batched row layouts: a batch of `B` windows over
//! `N` cities and `S` stations uses `B * N` city rows and `B * S` station rows,
//! and edge lists are replicated per window with node offsets.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::config::Ablation;
use crate::dataset::{Network, NormStats, Observations, SampleWindow, POI_DIM, WEATHER_DIM};
use crate::error::{Error, Result};
use crate::graph::{GraphTopology, Level, WindVector};
use crate::nn::{Bound, Fnn, Lstm, LstmState};
use crate::tensor::Tensor;

/// Station node attribute: `[aqi ‖ poi]`.
pub const STATION_ATTR_DIM: usize = 1 + POI_DIM;
/// Edge weight: `[gs, ws]`.
pub const EDGE_DIM: usize = 2;
/// Wind vector width appended to `u` when wind leaves the edge weights.
pub const WIND_DIM: usize = 2;

/// Directed edges as parallel source/destination arrays.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn from_topology(topo: &GraphTopology, node_ids: &[usize]) -> Self {
        EdgeList {
            src: topo.edges().iter().map(|e| node_ids[e.src]).collect(),
            dst: topo.edges().iter().map(|e| node_ids[e.dst]).collect(),
        }
    }

    /// `copies` disjoint replicas, replica `b` offset by `b * nodes`.
    pub fn replicate(&self, copies: usize, nodes: usize) -> Self {
        let mut out = EdgeList {
            src: Vec::with_capacity(self.len() * copies),
            dst: Vec::with_capacity(self.len() * copies),
        };
        for b in 0..copies {
            out.src.extend(self.src.iter().map(|s| s + b * nodes));
            out.dst.extend(self.dst.iter().map(|d| d + b * nodes));
        }
        out
    }
}

/// AQI_a = mean of the city's station AQIs.
pub fn city_mean_aqi(network: &Network, station_aqi: &[f64]) -> Vec<f64> {
    network
        .cities()
        .iter()
        .map(|c| c.stations.iter().map(|&s| station_aqi[s]).sum::<f64>() / c.stations.len() as f64)
        .collect()
}

/// One shared-parameter city LSTM step over `city_aqi: [rows, 1]`.
///
/// The returned hidden state is the city node attribute for this slot.
pub fn upper_delivery_step(
    tape: &mut Tape,
    bound: &Bound,
    city_lstm: &Lstm,
    city_aqi: Var,
    state: LstmState,
) -> Result<LstmState> {
    city_lstm.step(tape, bound, city_aqi, state)
}

/// One aggregation/update round.
///
/// For node `a`: `r_a = mean over edges (s -> a) of msg([x_s ‖ x_a ‖ e])`
/// (zero without in-edges), then `x'_a = update([r_a ‖ x_a ‖ global_a])`.
#[allow(clippy::too_many_arguments)]
pub fn message_pass(
    tape: &mut Tape,
    bound: &Bound,
    msg: &Fnn,
    update: &Fnn,
    x: Var,
    edges: &EdgeList,
    edge_weights: Var,
    global: Option<Var>,
) -> Result<Var> {
    let rows = tape.shape(x)[0];
    if tape.shape(edge_weights) != [edges.len(), EDGE_DIM] {
        return Err(Error::Shape {
            op: "message_pass",
            lhs: tape.shape(edge_weights).to_vec(),
            rhs: vec![edges.len(), EDGE_DIM],
        });
    }
    let xs = tape.gather_rows(x, &edges.src)?;
    let xd = tape.gather_rows(x, &edges.dst)?;
    let m_in = tape.concat(&[xs, xd, edge_weights], 1)?;
    let m = msg.forward(tape, bound, m_in)?;
    let r = tape.segment_mean(m, &edges.dst, rows)?;
    let mut parts = vec![r, x];
    parts.extend(global);
    let upd_in = tape.concat(&parts, 1)?;
    update.forward(tape, bound, upd_in)
}

/// City-level round: `x'_a = ϕ₁([r_a ‖ x_a])`.
pub fn message_pass_city(
    tape: &mut Tape,
    bound: &Bound,
    msg: &Fnn,
    update: &Fnn,
    x: Var,
    edges: &EdgeList,
    edge_weights: Var,
) -> Result<Var> {
    message_pass(tape, bound, msg, update, x, edges, edge_weights, None)
}

/// Station-level round: `x'_{a,i} = ϕ₂([r ‖ x ‖ u_a])`, `u` given per station row.
#[allow(clippy::too_many_arguments)]
pub fn message_pass_station(
    tape: &mut Tape,
    bound: &Bound,
    msg: &Fnn,
    update: &Fnn,
    x: Var,
    edges: &EdgeList,
    edge_weights: Var,
    u: Var,
) -> Result<Var> {
    message_pass(tape, bound, msg, update, x, edges, edge_weights, Some(u))
}

/// Global attribute `u = [context ‖ lu(x')]`; without an LU network the
/// lower-updating part is `lu_dim` zeros.
pub fn lower_update(
    tape: &mut Tape,
    bound: &Bound,
    lu: Option<&Fnn>,
    city_repr: Option<Var>,
    context: Var,
    lu_dim: usize,
) -> Result<Var> {
    let rows = tape.shape(context)[0];
    let lu_vec = match (lu, city_repr) {
        (Some(f), Some(x)) => f.forward(tape, bound, x)?,
        _ => tape.constant(Tensor::zeros(&[rows, lu_dim])),
    };
    if tape.shape(lu_vec) != [rows, lu_dim] {
        return Err(Error::Shape {
            op: "lower_update",
            lhs: tape.shape(lu_vec).to_vec(),
            rhs: vec![rows, lu_dim],
        });
    }
    tape.concat(&[context, lu_vec], 1)
}

/// Dataset prepared for the model: normalized observations, static graphs
/// and per-hour edge weights.
#[derive(Clone, Debug)]
pub struct ModelData {
    network: Network,
    raw: Observations,
    norm_obs: Observations,
    norm: NormStats,
    poi: Vec<[f64; POI_DIM]>,
    lambda: f64,
    city_topology: GraphTopology,
    station_topologies: Vec<GraphTopology>,
    city_edges: EdgeList,
    station_edges: EdgeList,
    city_gs: Vec<f64>,
    station_gs: Vec<f64>,
    city_ws: Vec<f64>,
    station_ws: Vec<f64>,
    station_city: Vec<usize>,
}

impl ModelData {
    pub fn new(network: Network, raw: Observations, norm: NormStats, lambda: f64) -> Result<Self> {
        if raw.station_count() != network.station_count() || raw.city_count() != network.city_count() {
            return Err(Error::Data("observations do not match the network".into()));
        }
        let norm_obs = norm.normalize(&raw);
        let poi = network.stations().iter().map(|s| norm.normalize_poi(&s.poi)).collect();

        let city_points: Vec<_> = network.cities().iter().map(|c| c.location).collect();
        let mut city_topology = GraphTopology::build_or_edgeless(&city_points, lambda, Level::City)?;
        let city_ids: Vec<usize> = (0..network.city_count()).collect();
        let city_edges = EdgeList::from_topology(&city_topology, &city_ids);

        let mut station_topologies = Vec::with_capacity(network.city_count());
        let mut station_edges = EdgeList::default();
        for c in network.cities() {
            let pts: Vec<_> = c.stations.iter().map(|&s| network.stations()[s].location).collect();
            let topo = GraphTopology::build_or_edgeless(&pts, lambda, Level::Station)?;
            let e = EdgeList::from_topology(&topo, &c.stations);
            station_edges.src.extend(e.src);
            station_edges.dst.extend(e.dst);
            station_topologies.push(topo);
        }

        let city_gs = city_topology.gs().to_vec();
        let station_gs: Vec<f64> = station_topologies.iter().flat_map(|t| t.gs().iter().copied()).collect();
        let hours = raw.hours();
        let mut city_ws = Vec::with_capacity(hours * city_edges.len());
        let mut station_ws = Vec::with_capacity(hours * station_edges.len());
        for h in 0..hours {
            let winds = raw.winds_at(h);
            city_topology.refresh_edge_weights(winds)?;
            city_ws.extend_from_slice(city_topology.ws());
            for (c, topo) in station_topologies.iter_mut().enumerate() {
                // stations share their city's wind
                let w = vec![winds[c]; topo.node_count()];
                topo.refresh_edge_weights(&w)?;
                station_ws.extend_from_slice(topo.ws());
            }
        }
        let station_city = network.stations().iter().map(|s| s.city).collect();
        Ok(ModelData {
            network,
            raw,
            norm_obs,
            norm,
            poi,
            lambda,
            city_topology,
            station_topologies,
            city_edges,
            station_edges,
            city_gs,
            station_gs,
            city_ws,
            station_ws,
            station_city,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn raw(&self) -> &Observations {
        &self.raw
    }

    pub fn normalized(&self) -> &Observations {
        &self.norm_obs
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn city_topology(&self) -> &GraphTopology {
        &self.city_topology
    }

    pub fn station_topologies(&self) -> &[GraphTopology] {
        &self.station_topologies
    }

    pub fn city_edges(&self) -> &EdgeList {
        &self.city_edges
    }

    pub fn station_edges(&self) -> &EdgeList {
        &self.station_edges
    }

    /// `[gs, ws]` for every city edge at `hour`.
    pub fn city_edge_weights(&self, hour: usize) -> impl Iterator<Item = [f64; 2]> + '_ {
        let e = self.city_edges.len();
        self.city_gs
            .iter()
            .zip(&self.city_ws[hour * e..(hour + 1) * e])
            .map(|(g, w)| [*g, *w])
    }

    /// `[gs, ws]` for every station edge at `hour`.
    pub fn station_edge_weights(&self, hour: usize) -> impl Iterator<Item = [f64; 2]> + '_ {
        let e = self.station_edges.len();
        self.station_gs
            .iter()
            .zip(&self.station_ws[hour * e..(hour + 1) * e])
            .map(|(g, w)| [*g, *w])
    }

    pub fn station_city(&self) -> &[usize] {
        &self.station_city
    }

    pub fn normalized_poi(&self) -> &[[f64; POI_DIM]] {
        &self.poi
    }

    pub fn station_mask(&self, cities: Option<&[alloc::string::String]>) -> Result<Vec<bool>> {
        let Some(cities) = cities else {
            return Ok(vec![true; self.network.station_count()]);
        };
        let mut keep = vec![false; self.network.city_count()];
        for id in cities {
            let c = self
                .network
                .city_index(id)
                .ok_or_else(|| Error::Config(alloc::format!("unknown evaluation city `{id}`")))?;
            keep[c] = true;
        }
        Ok(self.station_city.iter().map(|c| keep[*c]).collect())
    }
}

/// Model inputs for one slot of a batch.
#[derive(Clone, Debug)]
pub struct SlotInputs {
    /// `[B*S, STATION_ATTR_DIM]`
    pub station_attr: Tensor,
    /// `[B*N, 1]`
    pub city_aqi: Tensor,
    /// `[B*N, WEATHER_DIM (+ WIND_DIM)]`: the non-learned part of `u`.
    pub city_context: Tensor,
    /// `[B*Ec, 2]`
    pub city_edge_weights: Tensor,
    /// `[B*Es, 2]`
    pub station_edge_weights: Tensor,
}

/// Everything one forward pass over a set of windows needs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub windows: Vec<SampleWindow>,
    pub cities: usize,
    pub stations: usize,
    pub slots: Vec<SlotInputs>,
    /// Per decoder step: `[B*S, WEATHER_DIM]`.
    pub decoder_weather: Vec<Tensor>,
    /// `[B*S, 1]` last observed AQI.
    pub last_aqi: Tensor,
    /// `[B*S, tau_out]` normalized targets.
    pub targets: Tensor,
    pub city_edges: EdgeList,
    pub station_edges: EdgeList,
    /// Station row -> city row.
    pub station_city: Vec<usize>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.windows.len() * self.stations
    }

    pub fn build(data: &ModelData, windows: &[SampleWindow], ablation: &Ablation) -> Result<Self> {
        let first = *windows
            .first()
            .ok_or_else(|| Error::Data("empty batch".into()))?;
        let (tau_in, tau_out) = (first.tau_in, first.tau_out);
        let obs = data.normalized();
        if windows
            .iter()
            .any(|w| w.tau_in != tau_in || w.tau_out != tau_out || w.first_input() > w.origin)
        {
            return Err(Error::Data("windows in one batch must share tau_in/tau_out".into()));
        }
        if let Some(w) = windows.iter().find(|w| w.target_end() >= obs.hours()) {
            return Err(Error::Data(alloc::format!(
                "window at hour {} needs data up to hour {} but only {} hours exist",
                w.origin,
                w.target_end(),
                obs.hours()
            )));
        }
        let b = windows.len();
        let (n, s) = (data.network.city_count(), data.network.station_count());
        let wind_dim = if ablation.no_dynamic { WIND_DIM } else { 0 };
        let ctx_dim = WEATHER_DIM + wind_dim;
        let (ec, es) = (data.city_edges.len(), data.station_edges.len());

        let mut slots = Vec::with_capacity(tau_in);
        for step in 0..tau_in {
            let mut station_attr = Vec::with_capacity(b * s * STATION_ATTR_DIM);
            let mut city_aqi = Vec::with_capacity(b * n);
            let mut city_context = Vec::with_capacity(b * n * ctx_dim);
            let mut cew = Vec::with_capacity(b * ec * EDGE_DIM);
            let mut sew = Vec::with_capacity(b * es * EDGE_DIM);
            for w in windows {
                let h = w.first_input() + step;
                let aqi = obs.aqi_at(h);
                for (st, a) in aqi.iter().enumerate() {
                    station_attr.push(*a);
                    if ablation.no_poi {
                        station_attr.extend_from_slice(&[0.0; POI_DIM]);
                    } else {
                        station_attr.extend_from_slice(&data.poi[st]);
                    }
                }
                city_aqi.extend(city_mean_aqi(&data.network, aqi));
                for c in 0..n {
                    if ablation.no_weather {
                        city_context.extend_from_slice(&[0.0; WEATHER_DIM]);
                    } else {
                        city_context.extend_from_slice(obs.weather(h, c));
                    }
                    if ablation.no_dynamic {
                        let WindVector { east, north } = obs.wind(h, c);
                        city_context.extend_from_slice(&[east, north]);
                    }
                }
                for [g, ws] in data.city_edge_weights(h) {
                    cew.extend_from_slice(&[g, if ablation.no_dynamic { 0.0 } else { ws }]);
                }
                for [g, ws] in data.station_edge_weights(h) {
                    sew.extend_from_slice(&[g, if ablation.no_dynamic { 0.0 } else { ws }]);
                }
            }
            slots.push(SlotInputs {
                station_attr: Tensor::matrix(b * s, STATION_ATTR_DIM, station_attr),
                city_aqi: Tensor::matrix(b * n, 1, city_aqi),
                city_context: Tensor::matrix(b * n, ctx_dim, city_context),
                city_edge_weights: Tensor::matrix(b * ec, EDGE_DIM, cew),
                station_edge_weights: Tensor::matrix(b * es, EDGE_DIM, sew),
            });
        }

        let mut decoder_weather = Vec::with_capacity(tau_out);
        for k in 1..=tau_out {
            let mut rows = Vec::with_capacity(b * s * WEATHER_DIM);
            for w in windows {
                for &c in &data.station_city {
                    if ablation.no_weather {
                        rows.extend_from_slice(&[0.0; WEATHER_DIM]);
                    } else {
                        rows.extend_from_slice(obs.weather(w.origin + k, c));
                    }
                }
            }
            decoder_weather.push(Tensor::matrix(b * s, WEATHER_DIM, rows));
        }

        let mut last = Vec::with_capacity(b * s);
        let mut targets = Vec::with_capacity(b * s * tau_out);
        for w in windows {
            last.extend_from_slice(obs.aqi_at(w.origin));
            for st in 0..s {
                targets.extend((1..=tau_out).map(|k| obs.aqi(w.origin + k, st)));
            }
        }

        let mut station_city = Vec::with_capacity(b * s);
        for bi in 0..b {
            station_city.extend(data.station_city.iter().map(|c| c + bi * n));
        }
        Ok(Batch {
            windows: windows.to_vec(),
            cities: n,
            stations: s,
            slots,
            decoder_weather,
            last_aqi: Tensor::matrix(b * s, 1, last),
            targets: Tensor::matrix(b * s, tau_out, targets),
            city_edges: data.city_edges.replicate(b, n),
            station_edges: data.station_edges.replicate(b, s),
            station_city,
        })
    }
}

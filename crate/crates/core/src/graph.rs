//! City- and station-level graph construction.
//!
//! Static edges come from geographic similarity inside an adaptive radius;
//! each edge additionally carries a per-slot wind-direction similarity that
//! is refreshed from the winds observed at that slot.

use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math;

/// Planar location in kilometres east/north of a dataset-wide origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        GeoPoint { x, y }
    }

    /// Arithmetic mean of a non-empty point set.
    pub fn centroid(points: &[GeoPoint]) -> Option<GeoPoint> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Some(GeoPoint::new(sx / n, sy / n))
    }
}

pub fn euclid_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    math::sqrt(dx * dx + dy * dy)
}

/// Labelled wind directions. A label names the direction the wind blows toward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WindDirection {
    North,
    Northeast,
    East,
    Southeast,
    South,
    Southwest,
    West,
    Northwest,
    Calm,
}

impl WindDirection {
    pub const ALL: [WindDirection; 9] = [
        WindDirection::North,
        WindDirection::Northeast,
        WindDirection::East,
        WindDirection::Southeast,
        WindDirection::South,
        WindDirection::Southwest,
        WindDirection::West,
        WindDirection::Northwest,
        WindDirection::Calm,
    ];

    /// The eight moving directions in clockwise order starting at north.
    pub const COMPASS: [WindDirection; 8] = [
        WindDirection::North,
        WindDirection::Northeast,
        WindDirection::East,
        WindDirection::Southeast,
        WindDirection::South,
        WindDirection::Southwest,
        WindDirection::West,
        WindDirection::Northwest,
    ];

    /// Parses either the long label ("Southwest", "No sustained direction")
    /// or the short CSV code ("SW", "NONE").
    pub fn from_label(label: &str) -> Result<Self> {
        use WindDirection::*;
        let d = match label.trim() {
            "North" | "N" => North,
            "Northeast" | "NE" => Northeast,
            "East" | "E" => East,
            "Southeast" | "SE" => Southeast,
            "South" | "S" => South,
            "Southwest" | "SW" => Southwest,
            "West" | "W" => West,
            "Northwest" | "NW" => Northwest,
            "No sustained direction" | "NONE" => Calm,
            other => return Err(Error::UnknownWind(other.to_string())),
        };
        Ok(d)
    }

    pub fn code(self) -> &'static str {
        use WindDirection::*;
        match self {
            North => "N",
            Northeast => "NE",
            East => "E",
            Southeast => "SE",
            South => "S",
            Southwest => "SW",
            West => "W",
            Northwest => "NW",
            Calm => "NONE",
        }
    }

    pub fn vector(self) -> WindVector {
        use WindDirection::*;
        let (e, n) = match self {
            North => (0.0, 1.0),
            Northeast => (1.0, 1.0),
            East => (1.0, 0.0),
            Southeast => (1.0, -1.0),
            South => (0.0, -1.0),
            Southwest => (-1.0, -1.0),
            West => (-1.0, 0.0),
            Northwest => (-1.0, 1.0),
            Calm => (0.0, 0.0),
        };
        WindVector { east: e, north: n }
    }
}

/// Unnormalized wind vector `[east, north]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindVector {
    pub east: f64,
    pub north: f64,
}

impl WindVector {
    pub const CALM: WindVector = WindVector {
        east: 0.0,
        north: 0.0,
    };

    pub fn new(east: f64, north: f64) -> Self {
        WindVector { east, north }
    }

    pub fn is_calm(self) -> bool {
        self.east == 0.0 && self.north == 0.0
    }
}

/// Code-book lookup for a wind label.
pub fn encode_wind(label: &str) -> Result<WindVector> {
    WindDirection::from_label(label).map(WindDirection::vector)
}

/// R_h = λ · max over nodes of the distance to the nearest other node.
pub fn adaptive_radius(points: &[GeoPoint], lambda: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(invalid("adaptive_radius", "need at least two points"));
    }
    if !(lambda >= 1.0) || !lambda.is_finite() {
        return Err(invalid("adaptive_radius", alloc::format!("lambda {lambda} < 1")));
    }
    let mut widest = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        let nearest = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| euclid_distance(*a, *b))
            .fold(f64::INFINITY, f64::min);
        widest = widest.max(nearest);
    }
    Ok(lambda * widest)
}

/// 1/d inside the open interval (0, R_h), zero elsewhere.
pub fn geographic_similarity(a: GeoPoint, b: GeoPoint, radius: f64) -> f64 {
    let d = euclid_distance(a, b);
    if d > 0.0 && d < radius {
        1.0 / d
    } else {
        0.0
    }
}

/// Cosine between the wind at `a` and the displacement from `a` to `b`.
///
/// Calm wind yields 0.
pub fn wind_similarity(a: GeoPoint, b: GeoPoint, wind_a: WindVector) -> Result<f64> {
    let (zx, zy) = (b.x - a.x, b.y - a.y);
    let zn = math::sqrt(zx * zx + zy * zy);
    if zn == 0.0 {
        return Err(invalid("wind_similarity", "coincident locations have no direction"));
    }
    if wind_a.is_calm() {
        return Ok(0.0);
    }
    let wn = math::sqrt(wind_a.east * wind_a.east + wind_a.north * wind_a.north);
    let cos = (wind_a.east * zx + wind_a.north * zy) / (wn * zn);
    Ok(cos.clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    City,
    Station,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

/// Nodes, directed edges and edge weights for one graph level.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTopology {
    level: Level,
    points: Vec<GeoPoint>,
    radius: f64,
    edges: Vec<Edge>,
    gs: Vec<f64>,
    ws: Vec<f64>,
}

impl GraphTopology {
    /// Connects every pair with 0 < d < R_h in both directions.
    pub fn build(points: &[GeoPoint], lambda: f64, level: Level) -> Result<Self> {
        let radius = adaptive_radius(points, lambda)?;
        let mut edges = Vec::new();
        let mut gs = Vec::new();
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let w = geographic_similarity(points[i], points[j], radius);
                if w > 0.0 {
                    edges.push(Edge { src: i, dst: j });
                    gs.push(w);
                    edges.push(Edge { src: j, dst: i });
                    gs.push(w);
                }
            }
        }
        let ws = alloc::vec![0.0; edges.len()];
        Ok(GraphTopology {
            level,
            points: points.to_vec(),
            radius,
            edges,
            gs,
            ws,
        })
    }

    /// A graph with nodes but no edges, used for single-node levels.
    pub fn edgeless(points: &[GeoPoint], level: Level) -> Self {
        GraphTopology {
            level,
            points: points.to_vec(),
            radius: 0.0,
            edges: Vec::new(),
            gs: Vec::new(),
            ws: Vec::new(),
        }
    }

    /// [`GraphTopology::build`] when there are at least two nodes, otherwise edgeless.
    pub fn build_or_edgeless(points: &[GeoPoint], lambda: f64, level: Level) -> Result<Self> {
        if points.len() < 2 {
            Ok(Self::edgeless(points, level))
        } else {
            Self::build(points, lambda, level)
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn node_count(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn gs(&self) -> &[f64] {
        &self.gs
    }

    pub fn ws(&self) -> &[f64] {
        &self.ws
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.src == node).count()
    }

    /// `[gs, ws]` for edge `e` at the last refreshed slot.
    pub fn edge_weight(&self, e: usize) -> [f64; 2] {
        [self.gs[e], self.ws[e]]
    }

    /// Recomputes ws on every edge from the per-node winds of one slot.
    pub fn refresh_edge_weights(&mut self, winds: &[WindVector]) -> Result<()> {
        if winds.len() != self.points.len() {
            return Err(invalid(
                "refresh_edge_weights",
                alloc::format!("{} winds for {} nodes", winds.len(), self.points.len()),
            ));
        }
        for (w, e) in self.ws.iter_mut().zip(&self.edges) {
            *w = wind_similarity(self.points[e.src], self.points[e.dst], winds[e.src])?;
        }
        Ok(())
    }
}

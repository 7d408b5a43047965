//! Seeded advection-diffusion corpus generator.
//!
//! Each station carries a latent pollution level updated hourly:
//!
//! ```text
//! A_s(t+1) = max(0, decay·A_s(t) + Σ_{s'} adv(s'→s, t)·A_{s'}(t) + e_s(t) + ε)
//! adv(s'→s, t) = advection · max(0, cos(wind(t), ζ_{s'→s})) / d(s', s) / Z_s
//! ```
//!
//! where `Z_s = Σ_{s'} 1/d(s', s)` over the stations within `range_km` of `s`,
//! so the total inflow weight never exceeds `advection`. The reported AQI at
//! hour `t` is `A(t)`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use highair_core::dataset::POI_DIM;
use highair_core::graph::{euclid_distance, GeoPoint, WindDirection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{format_timestamp, parse_timestamp, Projection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindRegime {
    /// Calm every hour.
    None,
    /// Blows toward the east every hour.
    SteadyEast,
    /// Steps clockwise through the compass every `rotation_hours`.
    Rotating,
    /// Markov chain: each hour a new direction with probability `switch_prob`.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Line,
    Grid,
}

/// Randomly timed emission pulses in the listed cities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub cities: Vec<usize>,
    /// Probability per hour and city that a pulse starts.
    pub rate: f64,
    /// Extra emission per station per hour while a pulse is active.
    pub strength: f64,
    pub duration: usize,
}

/// A station placed explicitly, in km on the generator's plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitStation {
    pub city: usize,
    pub x_km: f64,
    pub y_km: f64,
}

fn d_cities() -> usize {
    4
}
fn d_stations_per_city() -> usize {
    3
}
fn d_hours() -> usize {
    2000
}
fn d_wind() -> WindRegime {
    WindRegime::Rotating
}
fn d_rotation_hours() -> usize {
    24
}
fn d_switch_prob() -> f64 {
    0.1
}
fn d_layout() -> Layout {
    Layout::Line
}
fn d_spacing() -> f64 {
    30.0
}
fn d_spread() -> f64 {
    5.0
}
fn d_decay() -> f64 {
    0.6
}
fn d_advection() -> f64 {
    0.3
}
fn d_range() -> f64 {
    f64::INFINITY
}
fn d_emission() -> f64 {
    10.0
}
fn d_diurnal() -> f64 {
    0.3
}
fn d_source_strength() -> f64 {
    20.0
}
fn d_noise() -> f64 {
    2.0
}
fn d_initial() -> f64 {
    50.0
}
fn d_start() -> String {
    "2024-01-01T00:00:00Z".into()
}
fn d_origin() -> [f64; 2] {
    [31.0, 121.0]
}
fn is_infinite(v: &f64) -> bool {
    v.is_infinite()
}

/// Generator settings; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "d_cities")]
    pub cities: usize,
    #[serde(default = "d_stations_per_city")]
    pub stations_per_city: usize,
    #[serde(default = "d_hours")]
    pub hours: usize,
    #[serde(default = "d_wind")]
    pub wind: WindRegime,
    #[serde(default = "d_rotation_hours")]
    pub rotation_hours: usize,
    #[serde(default = "d_switch_prob")]
    pub switch_prob: f64,
    #[serde(default = "d_layout")]
    pub layout: Layout,
    /// Distance between neighbouring city centres.
    #[serde(default = "d_spacing")]
    pub city_spacing_km: f64,
    /// Stations are scattered uniformly within this radius of their city centre.
    #[serde(default = "d_spread")]
    pub station_spread_km: f64,
    #[serde(default = "d_decay")]
    pub decay: f64,
    #[serde(default = "d_advection")]
    pub advection: f64,
    /// Stations farther apart than this do not exchange pollution.
    #[serde(default = "d_range", skip_serializing_if = "is_infinite")]
    pub range_km: f64,
    /// Base emission per station per hour.
    #[serde(default = "d_emission")]
    pub emission: f64,
    /// Relative amplitude of the 24-hour emission cycle.
    #[serde(default = "d_diurnal")]
    pub diurnal: f64,
    #[serde(default)]
    pub source_cities: Vec<usize>,
    /// Extra constant emission for stations in `source_cities`.
    #[serde(default = "d_source_strength")]
    pub source_strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulses: Option<PulseSpec>,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default = "d_noise")]
    pub noise: f64,
    #[serde(default = "d_initial")]
    pub initial: f64,
    /// Overrides `cities`/`stations_per_city`/layout when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<Vec<ExplicitStation>>,
    /// Fraction of AQI readings blanked out in the emitted CSV.
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default = "d_start")]
    pub start: String,
    /// Latitude/longitude of the plane's origin.
    #[serde(default = "d_origin")]
    pub origin: [f64; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("synth spec: {m}")));
        let city_count = self.city_count();
        if city_count == 0 || self.station_total() == 0 {
            return bad("needs at least one city and one station".into());
        }
        if self.hours < 2 {
            return bad("hours must be at least 2".into());
        }
        let non_negative = [
            ("decay", self.decay),
            ("advection", self.advection),
            ("emission", self.emission),
            ("source_strength", self.source_strength),
            ("noise", self.noise),
            ("initial", self.initial),
            ("station_spread_km", self.station_spread_km),
            ("diurnal", self.diurnal),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if self.decay + self.advection > 1.0 {
            return bad("decay + advection above 1 makes the field diverge".into());
        }
        if self.diurnal > 1.0 {
            return bad("diurnal must be at most 1".into());
        }
        if !(self.city_spacing_km > 0.0) || !(self.range_km > 0.0) {
            return bad("city_spacing_km and range_km must be positive".into());
        }
        if self.rotation_hours == 0 {
            return bad("rotation_hours must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return bad("switch_prob must lie in [0, 1]".into());
        }
        if !(0.0..0.2).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 0.2)".into());
        }
        if let Some(c) = self.source_cities.iter().find(|c| **c >= city_count) {
            return bad(format!("source city {c} out of range"));
        }
        if let Some(p) = &self.pulses {
            if let Some(c) = p.cities.iter().find(|c| **c >= city_count) {
                return bad(format!("pulse city {c} out of range"));
            }
            if !(0.0..=1.0).contains(&p.rate) || !(p.strength >= 0.0) || p.duration == 0 {
                return bad("pulses need rate in [0, 1], strength >= 0, duration > 0".into());
            }
        }
        if let Some(st) = &self.stations {
            for c in 0..city_count {
                if !st.iter().any(|s| s.city == c) {
                    return bad(format!("city {c} has no stations"));
                }
            }
            if st.iter().any(|s| !s.x_km.is_finite() || !s.y_km.is_finite()) {
                return bad("station coordinates must be finite".into());
            }
        }
        parse_timestamp(&self.start).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn city_count(&self) -> usize {
        match &self.stations {
            Some(st) => st.iter().map(|s| s.city + 1).max().unwrap_or(0),
            None => self.cities,
        }
    }

    pub fn station_total(&self) -> usize {
        match &self.stations {
            Some(st) => st.len(),
            None => self.cities * self.stations_per_city,
        }
    }
}

/// Ground truth for one generated station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthStation {
    pub id: String,
    pub city: usize,
    pub x_km: f64,
    pub y_km: f64,
    pub lat: f64,
    pub lon: f64,
    pub poi: [f64; POI_DIM],
    /// Constant part of the hourly emission.
    pub emission: f64,
    /// The normalizer `Z_s`.
    pub inflow_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub city: usize,
    pub start: usize,
    pub duration: usize,
    pub strength: f64,
}

/// A generated corpus held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub seed: u64,
    pub city_ids: Vec<String>,
    pub stations: Vec<SynthStation>,
    pub timestamps: Vec<DateTime<Utc>>,
    /// Shared by every city.
    pub wind: Vec<WindDirection>,
    pub pulses: Vec<PulseEvent>,
    /// `[station][hour]` latent level, before blanking.
    pub aqi: Vec<Vec<f64>>,
    /// `[station][hour]`; `false` where the emitted CSV has a gap.
    pub observed: Vec<Vec<bool>>,
    /// `[city][hour]` temperature, humidity, rainfall, wind_speed, pressure.
    pub weather: Vec<Vec<[f64; 5]>>,
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub seed: u64,
    pub city_ids: Vec<String>,
    pub stations: Vec<SynthStation>,
    pub pulses: Vec<PulseEvent>,
}

// Independent random streams so that changing one knob leaves the rest intact.
const STREAM_LAYOUT: u64 = 1;
const STREAM_POI: u64 = 2;
const STREAM_WIND: u64 = 3;
const STREAM_PULSE: u64 = 4;
const STREAM_NOISE: u64 = 5;
const STREAM_WEATHER: u64 = 6;
const STREAM_MISSING: u64 = 7;

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

pub fn city_id(c: usize) -> String {
    format!("C{c:02}")
}

fn city_centre(spec: &SynthSpec, c: usize) -> GeoPoint {
    match spec.layout {
        Layout::Line => GeoPoint::new(c as f64 * spec.city_spacing_km, 0.0),
        Layout::Grid => {
            let cols = (spec.cities as f64).sqrt().ceil() as usize;
            GeoPoint::new(
                (c % cols) as f64 * spec.city_spacing_km,
                (c / cols) as f64 * spec.city_spacing_km,
            )
        }
    }
}

/// Station positions in km and their cities.
fn place_stations(spec: &SynthSpec, seed: u64) -> Vec<(usize, GeoPoint)> {
    if let Some(st) = &spec.stations {
        return st.iter().map(|s| (s.city, GeoPoint::new(s.x_km, s.y_km))).collect();
    }
    let mut rng = stream(seed, STREAM_LAYOUT);
    let mut out = Vec::with_capacity(spec.station_total());
    for c in 0..spec.cities {
        let centre = city_centre(spec, c);
        for _ in 0..spec.stations_per_city {
            let r = spec.station_spread_km * rng.random::<f64>().sqrt();
            let a = 2.0 * PI * rng.random::<f64>();
            out.push((c, GeoPoint::new(centre.x + r * a.cos(), centre.y + r * a.sin())));
        }
    }
    out
}

fn wind_series(spec: &SynthSpec, seed: u64) -> Vec<WindDirection> {
    let mut rng = stream(seed, STREAM_WIND);
    let compass = WindDirection::COMPASS;
    match spec.wind {
        WindRegime::None => vec![WindDirection::Calm; spec.hours],
        WindRegime::SteadyEast => vec![WindDirection::East; spec.hours],
        WindRegime::Rotating => (0..spec.hours)
            .map(|h| compass[(h / spec.rotation_hours) % compass.len()])
            .collect(),
        WindRegime::Random => {
            let mut d = compass[rng.random_range(0..compass.len())];
            (0..spec.hours)
                .map(|_| {
                    if rng.random::<f64>() < spec.switch_prob {
                        d = compass[rng.random_range(0..compass.len())];
                    }
                    d
                })
                .collect()
        }
    }
}

/// `max(0, cos(wind, from → to))`; zero for calm wind.
pub fn downwind_alignment(wind: WindDirection, from: GeoPoint, to: GeoPoint) -> f64 {
    let v = wind.vector();
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let norm = v.east.hypot(v.north) * dx.hypot(dy);
    if norm == 0.0 {
        return 0.0;
    }
    ((v.east * dx + v.north * dy) / norm).max(0.0)
}

/// Relative emission multiplier at hour `h`.
pub fn diurnal_factor(amplitude: f64, h: usize) -> f64 {
    1.0 + amplitude * (2.0 * PI * (h % 24) as f64 / 24.0).sin()
}

/// Runs the generator.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let placed = place_stations(spec, seed);
    let city_count = spec.city_count();
    let n = placed.len();
    for i in 0..n {
        for j in i + 1..n {
            if euclid_distance(placed[i].1, placed[j].1) == 0.0 {
                return Err(Error::Validation(format!("synth spec: stations {i} and {j} coincide")));
            }
        }
    }
    let proj = Projection {
        lat0: spec.origin[0],
        lon0: spec.origin[1],
    };

    let mut poi_rng = stream(seed, STREAM_POI);
    let poisson: Poisson<f64> = Poisson::new(1.5).expect("positive rate");
    let mut per_city = vec![0usize; city_count];
    let stations: Vec<SynthStation> = placed
        .iter()
        .map(|&(city, p)| {
            let poi: [f64; POI_DIM] = std::array::from_fn(|_| poisson.sample(&mut poi_rng).floor());
            let industrial = poi[4];
            let mut emission = spec.emission * (1.0 + 0.25 * industrial);
            if spec.source_cities.contains(&city) {
                emission += spec.source_strength;
            }
            let inflow_norm: f64 = placed
                .iter()
                .map(|&(_, q)| euclid_distance(p, q))
                .filter(|&d| d > 0.0 && d <= spec.range_km)
                .map(|d| 1.0 / d)
                .sum();
            let (lat, lon) = proj.unproject(p);
            let j = per_city[city];
            per_city[city] += 1;
            SynthStation {
                id: format!("{}-S{j:02}", city_id(city)),
                city,
                x_km: p.x,
                y_km: p.y,
                lat,
                lon,
                poi,
                emission,
                inflow_norm,
            }
        })
        .collect();

    let wind = wind_series(spec, seed);

    let mut pulses = Vec::new();
    if let Some(p) = &spec.pulses {
        let mut rng = stream(seed, STREAM_PULSE);
        for h in 0..spec.hours {
            for &c in &p.cities {
                if rng.random::<f64>() < p.rate {
                    pulses.push(PulseEvent {
                        city: c,
                        start: h,
                        duration: p.duration,
                        strength: p.strength,
                    });
                }
            }
        }
    }

    let aqi = simulate(spec, &stations, &wind, &pulses, seed)?;

    let mut miss_rng = stream(seed, STREAM_MISSING);
    let observed = aqi
        .iter()
        .map(|series| series.iter().map(|_| miss_rng.random::<f64>() >= spec.missing_rate).collect())
        .collect::<Vec<Vec<bool>>>();

    let weather = synth_weather(spec, city_count, &wind, seed);
    let start = parse_timestamp(&spec.start)?;
    Ok(Corpus {
        spec: spec.clone(),
        seed,
        city_ids: (0..city_count).map(city_id).collect(),
        stations,
        timestamps: (0..spec.hours).map(|h| start + Duration::hours(h as i64)).collect(),
        wind,
        pulses,
        aqi,
        observed,
        weather,
    })
}

fn simulate(
    spec: &SynthSpec,
    stations: &[SynthStation],
    wind: &[WindDirection],
    pulses: &[PulseEvent],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = stations.len();
    let pos: Vec<GeoPoint> = stations.iter().map(|s| GeoPoint::new(s.x_km, s.y_km)).collect();
    let mut noise_rng = stream(seed, STREAM_NOISE);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Validation(e.to_string()))?;
    let mut level = vec![spec.initial; n];
    let mut out = vec![Vec::with_capacity(spec.hours); n];
    for h in 0..spec.hours {
        for (s, series) in out.iter_mut().enumerate() {
            series.push(level[s]);
        }
        if h + 1 == spec.hours {
            break;
        }
        let diurnal = diurnal_factor(spec.diurnal, h);
        let mut next = vec![0.0; n];
        for s in 0..n {
            let mut inflow = 0.0;
            for src in 0..n {
                let d = euclid_distance(pos[src], pos[s]);
                if src == s || d > spec.range_km {
                    continue;
                }
                let a = downwind_alignment(wind[h], pos[src], pos[s]);
                inflow += spec.advection * a / d / stations[s].inflow_norm * level[src];
            }
            let pulse: f64 = pulses
                .iter()
                .filter(|p| p.city == stations[s].city && (p.start..p.start + p.duration).contains(&h))
                .map(|p| p.strength)
                .sum();
            let e = stations[s].emission * diurnal + pulse;
            let eps = if spec.noise > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
            next[s] = (spec.decay * level[s] + inflow + e + eps).max(0.0);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("synthetic field diverged at hour {h}")));
        }
        level = next;
    }
    Ok(out)
}

fn synth_weather(spec: &SynthSpec, cities: usize, wind: &[WindDirection], seed: u64) -> Vec<Vec<[f64; 5]>> {
    let mut rng = stream(seed, STREAM_WEATHER);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    (0..cities)
        .map(|c| {
            let offset = c as f64 * 0.5;
            (0..spec.hours)
                .map(|h| {
                    let day = 2.0 * PI * (h % 24) as f64 / 24.0;
                    let temperature = 15.0 + offset + 6.0 * (day - PI / 2.0).sin() + 0.5 * jitter.sample(&mut rng);
                    let humidity = (65.0 - 10.0 * (day - PI / 2.0).sin() + 2.0 * jitter.sample(&mut rng)).clamp(0.0, 100.0);
                    let rainfall = if rng.random::<f64>() < 0.05 { 4.0 * rng.random::<f64>() } else { 0.0 };
                    let wind_speed = if wind[h] == WindDirection::Calm {
                        0.0
                    } else {
                        (3.0 + 0.5 * jitter.sample(&mut rng)).max(0.5)
                    };
                    let pressure = 1013.0 + 4.0 * (2.0 * PI * h as f64 / (24.0 * 5.0)).sin() + 0.3 * jitter.sample(&mut rng);
                    [temperature, humidity, rainfall, wind_speed, pressure]
                })
                .collect()
        })
        .collect()
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path).map(std::io::BufWriter::new).map_err(Error::io(path))
}

/// Writes `stations.csv`, `poi.csv`, `aqi.csv`, `weather.csv` and `manifest.json`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::Io { path: p, source: e }
    };

    let path = dir.join("stations.csv");
    let mut f = create(&path)?;
    writeln!(f, "station_id,city_id,lat,lon").map_err(io(&path))?;
    for s in &corpus.stations {
        writeln!(f, "{},{},{},{}", s.id, corpus.city_ids[s.city], s.lat, s.lon).map_err(io(&path))?;
    }
    f.flush().map_err(io(&path))?;

    let path = dir.join("poi.csv");
    let mut f = create(&path)?;
    writeln!(f, "station_id,residential,park,mountain,water,industrial").map_err(io(&path))?;
    for s in &corpus.stations {
        let p = s.poi;
        writeln!(f, "{},{},{},{},{},{}", s.id, p[0], p[1], p[2], p[3], p[4]).map_err(io(&path))?;
    }
    f.flush().map_err(io(&path))?;

    let path = dir.join("aqi.csv");
    let mut f = create(&path)?;
    writeln!(f, "station_id,timestamp,aqi").map_err(io(&path))?;
    for (h, t) in corpus.timestamps.iter().enumerate() {
        let ts = format_timestamp(*t);
        for (s, st) in corpus.stations.iter().enumerate() {
            if corpus.observed[s][h] {
                writeln!(f, "{},{ts},{}", st.id, corpus.aqi[s][h]).map_err(io(&path))?;
            } else {
                writeln!(f, "{},{ts},", st.id).map_err(io(&path))?;
            }
        }
    }
    f.flush().map_err(io(&path))?;

    let path = dir.join("weather.csv");
    let mut f = create(&path)?;
    writeln!(
        f,
        "city_id,timestamp,temperature,humidity,rainfall,wind_speed,wind_direction,pressure"
    )
    .map_err(io(&path))?;
    for (h, t) in corpus.timestamps.iter().enumerate() {
        let ts = format_timestamp(*t);
        for (c, id) in corpus.city_ids.iter().enumerate() {
            let [temp, hum, rain, speed, pres] = corpus.weather[c][h];
            writeln!(
                f,
                "{id},{ts},{temp},{hum},{rain},{speed},{},{pres}",
                corpus.wind[h].code()
            )
            .map_err(io(&path))?;
        }
    }
    f.flush().map_err(io(&path))?;

    let path = dir.join("manifest.json");
    let manifest = Manifest {
        spec: corpus.spec.clone(),
        seed: corpus.seed,
        city_ids: corpus.city_ids.clone(),
        stations: corpus.stations.clone(),
        pulses: corpus.pulses.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(Error::json(&path))?;
    fs::write(&path, json + "\n").map_err(io(&path))?;
    Ok(())
}

pub fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_fixed_point() {
        let spec = SynthSpec {
            cities: 2,
            stations_per_city: 2,
            hours: 50,
            wind: WindRegime::None,
            decay: 1.0,
            advection: 0.0,
            emission: 0.0,
            noise: 0.0,
            initial: 42.0,
            ..SynthSpec::default()
        };
        let c = generate(&spec, 3).unwrap();
        assert!(c.aqi.iter().flatten().all(|v| *v == 42.0));
    }

    #[test]
    fn rejects_divergent_spec() {
        let spec = SynthSpec {
            decay: 0.9,
            advection: 0.5,
            ..SynthSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn alignment_examples() {
        let a = GeoPoint::new(0.0, 0.0);
        let b = GeoPoint::new(1.0, 0.0);
        assert_eq!(downwind_alignment(WindDirection::East, a, b), 1.0);
        assert_eq!(downwind_alignment(WindDirection::East, b, a), 0.0);
        assert_eq!(downwind_alignment(WindDirection::Calm, a, b), 0.0);
    }
}

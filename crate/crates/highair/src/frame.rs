//! CSV ingestion, gap filling and conversion into the engine's dataset types.
//!
//! Input files (headers required):
//!
//! - `stations.csv`: `station_id,city_id,lat,lon`
//! - `poi.csv`: `station_id,residential,park,mountain,water,industrial`
//! - `aqi.csv`: `station_id,timestamp,aqi`
//! - `weather.csv`: `city_id,timestamp,temperature,humidity,rainfall,wind_speed,wind_direction,pressure`
//!
//! Timestamps are ISO 8601 UTC on the hour. Empty fields are missing values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};
use highair_core::dataset::{Network, Observations, Station, POI_DIM, WEATHER_DIM};
use highair_core::graph::{GeoPoint, WindDirection};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Kilometres per degree of latitude.
pub const KM_PER_DEG_LAT: f64 = 110.57;
/// Kilometres per degree of longitude at the equator.
pub const KM_PER_DEG_LON: f64 = 111.32;
/// Largest tolerated share of missing values in one series.
pub const MAX_MISSING_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct StationRecord {
    pub station_id: String,
    pub city_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub poi: [f64; POI_DIM],
}

/// Hourly observations aligned on one time grid; `None` marks a gap.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFrame {
    pub timestamps: Vec<DateTime<Utc>>,
    /// Sorted city ids.
    pub city_ids: Vec<String>,
    /// Station ids in the same order as the records returned by [`ingest`].
    pub station_ids: Vec<String>,
    /// `[station][hour]`
    pub aqi: Vec<Vec<Option<f64>>>,
    /// `[city][field][hour]`, fields in `WEATHER_FIELDS` order.
    pub weather: Vec<[Vec<Option<f64>>; WEATHER_DIM]>,
    /// `[city][hour]`
    pub wind: Vec<Vec<Option<WindDirection>>>,
}

impl TimeSeriesFrame {
    pub fn hours(&self) -> usize {
        self.timestamps.len()
    }

    pub fn hour_index(&self, t: DateTime<Utc>) -> Option<usize> {
        let first = *self.timestamps.first()?;
        let delta = t.signed_duration_since(first);
        if delta < Duration::zero() || delta.num_seconds() % 3600 != 0 {
            return None;
        }
        let i = usize::try_from(delta.num_hours()).ok()?;
        (i < self.hours()).then_some(i)
    }
}

#[derive(Deserialize)]
struct StationRow {
    station_id: String,
    city_id: String,
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct PoiRow {
    station_id: String,
    residential: f64,
    park: f64,
    mountain: f64,
    water: f64,
    industrial: f64,
}

#[derive(Deserialize)]
struct AqiRow {
    station_id: String,
    timestamp: String,
    aqi: Option<f64>,
}

#[derive(Deserialize)]
struct WeatherRow {
    city_id: String,
    timestamp: String,
    temperature: Option<f64>,
    humidity: Option<f64>,
    rainfall: Option<f64>,
    wind_speed: Option<f64>,
    wind_direction: Option<String>,
    pressure: Option<f64>,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(Error::csv(path))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(Error::csv(path))
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Data(format!("bad timestamp `{s}`: {e}")))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Reads the four CSV files from `dir` and aligns them on an hourly grid.
///
/// Rows may appear in any order; stations are ordered by id and cities by id.
pub fn ingest(dir: &Path) -> Result<(TimeSeriesFrame, Vec<StationRecord>)> {
    let stations: Vec<StationRow> = read_rows(&dir.join("stations.csv"))?;
    let pois: Vec<PoiRow> = read_rows(&dir.join("poi.csv"))?;
    let aqi_rows: Vec<AqiRow> = read_rows(&dir.join("aqi.csv"))?;
    let weather_rows: Vec<WeatherRow> = read_rows(&dir.join("weather.csv"))?;

    let mut by_id: BTreeMap<String, StationRow> = BTreeMap::new();
    for s in stations {
        if !(-90.0..=90.0).contains(&s.lat) || !(-180.0..=180.0).contains(&s.lon) {
            return Err(Error::Data(format!("station {} has invalid coordinates", s.station_id)));
        }
        if by_id.contains_key(&s.station_id) {
            return Err(Error::Data(format!("duplicate station id {}", s.station_id)));
        }
        by_id.insert(s.station_id.clone(), s);
    }
    if by_id.is_empty() {
        return Err(Error::Data("stations.csv lists no stations".into()));
    }
    let city_ids: Vec<String> = by_id
        .values()
        .map(|s| s.city_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let station_ids: Vec<String> = by_id.keys().cloned().collect();
    let station_index: BTreeMap<&str, usize> =
        station_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let city_index: BTreeMap<&str, usize> = city_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut poi: Vec<Option<[f64; POI_DIM]>> = vec![None; station_ids.len()];
    for p in pois {
        let i = *station_index
            .get(p.station_id.as_str())
            .ok_or_else(|| Error::Data(format!("poi.csv: unknown station {}", p.station_id)))?;
        let v = [p.residential, p.park, p.mountain, p.water, p.industrial];
        if v.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Data(format!("poi.csv: negative count for {}", p.station_id)));
        }
        if poi[i].replace(v).is_some() {
            return Err(Error::Data(format!("poi.csv: duplicate row for {}", p.station_id)));
        }
    }

    let mut times = BTreeSet::new();
    let mut aqi_parsed = Vec::with_capacity(aqi_rows.len());
    for r in &aqi_rows {
        let t = hourly(&r.timestamp)?;
        let s = *station_index
            .get(r.station_id.as_str())
            .ok_or_else(|| Error::Data(format!("aqi.csv: unknown station {}", r.station_id)))?;
        times.insert(t);
        aqi_parsed.push((s, t, r.aqi));
    }
    let mut weather_parsed = Vec::with_capacity(weather_rows.len());
    for r in weather_rows {
        let t = hourly(&r.timestamp)?;
        let c = *city_index
            .get(r.city_id.as_str())
            .ok_or_else(|| Error::Data(format!("weather.csv: unknown city_id {}", r.city_id)))?;
        times.insert(t);
        weather_parsed.push((c, t, r));
    }
    let (first, last) = match (times.first(), times.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::Data("no observations".into())),
    };
    let hours = usize::try_from(last.signed_duration_since(first).num_hours()).expect("ordered") + 1;
    let timestamps: Vec<_> = (0..hours).map(|h| first + Duration::hours(h as i64)).collect();
    let hour_of = |t: DateTime<Utc>| t.signed_duration_since(first).num_hours() as usize;

    let mut aqi = vec![vec![None; hours]; station_ids.len()];
    let mut seen = vec![vec![false; hours]; station_ids.len()];
    for (s, t, v) in aqi_parsed {
        let h = hour_of(t);
        if std::mem::replace(&mut seen[s][h], true) {
            return Err(Error::Data(format!(
                "aqi.csv: duplicate reading for station {} at {}",
                station_ids[s],
                format_timestamp(t)
            )));
        }
        aqi[s][h] = v.filter(|x| x.is_finite());
    }
    let mut weather: Vec<[Vec<Option<f64>>; WEATHER_DIM]> =
        (0..city_ids.len()).map(|_| std::array::from_fn(|_| vec![None; hours])).collect();
    let mut wind = vec![vec![None; hours]; city_ids.len()];
    let mut wseen = vec![vec![false; hours]; city_ids.len()];
    for (c, t, r) in weather_parsed {
        let h = hour_of(t);
        if std::mem::replace(&mut wseen[c][h], true) {
            return Err(Error::Data(format!(
                "weather.csv: duplicate row for city {} at {}",
                city_ids[c],
                format_timestamp(t)
            )));
        }
        let fields = [r.temperature, r.humidity, r.rainfall, r.wind_speed, r.pressure];
        for (f, v) in fields.into_iter().enumerate() {
            weather[c][f][h] = v.filter(|x| x.is_finite());
        }
        wind[c][h] = match r.wind_direction.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(label) => Some(WindDirection::from_label(label)?),
        };
    }

    let records = by_id
        .into_values()
        .zip(poi)
        .map(|(s, p)| {
            let poi = p.ok_or_else(|| Error::Data(format!("poi.csv: no row for station {}", s.station_id)))?;
            Ok(StationRecord {
                station_id: s.station_id,
                city_id: s.city_id,
                latitude: s.lat,
                longitude: s.lon,
                poi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let frame = TimeSeriesFrame {
        timestamps,
        city_ids,
        station_ids,
        aqi,
        weather,
        wind,
    };
    Ok((frame, records))
}

fn hourly(s: &str) -> Result<DateTime<Utc>> {
    let t = parse_timestamp(s)?;
    if t.minute() != 0 || t.second() != 0 || t.nanosecond() != 0 {
        return Err(Error::Data(format!("non-hourly timestamp {s}")));
    }
    Ok(t)
}

fn check_sparsity(name: &str, present: usize, len: usize) -> Result<()> {
    if present == 0 {
        return Err(Error::Data(format!("{name}: series is empty")));
    }
    let missing = (len - present) as f64 / len as f64;
    if missing > MAX_MISSING_FRACTION {
        return Err(Error::Data(format!(
            "{name}: {:.1}% missing exceeds the {:.0}% limit",
            100.0 * missing,
            100.0 * MAX_MISSING_FRACTION
        )));
    }
    Ok(())
}

/// Linear interpolation in time; leading/trailing gaps take the nearest value.
pub fn interpolate_series(series: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (&(i0, v0), &(i1, v1)) = (known.first()?, known.last()?);
    let mut out = vec![0.0; series.len()];
    out[..=i0].fill(v0);
    out[i1..].fill(v1);
    for pair in known.windows(2) {
        let ((a, va), (b, vb)) = (pair[0], pair[1]);
        for (i, o) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            let t = (i - a) as f64 / (b - a) as f64;
            *o = va + t * (vb - va);
        }
    }
    Some(out)
}

/// Fills every gap in the frame.
///
/// Numeric series are interpolated linearly; wind labels carry the previous
/// valid label forward (the first valid label fills a leading gap).
pub fn interpolate_missing(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    let hours = frame.hours();
    let mut out = frame.clone();
    for (s, series) in frame.aqi.iter().enumerate() {
        let name = format!("aqi[{}]", frame.station_ids[s]);
        check_sparsity(&name, series.iter().flatten().count(), hours)?;
        out.aqi[s] = interpolate_series(series).expect("non-empty").into_iter().map(Some).collect();
    }
    for (c, fields) in frame.weather.iter().enumerate() {
        for (f, series) in fields.iter().enumerate() {
            let name = format!(
                "weather[{}].{}",
                frame.city_ids[c],
                highair_core::dataset::WEATHER_FIELDS[f]
            );
            check_sparsity(&name, series.iter().flatten().count(), hours)?;
            out.weather[c][f] = interpolate_series(series).expect("non-empty").into_iter().map(Some).collect();
        }
    }
    for (c, series) in frame.wind.iter().enumerate() {
        let name = format!("weather[{}].wind_direction", frame.city_ids[c]);
        check_sparsity(&name, series.iter().flatten().count(), hours)?;
        let first = series.iter().flatten().next().copied();
        let mut last = first;
        for (h, v) in series.iter().enumerate() {
            if v.is_some() {
                last = *v;
            }
            out.wind[c][h] = last;
        }
    }
    Ok(out)
}

/// Equirectangular projection around a reference latitude/longitude.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Projection {
    pub lat0: f64,
    pub lon0: f64,
}

impl Projection {
    /// Reference at the mean station coordinate.
    pub fn centered_on(records: &[StationRecord]) -> Self {
        let n = records.len().max(1) as f64;
        Projection {
            lat0: records.iter().map(|r| r.latitude).sum::<f64>() / n,
            lon0: records.iter().map(|r| r.longitude).sum::<f64>() / n,
        }
    }

    pub fn project(&self, lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(
            (lon - self.lon0) * self.lat0.to_radians().cos() * KM_PER_DEG_LON,
            (lat - self.lat0) * KM_PER_DEG_LAT,
        )
    }

    pub fn unproject(&self, p: GeoPoint) -> (f64, f64) {
        (
            self.lat0 + p.y / KM_PER_DEG_LAT,
            self.lon0 + p.x / (self.lat0.to_radians().cos() * KM_PER_DEG_LON),
        )
    }
}

/// Converts a gap-free frame into the engine's network and observations.
pub fn to_dataset(frame: &TimeSeriesFrame, records: &[StationRecord]) -> Result<(Network, Observations)> {
    let proj = Projection::centered_on(records);
    let city_of: BTreeMap<&str, usize> =
        frame.city_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let stations = records
        .iter()
        .map(|r| {
            let city = *city_of
                .get(r.city_id.as_str())
                .ok_or_else(|| Error::Data(format!("unknown city_id {}", r.city_id)))?;
            Ok(Station {
                id: r.station_id.clone(),
                city,
                location: proj.project(r.latitude, r.longitude),
                poi: r.poi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let network = Network::new(frame.city_ids.clone(), stations)?;

    let hours = frame.hours();
    let missing = || Error::Data("frame still has gaps; interpolate first".into());
    let mut aqi = Vec::with_capacity(hours * records.len());
    let mut weather = Vec::with_capacity(hours * frame.city_ids.len() * WEATHER_DIM);
    let mut wind = Vec::with_capacity(hours * frame.city_ids.len());
    for h in 0..hours {
        for s in &frame.aqi {
            aqi.push(s[h].ok_or_else(missing)?);
        }
        for c in 0..frame.city_ids.len() {
            for f in 0..WEATHER_DIM {
                weather.push(frame.weather[c][f][h].ok_or_else(missing)?);
            }
            wind.push(frame.wind[c][h].ok_or_else(missing)?.vector());
        }
    }
    let obs = Observations::new(hours, records.len(), frame.city_ids.len(), aqi, weather, wind)?;
    Ok((network, obs))
}

/// Ingests, fills gaps and converts a data directory in one go.
pub fn load_dataset(dir: &Path) -> Result<(TimeSeriesFrame, Network, Observations)> {
    let (frame, records) = ingest(dir)?;
    let frame = interpolate_missing(&frame)?;
    let (network, obs) = to_dataset(&frame, &records)?;
    Ok((frame, network, obs))
}

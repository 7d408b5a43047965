//! In-memory dataset: station network, hourly observations, sliding windows,
//! chronological splits and z-score normalization.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GeoPoint, WindVector};
use crate::math;

/// Continuous weather fields in storage order.
pub const WEATHER_FIELDS: [&str; 5] = ["temperature", "humidity", "rainfall", "wind_speed", "pressure"];
pub const WEATHER_DIM: usize = WEATHER_FIELDS.len();
/// POI categories in storage order.
pub const POI_FIELDS: [&str; 5] = ["residential", "park", "mountain", "water", "industrial"];
pub const POI_DIM: usize = POI_FIELDS.len();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub city: usize,
    pub location: GeoPoint,
    pub poi: [f64; POI_DIM],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub id: String,
    /// Mean of the member stations' locations.
    pub location: GeoPoint,
    pub stations: Vec<usize>,
}

/// Cities and their monitoring stations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    cities: Vec<City>,
    stations: Vec<Station>,
}

impl Network {
    /// Builds the network from city ids and stations; city locations are the
    /// centroids of their stations. Every city needs at least one station.
    pub fn new(city_ids: Vec<String>, stations: Vec<Station>) -> Result<Self> {
        let mut cities: Vec<City> = city_ids
            .into_iter()
            .map(|id| City {
                id,
                location: GeoPoint::new(0.0, 0.0),
                stations: Vec::new(),
            })
            .collect();
        for (i, s) in stations.iter().enumerate() {
            let city = cities
                .get_mut(s.city)
                .ok_or_else(|| Error::Data(alloc::format!("station {} has unknown city", s.id)))?;
            city.stations.push(i);
        }
        for c in &mut cities {
            let pts: Vec<GeoPoint> = c.stations.iter().map(|&i| stations[i].location).collect();
            c.location = GeoPoint::centroid(&pts)
                .ok_or_else(|| Error::Config(alloc::format!("city {} has no stations", c.id)))?;
        }
        Ok(Network { cities, stations })
    }

    pub fn cities(&self) -> &[City] {
        &self.cities
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn city_count(&self) -> usize {
        self.cities.len()
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    pub fn city_index(&self, id: &str) -> Option<usize> {
        self.cities.iter().position(|c| c.id == id)
    }
}

/// Gap-free hourly observations.
///
/// `aqi` is `[hours, stations]`, `weather` is `[hours, cities, WEATHER_DIM]`,
/// `wind` is `[hours, cities]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    hours: usize,
    stations: usize,
    cities: usize,
    aqi: Vec<f64>,
    weather: Vec<f64>,
    wind: Vec<WindVector>,
}

impl Observations {
    pub fn new(
        hours: usize,
        stations: usize,
        cities: usize,
        aqi: Vec<f64>,
        weather: Vec<f64>,
        wind: Vec<WindVector>,
    ) -> Result<Self> {
        if aqi.len() != hours * stations
            || weather.len() != hours * cities * WEATHER_DIM
            || wind.len() != hours * cities
        {
            return Err(Error::Data("observation arrays do not match their dimensions".into()));
        }
        if aqi.iter().chain(&weather).any(|v| !v.is_finite()) {
            return Err(Error::Data("observations contain non-finite values".into()));
        }
        Ok(Observations {
            hours,
            stations,
            cities,
            aqi,
            weather,
            wind,
        })
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn station_count(&self) -> usize {
        self.stations
    }

    pub fn city_count(&self) -> usize {
        self.cities
    }

    pub fn aqi(&self, hour: usize, station: usize) -> f64 {
        self.aqi[hour * self.stations + station]
    }

    pub fn aqi_at(&self, hour: usize) -> &[f64] {
        &self.aqi[hour * self.stations..(hour + 1) * self.stations]
    }

    /// The full series of one station.
    pub fn station_series(&self, station: usize) -> Vec<f64> {
        (0..self.hours).map(|h| self.aqi(h, station)).collect()
    }

    pub fn weather(&self, hour: usize, city: usize) -> &[f64] {
        let i = (hour * self.cities + city) * WEATHER_DIM;
        &self.weather[i..i + WEATHER_DIM]
    }

    pub fn wind(&self, hour: usize, city: usize) -> WindVector {
        self.wind[hour * self.cities + city]
    }

    pub fn winds_at(&self, hour: usize) -> &[WindVector] {
        &self.wind[hour * self.cities..(hour + 1) * self.cities]
    }

    pub fn aqi_mut(&mut self) -> &mut [f64] {
        &mut self.aqi
    }

    pub fn weather_mut(&mut self) -> &mut [f64] {
        &mut self.weather
    }

    pub fn wind_mut(&mut self) -> &mut [WindVector] {
        &mut self.wind
    }
}

/// One sample anchored at `origin`, the last observed hour.
///
/// Inputs cover `origin + 1 - tau_in ..= origin`; targets and future weather
/// cover `origin + 1 ..= origin + tau_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleWindow {
    pub origin: usize,
    pub tau_in: usize,
    pub tau_out: usize,
}

impl SampleWindow {
    pub fn first_input(&self) -> usize {
        self.origin + 1 - self.tau_in
    }

    pub fn input_hours(&self) -> core::ops::RangeInclusive<usize> {
        self.first_input()..=self.origin
    }

    pub fn target_hours(&self) -> core::ops::RangeInclusive<usize> {
        self.origin + 1..=self.origin + self.tau_out
    }

    pub fn target_end(&self) -> usize {
        self.origin + self.tau_out
    }
}

/// Every window with step one hour: `hours - (tau_in + tau_out) + 1` of them.
pub fn make_windows(hours: usize, tau_in: usize, tau_out: usize) -> Result<Vec<SampleWindow>> {
    if tau_in == 0 || tau_out == 0 {
        return Err(Error::Config("tau_in and tau_out must be positive".into()));
    }
    let span = tau_in + tau_out;
    if hours < span {
        return Err(Error::Data(alloc::format!(
            "{hours} hours is shorter than one window ({span})"
        )));
    }
    Ok((tau_in - 1..=hours - tau_out - 1)
        .map(|origin| SampleWindow {
            origin,
            tau_in,
            tau_out,
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

impl Split {
    /// Hours `[0, end)` visible to training: every input and target of a training window.
    pub fn train_hours(&self) -> usize {
        self.train.iter().map(|w| w.target_end() + 1).max().unwrap_or(0)
    }
}

/// Sequential split ordered by each window's target end.
pub fn split_chronological(windows: &[SampleWindow], fractions: [f64; 3]) -> Result<Split> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(alloc::format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut sorted = windows.to_vec();
    sorted.sort_by_key(|w| (w.target_end(), w.origin));
    let n = sorted.len() as f64;
    let n_train = libm::round(n * fractions[0]) as usize;
    let n_val = (libm::round(n * (fractions[0] + fractions[1])) as usize).saturating_sub(n_train);
    let test = sorted.split_off((n_train + n_val).min(sorted.len()));
    let val = sorted.split_off(n_train.min(sorted.len()));
    Ok(Split {
        train: sorted,
        val,
        test,
    })
}

/// Mean and standard deviation of one feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Population moments; the std is floored at [`Moments::STD_FLOOR`].
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        if n == 0 {
            return Moments { mean: 0.0, std: 1.0 };
        }
        let mean = sum / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Moments {
            mean,
            std: math::sqrt(var).max(Self::STD_FLOOR),
        }
    }

    pub fn is_floored(&self) -> bool {
        self.std <= Self::STD_FLOOR
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Normalization statistics fitted on the training hours only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub aqi: Moments,
    pub weather: [Moments; WEATHER_DIM],
    pub poi: [Moments; POI_DIM],
}

impl NormStats {
    /// Fits on hours `[0, train_hours)`; POI moments are taken across stations.
    pub fn fit(network: &Network, obs: &Observations, train_hours: usize) -> Result<Self> {
        if train_hours == 0 || train_hours > obs.hours() {
            return Err(Error::Data("empty or out-of-range training span".into()));
        }
        let aqi = Moments::of(obs.aqi[..train_hours * obs.stations].iter().copied());
        let weather = core::array::from_fn(|f| {
            Moments::of((0..train_hours).flat_map(move |h| (0..obs.cities).map(move |c| obs.weather(h, c)[f])))
        });
        let poi = core::array::from_fn(|f| Moments::of(network.stations().iter().map(move |s| s.poi[f])));
        Ok(NormStats { aqi, weather, poi })
    }

    /// Names of features whose std was floored (constant on the training span).
    pub fn constant_features(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.aqi.is_floored() {
            out.push("aqi");
        }
        for (m, name) in self.weather.iter().zip(WEATHER_FIELDS) {
            if m.is_floored() {
                out.push(name);
            }
        }
        out
    }

    /// Z-scores AQI and weather in place.
    pub fn normalize(&self, obs: &Observations) -> Observations {
        let mut out = obs.clone();
        for v in &mut out.aqi {
            *v = self.aqi.apply(*v);
        }
        for (i, v) in out.weather.iter_mut().enumerate() {
            *v = self.weather[i % WEATHER_DIM].apply(*v);
        }
        out
    }

    pub fn normalize_poi(&self, poi: &[f64; POI_DIM]) -> [f64; POI_DIM] {
        core::array::from_fn(|i| self.poi[i].apply(poi[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(36, 24, 12).unwrap().len(), 1);
        assert_eq!(make_windows(40, 24, 12).unwrap().len(), 5);
        assert!(make_windows(35, 24, 12).is_err());
        let w = make_windows(40, 24, 12).unwrap()[0];
        assert_eq!(w.input_hours(), 0..=23);
        assert_eq!(w.target_hours(), 24..=35);
    }

    #[test]
    fn split_sizes() {
        let ws = make_windows(100 + 35, 24, 12).unwrap();
        assert_eq!(ws.len(), 100);
        let s = split_chronological(&ws, [0.7, 0.1, 0.2]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        assert!(split_chronological(&ws, [0.7, 0.2, 0.2]).is_err());
    }

    #[test]
    fn moments_round_trip() {
        let m = Moments { mean: 50.0, std: 10.0 };
        assert_eq!(m.apply(60.0), 1.0);
        for v in [-3.25, 0.0, 17.5, 1e6] {
            assert!((m.invert(m.apply(v)) - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
        let c = Moments::of([4.0, 4.0, 4.0].into_iter());
        assert!(c.is_floored());
        assert_eq!(c.apply(4.0), 0.0);
    }
}

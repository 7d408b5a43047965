use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model component removed for an ablation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationFlag {
    Weather,
    Poi,
    Hierarchy,
    #[serde(alias = "city-lstm")]
    CityLstm,
    Dynamic,
}

impl AblationFlag {
    pub const ALL: [AblationFlag; 5] = [
        AblationFlag::Weather,
        AblationFlag::Poi,
        AblationFlag::Hierarchy,
        AblationFlag::CityLstm,
        AblationFlag::Dynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationFlag::Weather => "weather",
            AblationFlag::Poi => "poi",
            AblationFlag::Hierarchy => "hierarchy",
            AblationFlag::CityLstm => "city-lstm",
            AblationFlag::Dynamic => "dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weather" => Some(AblationFlag::Weather),
            "poi" => Some(AblationFlag::Poi),
            "hierarchy" => Some(AblationFlag::Hierarchy),
            "city-lstm" | "city_lstm" => Some(AblationFlag::CityLstm),
            "dynamic" => Some(AblationFlag::Dynamic),
            _ => None,
        }
    }
}

/// Resolved set of removed components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub no_weather: bool,
    pub no_poi: bool,
    pub no_hierarchy: bool,
    pub no_city_lstm: bool,
    pub no_dynamic: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        no_weather: false,
        no_poi: false,
        no_hierarchy: false,
        no_city_lstm: false,
        no_dynamic: false,
    };

    /// Resolves flags; removing the hierarchy already removes the city LSTM,
    /// so asking for both is rejected.
    pub fn from_flags(flags: &[AblationFlag]) -> Result<Self> {
        let mut a = Ablation::default();
        for f in flags {
            match f {
                AblationFlag::Weather => a.no_weather = true,
                AblationFlag::Poi => a.no_poi = true,
                AblationFlag::Hierarchy => a.no_hierarchy = true,
                AblationFlag::CityLstm => a.no_city_lstm = true,
                AblationFlag::Dynamic => a.no_dynamic = true,
            }
        }
        if a.no_hierarchy && a.no_city_lstm {
            return Err(Error::Config(
                "`hierarchy` and `city-lstm` ablations contradict: without the city graph there is no city LSTM to replace".into(),
            ));
        }
        Ok(a)
    }

    pub fn flags(&self) -> Vec<AblationFlag> {
        let mut out = Vec::new();
        let pairs = [
            (self.no_weather, AblationFlag::Weather),
            (self.no_poi, AblationFlag::Poi),
            (self.no_hierarchy, AblationFlag::Hierarchy),
            (self.no_city_lstm, AblationFlag::CityLstm),
            (self.no_dynamic, AblationFlag::Dynamic),
        ];
        for (on, f) in pairs {
            if on {
                out.push(f);
            }
        }
        out
    }
}

fn default_tau_in() -> usize {
    24
}
fn default_tau_out() -> usize {
    12
}
fn default_lambda() -> f64 {
    1.2
}
fn default_gnn_hidden() -> usize {
    32
}
fn default_lstm_hidden() -> usize {
    64
}
fn default_batch_size() -> usize {
    128
}
fn default_epochs() -> usize {
    300
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_split() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

/// Training and model hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_tau_in")]
    pub tau_in: usize,
    #[serde(default = "default_tau_out")]
    pub tau_out: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_gnn_hidden")]
    pub gnn_hidden: usize,
    #[serde(default = "default_lstm_hidden")]
    pub lstm_hidden: usize,
    /// Width of the lower-updating vector; defaults to `gnn_hidden`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lu_dim: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub ablate: Vec<AblationFlag>,
    /// Cities whose stations are scored; `None` scores every city.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_cities: Option<Vec<String>>,
    /// Restrict the training loss to `eval_cities` as well.
    #[serde(default)]
    pub loss_on_eval_cities: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau_in: default_tau_in(),
            tau_out: default_tau_out(),
            lambda: default_lambda(),
            gnn_hidden: default_gnn_hidden(),
            lstm_hidden: default_lstm_hidden(),
            lu_dim: None,
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            seed: 0,
            split: default_split(),
            ablate: Vec::new(),
            eval_cities: None,
            loss_on_eval_cities: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.tau_in == 0 || self.tau_out == 0 {
            return bad("tau_in and tau_out must be positive");
        }
        if !(self.lambda >= 1.0) || !self.lambda.is_finite() {
            return bad("lambda must be >= 1");
        }
        if self.gnn_hidden == 0 || self.lstm_hidden == 0 || self.lu_dim == Some(0) {
            return bad("hidden sizes must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1");
        }
        Ablation::from_flags(&self.ablate)?;
        Ok(())
    }

    pub fn ablation(&self) -> Result<Ablation> {
        Ablation::from_flags(&self.ablate)
    }

    pub fn lu_width(&self) -> usize {
        self.lu_dim.unwrap_or(self.gnn_hidden)
    }
}

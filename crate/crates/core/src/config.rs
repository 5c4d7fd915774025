//! Simulation configuration.
//!
//! The on-disk form is TOML with one section per subsystem. Every section
//! rejects unknown keys so that typos surface as errors naming the key.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, RateTable};
use crate::error::{Result, SimError};
use crate::policy::{Mode, PolicyFamily, PolicyKind};
use crate::predictor::{Architecture, ConvLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub room_size_m: f64,
    pub num_aps: usize,
    pub num_pois: usize,
    pub num_app_types: usize,
    pub interarrival_mean_s: f64,
    pub poi_stay_min_s: f64,
    pub poi_stay_max_s: f64,
    pub pois_per_user_min: usize,
    pub pois_per_user_max: usize,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub demand_min_mbps: f64,
    pub demand_max_mbps: f64,
    /// Uplink demand as a fraction of downlink demand.
    pub ul_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            room_size_m: 300.0,
            num_aps: 4,
            num_pois: 4,
            num_app_types: 3,
            interarrival_mean_s: 10.0,
            poi_stay_min_s: 1.0,
            poi_stay_max_s: 100.0,
            pois_per_user_min: 1,
            pois_per_user_max: 3,
            speed_min_mps: 0.1,
            speed_max_mps: 2.0,
            demand_min_mbps: 10.0,
            demand_max_mbps: 1000.0,
            ul_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    /// X: history tuples fed to the network.
    pub input_slots: usize,
    /// Y: future tuples predicted.
    pub output_slots: usize,
    pub conv: Vec<ConvLayer>,
    /// Hidden dense widths; the linear output layer of width Y·F is implied.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            input_slots: 25,
            output_slots: 10,
            conv: vec![
                ConvLayer {
                    filters: 16,
                    kernel: 5,
                    stride: 1,
                    pool: 2,
                },
                ConvLayer {
                    filters: 32,
                    kernel: 3,
                    stride: 1,
                    pool: 1,
                },
            ],
            hidden: vec![128],
            learning_rate: 1e-3,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub kind: PolicyFamily,
    pub mode: Mode,
    /// Improvement needed to hand over in conservative mode.
    pub threshold_mbps: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyFamily::Predictive,
            mode: Mode::Greedy,
            threshold_mbps: 200.0,
        }
    }
}

impl PolicyConfig {
    pub fn policy(&self) -> PolicyKind {
        PolicyKind::new(self.kind, self.mode, self.threshold_mbps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub seed: u64,
    pub slot_s: f64,
    pub total_slots: u64,
    /// The model trains from slot 0 but issues no forecasts before this slot.
    pub warm_up_slots: u64,
    pub handover_interruption_s: f64,
    /// Length of the trailing window used for the final prediction error.
    pub final_window_slots: u64,
    pub record_tuples: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            slot_s: 1.0,
            total_slots: 20_000,
            warm_up_slots: 5_000,
            handover_interruption_s: 0.1,
            final_window_slots: 1_000,
            record_tuples: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub rate_table: RateTable,
    pub scenario: ScenarioConfig,
    pub channel: ChannelParams,
    pub predictor: PredictorConfig,
    pub policy: PolicyConfig,
    pub engine: EngineConfig,
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SimError::config(key, format!("must be finite and > 0, got {v}")))
    }
}

fn ordered(key: &str, lo: f64, hi: f64) -> Result<()> {
    if lo <= hi {
        Ok(())
    } else {
        Err(SimError::config(key, format!("min {lo} exceeds max {hi}")))
    }
}

impl SimConfig {
    /// Number of features per tuple: downlink, uplink and one RSSI per AP.
    pub fn features(&self) -> usize {
        2 + self.scenario.num_aps
    }

    pub fn architecture(&self) -> Architecture {
        let p = &self.predictor;
        let mut dense = p.hidden.clone();
        dense.push(p.output_slots * self.features());
        Architecture {
            input_slots: p.input_slots,
            features: self.features(),
            output_slots: p.output_slots,
            conv: p.conv.clone(),
            dense,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        positive("scenario.room_size_m", s.room_size_m)?;
        if s.num_aps == 0 {
            return Err(SimError::config("scenario.num_aps", "need at least one AP"));
        }
        if s.num_pois == 0 {
            return Err(SimError::config("scenario.num_pois", "need at least one PoI"));
        }
        if s.num_app_types == 0 {
            return Err(SimError::config(
                "scenario.num_app_types",
                "need at least one application type",
            ));
        }
        positive("scenario.interarrival_mean_s", s.interarrival_mean_s)?;
        positive("scenario.poi_stay_min_s", s.poi_stay_min_s)?;
        positive("scenario.poi_stay_max_s", s.poi_stay_max_s)?;
        ordered("scenario.poi_stay_max_s", s.poi_stay_min_s, s.poi_stay_max_s)?;
        if s.pois_per_user_min == 0 || s.pois_per_user_min > s.pois_per_user_max {
            return Err(SimError::config(
                "scenario.pois_per_user_min",
                "need 1 <= pois_per_user_min <= pois_per_user_max",
            ));
        }
        positive("scenario.speed_min_mps", s.speed_min_mps)?;
        positive("scenario.speed_max_mps", s.speed_max_mps)?;
        ordered("scenario.speed_max_mps", s.speed_min_mps, s.speed_max_mps)?;
        positive("scenario.demand_min_mbps", s.demand_min_mbps)?;
        positive("scenario.demand_max_mbps", s.demand_max_mbps)?;
        ordered("scenario.demand_max_mbps", s.demand_min_mbps, s.demand_max_mbps)?;
        if !(s.ul_fraction > 0.0 && s.ul_fraction <= 1.0) {
            return Err(SimError::config("scenario.ul_fraction", "must lie in (0, 1]"));
        }

        self.channel.validate(&self.rate_table)?;

        let p = &self.predictor;
        if p.input_slots == 0 {
            return Err(SimError::config("predictor.input_slots", "must be >= 1"));
        }
        if p.output_slots == 0 {
            return Err(SimError::config("predictor.output_slots", "must be >= 1"));
        }
        positive("predictor.learning_rate", p.learning_rate)?;
        if !(0.0..1.0).contains(&p.momentum) {
            return Err(SimError::config("predictor.momentum", "must lie in [0, 1)"));
        }
        self.architecture()
            .validate()
            .map_err(|e| SimError::config("predictor.conv", e.to_string()))?;

        let pol = &self.policy;
        if !(pol.threshold_mbps.is_finite() && pol.threshold_mbps >= 0.0) {
            return Err(SimError::config("policy.threshold_mbps", "must be finite and >= 0"));
        }

        let e = &self.engine;
        positive("engine.slot_s", e.slot_s)?;
        if !(e.handover_interruption_s >= 0.0 && e.handover_interruption_s <= e.slot_s) {
            return Err(SimError::config(
                "engine.handover_interruption_s",
                "must lie in [0, slot_s]",
            ));
        }
        if pol.kind == PolicyFamily::Predictive && e.total_slots > 0 && e.total_slots <= e.warm_up_slots {
            return Err(SimError::config(
                "engine.total_slots",
                "predictive policies need total_slots > warm_up_slots",
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }
}

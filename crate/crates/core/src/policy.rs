//! User → AP association.
//!
//! A single sequential greedy pass: users are visited in ascending id, each
//! AP is scored by the user's mean forecast rate divided by the AP's load
//! (counted from zero within this pass) plus one, and the user only leaves
//! its current AP when the best score beats the current one by more than the
//! threshold. Predictive and reactive policies share this machinery and
//! differ only in the forecast they feed it.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::RateTable;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyFamily {
    Predictive,
    Reactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Greedy,
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyVariant {
    PredictiveGreedy,
    PredictiveConservative,
    ReactiveGreedy,
    ReactiveConservative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyKind {
    pub variant: PolicyVariant,
    /// Required improvement before a handover; zero for greedy variants.
    pub threshold_mbps: f64,
}

impl PolicyKind {
    pub fn new(family: PolicyFamily, mode: Mode, conservative_threshold_mbps: f64) -> Self {
        use PolicyVariant::*;
        let variant = match (family, mode) {
            (PolicyFamily::Predictive, Mode::Greedy) => PredictiveGreedy,
            (PolicyFamily::Predictive, Mode::Conservative) => PredictiveConservative,
            (PolicyFamily::Reactive, Mode::Greedy) => ReactiveGreedy,
            (PolicyFamily::Reactive, Mode::Conservative) => ReactiveConservative,
        };
        let threshold_mbps = match mode {
            Mode::Greedy => 0.0,
            Mode::Conservative => conservative_threshold_mbps,
        };
        Self {
            variant,
            threshold_mbps,
        }
    }

    pub fn is_predictive(&self) -> bool {
        matches!(
            self.variant,
            PolicyVariant::PredictiveGreedy | PolicyVariant::PredictiveConservative
        )
    }
}

impl fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolicyVariant::PredictiveGreedy => "predictive-greedy",
            PolicyVariant::PredictiveConservative => "predictive-conservative",
            PolicyVariant::ReactiveGreedy => "reactive-greedy",
            PolicyVariant::ReactiveConservative => "reactive-conservative",
        };
        f.write_str(s)
    }
}

/// Expected PHY rates of one user towards every AP over the forecast horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RateForecast {
    pub user_id: u64,
    /// `rates[ap][step]` in Mbps; every AP row has the same horizon length.
    pub rates: Vec<Vec<f64>>,
}

/// Mean offered rate over the horizon once the user joins an AP that already
/// carries `load` users.
pub fn score_ap(user_rates: &[f64], load: usize) -> f64 {
    if user_rates.is_empty() {
        return 0.0;
    }
    let mean = user_rates.iter().sum::<f64>() / user_rates.len() as f64;
    mean / (load as f64 + 1.0)
}

/// Single-step forecast: the rate each AP would offer at the observed RSSI.
pub fn reactive_forecast(user_id: u64, rssi: &[f64], table: &RateTable) -> RateForecast {
    RateForecast {
        user_id,
        rates: rssi.iter().map(|&r| vec![table.phy_rate(r)]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AssociationPlan {
    /// `(user_id, ap)` in ascending user id.
    pub assignments: Vec<(u64, Option<usize>)>,
    pub handovers: BTreeSet<u64>,
    pub loads: Vec<usize>,
}

impl AssociationPlan {
    pub fn ap_of(&self, user_id: u64) -> Option<usize> {
        self.assignments
            .binary_search_by_key(&user_id, |&(u, _)| u)
            .ok()
            .and_then(|i| self.assignments[i].1)
    }

    pub fn associated(&self) -> usize {
        self.assignments.iter().filter(|(_, ap)| ap.is_some()).count()
    }
}

/// Runs the greedy pass. `forecasts` and `current` are parallel and sorted
/// by user id.
pub fn associate(
    forecasts: &[RateForecast],
    current: &[Option<usize>],
    num_aps: usize,
    threshold_mbps: f64,
) -> Result<AssociationPlan> {
    if forecasts.len() != current.len() {
        return Err(SimError::Contract(format!(
            "{} forecasts for {} users",
            forecasts.len(),
            current.len()
        )));
    }
    let mut plan = AssociationPlan {
        assignments: Vec::with_capacity(forecasts.len()),
        handovers: BTreeSet::new(),
        loads: vec![0; num_aps],
    };
    let mut prev_id = None;
    let mut scores = vec![0.0; num_aps];
    for (fc, &cur) in forecasts.iter().zip(current) {
        if prev_id.is_some_and(|p| p >= fc.user_id) {
            return Err(SimError::Contract("forecasts must be sorted by user id".into()));
        }
        prev_id = Some(fc.user_id);
        if fc.rates.len() != num_aps {
            return Err(SimError::Contract(format!(
                "user {} has forecasts for {} of {num_aps} APs",
                fc.user_id,
                fc.rates.len()
            )));
        }
        if cur.is_some_and(|a| a >= num_aps) {
            return Err(SimError::Contract(format!("user {} on unknown AP", fc.user_id)));
        }

        let mut best: Option<usize> = None;
        for (ap, rates) in fc.rates.iter().enumerate() {
            scores[ap] = score_ap(rates, plan.loads[ap]);
            if scores[ap] > 0.0 && best.is_none_or(|b| scores[ap] > scores[b]) {
                best = Some(ap);
            }
        }

        let chosen = match (best, cur) {
            (None, _) => None,
            (Some(b), None) => Some(b),
            (Some(b), Some(c)) => {
                if scores[b] - scores[c] > threshold_mbps {
                    Some(b)
                } else {
                    Some(c)
                }
            }
        };
        if let Some(ap) = chosen {
            plan.loads[ap] += 1;
            if cur.is_some_and(|c| c != ap) {
                plan.handovers.insert(fc.user_id);
            }
        }
        plan.assignments.push((fc.user_id, chosen));
    }
    Ok(plan)
}

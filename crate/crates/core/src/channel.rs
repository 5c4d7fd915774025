//! Geometry → signal strength → achievable rate.
//!
//! Line-of-sight log-distance path loss with a 60 GHz reference loss at 1 m and
//! linear oxygen absorption, Gaussian per-sample fluctuation, and a stepped
//! RSSI → PHY-rate table emulating MCS selection. Airtime is split equally
//! between the users of one AP.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scenario::{AccessPoint, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub eirp_dbm: f64,
    pub rx_gain_dbi: f64,
    /// Path loss at the 1 m reference distance.
    pub pl0_db: f64,
    pub path_loss_exp: f64,
    pub oxygen_db_per_m: f64,
    pub noise_sigma_db: f64,
    pub sensitivity_dbm: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            eirp_dbm: 40.0,
            rx_gain_dbi: 10.0,
            pl0_db: 68.0,
            path_loss_exp: 2.0,
            oxygen_db_per_m: 0.015,
            noise_sigma_db: 0.5,
            sensitivity_dbm: -80.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self, table: &RateTable) -> Result<()> {
        let fields = [
            ("channel.eirp_dbm", self.eirp_dbm),
            ("channel.rx_gain_dbi", self.rx_gain_dbi),
            ("channel.pl0_db", self.pl0_db),
            ("channel.path_loss_exp", self.path_loss_exp),
            ("channel.oxygen_db_per_m", self.oxygen_db_per_m),
            ("channel.noise_sigma_db", self.noise_sigma_db),
            ("channel.sensitivity_dbm", self.sensitivity_dbm),
        ];
        for (key, v) in fields {
            if !v.is_finite() {
                return Err(SimError::config(key, "must be finite"));
            }
        }
        if self.noise_sigma_db < 0.0 {
            return Err(SimError::config("channel.noise_sigma_db", "must be >= 0"));
        }
        if let Some(&(top, _)) = table.tiers().first() {
            if self.sensitivity_dbm >= top {
                return Err(SimError::config(
                    "channel.sensitivity_dbm",
                    "must lie below the highest rate-table threshold",
                ));
            }
        }
        Ok(())
    }

    /// Noise-free received power at distance `d` metres.
    pub fn mean_rssi_at(&self, d: f64) -> f64 {
        let d_eff = d.max(1.0);
        let loss = self.pl0_db + 10.0 * self.path_loss_exp * d_eff.log10() + self.oxygen_db_per_m * d;
        self.eirp_dbm + self.rx_gain_dbi - loss
    }

    pub fn mean_rssi(&self, ap: &AccessPoint, pos: Vec2) -> f64 {
        self.mean_rssi_at(ap.position.distance(pos))
    }

    /// One RSSI sample between `ap` and a receiver at `pos`.
    pub fn rssi<R: Rng + ?Sized>(&self, ap: &AccessPoint, pos: Vec2, rng: &mut R) -> f64 {
        let mean = self.mean_rssi(ap, pos);
        if self.noise_sigma_db == 0.0 {
            return mean;
        }
        let noise = Normal::new(0.0, self.noise_sigma_db).expect("validated sigma");
        mean + noise.sample(rng)
    }
}

/// Descending (threshold dBm, rate Mbps) steps. Anything below the last
/// threshold is out of coverage and yields 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct RateTable(Vec<(f64, f64)>);

impl RateTable {
    pub fn new(tiers: Vec<(f64, f64)>) -> Result<Self> {
        if tiers.is_empty() {
            return Err(SimError::config("channel.rate_table", "must have at least one tier"));
        }
        for &(th, rate) in &tiers {
            if !th.is_finite() || !rate.is_finite() || rate <= 0.0 {
                return Err(SimError::config(
                    "channel.rate_table",
                    "thresholds must be finite and rates positive",
                ));
            }
        }
        for w in tiers.windows(2) {
            if w[1].0 >= w[0].0 || w[1].1 >= w[0].1 {
                return Err(SimError::config(
                    "channel.rate_table",
                    "thresholds and rates must be strictly decreasing",
                ));
            }
        }
        Ok(Self(tiers))
    }

    pub fn tiers(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn max_rate(&self) -> f64 {
        self.0[0].1
    }

    /// Rate of the first tier whose threshold does not exceed `rssi_dbm`.
    pub fn phy_rate(&self, rssi_dbm: f64) -> f64 {
        self.0
            .iter()
            .find(|&&(th, _)| th <= rssi_dbm)
            .map_or(0.0, |&(_, rate)| rate)
    }
}

impl Default for RateTable {
    fn default() -> Self {
        Self(vec![
            (-48.0, 8085.0),
            (-54.0, 6757.0),
            (-58.0, 5775.0),
            (-62.0, 4620.0),
            (-66.0, 3850.0),
            (-70.0, 2502.5),
            (-74.0, 1925.0),
            (-77.0, 962.5),
            (-80.0, 385.0),
        ])
    }
}

impl TryFrom<Vec<(f64, f64)>> for RateTable {
    type Error = SimError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        RateTable::new(v)
    }
}

impl From<RateTable> for Vec<(f64, f64)> {
    fn from(t: RateTable) -> Self {
        t.0
    }
}

/// Equal time-division share of an AP among `n_users`.
pub fn offered_share(rate_mbps: f64, n_users: usize) -> f64 {
    assert!(n_users >= 1, "offered_share needs at least one user");
    rate_mbps / n_users as f64
}

/// Throughput actually delivered in a slot, capped by demand and reduced by
/// the fraction of the slot lost to a handover.
pub fn achieved_throughput(share_mbps: f64, demand_mbps: f64, interruption_fraction: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&interruption_fraction));
    share_mbps.min(demand_mbps).max(0.0) * (1.0 - interruption_fraction)
}

//! The physical world: room, APs, points of interest, application profiles,
//! user arrivals and straight-line waypoint mobility.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn clamp_to(self, size: f64) -> Vec2 {
        Vec2::new(self.x.clamp(0.0, size), self.y.clamp(0.0, size))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub ap_id: usize,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub poi_id: usize,
    pub position: Vec2,
    pub stay_min_s: f64,
    pub stay_max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationProfile {
    pub app_id: usize,
    pub dl_min_mbps: f64,
    pub dl_max_mbps: f64,
    pub ul_fraction: f64,
    pub compatible_pois: BTreeSet<usize>,
}

/// The static part of a world. Serialisable so one deployment can be pinned
/// across policy comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room_size_m: f64,
    pub aps: Vec<AccessPoint>,
    pub pois: Vec<Poi>,
    pub apps: Vec<ApplicationProfile>,
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario always serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (0.0..=self.room_size_m).contains(&p.x) && (0.0..=self.room_size_m).contains(&p.y)
    }
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R, size: f64) -> Vec2 {
    Vec2::new(rng.random_range(0.0..=size), rng.random_range(0.0..=size))
}

fn perimeter_point<R: Rng + ?Sized>(rng: &mut R, size: f64) -> Vec2 {
    let t = rng.random_range(0.0..4.0 * size);
    let along = t % size;
    match (t / size) as u32 {
        0 => Vec2::new(along, 0.0),
        1 => Vec2::new(size, along),
        2 => Vec2::new(size - along, size),
        _ => Vec2::new(0.0, size - along),
    }
}

fn uniform_between<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub fn generate_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    if cfg.num_aps == 0 {
        return Err(SimError::config("scenario.num_aps", "need at least one AP"));
    }
    if cfg.num_pois == 0 {
        return Err(SimError::config("scenario.num_pois", "need at least one PoI"));
    }
    if cfg.num_app_types == 0 {
        return Err(SimError::config(
            "scenario.num_app_types",
            "need at least one application type",
        ));
    }
    if !(cfg.room_size_m > 0.0 && cfg.room_size_m.is_finite()) {
        return Err(SimError::config("scenario.room_size_m", "must be finite and > 0"));
    }
    let size = cfg.room_size_m;

    let aps = (0..cfg.num_aps)
        .map(|ap_id| AccessPoint {
            ap_id,
            position: uniform_point(rng, size),
        })
        .collect();

    // Each PoI gets its own stay window inside the global bounds, so some
    // places are short stops and others long ones.
    let pois = (0..cfg.num_pois)
        .map(|poi_id| {
            let position = uniform_point(rng, size);
            let a = uniform_between(rng, cfg.poi_stay_min_s, cfg.poi_stay_max_s);
            let b = uniform_between(rng, cfg.poi_stay_min_s, cfg.poi_stay_max_s);
            Poi {
                poi_id,
                position,
                stay_min_s: a.min(b),
                stay_max_s: a.max(b),
            }
        })
        .collect();

    let width = (cfg.demand_max_mbps - cfg.demand_min_mbps) / cfg.num_app_types as f64;
    let apps = (0..cfg.num_app_types)
        .map(|app_id| {
            // uniform over non-empty subsets: independent coin flips, reject empty
            let compatible_pois = loop {
                let set: BTreeSet<usize> = (0..cfg.num_pois).filter(|_| rng.random_bool(0.5)).collect();
                if !set.is_empty() {
                    break set;
                }
            };
            ApplicationProfile {
                app_id,
                dl_min_mbps: cfg.demand_min_mbps + width * app_id as f64,
                dl_max_mbps: if app_id + 1 == cfg.num_app_types {
                    cfg.demand_max_mbps
                } else {
                    cfg.demand_min_mbps + width * (app_id + 1) as f64
                },
                ul_fraction: cfg.ul_fraction,
                compatible_pois,
            }
        })
        .collect();

    Ok(Scenario {
        room_size_m: size,
        aps,
        pois,
        apps,
    })
}

/// Floor applied to a raw interarrival draw.
pub fn floor_gap(raw: f64, slot_s: f64) -> f64 {
    raw.max(slot_s)
}

/// Gap until the next arrival: Normal(mean, (mean/4)²), floored at one slot.
pub fn next_arrival_gap<R: Rng + ?Sized>(rng: &mut R, mean_s: f64, slot_s: f64) -> f64 {
    assert!(mean_s > 0.0, "mean interarrival must be positive");
    let normal = Normal::new(mean_s, mean_s / 4.0).expect("positive sigma");
    floor_gap(normal.sample(rng), slot_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Moving,
    Dwelling,
    Departed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAgent {
    pub user_id: u64,
    pub app_id: usize,
    pub itinerary: Vec<usize>,
    /// Index of the current or next itinerary stop; equals the itinerary
    /// length once the user is heading for the exit.
    pub leg: usize,
    pub position: Vec2,
    pub speed_mps: f64,
    pub phase: Phase,
    pub dwell_remaining_s: f64,
    pub dl_demand_mbps: f64,
    pub ul_demand_mbps: f64,
    pub current_ap: Option<usize>,
    pub exit_point: Vec2,
}

impl UserAgent {
    pub fn demand_mbps(&self) -> f64 {
        self.dl_demand_mbps + self.ul_demand_mbps
    }

    pub fn waypoint(&self, scenario: &Scenario) -> Vec2 {
        match self.itinerary.get(self.leg) {
            Some(&poi) => scenario.pois[poi].position,
            None => self.exit_point,
        }
    }
}

pub fn spawn_user<R: Rng + ?Sized>(scenario: &Scenario, cfg: &ScenarioConfig, user_id: u64, rng: &mut R) -> UserAgent {
    let app_id = rng.random_range(0..scenario.apps.len());
    let app = &scenario.apps[app_id];

    let mut candidates: Vec<usize> = app.compatible_pois.iter().copied().collect();
    let wanted = rng.random_range(cfg.pois_per_user_min..=cfg.pois_per_user_max);
    let count = wanted.min(candidates.len());
    let (picked, _) = candidates.partial_shuffle(rng, count);
    let itinerary = picked.to_vec();

    let size = scenario.room_size_m;
    let entry = perimeter_point(rng, size);
    let exit_point = perimeter_point(rng, size);
    let speed_mps = uniform_between(rng, cfg.speed_min_mps, cfg.speed_max_mps);
    let dl_demand_mbps = uniform_between(rng, app.dl_min_mbps, app.dl_max_mbps);

    UserAgent {
        user_id,
        app_id,
        itinerary,
        leg: 0,
        position: entry,
        speed_mps,
        phase: Phase::Moving,
        dwell_remaining_s: 0.0,
        dl_demand_mbps,
        ul_demand_mbps: app.ul_fraction * dl_demand_mbps,
        current_ap: None,
        exit_point,
    }
}

/// Advances one user by `dt` seconds.
pub fn step_user<R: Rng + ?Sized>(user: &mut UserAgent, scenario: &Scenario, dt: f64, rng: &mut R) -> Result<()> {
    if dt <= 0.0 {
        return Err(SimError::Contract(format!("non-positive step {dt}")));
    }
    match user.phase {
        Phase::Departed => Err(SimError::Contract(format!(
            "user {} stepped after departing",
            user.user_id
        ))),
        Phase::Dwelling => {
            user.dwell_remaining_s -= dt;
            if user.dwell_remaining_s <= 0.0 {
                user.dwell_remaining_s = 0.0;
                user.leg += 1;
                user.phase = Phase::Moving;
            }
            Ok(())
        }
        Phase::Moving => {
            let target = user.waypoint(scenario);
            let remaining = user.position.distance(target);
            let travel = user.speed_mps * dt;
            if travel >= remaining {
                user.position = target;
                match user.itinerary.get(user.leg) {
                    Some(&poi_id) => {
                        let poi = &scenario.pois[poi_id];
                        user.phase = Phase::Dwelling;
                        user.dwell_remaining_s = uniform_between(rng, poi.stay_min_s, poi.stay_max_s);
                    }
                    None => user.phase = Phase::Departed,
                }
            } else {
                let f = travel / remaining;
                let next = Vec2::new(
                    user.position.x + (target.x - user.position.x) * f,
                    user.position.y + (target.y - user.position.y) * f,
                );
                user.position = next.clamp_to(scenario.room_size_m);
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn default_world_shape() {
        let mut c = cfg();
        c.num_aps = 4;
        c.num_pois = 4;
        c.num_app_types = 3;
        let s = generate_scenario(&c, &mut stream(7, Stream::World)).unwrap();
        assert_eq!(s.aps.len(), 4);
        assert_eq!(s.pois.len(), 4);
        assert_eq!(s.apps.len(), 3);
        for ap in &s.aps {
            assert!(s.contains(ap.position));
        }
        for poi in &s.pois {
            assert!(s.contains(poi.position));
            assert!(1.0 <= poi.stay_min_s && poi.stay_min_s <= poi.stay_max_s && poi.stay_max_s <= 100.0);
        }
        // equal contiguous demand bands covering [10, 1000]
        assert_eq!(s.apps[0].dl_min_mbps, 10.0);
        assert!((s.apps[0].dl_max_mbps - 340.0).abs() < 1e-9);
        assert!((s.apps[1].dl_max_mbps - 670.0).abs() < 1e-9);
        assert_eq!(s.apps[2].dl_max_mbps, 1000.0);
        for w in s.apps.windows(2) {
            assert_eq!(w[0].dl_max_mbps, w[1].dl_min_mbps);
        }
        for app in &s.apps {
            assert!(!app.compatible_pois.is_empty());
            assert!(app.compatible_pois.iter().all(|&p| p < 4));
        }
    }

    #[test]
    fn singleton_world() {
        let mut c = cfg();
        c.num_aps = 1;
        c.num_pois = 1;
        c.num_app_types = 1;
        let s = generate_scenario(&c, &mut stream(3, Stream::World)).unwrap();
        assert_eq!(s.apps[0].compatible_pois, BTreeSet::from([0]));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(&cfg(), &mut stream(11, Stream::World)).unwrap();
        let b = generate_scenario(&cfg(), &mut stream(11, Stream::World)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml(), b.to_toml());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = cfg();
        c.num_aps = 0;
        assert!(generate_scenario(&c, &mut stream(1, Stream::World)).is_err());
        let mut c = cfg();
        c.room_size_m = 0.0;
        assert!(generate_scenario(&c, &mut stream(1, Stream::World)).is_err());
    }

    #[test]
    fn scenario_toml_round_trip() {
        let s = generate_scenario(&cfg(), &mut stream(5, Stream::World)).unwrap();
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        for (a, b) in s.aps.iter().zip(&back.aps) {
            assert_eq!(a.position.x.to_bits(), b.position.x.to_bits());
        }
    }

    #[test]
    fn arrival_gap_floor() {
        assert_eq!(floor_gap(-3.0, 1.0), 1.0);
        assert_eq!(floor_gap(7.5, 1.0), 7.5);
    }

    #[test]
    fn arrival_gap_reproducible_and_mean() {
        let mut a = stream(9, Stream::Arrivals);
        let mut b = stream(9, Stream::Arrivals);
        let xs: Vec<f64> = (0..100).map(|_| next_arrival_gap(&mut a, 10.0, 1.0)).collect();
        let ys: Vec<f64> = (0..100).map(|_| next_arrival_gap(&mut b, 10.0, 1.0)).collect();
        assert_eq!(xs, ys);

        let mut rng = stream(1, Stream::Arrivals);
        let n = 100_000;
        let mean = (0..n).map(|_| next_arrival_gap(&mut rng, 10.0, 1.0)).sum::<f64>() / n as f64;
        assert!((9.8..=10.3).contains(&mean), "mean {mean}");
    }

    fn world_with_compat(compat: &[usize]) -> Scenario {
        let mut s = generate_scenario(&cfg(), &mut stream(2, Stream::World)).unwrap();
        for app in &mut s.apps {
            app.compatible_pois = compat.iter().copied().collect();
        }
        s
    }

    #[test]
    fn forced_singleton_itinerary() {
        let s = world_with_compat(&[2]);
        let mut rng = stream(4, Stream::Users);
        for id in 0..50 {
            let u = spawn_user(&s, &cfg(), id, &mut rng);
            assert_eq!(u.itinerary, vec![2]);
        }
    }

    #[test]
    fn spawn_ranges() {
        let s = generate_scenario(&cfg(), &mut stream(8, Stream::World)).unwrap();
        let mut rng = stream(8, Stream::Users);
        for id in 0..10_000 {
            let u = spawn_user(&s, &cfg(), id, &mut rng);
            assert!((0.1..=2.0).contains(&u.speed_mps));
            let app = &s.apps[u.app_id];
            assert!(u.dl_demand_mbps >= app.dl_min_mbps && u.dl_demand_mbps <= app.dl_max_mbps);
            assert!((u.ul_demand_mbps - 0.1 * u.dl_demand_mbps).abs() < 1e-12);
            assert!(!u.itinerary.is_empty() && u.itinerary.len() <= 3);
            assert!(u.itinerary.iter().all(|p| app.compatible_pois.contains(p)));
            let distinct: BTreeSet<_> = u.itinerary.iter().collect();
            assert_eq!(distinct.len(), u.itinerary.len());
            assert!(s.contains(u.position) && s.contains(u.exit_point));
            let on_edge = |p: Vec2| p.x == 0.0 || p.y == 0.0 || p.x == 300.0 || p.y == 300.0;
            assert!(on_edge(u.position) && on_edge(u.exit_point));
            assert_eq!(u.phase, Phase::Moving);
        }
    }

    #[test]
    fn itinerary_length_uniform() {
        let s = world_with_compat(&[0, 1, 2, 3]);
        let mut rng = stream(12, Stream::Users);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for id in 0..n {
            counts[spawn_user(&s, &cfg(), id, &mut rng).itinerary.len() - 1] += 1;
        }
        let expected = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square, 2 dof, 99.9% quantile
        assert!(chi2 < 13.82, "counts {counts:?} chi2 {chi2}");
    }

    fn lone_user(s: &Scenario) -> UserAgent {
        UserAgent {
            user_id: 0,
            app_id: 0,
            itinerary: vec![0],
            leg: 0,
            position: Vec2::new(0.0, 0.0),
            speed_mps: 1.0,
            phase: Phase::Moving,
            dwell_remaining_s: 0.0,
            dl_demand_mbps: 100.0,
            ul_demand_mbps: 10.0,
            current_ap: None,
            exit_point: Vec2::new(0.0, s.room_size_m),
        }
    }

    #[test]
    fn unit_advance_along_segment() {
        let mut s = world_with_compat(&[0]);
        s.pois[0].position = Vec2::new(3.0, 4.0);
        let mut u = lone_user(&s);
        step_user(&mut u, &s, 1.0, &mut stream(1, Stream::Mobility)).unwrap();
        assert!((u.position.x - 0.6).abs() < 1e-12);
        assert!((u.position.y - 0.8).abs() < 1e-12);
        assert_eq!(u.phase, Phase::Moving);
    }

    #[test]
    fn dwell_expiry_resumes_moving() {
        let s = world_with_compat(&[0]);
        let mut u = lone_user(&s);
        u.phase = Phase::Dwelling;
        u.dwell_remaining_s = 0.5;
        step_user(&mut u, &s, 1.0, &mut stream(1, Stream::Mobility)).unwrap();
        assert_eq!(u.phase, Phase::Moving);
        assert_eq!(u.leg, 1);
    }

    #[test]
    fn stepping_departed_user_is_error() {
        let s = world_with_compat(&[0]);
        let mut u = lone_user(&s);
        u.phase = Phase::Departed;
        assert!(step_user(&mut u, &s, 1.0, &mut stream(1, Stream::Mobility)).is_err());
    }

    #[test]
    fn mean_dwell_time() {
        let mut s = world_with_compat(&[0]);
        s.pois[0].stay_min_s = 1.0;
        s.pois[0].stay_max_s = 100.0;
        let mut rng = stream(21, Stream::Mobility);
        let visits = 20_000;
        let mut total = 0.0;
        for _ in 0..visits {
            let mut u = lone_user(&s);
            u.position = s.pois[0].position;
            step_user(&mut u, &s, 1.0, &mut rng).unwrap();
            assert_eq!(u.phase, Phase::Dwelling);
            total += u.dwell_remaining_s;
        }
        let mean = total / visits as f64;
        // U(1, 100) has mean 50.5 and sd ~28.6; 5 standard errors ~ 1.0
        assert!((mean - 50.5).abs() < 1.0, "mean dwell {mean}");
    }

    #[test]
    fn full_trip_phase_sequence() {
        let s = generate_scenario(&cfg(), &mut stream(31, Stream::World)).unwrap();
        let mut rng = stream(31, Stream::Users);
        for id in 0..200 {
            let mut u = spawn_user(&s, &cfg(), id, &mut rng);
            let mut phases = vec![u.phase];
            let mut guard = 0;
            while u.phase != Phase::Departed {
                step_user(&mut u, &s, 1.0, &mut rng).unwrap();
                assert!(s.contains(u.position));
                if *phases.last().unwrap() != u.phase {
                    phases.push(u.phase);
                }
                guard += 1;
                assert!(guard < 100_000);
            }
            let dwells = phases.iter().filter(|&&p| p == Phase::Dwelling).count();
            assert_eq!(dwells, u.itinerary.len());
            assert_eq!(phases.len(), 2 * u.itinerary.len() + 2);
        }
    }
}

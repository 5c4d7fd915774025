//! Slot-by-slot audit of a running simulation: airtime, throughput caps,
//! handover cost, geometry, phase sequences and itinerary legality.

use std::collections::{BTreeMap, BTreeSet};

use wigig_core::engine::{Simulation, SlotOutcome};
use wigig_core::scenario::Phase;
use wigig_core::SimConfig;

const EPS: f64 = 1e-9;

#[derive(Default)]
struct Trail {
    app: usize,
    /// Run-length compressed phases, starting from the spawn state.
    phases: Vec<Phase>,
    visits: Vec<usize>,
}

#[derive(Default)]
pub struct Audit {
    pub violations: Vec<String>,
    pub slots: u64,
    pub user_slots: u64,
    pub departures: u64,
    pub handovers: u64,
    trails: BTreeMap<u64, Trail>,
    seen: BTreeSet<u64>,
}

impl Audit {
    fn fail(&mut self, msg: String) {
        if self.violations.len() < 50 {
            self.violations.push(msg);
        }
    }

    pub fn observe(&mut self, cfg: &SimConfig, sim: &Simulation, out: &SlotOutcome) {
        let t = out.record.slot;
        self.slots += 1;
        let scenario = sim.scenario();
        let room = scenario.room_size_m;
        let interruption = cfg.engine.handover_interruption_s / cfg.engine.slot_s;
        let max_rate = cfg.rate_table.max_rate();

        let mut airtime = vec![0.0; scenario.aps.len()];
        let mut carried = vec![0.0; scenario.aps.len()];
        let mut members = vec![0usize; scenario.aps.len()];
        let mut present = 0;
        for u in &out.users {
            let id = u.user_id;
            if self.seen.insert(id) {
                self.trails.insert(
                    id,
                    Trail {
                        app: u.app_id,
                        phases: vec![Phase::Moving],
                        visits: Vec::new(),
                    },
                );
            }
            let trail = self.trails.get_mut(&id).expect("tracked");
            if trail.phases.last() != Some(&u.phase) {
                trail.phases.push(u.phase);
                if u.phase == Phase::Dwelling {
                    match u.dwelling_at {
                        Some(p) => trail.visits.push(p),
                        None => self.violations.push(format!("slot {t}: user {id} dwells nowhere")),
                    }
                }
            }
            if u.phase == Phase::Departed {
                self.departures += 1;
                continue;
            }
            present += 1;
            self.user_slots += 1;
            if !(0.0..=room).contains(&u.position.x) || !(0.0..=room).contains(&u.position.y) {
                self.fail(format!("slot {t}: user {id} outside the room at {:?}", u.position));
            }
            if u.rssi.len() != scenario.aps.len() || u.rssi.iter().any(|r| !r.is_finite()) {
                self.fail(format!("slot {t}: user {id} has a malformed RSSI vector"));
            }
            let achieved = u.achieved_mbps();
            if u.dl_mbps < 0.0 || u.ul_mbps < 0.0 {
                self.fail(format!("slot {t}: user {id} negative traffic"));
            }
            let cap = u.share_mbps.min(u.demand_mbps);
            if achieved > cap + EPS {
                self.fail(format!(
                    "slot {t}: user {id} gets {achieved} > min(share, demand) = {cap}"
                ));
            }
            if u.handover {
                self.handovers += 1;
                if achieved > cap * (1.0 - interruption) + EPS {
                    self.fail(format!("slot {t}: user {id} handed over without losing airtime"));
                }
            }
            match u.ap {
                Some(a) => {
                    // a plan may keep a user on a link that is dead this slot;
                    // it then uses no airtime and carries nothing
                    if u.phy_rate_mbps > 0.0 {
                        airtime[a] += u.share_mbps / u.phy_rate_mbps;
                    } else if achieved != 0.0 {
                        self.fail(format!("slot {t}: user {id} carries traffic on a dead link"));
                    }
                    carried[a] += achieved;
                    members[a] += 1;
                }
                None => {
                    if achieved != 0.0 || u.handover {
                        self.fail(format!("slot {t}: unassociated user {id} carries traffic"));
                    }
                }
            }
        }
        for (a, used) in airtime.iter().enumerate() {
            if *used > 1.0 + EPS {
                self.fail(format!("slot {t}: AP {a} airtime {used} exceeds the slot"));
            }
            if carried[a] > max_rate + EPS {
                self.fail(format!("slot {t}: AP {a} carries {} above its best rate", carried[a]));
            }
        }
        if members != out.loads {
            self.fail(format!(
                "slot {t}: loads {:?} disagree with members {members:?}",
                out.loads
            ));
        }
        if present != out.record.active_users {
            self.fail(format!(
                "slot {t}: {present} users reported, record says {}",
                out.record.active_users
            ));
        }
        if out.record.handovers != out.users.iter().filter(|u| u.handover).count() {
            self.fail(format!("slot {t}: handover count mismatch"));
        }
    }

    /// Whole-trip checks for every user that has left.
    pub fn finish(&mut self, cfg: &SimConfig, sim: &Simulation) {
        let scenario = sim.scenario();
        let sc = &cfg.scenario;
        let mut problems = Vec::new();
        for (id, trail) in &self.trails {
            if trail.phases.last() != Some(&Phase::Departed) {
                continue;
            }
            // (Moving Dwelling)+ Moving? Departed
            let body = &trail.phases[..trail.phases.len() - 1];
            let mut ok = body.len() >= 2;
            for (i, p) in body.iter().enumerate() {
                let want = if i % 2 == 0 { Phase::Moving } else { Phase::Dwelling };
                ok &= *p == want;
            }
            let dwells = body.iter().filter(|p| **p == Phase::Dwelling).count();
            if !ok {
                problems.push(format!("user {id}: phase sequence {:?}", trail.phases));
            }
            if dwells != trail.visits.len() || dwells < sc.pois_per_user_min || dwells > sc.pois_per_user_max {
                problems.push(format!("user {id}: {dwells} dwell episodes for {:?}", trail.visits));
            }
            let distinct: BTreeSet<_> = trail.visits.iter().collect();
            if distinct.len() != trail.visits.len() {
                problems.push(format!("user {id}: revisits a PoI in {:?}", trail.visits));
            }
            let compatible = &scenario.apps[trail.app].compatible_pois;
            if let Some(p) = trail.visits.iter().find(|p| !compatible.contains(p)) {
                problems.push(format!("user {id}: PoI {p} incompatible with app {}", trail.app));
            }
        }
        for p in problems {
            self.fail(p);
        }
    }
}

/// Runs `slots` slots of `cfg` under audit.
pub fn audited_run(cfg: &SimConfig, slots: u64) -> Audit {
    let mut sim = Simulation::new(cfg, None).expect("valid config");
    let mut audit = Audit::default();
    for _ in 0..slots {
        let out = sim.step().expect("slot runs");
        audit.observe(cfg, &sim, &out);
    }
    audit.finish(cfg, &sim);
    audit
}

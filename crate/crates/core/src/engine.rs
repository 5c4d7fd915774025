//! The slot loop.
//!
//! Each slot runs, in this order: arrivals, mobility, RSSI sampling,
//! forecasting, association, throughput realisation, telemetry, online
//! training, grading of forecasts that have come due, and retirement of
//! users that left the room.
//!
//! Forecasts issued in slot `t` are built from tuples up to `t - 1` (the
//! tuple for `t` only exists after throughput is realised) and cover slots
//! `t ..= t + Y - 1`. They are graded at the end of slot `t + Y - 1`.
//! During warm-up the model trains but issues no forecasts, and association
//! falls back to the observed RSSI.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::channel::{achieved_throughput, offered_share};
use crate::checkpoint::Checkpoint;
use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::policy::{associate, reactive_forecast, PolicyKind, RateForecast};
use crate::predictor::{online_train_step, predict_user, Model, Prediction};
use crate::rng::{stream, SimRng, Stream};
use crate::scenario::{generate_scenario, next_arrival_gap, spawn_user, step_user, Phase, Scenario, UserAgent, Vec2};
use crate::telemetry::{History, NormStats, UserTuple};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub slot: u64,
    pub active_users: usize,
    pub connected_users: usize,
    /// Mean achieved throughput over all users in the room.
    pub mean_throughput_mbps: f64,
    /// Mean achieved throughput over associated users only.
    pub mean_throughput_connected_mbps: f64,
    pub handovers: usize,
    pub cumulative_handovers: u64,
    /// Mean absolute RSSI error (dB) of the forecasts graded this slot.
    pub prediction_mae_db: Option<f64>,
    pub graded_predictions: usize,
    pub training_loss: Option<f64>,
}

/// Per-user detail of one slot, used for the tuple log and invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSlot {
    pub user_id: u64,
    pub app_id: usize,
    pub phase: Phase,
    pub position: Vec2,
    /// PoI the user is standing at, when dwelling.
    pub dwelling_at: Option<usize>,
    pub ap: Option<usize>,
    pub handover: bool,
    /// Empty for users that left the room this slot.
    pub rssi: Vec<f64>,
    pub phy_rate_mbps: f64,
    pub share_mbps: f64,
    pub demand_mbps: f64,
    pub dl_mbps: f64,
    pub ul_mbps: f64,
}

impl UserSlot {
    pub fn achieved_mbps(&self) -> f64 {
        self.dl_mbps + self.ul_mbps
    }
}

#[derive(Debug, Clone)]
pub struct SlotOutcome {
    pub record: MetricsRecord,
    pub users: Vec<UserSlot>,
    /// AP loads after association.
    pub loads: Vec<usize>,
}

struct ActiveUser {
    agent: UserAgent,
    history: History,
    pending: VecDeque<Prediction>,
}

pub struct Simulation {
    cfg: SimConfig,
    policy: PolicyKind,
    scenario: Scenario,
    arrivals: SimRng,
    spawner: SimRng,
    mobility: SimRng,
    channel: SimRng,
    next_arrival_s: f64,
    next_user_id: u64,
    slot: u64,
    users: BTreeMap<u64, ActiveUser>,
    model: Option<Model>,
    stats: NormStats,
    cumulative_handovers: u64,
}

impl Simulation {
    /// Fresh world drawn from the config seed. `carried` supplies a model
    /// trained in an earlier run; predictive policies start from it.
    pub fn new(cfg: &SimConfig, carried: Option<Checkpoint>) -> Result<Self> {
        cfg.validate()?;
        let scenario = generate_scenario(&cfg.scenario, &mut stream(cfg.engine.seed, Stream::World))?;
        Self::with_scenario(cfg, scenario, carried)
    }

    pub fn with_scenario(cfg: &SimConfig, scenario: Scenario, carried: Option<Checkpoint>) -> Result<Self> {
        cfg.validate()?;
        if scenario.aps.len() != cfg.scenario.num_aps {
            return Err(SimError::config(
                "scenario.num_aps",
                "does not match the supplied scenario",
            ));
        }
        let seed = cfg.engine.seed;
        let policy = cfg.policy.policy();
        let arch = cfg.architecture();
        let (model, stats) = match carried {
            Some(ck) if policy.is_predictive() => {
                if *ck.model.arch() != arch {
                    return Err(SimError::Checkpoint(
                        "checkpoint architecture differs from the configured one".into(),
                    ));
                }
                (Some(ck.model), ck.stats)
            }
            _ if policy.is_predictive() => (
                Some(Model::init(arch, &mut stream(seed, Stream::Model))?),
                NormStats::new(cfg.features()),
            ),
            _ => (None, NormStats::new(cfg.features())),
        };
        let mut arrivals = stream(seed, Stream::Arrivals);
        let next_arrival_s = next_arrival_gap(&mut arrivals, cfg.scenario.interarrival_mean_s, cfg.engine.slot_s);
        Ok(Self {
            cfg: cfg.clone(),
            policy,
            scenario,
            arrivals,
            spawner: stream(seed, Stream::Users),
            mobility: stream(seed, Stream::Mobility),
            channel: stream(seed, Stream::Channel),
            next_arrival_s,
            next_user_id: 0,
            slot: 0,
            users: BTreeMap::new(),
            model,
            stats,
            cumulative_handovers: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn active_users(&self) -> usize {
        self.users.len()
    }

    pub fn checkpoint(&self) -> Option<Checkpoint> {
        self.model.as_ref().map(|m| Checkpoint {
            model: m.clone(),
            stats: self.stats.clone(),
        })
    }

    /// Places a hand-built user into the room. Ids must keep increasing.
    pub fn add_user(&mut self, mut agent: UserAgent) -> Result<()> {
        if agent.user_id < self.next_user_id {
            return Err(SimError::Contract(format!("user id {} already used", agent.user_id)));
        }
        agent.current_ap = None;
        self.next_user_id = agent.user_id + 1;
        self.insert(agent);
        Ok(())
    }

    fn insert(&mut self, agent: UserAgent) {
        let p = &self.cfg.predictor;
        let history = History::new(agent.user_id, p.input_slots, p.output_slots);
        self.users.insert(
            agent.user_id,
            ActiveUser {
                agent,
                history,
                pending: VecDeque::new(),
            },
        );
    }

    /// Advances the world by one slot.
    pub fn step(&mut self) -> Result<SlotOutcome> {
        let t = self.slot;
        let slot_s = self.cfg.engine.slot_s;
        let num_aps = self.scenario.aps.len();
        let (x_slots, y_slots) = (self.cfg.predictor.input_slots, self.cfg.predictor.output_slots);

        // 1. arrivals
        let slot_end = (t + 1) as f64 * slot_s;
        while self.next_arrival_s < slot_end {
            let agent = spawn_user(&self.scenario, &self.cfg.scenario, self.next_user_id, &mut self.spawner);
            self.next_user_id += 1;
            self.insert(agent);
            self.next_arrival_s += next_arrival_gap(&mut self.arrivals, self.cfg.scenario.interarrival_mean_s, slot_s);
        }

        // 2. mobility
        let mut reports = Vec::with_capacity(self.users.len());
        let mut departed = Vec::new();
        for u in self.users.values_mut() {
            step_user(&mut u.agent, &self.scenario, slot_s, &mut self.mobility)?;
            if u.agent.phase == Phase::Departed {
                departed.push(u.agent.user_id);
            }
        }
        let present: Vec<u64> = self
            .users
            .iter()
            .filter(|(_, u)| u.agent.phase != Phase::Departed)
            .map(|(&id, _)| id)
            .collect();

        // 3. RSSI towards every AP
        let mut rssi: Vec<Vec<f64>> = Vec::with_capacity(present.len());
        for id in &present {
            let pos = self.users[id].agent.position;
            rssi.push(
                self.scenario
                    .aps
                    .iter()
                    .map(|ap| self.cfg.channel.rssi(ap, pos, &mut self.channel))
                    .collect(),
            );
        }

        // 4. forecasts from tuples through t - 1, only once warm-up is over
        let mut fresh: Vec<Option<usize>> = vec![None; present.len()];
        if let Some(model) = self.model.as_ref().filter(|_| t >= self.cfg.engine.warm_up_slots) {
            for (i, id) in present.iter().enumerate() {
                let u = self.users.get_mut(id).unwrap();
                if let Some(p) = predict_user(model, &self.stats, &u.history, t)? {
                    if p.values.as_slice().iter().any(|v| !v.is_finite()) {
                        return Err(SimError::NonFinite(format!("forecast for user {id} at slot {t}")));
                    }
                    u.pending.push_back(p);
                    fresh[i] = Some(u.pending.len() - 1);
                }
            }
        }

        // 5. association
        let table = &self.cfg.rate_table;
        let mut forecasts = Vec::with_capacity(present.len());
        let mut current = Vec::with_capacity(present.len());
        for (i, id) in present.iter().enumerate() {
            let u = &self.users[id];
            current.push(u.agent.current_ap);
            let fc = match fresh[i] {
                Some(k) => {
                    let p = &u.pending[k];
                    RateForecast {
                        user_id: *id,
                        rates: (0..num_aps)
                            .map(|ap| (0..y_slots).map(|s| table.phy_rate(p.rssi(s, ap))).collect())
                            .collect(),
                    }
                }
                _ => reactive_forecast(*id, &rssi[i], table),
            };
            forecasts.push(fc);
        }
        let plan = associate(&forecasts, &current, num_aps, self.policy.threshold_mbps)?;

        // 6. throughput
        let interruption = self.cfg.engine.handover_interruption_s / slot_s;
        let mut total = 0.0;
        for (i, id) in present.iter().enumerate() {
            let ap = plan.assignments[i].1;
            let handover = plan.handovers.contains(id);
            let u = self.users.get_mut(id).unwrap();
            let demand = u.agent.demand_mbps();
            let (phy, share, achieved) = match ap {
                Some(a) => {
                    let phy = table.phy_rate(rssi[i][a]);
                    let share = offered_share(phy, plan.loads[a]);
                    let f = if handover { interruption } else { 0.0 };
                    (phy, share, achieved_throughput(share, demand, f))
                }
                None => (0.0, 0.0, 0.0),
            };
            total += achieved;
            u.agent.current_ap = ap;
            let dl = achieved * u.agent.dl_demand_mbps / demand;
            let ul = achieved - dl;
            let dwelling_at = match u.agent.phase {
                Phase::Dwelling => u.agent.itinerary.get(u.agent.leg).copied(),
                _ => None,
            };
            reports.push(UserSlot {
                user_id: *id,
                app_id: u.agent.app_id,
                phase: u.agent.phase,
                position: u.agent.position,
                dwelling_at,
                ap,
                handover,
                rssi: rssi[i].clone(),
                phy_rate_mbps: phy,
                share_mbps: share,
                demand_mbps: demand,
                dl_mbps: dl,
                ul_mbps: ul,
            });
        }

        // 7. telemetry
        for (i, id) in present.iter().enumerate() {
            let tuple = UserTuple {
                slot: t,
                dl_mbps: reports[i].dl_mbps,
                ul_mbps: reports[i].ul_mbps,
                rssi: std::mem::take(&mut rssi[i]),
            };
            self.stats.observe(&tuple);
            self.users.get_mut(id).unwrap().history.record_slot(tuple)?;
        }

        // 8. online training, ascending user id
        let mut training_loss = None;
        if let Some(model) = &mut self.model {
            let users = &self.users;
            let report = online_train_step(
                model,
                &self.stats,
                present.iter().map(|id| &users[id].history),
                self.cfg.predictor.learning_rate,
                self.cfg.predictor.momentum,
            )?;
            training_loss = report.mean_loss;
            if !model.is_finite() {
                return Err(SimError::NonFinite(format!("model parameters after slot {t}")));
            }
        }

        // 9. grade forecasts whose horizon ended this slot
        let mut mae_sum = 0.0;
        let mut graded = 0usize;
        for id in &present {
            let u = self.users.get_mut(id).unwrap();
            while let Some(p) = u.pending.front() {
                let last = p.made_at_slot + y_slots as u64 - 1;
                if last > t {
                    break;
                }
                let p = u.pending.pop_front().unwrap();
                if last < t {
                    continue;
                }
                let mut err = 0.0;
                for s in 0..y_slots {
                    let actual = u
                        .history
                        .at_slot(p.made_at_slot + s as u64)
                        .ok_or_else(|| SimError::Contract("graded slot missing from history".into()))?;
                    for (ap, &obs) in actual.rssi.iter().enumerate() {
                        err += (p.rssi(s, ap) - obs).abs();
                    }
                }
                mae_sum += err / (y_slots * num_aps) as f64;
                graded += 1;
            }
        }
        debug_assert!(self.users.values().all(|u| u.pending.len() <= y_slots.max(x_slots)));

        // 10. retire
        for id in departed {
            let u = self.users.remove(&id).unwrap();
            reports.push(UserSlot {
                user_id: id,
                app_id: u.agent.app_id,
                phase: Phase::Departed,
                position: u.agent.position,
                dwelling_at: None,
                ap: None,
                handover: false,
                rssi: Vec::new(),
                phy_rate_mbps: 0.0,
                share_mbps: 0.0,
                demand_mbps: u.agent.demand_mbps(),
                dl_mbps: 0.0,
                ul_mbps: 0.0,
            });
        }
        reports.sort_by_key(|r| r.user_id);

        let n = present.len();
        let connected = plan.associated();
        self.cumulative_handovers += plan.handovers.len() as u64;
        self.slot += 1;
        Ok(SlotOutcome {
            record: MetricsRecord {
                slot: t,
                active_users: n,
                connected_users: connected,
                mean_throughput_mbps: if n > 0 { total / n as f64 } else { 0.0 },
                mean_throughput_connected_mbps: if connected > 0 { total / connected as f64 } else { 0.0 },
                handovers: plan.handovers.len(),
                cumulative_handovers: self.cumulative_handovers,
                prediction_mae_db: (graded > 0).then(|| mae_sum / graded as f64),
                graded_predictions: graded,
                training_loss,
            },
            users: reports,
            loads: plan.loads,
        })
    }
}

/// One row of the optional tuple log.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleRow {
    pub slot: u64,
    pub user_id: u64,
    pub dl_mbps: f64,
    pub ul_mbps: f64,
    pub rssi: Vec<f64>,
    pub ap: Option<usize>,
    pub handover: bool,
}

pub struct SimOutput {
    pub scenario: Scenario,
    pub metrics: Vec<MetricsRecord>,
    pub tuples: Vec<TupleRow>,
    pub checkpoint: Option<Checkpoint>,
}

/// Runs `engine.total_slots` slots.
pub fn run_simulation(cfg: &SimConfig, carried: Option<Checkpoint>) -> Result<SimOutput> {
    let mut sim = Simulation::new(cfg, carried)?;
    let mut metrics = Vec::with_capacity(cfg.engine.total_slots as usize);
    let mut tuples = Vec::new();
    for _ in 0..cfg.engine.total_slots {
        let out = sim.step()?;
        if cfg.engine.record_tuples {
            tuples.extend(
                out.users
                    .into_iter()
                    .filter(|u| u.phase != Phase::Departed)
                    .map(|u| TupleRow {
                        slot: out.record.slot,
                        user_id: u.user_id,
                        dl_mbps: u.dl_mbps,
                        ul_mbps: u.ul_mbps,
                        rssi: u.rssi,
                        ap: u.ap,
                        handover: u.handover,
                    }),
            );
        }
        metrics.push(out.record);
    }
    Ok(SimOutput {
        scenario: sim.scenario.clone(),
        checkpoint: sim.checkpoint(),
        metrics,
        tuples,
    })
}

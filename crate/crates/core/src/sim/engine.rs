//! The deterministic event loop.
//!
//! Agents run sense -> control -> reach -> broadcast on their own skewed
//! clocks; message verification chains off channel deliveries. All event
//! times come from the scenario's scheduled cost model and the seeded
//! channel, so two runs of the same config produce byte-identical logs.
//! Ground truth integrates the same control sequence densely alongside.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crate::comm::{ChannelModel, ClockModel, Disposition, ReachMessage};
use crate::dynamics::{pid_step, Model, PidGains, PidMemory, QuadState};
use crate::geometry::{HyperRectangle, LinearConstraintSet};
use crate::reach::{reach_anytime, LocalSafety, ReachResult, RuntimeBudget};
use crate::sim::config::ScenarioConfig;
use crate::sim::events::{box_to_pairs, EventKind, EventLog, ReachRecord};
use crate::sim::metrics::{metrics_report, MeasuredCosts, Metrics};
use crate::sim::truth::{GroundTruth, TruthIntegrator};
use crate::sim::SimError;
use crate::verify::{check_global, check_pairwise, TimingProfile, VerifyError};

/// Everything one simulation run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: EventLog,
    pub truth: GroundTruth,
    pub metrics: Metrics,
    pub reach_sets: Vec<ReachRecord>,
}

#[derive(Debug, Clone)]
enum Ev {
    ControlCycle { a: usize },
    ReachStart { a: usize },
    ReachDone { a: usize },
    Send { a: usize },
    ChannelPoll { a: usize },
    Decode { a: usize, msg: ReachMessage },
    PairCheck { a: usize, msg: ReachMessage },
}

struct Queued {
    t: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

struct Agent {
    id: u32,
    model: Arc<dyn Model>,
    clock: ClockModel,
    timing: TimingProfile,
    gains: PidGains,
    waypoints: Vec<[f64; 2]>,
    control_period: f64,
    horizon: f64,
    h0: f64,
    budget: RuntimeBudget,
    sensor_bloat: Option<Vec<f64>>,
    local_unsafe: Option<LinearConstraintSet>,
    fixed_input: Option<Vec<f64>>,
    is_quad: bool,

    truth: TruthIntegrator,
    u: Vec<f64>,
    pid_mem: PidMemory,
    waypoint_idx: usize,
    next_cycle: u64,
    pending_reach: Option<(ReachResult, f64)>,
    current_reach: Option<ReachResult>,
    inbox: BTreeMap<u32, ReachMessage>,
    peers: Vec<u32>,
}

impl Agent {
    fn ms(&self, v: f64) -> f64 {
        v * 1e-3
    }

    fn tau_control_s(&self) -> f64 {
        self.ms(self.timing.tau_control)
    }

    fn t_runtime_s(&self) -> f64 {
        self.ms(self.timing.t_runtime)
    }

    fn tau_e_s(&self) -> f64 {
        self.ms(self.timing.tau_e)
    }

    fn tau_d_s(&self) -> f64 {
        self.ms(self.timing.tau_d)
    }

    fn tau_c_s(&self) -> f64 {
        self.ms(self.timing.tau_c)
    }

    /// Absolute initial-set widening used for this agent's reach calls:
    /// explicit config value, or two percent of the current speed (times the
    /// control period on position axes) for quadcopters.
    fn effective_bloat(&self) -> Vec<f64> {
        if let Some(b) = &self.sensor_bloat {
            return b.clone();
        }
        if self.is_quad {
            let s = QuadState::from_slice(&self.truth.state);
            let ex = 0.02 * s.vx.abs();
            let ey = 0.02 * s.vy.abs();
            vec![ex * self.control_period, ex, ey * self.control_period, ey]
        } else {
            vec![0.0; self.model.state_dim()]
        }
    }
}

pub struct Engine {
    agents: Vec<Agent>,
    channel: ChannelModel,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    log: EventLog,
    reach_sets: Vec<ReachRecord>,
    duration: f64,
    position_axes: Vec<usize>,
    safe_distance: f64,
    waypoint_tolerance: f64,
    global_unsafe: Option<LinearConstraintSet>,
    measured: MeasuredCosts,
    any_wallclock: bool,
}

/// Run a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg)?;
    engine.run()?;
    engine.finish(cfg)
}

impl Engine {
    fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let mut agents = Vec::new();
        for ac in cfg.agents_by_id() {
            let model = crate::dynamics::model_by_name(&ac.model)
                .ok_or_else(|| SimError::Config(format!("unknown model '{}'", ac.model)))?;
            let clock = ClockModel::new(ac.id, ac.clock_offset, ac.delta)?;
            let is_quad = ac.model == "quadcopter4d";
            let u = match (&ac.fixed_input, is_quad) {
                (Some(u), _) => u.clone(),
                (None, _) => vec![0.0; model.input_dim()],
            };
            let local_unsafe = ac
                .local_unsafe
                .as_ref()
                .map(|c| c.to_constraint_set())
                .transpose()?;
            let peers: Vec<u32> = cfg
                .agents_by_id()
                .iter()
                .map(|a| a.id)
                .filter(|&id| id != ac.id)
                .collect();
            agents.push(Agent {
                id: ac.id,
                truth: TruthIntegrator::new(Arc::clone(&model), ac.initial_state.clone()),
                model,
                clock,
                timing: cfg.timing_for(ac),
                gains: ac.gains.to_gains(),
                waypoints: ac.waypoints.clone(),
                control_period: ac.control_period,
                horizon: ac.horizon,
                h0: ac.h0,
                budget: ac.budget,
                sensor_bloat: ac.sensor_bloat.clone(),
                local_unsafe,
                fixed_input: ac.fixed_input.clone(),
                is_quad,
                u,
                pid_mem: PidMemory::default(),
                waypoint_idx: 0,
                next_cycle: 1,
                pending_reach: None,
                current_reach: None,
                inbox: BTreeMap::new(),
                peers,
            });
        }
        let any_wallclock = agents
            .iter()
            .any(|a| matches!(a.budget, RuntimeBudget::Wallclock { .. }));
        let channel = ChannelModel::new(cfg.channel.delay_law(), cfg.channel.drop_prob, cfg.seed)?;
        let global_unsafe = cfg
            .global_unsafe
            .as_ref()
            .map(|c| c.to_constraint_set())
            .transpose()?;
        let n_agents = agents.len();
        let mut engine = Engine {
            agents,
            channel,
            queue: BinaryHeap::new(),
            seq: 0,
            log: EventLog::default(),
            reach_sets: Vec::new(),
            duration: cfg.duration,
            position_axes: cfg.position_axes.clone(),
            safe_distance: cfg.safe_distance,
            waypoint_tolerance: cfg.waypoint_tolerance,
            global_unsafe,
            measured: MeasuredCosts::new(n_agents),
            any_wallclock,
        };
        // First control cycle at each agent's first full local period, which
        // is a non-negative global instant whenever the period exceeds the
        // clock offset.
        for a in 0..engine.agents.len() {
            let t = engine.cycle_time(a, 1);
            engine.schedule(t, Ev::ControlCycle { a });
        }
        Ok(engine)
    }

    fn cycle_time(&self, a: usize, j: u64) -> f64 {
        let agent = &self.agents[a];
        agent.clock.global_time(j as f64 * agent.control_period)
    }

    fn schedule(&mut self, t: f64, ev: Ev) {
        self.queue.push(Reverse(Queued {
            t,
            seq: self.seq,
            ev,
        }));
        self.seq += 1;
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(q)) = self.queue.pop() {
            if q.t > self.duration + 1e-9 {
                break;
            }
            match q.ev {
                Ev::ControlCycle { a } => self.on_control_cycle(a, q.t),
                Ev::ReachStart { a } => self.on_reach_start(a, q.t)?,
                Ev::ReachDone { a } => self.on_reach_done(a, q.t),
                Ev::Send { a } => self.on_send(a, q.t),
                Ev::ChannelPoll { a } => self.on_channel_poll(a, q.t),
                Ev::Decode { a, msg } => self.on_decode(a, q.t, msg),
                Ev::PairCheck { a, msg } => self.on_pair_check(a, q.t, msg)?,
            }
        }
        for a in 0..self.agents.len() {
            let u = self.agents[a].u.clone();
            let agent = &mut self.agents[a];
            agent.truth.advance_to(self.duration, &u);
        }
        Ok(())
    }

    fn advance_truth(&mut self, a: usize, t: f64) {
        let u = self.agents[a].u.clone();
        self.agents[a].truth.advance_to(t, &u);
    }

    fn on_control_cycle(&mut self, a: usize, t: f64) {
        self.advance_truth(a, t);
        let agent = &mut self.agents[a];
        if agent.is_quad && !agent.waypoints.is_empty() {
            let s = QuadState::from_slice(&agent.truth.state);
            let mut reached = Vec::new();
            while agent.waypoint_idx < agent.waypoints.len() {
                let wp = agent.waypoints[agent.waypoint_idx];
                let d = ((s.x - wp[0]).powi(2) + (s.y - wp[1]).powi(2)).sqrt();
                if d < self.waypoint_tolerance {
                    reached.push(agent.waypoint_idx);
                    agent.waypoint_idx += 1;
                } else {
                    break;
                }
            }
            let target_idx = agent.waypoint_idx.min(agent.waypoints.len() - 1);
            let wp = agent.waypoints[target_idx];
            let (u, mem) = pid_step(&s, (wp[0], wp[1]), &agent.gains, agent.control_period, agent.pid_mem);
            agent.pid_mem = mem;
            agent.u = vec![u.theta, u.phi];
            let id = agent.id;
            for index in reached {
                self.log.push(t, id, EventKind::WaypointReached { index });
            }
        } else if let Some(u) = &agent.fixed_input {
            agent.u = u.clone();
        }

        let agent = &self.agents[a];
        let reach_at = t + agent.tau_control_s();
        let next_cycle = agent.next_cycle + 1;
        let next_t = self.cycle_time(a, next_cycle);
        self.agents[a].next_cycle = next_cycle;
        self.schedule(reach_at, Ev::ReachStart { a });
        self.schedule(next_t, Ev::ControlCycle { a });
    }

    fn on_reach_start(&mut self, a: usize, t: f64) -> Result<(), SimError> {
        self.advance_truth(a, t);
        let agent = &self.agents[a];
        let t_rs = agent.clock.local_time(t);
        self.log.push(t, agent.id, EventKind::ReachStart { t_rs });

        let agent = &self.agents[a];
        let init = HyperRectangle::point(&agent.truth.state)?.bloat(&agent.effective_bloat())?;
        let started = Instant::now();
        let result = reach_anytime(
            &init,
            &agent.u,
            t_rs,
            agent.horizon,
            agent.h0,
            &agent.budget,
            agent.local_unsafe.as_ref(),
            agent.model.as_ref(),
        )?;
        if self.any_wallclock {
            self.measured.record_reach(a, started.elapsed().as_secs_f64() * 1e3);
        }
        let done_at = t + self.agents[a].t_runtime_s();
        self.agents[a].pending_reach = Some((result, t));
        self.schedule(done_at, Ev::ReachDone { a });
        Ok(())
    }

    fn on_reach_done(&mut self, a: usize, t: f64) {
        let (result, global_start) = self.agents[a]
            .pending_reach
            .take()
            .expect("reach completion without a pending computation");
        let agent = &self.agents[a];
        let id = agent.id;
        self.log.push(
            t,
            id,
            EventKind::ReachDone {
                t_rs: result.t_rs,
                hull: box_to_pairs(&result.hull),
                local_safe: result.local_safe,
                passes: result.passes_completed,
                final_step: result.final_step,
            },
        );
        if result.local_safe == LocalSafety::Uncertain {
            self.log.push(t, id, EventKind::LocalUnsafe);
        }
        if result.budget_overrun {
            self.log.push(t, id, EventKind::BudgetOverrun);
        }
        self.reach_sets.push(ReachRecord {
            agent: id,
            global_start,
            t_rs: result.t_rs,
            horizon: result.horizon,
            passes: result.passes_completed,
            final_step: result.final_step,
            local_safe: result.local_safe,
            hull: box_to_pairs(&result.hull),
            intermediates: result
                .intermediates
                .iter()
                .map(|(o, b)| (*o, box_to_pairs(b)))
                .collect(),
        });
        let tau_e_s = agent.tau_e_s();
        let has_peers = !agent.peers.is_empty();
        self.agents[a].current_reach = Some(result);
        if has_peers {
            self.schedule(t + tau_e_s, Ev::Send { a });
        }
    }

    fn on_send(&mut self, a: usize, t: f64) {
        let agent = &self.agents[a];
        let reach = agent
            .current_reach
            .as_ref()
            .expect("send scheduled without a committed reach set");
        let msg = ReachMessage {
            sender: agent.id,
            t_rs: reach.t_rs,
            horizon: reach.horizon,
            hull: reach.hull.clone(),
            t_send: agent.clock.local_time(t),
        };
        let started = Instant::now();
        let bytes = msg.encode();
        if self.any_wallclock {
            self.measured.record_encode(a, started.elapsed().as_secs_f64() * 1e3);
        }
        self.log.push(
            t,
            agent.id,
            EventKind::Send {
                t_send: msg.t_send,
                recipients: agent.peers.len(),
                bytes: bytes.len(),
            },
        );
        let peers = agent.peers.clone();
        let before = self.channel.in_flight.len();
        self.channel.send(&msg, &peers, t);
        let mut polls = Vec::new();
        for entry in &self.channel.in_flight[before..] {
            let at = match entry.disposition {
                Disposition::Deliver(at) | Disposition::Drop(at) => at,
            };
            let idx = self
                .agents
                .iter()
                .position(|ag| ag.id == entry.recipient)
                .expect("recipient exists");
            polls.push((at, idx));
        }
        for (at, idx) in polls {
            self.schedule(at, Ev::ChannelPoll { a: idx });
        }
    }

    fn on_channel_poll(&mut self, a: usize, t: f64) {
        let id = self.agents[a].id;
        let due = self.channel.poll(id, t);
        let tau_d_s = self.agents[a].tau_d_s();
        for delivery in due {
            self.log.push(
                t,
                id,
                EventKind::Deliver {
                    from: delivery.msg.sender,
                    delay_s: delivery.delivered_at - delivery.sent_at,
                },
            );
            self.schedule(t + tau_d_s, Ev::Decode { a, msg: delivery.msg });
        }
    }

    fn on_decode(&mut self, a: usize, t: f64, msg: ReachMessage) {
        let id = self.agents[a].id;
        let started = Instant::now();
        let decoded = ReachMessage::decode(&msg.encode());
        if self.any_wallclock {
            self.measured.record_decode(a, started.elapsed().as_secs_f64() * 1e3);
        }
        match decoded {
            Err(e) => self.log.push(
                t,
                id,
                EventKind::MalformedMsg {
                    reason: e.to_string(),
                },
            ),
            Ok(m) => {
                self.log.push(t, id, EventKind::Decode { from: m.sender });
                let tau_c_s = self.agents[a].tau_c_s();
                self.schedule(t + tau_c_s, Ev::PairCheck { a, msg: m });
            }
        }
    }

    fn on_pair_check(&mut self, a: usize, t: f64, msg: ReachMessage) -> Result<(), SimError> {
        let agent = &self.agents[a];
        let id = agent.id;
        let t_c = agent.clock.local_time(t);
        let own = match &agent.current_reach {
            Some(own) => own,
            None => {
                // A message arrived before this agent committed its first
                // reach set; without an own set there is nothing to check
                // against, so the message ages out.
                self.log.push(t, id, EventKind::StaleMsg { from: msg.sender, t_c });
                return Ok(());
            }
        };
        let delta_i = agent.clock.delta;
        let delta_j = self.delta_of(msg.sender);
        let started = Instant::now();
        let outcome = check_pairwise(
            own,
            t_c,
            &msg,
            self.safe_distance,
            delta_i,
            delta_j,
            &self.position_axes,
        );
        if self.any_wallclock {
            self.measured.record_check(a, started.elapsed().as_secs_f64() * 1e3);
        }
        match outcome {
            Err(VerifyError::Stale { .. }) => {
                self.log.push(t, id, EventKind::StaleMsg { from: msg.sender, t_c });
            }
            Err(e) => return Err(SimError::Verify(e)),
            Ok(verdict) => {
                let d_min = own.hull.min_distance(&msg.hull, &self.position_axes)?;
                self.log.push(
                    t,
                    id,
                    EventKind::PairCheck {
                        peer: msg.sender,
                        t_c,
                        d_min,
                        verdict,
                    },
                );
                self.agents[a].inbox.insert(msg.sender, msg);
                self.maybe_global_check(a, t, t_c)?;
            }
        }
        Ok(())
    }

    fn maybe_global_check(&mut self, a: usize, t: f64, t_c: f64) -> Result<(), SimError> {
        let Some(unsafe_set) = &self.global_unsafe else {
            return Ok(());
        };
        // Age out stored messages that are no longer useful before testing
        // for completeness; the check only fires on a complete fresh set.
        let deltas: BTreeMap<u32, f64> = self
            .agents
            .iter()
            .map(|ag| (ag.id, ag.clock.delta))
            .collect();
        let agent = &self.agents[a];
        let own = agent.current_reach.as_ref().expect("checked by caller");
        let own_delta = agent.clock.delta;
        let fresh: BTreeMap<u32, ReachMessage> = agent
            .inbox
            .iter()
            .filter(|(sender, m)| {
                t_c < m.t_rs + m.horizon - own_delta - deltas[sender]
                    && t_c < own.t_rs + own.horizon
            })
            .map(|(s, m)| (*s, m.clone()))
            .collect();
        if fresh.len() != agent.peers.len() {
            self.agents[a].inbox = fresh;
            return Ok(());
        }
        let peers: Vec<(&ReachMessage, f64)> =
            fresh.iter().map(|(s, m)| (m, deltas[s])).collect();
        let verdict = check_global(
            own,
            agent.id,
            own_delta,
            t_c,
            &peers,
            unsafe_set,
            agent.peers.len(),
        );
        let id = agent.id;
        match verdict {
            Ok(v) => {
                self.log.push(t, id, EventKind::GlobalCheck { t_c, verdict: v });
            }
            Err(VerifyError::Stale { .. } | VerifyError::WindowExpired { .. }) => {}
            Err(e) => return Err(SimError::Verify(e)),
        }
        drop(peers);
        self.agents[a].inbox = fresh;
        Ok(())
    }

    fn delta_of(&self, id: u32) -> f64 {
        self.agents
            .iter()
            .find(|ag| ag.id == id)
            .map(|ag| ag.clock.delta)
            .unwrap_or(0.0)
    }

    fn finish(self, cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
        let truth = GroundTruth {
            dt: crate::sim::truth::TRUTH_DT,
            ids: self.agents.iter().map(|a| a.id).collect(),
            samples: self.agents.into_iter().map(|a| a.truth.samples).collect(),
        };
        let mut metrics = metrics_report(&self.log, &truth, cfg);
        if self.any_wallclock {
            metrics.measured = Some(self.measured);
        }
        Ok(RunOutput {
            events: self.log,
            truth,
            metrics,
            reach_sets: self.reach_sets,
        })
    }
}


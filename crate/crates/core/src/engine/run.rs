//! The tick loop.
//!
//! Per tick: environment events, then one tick of the controller's current
//! phase (wait, identify over q, select over r, transfer over n and m, or a
//! gap between iterative chunks), then the plant steps unless a transfer
//! froze it, then damage is booked.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::metrics::{self, SafetyReport};
use super::scenario::{Action, Built, Scenario, StrategyKind, SwitchPolicy, ENV_PREFIX};
use super::EngineError;
use crate::bits::{self, Bits};
use crate::channels::{transfer_time, transmit_with_errors, Channel, RandomErrors, TransferReport};
use crate::configspace::ConfigPoint;
use crate::controller::{
    eligible_strategies, evaluate_all, select_strategy, worst_case_damage, Family, Strategy,
    StrategyStep, TabulatedDamage, Target,
};
use crate::plant::{Disturbance, Plant};
use crate::storage::{Codec, Repository, RunLengthCodec};

type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub tick: u64,
    pub real_time: f64,
    pub virtual_time: u64,
    pub active_config: String,
    pub channel: String,
    pub bits: u64,
    pub event: String,
    pub damage: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub tick: u64,
    pub channel: Channel,
    pub bits_sent: u64,
    pub bits_redundancy: u64,
    pub bits_rerequested: u64,
    pub job_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// The environment changed its demand.
    External,
    /// Monitoring reported an illegal plant state.
    Internal,
    /// Recovery after an empty eligible set or erratic behaviour.
    Recovery,
}

/// Bits booked on one channel for one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Tally {
    pub payload: u64,
    pub redundancy: u64,
    pub rerequested: u64,
}

impl Tally {
    pub fn sent(&self) -> u64 {
        self.payload + self.redundancy + self.rerequested
    }

    fn add(&mut self, r: &TransferReport) {
        self.payload += r.payload_bits;
        self.redundancy += r.redundancy_bits;
        self.rerequested += r.rerequested_bits;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconfiguration {
    pub job_id: u64,
    pub trigger: Trigger,
    pub target: u64,
    pub strategy: String,
    pub start_tick: u64,
    pub end_tick: u64,
    pub identification_ticks: u64,
    pub selection_ticks: u64,
    pub transfer_ticks: u64,
    pub gap_ticks: u64,
    /// Ticks in which the plant did not step.
    pub frozen_ticks: u64,
    pub wall_ticks: u64,
    /// Bit distance between the plant and the target when the transfer began.
    pub deviation_bits: u32,
    pub residual_error_bits: u64,
    pub q: Tally,
    pub r: Tally,
    pub n: Tally,
    pub m: Tally,
}

/// One controller selection, as logged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub tick: u64,
    pub job_id: u64,
    pub candidates: usize,
    pub eligible: usize,
    pub chosen: Option<String>,
    pub damage: Option<f64>,
    pub worst_case: Option<f64>,
    pub cost: Option<f64>,
    pub t_reconf: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub ledger: Vec<LedgerRow>,
    pub reconfigurations: Vec<Reconfiguration>,
    pub decisions: Vec<Decision>,
    /// Stored pattern the plant was configured with, per tick.
    pub configured: Vec<Option<u64>>,
    /// Demanded error class, per tick.
    pub demand_class: Vec<u64>,
    /// Active configuration of an undisturbed reference run, per tick.
    pub reference: Vec<String>,
    pub error_classes: u64,
    pub expect: Vec<f64>,
    pub erratic: bool,
    pub erratic_window: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub total_damage: f64,
    pub reconf_wall_ticks: u64,
    #[serde(rename = "R")]
    pub r: f64,
    pub h_k: Option<u32>,
    pub h_kp: Option<u32>,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    pub mode_switches: u64,
    pub erratic: bool,
}

/// How a chunk's payload is formed.
#[derive(Debug, Clone, PartialEq)]
enum ChunkForm {
    Full { compressed: bool },
    Positions(Vec<usize>),
}

#[derive(Debug, Clone)]
struct LiveChunk {
    n: Vec<(u64, u64, u64)>,
    m: Vec<(u64, u64, u64)>,
    ticks: u64,
    done: u64,
    result: Bits,
}

#[derive(Debug, Clone)]
struct Job {
    id: u64,
    trigger: Trigger,
    target: u64,
    kind: StrategyKind,
    start_tick: u64,
    id_ticks: u64,
    sel_ticks: u64,
    chunks: VecDeque<ChunkForm>,
    /// Set once the transfer's chunks are laid out.
    prepared: bool,
    live: Option<LiveChunk>,
    chunk_index: u64,
    transfer_ticks: u64,
    gap_ticks: u64,
    deviation: u32,
    residual: u64,
    tallies: BTreeMap<Channel, Tally>,
}

#[derive(Debug, Clone)]
enum Phase {
    Idle,
    Wait(u64),
    Identify(VecDeque<u64>),
    Select(VecDeque<u64>),
    Transfer,
    Gap(u64),
}

/// Per-tick amounts for moving `total` bits at `rate`.
pub fn spread(total: u64, rate: f64) -> Vec<u64> {
    let ticks = transfer_time(total, rate);
    let mut out = Vec::with_capacity(ticks as usize);
    let mut sent = 0;
    for k in 0..ticks {
        let cum = if k + 1 == ticks {
            total
        } else {
            ((rate * (k + 1) as f64) + 1e-9).floor().min(total as f64) as u64
        };
        out.push(cum - sent);
        sent = cum;
    }
    out
}

/// Splits per-tick amounts into (sent, redundancy, rerequested), filling
/// payload first, then check bits, then repeats.
fn categorize(per_tick: &[u64], t: &Tally) -> Vec<(u64, u64, u64)> {
    let overlap = |a: u64, b: u64, lo: u64, hi: u64| b.min(hi).saturating_sub(a.max(lo));
    let mut at = 0;
    per_tick
        .iter()
        .map(|&k| {
            let (a, b) = (at, at + k);
            at = b;
            let red = overlap(a, b, t.payload, t.payload + t.redundancy);
            let re = overlap(a, b, t.payload + t.redundancy, t.sent());
            (k, red, re)
        })
        .collect()
}

fn position_width(width: usize) -> u32 {
    bits::ceil_log2(width as u64).max(1)
}

fn encode_positions(positions: &[usize], target: &Bits) -> Bits {
    let w = position_width(target.len());
    let mut out = Bits::new();
    for &p in positions {
        bits::push_uint(&mut out, p as u64, w);
        out.push(target[p]);
    }
    out
}

fn decode_positions(payload: &Bits, width: usize) -> Vec<(usize, bool)> {
    let w = position_width(width) as usize;
    payload
        .chunks_exact(w + 1)
        .map(|c| (bits::read_uint(c, 0, w as u32) as usize, c[w]))
        .filter(|(p, _)| *p < width)
        .collect()
}

/// Short textual identity of a configuration code.
pub fn config_label(code: &Bits) -> String {
    if code.len() <= 64 {
        bits::to_string(code)
    } else {
        format!("#{:016x}", bits::digest(code))
    }
}

fn changed_positions(a: &Bits, b: &Bits) -> Vec<usize> {
    (0..a.len()).filter(|&i| a[i] != b[i]).collect()
}

fn chunk_forms(
    kind: StrategyKind,
    current: &Bits,
    target: &Bits,
    iterations: u32,
) -> Vec<ChunkForm> {
    match kind {
        StrategyKind::Spontaneous => vec![ChunkForm::Full { compressed: false }],
        StrategyKind::Compressed => vec![ChunkForm::Full { compressed: true }],
        StrategyKind::Delta => vec![ChunkForm::Positions(changed_positions(current, target))],
        StrategyKind::Iterative => {
            let changed = changed_positions(current, target);
            if changed.is_empty() {
                return vec![ChunkForm::Positions(changed)];
            }
            let k = (iterations as usize).min(changed.len());
            let per = changed.len().div_ceil(k);
            changed
                .chunks(per)
                .map(|c| ChunkForm::Positions(c.to_vec()))
                .collect()
        }
    }
}

/// Ideal-channel payload sizes (n, m) of a chunk.
fn chunk_bits(form: &ChunkForm, target: &Bits) -> (u64, u64) {
    let w = target.len() as u64;
    match form {
        ChunkForm::Full { compressed: false } => (w, w),
        ChunkForm::Full { compressed: true } => (RunLengthCodec.compress(target).len() as u64, w),
        ChunkForm::Positions(p) => {
            let b = p.len() as u64 * (position_width(target.len()) as u64 + 1);
            (b, b)
        }
    }
}

struct Runner<'a> {
    sc: &'a Scenario,
    b: &'a Built,
    seed: u64,
    plant: Plant,
    repo: Repository,
    env_state: Vec<i64>,
    plant_dims: Vec<usize>,
    env_dims: Vec<usize>,
    vtime: u64,
    demand: Option<u64>,
    configured: Option<u64>,
    abandoned: Option<u64>,
    damp_until: u64,
    completions: VecDeque<u64>,
    phase: Phase,
    job: Option<Job>,
    next_job: u64,
    trace: Trace,
    event_cursor: usize,
}

impl<'a> Runner<'a> {
    fn new(sc: &'a Scenario, b: &'a Built, seed: u64) -> Self {
        let plant_dims = sc.plant_dims();
        let env_dims: Vec<usize> = (0..sc.space.len())
            .filter(|i| sc.space[*i].name.starts_with(ENV_PREFIX))
            .collect();
        let env_state = env_dims
            .iter()
            .map(|&d| b.hybrid.dims()[d].min_value())
            .collect();
        let classes = sc.controller.error_classes;
        let configured = b.configured;
        let demand = sc.environment.initial_demand.or(configured);
        let mut expect = sc.environment.expect.clone();
        if expect.is_empty() {
            expect = vec![0.0; classes as usize];
            expect[(demand.unwrap_or(0) % classes) as usize] = 1.0;
        }
        Self {
            sc,
            b,
            seed,
            plant: b.plant.clone().with_seed(seed),
            repo: b.repo.clone(),
            env_state,
            plant_dims,
            env_dims,
            vtime: 0,
            demand,
            configured,
            abandoned: None,
            damp_until: 0,
            completions: VecDeque::new(),
            phase: Phase::Idle,
            job: None,
            next_job: 1,
            trace: Trace {
                rows: Vec::new(),
                ledger: Vec::new(),
                reconfigurations: Vec::new(),
                decisions: Vec::new(),
                configured: Vec::new(),
                demand_class: Vec::new(),
                reference: Vec::new(),
                error_classes: classes,
                expect,
                erratic: false,
                erratic_window: sc.controller.erratic_window,
            },
            event_cursor: 0,
        }
    }

    fn hybrid_values(&self, plant: &Plant) -> Vec<i64> {
        let mut v = vec![0; self.sc.space.len()];
        for (i, &d) in self.plant_dims.iter().enumerate() {
            v[d] = plant.active().values()[i];
        }
        for (i, &d) in self.env_dims.iter().enumerate() {
            v[d] = self.env_state[i];
        }
        v
    }

    fn damage_of(&self, plant: &Plant, met: bool) -> f64 {
        let env = &self.sc.environment;
        let violations = self
            .b
            .hybrid
            .legality()
            .violations(&self.hybrid_values(plant));
        env.violation_weight * violations as f64 + if met { 0.0 } else { env.demand_weight }
    }

    fn demand_met(&self) -> bool {
        self.demand.is_none() || self.demand == self.configured
    }

    fn code(&self) -> Result<Bits> {
        Ok(self.b.space.encode(self.plant.active())?)
    }

    fn apply_events(&mut self, t: u64, events: &mut Vec<String>) -> Result<()> {
        while let Some((tick, action)) = self.b.events.get(self.event_cursor) {
            if *tick > t {
                break;
            }
            self.event_cursor += 1;
            match action {
                Action::Demand { address } => {
                    self.demand = Some(*address);
                    if self.abandoned != Some(*address) {
                        self.abandoned = None;
                    }
                    events.push(format!("demand:{address}"));
                }
                Action::Jump { values } => {
                    let plant_values = self.plant_dims.iter().map(|&d| values[d]).collect();
                    for (i, &d) in self.env_dims.iter().enumerate() {
                        self.env_state[i] = values[d];
                    }
                    let p = self.plant.disturbed(
                        self.plant.active(),
                        &Disturbance::Jump {
                            values: plant_values,
                        },
                    )?;
                    self.plant.set_active(p)?;
                    events.push("disturb".into());
                }
                Action::Flip { positions } => {
                    let d = Disturbance::FlipBits {
                        positions: positions.clone(),
                    };
                    let p = self.plant.disturbed(self.plant.active(), &d)?;
                    self.plant.set_active(p)?;
                    events.push("disturb".into());
                }
                Action::Store { address, values } => {
                    let pt = self.b.space.checked_point(values.clone())?;
                    let code = self.b.space.encode(&pt)?;
                    if self.repo.contains(*address) {
                        self.repo.replace(*address, code)?;
                    } else {
                        self.repo
                            .insert(*address, code, crate::storage::PatternKind::Full)?;
                    }
                    events.push(format!("store:{address}"));
                }
                Action::Oscillate { .. } => unreachable!("expanded while building"),
            }
        }
        Ok(())
    }

    fn ledger(
        &mut self,
        t: u64,
        ch: Channel,
        (sent, red, re): (u64, u64, u64),
        job: u64,
        chan: &mut BTreeMap<Channel, u64>,
    ) {
        if sent == 0 {
            return;
        }
        self.trace.ledger.push(LedgerRow {
            tick: t,
            channel: ch,
            bits_sent: sent,
            bits_redundancy: red,
            bits_rerequested: re,
            job_id: job,
        });
        *chan.entry(ch).or_default() += sent;
    }

    fn new_job(&mut self, t: u64, trigger: Trigger, target: u64) -> Job {
        let id = self.next_job;
        self.next_job += 1;
        Job {
            id,
            trigger,
            target,
            kind: StrategyKind::Spontaneous,
            start_tick: t,
            id_ticks: 0,
            sel_ticks: 0,
            chunks: VecDeque::new(),
            prepared: false,
            live: None,
            chunk_index: 0,
            transfer_ticks: 0,
            gap_ticks: 0,
            deviation: 0,
            residual: 0,
            tallies: BTreeMap::new(),
        }
    }

    fn identification(&self) -> VecDeque<u64> {
        let bits = bits::ceil_log2(self.sc.controller.error_classes) as u64;
        spread(bits, self.b.channels.rate(Channel::Q)).into()
    }

    /// Delay before identification that brings the plant closest to the
    /// target by the time the transfer would start.
    fn scheduled_delay(&self, target: &Bits, latency: u64) -> Result<u64> {
        let horizon = match self.plant.active_index() {
            Some(_)
                if self
                    .plant
                    .space()
                    .cardinality()
                    .is_some_and(|c| c <= crate::plant::MAX_TABULATED) =>
            {
                self.plant
                    .find_cycle(self.plant.active_index().unwrap_or(0))
                    .map(|(tail, len)| tail + len)
                    .unwrap_or(1)
            }
            _ => 1,
        };
        let horizon = horizon.clamp(1, 256);
        let mut probe = self.plant.clone();
        let mut best = (u32::MAX, 0);
        let mut dist_at = Vec::new();
        for _ in 0..horizon + latency {
            dist_at.push(bits::hamming(&self.b.space.encode(probe.active())?, target));
            for _ in 0..probe.due_steps() {
                probe.step(0, None)?;
            }
        }
        for delay in 0..horizon {
            let d = dist_at[(delay + latency) as usize];
            if d < best.0 {
                best = (d, delay);
            }
        }
        Ok(best.1)
    }

    fn check_trigger(&mut self, t: u64, events: &mut Vec<String>) -> Result<bool> {
        if t < self.damp_until {
            return Ok(false);
        }
        let illegal = self
            .b
            .hybrid
            .legality()
            .violations(&self.hybrid_values(&self.plant))
            > 0;
        let (trigger, target) = match self.demand {
            Some(d) if self.configured != Some(d) && self.abandoned != Some(d) => {
                (Trigger::External, d)
            }
            Some(d) if illegal && self.abandoned != Some(d) => (Trigger::Internal, d),
            None if illegal => match self.configured.or(self.repo.recovery()) {
                Some(a) => (Trigger::Internal, a),
                None => return Ok(false),
            },
            _ => return Ok(false),
        };
        let window = self.sc.controller.erratic_window;
        while self.completions.front().is_some_and(|c| c + window <= t) {
            self.completions.pop_front();
        }
        if self.completions.len() as u64 >= self.sc.controller.erratic_limit {
            self.trace.erratic = true;
            events.push("erratic".into());
            self.damp_until = t + window;
            return match self.repo.recovery() {
                Some(r) if self.configured != Some(r) => {
                    let job = self.new_job(t, Trigger::Recovery, r);
                    self.start_recovery(job, events);
                    Ok(true)
                }
                _ => Ok(false),
            };
        }
        let mut job = self.new_job(t, trigger, target);
        let ident = self.identification();
        job.id_ticks = ident.len() as u64;
        if trigger == Trigger::External && self.sc.controller.policy == SwitchPolicy::Scheduled {
            let target_bits = self.repo.get(target)?.clone();
            let latency = job.id_ticks
                + spread(
                    self.repo.address_bits() as u64,
                    self.b.channels.rate(Channel::R),
                )
                .len() as u64;
            let delay = self.scheduled_delay(&target_bits, latency)?;
            if delay > 0 {
                events.push(format!("wait:{delay}"));
                self.job = Some(job);
                self.phase = Phase::Wait(delay);
                return Ok(true);
            }
        }
        events.push(if trigger == Trigger::Internal {
            "q-report".into()
        } else {
            "identify".into()
        });
        self.job = Some(job);
        self.phase = Phase::Identify(ident);
        Ok(true)
    }

    fn start_recovery(&mut self, mut job: Job, events: &mut Vec<String>) {
        events.push(format!("recovery:{}", job.target));
        job.kind = StrategyKind::Spontaneous;
        job.trigger = Trigger::Recovery;
        self.job = Some(job);
        self.phase = Phase::Transfer;
    }

    /// Looks ahead over each candidate's transfer window and picks one.
    fn plan(&mut self, t: u64, events: &mut Vec<String>) -> Result<()> {
        let mut job = self.job.take().expect("planning needs a job");
        let current = self.code()?;
        let target = self.repo.get(job.target)?.clone();
        let set = &self.b.channels;
        let mut candidates = Vec::new();
        let mut profiles = BTreeMap::new();
        for (id, kind) in StrategyKind::ALL.into_iter().enumerate() {
            if !self.sc.controller.strategies.contains(&kind) {
                continue;
            }
            let forms = chunk_forms(kind, &current, &target, self.sc.controller.iterations);
            let mut steps = Vec::new();
            let mut offset = 0;
            let mut cost = 0.0;
            let mut profile = Vec::new();
            let mut probe = self.plant.clone();
            let mut code = current.clone();
            for (i, f) in forms.iter().enumerate() {
                if i > 0 {
                    offset += 1;
                    for _ in 0..probe.due_steps() {
                        probe.step(0, None)?;
                    }
                    code = self.b.space.encode(probe.active())?;
                    profile.push(self.damage_of(&probe, false));
                }
                let (nb, mb) = chunk_bits(f, &target);
                let (nt, mt) = (
                    set.transfer_time(Channel::N, nb),
                    set.transfer_time(Channel::M, mb),
                );
                let (channel, payload_bits) = if nt > mt {
                    (Channel::N, nb)
                } else {
                    (Channel::M, mb)
                };
                steps.push(StrategyStep {
                    target: Target::Pattern {
                        address: job.target,
                    },
                    tick: offset,
                    channel,
                    payload_bits,
                });
                cost += (nb + mb) as f64;
                let ticks = nt.max(mt);
                let last = i + 1 == forms.len();
                for k in 0..ticks {
                    if k + 1 == ticks {
                        apply_form(f, &mut code, &target);
                        probe.set_active(self.b.space.decode(&code)?)?;
                    }
                    profile.push(self.damage_of(&probe, last && k + 1 == ticks));
                }
                if ticks == 0 {
                    apply_form(f, &mut code, &target);
                    probe.set_active(self.b.space.decode(&code)?)?;
                }
                offset += ticks;
            }
            let family = if kind == StrategyKind::Iterative {
                Family::Iterative
            } else {
                Family::Spontaneous
            };
            profiles.insert(id as u64, profile);
            candidates.push((
                kind,
                Strategy {
                    id: id as u64,
                    steps,
                    t_reconf: offset,
                    cost,
                    family,
                },
            ));
        }
        let strategies: Vec<Strategy> = candidates.iter().map(|c| c.1.clone()).collect();
        let evaluated = evaluate_all(&strategies, &TabulatedDamage(profiles), set)?;
        let eligible = eligible_strategies(&evaluated, self.sc.controller.damage_cap);
        let mut decision = Decision {
            tick: t,
            job_id: job.id,
            candidates: evaluated.len(),
            eligible: eligible.len(),
            chosen: None,
            damage: None,
            worst_case: worst_case_damage(&evaluated),
            cost: None,
            t_reconf: None,
        };
        match select_strategy(&eligible) {
            Ok(chosen) => {
                let kind = candidates[evaluated
                    .iter()
                    .position(|e| e.strategy.id == chosen.strategy.id)
                    .expect("chosen from set")]
                .0;
                decision.chosen = Some(kind.name().into());
                decision.damage = Some(chosen.damage);
                decision.cost = Some(chosen.strategy.cost);
                decision.t_reconf = Some(chosen.strategy.t_reconf);
                self.trace.decisions.push(decision);
                events.push(format!("select:{}", kind.name()));
                job.kind = kind;
                let sel = spread(self.repo.address_bits() as u64, set.rate(Channel::R));
                job.sel_ticks = sel.len() as u64;
                self.job = Some(job);
                self.phase = Phase::Select(sel.into());
            }
            Err(_) => {
                self.trace.decisions.push(decision);
                events.push("no-eligible".into());
                let r = self.repo.recovery().ok_or(EngineError::NoRecovery)?;
                self.abandoned = self.demand;
                job.target = r;
                self.start_recovery(job, events);
            }
        }
        Ok(())
    }

    fn prepare_transfer(&mut self) -> Result<()> {
        let current = self.code()?;
        let job = self.job.as_mut().expect("transfer needs a job");
        let target = self.repo.get(job.target)?;
        job.deviation = bits::hamming(&current, target);
        job.chunks = chunk_forms(job.kind, &current, target, self.sc.controller.iterations).into();
        job.prepared = true;
        Ok(())
    }

    fn send(&self, payload: &Bits, ch: Channel, job: u64, chunk: u64) -> Result<TransferReport> {
        let ber = self.b.channels.ber(ch);
        if payload.is_empty() || ber == 0.0 {
            return Ok(TransferReport {
                received: payload.clone(),
                payload_bits: payload.len() as u64,
                redundancy_bits: 0,
                rerequested_bits: 0,
                nack_bits: 0,
                sent_bits: payload.len() as u64,
                corrupted_blocks: Vec::new(),
                rerequests: 0,
                residual_error_bits: 0,
            });
        }
        let key = format!("{}:{}:{}", self.seed, job, chunk);
        let mut src = RandomErrors {
            seed: bits::fnv1a(key.as_bytes()),
            channel: ch,
            ber,
        };
        transmit_with_errors(payload, self.b.channels.duplex_repair, &mut src).map_err(|e| {
            EngineError::Unrecoverable {
                job,
                reason: e.to_string(),
            }
        })
    }

    /// Sends the next chunk through n then m and schedules its ticks.
    fn build_chunk(&mut self) -> Result<()> {
        let current = self.code()?;
        let job = self.job.as_ref().expect("transfer needs a job");
        let (id, index) = (job.id, job.chunk_index);
        let target = self.repo.get(job.target)?.clone();
        // Delta chunks address whatever still differs when they start: the
        // plant may have moved since the transfer was laid out.
        let form = match job.chunks.front().expect("chunk available") {
            ChunkForm::Positions(_) => {
                let changed = changed_positions(&current, &target);
                let share = changed.len().div_ceil(job.chunks.len());
                ChunkForm::Positions(changed[..share].to_vec())
            }
            full => full.clone(),
        };
        let width = target.len();
        let unrecoverable = |reason: &str| EngineError::Unrecoverable {
            job: id,
            reason: reason.into(),
        };
        let (n_rep, m_rep, result) = match &form {
            ChunkForm::Full { compressed } => {
                let n_payload = if *compressed {
                    RunLengthCodec.compress(&target)
                } else {
                    target.clone()
                };
                let n_rep = self.send(&n_payload, Channel::N, id, index)?;
                let staged = if *compressed {
                    RunLengthCodec
                        .decompress(&n_rep.received)
                        .map_err(|e| unrecoverable(&e.to_string()))?
                } else {
                    n_rep.received.clone()
                };
                if staged.len() != width {
                    return Err(unrecoverable("decoded configuration has the wrong width"));
                }
                let m_rep = self.send(&staged, Channel::M, id, index)?;
                let result = m_rep.received.clone();
                (n_rep, m_rep, result)
            }
            ChunkForm::Positions(p) => {
                let n_rep = self.send(&encode_positions(p, &target), Channel::N, id, index)?;
                let staged = decode_positions(&n_rep.received, width);
                let mut m_payload = Bits::new();
                let w = position_width(width);
                for (pos, v) in &staged {
                    bits::push_uint(&mut m_payload, *pos as u64, w);
                    m_payload.push(*v);
                }
                let m_rep = self.send(&m_payload, Channel::M, id, index)?;
                let mut result = current.clone();
                for (pos, v) in decode_positions(&m_rep.received, width) {
                    result.set(pos, v);
                }
                (n_rep, m_rep, result)
            }
        };
        let job = self.job.as_mut().expect("transfer needs a job");
        job.residual += n_rep.residual_error_bits + m_rep.residual_error_bits;
        let mut tallies = [
            (Channel::N, Tally::default()),
            (Channel::M, Tally::default()),
        ];
        tallies[0].1.add(&n_rep);
        tallies[1].1.add(&m_rep);
        for (ch, t) in &tallies {
            let e = job.tallies.entry(*ch).or_default();
            e.payload += t.payload;
            e.redundancy += t.redundancy;
            e.rerequested += t.rerequested;
        }
        let n = categorize(
            &spread(tallies[0].1.sent(), self.b.channels.rate(Channel::N)),
            &tallies[0].1,
        );
        let m = categorize(
            &spread(tallies[1].1.sent(), self.b.channels.rate(Channel::M)),
            &tallies[1].1,
        );
        let ticks = n.len().max(m.len()) as u64;
        job.live = Some(LiveChunk {
            n,
            m,
            ticks,
            done: 0,
            result,
        });
        Ok(())
    }

    /// Applies a finished chunk. Returns true when the job is complete.
    fn finish_chunk(&mut self, t: u64, events: &mut Vec<String>) -> Result<bool> {
        let job = self.job.as_mut().expect("transfer needs a job");
        let live = job.live.take().expect("live chunk");
        job.chunks.pop_front();
        job.chunk_index += 1;
        let id = job.id;
        let more = !job.chunks.is_empty();
        let p = self
            .b
            .space
            .decode(&live.result)
            .map_err(|e| EngineError::Unrecoverable {
                job: id,
                reason: format!("implemented code is invalid: {e}"),
            })?;
        self.plant.set_active(p)?;
        if more {
            events.push("chunk".into());
            return Ok(false);
        }
        self.complete(t, events);
        Ok(true)
    }

    fn complete(&mut self, t: u64, events: &mut Vec<String>) {
        let job = self.job.take().expect("completing a job");
        self.configured = Some(job.target);
        self.completions.push_back(t);
        events.push(format!("reconfigured:{}", job.target));
        let tally = |c| job.tallies.get(&c).copied().unwrap_or_default();
        self.trace.reconfigurations.push(Reconfiguration {
            job_id: job.id,
            trigger: job.trigger,
            target: job.target,
            strategy: job.kind.name().into(),
            start_tick: job.start_tick,
            end_tick: t,
            identification_ticks: job.id_ticks,
            selection_ticks: job.sel_ticks,
            transfer_ticks: job.transfer_ticks,
            gap_ticks: job.gap_ticks,
            frozen_ticks: job.transfer_ticks,
            wall_ticks: t + 1 - job.start_tick,
            deviation_bits: job.deviation,
            residual_error_bits: job.residual,
            q: tally(Channel::Q),
            r: tally(Channel::R),
            n: tally(Channel::N),
            m: tally(Channel::M),
        });
        self.phase = Phase::Idle;
    }

    fn book(&mut self, t: u64, ch: Channel, bits: u64, chan: &mut BTreeMap<Channel, u64>) {
        let job = self.job.as_mut().expect("booking needs a job");
        job.tallies.entry(ch).or_default().payload += bits;
        let id = job.id;
        self.ledger(t, ch, (bits, 0, 0), id, chan);
    }

    /// One tick of controller work. Returns true if the plant is frozen.
    fn advance(
        &mut self,
        t: u64,
        events: &mut Vec<String>,
        chan: &mut BTreeMap<Channel, u64>,
    ) -> Result<bool> {
        for _ in 0..64 {
            match &mut self.phase {
                Phase::Idle => {
                    if !self.check_trigger(t, events)? {
                        return Ok(false);
                    }
                }
                Phase::Wait(left) => {
                    *left -= 1;
                    if *left == 0 {
                        self.phase = Phase::Identify(self.identification());
                        events.push("identify".into());
                    }
                    return Ok(false);
                }
                Phase::Identify(q) => match q.pop_front() {
                    None => self.plan(t, events)?,
                    Some(bits) => {
                        let done = q.is_empty();
                        self.book(t, Channel::Q, bits, chan);
                        if done {
                            self.plan(t, events)?;
                        }
                        return Ok(false);
                    }
                },
                Phase::Select(r) => match r.pop_front() {
                    None => self.phase = Phase::Transfer,
                    Some(bits) => {
                        let done = r.is_empty();
                        self.book(t, Channel::R, bits, chan);
                        if done {
                            self.phase = Phase::Transfer;
                        }
                        return Ok(false);
                    }
                },
                Phase::Transfer => {
                    if !self.job.as_ref().expect("transfer needs a job").prepared {
                        self.prepare_transfer()?;
                        events.push("transfer".into());
                    }
                    if self
                        .job
                        .as_ref()
                        .expect("transfer needs a job")
                        .live
                        .is_none()
                    {
                        self.build_chunk()?;
                        if self
                            .job
                            .as_ref()
                            .and_then(|j| j.live.as_ref())
                            .is_some_and(|l| l.ticks == 0)
                        {
                            if !self.finish_chunk(t, events)? {
                                self.phase = Phase::Gap(1);
                            }
                            continue;
                        }
                    }
                    let job = self.job.as_mut().expect("transfer needs a job");
                    let live = job.live.as_mut().expect("chunk built");
                    let k = live.done as usize;
                    let n = live.n.get(k).copied();
                    let m = live.m.get(k).copied();
                    live.done += 1;
                    let finished = live.done == live.ticks;
                    job.transfer_ticks += 1;
                    let id = job.id;
                    if let Some(x) = n {
                        self.ledger(t, Channel::N, x, id, chan);
                    }
                    if let Some(x) = m {
                        self.ledger(t, Channel::M, x, id, chan);
                    }
                    if finished && !self.finish_chunk(t, events)? {
                        self.phase = Phase::Gap(1);
                    }
                    return Ok(true);
                }
                Phase::Gap(left) => {
                    *left -= 1;
                    if *left == 0 {
                        self.phase = Phase::Transfer;
                    }
                    self.job.as_mut().expect("gap inside a job").gap_ticks += 1;
                    return Ok(false);
                }
            }
        }
        unreachable!("controller phases settle within a tick")
    }

    fn execute(mut self) -> Result<Trace> {
        let tick_seconds = self.sc.channels.tick_seconds;
        let mut reference = self.plant.clone();
        for t in 0..self.sc.run.ticks {
            let mut events = Vec::new();
            let mut chan = BTreeMap::new();
            self.apply_events(t, &mut events)?;
            let frozen = self.advance(t, &mut events, &mut chan)?;
            if !frozen {
                for _ in 0..self.plant.due_steps() {
                    self.plant.step(0, None)?;
                    self.vtime += 1;
                }
            }
            for _ in 0..reference.due_steps() {
                reference.step(0, None)?;
            }
            let damage = self.damage_of(&self.plant, self.demand_met());
            let code = self.code()?;
            let channel = if chan.is_empty() {
                "-".into()
            } else {
                chan.keys()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join("+")
            };
            self.trace.rows.push(TraceRow {
                tick: t,
                real_time: (t + 1) as f64 * tick_seconds,
                virtual_time: self.vtime,
                active_config: config_label(&code),
                channel,
                bits: chan.values().sum(),
                event: if events.is_empty() {
                    "-".into()
                } else {
                    events.join(";")
                },
                damage,
            });
            self.trace.configured.push(self.configured);
            self.trace
                .demand_class
                .push(self.demand.unwrap_or(0) % self.trace.error_classes);
            self.trace
                .reference
                .push(config_label(&self.b.space.encode(reference.active())?));
        }
        Ok(self.trace)
    }
}

fn apply_form(form: &ChunkForm, code: &mut Bits, target: &Bits) {
    match form {
        ChunkForm::Full { .. } => code.copy_from_bitslice(target),
        ChunkForm::Positions(p) => {
            for &i in p {
                code.set(i, target[i]);
            }
        }
    }
}

/// Runs a built scenario with the given seed.
pub fn run(sc: &Scenario, built: &Built, seed: u64) -> Result<(Trace, RunSummary)> {
    let trace = Runner::new(sc, built, seed).execute()?;
    let safety = metrics::safety_report(sc, built)?;
    let summary = summarize(&trace, &safety);
    Ok((trace, summary))
}

pub fn summarize(trace: &Trace, safety: &SafetyReport) -> RunSummary {
    RunSummary {
        total_damage: trace.rows.iter().map(|r| r.damage).sum(),
        reconf_wall_ticks: trace.reconfigurations.iter().map(|r| r.wall_ticks).sum(),
        r: safety.r,
        h_k: safety.h_k,
        h_kp: safety.h_kp,
        s: safety.s,
        mode_switches: metrics::mode_segments(trace).len().saturating_sub(1) as u64,
        erratic: trace.erratic,
    }
}

/// Starting configuration of a built scenario's plant.
pub fn start_point(b: &Built) -> ConfigPoint {
    b.plant.active().clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::dsl::load;

    #[test]
    fn spread_sums() {
        assert_eq!(spread(3, 1.0), vec![1, 1, 1]);
        assert_eq!(spread(10, 5.0), vec![5, 5]);
        assert_eq!(spread(7, 2.5), vec![2, 3, 2]);
        assert!(spread(0, 3.0).is_empty());
    }

    #[test]
    fn position_codec() {
        let target = bits::parse_binary("10110").unwrap();
        let enc = encode_positions(&[0, 3], &target);
        assert_eq!(decode_positions(&enc, 5), vec![(0, true), (3, true)]);
    }

    const SMALL: &str = "\
SPACE
  b[4] = bool
PLANT
  start = pattern 0
STORAGE
  pattern = 0 values (0,0,0,0)
  pattern = 1 values (1,1,1,1)
CHANNELS
  q = 1
  r = 1
  n = 2
  m = 2
CONTROLLER
  error_classes = 2
  strategies = spontaneous delta
ENVIRONMENT
  event = 2
    demand = 1
RUN
  ticks = 12
";

    #[test]
    fn timeline_and_freeze() {
        let (sc, b) = load(SMALL).unwrap();
        let (trace, summary) = run(&sc, &b, 0).unwrap();
        let r = &trace.reconfigurations[0];
        assert_eq!(
            (r.identification_ticks, r.selection_ticks, r.transfer_ticks),
            (1, 1, 2)
        );
        assert_eq!(r.wall_ticks, 4);
        assert_eq!(summary.reconf_wall_ticks, 4);
        let frozen: Vec<u64> = trace
            .rows
            .windows(2)
            .filter(|w| w[0].virtual_time == w[1].virtual_time)
            .map(|w| w[1].tick)
            .collect();
        assert_eq!(frozen, vec![4, 5]);
        assert_eq!(
            summary.total_damage,
            trace.rows.iter().map(|r| r.damage).sum::<f64>()
        );
        assert_eq!(summary.mode_switches, 1);
    }
}

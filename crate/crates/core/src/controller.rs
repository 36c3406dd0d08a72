//! The configurator: strategy damage and eligibility, cost-based selection,
//! the guiding cost field and the planner families.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bits::{self, Bits};
use crate::channels::{Channel, ChannelSet};
use crate::configspace::{
    ConfigPoint, ConfigSpace, HammingGraph, SpaceError, DEFAULT_ENUMERATION_CAP,
};
use crate::plant::Plant;
use crate::storage::{Delta, Repository, StorageError};

/// Cost added per violated legality constraint.
pub const DEFAULT_PENALTY_FLOOR: f64 = 1e6;
/// Proportional clock correction.
pub const DEFAULT_GAMMA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("strategy {id}: step {step} needs {needed} ticks on {channel} but only {available} are scheduled")]
    Infeasible {
        id: u64,
        step: usize,
        channel: Channel,
        needed: u64,
        available: u64,
    },
    #[error("no strategy stays below the damage cap")]
    NoEligible,
    #[error("start configuration is illegal")]
    IllegalStart,
    #[error("repository holds no trigger associations")]
    NoMemory,
    #[error("dimension groups overlap on dimensions {0:?}")]
    Conflict(Vec<usize>),
    #[error("dimension groups leave dimensions {0:?} unassigned")]
    IncompletePartition(Vec<usize>),
    #[error("{0} needs at least two reference configurations")]
    TooFewReferences(&'static str),
    #[error("{0}")]
    Parameter(&'static str),
}

pub type Result<T, E = ControllerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Spontaneous,
    Iterative,
    Stochastic,
    Memory,
    Mixing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Point { values: Vec<i64> },
    Pattern { address: u64 },
    Delta { delta: Delta },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyStep {
    pub target: Target,
    /// Tick offset at which the transfer starts.
    pub tick: u64,
    pub channel: Channel,
    pub payload_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strategy {
    pub id: u64,
    pub steps: Vec<StrategyStep>,
    pub t_reconf: u64,
    /// Implementation effort; never a function of time.
    pub cost: f64,
    pub family: Family,
}

impl Strategy {
    /// Strategy whose steps run back to back with `gap` idle ticks in
    /// between; `t_reconf` is derived from the channel rates.
    pub fn sequential(
        id: u64,
        family: Family,
        cost: f64,
        steps: Vec<(Target, Channel, u64)>,
        gap: u64,
        set: &ChannelSet,
    ) -> Self {
        let mut tick = 0;
        let mut out = Vec::with_capacity(steps.len());
        for (i, (target, channel, payload_bits)) in steps.into_iter().enumerate() {
            if i > 0 {
                tick += gap;
            }
            out.push(StrategyStep {
                target,
                tick,
                channel,
                payload_bits,
            });
            tick += set.transfer_time(channel, payload_bits);
        }
        Self {
            id,
            steps: out,
            t_reconf: tick,
            cost,
            family,
        }
    }

    /// Checks that every step's transfer fits before the next step starts
    /// and before `t_reconf`.
    pub fn validate(&self, set: &ChannelSet) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            let end = self.steps.get(i + 1).map_or(self.t_reconf, |n| n.tick);
            let needed = set.transfer_time(s.channel, s.payload_bits);
            let available = end.saturating_sub(s.tick);
            if needed > available || end < s.tick {
                return Err(ControllerError::Infeasible {
                    id: self.id,
                    step: i,
                    channel: s.channel,
                    needed,
                    available,
                });
            }
        }
        Ok(())
    }
}

/// Produces per-tick damage `d(t)` for `t = 1..=t_reconf` of a strategy.
pub trait Lookahead {
    fn damage_profile(&self, strategy: &Strategy) -> Vec<f64>;
}

/// The same damage on every tick.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDamage(pub f64);

impl Lookahead for ConstantDamage {
    fn damage_profile(&self, s: &Strategy) -> Vec<f64> {
        vec![self.0; s.t_reconf as usize]
    }
}

/// Profiles looked up by strategy id; missing ids cause no damage.
#[derive(Debug, Clone, Default)]
pub struct TabulatedDamage(pub BTreeMap<u64, Vec<f64>>);

impl Lookahead for TabulatedDamage {
    fn damage_profile(&self, s: &Strategy) -> Vec<f64> {
        self.0.get(&s.id).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluated {
    pub strategy: Strategy,
    pub damage: f64,
}

/// Sum of `d(t)` over the strategy's real-time window.
pub fn evaluate_damage(
    strategy: &Strategy,
    lookahead: &dyn Lookahead,
    set: &ChannelSet,
) -> Result<f64> {
    strategy.validate(set)?;
    let profile = lookahead.damage_profile(strategy);
    Ok(profile.iter().take(strategy.t_reconf as usize).sum())
}

pub fn evaluate_all(
    candidates: &[Strategy],
    lookahead: &dyn Lookahead,
    set: &ChannelSet,
) -> Result<Vec<Evaluated>> {
    candidates
        .iter()
        .map(|s| {
            Ok(Evaluated {
                strategy: s.clone(),
                damage: evaluate_damage(s, lookahead, set)?,
            })
        })
        .collect()
}

/// Strategies whose damage sum stays strictly below `cap`.
pub fn eligible_strategies(evaluated: &[Evaluated], cap: f64) -> Vec<&Evaluated> {
    evaluated.iter().filter(|e| e.damage < cap).collect()
}

/// Largest damage sum in the set.
pub fn worst_case_damage(evaluated: &[Evaluated]) -> Option<f64> {
    evaluated.iter().map(|e| e.damage).max_by(f64::total_cmp)
}

fn selection_order(a: &Strategy, b: &Strategy) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(a.t_reconf.cmp(&b.t_reconf))
        .then(a.id.cmp(&b.id))
}

/// Least cost, then shorter real time, then lower id.
pub fn select_strategy<'a>(eligible: &[&'a Evaluated]) -> Result<&'a Evaluated> {
    eligible
        .iter()
        .copied()
        .min_by(|a, b| selection_order(&a.strategy, &b.strategy))
        .ok_or(ControllerError::NoEligible)
}

/// Guiding cost `C(c2, c1) = a(c2) + p(c2) + qf(c2) + r_f(c1, c2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostField {
    pub space: ConfigSpace,
    pub goal: ConfigPoint,
    pub attractor_weight: f64,
    pub penalty_floor: f64,
    pub quality: BTreeMap<Vec<i64>, f64>,
    pub radius_weight: f64,
}

impl CostField {
    pub fn new(space: ConfigSpace, goal: ConfigPoint) -> Self {
        Self {
            space,
            goal,
            attractor_weight: 1.0,
            penalty_floor: DEFAULT_PENALTY_FLOOR,
            quality: BTreeMap::new(),
            radius_weight: 0.1,
        }
    }

    pub fn attractor(&self, c2: &ConfigPoint) -> Result<f64> {
        Ok(self.attractor_weight * self.space.bit_distance(c2, &self.goal)? as f64)
    }

    pub fn penalty(&self, c2: &ConfigPoint) -> f64 {
        self.penalty_floor * self.space.violations(c2) as f64
    }

    pub fn quality(&self, c2: &ConfigPoint) -> f64 {
        self.quality.get(c2.values()).copied().unwrap_or(0.0)
    }

    pub fn radius(&self, c1: &ConfigPoint, c2: &ConfigPoint) -> Result<f64> {
        Ok(self.radius_weight * self.space.bit_distance(c1, c2)? as f64)
    }

    /// Position-only part `a + p + qf`.
    pub fn potential(&self, c: &ConfigPoint) -> Result<f64> {
        Ok(self.attractor(c)? + self.penalty(c) + self.quality(c))
    }

    pub fn guiding_cost(&self, c1: &ConfigPoint, c2: &ConfigPoint) -> Result<f64> {
        Ok(self.potential(c2)? + self.radius(c1, c2)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOutcome {
    Reached,
    LocalMinimum,
    StepCap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub path: Vec<ConfigPoint>,
    pub outcome: PlanOutcome,
}

impl Plan {
    /// One implementation step per hop, each carrying the flipped bits over m.
    pub fn to_strategy(
        &self,
        id: u64,
        family: Family,
        space: &ConfigSpace,
        set: &ChannelSet,
        gap: u64,
    ) -> Result<Strategy> {
        let mut steps = Vec::new();
        let mut cost = 0.0;
        for w in self.path.windows(2) {
            let d = space.bit_distance(&w[0], &w[1])? as u64;
            cost += d as f64;
            steps.push((
                Target::Point {
                    values: w[1].values().to_vec(),
                },
                Channel::M,
                d,
            ));
        }
        Ok(Strategy::sequential(id, family, cost, steps, gap, set))
    }
}

struct Neighborhood {
    points: Vec<ConfigPoint>,
    graph: HammingGraph,
}

impl Neighborhood {
    fn new(space: &ConfigSpace) -> Result<Self> {
        let points = space.enumerate(DEFAULT_ENUMERATION_CAP)?;
        let codes = points
            .iter()
            .map(|p| space.encode(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            points,
            graph: HammingGraph::new(codes),
        })
    }

    fn index(&self, space: &ConfigSpace, p: &ConfigPoint) -> Result<usize> {
        Ok(space.index_of(p)? as usize)
    }
}

fn greedy_choice(
    field: &CostField,
    nb: &Neighborhood,
    cur: usize,
    budget: u32,
) -> Result<Option<(usize, f64)>> {
    let c1 = &nb.points[cur];
    let mut best: Option<(usize, f64)> = None;
    for j in nb.graph.neighbors(cur, budget) {
        let c = field.guiding_cost(c1, &nb.points[j])?;
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((j, c));
        }
    }
    Ok(best)
}

/// Greedy descent on the guiding cost. Moves only while the best neighbour
/// costs strictly less than the current potential, so the potential strictly
/// decreases along the path.
pub fn plan_deterministic(
    start: &ConfigPoint,
    field: &CostField,
    step_budget: u32,
    step_cap: usize,
) -> Result<Plan> {
    let space = &field.space;
    if !space.is_legal(start) {
        return Err(ControllerError::IllegalStart);
    }
    let nb = Neighborhood::new(space)?;
    let goal = nb.index(space, &field.goal)?;
    let mut cur = nb.index(space, start)?;
    let mut path = vec![nb.points[cur].clone()];
    for _ in 0..step_cap {
        if cur == goal {
            return Ok(Plan {
                path,
                outcome: PlanOutcome::Reached,
            });
        }
        let here = field.potential(&nb.points[cur])?;
        match greedy_choice(field, &nb, cur, step_budget)? {
            Some((j, c)) if c < here => {
                cur = j;
                path.push(nb.points[cur].clone());
            }
            _ => {
                return Ok(Plan {
                    path,
                    outcome: PlanOutcome::LocalMinimum,
                })
            }
        }
    }
    let outcome = if cur == goal {
        PlanOutcome::Reached
    } else {
        PlanOutcome::StepCap
    };
    Ok(Plan { path, outcome })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Annealing {
    pub t0: f64,
    /// Geometric cooling factor per step.
    pub cooling: f64,
    pub max_steps: usize,
}

/// Simulated annealing on the guiding cost. At zero temperature each step is
/// exactly the greedy step.
pub fn plan_stochastic(
    start: &ConfigPoint,
    field: &CostField,
    step_budget: u32,
    seed: u64,
    schedule: Annealing,
) -> Result<Plan> {
    let space = &field.space;
    if !space.is_legal(start) {
        return Err(ControllerError::IllegalStart);
    }
    if schedule.t0 <= 0.0 {
        return plan_deterministic(start, field, step_budget, schedule.max_steps);
    }
    let nb = Neighborhood::new(space)?;
    let goal = nb.index(space, &field.goal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = nb.index(space, start)?;
    let mut path = vec![nb.points[cur].clone()];
    let mut temp = schedule.t0;
    for _ in 0..schedule.max_steps {
        if cur == goal {
            return Ok(Plan {
                path,
                outcome: PlanOutcome::Reached,
            });
        }
        let nbrs = nb.graph.neighbors(cur, step_budget);
        if nbrs.is_empty() {
            return Ok(Plan {
                path,
                outcome: PlanOutcome::LocalMinimum,
            });
        }
        let j = nbrs[rng.random_range(0..nbrs.len())];
        let delta = field.guiding_cost(&nb.points[cur], &nb.points[j])?
            - field.potential(&nb.points[cur])?;
        let accept = delta < 0.0 || rng.random::<f64>() < (-delta / temp).exp();
        if accept {
            cur = j;
            path.push(nb.points[cur].clone());
        }
        temp *= schedule.cooling;
    }
    let outcome = if cur == goal {
        PlanOutcome::Reached
    } else {
        PlanOutcome::StepCap
    };
    Ok(Plan { path, outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryRecall {
    pub address: u64,
    pub approximate: bool,
    pub distance: u32,
}

/// Recalls the pattern bound to `trigger`, or the nearest stored trigger by
/// bit distance (lowest address on ties), flagged approximate.
pub fn plan_memory(repo: &Repository, trigger: &Bits) -> Result<MemoryRecall> {
    let mut best: Option<(u32, u64)> = None;
    for (sig, addr) in repo.triggers() {
        if sig.len() != trigger.len() {
            continue;
        }
        let d = bits::hamming(sig, trigger);
        if best.is_none_or(|b| (d, *addr) < b) {
            best = Some((d, *addr));
        }
    }
    let (distance, address) = best.ok_or(ControllerError::NoMemory)?;
    Ok(MemoryRecall {
        address,
        approximate: distance > 0,
        distance,
    })
}

/// Single-step strategy implementing a recalled pattern.
pub fn memory_strategy(
    id: u64,
    repo: &Repository,
    recall: &MemoryRecall,
    set: &ChannelSet,
) -> Result<Strategy> {
    let (p, addr_bits) = repo.retrieve(recall.address)?;
    let steps = vec![
        (
            Target::Pattern {
                address: recall.address,
            },
            Channel::R,
            addr_bits as u64,
        ),
        (
            Target::Pattern {
                address: recall.address,
            },
            Channel::M,
            p.bits.len() as u64,
        ),
    ];
    Ok(Strategy::sequential(
        id,
        Family::Memory,
        p.bits.len() as f64,
        steps,
        0,
        set,
    ))
}

/// Weighted per-dimension combination, rounded and clamped.
pub fn interpolate(
    space: &ConfigSpace,
    refs: &[ConfigPoint],
    weights: &[f64],
) -> Result<ConfigPoint> {
    if refs.len() < 2 {
        return Err(ControllerError::TooFewReferences("interpolation"));
    }
    if weights.len() != refs.len()
        || weights.iter().any(|w| *w < 0.0)
        || weights.iter().sum::<f64>() <= 0.0
    {
        return Err(ControllerError::Parameter(
            "interpolation weights must be non-negative, one per reference",
        ));
    }
    let total: f64 = weights.iter().sum();
    let mut values: Vec<i64> = (0..space.dims().len())
        .map(|d| {
            (refs
                .iter()
                .zip(weights)
                .map(|(r, w)| r.values()[d] as f64 * w)
                .sum::<f64>()
                / total)
                .round() as i64
        })
        .collect();
    space.clamp_values(&mut values);
    Ok(space.point(values)?)
}

/// Least-squares line per dimension over the references (taken as equally
/// spaced), evaluated `by` positions past the last one.
pub fn extrapolate(space: &ConfigSpace, refs: &[ConfigPoint], by: f64) -> Result<ConfigPoint> {
    if refs.len() < 2 {
        return Err(ControllerError::TooFewReferences("extrapolation"));
    }
    let n = refs.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let sxx: f64 = (0..refs.len()).map(|i| (i as f64 - xm).powi(2)).sum();
    let mut values: Vec<i64> = (0..space.dims().len())
        .map(|d| {
            let ym = refs.iter().map(|r| r.values()[d] as f64).sum::<f64>() / n;
            let sxy: f64 = refs
                .iter()
                .enumerate()
                .map(|(i, r)| (i as f64 - xm) * (r.values()[d] as f64 - ym))
                .sum();
            let slope = sxy / sxx;
            (ym + slope * (n - 1.0 + by - xm)).round() as i64
        })
        .collect();
    space.clamp_values(&mut values);
    Ok(space.point(values)?)
}

/// Splices dimension groups: group `i` is copied from `refs[i]`.
pub fn assemble_point(
    space: &ConfigSpace,
    refs: &[ConfigPoint],
    groups: &[Vec<usize>],
) -> Result<ConfigPoint> {
    if groups.len() != refs.len() {
        return Err(ControllerError::Parameter(
            "one dimension group per reference",
        ));
    }
    let n = space.dims().len();
    let mut owner = vec![None; n];
    let mut overlap = Vec::new();
    for (g, dims) in groups.iter().enumerate() {
        for &d in dims {
            if d >= n {
                return Err(SpaceError::UnknownDimension(d.to_string()).into());
            }
            if owner[d].is_some() {
                overlap.push(d);
            }
            owner[d] = Some(g);
        }
    }
    if !overlap.is_empty() {
        overlap.sort_unstable();
        overlap.dedup();
        return Err(ControllerError::Conflict(overlap));
    }
    let missing: Vec<usize> = (0..n).filter(|d| owner[*d].is_none()).collect();
    if !missing.is_empty() {
        return Err(ControllerError::IncompletePartition(missing));
    }
    let values = (0..n)
        .map(|d| refs[owner[d].expect("complete")].values()[d])
        .collect();
    Ok(space.point(values)?)
}

/// Exponential smoothing of a target stream with pass coefficient `alpha`.
pub fn filter(space: &ConfigSpace, stream: &[ConfigPoint], alpha: f64) -> Result<Vec<ConfigPoint>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ControllerError::Parameter(
            "pass coefficient must lie in [0, 1]",
        ));
    }
    let mut state: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(stream.len());
    for p in stream {
        let x: Vec<f64> = p.values().iter().map(|v| *v as f64).collect();
        let s = match state {
            None => x,
            Some(prev) => prev
                .iter()
                .zip(&x)
                .map(|(y, x)| alpha * x + (1.0 - alpha) * y)
                .collect(),
        };
        let mut values: Vec<i64> = s.iter().map(|v| v.round() as i64).collect();
        space.clamp_values(&mut values);
        out.push(space.point(values)?);
        state = Some(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncEvent {
    /// Reset backwards along the program: plant runs ahead.
    TooFast,
    /// Pushed forward along the program: plant lags.
    TooSlow,
    /// Pushed off the program; the controller must replan.
    Replan,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClockAdjustment {
    pub rate: f64,
    pub events: Vec<SyncEvent>,
}

/// Classifies `(from, to)` index disturbances against the plant's program
/// and adjusts the clock rate by `gamma` per on-track correction.
pub fn synchronize_clock(
    plant: &Plant,
    disturbances: &[(u64, u64)],
    gamma: f64,
) -> ClockAdjustment {
    let program = plant.program();
    let pos = |a: u64| program.iter().position(|p| *p == a);
    let mut rate = plant.clock_rate();
    let mut events = Vec::with_capacity(disturbances.len());
    for &(from, to) in disturbances {
        let ev = match (pos(from), pos(to)) {
            (_, None) => SyncEvent::Replan,
            (None, Some(_)) => SyncEvent::Neutral,
            (Some(a), Some(b)) if b < a => SyncEvent::TooFast,
            (Some(a), Some(b)) if b > a => SyncEvent::TooSlow,
            _ => SyncEvent::Neutral,
        };
        match ev {
            SyncEvent::TooFast => rate *= 1.0 - gamma,
            SyncEvent::TooSlow => rate *= 1.0 + gamma,
            _ => {}
        }
        events.push(ev);
    }
    ClockAdjustment { rate, events }
}

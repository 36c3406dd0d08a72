//! Declarative scenario model and its translation into live components.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bits::Bits;
use crate::channels::{Channel, ChannelSet};
use crate::configspace::{ConfigPoint, ConfigSpace, DimKind, Dimension, LegalityMap, Predicate};
use crate::controller::CostField;
use crate::omega::{compose, ControllerSpec, OmegaUnit};
use crate::plant::{DisturbancePolicy, OutputFn, Plant};
use crate::storage::{PatternKind, Repository};

use super::EngineError;

/// Dimension names with this prefix describe environment state, not the plant.
pub const ENV_PREFIX: &str = "env.";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimDecl {
    pub name: String,
    pub kind: DimKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LegalRule {
    Require { dim: String, predicate: Predicate },
    Forbid { values: Vec<i64> },
    Allow { values: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantKind {
    /// Holds every configuration still.
    Static,
    /// Explicit successor per dense address.
    Table { successors: Vec<u64> },
    /// Cyclic program with a corrective field of the given radius.
    Program { path: Vec<u64>, radius: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceDecl {
    pub name: String,
    pub at: u64,
    pub branches: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Values(Vec<i64>),
    /// Content of a stored pattern; the plant counts as configured with it.
    Pattern(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantDecl {
    pub kind: PlantKind,
    pub output: OutputFn,
    pub clock: f64,
    pub start: Option<Start>,
    pub policy: DisturbancePolicy,
    pub divergences: Vec<DivergenceDecl>,
}

impl Default for PlantDecl {
    fn default() -> Self {
        Self {
            kind: PlantKind::Static,
            output: OutputFn::PopCount,
            clock: 1.0,
            start: None,
            policy: DisturbancePolicy::Clamp,
            divergences: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PatternSource {
    Values {
        values: Vec<i64>,
    },
    Bits {
        #[serde(serialize_with = "ser_bits")]
        bits: Bits,
    },
}

fn ser_bits<S: serde::Serializer>(b: &Bits, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&crate::bits::to_string(b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternDecl {
    pub address: u64,
    pub source: PatternSource,
    pub fragment: bool,
}

/// Pseudo-random filler patterns at addresses `0..count` not otherwise declared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Generate {
    pub count: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StorageDecl {
    pub patterns: Vec<PatternDecl>,
    pub generate: Option<Generate>,
    pub recovery: Option<u64>,
    pub triggers: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelDecl {
    pub q: f64,
    pub r: f64,
    pub n: f64,
    pub m: f64,
    /// Bit error rates on n and m; q and r are treated as clean.
    pub ber_n: f64,
    pub ber_m: f64,
    pub duplex: bool,
    /// Real seconds per engine tick; affects reporting only.
    pub tick_seconds: f64,
}

impl Default for ChannelDecl {
    fn default() -> Self {
        Self {
            q: 1.0,
            r: 1.0,
            n: 1.0,
            m: 1.0,
            ber_n: 0.0,
            ber_m: 0.0,
            duplex: true,
            tick_seconds: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Whole pattern in one blocking swap.
    Spontaneous,
    /// Only the differing bits.
    Delta,
    /// Run-length coded pattern over n, expanded before m.
    Compressed,
    /// Changed bits in chunks with plant activity in between.
    Iterative,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Spontaneous,
        StrategyKind::Delta,
        StrategyKind::Compressed,
        StrategyKind::Iterative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Spontaneous => "spontaneous",
            StrategyKind::Delta => "delta",
            StrategyKind::Compressed => "compressed",
            StrategyKind::Iterative => "iterative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchPolicy {
    /// Start reconfiguring as soon as the demand changes.
    Greedy,
    /// Delay the switch to the point of the plant's cycle closest to the target.
    Scheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerDecl {
    pub error_classes: u64,
    pub damage_cap: f64,
    pub strategies: Vec<StrategyKind>,
    pub policy: SwitchPolicy,
    pub iterations: u32,
    /// Completed reconfigurations allowed per window before the run counts as erratic.
    pub erratic_limit: u64,
    pub erratic_window: u64,
}

impl Default for ControllerDecl {
    fn default() -> Self {
        Self {
            error_classes: 2,
            damage_cap: f64::INFINITY,
            strategies: vec![StrategyKind::Spontaneous],
            policy: SwitchPolicy::Greedy,
            iterations: 2,
            erratic_limit: u64::MAX,
            erratic_window: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// The environment now requires the configuration stored at `address`.
    Demand { address: u64 },
    /// Jump the plant to the given values.
    Jump { values: Vec<i64> },
    /// Flip bits of the plant's configuration code.
    Flip { positions: Vec<usize> },
    /// Replace storage content.
    Store { address: u64, values: Vec<i64> },
    /// Alternate demands between two addresses.
    Oscillate {
        period: u64,
        count: u64,
        a: u64,
        b: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventDecl {
    pub tick: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvironmentDecl {
    pub initial_demand: Option<u64>,
    pub events: Vec<EventDecl>,
    /// Predicted distribution of demanded error classes.
    pub expect: Vec<f64>,
    pub violation_weight: f64,
    pub demand_weight: f64,
}

impl Default for EnvironmentDecl {
    fn default() -> Self {
        Self {
            initial_demand: None,
            events: Vec::new(),
            expect: Vec::new(),
            violation_weight: 1.0,
            demand_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDecl {
    pub name: String,
    pub ticks: u64,
    pub seed: u64,
    pub theta: u64,
    pub start: Option<Vec<i64>>,
    pub goal: Option<Vec<i64>>,
    pub budgets: Vec<u32>,
    pub epsilon: f64,
    pub components: f64,
}

impl Default for RunDecl {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            ticks: 10,
            seed: 0,
            theta: 1,
            start: None,
            goal: None,
            budgets: Vec::new(),
            epsilon: 1e-3,
            components: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Scenario {
    pub space: Vec<DimDecl>,
    pub legal: Vec<LegalRule>,
    pub plant: PlantDecl,
    pub storage: StorageDecl,
    pub channels: ChannelDecl,
    pub controller: ControllerDecl,
    pub environment: EnvironmentDecl,
    pub run: RunDecl,
}

/// Live components derived from a [`Scenario`].
#[derive(Debug, Clone)]
pub struct Built {
    /// Plant and environment dimensions with the full legality map.
    pub hybrid: ConfigSpace,
    pub space: ConfigSpace,
    pub plant: Plant,
    pub repo: Repository,
    pub channels: ChannelSet,
    /// Events in tick order with oscillations expanded.
    pub events: Vec<(u64, Action)>,
    /// Stored pattern the plant starts configured with, if any.
    pub configured: Option<u64>,
}

/// A validation failure tied to a scenario item key, e.g. `pattern 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub item: String,
    pub message: String,
}

fn issue(item: impl Into<String>, message: impl ToString) -> Issue {
    Issue {
        item: item.into(),
        message: message.to_string(),
    }
}

impl Scenario {
    pub fn plant_dims(&self) -> Vec<usize> {
        (0..self.space.len())
            .filter(|&i| !self.space[i].name.starts_with(ENV_PREFIX))
            .collect()
    }

    fn legality(&self, hybrid: &ConfigSpace) -> Result<LegalityMap, Issue> {
        let allows: Vec<Vec<i64>> = self
            .legal
            .iter()
            .filter_map(|r| {
                if let LegalRule::Allow { values } = r {
                    Some(values.clone())
                } else {
                    None
                }
            })
            .collect();
        let mut map = if allows.is_empty() {
            LegalityMap::all_legal()
        } else {
            LegalityMap::whitelist(allows)
        };
        for r in &self.legal {
            match r {
                LegalRule::Require { dim, predicate } => {
                    let i = hybrid.dim_index(dim).map_err(|e| issue("legal", e))?;
                    map = map.require(i, predicate.clone());
                }
                LegalRule::Forbid { values } => map = map.forbid(values.clone()),
                LegalRule::Allow { .. } => {}
            }
        }
        Ok(map)
    }

    /// Validates the scenario and builds its components.
    pub fn build(&self) -> Result<Built, Issue> {
        if self.space.is_empty() {
            return Err(issue("space", "at least one dimension is required"));
        }
        let dims = self
            .space
            .iter()
            .map(|d| {
                Dimension::new(d.name.clone(), d.kind.clone())
                    .map_err(|e| issue(format!("dim {}", d.name), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bare = ConfigSpace::new(dims).map_err(|e| issue("space", e))?;
        let legality = self.legality(&bare)?;
        let arity = bare.dims().len();
        for r in &self.legal {
            if let LegalRule::Forbid { values } | LegalRule::Allow { values } = r {
                let p = bare.point(values.clone()).map_err(|e| issue("legal", e))?;
                bare.checked_point(p.into_values())
                    .map_err(|e| issue("legal", e))?;
            }
        }
        let hybrid = bare.with_legality(legality);
        let plant_dims = self.plant_dims();
        if plant_dims.is_empty() {
            return Err(issue("space", "no plant dimensions"));
        }
        let space = if plant_dims.len() == arity {
            hybrid.clone()
        } else {
            hybrid.project(&plant_dims).map_err(|e| issue("space", e))?
        };

        let mut plant = match &self.plant.kind {
            PlantKind::Static => Plant::static_plant(space.clone(), self.plant.output.clone()),
            PlantKind::Table { successors } => {
                if Some(successors.len() as u64) != space.cardinality() {
                    return Err(issue(
                        "plant",
                        format!(
                            "table lists {} successors, space has {:?} points",
                            successors.len(),
                            space.cardinality()
                        ),
                    ));
                }
                let table = successors.clone();
                Plant::from_fn(
                    space.clone(),
                    |i| table.get(i as usize).copied().unwrap_or(u64::MAX),
                    self.plant.output.clone(),
                )
                .map_err(|e| issue("plant", e))?
            }
            PlantKind::Program { path, .. } => {
                let card = space.cardinality().unwrap_or(u64::MAX);
                if let Some(bad) = path.iter().find(|a| **a >= card) {
                    return Err(issue(
                        "plant",
                        format!("program address {bad} outside the space"),
                    ));
                }
                let next: BTreeMap<u64, u64> = path
                    .iter()
                    .enumerate()
                    .map(|(i, a)| (*a, path[(i + 1) % path.len()]))
                    .collect();
                Plant::from_fn(
                    space.clone(),
                    |i| next.get(&i).copied().unwrap_or(i),
                    self.plant.output.clone(),
                )
                .map_err(|e| issue("plant", e))?
            }
        };
        if let PlantKind::Program { path, radius } = &self.plant.kind {
            if path.is_empty() {
                return Err(issue("plant", "program path is empty"));
            }
            plant
                .install_corrective_field(path, *radius)
                .map_err(|e| issue("plant", e))?;
        }
        for d in &self.plant.divergences {
            plant
                .add_divergence(d.name.clone(), d.at, d.branches.clone())
                .map_err(|e| issue(format!("divergence {}", d.name), e))?;
        }
        plant
            .set_clock_rate(self.plant.clock)
            .map_err(|e| issue("plant", e))?;
        plant = plant
            .with_policy(self.plant.policy)
            .with_seed(self.run.seed);

        let width = space.total_width();
        let mut repo = Repository::new();
        for p in &self.storage.patterns {
            let item = format!("pattern {}", p.address);
            let bits = match &p.source {
                PatternSource::Values { values } => {
                    let pt = space
                        .checked_point(values.clone())
                        .map_err(|e| issue(&item, e))?;
                    space.encode(&pt).map_err(|e| issue(&item, e))?
                }
                PatternSource::Bits { bits } => {
                    if !p.fragment && bits.len() != width {
                        return Err(issue(
                            &item,
                            format!("{} bits given, configuration has {width}", bits.len()),
                        ));
                    }
                    bits.clone()
                }
            };
            if !p.fragment {
                space.decode(&bits).map_err(|e| issue(&item, e))?;
            }
            let kind = if p.fragment {
                PatternKind::Fragment
            } else {
                PatternKind::Full
            };
            repo.insert(p.address, bits, kind)
                .map_err(|e| issue(&item, e))?;
        }
        if let Some(g) = self.storage.generate {
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            for a in 0..g.count {
                let values: Vec<i64> = space
                    .dims()
                    .iter()
                    .map(|d| rng.random_range(d.min_value()..=d.max_value()))
                    .collect();
                if repo.contains(a) {
                    continue;
                }
                let pt = space.point(values).map_err(|e| issue("generate", e))?;
                repo.insert(
                    a,
                    space.encode(&pt).map_err(|e| issue("generate", e))?,
                    PatternKind::Full,
                )
                .map_err(|e| issue("generate", e))?;
            }
        }
        for (sig, a) in &self.storage.triggers {
            let bits = crate::bits::parse_binary(sig)
                .ok_or_else(|| issue("trigger", format!("'{sig}' is not binary")))?;
            repo.add_trigger(bits, *a)
                .map_err(|e| issue("trigger", e))?;
        }
        if let Some(r) = self.storage.recovery {
            repo.set_recovery(r).map_err(|e| issue("recovery", e))?;
        }

        let start = match &self.plant.start {
            None => None,
            Some(Start::Values(v)) => Some(
                space
                    .checked_point(v.clone())
                    .map_err(|e| issue("plant", e))?,
            ),
            Some(Start::Pattern(a)) => {
                let bits = repo.get(*a).map_err(|e| issue("plant", e))?;
                Some(space.decode(bits).map_err(|e| issue("plant", e))?)
            }
        };
        if let Some(p) = start {
            plant.set_active(p).map_err(|e| issue("plant", e))?;
        }
        let configured = match &self.plant.start {
            Some(Start::Pattern(a)) => Some(*a),
            _ => {
                let code = space
                    .encode(plant.active())
                    .map_err(|e| issue("plant", e))?;
                repo.patterns()
                    .find(|p| p.kind == PatternKind::Full && p.bits == code)
                    .map(|p| p.address)
            }
        };

        let c = &self.channels;
        let mut channels = ChannelSet::new(c.q, c.r, c.n, c.m).map_err(|e| issue("channels", e))?;
        for (ch, ber) in [(Channel::N, c.ber_n), (Channel::M, c.ber_m)] {
            if !(0.0..=1.0).contains(&ber) {
                return Err(issue(
                    "channels",
                    format!("bit error rate {ber} on {ch} outside [0, 1]"),
                ));
            }
            channels = channels.with_ber(ch, ber);
        }
        channels.duplex_repair = c.duplex;
        if !(c.tick_seconds > 0.0 && c.tick_seconds.is_finite()) {
            return Err(issue("channels", "tick length must be positive"));
        }

        let ctl = &self.controller;
        if ctl.error_classes == 0 {
            return Err(issue("controller", "error class count must be positive"));
        }
        if ctl.strategies.is_empty() {
            return Err(issue("controller", "no strategy family enabled"));
        }
        if ctl.iterations == 0 || ctl.erratic_window == 0 {
            return Err(issue(
                "controller",
                "iterations and erratic window must be positive",
            ));
        }
        if ctl.damage_cap.is_nan() || ctl.damage_cap < 0.0 {
            return Err(issue("controller", "damage cap must be non-negative"));
        }

        let env = &self.environment;
        if let Some(a) = env.initial_demand {
            if !repo.contains(a) {
                return Err(issue(
                    "environment",
                    format!("demand names missing pattern {a}"),
                ));
            }
        }
        if env.expect.iter().any(|p| !(*p >= 0.0))
            || (!env.expect.is_empty() && env.expect.len() as u64 != ctl.error_classes)
        {
            return Err(issue(
                "environment",
                "expectation needs one non-negative weight per error class",
            ));
        }
        let mut events = Vec::new();
        for (i, e) in env.events.iter().enumerate() {
            let item = format!("event {i}");
            match &e.action {
                Action::Demand { address } if !repo.contains(*address) => {
                    return Err(issue(
                        item,
                        format!("demand names missing pattern {address}"),
                    ))
                }
                Action::Jump { values } => {
                    if values.len() != arity {
                        return Err(issue(item, format!("jump needs {arity} values")));
                    }
                }
                Action::Flip { positions } => {
                    if let Some(p) = positions.iter().find(|p| **p >= width) {
                        return Err(issue(item, format!("bit {p} outside the configuration")));
                    }
                }
                Action::Store { values, .. } => {
                    space
                        .checked_point(values.clone())
                        .map_err(|er| issue(&item, er))?;
                }
                Action::Oscillate {
                    period,
                    count,
                    a,
                    b,
                } => {
                    if *period == 0 {
                        return Err(issue(item, "oscillation period must be positive"));
                    }
                    for x in [a, b] {
                        if !repo.contains(*x) {
                            return Err(issue(&item, format!("demand names missing pattern {x}")));
                        }
                    }
                    for k in 0..*count {
                        let address = if k % 2 == 0 { *a } else { *b };
                        events.push((e.tick + k * period, Action::Demand { address }));
                    }
                    continue;
                }
                _ => {}
            }
            events.push((e.tick, e.action.clone()));
        }
        events.sort_by_key(|e| e.0);

        let r = &self.run;
        for (what, v) in [("start", &r.start), ("goal", &r.goal)] {
            if let Some(v) = v {
                space.checked_point(v.clone()).map_err(|e| issue(what, e))?;
            }
        }
        if r.theta == 0 {
            return Err(issue("run", "dwell tolerance must be at least one tick"));
        }
        if !(r.epsilon > 0.0) || !(r.components > 0.0) {
            return Err(issue("run", "epsilon and component count must be positive"));
        }
        Ok(Built {
            hybrid,
            space,
            plant,
            repo,
            channels,
            events,
            configured,
        })
    }
}

impl Built {
    /// Minimal Ω-unit over this scenario's plant and storage.
    pub fn unit(
        &self,
        field: Option<CostField>,
        step_budget: u32,
    ) -> Result<OmegaUnit, EngineError> {
        let address_bits = self.repo.address_bits();
        let ctl = match field {
            Some(f) => ControllerSpec::planning(address_bits, f, step_budget),
            None => ControllerSpec::relay(address_bits),
        };
        Ok(compose(
            self.repo.clone(),
            ctl,
            self.plant.clone(),
            self.channels.clone(),
        )?)
    }

    pub fn point(&self, values: &[i64]) -> Result<ConfigPoint, EngineError> {
        Ok(self.space.checked_point(values.to_vec())?)
    }
}

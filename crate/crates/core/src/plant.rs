//! Configurable plants: automata over an output configuration space.
//!
//! Each address carries a sub-plant with a constant successor `j_i` and an
//! output function `f_i(input)`. Conditional behaviour only ever comes from
//! outside, as disturbances applied after the autonomous successor.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bits::{self, ceil_log2};
use crate::configspace::{ConfigPoint, ConfigSpace, Dimension, SpaceError};

/// Largest tabulated plant.
pub const MAX_TABULATED: u64 = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("disturbance leaves the configuration space: {0}")]
    DisturbanceRange(String),
    #[error("`{0}` is not a divergence point of this plant")]
    UnknownDivergence(String),
    #[error("divergence `{name}` has no branch {branch}")]
    UnknownBranch { name: String, branch: i64 },
    #[error("plant with {0} addresses exceeds the tabulation cap of {MAX_TABULATED}")]
    Capacity(String),
    #[error("sub-plant {0}: alternate probabilities must be positive and sum to 1")]
    Probabilities(u64),
    #[error("sub-plant {address} names successor {successor} outside the space")]
    BadSuccessor { address: u64, successor: u64 },
    #[error("sub-plant table has {got} entries, space has {expected} addresses")]
    TableSize { expected: u64, got: u64 },
    #[error("{0} must be positive")]
    Domain(&'static str),
    #[error("operation needs a tabulated plant")]
    NotTabulated,
    #[error("host address {0} is outside the outer plant")]
    BadHost(u64),
}

pub type Result<T, E = PlantError> = std::result::Result<T, E>;

/// Output function of one sub-plant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputFn {
    Constant {
        value: i64,
    },
    /// Dense index of the sub-plant's own address.
    Address,
    /// Number of set bits in the address encoding.
    PopCount,
    Affine {
        scale: i64,
        offset: i64,
    },
    /// Lookup by input, clamped to the table ends.
    Table {
        values: Vec<i64>,
    },
}

impl OutputFn {
    pub fn eval(&self, input: i64, index: Option<u64>, code_ones: u32) -> i64 {
        match self {
            OutputFn::Constant { value } => *value,
            OutputFn::Address => index.map_or(-1, |i| i as i64),
            OutputFn::PopCount => code_ones as i64,
            OutputFn::Affine { scale, offset } => {
                scale.saturating_mul(input).saturating_add(*offset)
            }
            OutputFn::Table { values } => {
                if values.is_empty() {
                    0
                } else {
                    values[input.clamp(0, values.len() as i64 - 1) as usize]
                }
            }
        }
    }

    /// Same function with address-dependent forms resolved for `index`.
    fn bind(&self, index: u64, code_ones: u32) -> OutputFn {
        match self {
            OutputFn::Address => OutputFn::Constant {
                value: index as i64,
            },
            OutputFn::PopCount => OutputFn::Constant {
                value: code_ones as i64,
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubPlant {
    pub successor: u64,
    pub output: OutputFn,
    /// `(probability, successor)` pairs replacing `successor` when non-empty.
    pub alternates: Vec<(f64, u64)>,
}

impl SubPlant {
    pub fn new(successor: u64, output: OutputFn) -> Self {
        Self {
            successor,
            output,
            alternates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantTable {
    Tabulated(Vec<SubPlant>),
    /// Every address is a point attractor sharing one output function.
    /// Used for wide configuration spaces that cannot be tabulated.
    Static(OutputFn),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    /// Force the activation to a point.
    Jump { values: Vec<i64> },
    /// Shift the dense address index.
    Offset { delta: i64 },
    /// Flip bits of the canonical encoding.
    FlipBits { positions: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbancePolicy {
    /// Clamp out-of-space results to the nearest valid value per dimension.
    #[default]
    Clamp,
    Strict,
}

/// A point where the successor is chosen by an external parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub name: String,
    pub address: u64,
    pub branches: Vec<u64>,
    pub current: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub output: i64,
    pub index: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    space: ConfigSpace,
    table: PlantTable,
    active: ConfigPoint,
    clock_milli: u64,
    phase: u64,
    corrective_field: BTreeMap<u64, u64>,
    divergences: Vec<Divergence>,
    policy: DisturbancePolicy,
    program: Vec<u64>,
    rng: ChaCha8Rng,
}

impl Plant {
    /// Tabulated plant: `table[i]` is the sub-plant at dense index `i`.
    pub fn tabulated(space: ConfigSpace, table: Vec<SubPlant>) -> Result<Self> {
        let card = space
            .cardinality()
            .filter(|c| *c <= MAX_TABULATED)
            .ok_or_else(|| {
                PlantError::Capacity(
                    space
                        .cardinality()
                        .map_or("> 2^64".into(), |c| c.to_string()),
                )
            })?;
        if table.len() as u64 != card {
            return Err(PlantError::TableSize {
                expected: card,
                got: table.len() as u64,
            });
        }
        for (i, sp) in table.iter().enumerate() {
            let bad = |s: u64| PlantError::BadSuccessor {
                address: i as u64,
                successor: s,
            };
            if sp.successor >= card {
                return Err(bad(sp.successor));
            }
            if !sp.alternates.is_empty() {
                let sum: f64 = sp.alternates.iter().map(|a| a.0).sum();
                if (sum - 1.0).abs() > 1e-9 || sp.alternates.iter().any(|a| !(a.0 > 0.0)) {
                    return Err(PlantError::Probabilities(i as u64));
                }
                if let Some(a) = sp.alternates.iter().find(|a| a.1 >= card) {
                    return Err(bad(a.1));
                }
            }
        }
        let active = space.min_point();
        Ok(Self::build(space, PlantTable::Tabulated(table), active))
    }

    /// Static plant of arbitrary width: every configuration holds still.
    pub fn static_plant(space: ConfigSpace, output: OutputFn) -> Self {
        let active = space.min_point();
        Self::build(space, PlantTable::Static(output), active)
    }

    /// Plant whose successors follow `next(i)` with a constant output per address.
    pub fn from_fn(
        space: ConfigSpace,
        mut next: impl FnMut(u64) -> u64,
        output: OutputFn,
    ) -> Result<Self> {
        let card = space
            .cardinality()
            .filter(|c| *c <= MAX_TABULATED)
            .ok_or_else(|| {
                PlantError::Capacity(
                    space
                        .cardinality()
                        .map_or("> 2^64".into(), |c| c.to_string()),
                )
            })?;
        let table = (0..card)
            .map(|i| SubPlant::new(next(i), output.clone()))
            .collect();
        Self::tabulated(space, table)
    }

    fn build(space: ConfigSpace, table: PlantTable, active: ConfigPoint) -> Self {
        Self {
            space,
            table,
            active,
            clock_milli: 1000,
            phase: 0,
            corrective_field: BTreeMap::new(),
            divergences: Vec::new(),
            policy: DisturbancePolicy::default(),
            program: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn with_policy(mut self, policy: DisturbancePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn table(&self) -> &PlantTable {
        &self.table
    }

    pub fn active(&self) -> &ConfigPoint {
        &self.active
    }

    pub fn active_index(&self) -> Option<u64> {
        self.space.index_of(&self.active).ok()
    }

    pub fn set_active(&mut self, p: ConfigPoint) -> Result<()> {
        self.space.check_same(&p)?;
        self.space.encode(&p)?;
        self.active = p;
        Ok(())
    }

    pub fn set_active_index(&mut self, index: u64) -> Result<()> {
        self.active = self.space.point_at(index)?;
        Ok(())
    }

    pub fn policy(&self) -> DisturbancePolicy {
        self.policy
    }

    pub fn program(&self) -> &[u64] {
        &self.program
    }

    pub fn set_program(&mut self, program: Vec<u64>) {
        self.program = program;
    }

    pub fn corrective_field(&self) -> &BTreeMap<u64, u64> {
        &self.corrective_field
    }

    pub fn divergences(&self) -> &[Divergence] {
        &self.divergences
    }

    pub fn clock_rate(&self) -> f64 {
        self.clock_milli as f64 / 1000.0
    }

    /// Plant steps per engine tick. Stored with 1/1000 resolution.
    pub fn set_clock_rate(&mut self, rate: f64) -> Result<()> {
        let milli = (rate * 1000.0).round();
        if !(milli >= 1.0) || !milli.is_finite() {
            return Err(PlantError::Domain("clock rate"));
        }
        self.clock_milli = milli as u64;
        Ok(())
    }

    /// Advances the phase accumulator by one engine tick and returns how many
    /// plant steps fall into it.
    pub fn due_steps(&mut self) -> u32 {
        self.phase += self.clock_milli;
        let steps = self.phase / 1000;
        self.phase %= 1000;
        steps as u32
    }

    fn sub_plant(&self, index: u64) -> Option<&SubPlant> {
        match &self.table {
            PlantTable::Tabulated(t) => t.get(index as usize),
            PlantTable::Static(_) => None,
        }
    }

    /// Successor of `index` ignoring alternates, after the corrective field.
    pub fn effective_successor(&self, index: u64) -> u64 {
        if let Some(s) = self.corrective_field.get(&index) {
            return *s;
        }
        self.sub_plant(index).map_or(index, |sp| sp.successor)
    }

    /// Output of the active sub-plant for `input`.
    pub fn output(&self, input: i64) -> i64 {
        let index = self.active_index();
        let ones = || {
            self.space
                .encode(&self.active)
                .map_or(0, |b| b.count_ones() as u32)
        };
        match &self.table {
            PlantTable::Static(f) => f.eval(input, index, ones()),
            PlantTable::Tabulated(t) => {
                let f = &t[index.expect("tabulated plants are indexable") as usize].output;
                f.eval(input, index, ones())
            }
        }
    }

    /// One autonomous step followed by the optional disturbance.
    pub fn step(&mut self, input: i64, disturbance: Option<&Disturbance>) -> Result<StepOutcome> {
        let output = self.output(input);
        if let PlantTable::Tabulated(t) = &self.table {
            let idx = self.active_index().expect("tabulated plants are indexable");
            let next = if let Some(s) = self.corrective_field.get(&idx) {
                *s
            } else {
                let sp = &t[idx as usize];
                if sp.alternates.is_empty() {
                    sp.successor
                } else {
                    let x: f64 = self.rng.random();
                    let mut acc = 0.0;
                    let mut pick = sp.alternates.last().expect("non-empty").1;
                    for (p, s) in &sp.alternates {
                        acc += p;
                        if x < acc {
                            pick = *s;
                            break;
                        }
                    }
                    pick
                }
            };
            self.active = self.space.point_at(next)?;
        }
        if let Some(d) = disturbance {
            self.active = self.disturbed(&self.active, d)?;
        }
        Ok(StepOutcome {
            output,
            index: self.active_index(),
        })
    }

    /// Applies a disturbance to `from` under the plant's policy.
    pub fn disturbed(&self, from: &ConfigPoint, d: &Disturbance) -> Result<ConfigPoint> {
        let strict = self.policy == DisturbancePolicy::Strict;
        match d {
            Disturbance::Jump { values } => {
                let mut v = values.clone();
                if v.len() != self.space.dims().len() {
                    return Err(SpaceError::Arity {
                        expected: self.space.dims().len(),
                        got: v.len(),
                    }
                    .into());
                }
                let mut clamped = v.clone();
                self.space.clamp_values(&mut clamped);
                if clamped != v {
                    if strict {
                        return Err(PlantError::DisturbanceRange(format!("jump to {v:?}")));
                    }
                    v = clamped;
                }
                Ok(self.space.point(v)?)
            }
            Disturbance::Offset { delta } => {
                let card = self.space.cardinality().ok_or(PlantError::NotTabulated)?;
                let idx = self.space.index_of(from)? as i128 + *delta as i128;
                if strict && (idx < 0 || idx >= card as i128) {
                    return Err(PlantError::DisturbanceRange(format!("index {idx}")));
                }
                Ok(self.space.point_at(idx.clamp(0, card as i128 - 1) as u64)?)
            }
            Disturbance::FlipBits { positions } => {
                let mut code = self.space.encode(from)?;
                for &p in positions {
                    if p >= code.len() {
                        return Err(PlantError::DisturbanceRange(format!("bit {p}")));
                    }
                    let b = code[p];
                    code.set(p, !b);
                }
                let mut values = Vec::with_capacity(self.space.dims().len());
                for (i, d) in self.space.dims().iter().enumerate() {
                    let raw = bits::read_uint(&code, self.space.bit_offset(i), d.bit_width());
                    if raw >= d.cardinality() {
                        if strict {
                            return Err(PlantError::DisturbanceRange(format!(
                                "dimension `{}` code {raw}",
                                d.name()
                            )));
                        }
                        values.push(d.max_value());
                    } else {
                        values.push(d.value_of(raw)?);
                    }
                }
                Ok(self.space.point(values)?)
            }
        }
    }

    /// Installs a corrective field around `program` reaching `radius` steps.
    ///
    /// Every off-program point whose shortest single-bit-flip distance to the
    /// program is `d <= radius` gets a successor at distance `d - 1`, lowest
    /// index first.
    pub fn install_corrective_field(&mut self, program: &[u64], radius: u32) -> Result<()> {
        let card = self
            .space
            .cardinality()
            .filter(|c| *c <= MAX_TABULATED)
            .ok_or(PlantError::NotTabulated)?;
        let mut dist = vec![u32::MAX; card as usize];
        let mut queue = VecDeque::new();
        for &p in program {
            if p >= card {
                return Err(PlantError::BadSuccessor {
                    address: p,
                    successor: p,
                });
            }
            dist[p as usize] = 0;
            queue.push_back(p);
        }
        let width = self.space.total_width();
        let mut field = BTreeMap::new();
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            if du >= radius {
                continue;
            }
            let code = self.space.encode(&self.space.point_at(u)?)?;
            let mut nbrs: Vec<u64> = (0..width)
                .filter_map(|b| {
                    let mut c = code.clone();
                    let v = c[b];
                    c.set(b, !v);
                    self.space
                        .decode(&c)
                        .ok()
                        .and_then(|p| self.space.index_of(&p).ok())
                })
                .collect();
            nbrs.sort_unstable();
            for v in nbrs {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = du + 1;
                    field.insert(v, u);
                    queue.push_back(v);
                }
            }
        }
        // Re-pick the lowest-index parent on the previous layer.
        for (&v, parent) in field.iter_mut() {
            let d = dist[v as usize];
            let code = self.space.encode(&self.space.point_at(v)?)?;
            for b in (0..width).rev() {
                let mut c = code.clone();
                let x = c[b];
                c.set(b, !x);
                if let Some(i) = self
                    .space
                    .decode(&c)
                    .ok()
                    .and_then(|p| self.space.index_of(&p).ok())
                {
                    if dist[i as usize] == d - 1 && i < *parent {
                        *parent = i;
                    }
                }
            }
        }
        self.corrective_field = field;
        self.program = program.to_vec();
        Ok(())
    }

    pub fn add_divergence(
        &mut self,
        name: impl Into<String>,
        address: u64,
        branches: Vec<u64>,
    ) -> Result<()> {
        let name = name.into();
        let card = self.space.cardinality().ok_or(PlantError::NotTabulated)?;
        if branches.len() < 2 {
            return Err(SpaceError::Cardinality(name).into());
        }
        if let Some(b) = branches.iter().find(|b| **b >= card) {
            return Err(PlantError::BadSuccessor {
                address,
                successor: *b,
            });
        }
        let current = match self.sub_plant(address) {
            Some(sp) => branches
                .iter()
                .position(|b| *b == sp.successor)
                .unwrap_or(0),
            None => return Err(PlantError::NotTabulated),
        };
        if self.divergences.iter().any(|d| d.name == name) {
            return Err(SpaceError::DuplicateDimension(name).into());
        }
        let sel = branches[current];
        self.divergences.push(Divergence {
            name,
            address,
            branches,
            current,
        });
        if let PlantTable::Tabulated(t) = &mut self.table {
            t[address as usize].successor = sel;
        }
        Ok(())
    }

    /// Configuration space spanned by the divergence points.
    pub fn divergence_space(&self) -> ConfigSpace {
        let dims = self
            .divergences
            .iter()
            .map(|d| {
                if d.branches.len() == 2 {
                    Dimension::boolean(d.name.clone())
                } else {
                    Dimension::int_range(d.name.clone(), 0, d.branches.len() as i64 - 1)
                        .expect("at least two branches")
                }
            })
            .collect();
        ConfigSpace::new(dims).expect("divergence names are unique")
    }

    pub fn divergence_settings(&self) -> Vec<i64> {
        self.divergences.iter().map(|d| d.current as i64).collect()
    }

    /// Returns a plant whose divergence successors follow `params`.
    ///
    /// `params` may cover any subset of divergences, addressed by dimension name.
    pub fn remap(&self, params_space: &ConfigSpace, params: &ConfigPoint) -> Result<Plant> {
        params_space.check_same(params)?;
        let mut out = self.clone();
        for (dim, &v) in params_space.dims().iter().zip(params.values()) {
            let div = out
                .divergences
                .iter_mut()
                .find(|d| d.name == dim.name())
                .ok_or_else(|| PlantError::UnknownDivergence(dim.name().to_string()))?;
            if v < 0 || v as usize >= div.branches.len() {
                return Err(PlantError::UnknownBranch {
                    name: div.name.clone(),
                    branch: v,
                });
            }
            div.current = v as usize;
            let (addr, succ) = (div.address, div.branches[v as usize]);
            if let PlantTable::Tabulated(t) = &mut out.table {
                t[addr as usize].successor = succ;
            }
        }
        Ok(out)
    }

    /// Remap by the full settings vector in divergence order.
    pub fn remap_all(&self, settings: &[i64]) -> Result<Plant> {
        let ds = self.divergence_space();
        let p = ds.point(settings.to_vec())?;
        self.remap(&ds, &p)
    }

    /// Stable digest of the successor table including field overrides.
    pub fn table_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        match &self.table {
            PlantTable::Tabulated(t) => {
                for sp in t {
                    bytes.extend(sp.successor.to_le_bytes());
                    for (p, s) in &sp.alternates {
                        bytes.extend(p.to_bits().to_le_bytes());
                        bytes.extend(s.to_le_bytes());
                    }
                    bytes.push(0xff);
                }
            }
            PlantTable::Static(_) => bytes.extend(b"static"),
        }
        for (k, v) in &self.corrective_field {
            bytes.extend(k.to_le_bytes());
            bytes.extend(v.to_le_bytes());
        }
        bits::fnv1a(&bytes)
    }

    /// Size of the most compact configuration selecting this plant's
    /// behaviour: the number of distinct successor tables reachable through
    /// the divergence points, or the full space width for plants whose
    /// configuration is the active point itself.
    pub fn psi_bits(&self) -> u32 {
        if self.divergences.is_empty() {
            return self.space.total_width() as u32;
        }
        let ds = self.divergence_space();
        let mut tables = BTreeSet::new();
        for p in ds.enumerate(u64::MAX).expect("divergence spaces are small") {
            tables.insert(self.remap(&ds, &p).expect("own divergences").table_hash());
        }
        ceil_log2(tables.len() as u64)
    }

    /// Prefix-code length of a divergence assignment: one code per divergence
    /// actually met on the autonomous trajectory from the active point.
    pub fn selection_code_bits(&self, settings: &[i64]) -> Result<u32> {
        let plant = self.remap_all(settings)?;
        let card = plant.space.cardinality().ok_or(PlantError::NotTabulated)?;
        let mut idx = plant.active_index().ok_or(PlantError::NotTabulated)?;
        let by_addr: HashMap<u64, &Divergence> =
            plant.divergences.iter().map(|d| (d.address, d)).collect();
        let mut seen = BTreeSet::new();
        let mut bits_used = 0;
        for _ in 0..=card {
            if !seen.insert(idx) {
                break;
            }
            if let Some(d) = by_addr.get(&idx) {
                bits_used += ceil_log2(d.branches.len() as u64);
            }
            idx = plant.effective_successor(idx);
        }
        Ok(bits_used)
    }

    /// Mean and maximum selection code length, uniformly over assignments.
    pub fn selection_code_stats(&self) -> Result<(f64, u32)> {
        let ds = self.divergence_space();
        let points = ds.enumerate(1 << 16)?;
        let mut total = 0u64;
        let mut max = 0;
        for p in &points {
            let b = self.selection_code_bits(p.values())?;
            total += b as u64;
            max = max.max(b);
        }
        Ok((total as f64 / points.len() as f64, max))
    }

    /// Steps autonomously from `start` until an address repeats. Returns the
    /// tail length and cycle length. Alternates are ignored.
    pub fn find_cycle(&self, start: u64) -> Result<(u64, u64)> {
        let card = self.space.cardinality().ok_or(PlantError::NotTabulated)?;
        let mut first_seen = HashMap::new();
        let mut idx = start;
        for t in 0..=card {
            if let Some(&s) = first_seen.get(&idx) {
                return Ok((s, t - s));
            }
            first_seen.insert(idx, t);
            idx = self.effective_successor(idx);
        }
        unreachable!("a finite deterministic map repeats within |space| + 1 steps")
    }

    /// Normal form: corrective field folded into successors and
    /// address-dependent outputs bound to constants. Idempotent.
    pub fn flatten(&self) -> Result<Plant> {
        let PlantTable::Tabulated(t) = &self.table else {
            return Ok(self.clone());
        };
        let mut table = Vec::with_capacity(t.len());
        for (i, sp) in t.iter().enumerate() {
            let ones = self
                .space
                .encode(&self.space.point_at(i as u64)?)?
                .count_ones() as u32;
            let mut sp2 = SubPlant::new(
                self.effective_successor(i as u64),
                sp.output.bind(i as u64, ones),
            );
            if !self.corrective_field.contains_key(&(i as u64)) {
                sp2.alternates = sp.alternates.clone();
            }
            table.push(sp2);
        }
        let mut out = Plant::tabulated(self.space.clone(), table)?;
        out.active = self.active.clone();
        out.clock_milli = self.clock_milli;
        out.phase = self.phase;
        out.policy = self.policy;
        out.program = self.program.clone();
        out.rng = self.rng.clone();
        Ok(out)
    }

    /// Runs under a fixed disturbance schedule. The successor table is never
    /// touched; any apparent decisions come from the schedule.
    pub fn pseudo_decision_run(
        &mut self,
        schedule: &BTreeMap<u64, Disturbance>,
        ticks: u64,
    ) -> Result<PseudoDecisionTrace> {
        let before = self.table_hash();
        let mut addresses = vec![self.active_index().unwrap_or(0)];
        for t in 0..ticks {
            let out = self.step(0, schedule.get(&t))?;
            addresses.push(out.index.unwrap_or(0));
        }
        let after = self.table_hash();
        Ok(PseudoDecisionTrace {
            addresses,
            table_hash_before: before,
            table_hash_after: after,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoDecisionTrace {
    pub addresses: Vec<u64>,
    pub table_hash_before: u64,
    pub table_hash_after: u64,
}

/// A plant hosting an inner plant at some of its addresses.
///
/// While the outer activation sits on a host address the inner plant produces
/// the output and steps along; elsewhere the inner state is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedPlant {
    pub outer: Plant,
    pub inner: Plant,
    pub hosts: BTreeSet<u64>,
}

impl NestedPlant {
    pub fn new(outer: Plant, inner: Plant, hosts: BTreeSet<u64>) -> Result<Self> {
        let card = outer.space.cardinality().ok_or(PlantError::NotTabulated)?;
        if let Some(h) = hosts.iter().find(|h| **h >= card) {
            return Err(PlantError::BadHost(*h));
        }
        Ok(Self {
            outer,
            inner,
            hosts,
        })
    }

    pub fn step(&mut self, input: i64) -> Result<i64> {
        let host = self
            .hosts
            .contains(&self.outer.active_index().ok_or(PlantError::NotTabulated)?);
        if host {
            let out = self.inner.step(input, None)?.output;
            self.outer.step(input, None)?;
            Ok(out)
        } else {
            Ok(self.outer.step(input, None)?.output)
        }
    }

    /// Flat plant over the product space `(outer dims, inner dims)`.
    pub fn flatten(&self) -> Result<Plant> {
        let outer = self.outer.flatten()?;
        let inner = self.inner.flatten()?;
        let (PlantTable::Tabulated(ot), PlantTable::Tabulated(it)) = (&outer.table, &inner.table)
        else {
            return Err(PlantError::NotTabulated);
        };
        let oc = ot.len() as u64;
        let ic = it.len() as u64;
        let total = oc.checked_mul(ic).filter(|c| *c <= MAX_TABULATED);
        let total = total.ok_or_else(|| PlantError::Capacity(format!("{oc} x {ic}")))?;
        let mut dims: Vec<Dimension> = outer.space.dims().to_vec();
        for d in inner.space.dims() {
            dims.push(Dimension::new(
                format!("inner.{}", d.name()),
                d.kind().clone(),
            )?);
        }
        let space = ConfigSpace::new(dims)?;
        let mut table = Vec::with_capacity(total as usize);
        for a in 0..oc {
            let o = &ot[a as usize];
            let host = self.hosts.contains(&a);
            for b in 0..ic {
                let i = &it[b as usize];
                let sp = if host {
                    let mut sp = SubPlant::new(o.successor * ic + i.successor, i.output.clone());
                    sp.alternates = product_alternates(o, i, ic);
                    sp
                } else {
                    let mut sp = SubPlant::new(o.successor * ic + b, o.output.clone());
                    sp.alternates = o.alternates.iter().map(|(p, s)| (*p, s * ic + b)).collect();
                    sp
                };
                table.push(sp);
            }
        }
        let mut flat = Plant::tabulated(space, table)?;
        let a = outer.active_index().ok_or(PlantError::NotTabulated)?;
        let b = inner.active_index().ok_or(PlantError::NotTabulated)?;
        flat.set_active_index(a * ic + b)?;
        flat.clock_milli = outer.clock_milli;
        Ok(flat)
    }
}

fn product_alternates(o: &SubPlant, i: &SubPlant, ic: u64) -> Vec<(f64, u64)> {
    if o.alternates.is_empty() && i.alternates.is_empty() {
        return Vec::new();
    }
    let single = |sp: &SubPlant| {
        if sp.alternates.is_empty() {
            vec![(1.0, sp.successor)]
        } else {
            sp.alternates.clone()
        }
    };
    let mut out = Vec::new();
    for (po, so) in single(o) {
        for (pi, si) in single(i) {
            out.push((po * pi, so * ic + si));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityParams {
    /// Technological unreliability, per tick.
    pub epsilon: f64,
    /// Implementation bandwidth, bits per tick.
    pub m: f64,
    /// Plant configuration size, bits.
    pub psi: f64,
}

/// `R = m / (epsilon * psi)`.
pub fn reliability(p: &ReliabilityParams) -> Result<f64> {
    if !(p.epsilon > 0.0) {
        return Err(PlantError::Domain("epsilon"));
    }
    if !(p.psi > 0.0) {
        return Err(PlantError::Domain("psi"));
    }
    Ok(p.m / (p.epsilon * p.psi))
}

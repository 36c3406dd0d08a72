//! Configuration spaces, canonical bit encodings and legality structure.
//!
//! A [`ConfigSpace`] is an ordered list of [`Dimension`]s. Every point has a
//! fixed-width canonical encoding: the concatenation of the plain binary code
//! of each dimension in declaration order. Distances between configurations
//! are Hamming distances over that encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::bits::{self, ceil_log2, hamming, Bits};

/// Default cap on exhaustively enumerated points.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("dimension `{name}`: value {value} out of range")]
    Range { name: String, value: String },
    #[error("dimension `{0}`: cardinality must be at least 2")]
    Cardinality(String),
    #[error("duplicate dimension name `{0}`")]
    DuplicateDimension(String),
    #[error("point has {got} values, space has {expected} dimensions")]
    Arity { expected: usize, got: usize },
    #[error("points belong to different configuration spaces")]
    SpaceMismatch,
    #[error("bit string has {got} bits, space is {expected} bits wide")]
    Width { expected: usize, got: usize },
    #[error("code {code} is not a valid value of dimension `{name}`")]
    InvalidCode { name: String, code: u64 },
    #[error("hazard key undefined: no illegal configurations")]
    NoHazard,
    #[error("hazard key undefined: no legal configurations")]
    NoLegal,
    #[error("space with {points} points exceeds the enumeration cap of {cap}; analyse explicit subsets instead")]
    Capacity { points: String, cap: u64 },
    #[error("start or goal configuration is illegal")]
    IllegalEndpoint,
    #[error("graph arc {0} references a node or type outside the declared range")]
    DanglingArc(usize),
    #[error("token at offset {0} is not in the dictionary")]
    UnknownToken(usize),
    #[error("level-1 interpretation requires a dictionary")]
    MissingDictionary,
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
}

pub type Result<T, E = SpaceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimKind {
    Boolean,
    IntRange {
        lo: i64,
        hi: i64,
    },
    /// Values are level indices `0..levels`; level `k` stands for
    /// `lo + k * (hi - lo) / (levels - 1)`.
    QuantizedReal {
        lo: f64,
        hi: f64,
        levels: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dimension {
    name: String,
    kind: DimKind,
    bit_width: u32,
}

impl Dimension {
    pub fn new(name: impl Into<String>, kind: DimKind) -> Result<Self> {
        let name = name.into();
        let card = match &kind {
            DimKind::Boolean => 2u64,
            DimKind::IntRange { lo, hi } => {
                if hi <= lo {
                    return Err(SpaceError::Cardinality(name));
                }
                (*hi as i128 - *lo as i128 + 1).min(1 << 62) as u64
            }
            DimKind::QuantizedReal { lo, hi, levels } => {
                if *levels < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                    return Err(SpaceError::Cardinality(name));
                }
                *levels as u64
            }
        };
        Ok(Self {
            name,
            kind,
            bit_width: ceil_log2(card),
        })
    }

    pub fn boolean(name: impl Into<String>) -> Self {
        Self::new(name, DimKind::Boolean).expect("boolean dimensions are always valid")
    }

    pub fn int_range(name: impl Into<String>, lo: i64, hi: i64) -> Result<Self> {
        Self::new(name, DimKind::IntRange { lo, hi })
    }

    pub fn quantized(name: impl Into<String>, lo: f64, hi: f64, levels: u32) -> Result<Self> {
        Self::new(name, DimKind::QuantizedReal { lo, hi, levels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &DimKind {
        &self.kind
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    pub fn cardinality(&self) -> u64 {
        match self.kind {
            DimKind::Boolean => 2,
            DimKind::IntRange { lo, hi } => (hi as i128 - lo as i128 + 1) as u64,
            DimKind::QuantizedReal { levels, .. } => levels as u64,
        }
    }

    pub fn min_value(&self) -> i64 {
        match self.kind {
            DimKind::IntRange { lo, .. } => lo,
            _ => 0,
        }
    }

    pub fn max_value(&self) -> i64 {
        match self.kind {
            DimKind::Boolean => 1,
            DimKind::IntRange { hi, .. } => hi,
            DimKind::QuantizedReal { levels, .. } => levels as i64 - 1,
        }
    }

    pub fn contains(&self, value: i64) -> bool {
        (self.min_value()..=self.max_value()).contains(&value)
    }

    /// Canonical code of a value (offset from the minimum).
    pub fn code(&self, value: i64) -> Result<u64> {
        if !self.contains(value) {
            return Err(SpaceError::Range {
                name: self.name.clone(),
                value: value.to_string(),
            });
        }
        Ok((value as i128 - self.min_value() as i128) as u64)
    }

    pub fn value_of(&self, code: u64) -> Result<i64> {
        if code >= self.cardinality() {
            return Err(SpaceError::InvalidCode {
                name: self.name.clone(),
                code,
            });
        }
        Ok((self.min_value() as i128 + code as i128) as i64)
    }

    /// Nearest level of a real value. Only meaningful for quantized dimensions;
    /// other kinds round to the nearest integer value.
    pub fn quantize(&self, x: f64) -> Result<i64> {
        let out_of_range = || SpaceError::Range {
            name: self.name.clone(),
            value: x.to_string(),
        };
        if !x.is_finite() {
            return Err(out_of_range());
        }
        match self.kind {
            DimKind::QuantizedReal { lo, hi, levels } => {
                if x < lo || x > hi {
                    return Err(out_of_range());
                }
                let step = (hi - lo) / (levels - 1) as f64;
                Ok((((x - lo) / step).round() as i64).clamp(0, levels as i64 - 1))
            }
            _ => {
                let v = x.round();
                if v < self.min_value() as f64 || v > self.max_value() as f64 {
                    return Err(out_of_range());
                }
                Ok(v as i64)
            }
        }
    }

    pub fn dequantize(&self, value: i64) -> f64 {
        match self.kind {
            DimKind::QuantizedReal { lo, hi, levels } => {
                lo + value as f64 * (hi - lo) / (levels - 1) as f64
            }
            _ => value as f64,
        }
    }

    /// Half the distance between adjacent levels.
    pub fn half_step(&self) -> f64 {
        match self.kind {
            DimKind::QuantizedReal { lo, hi, levels } => (hi - lo) / (levels - 1) as f64 / 2.0,
            _ => 0.5,
        }
    }

    fn signature(&self) -> String {
        format!("{}:{:?}:{}", self.name, self.kind, self.bit_width)
    }
}

/// Per-dimension predicate, combined conjunctively inside a [`LegalityMap`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    InRange { lo: i64, hi: i64 },
    Equals { value: i64 },
    NotEquals { value: i64 },
}

impl Predicate {
    pub fn holds(&self, v: i64) -> bool {
        match *self {
            Predicate::InRange { lo, hi } => (lo..=hi).contains(&v),
            Predicate::Equals { value } => v == value,
            Predicate::NotEquals { value } => v != value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub dim: usize,
    pub predicate: Predicate,
}

/// Splits a space into legal (L) and illegal (N) configurations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LegalityMap {
    pub constraints: Vec<Constraint>,
    pub blacklist: BTreeSet<Vec<i64>>,
    pub whitelist_mode: bool,
    pub whitelist: BTreeSet<Vec<i64>>,
}

impl LegalityMap {
    pub fn all_legal() -> Self {
        Self::default()
    }

    pub fn whitelist<I: IntoIterator<Item = Vec<i64>>>(points: I) -> Self {
        Self {
            whitelist_mode: true,
            whitelist: points.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn require(mut self, dim: usize, predicate: Predicate) -> Self {
        self.constraints.push(Constraint { dim, predicate });
        self
    }

    pub fn forbid(mut self, values: Vec<i64>) -> Self {
        self.blacklist.insert(values);
        self
    }

    /// Number of violated constraints. Zero means legal.
    pub fn violations(&self, values: &[i64]) -> u32 {
        let mut n = self
            .constraints
            .iter()
            .filter(|c| values.get(c.dim).is_none_or(|v| !c.predicate.holds(*v)))
            .count() as u32;
        if self.blacklist.contains(values) {
            n += 1;
        }
        if self.whitelist_mode && !self.whitelist.contains(values) {
            n += 1;
        }
        n
    }

    pub fn is_legal(&self, values: &[i64]) -> bool {
        self.violations(values) == 0
    }

    pub fn is_trivial(&self) -> bool {
        self.constraints.is_empty() && self.blacklist.is_empty() && !self.whitelist_mode
    }
}

/// A point in a configuration space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ConfigPoint {
    #[serde(skip)]
    space_id: u64,
    values: Vec<i64>,
}

impl ConfigPoint {
    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn space_id(&self) -> u64 {
        self.space_id
    }

    pub fn into_values(self) -> Vec<i64> {
        self.values
    }
}

impl fmt::Display for ConfigPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSpace {
    #[serde(skip)]
    id: u64,
    dims: Vec<Dimension>,
    #[serde(skip)]
    offsets: Vec<usize>,
    legality: LegalityMap,
}

impl ConfigSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0usize;
        let mut sig = String::new();
        for d in &dims {
            if !seen.insert(d.name.clone()) {
                return Err(SpaceError::DuplicateDimension(d.name.clone()));
            }
            offsets.push(off);
            off += d.bit_width as usize;
            sig.push_str(&d.signature());
            sig.push('|');
        }
        Ok(Self {
            id: bits::fnv1a(sig.as_bytes()),
            dims,
            offsets,
            legality: LegalityMap::default(),
        })
    }

    /// Space of `n` boolean dimensions named `b0..b{n-1}`.
    pub fn booleans(n: usize) -> Self {
        Self::new(
            (0..n)
                .map(|i| Dimension::boolean(format!("b{i}")))
                .collect(),
        )
        .expect("generated names are unique")
    }

    pub fn with_legality(mut self, legality: LegalityMap) -> Self {
        self.legality = legality;
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn dim_index(&self, name: &str) -> Result<usize> {
        self.dims
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| SpaceError::UnknownDimension(name.to_string()))
    }

    pub fn legality(&self) -> &LegalityMap {
        &self.legality
    }

    pub fn total_width(&self) -> usize {
        self.dims.iter().map(|d| d.bit_width as usize).sum()
    }

    pub fn bit_offset(&self, dim: usize) -> usize {
        self.offsets[dim]
    }

    /// Number of points, or `None` when it overflows `u64`.
    pub fn cardinality(&self) -> Option<u64> {
        self.dims
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(d.cardinality()))
    }

    pub fn is_enumerable(&self, cap: u64) -> bool {
        self.cardinality().is_some_and(|c| c <= cap)
    }

    fn ensure_enumerable(&self, cap: u64) -> Result<u64> {
        match self.cardinality() {
            Some(c) if c <= cap => Ok(c),
            Some(c) => Err(SpaceError::Capacity {
                points: c.to_string(),
                cap,
            }),
            None => Err(SpaceError::Capacity {
                points: "more than 2^64".into(),
                cap,
            }),
        }
    }

    /// Wraps values into a point, checking only the arity.
    pub fn point(&self, values: Vec<i64>) -> Result<ConfigPoint> {
        if values.len() != self.dims.len() {
            return Err(SpaceError::Arity {
                expected: self.dims.len(),
                got: values.len(),
            });
        }
        Ok(ConfigPoint {
            space_id: self.id,
            values,
        })
    }

    /// Like [`ConfigSpace::point`] but also range-checks every value.
    pub fn checked_point(&self, values: Vec<i64>) -> Result<ConfigPoint> {
        let p = self.point(values)?;
        for (d, v) in self.dims.iter().zip(&p.values) {
            d.code(*v)?;
        }
        Ok(p)
    }

    pub fn min_point(&self) -> ConfigPoint {
        ConfigPoint {
            space_id: self.id,
            values: self.dims.iter().map(|d| d.min_value()).collect(),
        }
    }

    pub fn check_same(&self, p: &ConfigPoint) -> Result<()> {
        if p.space_id != self.id || p.values.len() != self.dims.len() {
            return Err(SpaceError::SpaceMismatch);
        }
        Ok(())
    }

    /// Dense mixed-radix index; dimension 0 is the most significant digit.
    pub fn index_of(&self, p: &ConfigPoint) -> Result<u64> {
        self.check_same(p)?;
        let mut idx: u64 = 0;
        for (d, v) in self.dims.iter().zip(&p.values) {
            idx = idx
                .checked_mul(d.cardinality())
                .and_then(|i| i.checked_add(d.code(*v).ok()?))
                .ok_or(SpaceError::Capacity {
                    points: "index overflow".into(),
                    cap: u64::MAX,
                })?;
        }
        Ok(idx)
    }

    pub fn point_at(&self, mut index: u64) -> Result<ConfigPoint> {
        let card = self.ensure_enumerable(u64::MAX)?;
        if index >= card {
            return Err(SpaceError::Range {
                name: "<index>".into(),
                value: index.to_string(),
            });
        }
        let mut values = vec![0i64; self.dims.len()];
        for (i, d) in self.dims.iter().enumerate().rev() {
            let c = d.cardinality();
            values[i] = d.value_of(index % c)?;
            index /= c;
        }
        Ok(ConfigPoint {
            space_id: self.id,
            values,
        })
    }

    /// All points in index order. Fails when the space exceeds `cap` points.
    pub fn enumerate(&self, cap: u64) -> Result<Vec<ConfigPoint>> {
        let card = self.ensure_enumerable(cap)?;
        (0..card).map(|i| self.point_at(i)).collect()
    }

    /// Canonical fixed-width encoding.
    pub fn encode(&self, p: &ConfigPoint) -> Result<Bits> {
        self.check_same(p)?;
        let mut out = Bits::with_capacity(self.total_width());
        for (d, v) in self.dims.iter().zip(&p.values) {
            bits::push_uint(&mut out, d.code(*v)?, d.bit_width);
        }
        Ok(out)
    }

    pub fn decode(&self, b: &Bits) -> Result<ConfigPoint> {
        if b.len() != self.total_width() {
            return Err(SpaceError::Width {
                expected: self.total_width(),
                got: b.len(),
            });
        }
        let values = self
            .dims
            .iter()
            .zip(&self.offsets)
            .map(|(d, off)| d.value_of(bits::read_uint(b, *off, d.bit_width)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConfigPoint {
            space_id: self.id,
            values,
        })
    }

    /// Hamming distance between canonical encodings.
    pub fn bit_distance(&self, a: &ConfigPoint, b: &ConfigPoint) -> Result<u32> {
        if a.space_id != b.space_id {
            return Err(SpaceError::SpaceMismatch);
        }
        Ok(hamming(&self.encode(a)?, &self.encode(b)?))
    }

    pub fn violations(&self, p: &ConfigPoint) -> u32 {
        self.legality.violations(&p.values)
    }

    pub fn is_legal(&self, p: &ConfigPoint) -> bool {
        self.legality.is_legal(&p.values)
    }

    /// Restriction of this space to a subset of dimensions, keeping only the
    /// constraints that mention nothing but those dimensions.
    pub fn project(&self, dims: &[usize]) -> Result<ConfigSpace> {
        let sub = ConfigSpace::new(dims.iter().map(|&i| self.dims[i].clone()).collect())?;
        let mut legality = LegalityMap::default();
        for c in &self.legality.constraints {
            if let Some(pos) = dims.iter().position(|&d| d == c.dim) {
                legality.constraints.push(Constraint {
                    dim: pos,
                    predicate: c.predicate.clone(),
                });
            }
        }
        Ok(sub.with_legality(legality))
    }

    pub fn project_point(&self, p: &ConfigPoint, dims: &[usize], sub: &ConfigSpace) -> ConfigPoint {
        ConfigPoint {
            space_id: sub.id,
            values: dims.iter().map(|&i| p.values[i]).collect(),
        }
    }

    /// Nearest in-range value for every dimension.
    pub fn clamp_values(&self, values: &mut [i64]) {
        for (d, v) in self.dims.iter().zip(values.iter_mut()) {
            *v = (*v).clamp(d.min_value(), d.max_value());
        }
    }
}

/// Safety figures of a behavior: hazard keys, reliability and their product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafetyMetrics {
    pub h_k: u32,
    pub h_kp: u32,
    pub r: f64,
    pub s: f64,
}

impl SafetyMetrics {
    pub fn new(h_k: u32, h_kp: u32, r: f64) -> Self {
        Self {
            h_k,
            h_kp,
            r,
            s: h_kp as f64 * r,
        }
    }
}

/// Minimum pairwise Hamming distance between two code sets.
pub fn min_distance_between(l: &[Bits], n: &[Bits]) -> Option<u32> {
    let mut best: Option<u32> = None;
    for a in l {
        for b in n {
            let d = hamming(a, b);
            if best.is_none_or(|x| d < x) {
                best = Some(d);
                if d == 0 {
                    return best;
                }
            }
        }
    }
    best
}

/// Hazard key: minimum bit distance from the legal set to the illegal set.
///
/// `l_subset` restricts L to the given points (a behavior); N is always the
/// full illegal set of the space, which must be enumerable within `cap`.
pub fn hazard_key(space: &ConfigSpace, l_subset: Option<&[ConfigPoint]>, cap: u64) -> Result<u32> {
    let points = space.enumerate(cap)?;
    let mut legal = Vec::new();
    let mut illegal = Vec::new();
    for p in &points {
        let code = space.encode(p)?;
        if space.is_legal(p) {
            legal.push(code);
        } else {
            illegal.push(code);
        }
    }
    if let Some(subset) = l_subset {
        legal = subset
            .iter()
            .map(|p| space.encode(p))
            .collect::<Result<_>>()?;
    }
    if illegal.is_empty() {
        return Err(SpaceError::NoHazard);
    }
    if legal.is_empty() {
        return Err(SpaceError::NoLegal);
    }
    let width = space.total_width();
    if width <= 24 && (legal.len() as u64) * (illegal.len() as u64) > (1u64 << width) * width as u64
    {
        Ok(hypercube_min_distance(width, &legal, &illegal))
    } else {
        Ok(min_distance_between(&legal, &illegal).expect("both sets are non-empty"))
    }
}

/// Multi-source BFS over the full `width`-bit hypercube from the `sources`.
fn hypercube_min_distance(width: usize, targets: &[Bits], sources: &[Bits]) -> u32 {
    let as_u32 = |b: &Bits| bits::read_uint(b, 0, width as u32) as usize;
    let mut dist = vec![u8::MAX; 1 << width];
    let mut queue = VecDeque::new();
    for s in sources {
        let c = as_u32(s);
        if dist[c] != 0 {
            dist[c] = 0;
            queue.push_back(c);
        }
    }
    while let Some(c) = queue.pop_front() {
        for i in 0..width {
            let nb = c ^ (1 << i);
            if dist[nb] == u8::MAX {
                dist[nb] = dist[c] + 1;
                queue.push_back(nb);
            }
        }
    }
    targets
        .iter()
        .map(|t| dist[as_u32(t)] as u32)
        .min()
        .expect("targets non-empty")
}

/// Index of codes for neighbourhood queries under a Hamming-radius move model.
pub struct HammingGraph {
    codes: Vec<Bits>,
    index: HashMap<Bits, usize>,
    width: usize,
}

impl HammingGraph {
    pub fn new(codes: Vec<Bits>) -> Self {
        let width = codes.first().map_or(0, |c| c.len());
        let index = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Self {
            codes,
            index,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, i: usize) -> &Bits {
        &self.codes[i]
    }

    pub fn find(&self, code: &Bits) -> Option<usize> {
        self.index.get(code).copied()
    }

    /// Nodes other than `i` within `radius` bits, ascending by node index.
    pub fn neighbors(&self, i: usize, radius: u32) -> Vec<usize> {
        let radius = (radius as usize).min(self.width);
        let mut out = Vec::new();
        if ball_size(self.width, radius) < self.codes.len() as u128 {
            let mut code = self.codes[i].clone();
            self.flip_combinations(&mut code, 0, radius, &mut out);
            out.retain(|&j| j != i);
            out.sort_unstable();
            out.dedup();
        } else {
            let c = &self.codes[i];
            out.extend(
                (0..self.codes.len())
                    .filter(|&j| j != i && hamming(c, &self.codes[j]) as usize <= radius),
            );
        }
        out
    }

    fn flip_combinations(&self, code: &mut Bits, from: usize, left: usize, out: &mut Vec<usize>) {
        if let Some(&j) = self.index.get(&*code) {
            out.push(j);
        }
        if left == 0 {
            return;
        }
        for b in from..self.width {
            let v = code[b];
            code.set(b, !v);
            self.flip_combinations(code, b + 1, left - 1, out);
            code.set(b, v);
        }
    }
}

fn ball_size(width: usize, radius: usize) -> u128 {
    let mut total: u128 = 0;
    let mut c: u128 = 1;
    for k in 0..=radius {
        if k > 0 {
            c = c * (width - k + 1) as u128 / k as u128;
        }
        total = total.saturating_add(c);
    }
    total
}

/// Breadth-first search on a [`HammingGraph`]. Returns the node path from
/// `start` to `goal` (inclusive) if one exists.
pub fn bfs_path(
    graph: &HammingGraph,
    start: usize,
    goal: usize,
    radius: u32,
) -> Option<Vec<usize>> {
    if start == goal {
        return Some(vec![start]);
    }
    let mut parent = vec![usize::MAX; graph.len()];
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for v in graph.neighbors(u, radius) {
            if parent[v] == usize::MAX {
                parent[v] = u;
                if v == goal {
                    let mut path = vec![goal];
                    let mut cur = goal;
                    while cur != start {
                        cur = parent[cur];
                        path.push(cur);
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(v);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachabilityReport {
    pub reachable: bool,
    pub path: Vec<ConfigPoint>,
    pub min_budget: u32,
}

/// Searches for a configuration bridge from `start` to `goal` through legal
/// points, moving at most `step_budget` bits per step.
///
/// `min_budget` is the smallest per-step budget for which the goal becomes
/// reachable; with a budget of the full width every legal pair is adjacent,
/// so it is always defined.
pub fn detect_bridges_and_barriers(
    space: &ConfigSpace,
    start: &ConfigPoint,
    goal: &ConfigPoint,
    step_budget: u32,
    node_cap: u64,
) -> Result<ReachabilityReport> {
    space.check_same(start)?;
    space.check_same(goal)?;
    if !space.is_legal(start) || !space.is_legal(goal) {
        return Err(SpaceError::IllegalEndpoint);
    }
    let points: Vec<ConfigPoint> = space
        .enumerate(node_cap)?
        .into_iter()
        .filter(|p| space.is_legal(p))
        .collect();
    let codes = points
        .iter()
        .map(|p| space.encode(p))
        .collect::<Result<Vec<_>>>()?;
    let graph = HammingGraph::new(codes);
    let s = graph
        .find(&space.encode(start)?)
        .expect("legal start is enumerated");
    let g = graph
        .find(&space.encode(goal)?)
        .expect("legal goal is enumerated");

    let path = bfs_path(&graph, s, g, step_budget);
    let min_budget = (0..=space.total_width() as u32)
        .find(|&b| {
            if path.is_some() && b >= step_budget {
                return true;
            }
            bfs_path(&graph, s, g, b).is_some()
        })
        .unwrap_or(space.total_width() as u32);
    Ok(ReachabilityReport {
        reachable: path.is_some(),
        path: path
            .unwrap_or_default()
            .into_iter()
            .map(|i| points[i].clone())
            .collect(),
        min_budget,
    })
}

/// One quantized-real dimension per coefficient, named `c{n}` down to `c0`.
/// Coefficients are given highest power first.
pub fn encode_polynomial(
    coefficients: &[f64],
    lo: f64,
    hi: f64,
    levels: u32,
) -> Result<(ConfigSpace, ConfigPoint)> {
    let n = coefficients.len();
    let dims = (0..n)
        .map(|i| Dimension::quantized(format!("c{}", n - 1 - i), lo, hi, levels))
        .collect::<Result<Vec<_>>>()?;
    let space = ConfigSpace::new(dims)?;
    let values = space
        .dims()
        .iter()
        .zip(coefficients)
        .map(|(d, x)| d.quantize(*x))
        .collect::<Result<Vec<_>>>()?;
    let p = space.point(values)?;
    Ok((space, p))
}

pub fn decode_polynomial(space: &ConfigSpace, p: &ConfigPoint) -> Vec<f64> {
    space
        .dims()
        .iter()
        .zip(p.values())
        .map(|(d, v)| d.dequantize(*v))
        .collect()
}

/// A typed directed arc `(type, from, to)`.
pub type Arc = (usize, usize, usize);

/// Graph configuration: node attributes followed by `types * nodes * nodes`
/// relation bits ordered by `(type, from, to)`.
pub fn encode_graph(
    attributes: &[Vec<i64>],
    attribute_dims: &[Dimension],
    arcs: &[Arc],
    arc_types: usize,
) -> Result<(ConfigSpace, ConfigPoint)> {
    let nodes = attributes.len();
    let mut dims = Vec::new();
    for node in 0..nodes {
        for d in attribute_dims {
            let mut d = d.clone();
            d.name = format!("n{node}.{}", d.name);
            dims.push(d);
        }
    }
    for t in 0..arc_types {
        for from in 0..nodes {
            for to in 0..nodes {
                dims.push(Dimension::boolean(format!("r{t}:{from}->{to}")));
            }
        }
    }
    let mut values = Vec::with_capacity(dims.len());
    for attrs in attributes {
        if attrs.len() != attribute_dims.len() {
            return Err(SpaceError::Arity {
                expected: attribute_dims.len(),
                got: attrs.len(),
            });
        }
        values.extend_from_slice(attrs);
    }
    let rel_start = values.len();
    values.resize(dims.len(), 0);
    for (i, &(t, from, to)) in arcs.iter().enumerate() {
        if t >= arc_types || from >= nodes || to >= nodes {
            return Err(SpaceError::DanglingArc(i));
        }
        values[rel_start + (t * nodes + from) * nodes + to] = 1;
    }
    let space = ConfigSpace::new(dims)?;
    let p = space.checked_point(values)?;
    Ok((space, p))
}

/// Inverse of [`encode_graph`]: attributes per node and the sorted arc list.
pub fn decode_graph(
    p: &ConfigPoint,
    nodes: usize,
    attributes_per_node: usize,
    arc_types: usize,
) -> (Vec<Vec<i64>>, Vec<Arc>) {
    let v = p.values();
    let attrs = (0..nodes)
        .map(|n| v[n * attributes_per_node..(n + 1) * attributes_per_node].to_vec())
        .collect();
    let rel_start = nodes * attributes_per_node;
    let mut arcs = Vec::new();
    for t in 0..arc_types {
        for from in 0..nodes {
            for to in 0..nodes {
                if v[rel_start + (t * nodes + from) * nodes + to] == 1 {
                    arcs.push((t, from, to));
                }
            }
        }
    }
    (attrs, arcs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StringLevel {
    /// One dimension per non-whitespace character.
    Characters,
    /// One dimension per dictionary token occurrence.
    Tokens,
}

/// Dictionary entry: token text and the label used as its dimension name.
pub type Token<'a> = (&'a str, &'a str);

/// Encodes a configuration string at the chosen interpretation level.
///
/// Whitespace is stripped before dimensioning, both from the input and from
/// dictionary tokens. Tokens are matched greedily, longest first.
pub fn encode_string(
    s: &str,
    level: StringLevel,
    dictionary: Option<&[Token<'_>]>,
) -> Result<(ConfigSpace, ConfigPoint)> {
    let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
    match level {
        StringLevel::Characters => {
            let dims = (0..chars.len())
                .map(|i| Dimension::int_range(format!("ch{i}"), 0, char::MAX as i64))
                .collect::<Result<Vec<_>>>()?;
            let space = ConfigSpace::new(dims)?;
            let p = space.point(chars.iter().map(|c| *c as i64).collect())?;
            Ok((space, p))
        }
        StringLevel::Tokens => {
            let dict = dictionary.ok_or(SpaceError::MissingDictionary)?;
            let tokens: Vec<Vec<char>> = dict
                .iter()
                .map(|(t, _)| t.chars().filter(|c| !c.is_whitespace()).collect())
                .collect();
            let hi = (dict.len() as i64 - 1).max(1);
            let mut pos = 0;
            let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
            let mut dims = Vec::new();
            let mut values = Vec::new();
            while pos < chars.len() {
                let best = tokens
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| !t.is_empty() && chars[pos..].starts_with(t))
                    .max_by_key(|(i, t)| (t.len(), std::cmp::Reverse(*i)));
                let (idx, tok) = best.ok_or(SpaceError::UnknownToken(pos))?;
                let label = dict[idx].1;
                let seen = labels.entry(label).or_insert(0);
                *seen += 1;
                let name = if *seen == 1 {
                    label.to_string()
                } else {
                    format!("{label}#{seen}")
                };
                dims.push(Dimension::int_range(name, 0, hi)?);
                values.push(idx as i64);
                pos += tok.len();
            }
            let space = ConfigSpace::new(dims)?;
            let p = space.point(values)?;
            Ok((space, p))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RedundancyReport {
    /// Groups of input point indices sharing one output, size > 1 only.
    pub groups: Vec<Vec<u64>>,
    pub redundant_fraction: f64,
    pub inputs: u64,
    pub distinct_outputs: u64,
}

/// Groups input configurations by the output configuration they produce.
pub fn io_mapping_redundancy<K, F>(
    input: &ConfigSpace,
    cap: u64,
    mut mapping: F,
) -> Result<RedundancyReport>
where
    K: Ord,
    F: FnMut(&ConfigPoint) -> K,
{
    let points = input.enumerate(cap)?;
    let mut by_output: BTreeMap<K, Vec<u64>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        by_output.entry(mapping(p)).or_default().push(i as u64);
    }
    let inputs = points.len() as u64;
    let distinct = by_output.len() as u64;
    let mut groups: Vec<Vec<u64>> = by_output.into_values().filter(|g| g.len() > 1).collect();
    groups.sort_by_key(|g| g[0]);
    Ok(RedundancyReport {
        groups,
        redundant_fraction: if inputs == 0 {
            0.0
        } else {
            (inputs - distinct) as f64 / inputs as f64
        },
        inputs,
        distinct_outputs: distinct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bools(n: usize) -> ConfigSpace {
        ConfigSpace::booleans(n)
    }

    #[test]
    fn encode_zero_and_binary() {
        let s = bools(3);
        let p = s.point(vec![0, 0, 0]).unwrap();
        assert_eq!(bits::to_string(&s.encode(&p).unwrap()), "000");
        let s = ConfigSpace::new(vec![Dimension::int_range("x", 0, 7).unwrap()]).unwrap();
        assert_eq!(
            bits::to_string(&s.encode(&s.point(vec![5]).unwrap()).unwrap()),
            "101"
        );
    }

    #[test]
    fn out_of_range_names_dimension() {
        let s = ConfigSpace::new(vec![Dimension::int_range("speed", 2, 5).unwrap()]).unwrap();
        let err = s.encode(&s.point(vec![9]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
    }

    #[test]
    fn cardinality_and_width() {
        let d = Dimension::int_range("x", -3, 3).unwrap();
        assert_eq!(d.cardinality(), 7);
        assert_eq!(d.bit_width(), 3);
        assert!(Dimension::int_range("x", 1, 1).is_err());
        assert!(Dimension::quantized("q", 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn bit_distance_basics() {
        let s = bools(3);
        let a = s.point(vec![0, 0, 0]).unwrap();
        let b = s.point(vec![1, 1, 1]).unwrap();
        assert_eq!(s.bit_distance(&a, &a).unwrap(), 0);
        assert_eq!(s.bit_distance(&a, &b).unwrap(), 3);
        let other = bools(4);
        let c = other.point(vec![0, 0, 0, 0]).unwrap();
        assert_eq!(s.bit_distance(&a, &c), Err(SpaceError::SpaceMismatch));
    }

    #[test]
    fn hazard_key_single_pair_and_adjacent() {
        let s =
            bools(3).with_legality(LegalityMap::whitelist([vec![0, 0, 0]]).forbid(vec![0, 0, 0]));
        // whitelist {000} but also blacklisted: no legal point at all
        assert_eq!(
            hazard_key(&s, None, DEFAULT_ENUMERATION_CAP),
            Err(SpaceError::NoLegal)
        );

        let s = bools(3);
        let l = [s.point(vec![0, 0, 0]).unwrap()];
        let s = s.with_legality(
            LegalityMap::whitelist([vec![0, 0, 0], vec![1, 1, 0]]).forbid(vec![1, 1, 0]),
        );
        // N = everything but 000; nearest is one bit away
        assert_eq!(hazard_key(&s, Some(&l), DEFAULT_ENUMERATION_CAP), Ok(1));

        let l = [bits::parse_binary("000").unwrap()];
        let n = [bits::parse_binary("111").unwrap()];
        assert_eq!(min_distance_between(&l, &n), Some(3));
    }

    #[test]
    fn hazard_key_no_hazard_is_distinct() {
        let s = bools(2);
        assert_eq!(
            hazard_key(&s, None, DEFAULT_ENUMERATION_CAP),
            Err(SpaceError::NoHazard)
        );
    }

    #[test]
    fn bridge_identity_and_unconstrained_jump() {
        let s = bools(4);
        let a = s.point(vec![0, 0, 0, 0]).unwrap();
        let b = s.point(vec![1, 1, 1, 1]).unwrap();
        let r = detect_bridges_and_barriers(&s, &a, &a, 1, 1 << 10).unwrap();
        assert!(r.reachable);
        assert_eq!(r.path.len(), 1);
        assert_eq!(r.min_budget, 0);
        let r = detect_bridges_and_barriers(&s, &a, &b, 4, 1 << 10).unwrap();
        assert_eq!(r.path.len(), 2);
        assert_eq!(r.min_budget, 1);
    }

    #[test]
    fn bridge_rejects_illegal_endpoints_and_oversized_spaces() {
        let s = bools(3).with_legality(LegalityMap::default().forbid(vec![1, 1, 1]));
        let a = s.point(vec![0, 0, 0]).unwrap();
        let b = s.point(vec![1, 1, 1]).unwrap();
        assert_eq!(
            detect_bridges_and_barriers(&s, &a, &b, 3, 64),
            Err(SpaceError::IllegalEndpoint)
        );
        let big = bools(12);
        let z = big.min_point();
        assert!(matches!(
            detect_bridges_and_barriers(&big, &z, &z, 1, 1 << 10),
            Err(SpaceError::Capacity { .. })
        ));
    }

    #[test]
    fn polynomial_boundaries() {
        let (s, p) = encode_polynomial(&[0.0, 0.0, 0.0], 0.0, 1.0, 4).unwrap();
        assert!(s.encode(&p).unwrap().not_any());
        assert_eq!(s.dims()[0].name(), "c2");
        let (s, p) = encode_polynomial(&[1.0], 0.0, 1.0, 2).unwrap();
        assert_eq!(p.values(), &[1]);
        assert_eq!(s.dims()[0].max_value(), 1);
        assert!(matches!(
            encode_polynomial(&[1.5], 0.0, 1.0, 2),
            Err(SpaceError::Range { .. })
        ));
    }

    #[test]
    fn graph_single_arc() {
        let (s, p) = encode_graph(&[vec![], vec![]], &[], &[(0, 0, 1)], 1).unwrap();
        assert_eq!(s.total_width(), 4);
        assert_eq!(bits::to_string(&s.encode(&p).unwrap()), "0100");
        let (_, p) = encode_graph(&[vec![], vec![]], &[], &[], 1).unwrap();
        assert!(p.values().iter().all(|v| *v == 0));
        assert_eq!(
            encode_graph(&[vec![]], &[], &[(0, 0, 3)], 1).unwrap_err(),
            SpaceError::DanglingArc(0)
        );
    }

    #[test]
    fn string_levels() {
        let text = "a a b c b b a c c";
        let (s, _) = encode_string(text, StringLevel::Characters, None).unwrap();
        assert_eq!(s.dims().len(), 9);
        let dict = [("a a b", "phi"), ("c b b", "psi"), ("a c c", "rho")];
        let (s, p) = encode_string(text, StringLevel::Tokens, Some(&dict)).unwrap();
        let names: Vec<&str> = s.dims().iter().map(|d| d.name()).collect();
        assert_eq!(names, ["phi", "psi", "rho"]);
        assert_eq!(p.values(), &[0, 1, 2]);
        let (s, _) = encode_string("", StringLevel::Characters, None).unwrap();
        assert_eq!(s.total_width(), 0);
        assert_eq!(
            encode_string("a a x", StringLevel::Tokens, Some(&dict)).unwrap_err(),
            SpaceError::UnknownToken(0)
        );
    }

    #[test]
    fn redundancy_identity_and_constant() {
        let s = bools(3);
        let r = io_mapping_redundancy(&s, 64, |p| p.values().to_vec()).unwrap();
        assert!(r.groups.is_empty());
        assert_eq!(r.redundant_fraction, 0.0);
        let r = io_mapping_redundancy(&s, 64, |_| 0u8).unwrap();
        assert_eq!(r.groups, vec![(0..8).collect::<Vec<u64>>()]);
        assert_eq!(r.redundant_fraction, 7.0 / 8.0);
        assert!(matches!(
            io_mapping_redundancy(&bools(8), 16, |_| 0u8),
            Err(SpaceError::Capacity { .. })
        ));
    }

    #[test]
    fn index_round_trip() {
        let s = ConfigSpace::new(vec![
            Dimension::int_range("a", -1, 1).unwrap(),
            Dimension::boolean("b"),
            Dimension::quantized("c", 0.0, 1.0, 5).unwrap(),
        ])
        .unwrap();
        for (i, p) in s.enumerate(1000).unwrap().iter().enumerate() {
            assert_eq!(s.index_of(p).unwrap(), i as u64);
            assert_eq!(s.decode(&s.encode(p).unwrap()).unwrap(), *p);
        }
    }
}

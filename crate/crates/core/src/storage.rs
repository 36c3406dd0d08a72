//! Pattern repository: addressed configuration patterns, relative
//! addressing over co-access clusters, deltas, compression and fragment
//! assembly.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::bits::{self, ceil_log2, Bits};

/// Fixed header of every compressed pattern.
pub const HEADER_BITS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StorageError {
    #[error("no pattern at address {0}")]
    NotFound(u64),
    #[error("address {0} already holds a pattern")]
    DuplicateAddress(u64),
    #[error("bit strings differ in length ({0} vs {1})")]
    Shape(usize, usize),
    #[error("repairable compression needs a coverage mask")]
    MissingMask,
    #[error("overlapping fragments at bit ranges {0:?}")]
    Conflict(Vec<(usize, usize)>),
    #[error("fragment at address {address} does not fit into {len} bits at offset {offset}")]
    OutOfBounds {
        address: u64,
        offset: usize,
        len: usize,
    },
    #[error("corrupt compressed stream: {0}")]
    Codec(&'static str),
    #[error("unknown assembly rule `{0}`")]
    UnknownRule(String),
    #[error("repository is empty")]
    Empty,
}

pub type Result<T, E = StorageError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Full,
    Fragment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoredPattern {
    pub address: u64,
    #[serde(serialize_with = "ser_bits")]
    pub bits: Bits,
    pub cluster: Option<usize>,
    pub kind: PatternKind,
}

fn ser_bits<S: serde::Serializer>(b: &Bits, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&bits::to_hex(b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FragmentPlacement {
    pub address: u64,
    pub offset: usize,
}

/// Recipe composing a full pattern out of stored fragments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssemblyRule {
    pub name: String,
    pub length: usize,
    pub parts: Vec<FragmentPlacement>,
    pub default: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Repository {
    patterns: BTreeMap<u64, StoredPattern>,
    /// Cluster members in rank order.
    clusters: Vec<Vec<u64>>,
    rules: Vec<AssemblyRule>,
    triggers: Vec<(Bits, u64)>,
    recovery: Option<u64>,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, address: u64, bits: Bits, kind: PatternKind) -> Result<()> {
        if self.patterns.contains_key(&address) {
            return Err(StorageError::DuplicateAddress(address));
        }
        self.patterns.insert(
            address,
            StoredPattern {
                address,
                bits,
                cluster: None,
                kind,
            },
        );
        Ok(())
    }

    /// Overwrites the content at an existing address, keeping its cluster and kind.
    pub fn replace(&mut self, address: u64, bits: Bits) -> Result<()> {
        let p = self
            .patterns
            .get_mut(&address)
            .ok_or(StorageError::NotFound(address))?;
        p.bits = bits;
        Ok(())
    }

    pub fn with_pattern(mut self, address: u64, bits: Bits) -> Result<Self> {
        self.insert(address, bits, PatternKind::Full)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = u64> + '_ {
        self.patterns.keys().copied()
    }

    pub fn patterns(&self) -> impl Iterator<Item = &StoredPattern> {
        self.patterns.values()
    }

    pub fn contains(&self, address: u64) -> bool {
        self.patterns.contains_key(&address)
    }

    /// Bits needed to select any stored pattern.
    pub fn address_bits(&self) -> u32 {
        ceil_log2(self.patterns.len() as u64)
    }

    /// Pattern plus its selection cost in bits.
    pub fn retrieve(&self, address: u64) -> Result<(&StoredPattern, u32)> {
        let p = self
            .patterns
            .get(&address)
            .ok_or(StorageError::NotFound(address))?;
        Ok((p, self.address_bits()))
    }

    pub fn get(&self, address: u64) -> Result<&Bits> {
        Ok(&self.retrieve(address)?.0.bits)
    }

    pub fn clusters(&self) -> &[Vec<u64>] {
        &self.clusters
    }

    pub fn rules(&self) -> &[AssemblyRule] {
        &self.rules
    }

    pub fn rule(&self, name: &str) -> Result<&AssemblyRule> {
        self.rules
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| StorageError::UnknownRule(name.into()))
    }

    pub fn add_rule(&mut self, rule: AssemblyRule) -> Result<()> {
        if let Some(p) = rule.parts.iter().find(|p| !self.contains(p.address)) {
            return Err(StorageError::NotFound(p.address));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn triggers(&self) -> &[(Bits, u64)] {
        &self.triggers
    }

    pub fn add_trigger(&mut self, signature: Bits, address: u64) -> Result<()> {
        if !self.contains(address) {
            return Err(StorageError::NotFound(address));
        }
        self.triggers.retain(|(s, _)| *s != signature);
        self.triggers.push((signature, address));
        Ok(())
    }

    /// Stores `bits` at the next free address and binds it to `signature`.
    pub fn remember(&mut self, signature: Bits, bits: Bits) -> u64 {
        let address = self.patterns.keys().next_back().map_or(0, |a| a + 1);
        self.patterns.insert(
            address,
            StoredPattern {
                address,
                bits,
                cluster: None,
                kind: PatternKind::Full,
            },
        );
        self.triggers.retain(|(s, _)| *s != signature);
        self.triggers.push((signature, address));
        address
    }

    pub fn recovery(&self) -> Option<u64> {
        self.recovery
    }

    pub fn set_recovery(&mut self, address: u64) -> Result<()> {
        if !self.contains(address) {
            return Err(StorageError::NotFound(address));
        }
        self.recovery = Some(address);
        Ok(())
    }

    /// Installs clusters; each must be given in rank order.
    pub fn set_clusters(&mut self, clusters: Vec<Vec<u64>>) -> Result<()> {
        for p in self.patterns.values_mut() {
            p.cluster = None;
        }
        for (ci, c) in clusters.iter().enumerate() {
            for a in c {
                self.patterns
                    .get_mut(a)
                    .ok_or(StorageError::NotFound(*a))?
                    .cluster = Some(ci);
            }
        }
        self.clusters = clusters;
        Ok(())
    }

    fn rank(&self, address: u64) -> Option<(usize, usize)> {
        let c = self.patterns.get(&address)?.cluster?;
        Some((c, self.clusters[c].iter().position(|a| *a == address)?))
    }

    /// Bits to name `to` given `from`: a flag bit plus either the rank
    /// distance inside a shared cluster or the absolute address.
    pub fn relative_address(&self, from: u64, to: u64) -> Result<u32> {
        self.retrieve(from)?;
        self.retrieve(to)?;
        match (self.rank(from), self.rank(to)) {
            (Some((ca, ra)), Some((cb, rb))) if ca == cb => {
                Ok(1 + ceil_log2(1 + ra.abs_diff(rb) as u64))
            }
            _ => Ok(1 + self.address_bits()),
        }
    }

    /// Mean relative cost over consecutive log pairs.
    pub fn mean_relative_cost(&self, log: &[(u64, u64)]) -> Result<f64> {
        if log.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0u64;
        for (a, b) in log {
            total += self.relative_address(*a, *b)? as u64;
        }
        Ok(total as f64 / log.len() as f64)
    }

    /// Regroups patterns by co-access. Greedy agglomeration by modularity
    /// gain, ties to the lowest addresses. The previous grouping is kept when
    /// the new one would raise the mean relative cost over `log`.
    pub fn recluster(&self, log: &[(u64, u64)]) -> Result<Repository> {
        if log.is_empty() {
            return Ok(self.clone());
        }
        for (a, b) in log {
            self.retrieve(*a)?;
            self.retrieve(*b)?;
        }
        let groups = modularity_clusters(&self.addresses().collect::<Vec<_>>(), log);
        let mut freq: BTreeMap<u64, u64> = BTreeMap::new();
        for (a, b) in log {
            *freq.entry(*a).or_default() += 1;
            *freq.entry(*b).or_default() += 1;
        }
        let ranked: Vec<Vec<u64>> = groups
            .into_iter()
            .filter(|g| g.len() > 1)
            .map(|mut g| {
                g.sort_by_key(|a| (std::cmp::Reverse(freq.get(a).copied().unwrap_or(0)), *a));
                g
            })
            .collect();
        let mut next = self.clone();
        next.set_clusters(ranked)?;
        if next.mean_relative_cost(log)? > self.mean_relative_cost(log)? {
            return Ok(self.clone());
        }
        Ok(next)
    }

    /// Composes a pattern from fragments according to `rule`.
    pub fn assemble(&self, rule: &AssemblyRule) -> Result<Bits> {
        let mut spans = Vec::with_capacity(rule.parts.len());
        for part in &rule.parts {
            let frag = self.get(part.address)?;
            let end = part.offset + frag.len();
            if end > rule.length {
                return Err(StorageError::OutOfBounds {
                    address: part.address,
                    offset: part.offset,
                    len: rule.length,
                });
            }
            spans.push((part.offset, end, frag));
        }
        let mut order: Vec<usize> = (0..spans.len()).collect();
        order.sort_by_key(|i| (spans[*i].0, spans[*i].1));
        let mut conflicts = Vec::new();
        for w in order.windows(2) {
            let (a, b) = (&spans[w[0]], &spans[w[1]]);
            if b.0 < a.1 {
                conflicts.push((a.0, a.1));
                conflicts.push((b.0, b.1));
            }
        }
        if !conflicts.is_empty() {
            conflicts.dedup();
            return Err(StorageError::Conflict(conflicts));
        }
        let mut out = Bits::repeat(rule.default, rule.length);
        for (start, end, frag) in spans {
            out[start..end].copy_from_bitslice(frag);
        }
        Ok(out)
    }
}

/// Greedy modularity agglomeration. Returns groups (singletons included),
/// each sorted by address, ordered by their lowest address.
pub fn modularity_clusters(addresses: &[u64], log: &[(u64, u64)]) -> Vec<Vec<u64>> {
    let index: BTreeMap<u64, usize> = addresses.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let n = addresses.len();
    let mut w = vec![vec![0f64; n]; n];
    for (a, b) in log {
        let (i, j) = (index[a], index[b]);
        w[i][j] += 1.0;
        if i != j {
            w[j][i] += 1.0;
        }
    }
    let total: f64 = log.len() as f64;
    let mut groups: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    let degree = |g: &BTreeSet<usize>| -> f64 {
        g.iter().map(|&i| w[i].iter().sum::<f64>() + w[i][i]).sum()
    };
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for x in 0..groups.len() {
            for y in x + 1..groups.len() {
                let e: f64 = groups[x]
                    .iter()
                    .flat_map(|&i| groups[y].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| w[i][j])
                    .sum();
                if e == 0.0 {
                    continue;
                }
                let gain =
                    e / total - degree(&groups[x]) * degree(&groups[y]) / (2.0 * total * total);
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                    best = Some((gain, x, y));
                }
            }
        }
        let Some((_, x, y)) = best else { break };
        let moved = groups.remove(y);
        groups[x].extend(moved);
    }
    let mut out: Vec<Vec<u64>> = groups
        .into_iter()
        .map(|g| g.into_iter().map(|i| addresses[i]).collect())
        .collect();
    out.sort_by_key(|g| g[0]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub base_address: Option<u64>,
    pub len: usize,
    pub positions: Vec<usize>,
    #[serde(serialize_with = "ser_bits")]
    pub values: Bits,
}

impl Delta {
    /// Each entry carries a position plus the new bit value.
    pub fn payload_bits(&self) -> u64 {
        self.positions.len() as u64 * (ceil_log2(self.len as u64) as u64 + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn apply(&self, base: &Bits) -> Result<Bits> {
        if base.len() != self.len {
            return Err(StorageError::Shape(base.len(), self.len));
        }
        let mut out = base.clone();
        for (p, v) in self.positions.iter().zip(self.values.iter()) {
            out.set(*p, *v);
        }
        Ok(out)
    }
}

pub fn delta_encode(old: &Bits, new: &Bits) -> Result<Delta> {
    if old.len() != new.len() {
        return Err(StorageError::Shape(old.len(), new.len()));
    }
    let mut diff = old.clone();
    diff ^= new.as_bitslice();
    let positions: Vec<usize> = diff.iter_ones().collect();
    let values = positions.iter().map(|p| new[*p]).collect();
    Ok(Delta {
        base_address: None,
        len: old.len(),
        positions,
        values,
    })
}

/// Pluggable lossless codec.
pub trait Codec {
    fn compress(&self, bits: &Bits) -> Bits;
    fn decompress(&self, packed: &Bits) -> Result<Bits>;
}

/// Run-length coding of maximal bit runs with Elias-gamma lengths. Falls
/// back to a raw copy whenever that is shorter.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunLengthCodec;

fn push_gamma(out: &mut Bits, n: u64) {
    let width = 64 - n.leading_zeros();
    for _ in 1..width {
        out.push(false);
    }
    bits::push_uint(out, n, width);
}

fn read_gamma(b: &Bits, pos: &mut usize) -> Result<u64> {
    let mut zeros = 0;
    while *pos < b.len() && !b[*pos] {
        zeros += 1;
        *pos += 1;
    }
    if zeros > 63 || *pos + zeros as usize + 1 > b.len() {
        return Err(StorageError::Codec("truncated run length"));
    }
    let v = bits::read_uint(b, *pos, zeros + 1);
    *pos += zeros as usize + 1;
    Ok(v)
}

impl Codec for RunLengthCodec {
    fn compress(&self, input: &Bits) -> Bits {
        let mut rle = Bits::repeat(false, HEADER_BITS);
        if let Some(first) = input.first() {
            rle.set(1, *first);
        }
        let mut i = 0;
        while i < input.len() {
            let v = input[i];
            let run = input[i..].iter().take_while(|b| **b == v).count();
            push_gamma(&mut rle, run as u64);
            i += run;
        }
        if rle.len() <= input.len() + HEADER_BITS {
            return rle;
        }
        let mut raw = Bits::repeat(false, HEADER_BITS);
        raw.set(0, true);
        raw.extend_from_bitslice(input);
        raw
    }

    fn decompress(&self, packed: &Bits) -> Result<Bits> {
        if packed.len() < HEADER_BITS {
            return Err(StorageError::Codec("missing header"));
        }
        if packed[0] {
            return Ok(packed[HEADER_BITS..].to_bitvec());
        }
        let mut v = packed[1];
        let mut pos = HEADER_BITS;
        let mut out = Bits::new();
        while pos < packed.len() {
            let run = read_gamma(packed, &mut pos)?;
            out.extend(std::iter::repeat_n(v, run as usize));
            v = !v;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressMode {
    Lossless,
    /// Drop bits the plant's corrective field restores on its own.
    Repairable,
}

/// Compresses a pattern. `mask` marks covered bits and is required in
/// repairable mode; it is shared by both ends and never transmitted.
pub fn compress(pattern: &Bits, mode: CompressMode, mask: Option<&Bits>) -> Result<Bits> {
    match mode {
        CompressMode::Lossless => Ok(RunLengthCodec.compress(pattern)),
        CompressMode::Repairable => {
            let mask = mask.ok_or(StorageError::MissingMask)?;
            if mask.len() != pattern.len() {
                return Err(StorageError::Shape(pattern.len(), mask.len()));
            }
            let mut out = Bits::repeat(false, HEADER_BITS);
            out.set(0, true);
            out.set(2, true);
            out.extend(
                pattern
                    .iter()
                    .zip(mask.iter())
                    .filter(|(_, m)| !**m)
                    .map(|(b, _)| *b),
            );
            Ok(out)
        }
    }
}

pub fn decompress(
    packed: &Bits,
    mode: CompressMode,
    mask: Option<&Bits>,
    default: bool,
) -> Result<Bits> {
    match mode {
        CompressMode::Lossless => RunLengthCodec.decompress(packed),
        CompressMode::Repairable => {
            let mask = mask.ok_or(StorageError::MissingMask)?;
            if packed.len() < HEADER_BITS {
                return Err(StorageError::Codec("missing header"));
            }
            let kept = mask.count_zeros();
            if packed.len() - HEADER_BITS != kept {
                return Err(StorageError::Codec("payload does not match mask"));
            }
            let mut src = packed[HEADER_BITS..].iter();
            Ok(mask
                .iter()
                .map(|m| {
                    if *m {
                        default
                    } else {
                        *src.next().expect("counted")
                    }
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(s: &str) -> Bits {
        bits::parse_binary(s).unwrap()
    }

    fn repo(n: u64) -> Repository {
        let mut r = Repository::new();
        for a in 0..n {
            r.insert(a, b("0101"), PatternKind::Full).unwrap();
        }
        r
    }

    #[test]
    fn address_costs() {
        assert_eq!(repo(1024).retrieve(7).unwrap().1, 10);
        assert_eq!(repo(1).retrieve(0).unwrap().1, 0);
        assert_eq!(repo(3).retrieve(9).unwrap_err(), StorageError::NotFound(9));
    }

    #[test]
    fn relative_costs() {
        let mut r = repo(16);
        r.set_clusters(vec![vec![3, 5, 7, 9]]).unwrap();
        assert_eq!(r.relative_address(5, 5).unwrap(), 1);
        assert_eq!(r.relative_address(5, 7).unwrap(), 2);
        assert_eq!(r.relative_address(3, 9).unwrap(), 3);
        assert_eq!(r.relative_address(3, 4).unwrap(), 5);
    }

    #[test]
    fn delta_cases() {
        let a = b("1010");
        assert!(delta_encode(&a, &a).unwrap().is_empty());
        let mut x = Bits::repeat(false, 2048);
        let mut y = x.clone();
        y.set(1000, true);
        let d = delta_encode(&x, &y).unwrap();
        assert_eq!(d.positions, [1000]);
        assert_eq!(d.payload_bits(), 12);
        assert_eq!(d.apply(&x).unwrap(), y);
        x.push(true);
        assert_eq!(
            delta_encode(&x, &y).unwrap_err(),
            StorageError::Shape(2049, 2048)
        );
    }

    #[test]
    fn run_length_sizes() {
        let zeros = Bits::repeat(false, 2048);
        let c = RunLengthCodec.compress(&zeros);
        // header + gamma(2048): 11 zeros and 12 value bits
        assert_eq!(c.len(), HEADER_BITS + 23);
        assert_eq!(RunLengthCodec.decompress(&c).unwrap(), zeros);
        let alt: Bits = (0..100).map(|i| i % 2 == 0).collect();
        let c = RunLengthCodec.compress(&alt);
        assert_eq!(c.len(), 100 + HEADER_BITS);
        assert_eq!(RunLengthCodec.decompress(&c).unwrap(), alt);
        let empty = Bits::new();
        assert_eq!(
            RunLengthCodec
                .decompress(&RunLengthCodec.compress(&empty))
                .unwrap(),
            empty
        );
    }

    #[test]
    fn repairable_drops_covered_bits() {
        let p = b("11001010");
        let mask = b("00001001");
        assert_eq!(
            compress(&p, CompressMode::Repairable, None),
            Err(StorageError::MissingMask)
        );
        let c = compress(&p, CompressMode::Repairable, Some(&mask)).unwrap();
        assert_eq!(c.len(), HEADER_BITS + 8 - 2);
        let d = decompress(&c, CompressMode::Repairable, Some(&mask), false).unwrap();
        assert_eq!(d, b("11000010"));
    }

    #[test]
    fn assembly() {
        let mut r = Repository::new();
        r.insert(0, b("11"), PatternKind::Fragment).unwrap();
        r.insert(1, b("01"), PatternKind::Fragment).unwrap();
        r.insert(2, b("1101"), PatternKind::Full).unwrap();
        let whole = AssemblyRule {
            name: "w".into(),
            length: 4,
            parts: vec![FragmentPlacement {
                address: 2,
                offset: 0,
            }],
            default: false,
        };
        assert_eq!(r.assemble(&whole).unwrap(), b("1101"));
        let split = AssemblyRule {
            name: "s".into(),
            length: 4,
            parts: vec![
                FragmentPlacement {
                    address: 1,
                    offset: 2,
                },
                FragmentPlacement {
                    address: 0,
                    offset: 0,
                },
            ],
            default: false,
        };
        assert_eq!(r.assemble(&split).unwrap(), b("1101"));
        let overlap = AssemblyRule {
            name: "o".into(),
            length: 4,
            parts: vec![
                FragmentPlacement {
                    address: 0,
                    offset: 0,
                },
                FragmentPlacement {
                    address: 1,
                    offset: 1,
                },
            ],
            default: false,
        };
        assert_eq!(
            r.assemble(&overlap).unwrap_err(),
            StorageError::Conflict(vec![(0, 2), (1, 3)])
        );
        let missing = AssemblyRule {
            name: "m".into(),
            length: 4,
            parts: vec![FragmentPlacement {
                address: 9,
                offset: 0,
            }],
            default: true,
        };
        assert_eq!(r.assemble(&missing).unwrap_err(), StorageError::NotFound(9));
        assert_eq!(r.add_rule(missing).unwrap_err(), StorageError::NotFound(9));
    }

    #[test]
    fn recluster_pair_and_noop() {
        let r = repo(6);
        let log = vec![(2, 4); 5];
        let c = r.recluster(&log).unwrap();
        assert_eq!(c.clusters(), &[vec![2, 4]]);
        assert_eq!(r.recluster(&[]).unwrap(), r);
    }
}

//! Ω-units: storage, controller and plant layers bound by channels, their
//! signatures, decompositions and nested flattening. Equivalence of two
//! architectures is checked by running both on the same probe and comparing
//! virtual-time traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bits::{self, Bits};
use crate::channels::{transfer_time, Channel, ChannelSet};
use crate::configspace::{ConfigPoint, ConfigSpace, SpaceError, DEFAULT_ENUMERATION_CAP};
use crate::controller::{plan_deterministic, ControllerError, CostField};
use crate::plant::{NestedPlant, OutputFn, Plant, PlantError, PlantTable, SubPlant};
use crate::storage::{Repository, StorageError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OmegaError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("storage may not be coupled to a plant without a controller in between")]
    Forbidden,
    #[error("incompatible layers: {0}")]
    Compatibility(String),
    #[error("{operation} is not permissible: {reason}")]
    Impermissible {
        operation: &'static str,
        reason: String,
    },
    #[error("cannot consolidate: {0}")]
    CannotConsolidate(String),
}

pub type Result<T, E = OmegaError> = std::result::Result<T, E>;

fn impermissible(operation: &'static str, reason: impl Into<String>) -> OmegaError {
    OmegaError::Impermissible {
        operation,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Layer {
    Phi,
    Theta,
    Psi,
}

/// Layer groups in order, each with its fragment count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Signature {
    pub organization: Vec<(Layer, usize)>,
}

impl Signature {
    pub fn new(organization: Vec<(Layer, usize)>) -> Result<Self> {
        for w in organization.windows(2) {
            let pair = (w[0].0, w[1].0);
            if matches!(pair, (Layer::Phi, Layer::Psi) | (Layer::Psi, Layer::Phi)) {
                return Err(OmegaError::Forbidden);
            }
        }
        Ok(Self { organization })
    }

    /// Total (storage, controller, plant) counts.
    pub fn layer_counts(&self) -> (usize, usize, usize) {
        let count = |l: Layer| {
            self.organization
                .iter()
                .filter(|g| g.0 == l)
                .map(|g| g.1)
                .sum()
        };
        (count(Layer::Phi), count(Layer::Theta), count(Layer::Psi))
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Ω_")?;
        for (_, n) in &self.organization {
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Capabilities {
    pub select: bool,
    pub monitor: bool,
    pub implement: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapabilityClass {
    Configurable,
    SelfImplementing,
    SelfMonitoringImplementing,
    Self3Configurable,
}

impl Capabilities {
    pub const FULL: Capabilities = Capabilities {
        select: true,
        monitor: true,
        implement: true,
    };

    pub fn class(&self) -> CapabilityClass {
        match (self.select, self.monitor, self.implement) {
            (true, true, true) => CapabilityClass::Self3Configurable,
            (_, true, true) => CapabilityClass::SelfMonitoringImplementing,
            (_, _, true) => CapabilityClass::SelfImplementing,
            _ => CapabilityClass::Configurable,
        }
    }
}

/// A controller instance. `dims` restricts it to part of the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub address_bits: u32,
    pub field: Option<CostField>,
    pub step_budget: u32,
    pub dims: Option<Vec<usize>>,
    pub replica: bool,
}

impl ControllerSpec {
    /// Passes retrieved patterns through without planning.
    pub fn relay(address_bits: u32) -> Self {
        Self {
            address_bits,
            field: None,
            step_budget: 1,
            dims: None,
            replica: false,
        }
    }

    pub fn planning(address_bits: u32, field: CostField, step_budget: u32) -> Self {
        Self {
            address_bits,
            field: Some(field),
            step_budget,
            dims: None,
            replica: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageSlot {
    pub repo: Repository,
    /// Joint dimensions its patterns configure; `None` means all.
    pub dims: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantFragment {
    pub plant: Plant,
    /// Joint dimensions this fragment realises, in its own order.
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaUnit {
    pub joint_space: ConfigSpace,
    pub storages: Vec<StorageSlot>,
    pub controllers: Vec<ControllerSpec>,
    pub plants: Vec<PlantFragment>,
    pub channels: ChannelSet,
    pub signature: Signature,
    pub capabilities: Capabilities,
}

/// Builds the minimal unit after checking that the layers fit together.
pub fn compose(
    storage: Repository,
    controller: ControllerSpec,
    plant: Plant,
    channels: ChannelSet,
) -> Result<OmegaUnit> {
    if controller.address_bits != storage.address_bits() {
        return Err(OmegaError::Compatibility(format!(
            "controller addresses {} bits, storage needs {}",
            controller.address_bits,
            storage.address_bits()
        )));
    }
    if let Some(f) = &controller.field {
        if f.space.id() != plant.space().id() {
            return Err(OmegaError::Compatibility(
                "controller plans over a different space than the plant".into(),
            ));
        }
    }
    let width = plant.space().total_width();
    if let Some(p) = storage.patterns().find(|p| p.bits.len() != width) {
        return Err(OmegaError::Compatibility(format!(
            "pattern {} has {} bits, plant configuration has {width}",
            p.address,
            p.bits.len()
        )));
    }
    let dims = (0..plant.space().dims().len()).collect();
    Ok(OmegaUnit {
        joint_space: plant.space().clone(),
        storages: vec![StorageSlot {
            repo: storage,
            dims: None,
        }],
        controllers: vec![controller],
        plants: vec![PlantFragment { plant, dims }],
        channels,
        signature: Signature::new(vec![(Layer::Phi, 1), (Layer::Theta, 1), (Layer::Psi, 1)])?,
        capabilities: Capabilities::FULL,
    })
}

/// Composition straight from storage to plant.
pub fn compose_direct(_storage: Repository, _plant: Plant) -> Result<OmegaUnit> {
    Err(OmegaError::Forbidden)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Pattern { address: u64 },
    Plan,
}

/// Fixed excitation used to compare architectures.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Probe {
    pub ticks: u64,
    /// Plant inputs, cycled.
    pub inputs: Vec<i64>,
    pub requests: BTreeMap<u64, Request>,
    /// Joint-space jumps applied after the plant step.
    pub disturbances: BTreeMap<u64, Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub vtick: u64,
    pub output: i64,
    pub joint: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransferTiming {
    pub vtick: u64,
    pub r: u64,
    pub n: u64,
    pub m: u64,
    /// Ticks the plant is frozen: pipelined n/m transfer.
    pub transfer: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitTrace {
    pub records: Vec<TraceRecord>,
    pub transfers: Vec<TransferTiming>,
}

impl UnitTrace {
    pub fn digest(&self) -> u64 {
        bits::fnv1a(
            serde_json::to_string(&self.records)
                .expect("plain data")
                .as_bytes(),
        )
    }
}

fn project(values: &[i64], dims: &[usize]) -> Vec<i64> {
    dims.iter().map(|&d| values[d]).collect()
}

impl OmegaUnit {
    pub fn capability_class(&self) -> CapabilityClass {
        self.capabilities.class()
    }

    fn joint_values(&self, plants: &[PlantFragment]) -> Vec<i64> {
        let mut v = vec![0; self.joint_space.dims().len()];
        for f in plants {
            for (i, &d) in f.dims.iter().enumerate() {
                v[d] = f.plant.active().values()[i];
            }
        }
        v
    }

    fn write_joint(
        plants: &mut [PlantFragment],
        joint: &[i64],
        touched: Option<&[usize]>,
    ) -> Result<()> {
        for f in plants.iter_mut() {
            if let Some(t) = touched {
                if !f.dims.iter().any(|d| t.contains(d)) {
                    continue;
                }
            }
            let p = f.plant.space().point(project(joint, &f.dims))?;
            f.plant.set_active(p)?;
        }
        Ok(())
    }

    fn slot_space(&self, slot: &StorageSlot) -> Result<ConfigSpace> {
        match &slot.dims {
            None => Ok(self.joint_space.clone()),
            Some(d) => Ok(self.joint_space.project(d)?),
        }
    }

    /// Pipelined transfer of `dims` worth of pattern: every plant fragment
    /// touched has its own n and m link, so the slowest slice dominates.
    fn transfer_ticks(&self, dims: &[usize]) -> (u64, u64) {
        let mut n = 0;
        let mut m = 0;
        for f in &self.plants {
            let width: u64 = f
                .dims
                .iter()
                .filter(|d| dims.contains(d))
                .map(|&d| self.joint_space.dims()[d].bit_width() as u64)
                .sum();
            n = n.max(transfer_time(width, self.channels.rate(Channel::N)));
            m = m.max(transfer_time(width, self.channels.rate(Channel::M)));
        }
        (n, m)
    }

    fn apply_request(
        &self,
        plants: &mut [PlantFragment],
        req: &Request,
        vtick: u64,
    ) -> Result<TransferTiming> {
        let all: Vec<usize> = (0..self.joint_space.dims().len()).collect();
        let mut joint = self.joint_values(plants);
        match req {
            Request::Pattern { address } => {
                let mut found = false;
                let mut r = 0;
                let mut touched = BTreeSet::new();
                for slot in &self.storages {
                    if !slot.repo.contains(*address) {
                        continue;
                    }
                    found = true;
                    let (pat, addr_bits) = slot.repo.retrieve(*address)?;
                    r = r.max(transfer_time(
                        addr_bits as u64,
                        self.channels.rate(Channel::R),
                    ));
                    let space = self.slot_space(slot)?;
                    let p = space.decode(&pat.bits)?;
                    let dims = slot.dims.clone().unwrap_or_else(|| all.clone());
                    for (i, &d) in dims.iter().enumerate() {
                        joint[d] = p.values()[i];
                        touched.insert(d);
                    }
                }
                if !found {
                    return Err(StorageError::NotFound(*address).into());
                }
                let touched: Vec<usize> = touched.into_iter().collect();
                Self::write_joint(plants, &joint, Some(&touched))?;
                let (n, m) = self.transfer_ticks(&touched);
                Ok(TransferTiming {
                    vtick,
                    r,
                    n,
                    m,
                    transfer: n.max(m),
                })
            }
            Request::Plan => {
                let mut touched = BTreeSet::new();
                for c in self.controllers.iter().filter(|c| !c.replica) {
                    let Some(field) = &c.field else { continue };
                    let dims = c.dims.clone().unwrap_or_else(|| all.clone());
                    let start = field.space.point(project(&joint, &dims))?;
                    let plan = plan_deterministic(
                        &start,
                        field,
                        c.step_budget,
                        4 * field.space.total_width() + 4,
                    )?;
                    let last = plan.path.last().expect("plans start at the start point");
                    for (i, &d) in dims.iter().enumerate() {
                        if joint[d] != last.values()[i] {
                            touched.insert(d);
                        }
                        joint[d] = last.values()[i];
                    }
                }
                let touched: Vec<usize> = touched.into_iter().collect();
                Self::write_joint(plants, &joint, Some(&touched))?;
                let (n, m) = self.transfer_ticks(&touched);
                Ok(TransferTiming {
                    vtick,
                    r: 0,
                    n,
                    m,
                    transfer: n.max(m),
                })
            }
        }
    }

    /// Runs the probe. Records are in virtual time: transfers freeze the
    /// plant, so they show up only in the timing list.
    pub fn simulate(&self, probe: &Probe) -> Result<UnitTrace> {
        let mut plants = self.plants.clone();
        let mut records = Vec::with_capacity(probe.ticks as usize);
        let mut transfers = Vec::new();
        for t in 0..probe.ticks {
            if let Some(req) = probe.requests.get(&t) {
                transfers.push(self.apply_request(&mut plants, req, t)?);
            }
            let input = if probe.inputs.is_empty() {
                0
            } else {
                probe.inputs[t as usize % probe.inputs.len()]
            };
            let mut output = 0i64;
            for f in plants.iter_mut() {
                output = output.wrapping_add(f.plant.step(input, None)?.output);
            }
            if let Some(jump) = probe.disturbances.get(&t) {
                let mut j = jump.clone();
                self.joint_space.clamp_values(&mut j);
                Self::write_joint(&mut plants, &j, None)?;
            }
            records.push(TraceRecord {
                vtick: t,
                output,
                joint: self.joint_values(&plants),
            });
        }
        Ok(UnitTrace { records, transfers })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub operation: String,
    pub permissible: bool,
    pub reason: String,
    pub trace_equal: Option<bool>,
}

impl DecompositionReport {
    fn accepted(operation: &str, reason: impl Into<String>) -> Self {
        Self {
            operation: operation.into(),
            permissible: true,
            reason: reason.into(),
            trace_equal: None,
        }
    }
}

fn check_partition(n: usize, parts: &[Vec<usize>], op: &'static str) -> Result<()> {
    let mut seen = vec![false; n];
    for p in parts {
        for &d in p {
            if d >= n {
                return Err(impermissible(op, format!("dimension {d} does not exist")));
            }
            if seen[d] {
                return Err(impermissible(op, format!("dimension {d} assigned twice")));
            }
            seen[d] = true;
        }
    }
    let missing: Vec<usize> = (0..n).filter(|d| !seen[*d]).collect();
    if !missing.is_empty() {
        return Err(impermissible(
            op,
            format!("dimensions {missing:?} unassigned"),
        ));
    }
    Ok(())
}

fn with_group(sig: &Signature, layer: Layer, count: usize) -> Result<Signature> {
    let org = sig
        .organization
        .iter()
        .map(|&(l, n)| if l == layer { (l, count) } else { (l, n) })
        .collect();
    Signature::new(org)
}

/// Splits the single storage. Every address must survive in some part;
/// duplicates are allowed.
pub fn dec_s(unit: &OmegaUnit, parts: &[Vec<u64>]) -> Result<(OmegaUnit, DecompositionReport)> {
    const OP: &str = "dec_s";
    let [slot] = unit.storages.as_slice() else {
        return Err(impermissible(OP, "unit must have exactly one storage"));
    };
    let covered: BTreeSet<u64> = parts.iter().flatten().copied().collect();
    let lost: Vec<u64> = slot
        .repo
        .addresses()
        .filter(|a| !covered.contains(a))
        .collect();
    if !lost.is_empty() {
        return Err(impermissible(
            OP,
            format!("addresses {lost:?} would be lost"),
        ));
    }
    let mut storages = Vec::with_capacity(parts.len());
    for part in parts {
        let mut repo = Repository::new();
        for &a in part {
            let (p, _) = slot.repo.retrieve(a)?;
            repo.insert(a, p.bits.clone(), p.kind)?;
        }
        for (sig, a) in slot.repo.triggers() {
            if repo.contains(*a) {
                repo.add_trigger(sig.clone(), *a)?;
            }
        }
        if let Some(r) = slot.repo.recovery().filter(|r| repo.contains(*r)) {
            repo.set_recovery(r)?;
        }
        storages.push(StorageSlot {
            repo,
            dims: slot.dims.clone(),
        });
    }
    let mut out = unit.clone();
    out.storages = storages;
    out.signature = with_group(&unit.signature, Layer::Phi, parts.len())?;
    Ok((
        out,
        DecompositionReport::accepted(OP, "every address remains retrievable"),
    ))
}

/// Splits every joint pattern into per-fragment slices so that each storage
/// feeds exactly one plant fragment.
pub fn slice_storage(unit: &OmegaUnit) -> Result<OmegaUnit> {
    const OP: &str = "slice_storage";
    let [slot] = unit.storages.as_slice() else {
        return Err(impermissible(OP, "unit must have exactly one storage"));
    };
    if slot.dims.is_some() {
        return Err(impermissible(OP, "storage is already sliced"));
    }
    let mut storages = Vec::new();
    for f in &unit.plants {
        let sub = unit.joint_space.project(&f.dims)?;
        let mut repo = Repository::new();
        for p in slot.repo.patterns() {
            let joint = unit.joint_space.decode(&p.bits)?;
            let sp = sub.point(project(joint.values(), &f.dims))?;
            repo.insert(p.address, sub.encode(&sp)?, p.kind)?;
        }
        storages.push(StorageSlot {
            repo,
            dims: Some(f.dims.clone()),
        });
    }
    let mut out = unit.clone();
    out.storages = storages;
    out.signature = with_group(&unit.signature, Layer::Phi, unit.plants.len())?;
    Ok(out)
}

fn part_field(field: &CostField, dims: &[usize]) -> Result<CostField> {
    let space = field.space.project(dims)?;
    let goal = space.point(project(field.goal.values(), dims))?;
    let mut f = CostField::new(space, goal);
    f.attractor_weight = field.attractor_weight;
    f.penalty_floor = field.penalty_floor;
    f.radius_weight = field.radius_weight;
    Ok(f)
}

/// Splits the planning controller over a partition of output dimensions.
/// Identical parts are classified as replication instead.
pub fn dec_c(unit: &OmegaUnit, parts: &[Vec<usize>]) -> Result<(OmegaUnit, DecompositionReport)> {
    const OP: &str = "dec_c";
    let [ctl] = unit.controllers.as_slice() else {
        return Err(impermissible(OP, "unit must have exactly one controller"));
    };
    let field = ctl
        .field
        .as_ref()
        .ok_or_else(|| impermissible(OP, "controller has no cost field to split"))?;
    let n = field.space.dims().len();
    let all: Vec<usize> = (0..n).collect();
    if parts.len() > 1
        && parts.iter().all(|p| {
            let mut s = p.clone();
            s.sort_unstable();
            s == all
        })
    {
        let mut out = unit.clone();
        out.controllers = (0..parts.len())
            .map(|i| ControllerSpec {
                replica: i > 0,
                ..ctl.clone()
            })
            .collect();
        out.signature = with_group(&unit.signature, Layer::Theta, parts.len())?;
        let report = DecompositionReport {
            operation: "replicate".into(),
            permissible: true,
            reason: "identical controller copies are replication, not decomposition".into(),
            trace_equal: None,
        };
        return Ok((out, report));
    }
    check_partition(n, parts, OP)?;
    let fields = parts
        .iter()
        .map(|p| part_field(field, p))
        .collect::<Result<Vec<_>>>()?;
    let cap = 4 * field.space.total_width() + 4;
    for start in field.space.enumerate(DEFAULT_ENUMERATION_CAP)? {
        if !field.space.is_legal(&start) {
            continue;
        }
        let joint = plan_deterministic(&start, field, ctl.step_budget, cap)?;
        let mut combined = start.values().to_vec();
        for (p, f) in parts.iter().zip(&fields) {
            let s = f.space.point(project(start.values(), p))?;
            let plan = match plan_deterministic(&s, f, ctl.step_budget, cap) {
                Ok(plan) => plan,
                Err(ControllerError::IllegalStart) => continue,
                Err(e) => return Err(e.into()),
            };
            for (i, &d) in p.iter().enumerate() {
                combined[d] = plan.path.last().expect("non-empty").values()[i];
            }
        }
        if joint.path.last().expect("non-empty").values() != combined.as_slice() {
            return Err(impermissible(
                OP,
                format!(
                    "from {start} the joint controller settles at {} but the parts settle at {:?}",
                    joint.path.last().expect("non-empty"),
                    combined
                ),
            ));
        }
    }
    let mut out = unit.clone();
    out.controllers = parts
        .iter()
        .zip(fields)
        .map(|(p, f)| ControllerSpec {
            field: Some(f),
            dims: Some(p.clone()),
            ..ctl.clone()
        })
        .collect();
    out.signature = with_group(&unit.signature, Layer::Theta, parts.len())?;
    Ok((
        out,
        DecompositionReport::accepted(OP, "parts reach the joint targets from every legal start"),
    ))
}

/// Splits the plant into fragments over a dimension partition. Successors
/// must factorise and outputs must add up.
pub fn dec_p(unit: &OmegaUnit, parts: &[Vec<usize>]) -> Result<(OmegaUnit, DecompositionReport)> {
    const OP: &str = "dec_p";
    let [frag] = unit.plants.as_slice() else {
        return Err(impermissible(OP, "unit must have exactly one plant"));
    };
    let plant = &frag.plant;
    let space = plant.space();
    check_partition(space.dims().len(), parts, OP)?;
    let mut fragments = Vec::with_capacity(parts.len());
    match plant.table() {
        PlantTable::Static(f) => {
            if !matches!(f, OutputFn::PopCount | OutputFn::Constant { value: 0 }) {
                return Err(impermissible(
                    OP,
                    "plant output is not additive over fragments",
                ));
            }
            for p in parts {
                let sub = space.project(p)?;
                let mut fp = Plant::static_plant(sub.clone(), f.clone());
                fp.set_active(sub.point(project(plant.active().values(), p))?)?;
                fp.set_clock_rate(plant.clock_rate())?;
                fragments.push(PlantFragment {
                    plant: fp,
                    dims: p.iter().map(|&d| frag.dims[d]).collect(),
                });
            }
        }
        PlantTable::Tabulated(table) => {
            if table
                .iter()
                .any(|sp| !matches!(sp.output, OutputFn::PopCount))
            {
                return Err(impermissible(
                    OP,
                    "plant output is not additive over fragments",
                ));
            }
            if table.iter().any(|sp| !sp.alternates.is_empty()) {
                return Err(impermissible(
                    OP,
                    "probabilistic successors cannot be split",
                ));
            }
            let points = space.enumerate(DEFAULT_ENUMERATION_CAP)?;
            for p in parts {
                let sub = space.project(p)?;
                let mut succ: BTreeMap<Vec<i64>, (Vec<i64>, u64)> = BTreeMap::new();
                let mut offending = BTreeSet::new();
                for (i, x) in points.iter().enumerate() {
                    let y = space.point_at(plant.effective_successor(i as u64))?;
                    let (kx, ky) = (project(x.values(), p), project(y.values(), p));
                    match succ.get(&kx) {
                        Some((prev, at)) if *prev != ky => {
                            offending.insert(*at);
                            offending.insert(i as u64);
                        }
                        Some(_) => {}
                        None => {
                            succ.insert(kx, (ky, i as u64));
                        }
                    }
                }
                if !offending.is_empty() {
                    return Err(impermissible(
                        OP,
                        format!(
                            "successors cross the cut at addresses {:?}",
                            offending.into_iter().collect::<Vec<_>>()
                        ),
                    ));
                }
                let table = sub
                    .enumerate(DEFAULT_ENUMERATION_CAP)?
                    .iter()
                    .map(|sp| {
                        let next = sub.point(succ[sp.values()].0.clone())?;
                        Ok(SubPlant::new(sub.index_of(&next)?, OutputFn::PopCount))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut fp = Plant::tabulated(sub.clone(), table)?;
                fp.set_active(sub.point(project(plant.active().values(), p))?)?;
                fp.set_clock_rate(plant.clock_rate())?;
                fragments.push(PlantFragment {
                    plant: fp,
                    dims: p.iter().map(|&d| frag.dims[d]).collect(),
                });
            }
        }
    }
    let mut out = unit.clone();
    out.plants = fragments;
    out.signature = with_group(&unit.signature, Layer::Psi, parts.len())?;
    Ok((
        out,
        DecompositionReport::accepted(OP, "successors factorise and outputs add up"),
    ))
}

/// Splits a fully decomposed unit into independent units, one per plant
/// fragment.
pub fn dec_i(unit: &OmegaUnit) -> Result<Vec<OmegaUnit>> {
    const OP: &str = "dec_i";
    if unit.plants.len() < 2 {
        return Err(impermissible(OP, "plant is not fragmented"));
    }
    let owner = |dims: &[usize]| -> Option<usize> {
        unit.plants
            .iter()
            .position(|f| dims.iter().all(|d| f.dims.contains(d)))
    };
    let mut storages: Vec<Vec<StorageSlot>> = vec![Vec::new(); unit.plants.len()];
    for (i, s) in unit.storages.iter().enumerate() {
        let k = s.dims.as_deref().and_then(owner).ok_or_else(|| {
            impermissible(
                OP,
                format!("storage {i} feeds more than one plant fragment"),
            )
        })?;
        storages[k].push(s.clone());
    }
    let mut controllers: Vec<Vec<ControllerSpec>> = vec![Vec::new(); unit.plants.len()];
    for (i, c) in unit.controllers.iter().enumerate() {
        match (&c.field, &c.dims) {
            (None, _) => controllers.iter_mut().for_each(|v| v.push(c.clone())),
            (Some(_), Some(d)) => {
                let k = owner(d).ok_or_else(|| {
                    impermissible(OP, format!("controller {i} spans plant fragments"))
                })?;
                controllers[k].push(c.clone());
            }
            (Some(_), None) => {
                return Err(impermissible(
                    OP,
                    format!("controller {i} plans over the joint space"),
                ))
            }
        }
    }
    let mut units = Vec::with_capacity(unit.plants.len());
    for (k, f) in unit.plants.iter().enumerate() {
        let local = |dims: &[usize]| -> Vec<usize> {
            dims.iter()
                .map(|d| f.dims.iter().position(|x| x == d).expect("owned"))
                .collect()
        };
        let slots: Vec<StorageSlot> = storages[k]
            .iter()
            .map(|s| {
                let d = local(s.dims.as_deref().expect("owned"));
                let full = d.len() == f.dims.len() && d.iter().enumerate().all(|(i, x)| i == *x);
                StorageSlot {
                    repo: s.repo.clone(),
                    dims: if full { None } else { Some(d) },
                }
            })
            .collect();
        let ctls: Vec<ControllerSpec> = controllers[k]
            .iter()
            .map(|c| ControllerSpec {
                dims: c.dims.as_deref().map(local),
                ..c.clone()
            })
            .collect();
        let sig = Signature::new(vec![
            (Layer::Phi, slots.len().max(1)),
            (Layer::Theta, ctls.len().max(1)),
            (Layer::Psi, 1),
        ])?;
        units.push(OmegaUnit {
            joint_space: f.plant.space().clone(),
            storages: slots,
            controllers: ctls,
            plants: vec![PlantFragment {
                plant: f.plant.clone(),
                dims: (0..f.dims.len()).collect(),
            }],
            channels: unit.channels.clone(),
            signature: sig,
            capabilities: unit.capabilities,
        });
    }
    Ok(units)
}

/// Runs disjoint units side by side and merges their traces into the joint
/// layout given by `dims[k]` for unit `k`.
pub fn simulate_parallel(
    units: &[OmegaUnit],
    dims: &[Vec<usize>],
    joint_width: usize,
    probe: &Probe,
) -> Result<UnitTrace> {
    let traces = units
        .par_iter()
        .zip(dims.par_iter())
        .map(|(u, d)| {
            let mut p = probe.clone();
            p.disturbances = probe
                .disturbances
                .iter()
                .map(|(t, v)| (*t, project(v, d)))
                .collect();
            p.requests.retain(|_, r| match r {
                Request::Pattern { address } => {
                    u.storages.iter().any(|s| s.repo.contains(*address))
                }
                Request::Plan => true,
            });
            u.simulate(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(probe.ticks as usize);
    for t in 0..probe.ticks as usize {
        let mut joint = vec![0; joint_width];
        let mut output = 0i64;
        for (tr, d) in traces.iter().zip(dims) {
            let r = &tr.records[t];
            output = output.wrapping_add(r.output);
            for (i, &j) in d.iter().enumerate() {
                joint[j] = r.joint[i];
            }
        }
        records.push(TraceRecord {
            vtick: t as u64,
            output,
            joint,
        });
    }
    let transfers = traces.into_iter().flat_map(|t| t.transfers).collect();
    Ok(UnitTrace { records, transfers })
}

/// Rejoins units produced by [`dec_i`]; `dims[k]` places unit `k` in the
/// joint space.
pub fn join(
    units: &[OmegaUnit],
    joint_space: ConfigSpace,
    dims: &[Vec<usize>],
) -> Result<OmegaUnit> {
    let first = units
        .first()
        .ok_or_else(|| OmegaError::Compatibility("nothing to join".into()))?;
    let mut storages = Vec::new();
    let mut controllers: Vec<ControllerSpec> = Vec::new();
    let mut plants = Vec::new();
    for (u, d) in units.iter().zip(dims) {
        let global = |local: &[usize]| -> Vec<usize> { local.iter().map(|&i| d[i]).collect() };
        for s in &u.storages {
            let sd = s.dims.as_deref().map_or_else(|| d.clone(), global);
            storages.push(StorageSlot {
                repo: s.repo.clone(),
                dims: Some(sd),
            });
        }
        for c in &u.controllers {
            if c.field.is_none() {
                if !controllers.contains(c) {
                    controllers.push(c.clone());
                }
            } else {
                controllers.push(ControllerSpec {
                    dims: Some(c.dims.as_deref().map_or_else(|| d.clone(), global)),
                    ..c.clone()
                });
            }
        }
        for f in &u.plants {
            plants.push(PlantFragment {
                plant: f.plant.clone(),
                dims: global(&f.dims),
            });
        }
    }
    let signature = Signature::new(vec![
        (Layer::Phi, storages.len()),
        (Layer::Theta, controllers.len()),
        (Layer::Psi, plants.len()),
    ])?;
    Ok(OmegaUnit {
        joint_space,
        storages,
        controllers,
        plants,
        channels: first.channels.clone(),
        signature,
        capabilities: first.capabilities,
    })
}

/// An outer unit whose plant hosts an inner unit at some addresses.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedUnit {
    pub outer: OmegaUnit,
    pub inner: OmegaUnit,
    pub hosts: BTreeSet<u64>,
    /// `(outer plant address, inner storage address)`: inner storage content
    /// as a function of the outer plant configuration.
    pub hookup: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlattenReport {
    pub t_b_signature: String,
    pub t_b_layer_counts: (usize, usize, usize),
    pub consolidated_patterns: usize,
}

impl NestedUnit {
    fn single<'a>(u: &'a OmegaUnit, what: &str) -> Result<(&'a Plant, &'a Repository)> {
        match (u.plants.as_slice(), u.storages.as_slice()) {
            ([f], [s]) => Ok((&f.plant, &s.repo)),
            _ => Err(OmegaError::CannotConsolidate(format!(
                "{what} unit must have one plant and one storage"
            ))),
        }
    }

    /// Hookup as a map; fails unless it is a function into inner storage.
    pub fn t_a(&self) -> Result<BTreeMap<u64, u64>> {
        let (_, inner_repo) = Self::single(&self.inner, "inner")?;
        let mut map = BTreeMap::new();
        for &(o, i) in &self.hookup {
            if !inner_repo.contains(i) {
                return Err(OmegaError::CannotConsolidate(format!(
                    "hookup names missing inner pattern {i}"
                )));
            }
            if let Some(prev) = map.insert(o, i) {
                if prev != i {
                    return Err(OmegaError::CannotConsolidate(format!(
                        "outer configuration {o} selects both inner patterns {prev} and {i}"
                    )));
                }
            }
        }
        Ok(map)
    }

    /// Unframed intermediate: both storages and controllers next to one plant.
    pub fn t_b(&self) -> Result<OmegaUnit> {
        self.t_a()?;
        let (outer_plant, _) = Self::single(&self.outer, "outer")?;
        let (inner_plant, _) = Self::single(&self.inner, "inner")?;
        let flat = NestedPlant::new(outer_plant.clone(), inner_plant.clone(), self.hosts.clone())?
            .flatten()?;
        let n_outer = outer_plant.space().dims().len();
        let n_inner = inner_plant.space().dims().len();
        let outer_dims: Vec<usize> = (0..n_outer).collect();
        let inner_dims: Vec<usize> = (n_outer..n_outer + n_inner).collect();
        let storages = vec![
            StorageSlot {
                repo: self.outer.storages[0].repo.clone(),
                dims: Some(outer_dims.clone()),
            },
            StorageSlot {
                repo: self.inner.storages[0].repo.clone(),
                dims: Some(inner_dims.clone()),
            },
        ];
        let controllers = vec![
            ControllerSpec {
                field: None,
                dims: Some(outer_dims),
                ..self.outer.controllers[0].clone()
            },
            ControllerSpec {
                field: None,
                dims: Some(inner_dims),
                ..self.inner.controllers[0].clone()
            },
        ];
        let dims = (0..n_outer + n_inner).collect();
        Ok(OmegaUnit {
            joint_space: flat.space().clone(),
            storages,
            controllers,
            plants: vec![PlantFragment { plant: flat, dims }],
            channels: self.outer.channels.clone(),
            signature: Signature::new(vec![
                (Layer::Phi, 1),
                (Layer::Theta, 1),
                (Layer::Phi, 1),
                (Layer::Theta, 1),
                (Layer::Psi, 1),
            ])?,
            capabilities: self.outer.capabilities,
        })
    }

    /// Consolidated unit: every outer pattern joined with the inner pattern
    /// its target selects.
    pub fn t_c(&self) -> Result<OmegaUnit> {
        let map = self.t_a()?;
        let mid = self.t_b()?;
        let (outer_plant, outer_repo) = Self::single(&self.outer, "outer")?;
        let (_, inner_repo) = Self::single(&self.inner, "inner")?;
        let mut repo = Repository::new();
        for p in outer_repo.patterns() {
            let target = outer_plant.space().decode(&p.bits)?;
            let idx = outer_plant.space().index_of(&target)?;
            let inner_addr = *map.get(&idx).ok_or_else(|| {
                OmegaError::CannotConsolidate(format!(
                    "outer pattern {} reaches configuration {idx} with no inner pattern",
                    p.address
                ))
            })?;
            let mut joined: Bits = p.bits.clone();
            joined.extend_from_bitslice(inner_repo.get(inner_addr)?);
            repo.insert(p.address, joined, p.kind)?;
        }
        let ctl = ControllerSpec {
            address_bits: repo.address_bits(),
            ..ControllerSpec::relay(0)
        };
        let plant = mid.plants[0].plant.clone();
        let mut unit = compose(repo, ctl, plant, self.outer.channels.clone())?;
        unit.capabilities = self.outer.capabilities;
        Ok(unit)
    }

    pub fn flatten_nested(&self) -> Result<(OmegaUnit, FlattenReport)> {
        let mid = self.t_b()?;
        let unit = self.t_c()?;
        let report = FlattenReport {
            t_b_signature: mid.signature.to_string(),
            t_b_layer_counts: mid.signature.layer_counts(),
            consolidated_patterns: unit.storages[0].repo.len(),
        };
        Ok((unit, report))
    }

    /// Nested execution: pattern requests configure the outer plant, and the
    /// hookup configures the inner plant from the outer result.
    pub fn simulate(&self, probe: &Probe) -> Result<UnitTrace> {
        let map = self.t_a()?;
        let (outer_plant, outer_repo) = Self::single(&self.outer, "outer")?;
        let (inner_plant, inner_repo) = Self::single(&self.inner, "inner")?;
        let mut nested =
            NestedPlant::new(outer_plant.clone(), inner_plant.clone(), self.hosts.clone())?;
        let joint_of = |n: &NestedPlant| -> Vec<i64> {
            let mut v = n.outer.active().values().to_vec();
            v.extend_from_slice(n.inner.active().values());
            v
        };
        let mut records = Vec::new();
        let mut transfers = Vec::new();
        for t in 0..probe.ticks {
            if let Some(Request::Pattern { address }) = probe.requests.get(&t) {
                let (p, addr_bits) = outer_repo.retrieve(*address)?;
                nested
                    .outer
                    .set_active(nested.outer.space().decode(&p.bits)?)?;
                let idx = nested.outer.space().index_of(nested.outer.active())?;
                let mut width = p.bits.len() as u64;
                if let Some(a) = map.get(&idx) {
                    let ip = inner_repo.get(*a)?;
                    nested.inner.set_active(nested.inner.space().decode(ip)?)?;
                    width += ip.len() as u64;
                }
                let n = transfer_time(width, self.outer.channels.rate(Channel::N));
                let m = transfer_time(width, self.outer.channels.rate(Channel::M));
                let r = transfer_time(addr_bits as u64, self.outer.channels.rate(Channel::R));
                transfers.push(TransferTiming {
                    vtick: t,
                    r,
                    n,
                    m,
                    transfer: n.max(m),
                });
            }
            let input = if probe.inputs.is_empty() {
                0
            } else {
                probe.inputs[t as usize % probe.inputs.len()]
            };
            let output = nested.step(input)?;
            records.push(TraceRecord {
                vtick: t,
                output,
                joint: joint_of(&nested),
            });
        }
        Ok(UnitTrace { records, transfers })
    }
}

/// Point of a fragment's space from joint values.
pub fn fragment_point(unit: &OmegaUnit, k: usize, joint: &ConfigPoint) -> Result<ConfigPoint> {
    let f = &unit.plants[k];
    Ok(f.plant.space().point(project(joint.values(), &f.dims))?)
}

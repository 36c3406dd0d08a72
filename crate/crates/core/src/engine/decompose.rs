//! Decomposition of a scenario's unit, checked against a probe derived from
//! the scenario's own events.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::scenario::{Action, Built, Scenario};
use super::EngineError;
use crate::controller::CostField;
use crate::omega::{
    dec_c, dec_i, dec_p, dec_s, simulate_parallel, slice_storage, DecompositionReport, OmegaError,
    OmegaUnit, Probe, Request, TransferTiming,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Operation {
    #[serde(rename = "dec_s")]
    Storage,
    #[serde(rename = "dec_c")]
    Controller,
    #[serde(rename = "dec_p")]
    Plant,
    #[serde(rename = "dec_i")]
    Units,
}

impl Operation {
    pub fn name(self) -> &'static str {
        match self {
            Operation::Storage => "dec_s",
            Operation::Controller => "dec_c",
            Operation::Plant => "dec_p",
            Operation::Units => "dec_i",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dec_s" => Ok(Operation::Storage),
            "dec_c" => Ok(Operation::Controller),
            "dec_p" => Ok(Operation::Plant),
            "dec_i" => Ok(Operation::Units),
            _ => Err(format!(
                "unknown operation '{s}' (expected dec_s, dec_c, dec_p or dec_i)"
            )),
        }
    }
}

/// Parses `0-3,7/4-6`: parts separated by `/`, items by `,`, ranges inclusive.
pub fn parse_parts(text: &str) -> Result<Vec<Vec<u64>>, String> {
    text.split('/')
        .map(|part| {
            let mut out = Vec::new();
            for item in part.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let bad = || format!("bad part item '{item}'");
                match item.split_once('-') {
                    Some((a, b)) => {
                        let (a, b): (u64, u64) = (
                            a.trim().parse().map_err(|_| bad())?,
                            b.trim().parse().map_err(|_| bad())?,
                        );
                        if a > b {
                            return Err(bad());
                        }
                        out.extend(a..=b);
                    }
                    None => out.push(item.parse().map_err(|_| bad())?),
                }
            }
            Ok(out)
        })
        .collect()
}

fn halves(n: u64) -> Vec<Vec<u64>> {
    let mid = n.div_ceil(2);
    vec![(0..mid).collect(), (mid..n).collect()]
}

/// Default split: dimensions in two halves, or addresses in two halves.
pub fn default_parts(op: Operation, built: &Built) -> Vec<Vec<u64>> {
    match op {
        Operation::Storage => {
            let addrs: Vec<u64> = built.repo.addresses().collect();
            let mid = addrs.len().div_ceil(2);
            vec![addrs[..mid].to_vec(), addrs[mid..].to_vec()]
        }
        _ => halves(built.space.dims().len() as u64),
    }
}

/// Pattern requests at demand events, plant jumps as disturbances.
pub fn probe_for(sc: &Scenario, built: &Built) -> Probe {
    let plant_dims = sc.plant_dims();
    let mut requests = BTreeMap::new();
    let mut disturbances = BTreeMap::new();
    for (t, a) in &built.events {
        match a {
            Action::Demand { address } if built.repo.contains(*address) => {
                requests.insert(*t, Request::Pattern { address: *address });
            }
            Action::Jump { values } => {
                disturbances.insert(*t, plant_dims.iter().map(|&d| values[d]).collect());
            }
            _ => {}
        }
    }
    Probe {
        ticks: sc.run.ticks,
        inputs: vec![0],
        requests,
        disturbances,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub report: DecompositionReport,
    pub before: Vec<TransferTiming>,
    pub after: Vec<TransferTiming>,
}

fn planning_unit(sc: &Scenario, built: &Built) -> Result<OmegaUnit, EngineError> {
    let goal = match &sc.run.goal {
        Some(g) => built.point(g)?,
        None => built.plant.active().clone(),
    };
    let budget = sc
        .run
        .budgets
        .first()
        .copied()
        .unwrap_or(built.space.total_width() as u32);
    built.unit(Some(CostField::new(built.space.clone(), goal)), budget)
}

fn usize_parts(parts: &[Vec<u64>]) -> Vec<Vec<usize>> {
    parts
        .iter()
        .map(|p| p.iter().map(|&d| d as usize).collect())
        .collect()
}

pub fn decompose(
    sc: &Scenario,
    built: &Built,
    op: Operation,
    parts: &[Vec<u64>],
) -> Result<Decomposition, EngineError> {
    let mut probe = probe_for(sc, built);
    let unit = if op == Operation::Controller || op == Operation::Units && sc.run.goal.is_some() {
        planning_unit(sc, built)?
    } else {
        built.unit(None, 0)?
    };
    if op == Operation::Controller {
        probe.requests = BTreeMap::from([(0, Request::Plan)]);
    }
    let before = unit.simulate(&probe)?;
    let dims = usize_parts(parts);
    let outcome = match op {
        Operation::Storage => dec_s(&unit, parts).and_then(|(u, r)| Ok((u.simulate(&probe)?, r))),
        Operation::Controller => {
            dec_c(&unit, &dims).and_then(|(u, r)| Ok((u.simulate(&probe)?, r)))
        }
        Operation::Plant => dec_p(&unit, &dims).and_then(|(u, r)| Ok((u.simulate(&probe)?, r))),
        Operation::Units => (|| {
            let (split, _) = dec_p(&unit, &dims)?;
            let mut split = slice_storage(&split)?;
            if split.controllers.iter().any(|c| c.field.is_some()) {
                split = dec_c(&split, &dims)?.0;
            }
            let units = dec_i(&split)?;
            let trace = simulate_parallel(&units, &dims, unit.joint_space.dims().len(), &probe)?;
            let report = DecompositionReport {
                operation: op.name().into(),
                permissible: true,
                reason: format!("{} independent units", units.len()),
                trace_equal: None,
            };
            Ok((trace, report))
        })(),
    };
    match outcome {
        Ok((after, mut report)) => {
            report.trace_equal = Some(after.records == before.records);
            Ok(Decomposition {
                report,
                before: before.transfers,
                after: after.transfers,
            })
        }
        Err(OmegaError::Impermissible { operation, reason }) => Ok(Decomposition {
            report: DecompositionReport {
                operation: operation.into(),
                permissible: false,
                reason,
                trace_equal: None,
            },
            before: before.transfers,
            after: Vec::new(),
        }),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::dsl::load;

    #[test]
    fn parts_syntax() {
        assert_eq!(
            parse_parts("0-2,5/3").unwrap(),
            vec![vec![0, 1, 2, 5], vec![3]]
        );
        assert!(parse_parts("3-1").is_err());
    }

    #[test]
    fn plant_split_halves_transfer() {
        let text = "SPACE\n  b[8] = bool\nPLANT\n  start = pattern 0\nSTORAGE\n  pattern = 0 hex 00\n  pattern = 1 hex ff\nCHANNELS\n  n = 2\n  m = 2\nENVIRONMENT\n  event = 1\n    demand = 1\nRUN\n  ticks = 4\n";
        let (sc, b) = load(text).unwrap();
        let d = decompose(
            &sc,
            &b,
            Operation::Plant,
            &default_parts(Operation::Plant, &b),
        )
        .unwrap();
        assert!(d.report.permissible);
        assert_eq!(d.report.trace_equal, Some(true));
        assert_eq!((d.before[0].transfer, d.after[0].transfer), (4, 2));
        let lossy = decompose(&sc, &b, Operation::Storage, &[vec![0]]).unwrap();
        assert!(!lossy.report.permissible);
    }
}

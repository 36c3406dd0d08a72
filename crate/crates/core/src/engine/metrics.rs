//! Analyses of a finished trace: mode segments, switching cost, erratic
//! behaviour, drift against expectations, safety figures and bit accounting.

use std::collections::BTreeMap;

use serde::Serialize;

use super::run::{run, Trace, Trigger};
use super::scenario::{Built, Scenario, SwitchPolicy};
use super::EngineError;
use crate::channels::{measure_q, Channel};
use crate::configspace::{
    hazard_key, ConfigPoint, ConfigSpace, SpaceError, DEFAULT_ENUMERATION_CAP,
};
use crate::plant::{reliability, ReliabilityParams};

/// Largest space whose hazard keys are computed exhaustively.
pub const HAZARD_CAP: u64 = DEFAULT_ENUMERATION_CAP;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModeSegment {
    /// Stored pattern in force, if any.
    pub configured: Option<u64>,
    pub start: u64,
    /// Inclusive last tick.
    pub end: u64,
}

/// Maximal runs of ticks under one stored configuration.
pub fn mode_segments(trace: &Trace) -> Vec<ModeSegment> {
    let mut out: Vec<ModeSegment> = Vec::new();
    for (t, c) in trace.configured.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.configured == *c => s.end = t as u64,
            _ => out.push(ModeSegment {
                configured: *c,
                start: t as u64,
                end: t as u64,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorReport {
    pub segments: Vec<ModeSegment>,
    /// Reconfigurations started by a monitoring report instead of a demand.
    pub self_propelled: usize,
    /// Summed bit distance to the target at the start of each demanded switch.
    pub switch_deviation_bits: u64,
    pub erratic: bool,
    pub recommendation: Option<String>,
    /// Drift of the active configuration from an undisturbed run, bits per tick.
    pub s: f64,
    /// Drift of the demanded classes from the expectation, bits per tick.
    pub a: f64,
}

fn histogram<K: Ord + Clone>(items: &[K], support: &[K]) -> Vec<f64> {
    let mut counts: BTreeMap<&K, f64> = support.iter().map(|k| (k, 0.0)).collect();
    for k in items {
        *counts.entry(k).or_default() += 1.0;
    }
    counts.into_values().collect()
}

pub fn behavior_metrics(trace: &Trace) -> Result<BehaviorReport, EngineError> {
    let segments = mode_segments(trace);
    let self_propelled = trace
        .reconfigurations
        .iter()
        .filter(|r| r.trigger == Trigger::Internal)
        .count();
    let switch_deviation_bits = trace
        .reconfigurations
        .iter()
        .filter(|r| r.trigger == Trigger::External)
        .map(|r| r.deviation_bits as u64)
        .sum();
    let recommendation = trace.erratic.then(|| {
        format!("reconfiguration rate exceeded the limit within {} ticks: hold the recovery configuration", trace.erratic_window)
    });

    let active: Vec<String> = trace.rows.iter().map(|r| r.active_config.clone()).collect();
    let mut support: Vec<String> = active.iter().chain(&trace.reference).cloned().collect();
    support.sort();
    support.dedup();
    let s = if active.is_empty() {
        0.0
    } else {
        measure_q(
            &histogram(&trace.reference, &support),
            &histogram(&active, &support),
        )?
    };

    let classes: Vec<u64> = (0..trace.error_classes).collect();
    let a = if trace.demand_class.is_empty() || trace.expect.len() != classes.len() {
        0.0
    } else {
        measure_q(&trace.expect, &histogram(&trace.demand_class, &classes))?
    };
    Ok(BehaviorReport {
        segments,
        self_propelled,
        switch_deviation_bits,
        erratic: trace.erratic,
        recommendation,
        s,
        a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SwitchComparison {
    pub greedy_bits: u64,
    pub scheduled_bits: u64,
}

impl SwitchComparison {
    /// Bits the greedy policy moves beyond the scheduled one.
    pub fn excess(&self) -> i64 {
        self.greedy_bits as i64 - self.scheduled_bits as i64
    }
}

/// Runs the scenario once per switching policy.
pub fn compare_switch_policies(
    sc: &Scenario,
    built: &Built,
    seed: u64,
) -> Result<SwitchComparison, EngineError> {
    let deviation = |policy| -> Result<u64, EngineError> {
        let mut variant = sc.clone();
        variant.controller.policy = policy;
        let (trace, _) = run(&variant, built, seed)?;
        Ok(behavior_metrics(&trace)?.switch_deviation_bits)
    };
    Ok(SwitchComparison {
        greedy_bits: deviation(SwitchPolicy::Greedy)?,
        scheduled_bits: deviation(SwitchPolicy::Scheduled)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyReport {
    pub r: f64,
    /// `None` when the space holds no illegal configuration.
    pub h_k: Option<u32>,
    pub h_kp: Option<u32>,
    /// Undefined without a hazard.
    pub s: Option<f64>,
}

/// Hazard key of a space, `None` when it has no illegal points.
pub fn hazard(
    space: &ConfigSpace,
    behavior: Option<&[ConfigPoint]>,
) -> Result<Option<u32>, SpaceError> {
    if space.legality().is_trivial() {
        return Ok(None);
    }
    match hazard_key(space, behavior, HAZARD_CAP) {
        Ok(k) => Ok(Some(k)),
        Err(SpaceError::NoHazard) => Ok(None),
        Err(e @ SpaceError::Capacity { .. }) if behavior.is_none() => {
            log::warn!("hazard key skipped: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// System key over several behaviors: the smallest per-behavior key.
pub fn system_hazard_key(
    space: &ConfigSpace,
    behaviors: &[Vec<ConfigPoint>],
) -> Result<Option<u32>, SpaceError> {
    let mut best: Option<u32> = None;
    for b in behaviors {
        if let Some(k) = hazard(space, Some(b))? {
            best = Some(best.map_or(k, |x| x.min(k)));
        }
    }
    Ok(best)
}

pub fn safety_report(sc: &Scenario, built: &Built) -> Result<SafetyReport, EngineError> {
    let r = reliability(&ReliabilityParams {
        epsilon: sc.run.epsilon,
        m: sc.run.components,
        psi: built.plant.psi_bits().max(1) as f64,
    })?;
    let h_k = hazard(&built.space, None)?;
    let h_kp = if built.hybrid.dims().len() == built.space.dims().len() {
        h_k
    } else {
        hazard(&built.hybrid, None)?
    };
    Ok(SafetyReport {
        r,
        h_k,
        h_kp,
        s: h_kp.map(|h| h as f64 * r),
    })
}

/// Checks that every completed job's ledger rows add up to its per-channel
/// tallies, and that no row books more check or repeat bits than it sent.
pub fn check_conservation(trace: &Trace) -> Result<(), String> {
    let mut sums: BTreeMap<(u64, Channel), (u64, u64, u64)> = BTreeMap::new();
    for row in &trace.ledger {
        if row.bits_redundancy + row.bits_rerequested > row.bits_sent {
            return Err(format!(
                "tick {} on {}: overhead exceeds bits sent",
                row.tick, row.channel
            ));
        }
        let e = sums.entry((row.job_id, row.channel)).or_default();
        e.0 += row.bits_sent;
        e.1 += row.bits_redundancy;
        e.2 += row.bits_rerequested;
    }
    for r in &trace.reconfigurations {
        for (ch, t) in [
            (Channel::Q, r.q),
            (Channel::R, r.r),
            (Channel::N, r.n),
            (Channel::M, r.m),
        ] {
            let got = sums.get(&(r.job_id, ch)).copied().unwrap_or_default();
            if got != (t.sent(), t.redundancy, t.rerequested) {
                return Err(format!(
                    "job {} on {ch}: ledger {got:?} disagrees with tally {t:?}",
                    r.job_id
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{LegalityMap, Predicate};

    #[test]
    fn no_hazard_is_distinct() {
        let space = ConfigSpace::booleans(3);
        assert_eq!(hazard(&space, None).unwrap(), None);
        let space = ConfigSpace::booleans(3)
            .with_legality(LegalityMap::all_legal().require(0, Predicate::Equals { value: 0 }));
        assert_eq!(hazard(&space, None).unwrap(), Some(1));
    }

    #[test]
    fn system_key_takes_minimum() {
        let space = ConfigSpace::booleans(4)
            .with_legality(LegalityMap::all_legal().forbid(vec![1, 1, 1, 1]));
        let p = |v: Vec<i64>| space.point(v).unwrap();
        let near = vec![p(vec![1, 1, 1, 0])];
        let far = vec![p(vec![0, 0, 0, 0])];
        assert_eq!(
            system_hazard_key(&space, std::slice::from_ref(&far)).unwrap(),
            Some(4)
        );
        assert_eq!(system_hazard_key(&space, &[far, near]).unwrap(), Some(1));
    }
}

//! Reachability under a per-tick bit budget, where illegal intermediate
//! points are tolerated for a bounded dwell.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use super::run::config_label;
use super::scenario::{Built, Scenario};
use super::EngineError;
use crate::configspace::{ConfigPoint, ConfigSpace, HammingGraph, SpaceError};

/// Largest space searched point by point.
pub const REACH_CAP: u64 = 1 << 16;

/// Shortest move sequence from `start` to `goal`, each move changing at most
/// `budget` bits in one tick. A transition must be legal again within
/// `theta` ticks, so up to `theta - 1` consecutive intermediates may be
/// illegal. Returns the visited points including both endpoints.
pub fn dwell_path(
    space: &ConfigSpace,
    start: &ConfigPoint,
    goal: &ConfigPoint,
    budget: u32,
    theta: u64,
    cap: u64,
) -> Result<Option<Vec<ConfigPoint>>, SpaceError> {
    space.check_same(start)?;
    space.check_same(goal)?;
    if !space.is_legal(goal) {
        return Err(SpaceError::IllegalEndpoint);
    }
    let points = space.enumerate(cap)?;
    let legal: Vec<bool> = points.iter().map(|p| space.is_legal(p)).collect();
    let codes = points
        .iter()
        .map(|p| space.encode(p))
        .collect::<Result<Vec<_>, _>>()?;
    let graph = HammingGraph::new(codes);
    let s = graph
        .find(&space.encode(start)?)
        .expect("start is enumerated");
    let g = graph
        .find(&space.encode(goal)?)
        .expect("goal is enumerated");
    let max_dwell = theta.saturating_sub(1);

    // State: point and the number of consecutive illegal points just visited.
    let first = (s, if legal[s] { 0 } else { 1 });
    let mut prev: HashMap<(usize, u64), (usize, u64)> = HashMap::new();
    let mut queue = VecDeque::from([first]);
    prev.insert(first, first);
    while let Some(state) = queue.pop_front() {
        let (i, dwell) = state;
        if i == g {
            let mut path = vec![points[i].clone()];
            let mut cur = state;
            while cur != first {
                cur = prev[&cur];
                path.push(points[cur.0].clone());
            }
            path.reverse();
            return Ok(Some(path));
        }
        for j in graph.neighbors(i, budget) {
            let next = (j, if legal[j] { 0 } else { dwell + 1 });
            if next.1 > max_dwell || prev.contains_key(&next) {
                continue;
            }
            prev.insert(next, state);
            queue.push_back(next);
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReachRow {
    pub budget: u32,
    pub reachable: bool,
    /// Moves needed, one per tick.
    pub path_len: Option<usize>,
    pub wall_ticks: Option<u64>,
    pub path: Vec<String>,
}

/// One row per budget, from the scenario's declared start and goal.
pub fn reachability(
    sc: &Scenario,
    built: &Built,
    budgets: &[u32],
    theta: u64,
) -> Result<Vec<ReachRow>, EngineError> {
    let start = built.point(
        sc.run
            .start
            .as_deref()
            .ok_or(EngineError::Missing("a start configuration"))?,
    )?;
    let goal = built.point(
        sc.run
            .goal
            .as_deref()
            .ok_or(EngineError::Missing("a goal configuration"))?,
    )?;
    budgets
        .iter()
        .map(|&budget| {
            let path = dwell_path(&built.space, &start, &goal, budget, theta, REACH_CAP)?;
            let labels = path
                .iter()
                .flatten()
                .map(|p| built.space.encode(p).map(|c| config_label(&c)))
                .collect::<Result<Vec<_>, _>>()?;
            let len = path.as_ref().map(|p| p.len() - 1);
            Ok(ReachRow {
                budget,
                reachable: len.is_some(),
                path_len: len,
                wall_ticks: len.map(|l| l as u64),
                path: labels,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::LegalityMap;

    #[test]
    fn three_components_one_tick() {
        let space = ConfigSpace::booleans(3)
            .with_legality(LegalityMap::whitelist([vec![0, 0, 0], vec![1, 1, 1]]));
        let on = space.point(vec![1, 1, 1]).unwrap();
        let off = space.point(vec![0, 0, 0]).unwrap();
        assert_eq!(
            dwell_path(&space, &on, &off, 3, 1, 64)
                .unwrap()
                .unwrap()
                .len(),
            2
        );
        assert!(dwell_path(&space, &on, &off, 2, 1, 64).unwrap().is_none());
        // Two ticks of dwell let a single illegal intermediate through.
        assert_eq!(
            dwell_path(&space, &on, &off, 2, 2, 64)
                .unwrap()
                .unwrap()
                .len(),
            3
        );
    }
}

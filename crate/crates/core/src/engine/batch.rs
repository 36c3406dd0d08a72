//! Independent (scenario, seed) runs in parallel. Each run owns its state,
//! so results do not depend on the thread count.

use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

use super::run::{run, RunSummary, Trace};
use super::scenario::{Built, Scenario};
use super::EngineError;

pub type RunResult = Result<(Trace, RunSummary), EngineError>;

/// Runs every seed on a pool of `jobs` threads; results keep seed order.
pub fn run_seeds(sc: &Scenario, built: &Built, seeds: &[u64], jobs: usize) -> Vec<RunResult> {
    let pool = ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool starts");
    pool.install(|| seeds.par_iter().map(|&s| run(sc, built, s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::dsl::load;

    #[test]
    fn thread_count_does_not_matter() {
        let text = "SPACE\n  b[3] = bool\nSTORAGE\n  pattern = 0 values (0,0,0)\n  pattern = 1 values (1,0,1)\nENVIRONMENT\n  event = 1\n    demand = 1\nRUN\n  ticks = 8\n";
        let (sc, b) = load(text).unwrap();
        let seeds: Vec<u64> = (0..6).collect();
        let one = run_seeds(&sc, &b, &seeds, 1);
        let four = run_seeds(&sc, &b, &seeds, 4);
        assert_eq!(one, four);
    }
}

//! Reproductions of the reference figures from the shipped scenario corpus.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::decompose::{decompose, default_parts, Operation};
use super::dsl::load;
use super::reach::reachability;
use super::run::run;
use super::EngineError;

/// Scenario texts by file name.
pub type Corpus = BTreeMap<String, String>;

/// The scenarios compiled into the library.
pub fn embedded_corpus() -> Corpus {
    [
        (
            "paper_5_1.scn",
            include_str!("../../../../scenarios/paper_5_1.scn"),
        ),
        (
            "three_components.scn",
            include_str!("../../../../scenarios/three_components.scn"),
        ),
        (
            "corridor.scn",
            include_str!("../../../../scenarios/corridor.scn"),
        ),
        (
            "divergence.scn",
            include_str!("../../../../scenarios/divergence.scn"),
        ),
        (
            "synchronized.scn",
            include_str!("../../../../scenarios/synchronized.scn"),
        ),
        (
            "two_mode.scn",
            include_str!("../../../../scenarios/two_mode.scn"),
        ),
        (
            "oscillating.scn",
            include_str!("../../../../scenarios/oscillating.scn"),
        ),
        (
            "iterative.scn",
            include_str!("../../../../scenarios/iterative.scn"),
        ),
        ("probe.scn", include_str!("../../../../scenarios/probe.scn")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Match,
    Mismatch,
    /// The reference value contradicts the reference's own components; the
    /// observed value agrees with the components.
    SourceInconsistent,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Match => "ok",
            Status::Mismatch => "MISMATCH",
            Status::SourceInconsistent => "source-inconsistent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub scenario: String,
    pub quantity: String,
    pub expected: String,
    pub observed: String,
    pub status: Status,
    pub note: Option<String>,
}

impl CheckRow {
    fn new(
        scenario: &str,
        quantity: &str,
        expected: impl ToString,
        observed: impl ToString,
    ) -> Self {
        let (expected, observed) = (expected.to_string(), observed.to_string());
        let status = if expected == observed {
            Status::Match
        } else {
            Status::Mismatch
        };
        Self {
            scenario: scenario.into(),
            quantity: quantity.into(),
            expected,
            observed,
            status,
            note: None,
        }
    }

    fn failed(
        scenario: &str,
        quantity: &str,
        expected: impl ToString,
        err: impl fmt::Display,
    ) -> Self {
        let mut row = Self::new(scenario, quantity, expected, "error");
        row.note = Some(err.to_string());
        row
    }
}

/// Stated end-to-end reconfiguration time and its stated parts.
const STATED_TOTAL: u64 = 19;
const STATED_STAGES: [u64; 3] = [3, 2, 16];

fn get<'a>(corpus: &'a Corpus, name: &str) -> Result<&'a str, EngineError> {
    corpus
        .get(name)
        .map(String::as_str)
        .ok_or(EngineError::Missing("a scenario in the corpus"))
}

fn timing(corpus: &Corpus, rows: &mut Vec<CheckRow>) -> Result<(), EngineError> {
    const NAME: &str = "paper_5_1.scn";
    let (sc, built) = load(get(corpus, NAME)?)?;
    let (trace, summary) = run(&sc, &built, sc.run.seed)?;
    let Some(r) = trace.reconfigurations.first() else {
        rows.push(CheckRow::new(NAME, "reconfigurations", 1, 0));
        return Ok(());
    };
    let stages = [r.identification_ticks, r.selection_ticks, r.transfer_ticks];
    for (q, (e, o)) in ["identification ticks", "selection ticks", "transfer ticks"]
        .iter()
        .zip(STATED_STAGES.iter().zip(stages))
    {
        rows.push(CheckRow::new(NAME, q, e, o));
    }
    let frozen = trace
        .rows
        .windows(2)
        .filter(|w| w[0].virtual_time == w[1].virtual_time)
        .count()
        + usize::from(trace.rows.first().is_some_and(|r| r.virtual_time == 0));
    rows.push(CheckRow::new(
        NAME,
        "plant unresponsive ticks",
        STATED_STAGES[2],
        frozen,
    ));
    let mut total = CheckRow::new(
        NAME,
        "reconfiguration wall ticks",
        STATED_TOTAL,
        summary.reconf_wall_ticks,
    );
    let sum: u64 = STATED_STAGES.iter().sum();
    if total.status == Status::Mismatch
        && stages == STATED_STAGES
        && summary.reconf_wall_ticks == sum
    {
        total.status = Status::SourceInconsistent;
        total.note = Some(format!(
            "stated total {STATED_TOTAL} disagrees with the sum of its stages 3+2+16={sum}"
        ));
    }
    rows.push(total);
    Ok(())
}

fn split(corpus: &Corpus, rows: &mut Vec<CheckRow>) -> Result<(), EngineError> {
    const NAME: &str = "paper_5_1.scn";
    let (sc, built) = load(get(corpus, NAME)?)?;
    let d = decompose(
        &sc,
        &built,
        Operation::Plant,
        &default_parts(Operation::Plant, &built),
    )?;
    let before = d.before.first().map_or(0, |t| t.transfer);
    let after = d.after.first().map_or(0, |t| t.transfer);
    rows.push(CheckRow::new(
        NAME,
        "transfer ticks after plant split",
        before / 2,
        after,
    ));
    rows.push(CheckRow::new(
        NAME,
        "split preserves trace",
        true,
        d.report.trace_equal == Some(true),
    ));
    Ok(())
}

fn selection(corpus: &Corpus, rows: &mut Vec<CheckRow>) -> Result<(), EngineError> {
    const NAME: &str = "divergence.scn";
    let (_, built) = load(get(corpus, NAME)?)?;
    rows.push(CheckRow::new(
        NAME,
        "selection bits",
        2,
        built.plant.psi_bits(),
    ));
    let (mean, max) = built.plant.selection_code_stats()?;
    rows.push(CheckRow::new(
        NAME,
        "stored selection bits, mean",
        1.5,
        mean,
    ));
    rows.push(CheckRow::new(NAME, "stored selection bits, max", 2, max));
    Ok(())
}

fn budgets(corpus: &Corpus, rows: &mut Vec<CheckRow>) -> Result<(), EngineError> {
    const NAME: &str = "three_components.scn";
    let (sc, built) = load(get(corpus, NAME)?)?;
    let table = reachability(&sc, &built, &[3, 2], 1)?;
    let show = |r: &super::reach::ReachRow| match r.path_len {
        Some(n) => format!("reachable in {n}"),
        None => "unreachable".into(),
    };
    rows.push(CheckRow::new(
        NAME,
        "budget 3 bits/tick",
        "reachable in 1",
        show(&table[0]),
    ));
    rows.push(CheckRow::new(
        NAME,
        "budget 2 bits/tick",
        "unreachable",
        show(&table[1]),
    ));
    Ok(())
}

type CheckFn = fn(&Corpus, &mut Vec<CheckRow>) -> Result<(), EngineError>;

/// Runs every reproduction. Errors inside one check become failed rows.
pub fn paper_check(corpus: &Corpus) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let checks: [(&str, &str, CheckFn); 4] = [
        ("paper_5_1.scn", "worked example", timing),
        ("paper_5_1.scn", "plant split", split),
        ("divergence.scn", "selection sizes", selection),
        ("three_components.scn", "budget table", budgets),
    ];
    for (name, what, f) in checks {
        if let Err(e) = f(corpus, &mut rows) {
            rows.push(CheckRow::failed(name, what, "completes", e));
        }
    }
    rows
}

pub fn mismatches(rows: &[CheckRow]) -> usize {
    rows.iter().filter(|r| r.status == Status::Mismatch).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_reproduces() {
        let rows = paper_check(&embedded_corpus());
        assert_eq!(mismatches(&rows), 0, "{rows:#?}");
        assert_eq!(
            rows.iter()
                .filter(|r| r.status == Status::SourceInconsistent)
                .count(),
            1
        );
    }
}

//! Browser bindings. Each export takes plain text or numbers and returns a
//! JSON string; the page in `www/` renders it.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use omega_sim::channels::{prioritized_implement, Channel, ChannelSet, Segment, TransferJob};
use omega_sim::engine::reach::reachability;
use omega_sim::engine::report::{round_json, summary_value, trace_csv};
use omega_sim::engine::{load, run};

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

fn numbers<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| format!("'{s}' is not a valid {what}"))
        })
        .collect()
}

/// Reachability from the scenario's start to its goal for each budget.
/// An empty budget list uses the scenario's own.
pub fn reachability_value(scenario: &str, budgets: &str, theta: u64) -> Result<Value, String> {
    let (sc, built) = load(scenario).map_err(|e| e.to_string())?;
    let mut budgets: Vec<u32> = numbers(budgets, "budget")?;
    if budgets.is_empty() {
        budgets = sc.run.budgets.clone();
    }
    let rows = reachability(&sc, &built, &budgets, theta.max(1)).map_err(|e| e.to_string())?;
    Ok(json!({ "theta": theta.max(1), "rows": rows }))
}

/// One run: summary, stage timings of every reconfiguration, and the trace.
pub fn simulate_value(scenario: &str, seed: u64) -> Result<Value, String> {
    let (sc, built) = load(scenario).map_err(|e| e.to_string())?;
    let (trace, summary) = run(&sc, &built, seed).map_err(|e| e.to_string())?;
    let reconfigurations =
        serde_json::to_value(&trace.reconfigurations).map_err(|e| e.to_string())?;
    Ok(json!({
        "summary": summary_value(&summary),
        "reconfigurations": round_json(reconfigurations),
        "trace_csv": trace_csv(&trace),
    }))
}

/// Delivered priority mass per tick for segments written `bits:rank`.
pub fn priority_value(segments: &str, rate: f64) -> Result<Value, String> {
    let segments = segments
        .split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (bits, rank) = s.split_once(':').unwrap_or((s, "1"));
            let bad = || format!("'{s}' is not bits:rank");
            Ok(Segment {
                bits: bits.parse().map_err(|_| bad())?,
                rank: rank.parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    if segments.is_empty() {
        return Err("no segments".into());
    }
    let set = ChannelSet::new(1.0, 1.0, 1.0, rate).map_err(|e| e.to_string())?;
    let job = TransferJob::with_segments(0, Channel::M, segments);
    let schedule = prioritized_implement(&job, &set).map_err(|e| e.to_string())?;
    Ok(json!({
        "curve": round_json(json!(schedule.curve)),
        "segment_completion": schedule.segment_completion,
        "total_ticks": schedule.total_ticks,
    }))
}

#[wasm_bindgen]
pub fn reachability_table(scenario: &str, budgets: &str, theta: u64) -> Result<String, JsError> {
    to_js(reachability_value(scenario, budgets, theta))
}

#[wasm_bindgen]
pub fn simulate(scenario: &str, seed: u64) -> Result<String, JsError> {
    to_js(simulate_value(scenario, seed))
}

#[wasm_bindgen]
pub fn priority_curve(segments: &str, rate: f64) -> Result<String, JsError> {
    to_js(priority_value(segments, rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "SPACE\n  b[3] = bool\nLEGAL\n  allow = (0,0,0)\n  allow = (1,1,1)\nSTORAGE\n  pattern = 0 values (1,1,1)\nPLANT\n  start = (1,1,1)\nRUN\n  start = (1,1,1)\n  goal = (0,0,0)\n  budgets = 3 2\n";

    #[test]
    fn budgets_default_to_the_scenario() {
        let v = reachability_value(THREE, "", 1).unwrap();
        assert_eq!(v["rows"][0]["reachable"], true);
        assert_eq!(v["rows"][1]["reachable"], false);
        assert!(reachability_value(THREE, "x", 1).is_err());
    }

    #[test]
    fn higher_rank_first() {
        let v = priority_value("4:2, 4:1", 2.0).unwrap();
        assert_eq!(v["segment_completion"], json!([4, 2]));
        assert_eq!(v["total_ticks"], 4);
    }

    #[test]
    fn simulate_reports_the_summary() {
        let text = "SPACE\n  b[2] = bool\nSTORAGE\n  pattern = 0 values (0,0)\n  pattern = 1 values (1,1)\nENVIRONMENT\n  event = 1\n    demand = 1\nRUN\n  ticks = 6\n";
        let v = simulate_value(text, 0).unwrap();
        assert!(v["summary"]["reconf_wall_ticks"].as_u64().unwrap() > 0);
        assert!(v["trace_csv"].as_str().unwrap().starts_with("tick,"));
    }
}

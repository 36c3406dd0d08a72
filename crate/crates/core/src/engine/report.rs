//! Output formats: trace and ledger CSV, summary JSON.
//!
//! Floats are rounded to nine significant digits everywhere.

use serde_json::{json, Map, Number, Value};

use super::run::{RunSummary, Trace};

pub const TRACE_HEADER: &str =
    "tick,real_time,virtual_time,active_config,channel,bits,event,damage";
pub const LEDGER_HEADER: &str = "tick,channel,bits_sent,bits_redundancy,bits_rerequested,job_id";

/// Rounds to nine significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Shortest decimal text of `round9(x)`.
pub fn fmt9(x: f64) -> String {
    let r = round9(x);
    if r == 0.0 {
        return "0".into();
    }
    format!("{r}")
}

/// JSON number for `round9(x)`, or null when not finite.
pub fn json9(x: f64) -> Value {
    Number::from_f64(round9(x)).map_or(Value::Null, Value::Number)
}

/// Rounds every float inside a JSON value.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if !n.is_i64() && !n.is_u64() => json9(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn trace_csv(trace: &Trace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.tick,
            fmt9(r.real_time),
            r.virtual_time,
            csv_field(&r.active_config),
            csv_field(&r.channel),
            r.bits,
            csv_field(&r.event),
            fmt9(r.damage)
        ));
    }
    out
}

pub fn ledger_csv(trace: &Trace) -> String {
    let mut out = String::from(LEDGER_HEADER);
    out.push('\n');
    for r in &trace.ledger {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.tick, r.channel, r.bits_sent, r.bits_redundancy, r.bits_rerequested, r.job_id
        ));
    }
    out
}

pub fn summary_value(s: &RunSummary) -> Value {
    let mut m = Map::new();
    m.insert("total_damage".into(), json9(s.total_damage));
    m.insert("reconf_wall_ticks".into(), json!(s.reconf_wall_ticks));
    m.insert("R".into(), json9(s.r));
    m.insert("h_k".into(), json!(s.h_k));
    m.insert("h_kp".into(), json!(s.h_kp));
    m.insert("S".into(), s.s.map_or(Value::Null, json9));
    m.insert("mode_switches".into(), json!(s.mode_switches));
    m.insert("erratic".into(), json!(s.erratic));
    Value::Object(m)
}

pub fn summary_json(s: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(&summary_value(s)).expect("summary serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_digits() {
        assert_eq!(fmt9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt9(2.0), "2");
        assert_eq!(fmt9(123456789.4), "123456789");
        assert_eq!(fmt9(1234567891.0), "1234567890");
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(-0.1), "-0.1");
    }

    #[test]
    fn summary_keys() {
        let s = RunSummary {
            total_damage: 0.1 + 0.2,
            reconf_wall_ticks: 3,
            r: 2.0,
            h_k: None,
            h_kp: None,
            s: None,
            mode_switches: 0,
            erratic: false,
        };
        let v = summary_value(&s);
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys.len(), 8);
        assert_eq!(v["total_damage"], json!(0.3));
        assert!(v["S"].is_null());
    }
}

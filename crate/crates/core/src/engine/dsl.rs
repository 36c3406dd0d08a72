//! Line-oriented scenario language.
//!
//! A file is a sequence of sections (`SPACE`, `LEGAL`, `PLANT`, `STORAGE`,
//! `CHANNELS`, `CONTROLLER`, `ENVIRONMENT`, `RUN`), each header alone on a
//! line at column 1. Entries are `key = value`; lines indented deeper than
//! an entry form its table. `#` starts a comment.
//!
//! ```text
//! SPACE
//!   b[3] = bool
//!   level = int 0..7
//! STORAGE
//!   pattern = 0 values (0,0,0,3)
//! ENVIRONMENT
//!   event = 5
//!     demand = 0
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::bits;
use crate::configspace::{DimKind, Predicate};
use crate::plant::{DisturbancePolicy, OutputFn};

use super::scenario::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown section '{0}'")]
    UnknownSection(String),
    #[error("unknown key '{key}' in {section}")]
    UnknownKey { section: String, key: String },
    #[error("bad value: {0}")]
    Value(String),
    #[error("{0}")]
    Constraint(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct DslError {
    pub line: usize,
    pub column: usize,
    pub kind: DslErrorKind,
}

type Result<T> = std::result::Result<T, DslError>;

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    key_col: usize,
    value_col: usize,
    rows: Vec<Entry>,
}

impl Entry {
    fn err(&self, kind: DslErrorKind) -> DslError {
        DslError {
            line: self.line,
            column: self.value_col,
            kind,
        }
    }

    fn bad(&self, msg: impl Into<String>) -> DslError {
        self.err(DslErrorKind::Value(msg.into()))
    }

    fn unknown(&self, section: &str) -> DslError {
        DslError {
            line: self.line,
            column: self.key_col,
            kind: DslErrorKind::UnknownKey {
                section: section.into(),
                key: self.key.clone(),
            },
        }
    }

    fn no_rows(&self) -> Result<()> {
        match self.rows.first() {
            Some(r) => Err(DslError {
                line: r.line,
                column: r.key_col,
                kind: DslErrorKind::Syntax(format!("'{}' takes no table", self.key)),
            }),
            None => Ok(()),
        }
    }

    fn words(&self) -> Vec<&str> {
        self.value.split_whitespace().collect()
    }

    fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.bad(format!("'{s}' is not a valid {what}")))
    }

    fn uint(&self) -> Result<u64> {
        self.parse(self.value.trim(), "unsigned integer")
    }

    fn float(&self) -> Result<f64> {
        let v: f64 = self.parse(self.value.trim(), "number")?;
        if v.is_nan() {
            return Err(self.bad("NaN is not allowed"));
        }
        Ok(v)
    }

    fn boolean(&self) -> Result<bool> {
        match self.value.trim() {
            "true" => Ok(true),
            "false" => Ok(false),
            s => Err(self.bad(format!("'{s}' is not true or false"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<Vec<T>> {
        let inner = s.trim();
        let inner = inner
            .strip_prefix('(')
            .and_then(|x| x.strip_suffix(')'))
            .unwrap_or(inner);
        inner
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| self.parse(t, what))
            .collect()
    }

    fn ints(&self, s: &str) -> Result<Vec<i64>> {
        self.list(s, "integer")
    }

    fn range<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<(T, T)> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| self.bad(format!("expected lo..hi, found '{s}'")))?;
        Ok((self.parse(a.trim(), what)?, self.parse(b.trim(), what)?))
    }
}

#[derive(Debug)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

const SECTIONS: [&str; 8] = [
    "SPACE",
    "LEGAL",
    "PLANT",
    "STORAGE",
    "CHANNELS",
    "CONTROLLER",
    "ENVIRONMENT",
    "RUN",
];

fn syntax(line: usize, column: usize, msg: impl Into<String>) -> DslError {
    DslError {
        line,
        column,
        kind: DslErrorKind::Syntax(msg.into()),
    }
}

fn lex(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    let mut entry_indent: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        if let Some(p) = body.find('\t') {
            if body[..p].trim().is_empty() {
                return Err(syntax(line, p + 1, "tabs are not allowed in indentation"));
            }
        }
        let indent = body.len() - body.trim_start().len();
        let content = body.trim();
        if indent == 0 && !content.contains('=') {
            if !content.chars().all(|c| c.is_ascii_uppercase()) {
                return Err(syntax(
                    line,
                    1,
                    format!("expected a section header, found '{content}'"),
                ));
            }
            if !SECTIONS.contains(&content) {
                return Err(DslError {
                    line,
                    column: 1,
                    kind: DslErrorKind::UnknownSection(content.into()),
                });
            }
            if sections.iter().any(|s| s.name == content) {
                return Err(syntax(line, 1, format!("section {content} appears twice")));
            }
            sections.push(Section {
                name: content.into(),
                line,
                entries: Vec::new(),
            });
            entry_indent = None;
            continue;
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| syntax(line, indent + 1, "entry before any section header"))?;
        let eq = body
            .find('=')
            .ok_or_else(|| syntax(line, indent + 1, "expected 'key = value'"))?;
        let key = body[..eq].trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(syntax(line, indent + 1, format!("malformed key '{key}'")));
        }
        let after = &body[eq + 1..];
        let value = after.trim();
        let value_col = eq + 2 + (after.len() - after.trim_start().len());
        let entry = Entry {
            key: key.into(),
            value: value.into(),
            line,
            key_col: indent + 1,
            value_col,
            rows: Vec::new(),
        };
        match entry_indent {
            Some(base) if indent > base => {
                let parent = section
                    .entries
                    .last_mut()
                    .expect("base indent implies an entry");
                if let Some(first) = parent.rows.first() {
                    if first.key_col != indent + 1 {
                        return Err(syntax(line, indent + 1, "inconsistent table indentation"));
                    }
                }
                parent.rows.push(entry);
            }
            Some(base) if indent < base => {
                return Err(syntax(
                    line,
                    indent + 1,
                    "entry is indented less than the entries before it",
                ));
            }
            _ => {
                entry_indent = Some(indent);
                section.entries.push(entry);
            }
        }
    }
    Ok(sections)
}

/// Item locations used to place build-time validation errors.
type Locations = BTreeMap<String, (usize, usize)>;

fn dim_kind(e: &Entry) -> Result<DimKind> {
    let words = e.words();
    match words.as_slice() {
        ["bool"] => Ok(DimKind::Boolean),
        ["int", r] => {
            let (lo, hi) = e.range(r, "integer")?;
            Ok(DimKind::IntRange { lo, hi })
        }
        ["real", r, "/", levels] => {
            let (lo, hi) = e.range(r, "number")?;
            Ok(DimKind::QuantizedReal {
                lo,
                hi,
                levels: e.parse(levels, "level count")?,
            })
        }
        _ => Err(e.bad(format!(
            "expected 'bool', 'int lo..hi' or 'real lo..hi / levels', found '{}'",
            e.value
        ))),
    }
}

fn parse_space(s: &Section, sc: &mut Scenario, locs: &mut Locations) -> Result<()> {
    for e in &s.entries {
        e.no_rows()?;
        let kind = dim_kind(e)?;
        let names: Vec<String> = match e.key.split_once('[') {
            Some((base, rest)) => {
                let n: usize = rest
                    .strip_suffix(']')
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| {
                        syntax(
                            e.line,
                            e.key_col,
                            format!("malformed array key '{}'", e.key),
                        )
                    })?;
                (0..n).map(|i| format!("{base}{i}")).collect()
            }
            None => vec![e.key.clone()],
        };
        for name in names {
            locs.entry(format!("dim {name}"))
                .or_insert((e.line, e.key_col));
            sc.space.push(DimDecl {
                name,
                kind: kind.clone(),
            });
        }
    }
    locs.insert("space".into(), (s.line, 1));
    Ok(())
}

fn parse_legal(s: &Section, sc: &mut Scenario) -> Result<()> {
    for e in &s.entries {
        e.no_rows()?;
        let rule = match e.key.as_str() {
            "require" => {
                let w = e.words();
                let (dim, predicate) = match w.as_slice() {
                    [d, "in", r] => {
                        let (lo, hi) = e.range(r, "integer")?;
                        (d, Predicate::InRange { lo, hi })
                    }
                    [d, "==", v] => (
                        d,
                        Predicate::Equals {
                            value: e.parse(v, "integer")?,
                        },
                    ),
                    [d, "!=", v] => (
                        d,
                        Predicate::NotEquals {
                            value: e.parse(v, "integer")?,
                        },
                    ),
                    _ => return Err(e.bad("expected 'dim in lo..hi', 'dim == v' or 'dim != v'")),
                };
                LegalRule::Require {
                    dim: dim.to_string(),
                    predicate,
                }
            }
            "forbid" => LegalRule::Forbid {
                values: e.ints(&e.value)?,
            },
            "allow" => LegalRule::Allow {
                values: e.ints(&e.value)?,
            },
            _ => return Err(e.unknown("LEGAL")),
        };
        sc.legal.push(rule);
    }
    Ok(())
}

fn output_fn(e: &Entry) -> Result<OutputFn> {
    let w = e.words();
    match w.as_slice() {
        ["popcount"] => Ok(OutputFn::PopCount),
        ["address"] => Ok(OutputFn::Address),
        ["constant", v] => Ok(OutputFn::Constant {
            value: e.parse(v, "integer")?,
        }),
        ["affine", a, b] => Ok(OutputFn::Affine {
            scale: e.parse(a, "integer")?,
            offset: e.parse(b, "integer")?,
        }),
        ["table", rest @ ..] if !rest.is_empty() => Ok(OutputFn::Table {
            values: e.ints(&rest.join(" "))?,
        }),
        _ => Err(e.bad(
            "expected popcount, address, 'constant v', 'affine scale offset' or 'table v...'",
        )),
    }
}

fn parse_plant(s: &Section, sc: &mut Scenario) -> Result<()> {
    let mut kind_entry: Option<&Entry> = None;
    let mut successors = None;
    let mut program = None;
    let mut radius = 1;
    for e in &s.entries {
        if e.key != "divergence" {
            e.no_rows()?;
        }
        match e.key.as_str() {
            "kind" => kind_entry = Some(e),
            "successors" => successors = Some(e.list::<u64>(&e.value, "address")?),
            "program" => program = Some(e.list::<u64>(&e.value, "address")?),
            "radius" => radius = e.parse(e.value.trim(), "radius")?,
            "output" => sc.plant.output = output_fn(e)?,
            "clock" => sc.plant.clock = e.float()?,
            "start" => {
                sc.plant.start = Some(match e.value.strip_prefix("pattern") {
                    Some(a) => Start::Pattern(e.parse(a.trim(), "address")?),
                    None => Start::Values(e.ints(&e.value)?),
                })
            }
            "policy" => {
                sc.plant.policy = match e.value.as_str() {
                    "clamp" => DisturbancePolicy::Clamp,
                    "strict" => DisturbancePolicy::Strict,
                    v => return Err(e.bad(format!("'{v}' is not clamp or strict"))),
                }
            }
            "divergence" => {
                let mut at = None;
                let mut branches = None;
                for r in &e.rows {
                    match r.key.as_str() {
                        "at" => at = Some(r.uint()?),
                        "branches" => branches = Some(r.list::<u64>(&r.value, "address")?),
                        _ => return Err(r.unknown("divergence")),
                    }
                }
                let (Some(at), Some(branches)) = (at, branches) else {
                    return Err(e.bad("divergence needs 'at' and 'branches' rows"));
                };
                sc.plant.divergences.push(DivergenceDecl {
                    name: e.value.clone(),
                    at,
                    branches,
                });
            }
            _ => return Err(e.unknown("PLANT")),
        }
    }
    sc.plant.kind = match kind_entry.map(|e| (e, e.value.as_str())) {
        None | Some((_, "static")) => PlantKind::Static,
        Some((e, "table")) => PlantKind::Table {
            successors: successors.ok_or_else(|| e.bad("table plant needs 'successors'"))?,
        },
        Some((e, "program")) => PlantKind::Program {
            path: program.ok_or_else(|| e.bad("program plant needs 'program'"))?,
            radius,
        },
        Some((e, v)) => return Err(e.bad(format!("'{v}' is not static, table or program"))),
    };
    Ok(())
}

fn parse_storage(s: &Section, sc: &mut Scenario, locs: &mut Locations) -> Result<()> {
    for e in &s.entries {
        e.no_rows()?;
        match e.key.as_str() {
            "pattern" => {
                let (addr, rest) = e
                    .value
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| e.bad("expected 'address form data'"))?;
                let address = e.parse(addr, "address")?;
                let rest = rest.trim();
                let (rest, fragment) = match rest.strip_suffix("fragment") {
                    Some(r) => (r.trim(), true),
                    None => (rest, false),
                };
                let (form, data) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                let data = data.trim();
                let source = match form {
                    "values" => PatternSource::Values {
                        values: e.ints(data)?,
                    },
                    "bits" => PatternSource::Bits {
                        bits: bits::parse_binary(data)
                            .ok_or_else(|| e.bad("not a binary string"))?,
                    },
                    "hex" => PatternSource::Bits {
                        bits: bits::parse_hex(data, None)
                            .ok_or_else(|| e.bad("not a hex string"))?,
                    },
                    _ => {
                        return Err(
                            e.bad(format!("pattern form '{form}' is not values, bits or hex"))
                        )
                    }
                };
                locs.insert(format!("pattern {address}"), (e.line, e.value_col));
                sc.storage.patterns.push(PatternDecl {
                    address,
                    source,
                    fragment,
                });
            }
            "generate" => {
                let w = e.words();
                let [count, "seed", seed] = w.as_slice() else {
                    return Err(e.bad("expected 'count seed s'"));
                };
                sc.storage.generate = Some(Generate {
                    count: e.parse(count, "count")?,
                    seed: e.parse(seed, "seed")?,
                });
                locs.insert("generate".into(), (e.line, e.value_col));
            }
            "recovery" => {
                sc.storage.recovery = Some(e.uint()?);
                locs.insert("recovery".into(), (e.line, e.value_col));
            }
            "trigger" => {
                let (sig, addr) = e
                    .value
                    .split_once("->")
                    .ok_or_else(|| e.bad("expected 'signature -> address'"))?;
                sc.storage
                    .triggers
                    .push((sig.trim().to_string(), e.parse(addr.trim(), "address")?));
                locs.insert("trigger".into(), (e.line, e.value_col));
            }
            _ => return Err(e.unknown("STORAGE")),
        }
    }
    Ok(())
}

fn parse_channels(s: &Section, sc: &mut Scenario) -> Result<()> {
    let c = &mut sc.channels;
    for e in &s.entries {
        e.no_rows()?;
        match e.key.as_str() {
            "q" => c.q = e.float()?,
            "r" => c.r = e.float()?,
            "n" => c.n = e.float()?,
            "m" => c.m = e.float()?,
            "ber.n" => c.ber_n = e.float()?,
            "ber.m" => c.ber_m = e.float()?,
            "duplex" => c.duplex = e.boolean()?,
            "tick_seconds" => c.tick_seconds = e.float()?,
            _ => return Err(e.unknown("CHANNELS")),
        }
    }
    Ok(())
}

fn parse_controller(s: &Section, sc: &mut Scenario) -> Result<()> {
    let c = &mut sc.controller;
    for e in &s.entries {
        e.no_rows()?;
        match e.key.as_str() {
            "error_classes" => c.error_classes = e.uint()?,
            "damage_cap" => c.damage_cap = e.float()?,
            "strategies" => {
                c.strategies = e
                    .words()
                    .into_iter()
                    .map(|w| {
                        StrategyKind::parse(w)
                            .ok_or_else(|| e.bad(format!("unknown strategy family '{w}'")))
                    })
                    .collect::<Result<_>>()?;
            }
            "policy" => {
                c.policy = match e.value.as_str() {
                    "greedy" => SwitchPolicy::Greedy,
                    "scheduled" => SwitchPolicy::Scheduled,
                    v => return Err(e.bad(format!("'{v}' is not greedy or scheduled"))),
                }
            }
            "iterations" => c.iterations = e.parse(e.value.trim(), "count")?,
            "erratic_limit" => c.erratic_limit = e.uint()?,
            "erratic_window" => c.erratic_window = e.uint()?,
            _ => return Err(e.unknown("CONTROLLER")),
        }
    }
    Ok(())
}

fn action(r: &Entry) -> Result<Action> {
    match r.key.as_str() {
        "demand" => Ok(Action::Demand { address: r.uint()? }),
        "jump" => Ok(Action::Jump {
            values: r.ints(&r.value)?,
        }),
        "flip" => Ok(Action::Flip {
            positions: r.list(&r.value, "bit position")?,
        }),
        "store" => {
            let (a, v) = r
                .value
                .split_once(char::is_whitespace)
                .ok_or_else(|| r.bad("expected 'address (values)'"))?;
            Ok(Action::Store {
                address: r.parse(a, "address")?,
                values: r.ints(v)?,
            })
        }
        "oscillate" => {
            let w = r.words();
            let ["period", p, "count", c, "between", a, b] = w.as_slice() else {
                return Err(r.bad("expected 'period p count c between a b'"));
            };
            Ok(Action::Oscillate {
                period: r.parse(p, "period")?,
                count: r.parse(c, "count")?,
                a: r.parse(a, "address")?,
                b: r.parse(b, "address")?,
            })
        }
        _ => Err(r.unknown("event")),
    }
}

fn parse_environment(s: &Section, sc: &mut Scenario, locs: &mut Locations) -> Result<()> {
    let env = &mut sc.environment;
    for e in &s.entries {
        if e.key != "event" {
            e.no_rows()?;
        }
        match e.key.as_str() {
            "demand" => env.initial_demand = Some(e.uint()?),
            "expect" => env.expect = e.list(&e.value, "probability")?,
            "violation_weight" => env.violation_weight = e.float()?,
            "demand_weight" => env.demand_weight = e.float()?,
            "stiffness" => {
                return Err(e.err(DslErrorKind::Constraint(
                    "stiffness is not modelled; use external events instead".into(),
                )))
            }
            "event" => {
                let tick = e.uint()?;
                let [row] = e.rows.as_slice() else {
                    return Err(e.bad("an event needs exactly one action row"));
                };
                locs.insert(
                    format!("event {}", env.events.len()),
                    (row.line, row.value_col),
                );
                env.events.push(EventDecl {
                    tick,
                    action: action(row)?,
                });
            }
            _ => return Err(e.unknown("ENVIRONMENT")),
        }
    }
    locs.insert("environment".into(), (s.line, 1));
    Ok(())
}

fn parse_run(s: &Section, sc: &mut Scenario, locs: &mut Locations) -> Result<()> {
    let r = &mut sc.run;
    for e in &s.entries {
        e.no_rows()?;
        match e.key.as_str() {
            "name" => r.name = e.value.clone(),
            "ticks" => r.ticks = e.uint()?,
            "seed" => r.seed = e.uint()?,
            "theta" => r.theta = e.uint()?,
            "start" => {
                r.start = Some(e.ints(&e.value)?);
                locs.insert("start".into(), (e.line, e.value_col));
            }
            "goal" => {
                r.goal = Some(e.ints(&e.value)?);
                locs.insert("goal".into(), (e.line, e.value_col));
            }
            "budgets" => r.budgets = e.list(&e.value, "budget")?,
            "epsilon" => r.epsilon = e.float()?,
            "components" => r.components = e.float()?,
            _ => return Err(e.unknown("RUN")),
        }
    }
    locs.insert("run".into(), (s.line, 1));
    Ok(())
}

/// Parses without building; the scenario may still be inconsistent.
fn parse_raw(text: &str) -> Result<(Scenario, Locations)> {
    let sections = lex(text)?;
    let mut sc = Scenario::default();
    let mut locs = Locations::new();
    for s in &sections {
        locs.entry(s.name.to_lowercase()).or_insert((s.line, 1));
        match s.name.as_str() {
            "SPACE" => parse_space(s, &mut sc, &mut locs)?,
            "LEGAL" => parse_legal(s, &mut sc)?,
            "PLANT" => parse_plant(s, &mut sc)?,
            "STORAGE" => parse_storage(s, &mut sc, &mut locs)?,
            "CHANNELS" => parse_channels(s, &mut sc)?,
            "CONTROLLER" => parse_controller(s, &mut sc)?,
            "ENVIRONMENT" => parse_environment(s, &mut sc, &mut locs)?,
            "RUN" => parse_run(s, &mut sc, &mut locs)?,
            _ => unreachable!("lexer admits only known sections"),
        }
    }
    Ok((sc, locs))
}

fn locate(locs: &Locations, item: &str) -> (usize, usize) {
    if let Some(l) = locs.get(item) {
        return *l;
    }
    let head = item.split_whitespace().next().unwrap_or(item);
    let section = match head {
        "dim" => "space",
        "divergence" => "plant",
        "pattern" | "generate" | "trigger" | "recovery" => "storage",
        "event" => "environment",
        "start" | "goal" => "run",
        other => other,
    };
    locs.get(section).copied().unwrap_or((1, 1))
}

/// Parses and validates a scenario, returning it with its built components.
pub fn load(text: &str) -> Result<(Scenario, Built)> {
    let (sc, locs) = parse_raw(text)?;
    match sc.build() {
        Ok(b) => Ok((sc, b)),
        Err(issue) => {
            let (line, column) = locate(&locs, &issue.item);
            Err(DslError {
                line,
                column,
                kind: DslErrorKind::Constraint(format!("{}: {}", issue.item, issue.message)),
            })
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    load(text).map(|(s, _)| s)
}

fn tuple(v: &[i64]) -> String {
    let parts: Vec<String> = v.iter().map(i64::to_string).collect();
    format!("({})", parts.join(","))
}

fn spaced<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn kind_text(k: &DimKind) -> String {
    match k {
        DimKind::Boolean => "bool".into(),
        DimKind::IntRange { lo, hi } => format!("int {lo}..{hi}"),
        DimKind::QuantizedReal { lo, hi, levels } => format!("real {lo:?}..{hi:?} / {levels}"),
    }
}

/// Splits `name` into a base and a trailing decimal index.
fn indexed(name: &str) -> Option<(&str, usize)> {
    let base = name.trim_end_matches(|c: char| c.is_ascii_digit());
    let digits = &name[base.len()..];
    if base.is_empty() || digits.is_empty() || (digits.len() > 1 && digits.starts_with('0')) {
        return None;
    }
    Some((base, digits.parse().ok()?))
}

fn write_space(out: &mut String, dims: &[DimDecl]) {
    let mut i = 0;
    while i < dims.len() {
        let mut run = 1;
        if let Some((base, 0)) = indexed(&dims[i].name) {
            while i + run < dims.len()
                && dims[i + run].kind == dims[i].kind
                && indexed(&dims[i + run].name) == Some((base, run))
            {
                run += 1;
            }
            let _ = writeln!(out, "  {base}[{run}] = {}", kind_text(&dims[i].kind));
        } else {
            let _ = writeln!(out, "  {} = {}", dims[i].name, kind_text(&dims[i].kind));
        }
        i += run;
    }
}

fn output_text(f: &OutputFn) -> String {
    match f {
        OutputFn::PopCount => "popcount".into(),
        OutputFn::Address => "address".into(),
        OutputFn::Constant { value } => format!("constant {value}"),
        OutputFn::Affine { scale, offset } => format!("affine {scale} {offset}"),
        OutputFn::Table { values } => format!("table {}", spaced(values)),
    }
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

/// Canonical text form. `parse_scenario(&serialize(&s))` reproduces `s`.
pub fn serialize(sc: &Scenario) -> String {
    let mut o = String::new();
    o.push_str("SPACE\n");
    write_space(&mut o, &sc.space);

    o.push_str("LEGAL\n");
    for r in &sc.legal {
        let _ = match r {
            LegalRule::Require { dim, predicate } => match predicate {
                Predicate::InRange { lo, hi } => writeln!(o, "  require = {dim} in {lo}..{hi}"),
                Predicate::Equals { value } => writeln!(o, "  require = {dim} == {value}"),
                Predicate::NotEquals { value } => writeln!(o, "  require = {dim} != {value}"),
            },
            LegalRule::Forbid { values } => writeln!(o, "  forbid = {}", tuple(values)),
            LegalRule::Allow { values } => writeln!(o, "  allow = {}", tuple(values)),
        };
    }

    let p = &sc.plant;
    o.push_str("PLANT\n");
    match &p.kind {
        PlantKind::Static => o.push_str("  kind = static\n"),
        PlantKind::Table { successors } => {
            let _ = writeln!(o, "  kind = table\n  successors = {}", spaced(successors));
        }
        PlantKind::Program { path, radius } => {
            let _ = writeln!(
                o,
                "  kind = program\n  program = {}\n  radius = {radius}",
                spaced(path)
            );
        }
    }
    let _ = writeln!(o, "  output = {}", output_text(&p.output));
    let _ = writeln!(o, "  clock = {}", float(p.clock));
    match &p.start {
        Some(Start::Values(v)) => {
            let _ = writeln!(o, "  start = {}", tuple(v));
        }
        Some(Start::Pattern(a)) => {
            let _ = writeln!(o, "  start = pattern {a}");
        }
        None => {}
    }
    let policy = match p.policy {
        DisturbancePolicy::Clamp => "clamp",
        DisturbancePolicy::Strict => "strict",
    };
    let _ = writeln!(o, "  policy = {policy}");
    for d in &p.divergences {
        let _ = writeln!(
            o,
            "  divergence = {}\n    at = {}\n    branches = {}",
            d.name,
            d.at,
            spaced(&d.branches)
        );
    }

    let st = &sc.storage;
    o.push_str("STORAGE\n");
    for pat in &st.patterns {
        let data = match &pat.source {
            PatternSource::Values { values } => format!("values {}", tuple(values)),
            PatternSource::Bits { bits: b } if !b.is_empty() && b.len() % 4 == 0 => {
                format!("hex {}", bits::to_hex(b))
            }
            PatternSource::Bits { bits: b } => format!("bits {}", bits::to_string(b)),
        };
        let frag = if pat.fragment { " fragment" } else { "" };
        let _ = writeln!(o, "  pattern = {} {data}{frag}", pat.address);
    }
    if let Some(g) = st.generate {
        let _ = writeln!(o, "  generate = {} seed {}", g.count, g.seed);
    }
    if let Some(r) = st.recovery {
        let _ = writeln!(o, "  recovery = {r}");
    }
    for (sig, a) in &st.triggers {
        let _ = writeln!(o, "  trigger = {sig} -> {a}");
    }

    let c = &sc.channels;
    o.push_str("CHANNELS\n");
    for (k, v) in [("q", c.q), ("r", c.r), ("n", c.n), ("m", c.m)] {
        let _ = writeln!(o, "  {k} = {}", float(v));
    }
    let _ = writeln!(
        o,
        "  ber.n = {}\n  ber.m = {}",
        float(c.ber_n),
        float(c.ber_m)
    );
    let _ = writeln!(
        o,
        "  duplex = {}\n  tick_seconds = {}",
        c.duplex,
        float(c.tick_seconds)
    );

    let ct = &sc.controller;
    o.push_str("CONTROLLER\n");
    let strategies: Vec<&str> = ct.strategies.iter().map(|s| s.name()).collect();
    let policy = match ct.policy {
        SwitchPolicy::Greedy => "greedy",
        SwitchPolicy::Scheduled => "scheduled",
    };
    let _ = writeln!(
        o,
        "  error_classes = {}\n  damage_cap = {}\n  strategies = {}\n  policy = {policy}\n  iterations = {}\n  erratic_limit = {}\n  erratic_window = {}",
        ct.error_classes,
        float(ct.damage_cap),
        strategies.join(" "),
        ct.iterations,
        ct.erratic_limit,
        ct.erratic_window
    );

    let env = &sc.environment;
    o.push_str("ENVIRONMENT\n");
    if let Some(d) = env.initial_demand {
        let _ = writeln!(o, "  demand = {d}");
    }
    if !env.expect.is_empty() {
        let v: Vec<String> = env.expect.iter().map(|x| float(*x)).collect();
        let _ = writeln!(o, "  expect = {}", v.join(" "));
    }
    let _ = writeln!(
        o,
        "  violation_weight = {}\n  demand_weight = {}",
        float(env.violation_weight),
        float(env.demand_weight)
    );
    for ev in &env.events {
        let row = match &ev.action {
            Action::Demand { address } => format!("demand = {address}"),
            Action::Jump { values } => format!("jump = {}", tuple(values)),
            Action::Flip { positions } => format!("flip = {}", spaced(positions)),
            Action::Store { address, values } => format!("store = {address} {}", tuple(values)),
            Action::Oscillate {
                period,
                count,
                a,
                b,
            } => format!("oscillate = period {period} count {count} between {a} {b}"),
        };
        let _ = writeln!(o, "  event = {}\n    {row}", ev.tick);
    }

    let r = &sc.run;
    o.push_str("RUN\n");
    let _ = writeln!(
        o,
        "  name = {}\n  ticks = {}\n  seed = {}\n  theta = {}",
        r.name, r.ticks, r.seed, r.theta
    );
    if let Some(s) = &r.start {
        let _ = writeln!(o, "  start = {}", tuple(s));
    }
    if let Some(g) = &r.goal {
        let _ = writeln!(o, "  goal = {}", tuple(g));
    }
    if !r.budgets.is_empty() {
        let _ = writeln!(o, "  budgets = {}", spaced(&r.budgets));
    }
    let _ = writeln!(
        o,
        "  epsilon = {}\n  components = {}",
        float(r.epsilon),
        float(r.components)
    );
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "SPACE\n  x = bool\nSTORAGE\n  pattern = 0 values (1)\n";

    #[test]
    fn minimal_gets_defaults() {
        let sc = parse_scenario(MINIMAL).unwrap();
        assert_eq!(sc.space.len(), 1);
        assert_eq!(sc.plant, PlantDecl::default());
        assert_eq!(sc.channels, ChannelDecl::default());
        assert_eq!(sc.controller, ControllerDecl::default());
        assert_eq!(sc.run, RunDecl::default());
        assert_eq!(parse_scenario(&serialize(&sc)).unwrap(), sc);
    }

    #[test]
    fn arrays_and_tables() {
        let text = "\
SPACE
  b[3] = bool   # three switches
  level = real -1.0..1.0 / 5
PLANT
  kind = table
  successors = 1 2 3 4 5 6 7 0 8 9 10 11 12 13 14 15 16 17 18 19 20 21 22 23 24 25 26 27 28 29 30 31 32 33 34 35 36 37 38 39
  divergence = A
    at = 1
    branches = 2 3
STORAGE
  pattern = 0 bits 000000
ENVIRONMENT
  event = 4
    jump = (1,1,1,2)
";
        let sc = parse_scenario(text).unwrap();
        assert_eq!(sc.space[2].name, "b2");
        assert_eq!(sc.plant.divergences[0].branches, vec![2, 3]);
        let again = serialize(&sc);
        assert!(again.contains("b[3] = bool"));
        assert_eq!(parse_scenario(&again).unwrap(), sc);
    }

    #[test]
    fn errors_carry_locations() {
        let e = parse_scenario("SPACE\n  x = bool\nPLANT\n  colour = red\n").unwrap_err();
        assert_eq!((e.line, e.column), (4, 3));
        assert!(matches!(e.kind, DslErrorKind::UnknownKey { .. }));

        let e = parse_scenario("SPACE\n  x = int 0..3\nSTORAGE\n  pattern = 0 values (9)\n")
            .unwrap_err();
        assert_eq!(e.line, 4);
        assert!(matches!(e.kind, DslErrorKind::Constraint(_)), "{e}");

        let e = parse_scenario("SPACE\n  x = bool\nWHATEVER\n").unwrap_err();
        assert_eq!(e.kind, DslErrorKind::UnknownSection("WHATEVER".into()));

        let e = parse_scenario("SPACE\n  x = maybe\n").unwrap_err();
        assert_eq!((e.line, e.column), (2, 7));

        let e = parse_scenario("SPACE\n  x = bool\nENVIRONMENT\n  stiffness = 3\n").unwrap_err();
        assert_eq!(e.line, 4);
    }
}

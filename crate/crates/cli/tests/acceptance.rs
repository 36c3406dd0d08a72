//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every check compares the library against an oracle written here from
//! first principles. Checks listed in `KNOWN_UNATTAINABLE` are reported as
//! failures but do not fail the target; any other failure does.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use omega_sim::bits::Bits;
use omega_sim::channels::{measure_q, transmit_with_errors, Channel, ChannelSet, RandomErrors};
use omega_sim::configspace::{
    hazard_key, ConfigPoint, ConfigSpace, LegalityMap, Predicate, SpaceError,
};
use omega_sim::controller::{
    eligible_strategies, evaluate_all, select_strategy, worst_case_damage, Family, Strategy,
    StrategyStep, TabulatedDamage, Target,
};
use omega_sim::engine::batch::run_seeds;
use omega_sim::engine::check::{embedded_corpus, mismatches, paper_check};
use omega_sim::engine::decompose::{decompose, default_parts, Operation};
use omega_sim::engine::metrics::{check_conservation, hazard, safety_report, system_hazard_key};
use omega_sim::engine::reach::{dwell_path, reachability};
use omega_sim::engine::report::trace_csv;
use omega_sim::engine::{load, parse_scenario, run, serialize};
use omega_sim::plant::{NestedPlant, OutputFn, Plant};

/// (criterion, check) pairs that cannot hold. See the decision log.
const KNOWN_UNATTAINABLE: &[(u32, &str)] = &[(1, "total reconfiguration time 19")];

struct Check {
    name: String,
    ok: bool,
    detail: String,
}

#[derive(Default)]
struct Criterion {
    checks: Vec<Check>,
}

impl Criterion {
    fn check(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            ok,
            detail: detail.into(),
        });
    }

    fn eq<T: PartialEq + std::fmt::Debug>(
        &mut self,
        name: impl Into<String>,
        expected: T,
        observed: T,
    ) {
        let ok = expected == observed;
        self.check(
            name,
            ok,
            format!("expected {expected:?}, observed {observed:?}"),
        );
    }
}

fn corpus(name: &str) -> String {
    embedded_corpus()
        .remove(name)
        .unwrap_or_else(|| panic!("{name} missing from the corpus"))
}

/// Smallest k with 2^k >= n.
fn bits_for(n: u64) -> u64 {
    let mut k = 0;
    while (1u64 << k) < n {
        k += 1;
    }
    k
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn criterion_1() -> Criterion {
    let mut c = Criterion::default();
    let (sc, built) = load(&corpus("paper_5_1.scn")).expect("scenario loads");
    let (trace, summary) = run(&sc, &built, sc.run.seed).expect("run completes");
    let ident = ceil_div(bits_for(8), 1);
    let select = ceil_div(bits_for(1024), 5);
    let transfer = ceil_div(2048, 128);
    let r = &trace.reconfigurations[0];
    c.eq(
        "identification 3 ticks",
        (3, ident),
        (r.identification_ticks, ident),
    );
    c.eq(
        "selection 2 ticks",
        (2, select),
        (r.selection_ticks, select),
    );
    c.eq(
        "transfer 16 ticks",
        (16, transfer),
        (r.transfer_ticks, transfer),
    );
    // Ticks in which virtual time stood still, read off the trace.
    let mut prev = 0;
    let mut frozen = Vec::new();
    for row in &trace.rows {
        if row.virtual_time == prev {
            frozen.push(row.tick);
        }
        prev = row.virtual_time;
    }
    let contiguous = frozen.windows(2).all(|w| w[1] == w[0] + 1);
    c.eq(
        "plant unresponsive 16 ticks",
        (16, true),
        (frozen.len() as u64, contiguous),
    );
    let first = frozen.first().copied().unwrap_or(0);
    let channels: BTreeSet<&str> = trace.rows[first as usize..first as usize + frozen.len()]
        .iter()
        .map(|r| r.channel.as_str())
        .collect();
    c.eq(
        "frozen ticks are exactly the n/m transfer",
        BTreeSet::from(["n+m"]),
        channels,
    );
    c.eq(
        "wall time equals the sum of the stages",
        ident + select + transfer,
        summary.reconf_wall_ticks,
    );
    c.check(
        "total reconfiguration time 19",
        summary.reconf_wall_ticks == 19,
        format!(
            "observed {}; the stated total 19 disagrees with the sum of its own stages 3+2+16=21",
            summary.reconf_wall_ticks
        ),
    );
    c
}

fn criterion_2() -> Criterion {
    let mut c = Criterion::default();
    let (sc, built) = load(&corpus("paper_5_1.scn")).expect("scenario loads");
    let d = decompose(
        &sc,
        &built,
        Operation::Plant,
        &default_parts(Operation::Plant, &built),
    )
    .expect("decomposition runs");
    c.eq("split permissible", true, d.report.permissible);
    c.eq(
        "transfer before split",
        ceil_div(2048, 128),
        d.before[0].transfer,
    );
    c.eq(
        "transfer after split",
        ceil_div(1024, 128),
        d.after[0].transfer,
    );
    c.eq("factor of 2", 2, d.before[0].transfer / d.after[0].transfer);
    c.eq("trace equivalence", Some(true), d.report.trace_equal);
    c
}

fn criterion_3() -> Criterion {
    let mut c = Criterion::default();
    let (_, built) = load(&corpus("divergence.scn")).expect("scenario loads");
    // Oracle: enumerate the four settings of A and B by hand.
    let base = [1u64, 2, 0, 4, 0, 0, 6, 7];
    let mut maps = BTreeSet::new();
    let mut lengths = Vec::new();
    for a in [2u64, 3] {
        for b in [4u64, 5] {
            let mut m = base;
            m[1] = a;
            m[3] = b;
            maps.insert(m);
            // Divergences met on the trajectory from 0 before it repeats.
            let mut seen = HashSet::new();
            let mut met = BTreeSet::new();
            let mut x = 0u64;
            while seen.insert(x) {
                if x == 1 || x == 3 {
                    met.insert(x);
                }
                x = m[x as usize];
            }
            lengths.push(met.len() as u32);
        }
    }
    let psi = bits_for(maps.len() as u64) as u32;
    let mean = lengths.iter().sum::<u32>() as f64 / lengths.len() as f64;
    let max = *lengths.iter().max().unwrap();
    c.eq("selection bits 2", (2, psi), (built.plant.psi_bits(), psi));
    let (m, x) = built.plant.selection_code_stats().expect("stats");
    c.eq("stored selection mean 1.5", (1.5, mean), (m, mean));
    c.eq("stored selection max 2", (2, max), (x, max));
    c
}

/// Dwell-constrained BFS over integer codes.
fn oracle_dwell(
    width: u32,
    legal: &dyn Fn(u64) -> bool,
    start: u64,
    goal: u64,
    budget: u32,
    theta: u64,
) -> Option<usize> {
    let n = 1u64 << width;
    let mut dist: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let s = (start, u64::from(!legal(start)));
    dist.insert(s, 0);
    let mut q = VecDeque::from([s]);
    while let Some((x, dw)) = q.pop_front() {
        let d = dist[&(x, dw)];
        if x == goal {
            return Some(d);
        }
        for y in 0..n {
            if y == x || (x ^ y).count_ones() > budget {
                continue;
            }
            let ndw = if legal(y) { 0 } else { dw + 1 };
            if ndw + 1 > theta || dist.contains_key(&(y, ndw)) {
                continue;
            }
            dist.insert((y, ndw), d + 1);
            q.push_back((y, ndw));
        }
    }
    None
}

fn criterion_4() -> Criterion {
    let mut c = Criterion::default();
    let (sc, built) = load(&corpus("three_components.scn")).expect("scenario loads");
    let rows = reachability(&sc, &built, &[3, 2], 1).expect("reachability");
    c.eq(
        "budget 3 reachable in 1 step",
        (true, Some(1)),
        (rows[0].reachable, rows[0].path_len),
    );
    c.eq("budget 2 unreachable", false, rows[1].reachable);
    let allowed = |x: u64| x == 0 || x == 7;
    for theta in 1..=3 {
        for budget in 1..=3 {
            let ours = dwell_path(
                &built.space,
                &built.point(&[1, 1, 1]).unwrap(),
                &built.point(&[0, 0, 0]).unwrap(),
                budget,
                theta,
                64,
            )
            .unwrap()
            .map(|p| p.len() - 1);
            c.eq(
                format!("three components, budget {budget}, dwell {theta}"),
                oracle_dwell(3, &allowed, 7, 0, budget, theta),
                ours,
            );
        }
    }

    let (sc, built) = load(&corpus("corridor.scn")).expect("scenario loads");
    let rows = reachability(&sc, &built, &sc.run.budgets, sc.run.theta).expect("reachability");
    let legal: BTreeSet<u64> = [0b000000, 0b110000, 0b111000, 0b111100, 0b111111].into();
    let lens: Vec<Option<usize>> = rows.iter().map(|r| r.path_len).collect();
    let oracle: Vec<Option<usize>> = sc
        .run
        .budgets
        .iter()
        .map(|&b| oracle_dwell(6, &|x| legal.contains(&x), 0, 63, b, sc.run.theta))
        .collect();
    c.eq(
        "corridor path lengths match the oracle",
        oracle,
        lens.clone(),
    );
    let key = |l: &Option<usize>| l.unwrap_or(usize::MAX);
    let mut budgets_desc: Vec<(u32, Option<usize>)> =
        sc.run.budgets.iter().copied().zip(lens).collect();
    budgets_desc.sort_by_key(|b| std::cmp::Reverse(b.0));
    let monotone = budgets_desc
        .windows(2)
        .all(|w| key(&w[0].1) <= key(&w[1].1));
    let strict_somewhere = budgets_desc
        .windows(2)
        .filter(|w| key(&w[0].1) < key(&w[1].1))
        .count()
        >= 2;
    c.check(
        "path length non-decreasing as budget falls",
        monotone && strict_somewhere,
        format!("{budgets_desc:?}"),
    );
    c
}

fn criterion_5() -> Criterion {
    let mut c = Criterion::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = ChannelSet::new(1.0, 1.0, 4.0, 4.0).unwrap();
    for round in 0..20 {
        let count = rng.random_range(1..=100usize);
        let mut strategies = Vec::new();
        let mut profiles = BTreeMap::new();
        for id in 0..count as u64 {
            let t = rng.random_range(1..=12u64);
            let payload = rng.random_range(0..=4 * t);
            let steps = vec![StrategyStep {
                target: Target::Pattern { address: 0 },
                tick: 0,
                channel: Channel::N,
                payload_bits: payload,
            }];
            // Costs repeat often so the tie-breaks matter.
            let cost = rng.random_range(0..5u32) as f64;
            strategies.push(Strategy {
                id,
                steps,
                t_reconf: t,
                cost,
                family: Family::Spontaneous,
            });
            let profile: Vec<f64> = (0..t + 3)
                .map(|_| rng.random_range(0..4u32) as f64 * 0.5)
                .collect();
            profiles.insert(id, profile);
        }
        let evaluated =
            evaluate_all(&strategies, &TabulatedDamage(profiles.clone()), &set).unwrap();
        let oracle_damage: Vec<f64> = strategies
            .iter()
            .map(|s| profiles[&s.id][..s.t_reconf as usize].iter().sum())
            .collect();
        let damage: Vec<f64> = evaluated.iter().map(|e| e.damage).collect();
        let mut all_ok = damage == oracle_damage;
        let worst = oracle_damage
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        all_ok &= worst_case_damage(&evaluated) == Some(worst);
        let mut sorted = oracle_damage.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let mut previous: Option<BTreeSet<u64>> = None;
        for cap in [0.0, median, f64::INFINITY] {
            let eligible = eligible_strategies(&evaluated, cap);
            let ids: BTreeSet<u64> = eligible.iter().map(|e| e.strategy.id).collect();
            let oracle_ids: BTreeSet<u64> = (0..count as u64)
                .filter(|&i| oracle_damage[i as usize] < cap)
                .collect();
            all_ok &= ids == oracle_ids;
            if let Some(p) = &previous {
                all_ok &= p.is_subset(&ids);
            }
            // Brute-force selection: cheapest, then fastest, then lowest id.
            let best = oracle_ids.iter().copied().min_by(|&a, &b| {
                let (sa, sb) = (&strategies[a as usize], &strategies[b as usize]);
                sa.cost
                    .total_cmp(&sb.cost)
                    .then(sa.t_reconf.cmp(&sb.t_reconf))
                    .then(a.cmp(&b))
            });
            all_ok &= select_strategy(&eligible).ok().map(|e| e.strategy.id) == best;
            previous = Some(ids);
        }
        c.check(
            format!("round {round}: {count} strategies"),
            all_ok,
            "damage, worst case, eligibility or selection differ",
        );
    }
    c
}

/// Brute-force minimum distance between legal and illegal codes.
fn oracle_hazard(width: u32, legal: &dyn Fn(u64) -> bool, subset: Option<&[u64]>) -> Option<u32> {
    let all: Vec<u64> = (0..1u64 << width).collect();
    let l: Vec<u64> = subset.map_or_else(
        || all.iter().copied().filter(|&x| legal(x)).collect(),
        |s| s.to_vec(),
    );
    let n: Vec<u64> = all.iter().copied().filter(|&x| !legal(x)).collect();
    l.iter()
        .flat_map(|a| n.iter().map(move |b| (a ^ b).count_ones()))
        .min()
}

fn code_of(values: &[i64]) -> u64 {
    values.iter().fold(0, |acc, &v| (acc << 1) | v as u64)
}

fn criterion_6() -> Criterion {
    let mut c = Criterion::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut keys_ok = true;
    let mut behaviors_ok = true;
    for _ in 0..25 {
        let width = rng.random_range(2..=12u32);
        let forbidden: BTreeSet<u64> = (0..rng.random_range(1..=4))
            .map(|_| rng.random_range(0..1u64 << width))
            .collect();
        let pinned = rng
            .random_bool(0.3)
            .then(|| rng.random_range(0..width as usize));
        let mut legality = LegalityMap::all_legal();
        for &f in &forbidden {
            legality = legality.forbid((0..width).rev().map(|i| ((f >> i) & 1) as i64).collect());
        }
        if let Some(d) = pinned {
            legality = legality.require(d, Predicate::Equals { value: 0 });
        }
        let space = ConfigSpace::booleans(width as usize).with_legality(legality);
        let legal = |x: u64| {
            !forbidden.contains(&x)
                && pinned.is_none_or(|d| (x >> (width as usize - 1 - d)) & 1 == 0)
        };
        keys_ok &= hazard(&space, None).unwrap() == oracle_hazard(width, &legal, None);
        // Behaviors: random subsets of legal points.
        let legal_codes: Vec<u64> = (0..1u64 << width).filter(|&x| legal(x)).collect();
        if legal_codes.is_empty() {
            continue;
        }
        let mut behaviors = Vec::new();
        let mut per = Vec::new();
        for _ in 0..3 {
            let sub: Vec<u64> = (0..rng.random_range(1..=4))
                .map(|_| legal_codes[rng.random_range(0..legal_codes.len())])
                .collect();
            per.push(oracle_hazard(width, &legal, Some(&sub)));
            let point = |x: u64| {
                space
                    .point((0..width).rev().map(|i| ((x >> i) & 1) as i64).collect())
                    .unwrap()
            };
            behaviors.push(sub.iter().map(|&x| point(x)).collect::<Vec<ConfigPoint>>());
        }
        let oracle_min = per.iter().flatten().min().copied();
        behaviors_ok &= system_hazard_key(&space, &behaviors).unwrap() == oracle_min;
        for (b, o) in behaviors.iter().zip(&per) {
            behaviors_ok &= hazard(&space, Some(b)).unwrap() == *o;
        }
    }
    c.check(
        "hazard key equals the all-pairs minimum on random spaces up to 2^12",
        keys_ok,
        "mismatch on a random space",
    );
    c.check(
        "system key is the minimum over behaviors",
        behaviors_ok,
        "mismatch on a random behavior set",
    );

    // Hybrid plant x environment space: 2 plant bits, a 2-bit environment level.
    let text = "SPACE\n  b[2] = bool\n  env.load = int 0..3\nLEGAL\n  require = b0 == 0\n  require = env.load in 0..2\nPLANT\n  start = (0,0)\nSTORAGE\n  pattern = 0 values (0,0)\nRUN\n  epsilon = 0.004\n  components = 3\n";
    let (sc, built) = load(text).expect("hybrid scenario loads");
    let report = safety_report(&sc, &built).expect("safety");
    let plant_legal = |x: u64| (x >> 1) & 1 == 0;
    let hybrid_legal = |x: u64| (x >> 3) & 1 == 0 && (x & 3) <= 2;
    let r = 3.0 / (0.004 * 2.0);
    c.eq(
        "h_k over the plant space",
        oracle_hazard(2, &plant_legal, None),
        report.h_k,
    );
    c.eq(
        "h_kp over the hybrid space",
        oracle_hazard(4, &hybrid_legal, None),
        report.h_kp,
    );
    c.eq("R = m / (epsilon psi)", r, report.r);
    c.eq("S = h_kp R", report.h_kp.map(|h| h as f64 * r), report.s);

    let free = ConfigSpace::booleans(3);
    c.eq("empty N: no hazard", None, hazard(&free, None).unwrap());
    c.check(
        "empty N is distinct from empty L",
        matches!(hazard_key(&free, None, 64), Err(SpaceError::NoHazard)),
        "expected the no-hazard error",
    );
    let (sc, built) = load("SPACE\n  b[2] = bool\nSTORAGE\n  pattern = 0 values (0,0)\n").unwrap();
    c.eq(
        "no hazard leaves S undefined",
        None,
        safety_report(&sc, &built).unwrap().s,
    );
    c
}

fn random_plant(space: &ConfigSpace, rng: &mut ChaCha8Rng) -> (Plant, Vec<u64>) {
    let n = space.cardinality().unwrap();
    let succ: Vec<u64> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let table = succ.clone();
    (
        Plant::from_fn(space.clone(), move |i| table[i as usize], OutputFn::Address).unwrap(),
        succ,
    )
}

fn criterion_7() -> Criterion {
    let mut c = Criterion::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Corrective field: every point within `radius` bit flips of the program
    // returns to it in exactly that many steps.
    let mut field_ok = true;
    for _ in 0..12 {
        let width = rng.random_range(2..=10usize);
        let space = ConfigSpace::booleans(width);
        let n = 1u64 << width;
        let len = rng.random_range(1..=4usize.min(n as usize));
        let mut program: Vec<u64> = Vec::new();
        while program.len() < len {
            let x = rng.random_range(0..n);
            if !program.contains(&x) {
                program.push(x);
            }
        }
        let next: BTreeMap<u64, u64> = program
            .iter()
            .enumerate()
            .map(|(i, &a)| (a, program[(i + 1) % len]))
            .collect();
        let mut plant = Plant::from_fn(
            space.clone(),
            |i| next.get(&i).copied().unwrap_or(i),
            OutputFn::Address,
        )
        .unwrap();
        let radius = rng.random_range(1..=3u32);
        plant.install_corrective_field(&program, radius).unwrap();
        let codes: Vec<u64> = program
            .iter()
            .map(|&a| code_of(space.point_at(a).unwrap().values()))
            .collect();
        for idx in 0..n {
            let code = code_of(space.point_at(idx).unwrap().values());
            let d = codes.iter().map(|p| (p ^ code).count_ones()).min().unwrap();
            if d == 0 || d > radius {
                continue;
            }
            let mut p = plant.clone();
            p.set_active_index(idx).unwrap();
            let mut steps = 0;
            while !program.contains(&p.active_index().unwrap()) && steps <= radius {
                p.step(0, None).unwrap();
                steps += 1;
            }
            field_ok &= steps == d;
        }
    }
    c.check(
        "corrective field returns in-basin points within the radius",
        field_ok,
        "a point missed the program",
    );

    // Nested plant against its flattening, from every joint start.
    let mut nested_ok = true;
    for _ in 0..10 {
        let outer_space = ConfigSpace::booleans(rng.random_range(1..=2));
        let inner_space = ConfigSpace::booleans(rng.random_range(1..=4));
        let (outer, _) = random_plant(&outer_space, &mut rng);
        let (inner, _) = random_plant(&inner_space, &mut rng);
        let oc = outer_space.cardinality().unwrap();
        let ic = inner_space.cardinality().unwrap();
        let hosts: BTreeSet<u64> = (0..oc).filter(|_| rng.random_bool(0.5)).collect();
        for a in 0..oc {
            for b in 0..ic {
                let mut o = outer.clone();
                o.set_active_index(a).unwrap();
                let mut i = inner.clone();
                i.set_active_index(b).unwrap();
                let mut nested = NestedPlant::new(o, i, hosts.clone()).unwrap();
                let mut flat = nested.flatten().unwrap();
                for _ in 0..2 * oc * ic {
                    let x = nested.step(0).unwrap();
                    let y = flat.step(0, None).unwrap().output;
                    nested_ok &= x == y;
                }
            }
        }
    }
    c.check(
        "flattened nesting reproduces the nested trace",
        nested_ok,
        "outputs diverged",
    );

    // Autonomous runs enter a cycle within |space| steps.
    let mut cycle_ok = true;
    for _ in 0..12 {
        let space = ConfigSpace::booleans(rng.random_range(1..=10));
        let (plant, succ) = random_plant(&space, &mut rng);
        let n = succ.len() as u64;
        for start in (0..n).step_by(((n / 64) as usize).max(1)) {
            let (tail, len) = plant.find_cycle(start).unwrap();
            let mut first = vec![u64::MAX; n as usize];
            let mut x = start;
            let mut t = 0;
            while first[x as usize] == u64::MAX {
                first[x as usize] = t;
                x = succ[x as usize];
                t += 1;
            }
            cycle_ok &=
                (tail, len) == (first[x as usize], t - first[x as usize]) && tail + len <= n;
        }
    }
    c.check(
        "cycle reached within |space| steps",
        cycle_ok,
        "cycle detection disagreed",
    );
    c
}

fn criterion_8() -> Criterion {
    let mut c = Criterion::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exact = 0;
    let mut conserved = true;
    for trial in 0..1000u64 {
        let mut payload = Bits::with_capacity(2048);
        for _ in 0..2048 {
            payload.push(rng.random_bool(0.5));
        }
        let mut src = RandomErrors {
            seed: trial,
            channel: Channel::N,
            ber: 1e-3,
        };
        let rep = transmit_with_errors(&payload, true, &mut src).expect("repair succeeds");
        if rep.received == payload {
            exact += 1;
        }
        conserved &= rep.sent_bits == rep.payload_bits + rep.redundancy_bits + rep.rerequested_bits;
    }
    c.eq("duplex repair exact in 1000 trials", 1000, exact);
    c.check(
        "per-transfer bit conservation",
        conserved,
        "sent != payload + redundancy + re-requests",
    );

    // Conservation on every trace, including noisy channels.
    let mut traces_ok = true;
    let mut detail = String::new();
    let mut texts: Vec<(String, String)> = embedded_corpus().into_iter().collect();
    let noisy =
        corpus("two_mode.scn").replace("m = 1\n", "m = 1\n  ber.n = 0.05\n  ber.m = 0.05\n");
    texts.push((
        "noisy two_mode".into(),
        noisy.replace("strategies = delta", "strategies = spontaneous delta"),
    ));
    for (name, text) in &texts {
        let (sc, built) = load(text).expect("corpus loads");
        for seed in 0..3 {
            let (trace, _) = run(&sc, &built, seed).expect("run completes");
            if let Err(e) = check_conservation(&trace) {
                traces_ok = false;
                detail = format!("{name} seed {seed}: {e}");
            }
        }
    }
    c.check("ledger conservation on every trace", traces_ok, detail);

    c.eq(
        "KL of identical distributions",
        0.0,
        measure_q(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(),
    );
    let mut nonneg = true;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=8);
        let p: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let q: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        nonneg &= measure_q(&p, &q).unwrap() >= 0.0;
    }
    c.check(
        "KL non-negative on 10,000 random pairs",
        nonneg,
        "negative divergence",
    );
    c
}

fn criterion_9() -> Criterion {
    let mut c = Criterion::default();
    let corpus = embedded_corpus();
    for (name, text) in &corpus {
        let (sc, built) = load(text).expect("corpus loads");
        let a = trace_csv(&run(&sc, &built, 11).unwrap().0);
        let b = trace_csv(&run(&sc, &built, 11).unwrap().0);
        c.check(
            format!("{name}: identical traces across runs"),
            a == b,
            "traces differ",
        );
        let seeds = [1, 2, 3, 4];
        let one: Vec<String> = run_seeds(&sc, &built, &seeds, 1)
            .into_iter()
            .map(|r| trace_csv(&r.unwrap().0))
            .collect();
        let four: Vec<String> = run_seeds(&sc, &built, &seeds, 4)
            .into_iter()
            .map(|r| trace_csv(&r.unwrap().0))
            .collect();
        c.check(
            format!("{name}: identical traces across thread counts"),
            one == four,
            "traces differ",
        );
        let parsed = parse_scenario(text).unwrap();
        let again = parse_scenario(&serialize(&parsed)).unwrap();
        c.check(
            format!("{name}: canonical round-trip"),
            parsed == again,
            "serialize/parse changed the scenario",
        );
    }
    c.eq(
        "paper-check mismatches",
        0,
        mismatches(&paper_check(&corpus)),
    );
    let status = Command::new(env!("CARGO_BIN_EXE_omega-sim"))
        .arg("paper-check")
        .output()
        .expect("binary runs");
    c.eq("paper-check exit code", Some(0), status.status.code());
    c
}

type CriterionFn = fn() -> Criterion;

fn main() {
    let criteria: [(u32, &str, CriterionFn); 9] = [
        (1, "worked example timing", criterion_1),
        (2, "plant split halves the transfer", criterion_2),
        (3, "selection sizes of the divergence plant", criterion_3),
        (4, "dwell-constrained reachability", criterion_4),
        (
            5,
            "damage evaluation, eligibility and selection",
            criterion_5,
        ),
        (6, "reliability, hazard keys and safety", criterion_6),
        (7, "plant properties", criterion_7),
        (8, "channel properties", criterion_8),
        (9, "determinism and formats", criterion_9),
    ];
    let mut unexpected = 0;
    for (n, title, f) in criteria {
        let result = f();
        let failed: Vec<&Check> = result.checks.iter().filter(|c| !c.ok).collect();
        if failed.is_empty() {
            println!(
                "PASS criterion {n}: {title} ({} checks)",
                result.checks.len()
            );
            continue;
        }
        println!("FAIL criterion {n}: {title}");
        for ch in &failed {
            let known = KNOWN_UNATTAINABLE.contains(&(n, ch.name.as_str()));
            println!(
                "    {}{}: {}",
                if known { "[known] " } else { "" },
                ch.name,
                ch.detail
            );
            if !known {
                unexpected += 1;
            }
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} unexpected failing checks");
        std::process::exit(1);
    }
}

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::sample::subsequence;

use omega_sim::bits::Bits;
use omega_sim::channels::{
    transfer_time, transmit_with_errors, Channel, ChannelSet, ErrorSource, RandomErrors,
};
use omega_sim::configspace::{
    detect_bridges_and_barriers, hazard_key, ConfigPoint, ConfigSpace, Dimension, LegalityMap,
};
use omega_sim::controller::{
    eligible_strategies, evaluate_all, select_strategy, Evaluated, Family, Strategy as Plan,
    StrategyStep, TabulatedDamage, Target,
};
use omega_sim::engine::metrics::check_conservation;
use omega_sim::engine::{load, parse_scenario, run, serialize};
use omega_sim::storage::{
    compress, decompress, delta_encode, AssemblyRule, Codec, CompressMode, FragmentPlacement,
    PatternKind, Repository, RunLengthCodec,
};

fn bits_from(v: &[bool]) -> Bits {
    v.iter().copied().collect()
}

fn dimension() -> impl Strategy<Value = Dimension> {
    prop_oneof![
        Just(Dimension::boolean("flag")),
        (-20i64..20, 1i64..40)
            .prop_map(|(lo, span)| Dimension::int_range("level", lo, lo + span).unwrap()),
        (2u32..9).prop_map(|levels| Dimension::quantized("gain", -1.0, 1.0, levels).unwrap()),
    ]
}

fn space() -> impl Strategy<Value = ConfigSpace> {
    prop::collection::vec(dimension(), 1..5).prop_map(|dims| {
        let dims = dims
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let name = format!("{}{i}", d.name());
                Dimension::new(name, d.kind().clone()).unwrap()
            })
            .collect();
        ConfigSpace::new(dims).unwrap()
    })
}

fn points(space: &ConfigSpace, k: usize) -> impl Strategy<Value = Vec<ConfigPoint>> {
    let n = space.cardinality().unwrap();
    let space = space.clone();
    prop::collection::vec(0..n, k)
        .prop_map(move |ix| ix.into_iter().map(|i| space.point_at(i).unwrap()).collect())
}

/// Boolean space with a few forbidden codes; codes read b0 as the top bit.
fn forbidding(width: usize, forbidden: &[u64]) -> ConfigSpace {
    let mut legality = LegalityMap::all_legal();
    for f in forbidden {
        legality = legality.forbid((0..width).rev().map(|i| ((f >> i) & 1) as i64).collect());
    }
    ConfigSpace::booleans(width).with_legality(legality)
}

fn boolean_point(space: &ConfigSpace, code: u64) -> ConfigPoint {
    let w = space.dims().len();
    space
        .point((0..w).rev().map(|i| ((code >> i) & 1) as i64).collect())
        .unwrap()
}

fn single_step(id: u64, t: u64, cost: f64) -> Plan {
    let steps = vec![StrategyStep {
        target: Target::Pattern { address: 0 },
        tick: 0,
        channel: Channel::N,
        payload_bits: t,
    }];
    Plan {
        id,
        steps,
        t_reconf: t,
        cost,
        family: Family::Spontaneous,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_round_trip((s, ps) in space().prop_flat_map(|s| { let p = points(&s, 4); (Just(s), p) })) {
        for p in &ps {
            let code = s.encode(p).unwrap();
            prop_assert_eq!(code.len(), s.total_width());
            prop_assert_eq!(&s.decode(&code).unwrap(), p);
            prop_assert_eq!(s.point_at(s.index_of(p).unwrap()).unwrap(), p.clone());
        }
    }

    #[test]
    fn bit_distance_is_a_metric((s, ps) in space().prop_flat_map(|s| { let p = points(&s, 3); (Just(s), p) })) {
        let d = |a: &ConfigPoint, b: &ConfigPoint| s.bit_distance(a, b).unwrap();
        let (a, b, c) = (&ps[0], &ps[1], &ps[2]);
        prop_assert_eq!(d(a, a), 0);
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert_eq!(d(a, b) == 0, a == b);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c));
    }

    #[test]
    fn hazard_key_of_a_union_is_the_minimum(
        width in 2usize..7,
        forbidden in prop::collection::vec(any::<u64>(), 1..4),
        a in prop::collection::vec(any::<u64>(), 1..4),
        b in prop::collection::vec(any::<u64>(), 1..4),
    ) {
        let mask = (1u64 << width) - 1;
        let forbidden: Vec<u64> = forbidden.iter().map(|f| f & mask).collect();
        let s = forbidding(width, &forbidden);
        let legal: Vec<u64> = (0..=mask).filter(|x| !forbidden.contains(x)).collect();
        prop_assume!(!legal.is_empty());
        let pick = |v: &[u64]| v.iter().map(|x| boolean_point(&s, legal[(*x as usize) % legal.len()])).collect::<Vec<_>>();
        let (pa, pb) = (pick(&a), pick(&b));
        let union: Vec<ConfigPoint> = pa.iter().chain(&pb).cloned().collect();
        let ka = hazard_key(&s, Some(&pa), 1 << 12).unwrap();
        let kb = hazard_key(&s, Some(&pb), 1 << 12).unwrap();
        prop_assert_eq!(hazard_key(&s, Some(&union), 1 << 12).unwrap(), ka.min(kb));
        prop_assert!(hazard_key(&s, None, 1 << 12).unwrap() <= ka.min(kb));
    }

    #[test]
    fn bridges_are_monotone_in_budget(
        width in 2usize..7,
        forbidden in prop::collection::vec(any::<u64>(), 0..12),
        ends in (any::<u64>(), any::<u64>()),
    ) {
        let mask = (1u64 << width) - 1;
        let forbidden: Vec<u64> = forbidden.iter().map(|f| f & mask).collect();
        let s = forbidding(width, &forbidden);
        let (start, goal) = (ends.0 & mask, ends.1 & mask);
        prop_assume!(!forbidden.contains(&start) && !forbidden.contains(&goal));
        let (p, q) = (boolean_point(&s, start), boolean_point(&s, goal));
        let reports: Vec<_> = (0..=width as u32)
            .map(|b| detect_bridges_and_barriers(&s, &p, &q, b, 1 << 12).unwrap())
            .collect();
        let min = reports[0].min_budget;
        for (b, r) in reports.iter().enumerate() {
            prop_assert_eq!(r.min_budget, min);
            prop_assert_eq!(r.reachable, b as u32 >= min);
            if r.reachable {
                prop_assert!(r.path.windows(2).all(|w| s.bit_distance(&w[0], &w[1]).unwrap() <= b as u32));
                prop_assert!(r.path.iter().all(|x| s.is_legal(x)));
            }
        }
        prop_assert!(reports[width].reachable);
    }

    #[test]
    fn delta_round_trip(pair in (1usize..300).prop_flat_map(|n| (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)))) {
        let (old, new) = (bits_from(&pair.0), bits_from(&pair.1));
        let d = delta_encode(&old, &new).unwrap();
        prop_assert_eq!(d.apply(&old).unwrap(), new.clone());
        prop_assert_eq!(d.positions.len() as u32, omega_sim::bits::hamming(&old, &new));
    }

    #[test]
    fn run_length_round_trip(v in prop::collection::vec(any::<bool>(), 0..400), runs in any::<bool>()) {
        // Long runs exercise the run-length branch, random bits the raw fallback.
        let input: Bits = if runs { v.iter().flat_map(|b| std::iter::repeat_n(*b, 7)).collect() } else { bits_from(&v) };
        let packed = RunLengthCodec.compress(&input);
        prop_assert_eq!(RunLengthCodec.decompress(&packed).unwrap(), input.clone());
        prop_assert_eq!(decompress(&compress(&input, CompressMode::Lossless, None).unwrap(), CompressMode::Lossless, None, false).unwrap(), input);
    }

    #[test]
    fn repairable_keeps_uncovered_bits(pair in (1usize..200).prop_flat_map(|n| (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)))) {
        let (pattern, mask) = (bits_from(&pair.0), bits_from(&pair.1));
        let packed = compress(&pattern, CompressMode::Repairable, Some(&mask)).unwrap();
        let back = decompress(&packed, CompressMode::Repairable, Some(&mask), false).unwrap();
        prop_assert_eq!(back.len(), pattern.len());
        for i in 0..pattern.len() {
            if !mask[i] {
                prop_assert_eq!(back[i], pattern[i]);
            }
        }
    }

    #[test]
    fn recluster_never_raises_cost(n in 2u64..12, log in prop::collection::vec((any::<u64>(), any::<u64>()), 1..40)) {
        let mut repo = Repository::new();
        for a in 0..n {
            repo.insert(a, bits_from(&[a % 2 == 0, true]), PatternKind::Full).unwrap();
        }
        let log: Vec<(u64, u64)> = log.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let next = repo.recluster(&log).unwrap();
        prop_assert!(next.mean_relative_cost(&log).unwrap() <= repo.mean_relative_cost(&log).unwrap());
        prop_assert_eq!(next.addresses().collect::<Vec<_>>(), repo.addresses().collect::<Vec<_>>());
    }

    #[test]
    fn assembly_ignores_part_order(
        frags in prop::collection::vec((0usize..4, prop::collection::vec(any::<bool>(), 1..9)), 1..6),
        default in any::<bool>(),
        shuffle in any::<u64>(),
    ) {
        let mut repo = Repository::new();
        let mut parts = Vec::new();
        let mut offset = 0;
        for (i, (gap, bits)) in frags.iter().enumerate() {
            offset += gap;
            repo.insert(i as u64, bits_from(bits), PatternKind::Fragment).unwrap();
            parts.push(FragmentPlacement { address: i as u64, offset });
            offset += bits.len();
        }
        let rule = AssemblyRule { name: "r".into(), length: offset + 2, parts: parts.clone(), default };
        let mut shuffled = parts;
        let k = shuffled.len();
        shuffled.rotate_left((shuffle as usize) % k);
        if shuffle & 1 == 1 {
            shuffled.reverse();
        }
        let other = AssemblyRule { parts: shuffled, ..rule.clone() };
        let a = repo.assemble(&rule).unwrap();
        prop_assert_eq!(&a, &repo.assemble(&other).unwrap());
        prop_assert_eq!(a[offset], default);
    }

    #[test]
    fn selection_ignores_cost_scale_and_eligibility_grows_with_cap(
        specs in prop::collection::vec((1u64..10, 0u32..6, prop::collection::vec(0u32..5, 12)), 1..30),
        exp in -8i32..8,
        caps in (0u32..60, 0u32..60),
    ) {
        let set = ChannelSet::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let scale = 2f64.powi(exp);
        let plain: Vec<Plan> = specs.iter().enumerate().map(|(i, (t, c, _))| single_step(i as u64, *t, *c as f64)).collect();
        let scaled: Vec<Plan> = plain.iter().map(|s| Plan { cost: s.cost * scale, ..s.clone() }).collect();
        let profiles = TabulatedDamage(specs.iter().enumerate().map(|(i, (_, _, p))| (i as u64, p.iter().map(|x| *x as f64).collect())).collect::<BTreeMap<_, _>>());
        let a = evaluate_all(&plain, &profiles, &set).unwrap();
        let b = evaluate_all(&scaled, &profiles, &set).unwrap();
        let (lo, hi) = (caps.0.min(caps.1) as f64, caps.0.max(caps.1) as f64);
        let id = |e: Result<&Evaluated, _>| e.ok().map(|e| e.strategy.id);
        prop_assert_eq!(id(select_strategy(&eligible_strategies(&a, hi))), id(select_strategy(&eligible_strategies(&b, hi))));
        let small: Vec<u64> = eligible_strategies(&a, lo).iter().map(|e| e.strategy.id).collect();
        let large: Vec<u64> = eligible_strategies(&a, hi).iter().map(|e| e.strategy.id).collect();
        prop_assert!(small.iter().all(|x| large.contains(x)));
    }

    #[test]
    fn transfer_time_is_the_ceiling(bits in 0u64..100_000, rate in 1u32..512) {
        let t = transfer_time(bits, rate as f64);
        prop_assert!(t as f64 * rate as f64 >= bits as f64);
        prop_assert!(bits == 0 || (t - 1) as f64 * (rate as f64) < bits as f64);
    }

    #[test]
    fn raising_ber_only_adds_flips(seed in any::<u64>(), lo in 0.0f64..0.2, extra in 0.0f64..0.2, block in 0usize..20) {
        let mut a = RandomErrors { seed, channel: Channel::M, ber: lo };
        let mut b = RandomErrors { seed, channel: Channel::M, ber: lo + extra };
        let (fa, fb) = (a.flips(block, 0, 256), b.flips(block, 0, 256));
        prop_assert!(fa.iter().all(|p| fb.contains(p)));
    }

    #[test]
    fn clean_channel_sends_payload_and_checks(seed in any::<u64>(), v in prop::collection::vec(any::<bool>(), 0..600)) {
        let payload = bits_from(&v);
        let rep = transmit_with_errors(&payload, true, &mut RandomErrors { seed, channel: Channel::N, ber: 0.0 }).unwrap();
        prop_assert_eq!(rep.received, payload);
        prop_assert_eq!(rep.rerequested_bits, 0);
        prop_assert_eq!(rep.sent_bits, rep.payload_bits + rep.redundancy_bits);
    }
}

fn scenario_text(
    width: usize,
    rates: [u32; 4],
    ber: u32,
    duplex: bool,
    events: &[(u64, u64)],
    ticks: u64,
    kinds: &[&str],
) -> String {
    let row = |v: u64| {
        (0..width)
            .map(|i| ((v >> i) & 1).to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut s = format!("SPACE\n  b[{width}] = bool\nPLANT\n  start = pattern 0\nSTORAGE\n");
    for a in 0..3u64 {
        s += &format!(
            "  pattern = {a} values ({})\n",
            row(a.wrapping_mul(0x9e37_79b9) & ((1 << width) - 1))
        );
    }
    s += &format!(
        "CHANNELS\n  q = {}\n  r = {}\n  n = {}\n  m = {}\n  ber.n = {}\n  ber.m = {}\n  duplex = {duplex}\n",
        rates[0],
        rates[1],
        rates[2],
        rates[3],
        ber as f64 / 1000.0,
        ber as f64 / 2000.0
    );
    s += &format!(
        "CONTROLLER\n  strategies = {}\nENVIRONMENT\n",
        kinds.join(" ")
    );
    for (t, a) in events {
        s += &format!("  event = {t}\n    demand = {a}\n");
    }
    s += &format!("RUN\n  ticks = {ticks}\n");
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scenarios_survive_a_round_trip_and_conserve_bits(
        width in 1usize..24,
        rates in [1u32..9, 1u32..9, 1u32..9, 1u32..9],
        ber in 0u32..30,
        duplex in any::<bool>(),
        events in prop::collection::vec((0u64..20, 0u64..3), 0..4),
        kinds in subsequence(vec!["spontaneous", "delta", "iterative"], 1..=3),
        seed in any::<u64>(),
    ) {
        let text = scenario_text(width, rates, ber, duplex, &events, 40, &kinds);
        let parsed = parse_scenario(&text).unwrap();
        let canonical = serialize(&parsed);
        prop_assert_eq!(&parse_scenario(&canonical).unwrap(), &parsed);
        prop_assert_eq!(serialize(&parse_scenario(&canonical).unwrap()), canonical);
        let (sc, built) = load(&text).unwrap();
        // Without duplex repair a corrupted delivery may legitimately abort the run.
        if let Ok((trace, _)) = run(&sc, &built, seed) {
            prop_assert_eq!(check_conservation(&trace), Ok(()));
            prop_assert_eq!(trace.rows.len() as u64, sc.run.ticks);
        } else {
            prop_assert!(ber > 0);
        }
    }
}

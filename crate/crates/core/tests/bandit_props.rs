use falsify_core::bandit::bin_mean;
use falsify_core::metrics::{break_even, failures_at, CurvePoint};
use falsify_core::{ArmDomain, Bandit, BetaBelief, Scale, Value};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn discrete(n: usize) -> ArmDomain {
    ArmDomain::discrete((0..n as i64).map(Value::Int).collect()).unwrap()
}

proptest! {
    #[test]
    fn counts_equal_the_tally(arms in 1usize..8, updates in prop::collection::vec((0usize..8, any::<bool>()), 0..300)) {
        let mut bandit = Bandit::new(discrete(arms)).unwrap();
        let mut tally = vec![(1.0, 1.0); arms];
        for &(arm, success) in &updates {
            let arm = arm % arms;
            bandit.update(arm, success).unwrap();
            if success { tally[arm].0 += 1.0 } else { tally[arm].1 += 1.0 }
        }
        for (belief, (a, b)) in bandit.beliefs().iter().zip(&tally) {
            prop_assert_eq!(belief.alpha(), *a);
            prop_assert_eq!(belief.beta(), *b);
            prop_assert!(belief.alpha() >= 1.0 && belief.beta() >= 1.0);
        }
    }

    #[test]
    fn update_order_does_not_matter(updates in prop::collection::vec((0usize..4, any::<bool>()), 0..100), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = updates.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut a = Bandit::new(discrete(4)).unwrap();
        let mut b = a.clone();
        for &(arm, s) in &updates { a.update(arm, s).unwrap(); }
        for &(arm, s) in &shuffled { b.update(arm, s).unwrap(); }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_arm_is_rejected(arms in 1usize..6, extra in 0usize..5) {
        let mut bandit = Bandit::new(discrete(arms)).unwrap();
        let before = bandit.clone();
        prop_assert!(bandit.update(arms + extra, true).is_err());
        prop_assert_eq!(bandit, before);
    }

    #[test]
    fn bin_edges_partition_the_range(lo in 0.01f64..100.0, width in 0.1f64..1e4, bins in 1usize..12, log in any::<bool>()) {
        let hi = lo + width;
        let scale = if log { Scale::LogUniform } else { Scale::Uniform };
        let domain = ArmDomain::continuous(lo, hi, bins, scale).unwrap();
        let edges = domain.edges();
        prop_assert_eq!(edges.len(), bins + 1);
        prop_assert_eq!(edges[0], lo);
        prop_assert_eq!(edges[bins], hi);
        prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        for (i, edge) in edges.iter().enumerate() {
            let expected = if log {
                lo * (hi / lo).powf(i as f64 / bins as f64)
            } else {
                lo + i as f64 * (hi - lo) / bins as f64
            };
            prop_assert!((edge - expected).abs() <= 1e-12 * hi);
        }
    }

    #[test]
    fn samples_stay_in_their_bin(lo in 0.01f64..100.0, width in 0.1f64..1e4, bins in 1usize..8, log in any::<bool>(), seed in any::<u64>()) {
        let hi = lo + width;
        let scale = if log { Scale::LogUniform } else { Scale::Uniform };
        let domain = ArmDomain::continuous(lo, hi, bins, scale).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for arm in 0..bins {
            let (a, b) = domain.bin_bounds(arm).unwrap();
            for _ in 0..20 {
                let x = domain.sample_in_arm(arm, &mut rng).unwrap().as_f64().unwrap();
                prop_assert!(a <= x && x < b, "{} not in [{}, {})", x, a, b);
                prop_assert_eq!(domain.arm_of(&Value::Real(x)), Some(arm));
            }
            let mean = domain.expected_value(arm).unwrap().as_f64().unwrap();
            prop_assert!(a <= mean && mean <= b);
            prop_assert_eq!(mean, bin_mean(a, b, scale));
        }
    }

    #[test]
    fn map_matches_brute_force(counts in prop::collection::vec((0u32..50, 0u32..50), 1..10)) {
        let beliefs: Vec<BetaBelief> = counts
            .iter()
            .map(|&(s, l)| BetaBelief::new(1.0 + s as f64, 1.0 + l as f64).unwrap())
            .collect();
        let bandit = Bandit::from_beliefs(discrete(beliefs.len()), beliefs.clone()).unwrap();
        let score = |b: &BetaBelief| {
            if b.alpha() + b.beta() == 2.0 { 0.5 } else { (b.alpha() - 1.0) / (b.alpha() + b.beta() - 2.0) }
        };
        let best = beliefs.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
        let first = beliefs.iter().position(|b| score(b) == best).unwrap();
        prop_assert_eq!(bandit.map_value().0, first);
    }

    #[test]
    fn earlier_failures_never_delay_break_even(
        steps in prop::collection::vec((0.1f64..5.0, any::<bool>()), 1..60),
        baseline_steps in prop::collection::vec((0.1f64..5.0, any::<bool>()), 1..60),
        flip in any::<prop::sample::Index>(),
    ) {
        let curve = |s: &[(f64, bool)]| {
            let (mut c, mut f) = (0.0, 0u64);
            s.iter().map(|&(dc, hit)| { c += dc; f += hit as u64; CurvePoint { cost: c, failures: f } }).collect::<Vec<_>>()
        };
        let baseline = curve(&baseline_steps);
        let before = break_even(&curve(&steps), &baseline);
        let mut improved = steps.clone();
        let i = flip.index(improved.len());
        improved[i].1 = true;
        let after = break_even(&curve(&improved), &baseline);
        match (before, after) {
            (Some(b), Some(a)) => prop_assert!(a <= b),
            (Some(_), None) => prop_assert!(false, "break-even vanished"),
            _ => {}
        }
    }

    #[test]
    fn step_function_is_monotone(steps in prop::collection::vec((0.1f64..5.0, any::<bool>()), 1..60), probes in prop::collection::vec(0.0f64..300.0, 1..20)) {
        let (mut c, mut f) = (0.0, 0u64);
        let curve: Vec<CurvePoint> = steps.iter().map(|&(dc, hit)| { c += dc; f += hit as u64; CurvePoint { cost: c, failures: f } }).collect();
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        let values: Vec<u64> = probes.iter().map(|&p| failures_at(&curve, p)).collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(failures_at(&curve, f64::INFINITY), f);
    }
}

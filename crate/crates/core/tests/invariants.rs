use frogsim::cascade::{box_f, certificate, g_of_k, min_alpha, xy_inequality_violations, CascadeParams};
use frogsim::engine::{is_closed, run_closure, run_stepwise, SimConfig};
use frogsim::extremes::{block_exceedance_probs, block_maxima, union_bound, BlockPlan};
use frogsim::hitting::{check_eps_bound, hit_prob_exact};
use frogsim::rng::derive_key;
use frogsim::{make_drift_kernel, BoxWindow, Direction, Point, SiteDistribution, SiteField, TransitionKernel};
use proptest::prelude::*;

fn kernel_strategy() -> impl Strategy<Value = TransitionKernel> {
    (1usize..=3, 0.02f64..0.9, 0.05f64..0.95)
        .prop_filter("mass", |(d, a, lat)| *d == 1 || a + lat < 0.98)
        .prop_map(|(d, a, lat)| make_drift_kernel(d, a, if d == 1 { 0.0 } else { lat }).unwrap())
}

fn dist_strategy() -> impl Strategy<Value = SiteDistribution> {
    prop_oneof![
        (0u64..4).prop_map(SiteDistribution::Deterministic),
        (0.05f64..0.95).prop_map(SiteDistribution::Geometric),
        (0.3f64..4.0).prop_map(SiteDistribution::ExpPareto),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_a_law_with_the_requested_drift(k in kernel_strategy()) {
        let total: f64 = k.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let m = k.drift_of();
        prop_assert!((m[0] - k.drift()).abs() < 1e-12);
        prop_assert!(m[1..].iter().all(|x| x.abs() < 1e-12));
        let eps = k.epsilon();
        prop_assert!(Direction::all(k.dim()).all(|e| k.prob(e) >= eps));
    }

    #[test]
    fn hitting_dp_is_a_monotone_probability(k in kernel_strategy(), t in 1usize..25, c in prop::collection::vec(-2i64..=2, 3)) {
        let d = k.dim();
        let y = Point::new(&c[..d]);
        let o = Point::origin(d);
        let w = BoxWindow::cube(d, 4);
        let short = hit_prob_exact(&k, &o, &y, &w, t).unwrap().value;
        let long = hit_prob_exact(&k, &o, &y, &w, t + 3).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&short));
        prop_assert!(short <= long + 1e-15);
        if t >= d * 2 {
            let est = hit_prob_exact(&k, &o, &y, &w, t).unwrap();
            prop_assert!(check_eps_bound(&k, &o, &y, &est).unwrap().holds);
        }
    }

    #[test]
    fn sampler_inverts_the_survival_function(dist in dist_strategy(), u in 1e-9f64..1.0, m in 0u64..500) {
        let s = dist.survival(m);
        prop_assume!((u - s).abs() > 1e-9);
        prop_assert_eq!(dist.sample_from_unit(u) >= m, u <= s);
    }

    #[test]
    fn sampler_is_nonincreasing_in_u(dist in dist_strategy(), u in 1e-9f64..0.999, du in 0.0f64..0.001) {
        prop_assert!(dist.sample_from_unit(u + du) <= dist.sample_from_unit(u));
    }

    #[test]
    fn site_field_is_a_pure_function(seed: u64, dist in dist_strategy(), c in prop::collection::vec(-50i64..50, 2)) {
        let p = Point::new(&c);
        let a = SiteField::new(seed, dist).unwrap();
        let b = SiteField::new(seed, dist).unwrap();
        prop_assert_eq!(a.site_value(&p).unwrap(), b.site_value(&p).unwrap());
    }

    #[test]
    fn morton_code_is_injective(a in prop::collection::vec(-1000i64..1000, 3), b in prop::collection::vec(-1000i64..1000, 3)) {
        let (p, q) = (Point::new(&a), Point::new(&b));
        prop_assert_eq!(p == q, p.morton_code() == q.morton_code());
    }

    #[test]
    fn derived_keys_separate_tags(seed: u64, t1: u64, t2: u64) {
        prop_assume!(t1 != t2);
        prop_assert_ne!(derive_key(seed, &[t1]), derive_key(seed, &[t2]));
        prop_assert_ne!(derive_key(seed, &[t1, t2]), derive_key(seed, &[t2, t1]));
    }

    #[test]
    fn engines_agree_and_close(
        k in kernel_strategy(),
        dist in dist_strategy(),
        field_seed: u64,
        frog_seed: u64,
        t in 0usize..60,
        cap in 1u64..20,
        absorb: bool,
    ) {
        let r = [20, 8, 4][k.dim() - 1];
        let d = k.dim();
        let mut cfg = SimConfig::new(k, SiteField::new(field_seed, dist).unwrap(), BoxWindow::cube(d, r), t, frog_seed);
        cfg.site_cap = Some(cap);
        cfg.absorb_outside = absorb;
        let a = run_closure(&cfg).unwrap();
        let b = run_stepwise(&cfg).unwrap();
        prop_assert_eq!(&a.awakened_sites, &b.awakened_sites);
        prop_assert_eq!(a.origin_visits, b.origin_visits);
        prop_assert_eq!(a.total_frogs, b.total_frogs);
        prop_assert!(a.origin_visits >= 1);
        prop_assert!(is_closed(&cfg, &a));
    }

    #[test]
    fn larger_windows_wake_more(k in kernel_strategy(), dist in dist_strategy(), seed: u64, t in 1usize..50, r in 1i64..5, extra in 1i64..4) {
        let d = k.dim();
        let field = SiteField::new(seed, dist).unwrap();
        let mut small = SimConfig::new(k.clone(), field, BoxWindow::cube(d, r), t, seed ^ 1);
        small.site_cap = Some(8);
        let big = SimConfig { window: BoxWindow::cube(d, r + extra), ..small.clone() };
        let a = run_closure(&small).unwrap();
        let b = run_closure(&big).unwrap();
        prop_assert!(a.origin_visits <= b.origin_visits);
        prop_assert!(a.awakened_sites.iter().all(|p| b.awakened_sites.binary_search(p).is_ok()));
    }

    #[test]
    fn box_f_sandwich(alpha in 3u64..9, n in 1u32..5, d in 1usize..4) {
        let f = box_f(alpha, n, d).unwrap();
        prop_assert!(f.bounds_hold());
        prop_assert!(f.lower_bound() <= f.exact as f64 && f.exact as f64 <= f.upper_bound());
    }

    #[test]
    fn xy_inequality(x in 0.0f64..1.0, y in 0.0f64..1e6) {
        prop_assert_eq!(xy_inequality_violations(&[x], &[y]), 0);
    }

    #[test]
    fn certificate_is_coherent(c1 in 0.05f64..1.5, b in 0.01f64..2.0, d in 1usize..4, k in 2u32..9, extra in 0u64..3) {
        let alpha = min_alpha(c1) + extra;
        let p = CascadeParams::new(alpha, d, k, 4, c1, b).unwrap();
        let cert = certificate(&p).unwrap();
        prop_assert!(cert.coherent);
        prop_assert_eq!(cert.vacuous, cert.g >= 1.0);
        // g is eventually decreasing in k.
        prop_assert!(g_of_k(&p, 40.0) <= g_of_k(&p, 30.0));
    }

    #[test]
    fn union_bound_dominates_block_probabilities(dist in dist_strategy(), c in 0.2f64..2.0, r in 0.5f64..3.0, from in 1usize..10) {
        let plan = BlockPlan::geometric(1.0, 1.0, 2.0, 10).unwrap();
        let exact: f64 = block_exceedance_probs(&dist, &plan, c, r).iter().skip(from - 1).sum();
        prop_assert!(exact <= union_bound(&dist, &plan, c, r, from) * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn block_maxima_are_maxima(values in prop::collection::vec(0u32..1000, 62..100)) {
        let plan = BlockPlan::geometric(1.0, 1.0, 2.0, 5).unwrap();
        let m = block_maxima(&values, &plan).unwrap();
        let mut at = 0;
        for (i, &l) in plan.sizes.iter().enumerate() {
            prop_assert_eq!(m[i], *values[at..at + l].iter().max().unwrap());
            at += l;
        }
    }
}

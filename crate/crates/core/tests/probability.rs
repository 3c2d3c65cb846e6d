use holosim_core::probability::{
    asymptotic_check, closed_form, mc_estimate, mc_estimate_serial, p_any_triple, p_bound,
    p_favorite, p_triple, p_triple_f64, within_three_sigma, McEvent, ProbParams,
};
use num_bigint::BigInt;
use num_rational::BigRational;

fn pp(n: u64, c: u32, k: u32) -> ProbParams {
    ProbParams::new(n, c, k).unwrap()
}

// Counts the favorite assignments directly: each agent in a triple picks one
// of its remaining peers CK times, and exactly one assignment hits.
fn triple_oracle(n: u64, ck: u32) -> (u128, u128) {
    let per_round = ((n - 1) * (n - 2) * (n - 3)) as u128;
    (1, per_round.pow(ck))
}

#[test]
fn small_values_by_hand() {
    assert_eq!(p_triple(&pp(5, 1, 1)).unwrap().fraction(), "1/24");
    assert_eq!(p_favorite(5, 1).unwrap().fraction(), "1/4");
    assert_eq!(p_favorite(6, 2).unwrap().fraction(), "1/25");
    assert_eq!(p_any_triple(&pp(5, 1, 1)).unwrap().fraction(), "5/2");
    assert_eq!(p_any_triple(&pp(20, 1, 1)).unwrap().fraction(), "20/17");
}

#[test]
fn triple_matches_counting_oracle() {
    for n in 4..40 {
        for ck in 1..=4u32 {
            let (num, den) = triple_oracle(n, ck);
            let want = BigRational::new(BigInt::from(num), BigInt::from(den));
            let p = ProbParams { n, c: ck, k: 1 };
            assert_eq!(p_triple(&p).unwrap().value, want, "n={n} ck={ck}");
            let rel =
                (p_triple_f64(&p) - num as f64 / den as f64).abs() / (num as f64 / den as f64);
            assert!(rel < 1e-12);
        }
    }
}

#[test]
fn bound_exponent_and_exact_form() {
    let b = p_bound(&pp(20, 3, 5)).unwrap();
    assert_eq!(b.exponent, 42);
    let want = BigRational::new(BigInt::from(1), BigInt::from(20u32).pow(42));
    assert_eq!(b.approx.value, want);
}

#[test]
fn inequality_chain_over_the_sweep() {
    for n in 4..=200 {
        for c in 1..=5 {
            for k in 1..=5 {
                let p = pp(n, c, k);
                let any = p_any_triple(&p).unwrap().value;
                let bound = p_bound(&p).unwrap().middle.value;
                assert!(any <= bound, "N={n} C={c} K={k}");
            }
        }
    }
}

#[test]
fn domain_errors() {
    assert!(ProbParams::new(3, 1, 1).is_err());
    assert!(ProbParams::new(10, 0, 1).is_err());
    assert!(p_favorite(1, 1).is_err());
    assert!(mc_estimate(&pp(5, 1, 1), McEvent::Triple, 0, 1).is_err());
}

#[test]
fn monte_carlo_agrees_within_three_sigma() {
    let trials = 200_000;
    for (n, c) in [(5, 1), (6, 2), (10, 1)] {
        let p = pp(n, c, 1);
        let mc = mc_estimate(&p, McEvent::Favorite, trials, 11).unwrap();
        let exact = closed_form(&p, McEvent::Favorite).unwrap().to_f64();
        assert!(
            within_three_sigma(&mc, exact),
            "({n},{c}): {} vs {exact}",
            mc.estimate
        );
    }
    let p = pp(5, 1, 1);
    let mc = mc_estimate(&p, McEvent::Triple, trials, 12).unwrap();
    assert!(within_three_sigma(&mc, 1.0 / 24.0));
}

#[test]
fn parallel_and_serial_agree() {
    let p = pp(6, 1, 1);
    for event in [McEvent::Favorite, McEvent::Triple] {
        let a = mc_estimate(&p, event, 20_000, 99).unwrap();
        let b = mc_estimate_serial(&p, event, 20_000, 99).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn three_sigma_rejects_a_wrong_value() {
    let p = pp(5, 1, 1);
    let mc = mc_estimate(&p, McEvent::Favorite, 200_000, 5).unwrap();
    assert!(!within_three_sigma(&mc, 0.3));
}

#[test]
fn union_bound_tends_to_one_for_unit_c_and_k() {
    // N(N-1)(N-2) / ((N-1)(N-2)(N-3)) = N/(N-3)
    for n in [10u64, 100, 1000] {
        let v = p_any_triple(&pp(n, 1, 1)).unwrap().value;
        assert_eq!(v, BigRational::new(BigInt::from(n), BigInt::from(n - 3)));
    }
    let r = asymptotic_check(1, 1, 10..=300, 1e-6).unwrap();
    assert!(r.strictly_decreasing);
    assert_eq!(r.onset, None);
    let r = asymptotic_check(1, 2, 10..=300, 1e-6).unwrap();
    assert!(r.passes);
}

mod common;

use common::{all_vectors, approx};
use proptest::prelude::*;
use quotalab::lab::{build_fixture, FixtureParams};
use quotalab::variants::js::{average_reports, js_error_floor, js_scan};
use quotalab::variants::*;
use quotalab::*;

fn params() -> FixtureParams {
    FixtureParams::default()
}

/// Smallest eps on a grid for which (q - (1 - eps) q') / eps is a distribution.
fn grid_shrink(q: &[f64], qp: &[f64], steps: usize) -> f64 {
    if q.iter().zip(qp).all(|(a, b)| (a - b).abs() < 1e-15) {
        return 0.0;
    }
    (1..=steps)
        .map(|s| s as f64 / steps as f64)
        .find(|&e| q.iter().zip(qp).all(|(a, b)| a - (1.0 - e) * b >= -1e-12))
        .unwrap_or(1.0)
}

#[test]
fn shrink_factor_examples() {
    let s = shrink_factor(&[2.0 / 3.0, 1.0 / 3.0], &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
    assert!(approx(s.epsilon, 0.5, 1e-12));
    assert!(approx(grid_shrink(&[2.0 / 3.0, 1.0 / 3.0], &[1.0 / 3.0, 2.0 / 3.0], 1000), 0.5, 1e-3));
    let s = shrink_factor(&[0.5, 0.5], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
    assert!(approx(s.epsilon, 0.25, 1e-12));
    assert!(approx(s.witness[0], 0.0, 1e-12) && approx(s.witness[1], 1.0, 1e-12));
    // q' a point mass where q is not
    let s = shrink_factor(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
    assert!(approx(s.epsilon, 0.5, 1e-12));
    assert!(approx(s.witness[1], 1.0, 1e-12));
}

#[test]
fn approximation_examples() {
    let qk = approximate_quota(&[0.5, 0.5], 3).unwrap();
    assert!(approx(qk[0], 2.0 / 3.0, 1e-12));
    // brute force over all 1/3-divisible vectors: the bounds hold and this
    // choice is among the TV-closest
    let best = (0..=3)
        .map(|a| tv(&[a as f64 / 3.0, 1.0 - a as f64 / 3.0], &[0.5, 0.5]))
        .fold(f64::INFINITY, f64::min);
    assert!(approx(tv(&qk, &[0.5, 0.5]), best, 1e-12));
    assert!(tv(&qk, &[0.5, 0.5]) <= 1.0 / 3.0);
    assert!(shrink_factor(&[0.5, 0.5], &qk).unwrap().epsilon <= 2.0 / 3.0);
    assert_eq!(approximate_quota(&[0.05, 0.95], 10).unwrap(), vec![0.0, 1.0]);
    let eta = 0.1;
    let q = [1.0 / 3.0 + eta, 1.0 / 3.0, 1.0 / 3.0 - eta];
    let qk = approximate_quota(&q, 3).unwrap();
    for (a, b) in qk.iter().zip([2.0 / 3.0, 1.0 / 3.0, 0.0]) {
        assert!(approx(*a, b, 1e-12));
    }
    let s = shrink_factor(&q, &qk).unwrap();
    assert!(approx(s.epsilon, 0.35, 1e-12));
    for (a, b) in s.witness.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0]) {
        assert!(approx(*a, b, 1e-12));
    }
}

fn quota_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..=6, 1usize..=50).prop_flat_map(|(m, k)| {
        (prop::collection::vec(0u32..1000, m), Just(k)).prop_map(|(w, k)| {
            let mut w = w;
            if w.iter().all(|&x| x == 0) {
                w[0] = 1;
            }
            let s: u32 = w.iter().sum();
            (w.iter().map(|&x| x as f64 / s as f64).collect(), k)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn approximation_properties((q, k) in quota_strategy()) {
        let m = q.len() as f64;
        let kf = k as f64;
        let qk = approximate_quota(&q, k).unwrap();
        prop_assert!(approx(qk.iter().sum::<f64>(), 1.0, 1e-12));
        for (a, b) in qk.iter().zip(&q) {
            prop_assert!((a * kf - (a * kf).round()).abs() < 1e-9);
            prop_assert!(*a >= 0.0);
            if *b < 1.0 / m - 1e-12 {
                prop_assert!(*a <= *b + 1e-12, "small mass {b} rounded up to {a}");
            }
        }
        prop_assert!(tv(&qk, &q) <= (m - 1.0) / kf + 1e-9);
        let s = shrink_factor(&q, &qk).unwrap();
        prop_assert!(s.epsilon <= (m - 1.0) * m / kf + 1e-9);
        for t in 0..q.len() {
            prop_assert!(approx((1.0 - s.epsilon) * qk[t] + s.epsilon * s.witness[t], q[t], 1e-9));
            prop_assert!(s.witness[t] >= 0.0);
        }
        let grid = grid_shrink(&q, &qk, 2000);
        prop_assert!(s.epsilon <= grid + 1e-9 && grid <= s.epsilon + 1.0 / 2000.0 + 1e-9);
    }
}

#[test]
fn allocation_report_table() {
    let fx = build_fixture("allocation2", &params()).unwrap();
    let mech = fx.mechanism(3).unwrap();
    let js = JSMechanism::new(mech.clone()).unwrap();
    assert!(approx(js.quotas[0].epsilon, 0.25, 1e-12));
    assert!(approx(js.quotas[0].p_k[1], 1.0, 1e-12));
    // types (L, H); table entries are report masses on H
    let (before, after) = average_reports(&js, 0, &[1, 2]).unwrap();
    assert!(approx(before[1][1], 0.5, 1e-9) && approx(before[0][1], 0.0, 1e-9));
    assert!(approx(after[1][1], 5.0 / 8.0, 1e-9) && approx(after[0][1], 0.25, 1e-9));
    let main = equilibrium_kernel(&mech, 0, &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
    assert!(approx(main.row(1)[1], 0.75, 1e-9) && approx(main.row(0)[1], 0.0, 1e-9));
    // the other rows of the table
    let (_, after) = average_reports(&js, 0, &[2, 1]).unwrap();
    assert!(approx(after[1][1], 1.0, 1e-9) && approx(after[0][1], 0.25, 1e-9));
    let main = equilibrium_kernel(&mech, 0, &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
    assert!(approx(main.row(1)[1], 1.0, 1e-9) && approx(main.row(0)[1], 0.25, 1e-9));
    let (_, after) = average_reports(&js, 0, &[0, 3]).unwrap();
    assert!(approx(after[1][1], 0.5, 1e-9));
    let (_, after) = average_reports(&js, 0, &[3, 0]).unwrap();
    assert!(approx(after[0][1], 0.5, 1e-9));
}

#[test]
fn allocation_correct_rates() {
    let fx = build_fixture("allocation2", &params()).unwrap();
    let mech = fx.mechanism(3).unwrap();
    let strat = EquilibriumStrategy::diagonal_max(&mech);
    let js = JSMechanism::new(mech.clone()).unwrap();
    let differ = |p: &[usize]| p[0] != p[1];
    let main = conditional_accuracy(&mech, |t| Ok(play(&mech, &strat, t)?.outcomes), differ).unwrap();
    let jsr = conditional_accuracy(&mech, |t| Ok(js.play(t)?.1.outcomes), differ).unwrap();
    assert!(approx(main, 0.75, 1e-9), "main {main}");
    assert!(approx(jsr, 0.6875, 1e-9), "js {jsr}");
}

#[test]
fn counterexample_breaks_the_main_bound() {
    for m in 3..=5 {
        let eta = 0.5 / ((m - 1) * m) as f64;
        let fx = build_fixture("js-counterexample", &FixtureParams { m, eta, ..params() }).unwrap();
        let mech = fx.mechanism(m).unwrap();
        // the main mechanism itself is fine
        let s = EquilibriumStrategy::diagonal_max(&mech);
        assert_eq!(scan_expost(&mech, &s, 1e-7).unwrap().violations, 0);
        let js = JSMechanism::new(mech.clone()).unwrap();
        let first: Vec<usize> = (0..m).collect();
        let mut second = vec![0];
        second.extend(0..m - 1);
        let r1 = js_play_and_error(&js, &[TypeVector::new(first.clone())]).unwrap();
        let r2 = js_play_and_error(&js, &[TypeVector::new(second.clone())]).unwrap();
        assert!(approx(r1.error.bound_rhs, (m - 1) as f64 * eta, 1e-12));
        assert!(approx(r2.error.bound_rhs, (m - 1) as f64 * (1.0 / m as f64 - eta), 1e-12));
        assert!(r1.violates_main_bound(1e-9) || r2.violates_main_bound(1e-9), "m={m}");
        for (v, r) in [(first, &r1), (second, &r2)] {
            let marg = empirical_marginal(&v, m);
            assert!(r.error.average >= js_error_floor(&js.quotas[0], &marg) - 1e-9);
            assert!(r.within_relaxed(1e-7));
        }
        // any decomposition with q_K = uniform fails at the second vector
        let uni = vec![1.0 / m as f64; m];
        let e = 0.5;
        let mut p = uni.clone();
        p[0] += eta / e;
        p[m - 1] -= eta / e;
        let jq = JSQuota::from_parts(fx.quotas()[0].clone(), uni, e, p, m).unwrap();
        let alt = JSMechanism::with_quotas(mech, vec![jq]).unwrap();
        let mut second = vec![0];
        second.extend(0..m - 1);
        let r = js_play_and_error(&alt, &[TypeVector::new(second)]).unwrap();
        let want = (m - 1) as f64 / m as f64 - 2.0 * eta / m as f64;
        assert!(r.error.average >= want - 1e-9);
        assert!(r.violates_main_bound(1e-9));
    }
}

#[test]
fn relaxed_bound_holds_exhaustively() {
    let cases: Vec<(&str, FixtureParams)> = vec![
        ("allocation", params()),
        ("allocation", FixtureParams { quota: Some(vec![0.3, 0.7]), ..params() }),
        ("allocation2", params()),
        ("allocation3", params()),
        ("voting", params()),
        ("medication", params()),
        ("medication", FixtureParams { quota: Some(vec![0.1, 0.3, 0.6]), ..params() }),
        ("js-counterexample", params()),
    ];
    for (name, p) in cases {
        let fx = build_fixture(name, &p).unwrap();
        let k_max = if fx.env.n() == 2 && fx.env.m(0) == 3 { 4 } else { 5 };
        for k in 1..=k_max {
            let js = JSMechanism::new(fx.mechanism(k).unwrap()).unwrap();
            let scan = js_scan(&js, 1e-7).unwrap();
            assert_eq!(scan.relaxed_violations, 0, "{name} K={k}");
            for theta_idx in 0..scan.checked.min(50) {
                let theta = quotalab::mechanism::decode_profile(&js.base, theta_idx);
                let r = js_play_and_error(&js, &theta).unwrap();
                assert!(r.error.average <= r.decomposed_rhs + 1e-7);
            }
        }
    }
}

#[test]
fn utility_dominance_on_binary_instances() {
    for q in [0.2, 0.35, 0.5, 0.7, 0.9] {
        for name in ["allocation", "allocation2"] {
            let p = FixtureParams { quota: Some(vec![1.0 - q, q]), ..params() };
            let fx = build_fixture(name, &p).unwrap();
            let mut fx = fx;
            for a in &mut fx.env.agents {
                a.quota = Some(vec![1.0 - q, q]);
            }
            for k in 1..=6 {
                let js = JSMechanism::new(fx.mechanism(k).unwrap()).unwrap();
                let d = js_utility_dominance(&js).unwrap();
                assert!(d.holds, "{name} q={q} K={k}: gap {}", d.worst_gap);
            }
        }
    }
    for name in ["voting", "medication", "allocation3"] {
        let fx = build_fixture(name, &params()).unwrap();
        for k in 1..=4 {
            let js = JSMechanism::new(fx.mechanism(k).unwrap()).unwrap();
            assert!(js_utility_dominance(&js).unwrap().holds, "{name} K={k}");
        }
    }
}

#[test]
fn divisible_quota_makes_the_mechanisms_coincide() {
    let fx = build_fixture("allocation2", &params()).unwrap();
    let mech = fx.mechanism(4).unwrap();
    let js = JSMechanism::new(mech.clone()).unwrap();
    assert_eq!(js.quotas[0].epsilon, 0.0);
    let d = js_utility_dominance(&js).unwrap();
    assert!(d.worst_gap.abs() <= 1e-9);
    let s = EquilibriumStrategy::diagonal_max(&mech);
    for a in all_vectors(2, 4) {
        let theta = [TypeVector::new(a.clone()), TypeVector::new(a.iter().rev().copied().collect())];
        let main = expost_error(&mech, &s, &theta).unwrap().average;
        let other = js_play_and_error(&js, &theta).unwrap().error.average;
        assert!(approx(main, other, 1e-9));
    }
    let truth = [TypeVector::new(vec![0, 1, 0, 1]), TypeVector::new(vec![1, 1, 0, 0])];
    assert!(js_play_and_error(&js, &truth).unwrap().error.average.abs() < 1e-12);
}

#[test]
fn common_prior_type_space() {
    let fx = build_fixture("allocation3", &params()).unwrap();
    let mech = fx.mechanism(2).unwrap();
    let ts = iid_type_space(&mech, &fx.quotas()).unwrap();
    let flags = check_type_space(&ts).unwrap();
    assert!(flags.exchangeable && flags.independent);
    let r = verify_robust_equilibrium(&ts, &mech).unwrap();
    assert!(r.passes(1e-7), "gain {}", r.max_gain);
    assert_eq!(r.profiles_checked, 81);
}

#[test]
fn cyclic_point_beliefs_fail() {
    let fx = build_fixture("allocation3", &params()).unwrap();
    let mech = fx.mechanism(3).unwrap();
    let ts = cyclic_point_space(&["L", "M", "H"]);
    let flags = check_type_space(&ts).unwrap();
    assert!(!flags.exchangeable);
    assert!(flags.independent);
    let r = verify_robust_equilibrium(&ts, &mech).unwrap();
    let first = &r.best_responses[0];
    // truthful: wins only the H problem; copying the opponent ties all three
    assert!(approx(first.equilibrium_value, 2.0 / 3.0, 1e-9));
    assert!(first.best_value >= (1.0 + 1.5 + 2.0) / 6.0 - 1e-9);
    assert!(first.gain >= 1.0 / 12.0 - 1e-9);
    assert!(!r.passes(1e-7));
    // the bound itself still holds: both vectors match the uniform quota
    assert!(r.bound_failures.is_empty());
}

#[test]
fn inconsistent_but_exchangeable_beliefs_pass() {
    for name in ["allocation2", "allocation3"] {
        let fx = build_fixture(name, &params()).unwrap();
        let mech = fx.mechanism(3).unwrap();
        let m = mech.m(0);
        let wrong: Vec<Vec<f64>> = (0..2)
            .map(|j| {
                let mut v: Vec<f64> = (0..m).map(|t| (t + 1 + j) as f64).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            })
            .collect();
        let ts = iid_type_space(&mech, &wrong).unwrap();
        let r = verify_robust_equilibrium(&ts, &mech).unwrap();
        assert!(r.flags.exchangeable && r.flags.independent);
        assert!(r.passes(1e-7), "{name}: gain {}", r.max_gain);
        // bounds do not depend on beliefs
        let ts2 = iid_type_space(&mech, &fx.quotas()).unwrap();
        let r2 = verify_robust_equilibrium(&ts2, &mech).unwrap();
        assert_eq!(r.worst_bound_slack, r2.worst_bound_slack);
    }
}

#[test]
fn independence_needs_three_agents() {
    let agent = |belief: Vec<f64>| TypeSpaceAgent {
        types: vec!["a".into(), "b".into()],
        payoff: vec![vec!["L".into()], vec!["H".into()]],
        belief: vec![belief.clone(), belief],
    };
    // opponents perfectly correlated
    let corr = vec![0.5, 0.0, 0.0, 0.5];
    let ts = FiniteTypeSpace {
        k: 1,
        agents: vec![agent(corr.clone()), agent(corr.clone()), agent(corr)],
    };
    let f = check_type_space(&ts).unwrap();
    assert!(f.exchangeable && !f.independent);
    let prod = vec![0.25; 4];
    let ts = FiniteTypeSpace {
        k: 1,
        agents: vec![agent(prod.clone()), agent(prod.clone()), agent(prod)],
    };
    assert!(check_type_space(&ts).unwrap().independent);
}

#[test]
fn type_space_json_round_trip() {
    let ts = cyclic_point_space(&["L", "M", "H"]);
    let text = serde_json::to_string(&ts).unwrap();
    assert_eq!(FiniteTypeSpace::from_json(&text).unwrap(), ts);
    let bad = text.replace("[1.0]", "[0.5]");
    assert!(FiniteTypeSpace::from_json(&bad).is_err());
}

use quotalab::dynamic::{bellman_update, initial_values, is_feasible, traces_to_csv, SimplexGrid};
use quotalab::lab::fixtures::{build_fixture, FixtureParams};
use quotalab::{
    counterexample_policy, feasible_reports, simulate_discounted, truthful_when_feasible, value_iterate,
    DynamicMechanism, DynamicState, Policy,
};
use quotalab::env::{Agent, Environment, SocialChoiceFunction};
use quotalab::Error;

fn allocation(beta: f64) -> DynamicMechanism {
    let f = build_fixture("allocation", &FixtureParams::default()).unwrap();
    DynamicMechanism::new(f.env, f.scf, beta).unwrap()
}

fn weak_cm(beta: f64) -> DynamicMechanism {
    let f = build_fixture("weak-cm", &FixtureParams::default()).unwrap();
    DynamicMechanism::new(f.env, f.scf, beta).unwrap()
}

fn single(utility: Vec<Vec<f64>>, prior: Vec<f64>, beta: f64) -> DynamicMechanism {
    let m = prior.len();
    let env = Environment {
        decisions: (0..utility.len()).map(|d| format!("d{d}")).collect(),
        agents: vec![Agent {
            types: (0..m).map(|t| format!("t{t}")).collect(),
            utility,
            prior,
            quota: None,
        }],
    };
    let choice: Vec<usize> = (0..m).collect();
    let scf = SocialChoiceFunction::deterministic(&choice, m);
    DynamicMechanism::new(env, scf, beta).unwrap()
}

#[test]
fn feasible_report_caps() {
    let s = DynamicState {
        remaining: vec![0.5, 0.5],
        current: 0,
    };
    let f = feasible_reports(&s, 0.5).unwrap();
    assert_eq!(f.caps, vec![1.0, 1.0]);
    assert!(f.contains(&[1.0, 0.0], 1e-12));

    // after reporting type 1 in full at beta = 1/2 the remaining quota is (0, 1)
    let m = allocation(0.5);
    let next = m.next_quota(&[0.5, 0.5], &[1.0, 0.0]);
    assert_eq!(next, vec![0.0, 1.0]);
    let f = feasible_reports(&DynamicState { remaining: next.clone(), current: 0 }, 0.5).unwrap();
    assert_eq!(f.caps, vec![0.0, 2.0]);
    assert!(!f.contains(&[0.5, 0.5], 1e-12));
    for p in [Policy::TruthfulWhenFeasible, Policy::LowHigh { low: 0 }] {
        assert_eq!(p.report(&m, &next, 0).unwrap(), vec![0.0, 1.0]);
    }

    let s = DynamicState {
        remaining: vec![0.01, 0.02],
        current: 0,
    };
    assert!(matches!(feasible_reports(&s, 0.9), Err(Error::Infeasible(_))));
    let bad = DynamicState {
        remaining: vec![-0.1, 1.1],
        current: 0,
    };
    assert!(matches!(feasible_reports(&bad, 0.9), Err(Error::Domain(_))));
}

#[test]
fn reference_policies_follow_their_rules() {
    let m = weak_cm(0.9);
    let q = m.q.clone();
    let low = counterexample_policy(&m);
    assert_eq!(low.report(&m, &q, 0).unwrap(), vec![1.0, 0.0, 0.0]);
    assert_eq!(low.report(&m, &q, 1).unwrap(), vec![0.0, 0.0, 1.0]);
    // top exhausted: next-highest takes over
    let st = vec![0.5, 0.5, 0.0];
    assert_eq!(low.report(&m, &st, 2).unwrap(), vec![0.0, 1.0, 0.0]);
    // partially exhausted top: fill cap then the next label
    let st = vec![0.45, 0.5, 0.05];
    let r = low.report(&m, &st, 1).unwrap();
    assert!((r[2] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);

    let t = truthful_when_feasible(&m);
    assert_eq!(t.report(&m, &q, 1).unwrap(), vec![0.0, 1.0, 0.0]);
    let st = vec![0.6, 0.38, 0.02];
    let r = t.report(&m, &st, 2).unwrap();
    assert!((r[2] - 0.2).abs() < 1e-12 && (r[0] - 0.8).abs() < 1e-12);
    assert!(is_feasible(&m, &st, &r));
}

#[test]
fn one_type_value_is_its_utility() {
    let m = single(vec![vec![0.7]], vec![1.0], 0.9);
    let (table, _) = value_iterate(&m, 32).unwrap();
    assert!(table.values[0].iter().all(|v| (v - 0.7).abs() < 1e-8));
}

#[test]
fn zero_utility_gives_zero_value() {
    let m = single(vec![vec![0.0; 3]; 3], vec![0.2, 0.3, 0.5], 0.9);
    let (table, policy) = value_iterate(&m, 40).unwrap();
    assert!(table.values.iter().flatten().all(|v| v.abs() < 1e-12));
    let rep = simulate_discounted(&m, &policy, None, 50, 3, 0).unwrap();
    assert!(rep.max_quota_excess <= 1e-9);
}

#[test]
fn resolution_guards() {
    let m = allocation(0.9);
    assert!(matches!(value_iterate(&m, 16), Err(Error::Domain(_))));
    let f = build_fixture(
        "allocation",
        &FixtureParams {
            quota: Some(vec![0.99, 0.01]),
            ..Default::default()
        },
    )
    .unwrap();
    let m = DynamicMechanism::new(f.env, f.scf, 0.9).unwrap();
    assert!(matches!(value_iterate(&m, 32), Err(Error::Domain(_))));
    assert!(value_iterate(&m, 100).is_ok());
}

#[test]
fn allocation_policy_and_grid_refinement() {
    let m = allocation(0.9);
    let (coarse, policy) = value_iterate(&m, 32).unwrap();
    assert!(coarse.residual <= 1e-8);
    let (fine, _) = value_iterate(&m, 64).unwrap();
    for theta in 0..2 {
        let a = coarse.value(&m.q, theta);
        let b = fine.value(&m.q, theta);
        assert!((a - b).abs() < 1e-3, "theta {theta}: {a} vs {b}");
    }
    // high type reports H whenever that is feasible
    for i in 0..=20 {
        let qh = i as f64 / 20.0;
        let st = vec![1.0 - qh, qh];
        if (1.0 - m.beta) <= qh {
            assert_eq!(policy.report(&m, &st, 1).unwrap(), vec![0.0, 1.0], "Q_H = {qh}");
        }
    }
}

#[test]
fn bellman_residual_contracts() {
    for m in [allocation(0.8), weak_cm(0.7)] {
        let grid = SimplexGrid::new(m.m(), 32);
        let mut v = initial_values(&m, &grid);
        let mut prev = f64::INFINITY;
        for _ in 0..12 {
            let (next, res) = bellman_update(&m, &grid, &v).unwrap();
            if prev.is_finite() && prev > 1e-12 {
                assert!(res <= (m.beta + 1e-6) * prev, "{res} after {prev}");
            }
            prev = res;
            v = next;
        }
    }
}

#[test]
fn weak_cm_counterexample_keeps_error() {
    let m = weak_cm(0.99);
    let rep = simulate_discounted(&m, &counterexample_policy(&m), None, 500, 11, 0).unwrap();
    assert!(rep.error >= 1.0 / 3.0 - 0.03, "{}", rep.error);
    assert!(rep.max_quota_excess <= 1e-9);
    assert!(1.0 - rep.occupation.diagonal >= 1.0 / 3.0 - 0.03);
}

#[test]
fn allocation_error_falls_with_patience() {
    let mut errs = Vec::new();
    let mut diags = Vec::new();
    for beta in [0.9, 0.99, 0.999] {
        let m = allocation(beta);
        let (_, policy) = value_iterate(&m, 32).unwrap();
        let rep = simulate_discounted(&m, &policy, None, 400, 5, 0).unwrap();
        assert!(rep.max_quota_excess <= 1e-9);
        errs.push(rep.error);
        diags.push(rep.occupation.diagonal);
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(diags[0] < diags[1] && diags[1] < diags[2], "{diags:?}");
}

#[test]
fn occupation_marginals_match_prior() {
    for (m, policy) in [
        (weak_cm(0.95), Policy::LowHigh { low: 0 }),
        (allocation(0.95), Policy::TruthfulWhenFeasible),
    ] {
        let rep = simulate_discounted(&m, &policy, None, 1000, 2, 0).unwrap();
        let occ = &rep.occupation;
        let total: f64 = occ.joint.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let src = occ.source_marginal();
        let dst = occ.target_marginal();
        for a in 0..m.m() {
            let se_src: f64 = occ.std_error[a].iter().sum::<f64>().max(1e-12);
            let se_dst: f64 = occ.std_error.iter().map(|r| r[a]).sum::<f64>().max(1e-12);
            assert!((src[a] - m.prior()[a]).abs() <= 3.0 * se_src, "source {a}: {src:?}");
            // reports are quota-constrained, so the target marginal tracks q = pi
            assert!((dst[a] - m.prior()[a]).abs() <= 3.0 * se_dst + 0.02, "target {a}: {dst:?}");
        }
    }
}

#[test]
fn simulation_is_seed_deterministic_and_traces_export() {
    let m = weak_cm(0.9);
    let p = counterexample_policy(&m);
    let a = simulate_discounted(&m, &p, None, 64, 9, 2).unwrap();
    let b = simulate_discounted(&m, &p, None, 64, 9, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.traces.len(), 2 * a.horizon);
    let csv = traces_to_csv(&m, &a.traces).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "path,t,theta,r_t1,r_t2,r_t3,tv");
    assert_eq!(lines.count(), a.traces.len());
    assert!(matches!(simulate_discounted(&m, &p, Some(5), 10, 1, 0), Err(Error::Domain(_))));
}

#[test]
fn truthful_with_matching_quota_is_nearly_exact() {
    // the error only comes from quota exhaustion late in the path
    let m = allocation(0.999);
    let rep = simulate_discounted(&m, &Policy::TruthfulWhenFeasible, None, 200, 4, 0).unwrap();
    assert!(rep.error < 0.05, "{}", rep.error);
    assert!(rep.error_with_tail - rep.error <= 0.01 + 1e-12);
}

use rand::distr::{weighted::WeightedIndex, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DynamicMechanism, Policy};
use crate::dist::{pairwise_sum, tv};
use crate::env::scf_extend;
use crate::error::{domain, Error, Result};
use crate::lab::{mean_and_se, substream};
use crate::tol::TOL;

/// Estimated gamma(theta, theta') = E[(1 - beta) sum_t beta^t 1{theta^t = theta} r^t(theta')],
/// with the mass after the horizon spread as beta^T pi x Q^T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationCoupling {
    pub joint: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
    pub diagonal: f64,
    pub diagonal_se: f64,
}

impl OccupationCoupling {
    pub fn source_marginal(&self) -> Vec<f64> {
        self.joint.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn target_marginal(&self) -> Vec<f64> {
        let m = self.joint.len();
        (0..m).map(|j| self.joint.iter().map(|r| r[j]).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub path: usize,
    pub t: usize,
    pub theta: usize,
    pub report: Vec<f64>,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicReport {
    pub beta: f64,
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
    /// Mean truncated discounted error (1 - beta) sum_{t<T} beta^t tv(x(r^t), x(theta^t)).
    pub error: f64,
    pub std_error: f64,
    /// beta^T: the most the periods after the horizon can add.
    pub tail_bound: f64,
    /// error + tail_bound, an upper estimate of the full discounted error.
    pub error_with_tail: f64,
    pub occupation: OccupationCoupling,
    /// Largest (1 - beta) sum_{s<=t} beta^s r^s(theta') - q(theta') over all paths and periods.
    pub max_quota_excess: f64,
    pub quota_checks: usize,
    pub traces: Vec<TraceRow>,
}

struct PathResult {
    error: f64,
    joint: Vec<Vec<f64>>,
    excess: f64,
    trace: Vec<TraceRow>,
}

fn run_path(
    mech: &DynamicMechanism,
    policy: &Policy,
    prior: &WeightedIndex<f64>,
    horizon: usize,
    seed: u64,
    path: usize,
    record: bool,
) -> Result<PathResult> {
    let m = mech.m();
    let b = mech.beta;
    let mut rng = substream(seed, path as u64);
    let mut q_state = mech.q.clone();
    let mut used = vec![0.0; m];
    let mut joint = vec![vec![0.0; m]; m];
    let mut errors = Vec::with_capacity(horizon);
    let mut excess = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut weight = 1.0 - b;
    for t in 0..horizon {
        let theta = prior.sample(&mut rng);
        let r = policy.report(mech, &q_state, theta)?;
        for j in 0..m {
            used[j] += weight * r[j];
            joint[theta][j] += weight * r[j];
            excess = excess.max(used[j] - mech.q[j]);
        }
        if excess > TOL.probability {
            return Err(Error::Invariant(format!(
                "path {path}, period {t}: discounted reports exceed the quota by {excess:e}"
            )));
        }
        let d = tv(&scf_extend(&mech.scf, &r), mech.scf.row(theta));
        errors.push(weight * d);
        if record {
            trace.push(TraceRow {
                path,
                t,
                theta,
                report: r.clone(),
                tv: d,
            });
        }
        q_state = mech.next_quota(&q_state, &r);
        weight *= b;
    }
    // remaining mass beta^T, types independent of the leftover quota
    let tail = weight / (1.0 - b);
    let total: f64 = q_state.iter().sum();
    let prior_mass = mech.prior();
    for (a, pa) in prior_mass.iter().enumerate() {
        for (j, qj) in q_state.iter().enumerate() {
            joint[a][j] += tail * pa * qj / total;
        }
    }
    Ok(PathResult {
        error: pairwise_sum(&errors),
        joint,
        excess,
        trace,
    })
}

/// Simulate `paths` independent type sequences of length `horizon` (default:
/// smallest T with beta^T <= 0.01) under `policy`, auditing the running quota
/// at every period. The first `record` paths are kept as traces.
pub fn simulate_discounted(
    mech: &DynamicMechanism,
    policy: &Policy,
    horizon: Option<usize>,
    paths: usize,
    seed: u64,
    record: usize,
) -> Result<DynamicReport> {
    if paths == 0 {
        return domain("need at least one path");
    }
    let horizon = horizon.unwrap_or_else(|| mech.default_horizon());
    let tail_bound = mech.beta.powi(horizon as i32);
    if tail_bound > 0.01 + 1e-12 {
        return domain(format!(
            "horizon {horizon} leaves beta^T = {tail_bound:.4} > 0.01; use at least {}",
            mech.default_horizon()
        ));
    }
    let prior = WeightedIndex::new(mech.prior()).map_err(|e| Error::Domain(format!("prior: {e}")))?;
    let results = (0..paths)
        .into_par_iter()
        .map(|p| run_path(mech, policy, &prior, horizon, seed, p, p < record))
        .collect::<Result<Vec<_>>>()?;
    let m = mech.m();
    let errs: Vec<f64> = results.iter().map(|r| r.error).collect();
    let (error, std_error) = mean_and_se(&errs);
    let mut joint = vec![vec![0.0; m]; m];
    let mut joint_se = vec![vec![0.0; m]; m];
    for a in 0..m {
        for j in 0..m {
            let xs: Vec<f64> = results.iter().map(|r| r.joint[a][j]).collect();
            let (mu, se) = mean_and_se(&xs);
            joint[a][j] = mu;
            joint_se[a][j] = se;
        }
    }
    let diags: Vec<f64> = results
        .iter()
        .map(|r| (0..m).map(|a| r.joint[a][a]).sum())
        .collect();
    let (diagonal, diagonal_se) = mean_and_se(&diags);
    let max_quota_excess = results.iter().map(|r| r.excess).fold(f64::NEG_INFINITY, f64::max);
    let traces = results.into_iter().flat_map(|r| r.trace).collect();
    Ok(DynamicReport {
        beta: mech.beta,
        horizon,
        paths,
        seed,
        error,
        std_error,
        tail_bound,
        error_with_tail: error + tail_bound,
        occupation: OccupationCoupling {
            joint,
            std_error: joint_se,
            diagonal,
            diagonal_se,
        },
        max_quota_excess,
        quota_checks: paths * horizon * m,
        traces,
    })
}

/// CSV with columns path, t, theta, one report column per type, tv.
pub fn traces_to_csv(mech: &DynamicMechanism, rows: &[TraceRow]) -> Result<String> {
    let labels = &mech.env.agents[0].types;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["path".to_string(), "t".into(), "theta".into()];
    header.extend(labels.iter().map(|l| format!("r_{l}")));
    header.push("tv".into());
    let io = |e: csv::Error| Error::Domain(format!("csv: {e}"));
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.path.to_string(), r.t.to_string(), labels[r.theta].clone()];
        rec.extend(r.report.iter().map(|v| v.to_string()));
        rec.push(r.tv.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Domain(format!("csv: {e}")))
}

//! Quota mechanisms that elicit type vectors against a 1/K-divisible quota and
//! then randomly replace reports so the original quota holds in expectation.

use serde::{Deserialize, Serialize};

use crate::dist::{check_probability, counts, pairwise_sum, tv};
use crate::env::TypeVector;
use crate::error::{domain, Error, Result};
use crate::lab::compositions;
use crate::mechanism::{
    decode_profile, error_report, num_joint_vectors, outcomes_of_reports, profile_weight,
    ErrorReport, Play, QuotaMechanism,
};
use crate::tol::TOL;
use crate::transport::{
    coupling_to_kernel, optimal_mass_on_set, solve_ot, Extremum, KernelCoupling, PairSet,
};

/// Snap `v` to the nearest integer when it is within 1e-9 of it.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 {
        r
    } else {
        v
    }
}

/// A 1/K-divisible approximation of `q` with small probabilities rounded down.
///
/// Types with q < 1/m are floored; the rest are rounded up or down according
/// to the sign of the running surplus, and if the surplus never turns
/// nonnegative the last of them absorbs the remainder.
pub fn approximate_quota(q: &[f64], k: usize) -> Result<Vec<f64>> {
    check_probability(q)?;
    if k == 0 {
        return domain("K must be at least 1");
    }
    let m = q.len();
    let kf = k as f64;
    let scaled: Vec<f64> = q.iter().map(|&v| snap(v * kf)).collect();
    let small: Vec<bool> = q.iter().map(|&v| v < 1.0 / m as f64 - 1e-12).collect();
    // work in units of 1/K
    let mut out = vec![0.0; m];
    let mut surplus = 0.0;
    for t in 0..m {
        if small[t] {
            out[t] = scaled[t].floor();
            surplus += out[t] - scaled[t];
        }
    }
    let large: Vec<usize> = (0..m).filter(|&t| !small[t]).collect();
    let mut ever_nonnegative = false;
    for &t in &large {
        out[t] = if surplus <= 1e-9 {
            scaled[t].ceil()
        } else {
            scaled[t].floor()
        };
        surplus += out[t] - scaled[t];
        if surplus >= -1e-9 {
            ever_nonnegative = true;
        }
    }
    if !ever_nonnegative {
        let last = *large.last().expect("some mass is at least 1/m");
        out[last] -= surplus.round();
    }
    let total: f64 = out.iter().sum();
    if (total - kf).abs() > 1e-6 {
        return Err(Error::Invariant(format!(
            "divisible approximation sums to {total}/{k}"
        )));
    }
    let qk: Vec<f64> = out.iter().map(|&c| c / kf).collect();
    let d = tv(&qk, q);
    if d > (m as f64 - 1.0) / kf + TOL.probability {
        return Err(Error::Invariant(format!("approximation off by {d} in TV")));
    }
    let s = shrink_factor(q, &qk)?.epsilon;
    if s > (m as f64 - 1.0) * m as f64 / kf + TOL.probability {
        return Err(Error::Invariant(format!("shrink factor {s} exceeds the uniform bound")));
    }
    Ok(qk)
}

/// The smallest epsilon with q = (1 - epsilon) q' + epsilon p, and such a p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkFactor {
    pub epsilon: f64,
    pub witness: Vec<f64>,
}

pub fn shrink_factor(q: &[f64], q_prime: &[f64]) -> Result<ShrinkFactor> {
    if q.len() != q_prime.len() {
        return domain("shrink factor needs distributions on the same types");
    }
    check_probability(q)?;
    check_probability(q_prime)?;
    let ratio = q
        .iter()
        .zip(q_prime)
        .filter(|(_, &b)| b > TOL.support)
        .map(|(a, b)| a / b)
        .fold(f64::INFINITY, f64::min);
    let epsilon = (1.0 - ratio).max(0.0);
    if epsilon <= TOL.support {
        return Ok(ShrinkFactor {
            epsilon: 0.0,
            witness: q.to_vec(),
        });
    }
    let mut witness: Vec<f64> = q
        .iter()
        .zip(q_prime)
        .map(|(a, b)| (a - (1.0 - epsilon) * b) / epsilon)
        .collect();
    if let Some(w) = witness.iter().find(|&&w| w < -TOL.probability) {
        return Err(Error::Invariant(format!("shrink witness has negative mass {w}")));
    }
    for w in &mut witness {
        *w = w.max(0.0);
    }
    Ok(ShrinkFactor { epsilon, witness })
}

/// q = (1 - epsilon) q_K + epsilon p_K with q_K divisible by 1/K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JSQuota {
    pub q_k: Vec<f64>,
    pub epsilon: f64,
    pub p_k: Vec<f64>,
    pub base: Vec<f64>,
}

impl JSQuota {
    pub fn new(q: &[f64], k: usize) -> Result<Self> {
        let q_k = approximate_quota(q, k)?;
        let s = shrink_factor(q, &q_k)?;
        Ok(JSQuota {
            q_k,
            epsilon: s.epsilon,
            p_k: s.witness,
            base: q.to_vec(),
        })
    }

    /// A hand-picked triple. Only the decomposition and divisibility are
    /// checked; the error guarantees assume the default construction.
    pub fn from_parts(base: Vec<f64>, q_k: Vec<f64>, epsilon: f64, p_k: Vec<f64>, k: usize) -> Result<Self> {
        let j = JSQuota {
            q_k,
            epsilon,
            p_k,
            base,
        };
        j.validate(k)?;
        Ok(j)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        check_probability(&self.base)?;
        check_probability(&self.q_k)?;
        check_probability(&self.p_k)?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return domain("epsilon must lie in [0, 1]");
        }
        let kf = k as f64;
        if self.q_k.iter().any(|&v| (v * kf - (v * kf).round()).abs() > 1e-9) {
            return domain(format!("q_K is not 1/{k}-divisible"));
        }
        let gap = self
            .base
            .iter()
            .zip(self.q_k.iter().zip(&self.p_k))
            .map(|(q, (a, b))| (q - (1.0 - self.epsilon) * a - self.epsilon * b).abs())
            .fold(0.0, f64::max);
        if gap > TOL.probability {
            return domain(format!("q differs from the mixture by {gap:e}"));
        }
        Ok(())
    }

    /// Report after replacement: (1 - epsilon) row + epsilon p_K.
    pub fn modify(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.p_k)
            .map(|(r, p)| (1.0 - self.epsilon) * r + self.epsilon * p)
            .collect()
    }
}

/// The JS-style mechanism built on top of a quota mechanism, which supplies x,
/// q, K and the agents' cost matrices.
#[derive(Debug, Clone)]
pub struct JSMechanism {
    pub base: QuotaMechanism,
    pub quotas: Vec<JSQuota>,
}

impl JSMechanism {
    pub fn new(base: QuotaMechanism) -> Result<Self> {
        let quotas = base
            .quotas
            .iter()
            .map(|q| JSQuota::new(q, base.k))
            .collect::<Result<Vec<_>>>()?;
        Ok(JSMechanism { base, quotas })
    }

    pub fn with_quotas(base: QuotaMechanism, quotas: Vec<JSQuota>) -> Result<Self> {
        if quotas.len() != base.n() {
            return domain("one JS quota per agent");
        }
        for (i, j) in quotas.iter().enumerate() {
            j.validate(base.k)?;
            if tv(&j.base, &base.quotas[i]) > TOL.probability {
                return domain(format!("agent {i}: JS quota base differs from q"));
            }
        }
        Ok(JSMechanism { base, quotas })
    }

    /// Integral transport kernel from the empirical marginal onto q_K.
    pub fn kernel(&self, i: usize, count: &[usize]) -> Result<KernelCoupling> {
        let k = self.base.k as f64;
        let p: Vec<f64> = count.iter().map(|&c| c as f64 / k).collect();
        let qk = &self.quotas[i].q_k;
        let sol = optimal_mass_on_set(&self.base.costs[i], &p, qk, &PairSet::diagonal(p.len()), Extremum::Max)?;
        let mut gamma = sol.coupling;
        for row in &mut gamma.joint {
            for v in row.iter_mut() {
                let units = *v * k;
                if (units - units.round()).abs() > 1e-7 {
                    return Err(Error::Invariant(format!(
                        "agent {i}: transport optimum is not integral ({units} units)"
                    )));
                }
                *v = units.round() / k;
            }
        }
        let labels = &self.base.env.agents[i].types;
        Ok(coupling_to_kernel(&gamma, qk, labels, labels))
    }

    /// Reports before and after replacement, and the outcomes.
    pub fn play(&self, theta: &[TypeVector]) -> Result<(Vec<Vec<Vec<f64>>>, Play)> {
        self.base.check_types(theta)?;
        let mut raw = Vec::with_capacity(theta.len());
        let mut reports = Vec::with_capacity(theta.len());
        for (i, v) in theta.iter().enumerate() {
            let kern = self.kernel(i, &counts(&v.entries, self.base.m(i)))?;
            let r: Vec<Vec<f64>> = v.entries.iter().map(|&t| kern.row(t).to_vec()).collect();
            reports.push(r.iter().map(|row| self.quotas[i].modify(row)).collect());
            raw.push(r);
        }
        let outcomes = outcomes_of_reports(&self.base.scf, &reports);
        Ok((raw, Play { reports, outcomes }))
    }

    /// sum_i (m_i - 1) tv(q_K,i, marg_i) + sum_i S(q_i | q_K,i)
    pub fn decomposed_bound(&self, margs: &[Vec<f64>]) -> f64 {
        self.quotas
            .iter()
            .zip(margs)
            .map(|(j, p)| (j.q_k.len() as f64 - 1.0) * tv(&j.q_k, p) + j.epsilon)
            .sum()
    }

    /// sum_i (m_i - 1) (tv(q_i, marg_i) + (2 m_i - 1) / K)
    pub fn relaxed_bound(&self, margs: &[Vec<f64>]) -> f64 {
        let k = self.base.k as f64;
        self.base
            .quotas
            .iter()
            .zip(margs)
            .map(|(q, p)| {
                let m = q.len() as f64;
                (m - 1.0) * (tv(q, p) + (2.0 * m - 1.0) / k)
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsErrorReport {
    /// Error against x(theta^k); `bound_rhs` is the main mechanism's ex-post bound.
    pub error: ErrorReport,
    pub decomposed_rhs: f64,
    pub relaxed_rhs: f64,
}

impl JsErrorReport {
    pub fn within_relaxed(&self, tol: f64) -> bool {
        self.error.average <= self.relaxed_rhs + tol
    }

    pub fn violates_main_bound(&self, tol: f64) -> bool {
        self.error.average > self.error.bound_rhs + tol
    }
}

pub fn js_play_and_error(js: &JSMechanism, theta: &[TypeVector]) -> Result<JsErrorReport> {
    let (_, pl) = js.play(theta)?;
    let error = error_report(&js.base, theta, &pl.outcomes);
    let margs = js.base.marginals(theta);
    Ok(JsErrorReport {
        error,
        decomposed_rhs: js.decomposed_bound(&margs),
        relaxed_rhs: js.relaxed_bound(&margs),
    })
}

/// (1 - epsilon) tv(q_K, marg) + epsilon E_marg[1 - p_K(theta)]: a floor on the
/// JS error of a single agent with injective x, whatever q_K and p_K are.
pub fn js_error_floor(jsq: &JSQuota, marg: &[f64]) -> f64 {
    let miss: f64 = marg.iter().zip(&jsq.p_k).map(|(m, p)| m * (1.0 - p)).sum();
    (1.0 - jsq.epsilon) * tv(&jsq.q_k, marg) + jsq.epsilon * miss
}

/// Exhaustive scan of the relaxed bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsScan {
    pub checked: usize,
    pub relaxed_violations: usize,
    pub main_violations: usize,
    /// Largest error minus main bound, and where it happens.
    pub worst_excess: f64,
    pub worst_theta: Option<Vec<Vec<usize>>>,
}

pub fn js_scan(js: &JSMechanism, tol: f64) -> Result<JsScan> {
    let total = num_joint_vectors(&js.base)
        .filter(|&t| t <= 5_000_000)
        .ok_or_else(|| Error::Domain("too many type vectors to scan".into()))?;
    let mut out = JsScan {
        checked: total,
        relaxed_violations: 0,
        main_violations: 0,
        worst_excess: f64::NEG_INFINITY,
        worst_theta: None,
    };
    for idx in 0..total {
        let theta = decode_profile(&js.base, idx);
        let r = js_play_and_error(js, &theta)?;
        if !r.within_relaxed(tol) {
            out.relaxed_violations += 1;
        }
        if r.violates_main_bound(tol) {
            out.main_violations += 1;
        }
        let excess = r.error.average - r.error.bound_rhs;
        if excess > out.worst_excess {
            out.worst_excess = excess;
            out.worst_theta = Some(theta.iter().map(|v| v.entries.clone()).collect());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub holds: bool,
    pub checked: usize,
    /// Largest JS interim utility minus main interim utility.
    pub worst_gap: f64,
    pub worst: Option<(usize, Vec<usize>)>,
}

/// Interim utilities of a type vector, per agent: (main, JS).
pub fn interim_utilities(js: &JSMechanism, i: usize, count: &[usize]) -> Result<(f64, f64)> {
    let mech = &js.base;
    let k = mech.k as f64;
    let p: Vec<f64> = count.iter().map(|&c| c as f64 / k).collect();
    let c = &mech.costs[i];
    let main = -solve_ot(c, &p, &mech.quotas[i])?.value;
    let jq = &js.quotas[i];
    let integral = js.kernel(i, count)?.value(c, &p);
    let mut noise = 0.0;
    for (a, pa) in p.iter().enumerate() {
        for (b, pb) in jq.p_k.iter().enumerate() {
            noise += pa * pb * c.at(a, b);
        }
    }
    Ok((main, -((1.0 - jq.epsilon) * integral + jq.epsilon * noise)))
}

/// Every type vector of every agent weakly prefers the main equilibrium.
pub fn js_utility_dominance(js: &JSMechanism) -> Result<DominanceReport> {
    let mut out = DominanceReport {
        holds: true,
        checked: 0,
        worst_gap: f64::NEG_INFINITY,
        worst: None,
    };
    for i in 0..js.base.n() {
        for count in compositions(js.base.k, js.base.m(i)) {
            let (main, jsu) = interim_utilities(js, i, &count)?;
            out.checked += 1;
            let gap = jsu - main;
            if gap > out.worst_gap {
                out.worst_gap = gap;
                out.worst = Some((i, count.clone()));
            }
            if gap > TOL.optimality {
                out.holds = false;
            }
        }
    }
    Ok(out)
}

/// Per agent and empirical type count, the average report mass on each
/// target type over problems of each true type: (before, after) replacement.
pub fn average_reports(js: &JSMechanism, i: usize, count: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let kern = js.kernel(i, count)?;
    let before = kern.rows.clone();
    let after = kern.rows.iter().map(|r| js.quotas[i].modify(r)).collect();
    Ok((before, after))
}

/// Exact probability, over types drawn from the priors, that the outcome puts
/// on x(theta^k) when `event(profile)` holds. x must be deterministic there.
pub fn conditional_accuracy<F, E>(mech: &QuotaMechanism, outcomes: F, event: E) -> Result<f64>
where
    F: Fn(&[TypeVector]) -> Result<Vec<Vec<f64>>>,
    E: Fn(&[usize]) -> bool,
{
    let total = num_joint_vectors(mech)
        .filter(|&t| t <= 1_000_000)
        .ok_or_else(|| Error::Domain("too many type vectors to enumerate".into()))?;
    let priors = mech.env.priors();
    let mut hits = Vec::new();
    let mut mass = Vec::new();
    for idx in 0..total {
        let theta = decode_profile(mech, idx);
        let w = profile_weight(&priors, &theta);
        let out = outcomes(&theta)?;
        for (kk, g) in out.iter().enumerate() {
            let prof: Vec<usize> = theta.iter().map(|v| v.entries[kk]).collect();
            if !event(&prof) {
                continue;
            }
            let row = mech.scf.row(mech.env.profile_index(&prof));
            let d = row
                .iter()
                .position(|&v| v > 1.0 - TOL.probability)
                .ok_or_else(|| Error::Domain("x is not deterministic on the event".into()))?;
            hits.push(w * g[d]);
            mass.push(w);
        }
    }
    let m = pairwise_sum(&mass);
    if m <= 0.0 {
        return domain("event has probability zero");
    }
    Ok(pairwise_sum(&hits) / m)
}

//! The static (x, q)-quota mechanism: equilibrium kernels, play and error bounds.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{check_probability, counts, pairwise_sum, product_masses, tv};
use crate::env::{scf_extend, scf_extend_product, Environment, SocialChoiceFunction, TypeVector};
use crate::error::{domain, Error, Result};
use crate::monotonicity::{
    agent_cost_matrix, interim_classes, is_cyclically_monotone, require_monotone, CMReport,
};
use crate::tol::TOL;
use crate::transport::{
    coupling_to_kernel, nearest_optimal_coupling, optimal_mass_on_set, solve_ot, CostMatrix,
    Coupling, Extremum, KernelCoupling, PairSet,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QuotaMechanism {
    pub env: Environment,
    pub scf: SocialChoiceFunction,
    pub quotas: Vec<Vec<f64>>,
    pub k: usize,
    pub costs: Vec<CostMatrix>,
    /// Cyclical monotonicity of each agent's diagonal under `costs`.
    pub cm: Vec<CMReport>,
}

impl QuotaMechanism {
    pub fn new(
        env: Environment,
        scf: SocialChoiceFunction,
        quotas: Vec<Vec<f64>>,
        k: usize,
    ) -> Result<Self> {
        env.validate()?;
        scf.validate(&env)?;
        if k == 0 {
            return domain("K must be at least 1");
        }
        if quotas.len() != env.n() {
            return domain("one quota per agent required");
        }
        for (i, q) in quotas.iter().enumerate() {
            if q.len() != env.m(i) {
                return domain(format!("agent {i}: quota length mismatch"));
            }
            check_probability(q)?;
        }
        let costs = (0..env.n())
            .map(|i| agent_cost_matrix(&env, &scf, &quotas, i))
            .collect::<Result<Vec<_>>>()?;
        let cm = costs.iter().map(is_cyclically_monotone).collect::<Result<Vec<_>>>()?;
        Ok(QuotaMechanism {
            env,
            scf,
            quotas,
            k,
            costs,
            cm,
        })
    }

    /// Quotas taken from the environment (each agent's `quota`, else its prior).
    pub fn from_env(env: Environment, scf: SocialChoiceFunction, k: usize) -> Result<Self> {
        let q = env.quotas();
        Self::new(env, scf, q, k)
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return domain("K must be at least 1");
        }
        Ok(QuotaMechanism { k, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.env.n()
    }

    pub fn m(&self, i: usize) -> usize {
        self.env.m(i)
    }

    /// All diagonals cyclically monotone, so the ex-post bound is guaranteed.
    pub fn is_cm(&self) -> bool {
        self.cm.iter().all(|r| r.holds)
    }

    pub fn check_types(&self, theta: &[TypeVector]) -> Result<()> {
        if theta.len() != self.n() {
            return domain(format!("expected {} type vectors, got {}", self.n(), theta.len()));
        }
        for (i, v) in theta.iter().enumerate() {
            v.validate(self.m(i))?;
            if v.k() != self.k {
                return domain(format!("agent {i}: type vector has length {} but K = {}", v.k(), self.k));
            }
        }
        Ok(())
    }

    pub fn marginals(&self, theta: &[TypeVector]) -> Vec<Vec<f64>> {
        theta
            .iter()
            .enumerate()
            .map(|(i, v)| crate::dist::empirical_marginal(&v.entries, self.m(i)))
            .collect()
    }

    /// Right side of the ex-post bound: sum of (|Theta_i| - 1) tv(q_i, marg_i).
    pub fn expost_bound(&self, margs: &[Vec<f64>]) -> f64 {
        margs
            .iter()
            .enumerate()
            .map(|(i, p)| (self.m(i) as f64 - 1.0) * tv(&self.quotas[i], p))
            .sum()
    }

    /// Bound on the expected error, (1/(2 sqrt K)) sum (|Theta_i| - 1)^{3/2}.
    pub fn expected_bound(&self) -> f64 {
        let s: f64 = (0..self.n()).map(|i| (self.m(i) as f64 - 1.0).powf(1.5)).sum();
        s / (2.0 * (self.k as f64).sqrt())
    }

    /// Decision-space variant for one agent and deterministic x: (|x(Theta)| - 1)^{3/2} / (2 sqrt K).
    pub fn refined_expected_bound(&self) -> Option<f64> {
        let j = self.image_size()?;
        Some((j as f64 - 1.0).powf(1.5) / (2.0 * (self.k as f64).sqrt()))
    }

    /// Number of distinct decisions when n = 1 and x is deterministic.
    fn image_size(&self) -> Option<usize> {
        if self.n() != 1 {
            return None;
        }
        let mut c = self.scf.choices()?;
        c.sort_unstable();
        c.dedup();
        Some(c.len())
    }

    /// Intended outcome x(theta^k) on every problem.
    pub fn targets(&self, theta: &[TypeVector]) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|k| {
                let prof: Vec<usize> = theta.iter().map(|v| v.entries[k]).collect();
                self.scf.row(self.env.profile_index(&prof)).to_vec()
            })
            .collect()
    }
}

/// How each agent picks an optimal kernel for a given empirical marginal.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelRule {
    /// Maximize the truthful (diagonal) mass among optimal couplings.
    DiagonalMax,
    /// Minimize the mass on pairs assigned the same decision.
    MinOnClasses,
    /// Maximize the mass on pairs assigned the same decision.
    Projected,
    /// Optimal coupling nearest to a fixed anchor coupling per agent.
    Nearest(Vec<Coupling>),
}

/// A label-free strategy profile: agent i with empirical marginal p sends
/// type theta^k to the kernel row r_i(theta^k; p). Kernels are memoized by type counts.
#[derive(Debug)]
pub struct EquilibriumStrategy {
    pub rule: KernelRule,
    cache: Vec<Mutex<HashMap<Vec<usize>, KernelCoupling>>>,
}

impl Clone for EquilibriumStrategy {
    fn clone(&self) -> Self {
        EquilibriumStrategy {
            rule: self.rule.clone(),
            cache: self
                .cache
                .iter()
                .map(|c| Mutex::new(c.lock().expect("kernel cache").clone()))
                .collect(),
        }
    }
}

impl EquilibriumStrategy {
    pub fn new(mech: &QuotaMechanism, rule: KernelRule) -> Self {
        EquilibriumStrategy {
            rule,
            cache: (0..mech.n()).map(|_| Mutex::new(HashMap::new())).collect(),
        }
    }

    pub fn diagonal_max(mech: &QuotaMechanism) -> Self {
        Self::new(mech, KernelRule::DiagonalMax)
    }

    /// Override the kernel used at a given count vector.
    pub fn set_kernel(&self, i: usize, count: Vec<usize>, kernel: KernelCoupling) {
        self.cache[i].lock().expect("kernel cache").insert(count, kernel);
    }

    /// Memoized kernel entries for agent `i`, sorted by count vector.
    pub fn entries(&self, i: usize) -> Vec<(Vec<usize>, KernelCoupling)> {
        let mut v: Vec<_> = self.cache[i]
            .lock()
            .expect("kernel cache")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn kernel(&self, mech: &QuotaMechanism, i: usize, count: &[usize]) -> Result<KernelCoupling> {
        if let Some(k) = self.cache[i].lock().expect("kernel cache").get(count) {
            return Ok(k.clone());
        }
        let total: usize = count.iter().sum();
        let p: Vec<f64> = count.iter().map(|&c| c as f64 / total as f64).collect();
        let kernel = rule_kernel(mech, &self.rule, i, &p)?;
        self.cache[i]
            .lock()
            .expect("kernel cache")
            .insert(count.to_vec(), kernel.clone());
        Ok(kernel)
    }
}

fn rule_kernel(mech: &QuotaMechanism, rule: &KernelRule, i: usize, p: &[f64]) -> Result<KernelCoupling> {
    let c = &mech.costs[i];
    let q = &mech.quotas[i];
    let gamma = match rule {
        KernelRule::DiagonalMax => {
            optimal_mass_on_set(c, p, q, &PairSet::diagonal(mech.m(i)), Extremum::Max)?.coupling
        }
        KernelRule::MinOnClasses | KernelRule::Projected => {
            let classes = interim_classes(&mech.env, &mech.scf, &mech.quotas, i);
            let dir = if *rule == KernelRule::Projected {
                Extremum::Max
            } else {
                Extremum::Min
            };
            optimal_mass_on_set(c, p, q, &PairSet::same_class(&classes), dir)?.coupling
        }
        KernelRule::Nearest(anchors) => {
            let a = anchors
                .get(i)
                .ok_or_else(|| Error::Domain(format!("no anchor coupling for agent {i}")))?;
            nearest_optimal_coupling(c, a, p, q)?.coupling
        }
    };
    let labels = &mech.env.agents[i].types;
    Ok(coupling_to_kernel(&gamma, q, labels, labels))
}

/// Diagonal-maximal optimal kernel from `p` to agent i's quota.
pub fn equilibrium_kernel(mech: &QuotaMechanism, i: usize, p: &[f64]) -> Result<KernelCoupling> {
    if p.len() != mech.m(i) {
        return domain("marginal length does not match the type set");
    }
    check_probability(p)?;
    rule_kernel(mech, &KernelRule::DiagonalMax, i, p)
}

/// Report vectors and outcomes of one play of the mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Play {
    /// `reports[i][k]`: agent i's report distribution on problem k.
    pub reports: Vec<Vec<Vec<f64>>>,
    /// Decision lottery on each problem.
    pub outcomes: Vec<Vec<f64>>,
}

/// Outcome on each problem of a report profile: x applied to the product of reports.
pub fn outcomes_of_reports(x: &SocialChoiceFunction, reports: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let k = reports.first().map_or(0, Vec::len);
    (0..k)
        .map(|k| {
            let r: Vec<&[f64]> = reports.iter().map(|ri| ri[k].as_slice()).collect();
            scf_extend_product(x, &r)
        })
        .collect()
}

/// Largest deviation of the average report from the quota.
pub fn quota_gap(reports: &[Vec<f64>], q: &[f64]) -> f64 {
    let k = reports.len() as f64;
    (0..q.len())
        .map(|t| {
            let avg: f64 = reports.iter().map(|r| r[t]).sum::<f64>() / k;
            (avg - q[t]).abs()
        })
        .fold(0.0, f64::max)
}

pub fn play(mech: &QuotaMechanism, strat: &EquilibriumStrategy, theta: &[TypeVector]) -> Result<Play> {
    mech.check_types(theta)?;
    let mut reports = Vec::with_capacity(mech.n());
    for (i, v) in theta.iter().enumerate() {
        let kern = strat.kernel(mech, i, &counts(&v.entries, mech.m(i)))?;
        let r: Vec<Vec<f64>> = v.entries.iter().map(|&t| kern.row(t).to_vec()).collect();
        let gap = quota_gap(&r, &mech.quotas[i]);
        if gap > TOL.probability {
            return Err(Error::Invariant(format!(
                "agent {i}: reports miss the quota by {gap:e}"
            )));
        }
        reports.push(r);
    }
    let outcomes = outcomes_of_reports(&mech.scf, &reports);
    Ok(Play { reports, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub per_problem_tv: Vec<f64>,
    pub average: f64,
    pub bound_rhs: f64,
    pub refined_rhs: Option<f64>,
    pub lower_bound: Option<f64>,
    /// Every agent's diagonal is cyclically monotone, so the bound applies here.
    pub guaranteed: bool,
}

impl ErrorReport {
    pub fn within_bound(&self, tol: f64) -> bool {
        self.average <= self.bound_rhs + tol
    }
}

pub fn expost_error(
    mech: &QuotaMechanism,
    strat: &EquilibriumStrategy,
    theta: &[TypeVector],
) -> Result<ErrorReport> {
    let pl = play(mech, strat, theta)?;
    Ok(error_report(mech, theta, &pl.outcomes))
}

/// Error report of arbitrary outcomes against x(theta^k).
pub fn error_report(mech: &QuotaMechanism, theta: &[TypeVector], outcomes: &[Vec<f64>]) -> ErrorReport {
    let targets = mech.targets(theta);
    let per_problem_tv: Vec<f64> = outcomes.iter().zip(&targets).map(|(g, x)| tv(g, x)).collect();
    let average = pairwise_sum(&per_problem_tv) / mech.k as f64;
    let margs = mech.marginals(theta);
    ErrorReport {
        per_problem_tv,
        average,
        bound_rhs: mech.expost_bound(&margs),
        refined_rhs: refined_error_rhs(mech, theta).ok(),
        lower_bound: lower_bound_error(mech, theta).ok(),
        guaranteed: mech.is_cm(),
    }
}

/// (|x(Theta)| - 1) tv(x(q), x(marg)) for one agent with deterministic x.
pub fn refined_error_rhs(mech: &QuotaMechanism, theta: &[TypeVector]) -> Result<f64> {
    let j = match mech.image_size() {
        Some(j) => j,
        None => return domain("refined bound needs a single agent and a deterministic SCF"),
    };
    mech.check_types(theta)?;
    let marg = crate::dist::empirical_marginal(&theta[0].entries, mech.m(0));
    let xq = scf_extend(&mech.scf, &mech.quotas[0]);
    let xp = scf_extend(&mech.scf, &marg);
    Ok((j as f64 - 1.0) * tv(&xq, &xp))
}

/// max_i tv(q_i, marg_i), a floor on the error of every strategy when x is injective.
pub fn lower_bound_error(mech: &QuotaMechanism, theta: &[TypeVector]) -> Result<f64> {
    if !mech.scf.is_injective() {
        return domain("lower bound needs an injective SCF");
    }
    mech.check_types(theta)?;
    Ok(mech
        .marginals(theta)
        .iter()
        .enumerate()
        .map(|(i, p)| tv(&mech.quotas[i], p))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    /// Expected cost per problem of the strategy's kernel.
    pub value: f64,
    /// Optimal transport value.
    pub optimum: f64,
    pub gain: f64,
    pub is_best: bool,
}

/// Compare the strategy's kernel at `count` with the optimal transport value.
pub fn verify_best_response(
    mech: &QuotaMechanism,
    strat: &EquilibriumStrategy,
    i: usize,
    count: &[usize],
) -> Result<BestResponse> {
    if count.len() != mech.m(i) || count.iter().sum::<usize>() != mech.k {
        return domain("type counts must cover the agent's types and sum to K");
    }
    let p: Vec<f64> = count.iter().map(|&c| c as f64 / mech.k as f64).collect();
    let kern = strat.kernel(mech, i, count)?;
    let c = &mech.costs[i];
    let value = kern.value(c, &p);
    let optimum = solve_ot(c, &p, &mech.quotas[i])?.value;
    let gain = (value - optimum).max(0.0);
    Ok(BestResponse {
        value,
        optimum,
        gain,
        is_best: gain <= TOL.bound,
    })
}

/// Outcome of an exhaustive ex-post scan over all type vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub k: usize,
    pub checked: usize,
    pub violations: usize,
    /// Largest value of average - bound_rhs seen.
    pub worst_slack: f64,
    pub worst_theta: Option<Vec<TypeVector>>,
    pub guaranteed: bool,
}

/// Joint type-vector profile with the given lexicographic index.
pub fn decode_profile(mech: &QuotaMechanism, mut index: usize) -> Vec<TypeVector> {
    let mut out: Vec<TypeVector> = Vec::with_capacity(mech.n());
    for i in (0..mech.n()).rev() {
        let m = mech.m(i);
        let mut e = vec![0; mech.k];
        for k in (0..mech.k).rev() {
            e[k] = index % m;
            index /= m;
        }
        out.push(TypeVector::new(e));
    }
    out.reverse();
    out
}

pub fn num_joint_vectors(mech: &QuotaMechanism) -> Option<usize> {
    (0..mech.n()).try_fold(1usize, |acc, i| {
        (mech.m(i) as u32)
            .checked_pow(mech.k as u32)
            .and_then(|p| acc.checked_mul(p as usize))
    })
}

const SCAN_LIMIT: usize = 5_000_000;

pub fn scan_expost(mech: &QuotaMechanism, strat: &EquilibriumStrategy, tol: f64) -> Result<ScanReport> {
    let total = match num_joint_vectors(mech) {
        Some(t) if t <= SCAN_LIMIT => t,
        _ => return domain(format!("scan over more than {SCAN_LIMIT} type vectors")),
    };
    let slacks = (0..total)
        .into_par_iter()
        .map(|idx| {
            let theta = decode_profile(mech, idx);
            expost_error(mech, strat, &theta).map(|r| r.average - r.bound_rhs)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_idx = None;
    let mut violations = 0;
    for (idx, &s) in slacks.iter().enumerate() {
        if s > tol {
            violations += 1;
        }
        if s > worst {
            worst = s;
            worst_idx = Some(idx);
        }
    }
    Ok(ScanReport {
        k: mech.k,
        checked: total,
        violations,
        worst_slack: worst,
        worst_theta: worst_idx.map(|i| decode_profile(mech, i)),
        guaranteed: mech.is_cm(),
    })
}

fn single_deterministic(mech: &QuotaMechanism) -> Result<Vec<usize>> {
    if mech.n() != 1 {
        return domain("decision menus need a single agent");
    }
    match mech.scf.choices() {
        Some(c) => Ok(c),
        None => domain("decision menus need a deterministic SCF"),
    }
}

/// Whether a decision vector averages to x(q).
pub fn in_menu(mech: &QuotaMechanism, decisions: &[Vec<f64>]) -> bool {
    let nd = mech.scf.num_decisions();
    if decisions.len() != mech.k || decisions.iter().any(|d| d.len() != nd) {
        return false;
    }
    if decisions.iter().any(|d| check_probability(d).is_err()) {
        return false;
    }
    let xq = scf_extend(&mech.scf, &mech.quotas[0]);
    (0..nd).all(|d| {
        let avg = decisions.iter().map(|a| a[d]).sum::<f64>() / mech.k as f64;
        (avg - xq[d]).abs() <= TOL.probability
    })
}

/// Report vector producing the given decision vector, built class by class in
/// proportion to the quota.
pub fn menu_preimage(mech: &QuotaMechanism, decisions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let choice = single_deterministic(mech)?;
    if !in_menu(mech, decisions) {
        return domain("decision vector does not average to x(q)");
    }
    let q = &mech.quotas[0];
    let mut class_mass = vec![0.0; mech.scf.num_decisions()];
    for (t, &d) in choice.iter().enumerate() {
        class_mass[d] += q[t];
    }
    Ok(decisions
        .iter()
        .map(|a| {
            choice
                .iter()
                .enumerate()
                .map(|(t, &d)| if class_mass[d] > 0.0 { a[d] * q[t] / class_mass[d] } else { 0.0 })
                .collect()
        })
        .collect())
}

/// K random distributions averaging exactly to `center`.
fn random_vectors_around(rng: &mut ChaCha8Rng, center: &[f64], k: usize) -> Vec<Vec<f64>> {
    let support: Vec<usize> = (0..center.len()).filter(|&j| center[j] > 0.0).collect();
    let w: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut v = vec![0.0; center.len()];
            let raw: Vec<f64> = support.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            for (j, r) in support.iter().zip(raw) {
                v[*j] = r / s;
            }
            v
        })
        .collect();
    let mean: Vec<f64> = (0..center.len())
        .map(|j| w.iter().map(|v| v[j]).sum::<f64>() / k as f64)
        .collect();
    // largest step keeping every entry nonnegative, then a random fraction of it
    let mut lam = f64::INFINITY;
    for v in &w {
        for j in &support {
            let d = v[*j] - mean[*j];
            if d < 0.0 {
                lam = lam.min(center[*j] / -d);
            }
        }
    }
    let lam = if lam.is_finite() { lam * rng.random::<f64>() } else { 0.0 };
    w.iter()
        .map(|v| {
            (0..center.len())
                .map(|j| (center[j] + lam * (v[j] - mean[j])).max(0.0))
                .collect()
        })
        .collect()
}

/// Both inclusions between the outcome set of the quota mechanism and the
/// decision menu, on `samples` random report and decision vectors.
pub fn menu_equivalence_check(mech: &QuotaMechanism, samples: usize, seed: u64) -> Result<bool> {
    single_deterministic(mech)?;
    let q = &mech.quotas[0];
    let xq = scf_extend(&mech.scf, q);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let r = random_vectors_around(&mut rng, q, mech.k);
        if quota_gap(&r, q) > TOL.probability {
            return Err(Error::Invariant("sampled reports miss the quota".into()));
        }
        let g: Vec<Vec<f64>> = r.iter().map(|rk| scf_extend(&mech.scf, rk)).collect();
        if !in_menu(mech, &g) {
            return Ok(false);
        }
        let a = random_vectors_around(&mut rng, &xq, mech.k);
        let pre = menu_preimage(mech, &a)?;
        if quota_gap(&pre, q) > TOL.probability {
            return Ok(false);
        }
        for (rk, ak) in pre.iter().zip(&a) {
            let back = scf_extend(&mech.scf, rk);
            if back.iter().zip(ak).any(|(x, y)| (x - y).abs() > TOL.probability) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScf {
    pub scf: SocialChoiceFunction,
    /// Kernels from pi_i to q_i, one per agent.
    pub kernels: Vec<KernelCoupling>,
    /// Optimal couplings of pi_i and q_i behind the kernels.
    pub couplings: Vec<Coupling>,
    /// Exact E^pi tv(x_pi(theta), x(theta)).
    pub value: f64,
    pub bound: f64,
}

/// x_pi(theta) = x(prod_i r_i(theta_i)) with diagonal-maximal kernels from pi_i to q_i.
pub fn build_robust_scf(
    env: &Environment,
    x: &SocialChoiceFunction,
    q: &[Vec<f64>],
    pi: &[Vec<f64>],
) -> Result<RobustScf> {
    env.validate()?;
    x.validate(env)?;
    if pi.len() != env.n() || (0..env.n()).any(|i| pi[i].len() != env.m(i)) {
        return domain("pi does not match the environment");
    }
    for p in pi {
        check_probability(p)?;
    }
    require_monotone(env, x, q)?;
    let mut kernels = Vec::with_capacity(env.n());
    let mut couplings = Vec::with_capacity(env.n());
    for i in 0..env.n() {
        let c = agent_cost_matrix(env, x, q, i)?;
        let gamma = optimal_mass_on_set(&c, &pi[i], &q[i], &PairSet::diagonal(env.m(i)), Extremum::Max)?
            .coupling;
        let labels = &env.agents[i].types;
        kernels.push(coupling_to_kernel(&gamma, &q[i], labels, labels));
        couplings.push(gamma);
    }
    let mut rows = Vec::with_capacity(env.num_profiles());
    let mut terms = Vec::with_capacity(env.num_profiles());
    for idx in 0..env.num_profiles() {
        let prof = env.profile(idx);
        let r: Vec<&[f64]> = prof.iter().enumerate().map(|(i, &t)| kernels[i].row(t)).collect();
        let row = scf_extend_product(x, &r);
        let w: f64 = prof.iter().enumerate().map(|(i, &t)| pi[i][t]).product();
        terms.push(w * tv(&row, x.row(idx)));
        rows.push(row);
    }
    let bound = (0..env.n())
        .map(|i| (env.m(i) as f64 - 1.0) * tv(&q[i], &pi[i]))
        .sum();
    Ok(RobustScf {
        scf: SocialChoiceFunction::new(rows),
        kernels,
        couplings,
        value: pairwise_sum(&terms),
        bound,
    })
}

/// Probability weight of a joint profile under the product of priors `pi`.
pub fn profile_weight(pi: &[Vec<f64>], theta: &[TypeVector]) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(i, v)| v.entries.iter().map(|&t| pi[i][t]).product::<f64>())
        .product()
}

/// Mass of each joint report profile on problem k (diagnostics).
pub fn report_profile(play: &Play, k: usize) -> Vec<f64> {
    let r: Vec<&[f64]> = play.reports.iter().map(|ri| ri[k].as_slice()).collect();
    product_masses(&r)
}

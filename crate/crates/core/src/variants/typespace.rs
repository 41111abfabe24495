//! Finite type spaces: each type carries a payoff-type vector and a belief over
//! the opponents' types.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{check_probability, counts, product_masses};
use crate::env::{scf_extend_product, TypeVector};
use crate::error::{domain, Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::mechanism::{expost_error, EquilibriumStrategy, QuotaMechanism};
use crate::tol::TOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpaceAgent {
    pub types: Vec<String>,
    /// Payoff-type labels on the K problems, one vector per type.
    pub payoff: Vec<Vec<String>>,
    /// Belief over opponents' type profiles, lexicographic with the lowest
    /// opponent index most significant.
    pub belief: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteTypeSpace {
    pub k: usize,
    pub agents: Vec<TypeSpaceAgent>,
}

impl FiniteTypeSpace {
    pub fn from_json(text: &str) -> Result<Self> {
        let ts: FiniteTypeSpace =
            serde_json::from_str(text).map_err(|e| Error::Domain(format!("type space JSON: {e}")))?;
        ts.validate()?;
        Ok(ts)
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    fn sizes(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.types.len()).collect()
    }

    /// Opponent type sizes of agent i, in profile order.
    fn opponent_sizes(&self, i: usize) -> Vec<usize> {
        self.sizes()
            .into_iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| s)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return domain("type space needs K >= 1");
        }
        if self.agents.is_empty() {
            return domain("type space needs at least one agent");
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.types.is_empty() {
                return domain(format!("agent {i} has no types"));
            }
            if a.payoff.len() != a.types.len() || a.belief.len() != a.types.len() {
                return domain(format!("agent {i}: payoff and belief maps must cover every type"));
            }
            if let Some(p) = a.payoff.iter().find(|p| p.len() != self.k) {
                return domain(format!("agent {i}: payoff vector {p:?} does not have K entries"));
            }
            let want: usize = self.opponent_sizes(i).iter().product();
            for b in &a.belief {
                if b.len() != want {
                    return domain(format!("agent {i}: belief has {} entries, expected {want}", b.len()));
                }
                check_probability(b)?;
            }
        }
        Ok(())
    }

    /// Payoff types as indices into the environment's type sets.
    fn resolve(&self, mech: &QuotaMechanism) -> Result<Vec<Vec<TypeVector>>> {
        if self.n() != mech.n() || self.k != mech.k {
            return domain("type space and mechanism disagree on n or K");
        }
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let labels = &mech.env.agents[i].types;
                a.payoff
                    .iter()
                    .map(|p| {
                        let refs: Vec<&str> = p.iter().map(String::as_str).collect();
                        TypeVector::from_labels(&refs, labels)
                    })
                    .collect()
            })
            .collect()
    }
}

fn decode(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (j, &s) in sizes.iter().enumerate().rev() {
        out[j] = idx % s;
        idx /= s;
    }
    out
}

/// Opponent type profile, in agent order, with agent i's slot removed.
fn opponents(i: usize, profile: &[usize]) -> Vec<(usize, usize)> {
    profile
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &t)| (j, t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpaceFlags {
    pub exchangeable: bool,
    pub independent: bool,
    /// First failure found, as text.
    pub witness: Option<String>,
}

pub fn check_type_space(ts: &FiniteTypeSpace) -> Result<TypeSpaceFlags> {
    ts.validate()?;
    let mut flags = TypeSpaceFlags {
        exchangeable: true,
        independent: true,
        witness: None,
    };
    let k = ts.k;
    for (i, a) in ts.agents.iter().enumerate() {
        let opp = ts.opponent_sizes(i);
        for (ti, belief) in a.belief.iter().enumerate() {
            let profiles: Vec<(Vec<(usize, usize)>, f64)> = belief
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(idx, &w)| {
                    let mut full = decode(idx, &opp);
                    full.insert(i, 0);
                    (opponents(i, &full), w)
                })
                .collect();
            // exchangeability: each opponent's payoff vector law is invariant
            // under adjacent transpositions, which generate all permutations
            for j in (0..ts.n()).filter(|&j| j != i) {
                let mut law: BTreeMap<Vec<&str>, f64> = BTreeMap::new();
                for (opp_prof, w) in &profiles {
                    let tj = opp_prof.iter().find(|(jj, _)| *jj == j).expect("opponent").1;
                    let v: Vec<&str> = ts.agents[j].payoff[tj].iter().map(String::as_str).collect();
                    *law.entry(v).or_default() += w;
                }
                'outer: for (v, w) in &law {
                    for s in 0..k.saturating_sub(1) {
                        let mut sw = v.clone();
                        sw.swap(s, s + 1);
                        let other = law.get(&sw).copied().unwrap_or(0.0);
                        if (other - w).abs() > TOL.probability {
                            if flags.exchangeable {
                                flags.witness = Some(format!(
                                    "agent {i} type {}: belief about agent {j} gives {w} to {v:?} but {other} to {sw:?}",
                                    a.types[ti]
                                ));
                            }
                            flags.exchangeable = false;
                            break 'outer;
                        }
                    }
                }
            }
            // independence across opponents on each problem
            if ts.n() <= 2 {
                continue;
            }
            for kk in 0..k {
                let mut joint: BTreeMap<Vec<&str>, f64> = BTreeMap::new();
                let mut margs: Vec<BTreeMap<&str, f64>> = vec![BTreeMap::new(); opp.len()];
                for (opp_prof, w) in &profiles {
                    let v: Vec<&str> = opp_prof
                        .iter()
                        .map(|&(j, t)| ts.agents[j].payoff[t][kk].as_str())
                        .collect();
                    for (s, l) in v.iter().enumerate() {
                        *margs[s].entry(l).or_default() += w;
                    }
                    *joint.entry(v).or_default() += w;
                }
                let keys: Vec<Vec<&str>> = margs.iter().map(|m| m.keys().copied().collect()).collect();
                let mut idx = vec![0usize; keys.len()];
                'cells: loop {
                    let cell: Vec<&str> = idx.iter().enumerate().map(|(s, &x)| keys[s][x]).collect();
                    let prod: f64 = cell.iter().enumerate().map(|(s, l)| margs[s][l]).product();
                    let got = joint.get(&cell).copied().unwrap_or(0.0);
                    if (got - prod).abs() > TOL.probability {
                        if flags.independent && flags.witness.is_none() {
                            flags.witness = Some(format!(
                                "agent {i} type {}: problem {kk} joint {got} vs product {prod} at {cell:?}",
                                a.types[ti]
                            ));
                        }
                        flags.independent = false;
                        break;
                    }
                    let mut s = keys.len();
                    loop {
                        if s == 0 {
                            break 'cells;
                        }
                        s -= 1;
                        idx[s] += 1;
                        if idx[s] < keys[s].len() {
                            break;
                        }
                        idx[s] = 0;
                    }
                }
            }
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeBestResponse {
    pub agent: usize,
    pub type_label: String,
    pub equilibrium_value: f64,
    pub best_value: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustEquilibriumReport {
    pub flags: TypeSpaceFlags,
    pub profiles_checked: usize,
    /// Type profiles (indices into each T_i) where the ex-post bound fails.
    pub bound_failures: Vec<Vec<usize>>,
    pub worst_bound_slack: f64,
    pub best_responses: Vec<TypeBestResponse>,
    pub max_gain: f64,
}

impl RobustEquilibriumReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.bound_failures.is_empty() && self.max_gain <= tol
    }

    pub fn failing_types(&self, tol: f64) -> Vec<&TypeBestResponse> {
        self.best_responses.iter().filter(|b| b.gain > tol).collect()
    }
}

/// Agent i's per-problem utility coefficients a[k][r] of reporting r on problem
/// k, against belief-weighted opponent reports.
fn interim_coefficients(
    ts: &FiniteTypeSpace,
    mech: &QuotaMechanism,
    reports: &[Vec<Vec<Vec<f64>>>],
    theta: &[Vec<TypeVector>],
    i: usize,
    ti: usize,
) -> Vec<Vec<f64>> {
    let opp = ts.opponent_sizes(i);
    let m = mech.m(i);
    let own = &theta[i][ti];
    let mut a = vec![vec![0.0; m]; ts.k];
    for (idx, &w) in ts.agents[i].belief[ti].iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let mut prof = decode(idx, &opp);
        prof.insert(i, 0);
        for (kk, row) in a.iter_mut().enumerate() {
            for (r, coef) in row.iter_mut().enumerate() {
                let mut delta = vec![0.0; m];
                delta[r] = 1.0;
                let lot: Vec<&[f64]> = (0..ts.n())
                    .map(|j| if j == i { delta.as_slice() } else { reports[j][prof[j]][kk].as_slice() })
                    .collect();
                let lottery = scf_extend_product(&mech.scf, &lot);
                *coef += w * mech.env.lottery_utility(i, &lottery, own.entries[kk]);
            }
        }
    }
    a
}

/// Best interim utility over quota-feasible report vectors.
fn best_interim(a: &[Vec<f64>], q: &[f64]) -> Result<f64> {
    let (k, m) = (a.len(), q.len());
    let mut lp = LinearProgram::new(k * m);
    lp.maximize(a.iter().flatten().map(|v| v / k as f64).collect());
    for kk in 0..k {
        let terms: Vec<(usize, f64)> = (0..m).map(|t| (kk * m + t, 1.0)).collect();
        lp.constrain_sparse(&terms, Relation::Eq, 1.0);
    }
    for t in 0..m {
        let terms: Vec<(usize, f64)> = (0..k).map(|kk| (kk * m + t, 1.0 / k as f64)).collect();
        lp.constrain_sparse(&terms, Relation::Eq, q[t]);
    }
    Ok(lp.solve()?.objective)
}

/// Play sigma_i(t_i) = equilibrium kernel at marg of the payoff vector, then
/// check the ex-post bound at every type profile and the interim best
/// response of every type. The flags are reported, not enforced.
pub fn verify_robust_equilibrium(ts: &FiniteTypeSpace, mech: &QuotaMechanism) -> Result<RobustEquilibriumReport> {
    ts.validate()?;
    if mech.n() < 2 {
        return domain("type-space verification needs at least two agents");
    }
    let flags = check_type_space(ts)?;
    let theta = ts.resolve(mech)?;
    let strat = EquilibriumStrategy::diagonal_max(mech);
    // reports[i][t_i][k]
    let mut reports = Vec::with_capacity(mech.n());
    for (i, vs) in theta.iter().enumerate() {
        let mut per_type = Vec::with_capacity(vs.len());
        for v in vs {
            let kern = strat.kernel(mech, i, &counts(&v.entries, mech.m(i)))?;
            per_type.push(v.entries.iter().map(|&t| kern.row(t).to_vec()).collect::<Vec<_>>());
        }
        reports.push(per_type);
    }

    let sizes = ts.sizes();
    let total = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .filter(|&t| t <= 2_000_000)
        .ok_or_else(|| Error::Domain("type space too large to enumerate".into()))?;
    let checks = (0..total)
        .into_par_iter()
        .map(|idx| {
            let prof = decode(idx, &sizes);
            let tv: Vec<TypeVector> = prof.iter().enumerate().map(|(i, &t)| theta[i][t].clone()).collect();
            let r = expost_error(mech, &strat, &tv)?;
            Ok((prof, r.bound_rhs - r.average))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bound_failures = Vec::new();
    let mut worst_bound_slack = f64::INFINITY;
    for (prof, slack) in checks {
        worst_bound_slack = worst_bound_slack.min(slack);
        if slack < -TOL.bound {
            bound_failures.push(prof);
        }
    }

    let mut best_responses = Vec::new();
    for i in 0..mech.n() {
        for ti in 0..sizes[i] {
            let a = interim_coefficients(ts, mech, &reports, &theta, i, ti);
            let k = ts.k as f64;
            let eq: f64 = a
                .iter()
                .zip(&reports[i][ti])
                .map(|(ak, rk)| ak.iter().zip(rk).map(|(x, y)| x * y).sum::<f64>())
                .sum::<f64>()
                / k;
            let best = best_interim(&a, &mech.quotas[i])?;
            best_responses.push(TypeBestResponse {
                agent: i,
                type_label: ts.agents[i].types[ti].clone(),
                equilibrium_value: eq,
                best_value: best,
                gain: (best - eq).max(0.0),
            });
        }
    }
    let max_gain = best_responses.iter().map(|b| b.gain).fold(0.0, f64::max);
    Ok(RobustEquilibriumReport {
        flags,
        profiles_checked: total,
        bound_failures,
        worst_bound_slack,
        best_responses,
        max_gain,
    })
}

fn vector_label(labels: &[String], v: &[usize]) -> String {
    v.iter().map(|&t| labels[t].as_str()).collect::<Vec<_>>().join(".")
}

/// T_i = Theta_i^K with every type believing opponents' vectors are iid
/// draws from `beliefs[j]`. With beliefs = q this is the common-prior space.
pub fn iid_type_space(mech: &QuotaMechanism, beliefs: &[Vec<f64>]) -> Result<FiniteTypeSpace> {
    if beliefs.len() != mech.n() {
        return domain("one belief distribution per agent");
    }
    for (j, b) in beliefs.iter().enumerate() {
        if b.len() != mech.m(j) {
            return domain(format!("belief about agent {j} has the wrong length"));
        }
        check_probability(b)?;
    }
    let k = mech.k;
    let vectors: Vec<Vec<Vec<usize>>> = (0..mech.n())
        .map(|i| (0..mech.m(i).pow(k as u32)).map(|idx| decode(idx, &vec![mech.m(i); k])).collect())
        .collect();
    // law of agent j's whole vector
    let vector_law: Vec<Vec<f64>> = (0..mech.n())
        .map(|j| {
            let f: Vec<&[f64]> = (0..k).map(|_| beliefs[j].as_slice()).collect();
            product_masses(&f)
        })
        .collect();
    let agents = (0..mech.n())
        .map(|i| {
            let labels = &mech.env.agents[i].types;
            let others: Vec<&[f64]> = (0..mech.n())
                .filter(|&j| j != i)
                .map(|j| vector_law[j].as_slice())
                .collect();
            let belief = product_masses(&others);
            TypeSpaceAgent {
                types: vectors[i].iter().map(|v| vector_label(labels, v)).collect(),
                payoff: vectors[i]
                    .iter()
                    .map(|v| v.iter().map(|&t| labels[t].clone()).collect())
                    .collect(),
                belief: vec![belief; vectors[i].len()],
            }
        })
        .collect();
    let ts = FiniteTypeSpace { k, agents };
    ts.validate()?;
    Ok(ts)
}

/// Two agents with one type each: payoff vectors (L, M, H) and (M, H, L), and
/// point beliefs on each other. Labels refer to a three-type environment.
pub fn cyclic_point_space(labels: &[&str; 3]) -> FiniteTypeSpace {
    let [l, m, h] = labels.map(String::from);
    FiniteTypeSpace {
        k: 3,
        agents: vec![
            TypeSpaceAgent {
                types: vec!["t1".into()],
                payoff: vec![vec![l.clone(), m.clone(), h.clone()]],
                belief: vec![vec![1.0]],
            },
            TypeSpaceAgent {
                types: vec!["t2".into()],
                payoff: vec![vec![m, h, l]],
                belief: vec![vec![1.0]],
            },
        ],
    }
}

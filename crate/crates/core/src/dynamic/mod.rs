//! Discounted dynamic quota mechanism for a single agent.
//!
//! Reports satisfy (1 - beta) sum_s beta^s r^s <= q at every period. The state
//! is the remaining normalized quota Q (which stays on the simplex) and the
//! current type; Q' = (Q - (1 - beta) r) / beta.

pub mod grid;
mod simulate;

use serde::{Deserialize, Serialize};

use crate::dist::check_probability;
use crate::env::{Environment, SocialChoiceFunction};
use crate::error::{domain, Error, Result};
use crate::tol::TOL;

pub use grid::SimplexGrid;
pub use simulate::{simulate_discounted, traces_to_csv, DynamicReport, OccupationCoupling, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicMechanism {
    pub env: Environment,
    pub scf: SocialChoiceFunction,
    pub q: Vec<f64>,
    pub beta: f64,
    /// util[theta][theta'] = u(x(theta'), theta)
    util: Vec<Vec<f64>>,
}

impl DynamicMechanism {
    /// The (x, q)-mechanism with q the agent's quota, or the prior if none.
    pub fn new(env: Environment, scf: SocialChoiceFunction, beta: f64) -> Result<Self> {
        let q = env
            .agents
            .first()
            .map(|a| a.quota_or_prior().to_vec())
            .unwrap_or_default();
        Self::with_quota(env, scf, q, beta)
    }

    pub fn with_quota(env: Environment, scf: SocialChoiceFunction, q: Vec<f64>, beta: f64) -> Result<Self> {
        env.validate()?;
        scf.validate(&env)?;
        if env.n() != 1 {
            return domain("dynamic mechanisms are single-agent");
        }
        if !(beta > 0.0 && beta < 1.0) {
            return domain(format!("beta must lie in (0, 1), got {beta}"));
        }
        if q.len() != env.m(0) {
            return domain("quota length does not match the type set");
        }
        check_probability(&q)?;
        let m = env.m(0);
        let util = (0..m)
            .map(|t| (0..m).map(|s| env.lottery_utility(0, scf.row(s), t)).collect())
            .collect();
        Ok(DynamicMechanism {
            env,
            scf,
            q,
            beta,
            util,
        })
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.env.agents[0].prior
    }

    pub fn utility(&self, theta: usize, report: &[f64]) -> f64 {
        self.util[theta].iter().zip(report).map(|(u, r)| u * r).sum()
    }

    /// Remaining quota after reporting `r` in state `q_state`.
    pub fn next_quota(&self, q_state: &[f64], r: &[f64]) -> Vec<f64> {
        let b = self.beta;
        q_state
            .iter()
            .zip(r)
            .map(|(q, r)| ((q - (1.0 - b) * r) / b).max(0.0))
            .collect()
    }

    /// Smallest horizon with beta^T <= 0.01.
    pub fn default_horizon(&self) -> usize {
        (0.01f64.ln() / self.beta.ln()).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicState {
    pub remaining: Vec<f64>,
    pub current: usize,
}

impl DynamicState {
    pub fn initial(mech: &DynamicMechanism, theta: usize) -> Self {
        DynamicState {
            remaining: mech.q.clone(),
            current: theta,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.remaining.len() != m || self.current >= m {
            return domain("state does not match the type set");
        }
        if let Some(v) = self.remaining.iter().find(|&&v| !(v >= 0.0)) {
            return domain(format!("remaining quota {v} is negative"));
        }
        Ok(())
    }
}

/// Componentwise caps r <= Q / (1 - beta) on top of the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleReports {
    pub caps: Vec<f64>,
}

impl FeasibleReports {
    pub fn contains(&self, r: &[f64], tol: f64) -> bool {
        (r.iter().sum::<f64>() - 1.0).abs() <= tol
            && r.iter().zip(&self.caps).all(|(&x, &c)| x >= -tol && x <= c + tol)
    }

    /// Fill unit mass greedily along `order`, each type up to its cap.
    pub fn fill(&self, order: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut r = vec![0.0; self.caps.len()];
        let mut left = 1.0;
        let mut last = None;
        for t in order {
            if left <= 0.0 {
                break;
            }
            let take = self.caps[t].min(left);
            if take > 0.0 {
                r[t] = take;
                left -= take;
                last = Some(t);
            }
        }
        // rounding residue goes to the last type used
        if let Some(t) = last {
            r[t] += left;
        }
        r
    }
}

pub fn feasible_reports(state: &DynamicState, beta: f64) -> Result<FeasibleReports> {
    state.validate(state.remaining.len())?;
    let total: f64 = state.remaining.iter().sum();
    if total < (1.0 - beta) - 1e-12 {
        return Err(Error::Infeasible(format!(
            "remaining quota {total} cannot cover one report"
        )));
    }
    Ok(FeasibleReports {
        caps: state.remaining.iter().map(|q| q / (1.0 - beta)).collect(),
    })
}

/// Node values of V(Q, theta) on the quota grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub grid: SimplexGrid,
    pub beta: f64,
    /// values[theta][node]
    pub values: Vec<Vec<f64>>,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
    pub improvements: usize,
    /// Expected continuation sum_theta pi(theta) V(., theta) at each node.
    continuation: Vec<f64>,
}

impl ValueTable {
    pub fn value(&self, q_state: &[f64], theta: usize) -> f64 {
        self.grid.interpolate(&self.values[theta], &self.grid.to_y(q_state))
    }
}

/// A report rule for the dynamic mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// One-step lookahead against the interpolated value function.
    Greedy(ValueTable),
    /// Truthful when the cap allows; otherwise as much truth as possible,
    /// the rest filled from the lowest label up.
    TruthfulWhenFeasible,
    /// Type `low` fills from the lowest label, all others from the highest.
    LowHigh { low: usize },
}

impl Policy {
    pub fn report(&self, mech: &DynamicMechanism, q_state: &[f64], theta: usize) -> Result<Vec<f64>> {
        let state = DynamicState {
            remaining: q_state.to_vec(),
            current: theta,
        };
        let feas = feasible_reports(&state, mech.beta)?;
        let m = mech.m();
        Ok(match self {
            Policy::Greedy(table) => {
                best_report(mech, &table.grid, &table.continuation, q_state, theta)?.report
            }
            Policy::TruthfulWhenFeasible => feas.fill(std::iter::once(theta).chain((0..m).filter(|&t| t != theta))),
            Policy::LowHigh { low } => {
                if theta == *low {
                    feas.fill(0..m)
                } else {
                    feas.fill((0..m).rev())
                }
            }
        })
    }
}

pub fn truthful_when_feasible(_mech: &DynamicMechanism) -> Policy {
    Policy::TruthfulWhenFeasible
}

/// Lowest feasible report for the first type, highest for the others.
pub fn counterexample_policy(_mech: &DynamicMechanism) -> Policy {
    Policy::LowHigh { low: 0 }
}

struct Choice {
    value: f64,
    report: Vec<f64>,
    weights: Vec<(usize, f64)>,
    reward: f64,
}

/// Exact maximizer of (1 - beta) u(r) + beta W(Q') over feasible r, with W the
/// interpolated continuation. Ties go to more truthful mass.
fn best_report(
    mech: &DynamicMechanism,
    grid: &SimplexGrid,
    cont: &[f64],
    q_state: &[f64],
    theta: usize,
) -> Result<Choice> {
    let b = mech.beta;
    let cap: Vec<f64> = q_state.iter().map(|q| q / b).collect();
    let mut best: Option<Choice> = None;
    for y in grid.candidates(&cap) {
        let q_next = grid.from_y(&y);
        let mut r: Vec<f64> = q_state
            .iter()
            .zip(&q_next)
            .map(|(q, qn)| ((q - b * qn) / (1.0 - b)).max(0.0))
            .collect();
        let s: f64 = r.iter().sum();
        if s <= 0.0 {
            continue;
        }
        r.iter_mut().for_each(|v| *v /= s);
        let weights = grid.weights(&y);
        let reward = (1.0 - b) * mech.utility(theta, &r);
        let value = reward + b * weights.iter().map(|&(n, w)| w * cont[n]).sum::<f64>();
        let better = match &best {
            None => true,
            Some(c) => value > c.value + 1e-12 || (value > c.value - 1e-12 && r[theta] > c.report[theta] + 1e-12),
        };
        if better {
            best = Some(Choice {
                value,
                report: r,
                weights,
                reward,
            });
        }
    }
    best.ok_or_else(|| Error::Infeasible("no feasible report on the grid".into()))
}

fn continuation(prior: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let n = values[0].len();
    (0..n)
        .map(|k| prior.iter().zip(values).map(|(p, v)| p * v[k]).sum())
        .collect()
}

fn check_grid(mech: &DynamicMechanism, resolution: usize) -> Result<SimplexGrid> {
    let m = mech.m();
    if m > 3 {
        return domain("value iteration supports at most three types");
    }
    if resolution < 32 {
        return domain("grid resolution must be at least 32");
    }
    if let Some(q) = mech.q.iter().find(|&&q| q > 0.0 && q < 1.0 / resolution as f64) {
        return domain(format!("resolution {resolution} cannot represent quota mass {q}"));
    }
    Ok(SimplexGrid::new(m, resolution))
}

/// One application of the interpolated Bellman operator; returns the new
/// values and the sup-norm change.
pub fn bellman_update(mech: &DynamicMechanism, grid: &SimplexGrid, values: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let cont = continuation(mech.prior(), values);
    let mut out = vec![vec![0.0; grid.len()]; mech.m()];
    let mut residual: f64 = 0.0;
    for (theta, row) in out.iter_mut().enumerate() {
        for (n, v) in row.iter_mut().enumerate() {
            *v = best_report(mech, grid, &cont, &grid.node_quota(n), theta)?.value;
            residual = residual.max((*v - values[theta][n]).abs());
        }
    }
    Ok((out, residual))
}

/// Initial values: truthful utility at every node.
pub fn initial_values(mech: &DynamicMechanism, grid: &SimplexGrid) -> Vec<Vec<f64>> {
    (0..mech.m())
        .map(|t| vec![mech.util[t][t]; grid.len()])
        .collect()
}

const MAX_IMPROVEMENTS: usize = 500;
const MAX_SWEEPS: usize = 1_000_000;

/// Modified policy iteration to a Bellman residual of at most 1e-8, followed
/// by extraction of the greedy policy.
pub fn value_iterate(mech: &DynamicMechanism, resolution: usize) -> Result<(ValueTable, Policy)> {
    let grid = check_grid(mech, resolution)?;
    let m = mech.m();
    let b = mech.beta;
    let prior = mech.prior().to_vec();
    let mut values = initial_values(mech, &grid);
    let target = 1e-8;
    for round in 0..MAX_IMPROVEMENTS {
        let cont = continuation(&prior, &values);
        let mut choices = Vec::with_capacity(m);
        let mut residual: f64 = 0.0;
        for theta in 0..m {
            let mut row = Vec::with_capacity(grid.len());
            for n in 0..grid.len() {
                let c = best_report(mech, &grid, &cont, &grid.node_quota(n), theta)?;
                residual = residual.max((c.value - values[theta][n]).abs());
                row.push(c);
            }
            choices.push(row);
        }
        if residual <= target {
            let table = ValueTable {
                continuation: cont,
                grid,
                beta: b,
                values,
                residual,
                improvements: round,
            };
            return Ok((table.clone(), Policy::Greedy(table)));
        }
        // evaluate the improved policy in continuation space:
        // W(n) = sum_theta pi(theta) [reward + beta sum_w w W(n')]
        let mut w: Vec<f64> = continuation(
            &prior,
            &choices.iter().map(|row| row.iter().map(|c| c.value).collect()).collect::<Vec<Vec<f64>>>(),
        );
        let stop = (1e-2 * target * (1.0 - b)).max(1e-14);
        for _ in 0..MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for n in 0..grid.len() {
                let mut v = 0.0;
                for theta in 0..m {
                    let c = &choices[theta][n];
                    v += prior[theta] * (c.reward + b * c.weights.iter().map(|&(k, x)| x * w[k]).sum::<f64>());
                }
                change = change.max((v - w[n]).abs());
                w[n] = v;
            }
            if change <= stop {
                break;
            }
        }
        values = (0..m)
            .map(|theta| {
                choices[theta]
                    .iter()
                    .map(|c| c.reward + b * c.weights.iter().map(|&(k, x)| x * w[k]).sum::<f64>())
                    .collect()
            })
            .collect();
    }
    Err(Error::Invariant(format!(
        "value iteration did not reach residual {target} in {MAX_IMPROVEMENTS} improvement rounds"
    )))
}

/// True when the report is feasible in the state within the probability tolerance.
pub fn is_feasible(mech: &DynamicMechanism, q_state: &[f64], r: &[f64]) -> bool {
    q_state
        .iter()
        .zip(r)
        .all(|(q, r)| (1.0 - mech.beta) * r <= q + TOL.probability)
}

//! Reduced cost matrices, cyclical monotonicity and Rochet transfers.

use serde::{Deserialize, Serialize};

use crate::env::{Environment, SocialChoiceFunction, TransferRule};
use crate::error::{domain, Error, Result};
use crate::tol::TOL;
use crate::transport::CostMatrix;

/// Lottery over decisions faced by agent `i` reporting each type, opponents drawn from `q`.
pub fn interim_lotteries(
    env: &Environment,
    x: &SocialChoiceFunction,
    q: &[Vec<f64>],
    i: usize,
) -> Vec<Vec<f64>> {
    let nd = env.decisions.len();
    let mut out = vec![vec![0.0; nd]; env.m(i)];
    for idx in 0..env.num_profiles() {
        let prof = env.profile(idx);
        let w: f64 = (0..env.n()).filter(|&j| j != i).map(|j| q[j][prof[j]]).product();
        if w == 0.0 {
            continue;
        }
        for (o, v) in out[prof[i]].iter_mut().zip(x.row(idx)) {
            *o += w * v;
        }
    }
    out
}

/// `c(t, t')`: minus the interim utility of type `t` reporting `t'`.
pub fn agent_cost_matrix(
    env: &Environment,
    x: &SocialChoiceFunction,
    q: &[Vec<f64>],
    i: usize,
) -> Result<CostMatrix> {
    if q.len() != env.n() || (0..env.n()).any(|j| q[j].len() != env.m(j)) {
        return domain("quota profile does not match the environment");
    }
    let lot = interim_lotteries(env, x, q, i);
    let m = env.m(i);
    let cost = (0..m)
        .map(|t| (0..m).map(|r| -env.lottery_utility(i, &lot[r], t)).collect())
        .collect();
    let labels = env.agents[i].types.clone();
    CostMatrix::new(labels.clone(), labels, cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleWitness {
    pub cycle: Vec<usize>,
    pub labels: Vec<String>,
    /// Sum of d along the cycle (negative for a weak violation).
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMReport {
    pub holds: bool,
    pub witness: Option<CycleWitness>,
}

/// Edge weights d(a -> b) = c(a, b) - c(a, a).
pub fn gain_graph(c: &CostMatrix) -> Vec<Vec<f64>> {
    let n = c.nrows();
    (0..n)
        .map(|a| (0..n).map(|b| c.at(a, b) - c.at(a, a)).collect())
        .collect()
}

fn cycle_sum(d: &[Vec<f64>], cyc: &[usize]) -> f64 {
    (0..cyc.len())
        .map(|k| d[cyc[k]][cyc[(k + 1) % cyc.len()]])
        .sum()
}

fn witness(c: &CostMatrix, d: &[Vec<f64>], cycle: Vec<usize>) -> CycleWitness {
    CycleWitness {
        labels: cycle.iter().map(|&v| c.rows[v].clone()).collect(),
        slack: cycle_sum(d, &cycle),
        cycle,
    }
}

/// Bellman-Ford from a virtual source; returns a cycle of the predecessor graph
/// if relaxation has not settled after n rounds.
fn bellman_ford_cycle(d: &[Vec<f64>], eps: f64) -> Option<Vec<usize>> {
    let n = d.len();
    let mut dist = vec![0.0; n];
    let mut pred = vec![usize::MAX; n];
    let mut last = None;
    for _ in 0..=n {
        last = None;
        for a in 0..n {
            for b in 0..n {
                if a != b && dist[a] + d[a][b] < dist[b] - eps {
                    dist[b] = dist[a] + d[a][b];
                    pred[b] = a;
                    last = Some(b);
                }
            }
        }
        last?;
    }
    let mut v = last?;
    for _ in 0..n {
        v = pred[v];
        if v == usize::MAX {
            return most_negative_cycle(d);
        }
    }
    let mut cycle = vec![v];
    let mut u = pred[v];
    while u != v {
        if u == usize::MAX || cycle.len() > n {
            return most_negative_cycle(d);
        }
        cycle.push(u);
        u = pred[u];
    }
    cycle.reverse();
    Some(cycle)
}

/// Most negative simple cycle by exhaustive search (small graphs only).
fn most_negative_cycle(d: &[Vec<f64>]) -> Option<Vec<usize>> {
    fn go(d: &[Vec<f64>], path: &mut Vec<usize>, w: f64, best: &mut (f64, Vec<usize>)) {
        let (s, last) = (path[0], *path.last().unwrap());
        if path.len() >= 2 {
            let total = w + d[last][s];
            if total < best.0 {
                *best = (total, path.clone());
            }
        }
        for v in s + 1..d.len() {
            if !path.contains(&v) {
                path.push(v);
                go(d, path, w + d[last][v], best);
                path.pop();
            }
        }
    }
    let mut best = (f64::INFINITY, vec![]);
    for s in 0..d.len() {
        go(d, &mut vec![s], 0.0, &mut best);
    }
    (best.0 < -TOL.strict_cm).then_some(best.1)
}

pub fn is_cyclically_monotone(c: &CostMatrix) -> Result<CMReport> {
    if !c.is_square() {
        return domain("cyclical monotonicity needs a square cost matrix");
    }
    let d = gain_graph(c);
    let n = d.len();
    let eps = TOL.strict_cm / (n.max(1) as f64);
    let Some(cycle) = bellman_ford_cycle(&d, eps) else {
        return Ok(CMReport {
            holds: true,
            witness: None,
        });
    };
    let mut w = witness(c, &d, cycle);
    if w.slack >= -TOL.strict_cm {
        // the traced cycle is only marginally negative; confirm on small graphs
        match (n <= 9).then(|| most_negative_cycle(&d)).flatten() {
            Some(cyc) => w = witness(c, &d, cyc),
            None => {
                return Ok(CMReport {
                    holds: true,
                    witness: None,
                })
            }
        }
    }
    Ok(CMReport {
        holds: false,
        witness: Some(w),
    })
}

/// All-pairs shortest paths with successor table for path recovery.
fn floyd_warshall(d: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n = d.len();
    let mut sp: Vec<Vec<f64>> = d.to_vec();
    let mut next: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
    for (a, row) in sp.iter_mut().enumerate() {
        row[a] = 0.0;
    }
    for k in 0..n {
        for a in 0..n {
            for b in 0..n {
                let via = sp[a][k] + sp[k][b];
                if via < sp[a][b] - 1e-15 {
                    sp[a][b] = via;
                    next[a][b] = next[a][k];
                }
            }
        }
    }
    (sp, next)
}

fn path(next: &[Vec<usize>], mut a: usize, b: usize) -> Vec<usize> {
    let mut out = vec![a];
    while a != b && out.len() <= next.len() {
        a = next[a][b];
        out.push(a);
    }
    out
}

/// Strict CM relative to the classes of equal decisions: every cycle that crosses
/// classes has slack above the strict threshold.
pub fn is_strictly_cyclically_monotone(c: &CostMatrix, classes: &[usize]) -> Result<CMReport> {
    if classes.len() != c.nrows() {
        return domain("one class id per type required");
    }
    let weak = is_cyclically_monotone(c)?;
    if !weak.holds {
        return Ok(weak);
    }
    let d = gain_graph(c);
    let (sp, next) = floyd_warshall(&d);
    let n = d.len();
    for a in 0..n {
        for b in 0..n {
            if classes[a] == classes[b] {
                continue;
            }
            if d[a][b] + sp[b][a] <= TOL.strict_cm {
                // cycle a -> b -> ... -> a
                let mut cyc = vec![a];
                let back = path(&next, b, a);
                cyc.extend(&back[..back.len() - 1]);
                return Ok(CMReport {
                    holds: false,
                    witness: Some(witness(c, &d, cyc)),
                });
            }
        }
    }
    Ok(CMReport {
        holds: true,
        witness: None,
    })
}

/// Transfers T(t) = -dist(root -> t) in the gain graph, root = first type.
pub fn rochet_transfers(c: &CostMatrix) -> Result<TransferRule> {
    let report = is_cyclically_monotone(c)?;
    if let Some(w) = report.witness {
        return Err(Error::NotMonotone {
            agent: 0,
            cycle: w.labels,
            slack: w.slack,
        });
    }
    let d = gain_graph(c);
    let n = d.len();
    let mut dist = vec![f64::INFINITY; n];
    dist[0] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if dist[a] + d[a][b] < dist[b] - 1e-15 {
                    dist[b] = dist[a] + d[a][b];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(TransferRule {
        labels: c.rows.clone(),
        values: dist.iter().map(|v| -v).collect(),
    })
}

/// Largest violation of T(a) - T(b) <= d(a -> b) over all ordered pairs.
pub fn ic_violation(c: &CostMatrix, t: &TransferRule) -> f64 {
    let d = gain_graph(c);
    let n = d.len();
    let mut worst = f64::NEG_INFINITY;
    for a in 0..n {
        for b in 0..n {
            worst = worst.max(t.values[a] - t.values[b] - d[a][b]);
        }
    }
    worst
}

/// CM check per agent under quota profile `q`, with the agent index attached to failures.
pub fn check_environment(
    env: &Environment,
    x: &SocialChoiceFunction,
    q: &[Vec<f64>],
) -> Result<Vec<CMReport>> {
    (0..env.n())
        .map(|i| is_cyclically_monotone(&agent_cost_matrix(env, x, q, i)?))
        .collect()
}

/// First agent whose diagonal is not CM, as an error.
pub fn require_monotone(env: &Environment, x: &SocialChoiceFunction, q: &[Vec<f64>]) -> Result<()> {
    for (i, r) in check_environment(env, x, q)?.into_iter().enumerate() {
        if let Some(w) = r.witness {
            return Err(Error::NotMonotone {
                agent: i,
                cycle: w.labels,
                slack: w.slack,
            });
        }
    }
    Ok(())
}

/// Class id per type of agent `i`: types facing identical interim lotteries share a class.
pub fn interim_classes(
    env: &Environment,
    x: &SocialChoiceFunction,
    q: &[Vec<f64>],
    i: usize,
) -> Vec<usize> {
    let lot = interim_lotteries(env, x, q, i);
    let mut class = vec![usize::MAX; lot.len()];
    let mut next = 0;
    for a in 0..lot.len() {
        if class[a] != usize::MAX {
            continue;
        }
        class[a] = next;
        for b in a + 1..lot.len() {
            if class[b] == usize::MAX
                && lot[a].iter().zip(&lot[b]).all(|(u, v)| (u - v).abs() <= TOL.support)
            {
                class[b] = next;
            }
        }
        next += 1;
    }
    class
}

//! Exact finite optimal transport with lexicographic refinements.
//!
//! Every solve is a sequence of dense linear programs over the transportation
//! polytope: the optimal value first, then a secondary objective restricted to
//! near-optimal couplings, then a lexicographic minimum of the joint table so
//! that results are reproducible.

use serde::{Deserialize, Serialize};

use crate::dist::{tv, Dist};
use crate::error::{domain, Error, Result};
use crate::lp::{LinearProgram, LpSolution, Relation};
use crate::tol::{TOL, ZERO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cost: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, cost: Vec<Vec<f64>>) -> Result<Self> {
        if cost.len() != rows.len() || cost.iter().any(|r| r.len() != cols.len()) {
            return domain("cost table shape does not match its labels");
        }
        if cost.iter().flatten().any(|c| !c.is_finite()) {
            return domain("non-finite cost");
        }
        Ok(CostMatrix { rows, cols, cost })
    }

    /// Square matrix with numbered labels, for tests and generated instances.
    pub fn from_table(cost: Vec<Vec<f64>>) -> Result<Self> {
        let nr = cost.len();
        let nc = cost.first().map_or(0, Vec::len);
        CostMatrix::new(
            (0..nr).map(|i| format!("r{i}")).collect(),
            (0..nc).map(|j| format!("c{j}")).collect(),
            cost,
        )
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.cost[i][j]
    }
}

/// A joint table with its marginals implied by row and column sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub joint: Vec<Vec<f64>>,
}

impl Coupling {
    pub fn new(joint: Vec<Vec<f64>>) -> Self {
        Coupling { joint }
    }

    pub fn nrows(&self) -> usize {
        self.joint.len()
    }

    pub fn ncols(&self) -> usize {
        self.joint.first().map_or(0, Vec::len)
    }

    pub fn source_marginal(&self) -> Vec<f64> {
        self.joint.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn target_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        for r in &self.joint {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.joint
            .iter()
            .zip(&c.cost)
            .map(|(g, cr)| g.iter().zip(cr).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    pub fn mass_on(&self, set: &PairSet) -> f64 {
        let mut s = 0.0;
        for (i, r) in self.joint.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                if set.contains(i, j) {
                    s += v;
                }
            }
        }
        s
    }

    pub fn diagonal_mass(&self) -> f64 {
        (0..self.nrows().min(self.ncols())).map(|i| self.joint[i][i]).sum()
    }

    /// Half the l1 distance between two joint tables.
    pub fn distance(&self, other: &Coupling) -> f64 {
        0.5 * self
            .joint
            .iter()
            .zip(&other.joint)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum::<f64>()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.joint.iter().flatten().copied().collect()
    }

    fn from_flat(x: &[f64], nr: usize, nc: usize) -> Self {
        let joint = (0..nr)
            .map(|i| {
                (0..nc)
                    .map(|j| {
                        let v = x[i * nc + j];
                        if v.abs() <= ZERO {
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        Coupling { joint }
    }

    /// Checks nonnegativity and both marginals within the probability tolerance.
    pub fn check_marginals(&self, p: &[f64], q: &[f64]) -> bool {
        self.joint.iter().flatten().all(|&v| v >= -TOL.probability)
            && tv(&self.source_marginal(), p) * 2.0 <= TOL.probability * p.len() as f64
            && tv(&self.target_marginal(), q) * 2.0 <= TOL.probability * q.len() as f64
    }
}

/// A set of (source, target) index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    mask: Vec<Vec<bool>>,
}

impl PairSet {
    pub fn from_mask(mask: Vec<Vec<bool>>) -> Self {
        PairSet { mask }
    }

    pub fn diagonal(n: usize) -> Self {
        PairSet {
            mask: (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect(),
        }
    }

    /// Pairs within the same class, given a class id per label.
    pub fn same_class(classes: &[usize]) -> Self {
        PairSet {
            mask: classes
                .iter()
                .map(|a| classes.iter().map(|b| a == b).collect())
                .collect(),
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[i][j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtSolution {
    pub value: f64,
    pub coupling: Coupling,
}

/// Row-conditional representation of a coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCoupling {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl KernelCoupling {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn row_dist(&self, i: usize) -> Dist {
        Dist::new(self.targets.clone(), self.rows[i].clone()).expect("kernel rows are distributions")
    }

    pub fn identity(labels: Vec<String>) -> Self {
        let n = labels.len();
        KernelCoupling {
            sources: labels.clone(),
            targets: labels,
            rows: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// The measure p pushed through the kernel.
    pub fn push(&self, p: &[f64]) -> Vec<f64> {
        crate::dist::push_forward(p, &self.rows)
    }

    /// p-weighted joint table.
    pub fn joint(&self, p: &[f64]) -> Coupling {
        Coupling::new(
            self.rows
                .iter()
                .zip(p)
                .map(|(r, w)| r.iter().map(|v| v * w).collect())
                .collect(),
        )
    }

    /// Expected cost of the kernel under source marginal p.
    pub fn value(&self, c: &CostMatrix, p: &[f64]) -> f64 {
        self.joint(p).cost(c)
    }
}

fn check_marginals(c: &CostMatrix, p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != c.nrows() || q.len() != c.ncols() {
        return domain("marginal lengths do not match the cost matrix");
    }
    if p.iter().chain(q).any(|v| !v.is_finite() || *v < -TOL.probability) {
        return domain("negative or non-finite marginal mass");
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if (sp - sq).abs() > TOL.probability {
        return domain(format!("marginal totals differ: {sp} vs {sq}"));
    }
    Ok(())
}

/// Transport LP over `extra` auxiliary variables appended after the joint table.
fn base_lp(c: &CostMatrix, p: &[f64], q: &[f64], extra: usize) -> LinearProgram {
    let (nr, nc) = (c.nrows(), c.ncols());
    let mut lp = LinearProgram::new(nr * nc + extra);
    for (i, &pi) in p.iter().enumerate() {
        let terms: Vec<_> = (0..nc).map(|j| (i * nc + j, 1.0)).collect();
        lp.constrain_sparse(&terms, Relation::Eq, pi.max(0.0));
    }
    for (j, &qj) in q.iter().enumerate() {
        let terms: Vec<_> = (0..nr).map(|i| (i * nc + j, 1.0)).collect();
        lp.constrain_sparse(&terms, Relation::Eq, qj.max(0.0));
    }
    lp
}

fn cost_row(c: &CostMatrix, total: usize) -> Vec<f64> {
    let mut row = vec![0.0; total];
    for (k, v) in c.cost.iter().flatten().enumerate() {
        row[k] = *v;
    }
    row
}

/// Reduced costs above this (relative to the objective scale) mark a variable as
/// off the optimal face.
const FACE_TOL: f64 = 1e-9;

fn scale_of(obj: &[f64]) -> f64 {
    1.0 + obj.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Pin to zero every variable that complementary slackness excludes from the optimal face.
fn restrict_to_face(lp: &mut LinearProgram, sol: &LpSolution, scale: f64) {
    for j in 0..lp.num_vars() {
        if !lp.is_fixed(j) && sol.reduced[j] > FACE_TOL * scale {
            lp.fix_zero(j);
        }
    }
}

/// Replace the first `nvars` of `x` by the lexicographically smallest point of the LP's feasible set.
fn lexmin(lp: &mut LinearProgram, mut x: Vec<f64>, nvars: usize) -> Result<Vec<f64>> {
    let total = lp.num_vars();
    for v in 0..nvars {
        if lp.is_fixed(v) {
            continue;
        }
        if x[v] <= ZERO {
            lp.fix_zero(v);
            x[v] = 0.0;
            continue;
        }
        let mut obj = vec![0.0; total];
        obj[v] = 1.0;
        lp.minimize(obj);
        let sol = lp.solve()?;
        restrict_to_face(lp, &sol, 1.0);
        x = sol.x;
    }
    for (j, v) in x.iter_mut().enumerate() {
        if lp.is_fixed(j) {
            *v = 0.0;
        }
    }
    Ok(x)
}

fn optimal_face_lp(c: &CostMatrix, p: &[f64], q: &[f64], extra: usize) -> Result<(LinearProgram, f64)> {
    let n = c.nrows() * c.ncols();
    let mut lp = base_lp(c, p, q, 0);
    let obj = cost_row(c, n);
    lp.minimize(obj.clone());
    let sol = lp.solve()?;
    let mut full = base_lp(c, p, q, extra);
    for j in 0..n {
        if sol.reduced[j] > FACE_TOL * scale_of(&obj) {
            full.fix_zero(j);
        }
    }
    Ok((full, sol.objective))
}

pub fn solve_ot(c: &CostMatrix, p: &[f64], q: &[f64]) -> Result<OtSolution> {
    check_marginals(c, p, q)?;
    let n = c.nrows() * c.ncols();
    let (mut lp, _) = optimal_face_lp(c, p, q, 0)?;
    let start = lp.solve()?;
    let x = lexmin(&mut lp, start.x, n)?;
    let coupling = Coupling::from_flat(&x, c.nrows(), c.ncols());
    Ok(OtSolution {
        value: coupling.cost(c),
        coupling,
    })
}

/// Among optimal couplings, one that extremizes the mass on `set`.
pub fn optimal_mass_on_set(
    c: &CostMatrix,
    p: &[f64],
    q: &[f64],
    set: &PairSet,
    direction: Extremum,
) -> Result<OtSolution> {
    check_marginals(c, p, q)?;
    let (nr, nc) = (c.nrows(), c.ncols());
    let n = nr * nc;
    let (mut lp, _) = optimal_face_lp(c, p, q, 0)?;
    let mut on_set = vec![0.0; n];
    for i in 0..nr {
        for j in 0..nc {
            if set.contains(i, j) {
                on_set[i * nc + j] = 1.0;
            }
        }
    }
    match direction {
        Extremum::Max => lp.maximize(on_set),
        Extremum::Min => lp.minimize(on_set),
    };
    let second = lp.solve()?;
    restrict_to_face(&mut lp, &second, 1.0);
    let x = lexmin(&mut lp, second.x, n)?;
    let coupling = Coupling::from_flat(&x, nr, nc);
    Ok(OtSolution {
        value: coupling.cost(c),
        coupling,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearestCoupling {
    pub coupling: Coupling,
    pub value: f64,
    pub distance: f64,
}

/// An optimal coupling of (p2, q2) closest in total variation to the optimal coupling `gamma`.
pub fn nearest_optimal_coupling(
    c: &CostMatrix,
    gamma: &Coupling,
    p2: &[f64],
    q2: &[f64],
) -> Result<NearestCoupling> {
    let (nr, nc) = (c.nrows(), c.ncols());
    if gamma.nrows() != nr || gamma.ncols() != nc {
        return domain("coupling shape does not match the cost matrix");
    }
    check_marginals(c, p2, q2)?;
    let (p, q) = (gamma.source_marginal(), gamma.target_marginal());
    let base = solve_ot(c, &p, &q)?;
    if gamma.cost(c) > base.value + TOL.optimality {
        return Err(Error::Precondition(format!(
            "anchor coupling costs {} but the optimum is {}",
            gamma.cost(c),
            base.value
        )));
    }
    let n = nr * nc;
    // variables: gamma' (n), positive part (n), negative part (n)
    let (mut lp, _) = optimal_face_lp(c, p2, q2, 2 * n)?;
    let g = gamma.flat();
    for k in 0..n {
        lp.constrain_sparse(&[(k, 1.0), (n + k, -1.0), (2 * n + k, 1.0)], Relation::Eq, g[k]);
    }
    let mut dist = vec![0.0; 3 * n];
    for d in dist.iter_mut().skip(n) {
        *d = 0.5;
    }
    lp.minimize(dist);
    let sol = lp.solve()?;
    restrict_to_face(&mut lp, &sol, 1.0);
    let x = lexmin(&mut lp, sol.x, n)?;
    let coupling = Coupling::from_flat(&x[..n], nr, nc);
    Ok(NearestCoupling {
        value: coupling.cost(c),
        distance: coupling.distance(gamma),
        coupling,
    })
}

/// Weighted cycles whose cycle measures sum to a balanced flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDecomposition {
    pub cycles: Vec<(f64, Vec<usize>)>,
}

impl CycleDecomposition {
    pub fn total_weight(&self) -> f64 {
        self.cycles.iter().map(|c| c.0).sum()
    }

    pub fn reconstruct(&self, n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; n]; n];
        for (w, cyc) in &self.cycles {
            for (k, &a) in cyc.iter().enumerate() {
                let b = cyc[(k + 1) % cyc.len()];
                out[a][b] += w;
            }
        }
        out
    }
}

/// Decompose a balanced nonnegative flow (row sums equal column sums) into cycles.
///
/// Walks always take the lowest-index outgoing edge, so the output is deterministic.
pub fn cycle_decompose(zeta: &[Vec<f64>]) -> Result<CycleDecomposition> {
    let n = zeta.len();
    if zeta.iter().any(|r| r.len() != n) {
        return domain("cycle decomposition needs a square table");
    }
    if zeta.iter().flatten().any(|&v| v < -TOL.probability) {
        return domain("negative flow entry");
    }
    for v in 0..n {
        let out: f64 = zeta[v].iter().sum();
        let inn: f64 = zeta.iter().map(|r| r[v]).sum();
        if (out - inn).abs() > TOL.probability {
            return domain(format!("flow unbalanced at vertex {v}: out {out}, in {inn}"));
        }
    }
    let mut z: Vec<Vec<f64>> = zeta
        .iter()
        .map(|r| r.iter().map(|&v| if v > ZERO { v } else { 0.0 }).collect())
        .collect();
    let mut cycles = Vec::new();
    let next_edge = |z: &Vec<Vec<f64>>, v: usize| (0..n).find(|&w| z[v][w] > ZERO);
    while let Some(start) = (0..n).find(|&v| next_edge(&z, v).is_some()) {
        let mut path = vec![start];
        let mut pos = vec![usize::MAX; n];
        pos[start] = 0;
        let cycle = loop {
            let v = *path.last().unwrap();
            let Some(w) = next_edge(&z, v) else {
                // numerical imbalance strands the walk; drop the residue
                let prev = path[path.len().saturating_sub(2)];
                z[prev][v] = 0.0;
                break None;
            };
            if pos[w] != usize::MAX {
                break Some(path[pos[w]..].to_vec());
            }
            pos[w] = path.len();
            path.push(w);
        };
        let Some(cycle) = cycle else { continue };
        let len = cycle.len();
        let weight = (0..len)
            .map(|k| z[cycle[k]][cycle[(k + 1) % len]])
            .fold(f64::INFINITY, f64::min);
        for k in 0..len {
            let e = &mut z[cycle[k]][cycle[(k + 1) % len]];
            *e -= weight;
            if *e <= ZERO {
                *e = 0.0;
            }
        }
        cycles.push((weight, cycle));
    }
    Ok(CycleDecomposition { cycles })
}

/// Whether the support graph of a square coupling has a directed cycle of length at least two.
pub fn support_has_cycle(gamma: &Coupling, threshold: f64) -> bool {
    let n = gamma.nrows();
    // iterative three-colour DFS, self-loops ignored
    let mut colour = vec![0u8; n];
    for s in 0..n {
        if colour[s] != 0 {
            continue;
        }
        let mut stack = vec![(s, 0usize)];
        colour[s] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next == n {
                colour[v] = 2;
                stack.pop();
                continue;
            }
            let w = *next;
            *next += 1;
            if w == v || gamma.joint[v][w] <= threshold {
                continue;
            }
            match colour[w] {
                1 => return true,
                0 => {
                    colour[w] = 1;
                    stack.push((w, 0));
                }
                _ => {}
            }
        }
    }
    false
}

/// Divide rows by their mass; rows without mass default to `q`.
pub fn coupling_to_kernel(
    gamma: &Coupling,
    q: &[f64],
    sources: &[String],
    targets: &[String],
) -> KernelCoupling {
    let rows = gamma
        .joint
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            if s > ZERO {
                r.iter().map(|v| v / s).collect()
            } else {
                q.to_vec()
            }
        })
        .collect();
    KernelCoupling {
        sources: sources.to_vec(),
        targets: targets.to_vec(),
        rows,
    }
}

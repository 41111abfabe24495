//! Dense two-phase simplex with Bland's rule.
//!
//! Sized for desk-scale problems: a few hundred columns at most. Variables are
//! nonnegative; constraints are dense rows with `<=`, `>=` or `=`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    objective: Vec<f64>,
    maximize: bool,
    rows: Vec<(Vec<f64>, Relation, f64)>,
    fixed: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Reduced costs of the structural variables at the optimum, in minimisation
    /// sense: a positive entry means every optimal solution has that variable at zero.
    pub reduced: Vec<f64>,
}

const EPS: f64 = 1e-10;
const FEAS: f64 = 1e-8;

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        LinearProgram {
            n,
            objective: vec![0.0; n],
            maximize: false,
            rows: Vec::new(),
            fixed: vec![false; n],
        }
    }

    /// Remove a variable from the problem by pinning it at zero.
    pub fn fix_zero(&mut self, j: usize) -> &mut Self {
        self.fixed[j] = true;
        self
    }

    pub fn is_fixed(&self, j: usize) -> bool {
        self.fixed[j]
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn minimize(&mut self, c: Vec<f64>) -> &mut Self {
        assert_eq!(c.len(), self.n);
        self.objective = c;
        self.maximize = false;
        self
    }

    pub fn maximize(&mut self, c: Vec<f64>) -> &mut Self {
        assert_eq!(c.len(), self.n);
        self.objective = c;
        self.maximize = true;
        self
    }

    pub fn constrain(&mut self, row: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        assert_eq!(row.len(), self.n);
        self.rows.push((row, rel, rhs));
        self
    }

    pub fn constrain_sparse(&mut self, terms: &[(usize, f64)], rel: Relation, rhs: f64) -> &mut Self {
        let mut row = vec![0.0; self.n];
        for &(j, a) in terms {
            row[j] += a;
        }
        self.constrain(row, rel, rhs)
    }

    /// Fix a single variable's upper bound.
    pub fn bound_above(&mut self, j: usize, ub: f64) -> &mut Self {
        self.constrain_sparse(&[(j, 1.0)], Relation::Le, ub)
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    m: usize,
    width: usize, // structural + slack + artificial columns
    n_struct: usize,
    first_art: usize,
    a: Vec<f64>, // m rows of width + 1 (last column is the rhs)
    basis: Vec<usize>,
    removed: Vec<bool>,
    blocked: Vec<bool>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let m = lp.rows.len();
        let n = lp.n;
        let n_slack = lp.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = lp
            .rows
            .iter()
            .filter(|(_, rel, rhs)| match rel {
                Relation::Eq => true,
                Relation::Le => *rhs < 0.0,
                Relation::Ge => *rhs >= 0.0,
            })
            .count();
        let width = n + n_slack + n_art;
        let stride = width + 1;
        let mut a = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let mut slack = n;
        let mut art = n + n_slack;
        for (i, (row, rel, rhs)) in lp.rows.iter().enumerate() {
            let flip = *rhs < 0.0;
            let sign = if flip { -1.0 } else { 1.0 };
            let r = &mut a[i * stride..(i + 1) * stride];
            for j in 0..n {
                if !lp.fixed[j] {
                    r[j] = sign * row[j];
                }
            }
            r[width] = sign * rhs;
            // after flipping, Le becomes Ge and vice versa
            let rel = match (rel, flip) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => *r,
            };
            match rel {
                Relation::Le => {
                    r[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    r[slack] = -1.0;
                    slack += 1;
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            m,
            width,
            n_struct: n,
            first_art: n + n_slack,
            a,
            basis,
            removed: vec![false; m],
            blocked: (0..width).map(|j| j < n && lp.fixed[j]).collect(),
        }
    }

    fn stride(&self) -> usize {
        self.width + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stride() + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width)
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64]) {
        let s = self.stride();
        let piv = self.a[pr * s + pc];
        for j in 0..s {
            self.a[pr * s + j] /= piv;
        }
        let prow: Vec<f64> = self.a[pr * s..(pr + 1) * s].to_vec();
        for i in 0..self.m {
            if i == pr || self.removed[i] {
                continue;
            }
            let f = self.a[i * s + pc];
            if f != 0.0 {
                for j in 0..s {
                    self.a[i * s + j] -= f * prow[j];
                }
                self.a[i * s + pc] = 0.0;
            }
        }
        let f = cost[pc];
        if f != 0.0 {
            for j in 0..s {
                cost[j] -= f * prow[j];
            }
            cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Reduced-cost row (with the negated objective value in the last slot).
    fn reduced_costs(&self, c: &[f64]) -> Vec<f64> {
        let s = self.stride();
        let mut d = vec![0.0; s];
        d[..c.len()].copy_from_slice(c);
        for i in 0..self.m {
            if self.removed[i] {
                continue;
            }
            let cb = c.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..s {
                    d[j] -= cb * self.a[i * s + j];
                }
            }
        }
        d
    }

    /// Bland's rule iterations; `allowed` limits entering columns.
    fn iterate(&mut self, cost: &mut [f64], allowed: usize) -> Result<()> {
        let limit = 50_000 + 200 * (self.m + self.width);
        for _ in 0..limit {
            let entering = (0..allowed).find(|&j| !self.blocked[j] && cost[j] < -EPS);
            let Some(pc) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if self.removed[i] {
                    continue;
                }
                let aij = self.at(i, pc);
                if aij > EPS {
                    let ratio = self.rhs(i) / aij;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = best else {
                return Err(Error::Unbounded);
            };
            self.pivot(pr, pc, cost);
        }
        Err(Error::Infeasible("simplex iteration limit reached".into()))
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        // Phase 1: minimise the sum of artificials.
        if self.first_art < self.width {
            let mut c1 = vec![0.0; self.width];
            for c in c1.iter_mut().skip(self.first_art) {
                *c = 1.0;
            }
            let mut d = self.reduced_costs(&c1);
            self.iterate(&mut d, self.width)?;
            let infeas = -d[self.width];
            let scale = 1.0 + lp.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
            if infeas > FEAS * scale {
                return Err(Error::Infeasible(format!("phase one residual {infeas:.3e}")));
            }
            // Drive remaining artificials out of the basis or drop redundant rows.
            for i in 0..self.m {
                if self.basis[i] < self.first_art {
                    continue;
                }
                let col = (0..self.first_art)
                    .filter(|&j| !self.blocked[j] && self.at(i, j).abs() > 1e-9)
                    .max_by(|&x, &y| self.at(i, x).abs().total_cmp(&self.at(i, y).abs()));
                match col {
                    Some(j) => {
                        let mut dummy = vec![0.0; self.stride()];
                        self.pivot(i, j, &mut dummy);
                    }
                    None => self.removed[i] = true,
                }
            }
        }
        // Phase 2 on the structural and slack columns.
        let sign = if lp.maximize { -1.0 } else { 1.0 };
        let mut c2 = vec![0.0; self.width];
        for j in 0..self.n_struct {
            c2[j] = sign * lp.objective[j];
        }
        let mut d = self.reduced_costs(&c2);
        self.iterate(&mut d, self.first_art)?;
        let mut x = vec![0.0; self.n_struct];
        for i in 0..self.m {
            if !self.removed[i] && self.basis[i] < self.n_struct {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let reduced = d[..self.n_struct].to_vec();
        Ok(LpSolution {
            x,
            objective,
            reduced,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Relation::*;

    #[test]
    fn textbook_max() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
        let mut lp = LinearProgram::new(2);
        lp.maximize(vec![3.0, 5.0])
            .constrain(vec![1.0, 0.0], Le, 4.0)
            .constrain(vec![0.0, 2.0], Le, 12.0)
            .constrain(vec![3.0, 2.0], Le, 18.0);
        let s = lp.solve().unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge() {
        // min x + y s.t. x + y = 2, x - y >= 1 -> 2
        let mut lp = LinearProgram::new(2);
        lp.minimize(vec![1.0, 2.0])
            .constrain(vec![1.0, 1.0], Eq, 2.0)
            .constrain(vec![1.0, -1.0], Ge, 1.0);
        let s = lp.solve().unwrap();
        assert!((s.objective - 2.0).abs() < 1e-9, "{}", s.objective);
        assert!((s.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.minimize(vec![1.0]).constrain(vec![1.0], Le, -1.0);
        assert!(matches!(lp.solve(), Err(Error::Infeasible(_))));
        let mut lp = LinearProgram::new(1);
        lp.maximize(vec![1.0]).constrain(vec![1.0], Ge, 0.0);
        assert_eq!(lp.solve().unwrap_err(), Error::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        // 2x2 transport with the usual redundant marginal row
        let mut lp = LinearProgram::new(4);
        lp.minimize(vec![0.0, 1.0, 1.0, 0.0])
            .constrain(vec![1.0, 1.0, 0.0, 0.0], Eq, 0.5)
            .constrain(vec![0.0, 0.0, 1.0, 1.0], Eq, 0.5)
            .constrain(vec![1.0, 0.0, 1.0, 0.0], Eq, 0.25)
            .constrain(vec![0.0, 1.0, 0.0, 1.0], Eq, 0.75);
        let s = lp.solve().unwrap();
        assert!((s.objective - 0.25).abs() < 1e-12);
    }
}

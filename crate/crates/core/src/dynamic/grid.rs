//! Regular grid on the quota simplex for up to three types, with piecewise
//! linear interpolation on the Freudenthal triangulation.
//!
//! Points are addressed by `y = R * (Q_0, ..., Q_{m-2})`; the last coordinate
//! is implied by the simplex.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexGrid {
    pub m: usize,
    pub resolution: usize,
    /// For m = 3, node index of lattice point (i, j) at i * (R + 1) + j.
    index: Vec<usize>,
    /// Lattice coordinates of each node.
    coords: Vec<Vec<usize>>,
}

const NONE: usize = usize::MAX;

impl SimplexGrid {
    pub fn new(m: usize, resolution: usize) -> Self {
        let r = resolution;
        let mut coords = Vec::new();
        let mut index = Vec::new();
        match m {
            1 => coords.push(vec![]),
            2 => coords.extend((0..=r).map(|i| vec![i])),
            3 => {
                index = vec![NONE; (r + 1) * (r + 1)];
                for i in 0..=r {
                    for j in 0..=r - i {
                        index[i * (r + 1) + j] = coords.len();
                        coords.push(vec![i, j]);
                    }
                }
            }
            _ => panic!("grid supports at most three types"),
        }
        SimplexGrid {
            m,
            resolution,
            index,
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn node(&self, i: usize, j: usize) -> usize {
        self.index[i * (self.resolution + 1) + j]
    }

    /// Quota vector at a node.
    pub fn node_quota(&self, n: usize) -> Vec<f64> {
        let r = self.resolution as f64;
        let mut q: Vec<f64> = self.coords[n].iter().map(|&c| c as f64 / r).collect();
        let rest = 1.0 - q.iter().sum::<f64>();
        q.push(rest.max(0.0));
        q
    }

    pub fn to_y(&self, q: &[f64]) -> Vec<f64> {
        let r = self.resolution as f64;
        q[..self.m - 1].iter().map(|v| v * r).collect()
    }

    pub fn from_y(&self, y: &[f64]) -> Vec<f64> {
        let r = self.resolution as f64;
        let mut q: Vec<f64> = y.iter().map(|v| v / r).collect();
        let rest = 1.0 - q.iter().sum::<f64>();
        q.push(rest.max(0.0));
        q
    }

    /// Interpolation weights (node, weight) at grid point `y`.
    pub fn weights(&self, y: &[f64]) -> Vec<(usize, f64)> {
        let r = self.resolution as f64;
        match self.m {
            1 => vec![(0, 1.0)],
            2 => {
                let a = y[0].clamp(0.0, r);
                let i = (a.floor() as usize).min(self.resolution - 1);
                let f = a - i as f64;
                vec![(i, 1.0 - f), (i + 1, f)]
            }
            _ => {
                let a = y[0].clamp(0.0, r);
                let b = y[1].clamp(0.0, r - a);
                let (i, j) = (a.floor() as usize, b.floor() as usize);
                if i + j >= self.resolution {
                    return vec![(self.node(i, self.resolution - i), 1.0)];
                }
                let (fa, fb) = (a - i as f64, b - j as f64);
                // on the hypotenuse rounding can push fa + fb just past 1
                if fa + fb <= 1.0 || i + j + 2 > self.resolution {
                    vec![
                        (self.node(i, j), (1.0 - fa - fb).max(0.0)),
                        (self.node(i + 1, j), fa),
                        (self.node(i, j + 1), fb),
                    ]
                } else {
                    vec![
                        (self.node(i + 1, j + 1), fa + fb - 1.0),
                        (self.node(i + 1, j), 1.0 - fb),
                        (self.node(i, j + 1), 1.0 - fa),
                    ]
                }
            }
        }
    }

    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> f64 {
        self.weights(y).iter().map(|&(n, w)| w * values[n]).sum()
    }

    /// Candidate maximizers over {Q' in simplex : Q' <= cap}, `cap` in quota
    /// units. Every vertex of every (cell intersect region) is included, so a
    /// function linear on cells attains its maximum on the returned set.
    pub fn candidates(&self, cap: &[f64]) -> Vec<Vec<f64>> {
        let r = self.resolution as f64;
        let line_values = |lo: f64, hi: f64| -> Vec<f64> {
            let mut v = vec![lo];
            let mut k = lo.floor() + 1.0;
            while k < hi {
                v.push(k);
                k += 1.0;
            }
            if hi > lo {
                v.push(hi);
            }
            v
        };
        match self.m {
            1 => vec![vec![]],
            2 => {
                let hi = (cap[0] * r).min(r);
                let lo = (r - cap[1] * r).max(0.0);
                if lo > hi + 1e-9 {
                    return vec![];
                }
                line_values(lo, hi.max(lo)).into_iter().map(|a| vec![a]).collect()
            }
            _ => {
                let amax = (cap[0] * r).min(r);
                let bmax = (cap[1] * r).min(r);
                let smin = (r - cap[2] * r).max(0.0);
                let a_set = line_values(0.0, amax);
                let b_set = line_values(0.0, bmax);
                let s_set = line_values(smin, r);
                let ok = |a: f64, b: f64| {
                    a >= -1e-9 && b >= -1e-9 && a <= amax + 1e-9 && b <= bmax + 1e-9 && {
                        let s = a + b;
                        s >= smin - 1e-9 && s <= r + 1e-9
                    }
                };
                let mut out = Vec::new();
                let mut push = |a: f64, b: f64| {
                    if ok(a, b) {
                        let a = a.clamp(0.0, amax);
                        let b = b.clamp(0.0, bmax.min(r - a));
                        out.push(vec![a, b]);
                    }
                };
                for &a in &a_set {
                    for &b in &b_set {
                        push(a, b);
                    }
                    for &s in &s_set {
                        push(a, s - a);
                    }
                }
                for &b in &b_set {
                    for &s in &s_set {
                        push(s - b, b);
                    }
                }
                out
            }
        }
    }
}

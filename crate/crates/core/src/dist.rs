//! Finite probability distributions and the total-variation metric.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::tol::TOL;

/// A probability vector over an ordered, finite label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    labels: Vec<String>,
    mass: Vec<f64>,
}

impl Dist {
    pub fn new(labels: Vec<String>, mass: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return domain("distribution needs at least one label");
        }
        if labels.len() != mass.len() {
            return domain(format!("{} labels but {} masses", labels.len(), mass.len()));
        }
        check_probability(&mass)?;
        Ok(Dist { labels, mass })
    }

    pub fn from_strs(labels: &[&str], mass: &[f64]) -> Result<Self> {
        Self::new(labels.iter().map(|s| s.to_string()).collect(), mass.to_vec())
    }

    pub fn uniform(labels: Vec<String>) -> Result<Self> {
        let n = labels.len().max(1);
        let mass = vec![1.0 / n as f64; labels.len()];
        Self::new(labels, mass)
    }

    pub fn point(labels: Vec<String>, index: usize) -> Result<Self> {
        if index >= labels.len() {
            return domain(format!("index {index} out of range"));
        }
        let mut mass = vec![0.0; labels.len()];
        mass[index] = 1.0;
        Self::new(labels, mass)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.index_of(label).map(|i| self.mass[i])
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mass[i] > 0.0).collect()
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }
}

/// Checks nonnegativity and unit total within the probability tolerance.
pub fn check_probability(mass: &[f64]) -> Result<()> {
    if let Some(m) = mass.iter().find(|m| !m.is_finite() || **m < -TOL.probability) {
        return domain(format!("invalid probability mass {m}"));
    }
    let total: f64 = mass.iter().sum();
    if (total - 1.0).abs() > TOL.probability {
        return domain(format!("masses sum to {total}, not 1"));
    }
    Ok(())
}

/// Half the l1 distance between two mass vectors of equal length.
pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn tv_distance(p: &Dist, q: &Dist) -> Result<f64> {
    if p.labels != q.labels {
        return domain("total variation between distributions over different label sets");
    }
    Ok(tv(&p.mass, &q.mass))
}

/// Counts of each type index in a vector over `m` types.
pub fn counts(entries: &[usize], m: usize) -> Vec<usize> {
    let mut c = vec![0; m];
    for &e in entries {
        c[e] += 1;
    }
    c
}

/// Empirical frequency of each label index among `entries`.
pub fn empirical_marginal(entries: &[usize], m: usize) -> Vec<f64> {
    let k = entries.len() as f64;
    counts(entries, m).into_iter().map(|c| c as f64 / k).collect()
}

pub fn empirical_dist(entries: &[usize], labels: &[String]) -> Result<Dist> {
    if entries.is_empty() {
        return domain("empty type vector");
    }
    if let Some(e) = entries.iter().find(|&&e| e >= labels.len()) {
        return domain(format!("type index {e} out of range"));
    }
    Dist::new(labels.to_vec(), empirical_marginal(entries, labels.len()))
}

/// Product of mass vectors in row-major order (last factor varies fastest).
pub fn product_masses(factors: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![1.0];
    for f in factors {
        let mut next = Vec::with_capacity(out.len() * f.len());
        for &a in &out {
            for &b in f.iter() {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

pub fn product_measure(factors: &[Dist]) -> Result<Dist> {
    if factors.is_empty() {
        return domain("product of an empty list");
    }
    let mut labels = vec![String::new()];
    for f in factors {
        let mut next = Vec::with_capacity(labels.len() * f.len());
        for a in &labels {
            for b in f.labels() {
                next.push(if a.is_empty() { b.clone() } else { format!("{a},{b}") });
            }
        }
        labels = next;
    }
    let masses: Vec<&[f64]> = factors.iter().map(|f| f.mass()).collect();
    Dist::new(labels, product_masses(&masses))
}

/// Push a measure through a row-stochastic table: `out[x] = sum_t mu[t] * rows[t][x]`.
pub fn push_forward(mu: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; width];
    for (w, row) in mu.iter().zip(rows) {
        if *w == 0.0 {
            continue;
        }
        for (o, r) in out.iter_mut().zip(row) {
            *o += w * r;
        }
    }
    out
}

/// Pairwise summation; the reduction order depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        let l = labels(&["a", "b", "c", "d"]);
        let p = Dist::new(l.clone(), vec![0.5, 0.25, 0.25, 0.0]).unwrap();
        let q = Dist::uniform(l.clone()).unwrap();
        assert!((tv_distance(&p, &q).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        let a = Dist::point(l.clone(), 0).unwrap();
        let b = Dist::point(l, 1).unwrap();
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn tv_rejects_mismatched_labels() {
        let p = Dist::from_strs(&["a", "b"], &[0.5, 0.5]).unwrap();
        let q = Dist::from_strs(&["a", "c"], &[0.5, 0.5]).unwrap();
        assert!(tv_distance(&p, &q).is_err());
    }

    #[test]
    fn empirical_examples() {
        // (A, C, B, A) over {A, B, C}
        assert_eq!(empirical_marginal(&[0, 2, 1, 0], 3), vec![0.5, 0.25, 0.25]);
        assert_eq!(empirical_marginal(&[0, 0, 0], 3), vec![1.0, 0.0, 0.0]);
        assert_eq!(empirical_marginal(&[1], 2), vec![0.0, 1.0]);
    }

    #[test]
    fn product_examples() {
        let p = Dist::from_strs(&["a", "b"], &[0.5, 0.5]).unwrap();
        let q = Dist::from_strs(&["x", "y"], &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let pq = product_measure(&[p.clone(), q]).unwrap();
        let want = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0];
        for (a, b) in pq.mass().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(pq.labels()[1], "a,y");
        assert_eq!(product_measure(std::slice::from_ref(&p)).unwrap(), p);
        assert!(product_measure(&[]).is_err());
    }

    #[test]
    fn rejects_bad_masses() {
        assert!(Dist::from_strs(&["a", "b"], &[0.6, 0.6]).is_err());
        assert!(Dist::from_strs(&["a", "b"], &[1.1, -0.1]).is_err());
        assert!(Dist::new(vec![], vec![]).is_err());
    }
}

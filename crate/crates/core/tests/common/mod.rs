//! Brute-force oracles shared by the integration tests. Nothing here calls the
//! solvers under test.
#![allow(dead_code)]

/// Every nonnegative integer table with the given row and column sums.
pub fn integer_tables(rows: &[u32], cols: &[u32]) -> Vec<Vec<Vec<u32>>> {
    let mut out = Vec::new();
    let mut table = vec![vec![0u32; cols.len()]; rows.len()];
    let mut col_left = cols.to_vec();
    fill(rows, &mut col_left, 0, 0, rows.first().copied().unwrap_or(0), &mut table, &mut out);
    out
}

fn fill(
    rows: &[u32],
    col_left: &mut Vec<u32>,
    i: usize,
    j: usize,
    row_left: u32,
    table: &mut Vec<Vec<u32>>,
    out: &mut Vec<Vec<Vec<u32>>>,
) {
    let nc = col_left.len();
    if i == rows.len() {
        if col_left.iter().all(|&c| c == 0) {
            out.push(table.clone());
        }
        return;
    }
    if j == nc - 1 {
        // last column takes the rest of the row
        if row_left > col_left[j] {
            return;
        }
        table[i][j] = row_left;
        col_left[j] -= row_left;
        let next = rows.get(i + 1).copied().unwrap_or(0);
        fill(rows, col_left, i + 1, 0, next, table, out);
        col_left[j] += row_left;
        table[i][j] = 0;
        return;
    }
    for v in 0..=row_left.min(col_left[j]) {
        table[i][j] = v;
        col_left[j] -= v;
        fill(rows, col_left, i, j + 1, row_left - v, table, out);
        col_left[j] += v;
    }
    table[i][j] = 0;
}

pub fn table_cost(t: &[Vec<u32>], c: &[Vec<f64>], denom: f64) -> f64 {
    let mut s = 0.0;
    for (r, cr) in t.iter().zip(c) {
        for (v, x) in r.iter().zip(cr) {
            s += *v as f64 * x;
        }
    }
    s / denom
}

pub fn table_diag(t: &[Vec<u32>]) -> u32 {
    (0..t.len().min(t[0].len())).map(|i| t[i][i]).sum()
}

/// Transport oracle: (min cost, lexicographically smallest table among min-cost
/// tables that extremise the diagonal).
pub fn oracle_ot(
    c: &[Vec<f64>],
    rows: &[u32],
    cols: &[u32],
    max_diag: Option<bool>,
) -> (f64, Vec<Vec<u32>>) {
    let denom: u32 = rows.iter().sum();
    let tables = integer_tables(rows, cols);
    let best = tables
        .iter()
        .map(|t| table_cost(t, c, denom as f64))
        .fold(f64::INFINITY, f64::min);
    let mut opt: Vec<_> = tables
        .into_iter()
        .filter(|t| table_cost(t, c, denom as f64) <= best + 1e-9)
        .collect();
    if let Some(maximize) = max_diag {
        let target = if maximize {
            opt.iter().map(|t| table_diag(t)).max().unwrap()
        } else {
            opt.iter().map(|t| table_diag(t)).min().unwrap()
        };
        opt.retain(|t| table_diag(t) == target);
    }
    opt.sort();
    (best, opt.swap_remove(0))
}

/// All simple directed cycles (each listed once, starting at its smallest vertex).
pub fn simple_cycles(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for start in 0..n {
        let mut path = vec![start];
        extend_cycles(n, start, &mut path, &mut out);
    }
    out
}

fn extend_cycles(n: usize, start: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let last = *path.last().unwrap();
    for w in start..n {
        if w == start && path.len() >= 2 && last != start {
            out.push(path.clone());
        } else if w > start && !path.contains(&w) {
            path.push(w);
            extend_cycles(n, start, path, out);
            path.pop();
        }
    }
}

/// Minimum over simple cycles of the sum of d(a -> b) along the cycle.
pub fn min_cycle_weight(d: &[Vec<f64>]) -> f64 {
    simple_cycles(d.len())
        .iter()
        .map(|cyc| {
            (0..cyc.len())
                .map(|k| d[cyc[k]][cyc[(k + 1) % cyc.len()]])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All vectors in {0..m}^k, lexicographic.
pub fn all_vectors(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * m);
        for v in &out {
            for t in 0..m {
                let mut w = v.clone();
                w.push(t);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

pub fn approx(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

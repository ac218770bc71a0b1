//! Exact discrete optimal transport between uniform empirical measures.
//!
//! Two solvers:
//!
//! * [`hungarian`] for square instances, where an optimal plan is a scaled
//!   permutation.
//! * [`transport_simplex`], a network simplex on the bipartite
//!   transportation graph for `N != Ñ`. Supplies are integers (`Ñ/g` per
//!   source, `N/g` per target with `g = gcd(N, Ñ)`) and are perturbed so that
//!   no basic solution is degenerate, which rules out cycling.

use std::collections::VecDeque;

use crate::error::{Result, WppError};
use crate::image::PatchDistribution;

/// Largest `N * Ñ` accepted by [`w2_exact_lp`].
pub const MAX_EXACT_CELLS: usize = 1_000_000;

/// Dense `N x Ñ` coupling between two uniform measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    pi: Vec<f64>,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.pi[j * self.cols + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.pi.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.pi.chunks(self.cols) {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }

    /// Largest marginal violation against `1/N` rows and `1/Ñ` columns.
    pub fn marginal_error(&self) -> f64 {
        let r = 1.0 / self.rows as f64;
        let c = 1.0 / self.cols as f64;
        let er = self.row_sums().iter().fold(0.0f64, |m, s| m.max((s - r).abs()));
        let ec = self.col_sums().iter().fold(0.0f64, |m, s| m.max((s - c).abs()));
        er.max(ec)
    }

    pub fn cost(&self, cost: &[f64]) -> f64 {
        self.pi.iter().zip(cost).map(|(p, c)| p * c).sum()
    }
}

/// Squared Euclidean cost matrix, row-major `N x Ñ`.
pub fn cost_matrix(src: &PatchDistribution, reference: &PatchDistribution) -> Vec<f64> {
    let mut c = Vec::with_capacity(src.count() * reference.count());
    for p in src.iter() {
        for q in reference.iter() {
            c.push(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    c
}

/// Exact squared W2 between two patch distributions and an optimal plan.
pub fn w2_exact_lp(
    src: &PatchDistribution,
    reference: &PatchDistribution,
) -> Result<(f64, TransportPlan)> {
    src.check_compatible(reference)?;
    let (n, m) = (src.count(), reference.count());
    if n.saturating_mul(m) > MAX_EXACT_CELLS {
        return Err(WppError::Capacity(format!(
            "{n} x {m} exceeds {MAX_EXACT_CELLS} cells"
        )));
    }
    let cost = cost_matrix(src, reference);
    let plan = if n == m {
        let perm = hungarian(&cost, n);
        let mut pi = vec![0.0; n * n];
        for (j, &k) in perm.iter().enumerate() {
            pi[j * n + k] = 1.0 / n as f64;
        }
        TransportPlan {
            rows: n,
            cols: n,
            pi,
        }
    } else {
        transport_simplex(&cost, n, m)?
    };
    Ok((plan.cost(&cost), plan))
}

/// Minimum-cost perfect matching on an `n x n` cost matrix.
///
/// Returns `perm` with row `j` assigned to column `perm[j]`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // potentials and matching are 1-based; index 0 is the virtual column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Spanning-tree basis of the transportation problem.
///
/// Nodes `0..n` are sources, `n..n+m` targets; every basic cell is an edge.
struct Basis {
    n: usize,
    m: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<i64>,
}

impl Basis {
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (e, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.n + j, e));
            adj[self.n + j].push((i, e));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>], cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut pot = vec![f64::NAN; n + m];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            for &(b, e) in &adj[a] {
                if pot[b].is_nan() {
                    let (i, j) = self.cells[e];
                    let c = cost[i * m + j];
                    pot[b] = c - pot[a];
                    queue.push_back(b);
                }
            }
        }
        let v = pot.split_off(n);
        (pot, v)
    }

    /// Tree path from `from` to `to` as a list of edge indices.
    fn path(&self, adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.n + self.m];
        let mut seen = vec![false; self.n + self.m];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(a) = queue.pop_front() {
            if a == to {
                break;
            }
            for &(b, e) in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    parent[b] = Some((a, e));
                    queue.push_back(b);
                }
            }
        }
        let mut edges = Vec::new();
        let mut cur = to;
        while let Some((prev, e)) = parent[cur] {
            edges.push(e);
            cur = prev;
        }
        edges.reverse();
        edges
    }

    /// Basic solution of the tree for the given integer supplies/demands.
    fn tree_flows(&self, supply: &[i64], demand: &[i64]) -> Vec<i64> {
        let (n, m) = (self.n, self.m);
        let adj = self.adjacency();
        let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        // remaining net outflow per node: supply for sources, -demand for targets
        let mut rest: Vec<i64> = supply.iter().copied().chain(demand.iter().map(|d| -d)).collect();
        let mut done = vec![false; self.cells.len()];
        let mut flow = vec![0i64; self.cells.len()];
        let mut leaves: Vec<usize> = (0..n + m).filter(|&a| degree[a] == 1).collect();
        while let Some(a) = leaves.pop() {
            if degree[a] != 1 {
                continue;
            }
            let Some(&(b, e)) = adj[a].iter().find(|&&(_, e)| !done[e]) else {
                continue;
            };
            done[e] = true;
            let f = if a < n { rest[a] } else { -rest[a] };
            flow[e] = f;
            rest[b] += if a < n { f } else { -f };
            rest[a] = 0;
            degree[a] -= 1;
            degree[b] -= 1;
            if degree[b] == 1 {
                leaves.push(b);
            }
        }
        flow
    }
}

/// Optimal plan between uniform measures on `n` sources and `m` targets.
pub fn transport_simplex(cost: &[f64], n: usize, m: usize) -> Result<TransportPlan> {
    assert_eq!(cost.len(), n * m);
    if n == 0 || m == 0 {
        return Err(WppError::invalid("empty transport instance"));
    }
    let g = gcd(n, m);
    let (a, b) = ((m / g) as i64, (n / g) as i64);
    // Perturbation: +1 on every supply, +n on the last demand, after scaling by
    // k = n + 1. Every basic solution is then strictly positive and the basis
    // optimal for the perturbed problem stays feasible for the original one.
    let k = n as i64 + 1;
    let supply: Vec<i64> = vec![a * k + 1; n];
    let mut demand: Vec<i64> = vec![b * k; m];
    demand[m - 1] += n as i64;

    // north-west corner start
    let mut basis = Basis {
        n,
        m,
        cells: Vec::with_capacity(n + m - 1),
        flow: Vec::with_capacity(n + m - 1),
    };
    {
        let (mut s, mut d) = (supply.clone(), demand.clone());
        let (mut i, mut j) = (0usize, 0usize);
        while i < n && j < m {
            let f = s[i].min(d[j]);
            basis.cells.push((i, j));
            basis.flow.push(f);
            s[i] -= f;
            d[j] -= f;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if s[i] == 0 && i < n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    if basis.cells.len() != n + m - 1 {
        return Err(WppError::Solver("initial basis is not a spanning tree".into()));
    }

    let cmax = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * (1.0 + cmax);
    let max_iter = 50 * (n + m) * (n + m) + 1000;
    for _ in 0..max_iter {
        let adj = basis.adjacency();
        let (u, v) = basis.potentials(&adj, cost);
        let mut best = -tol;
        let mut entering = None;
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            for j in 0..m {
                let r = row[j] - u[i] - v[j];
                if r < best {
                    best = r;
                    entering = Some((i, j));
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let flow = basis.tree_flows(&vec![a; n], &vec![b; m]);
            let total = (a * n as i64) as f64;
            let mut pi = vec![0.0; n * m];
            for (&(i, j), &f) in basis.cells.iter().zip(&flow) {
                if f < 0 {
                    return Err(WppError::Solver("negative flow in optimal basis".into()));
                }
                pi[i * m + j] = f as f64 / total;
            }
            return Ok(TransportPlan { rows: n, cols: m, pi });
        };
        // cycle: entering (+), then the tree path from the source node to the
        // target node alternates (-, +, -, ...)
        let path = basis.path(&adj, ei, n + ej);
        let mut theta = i64::MAX;
        let mut leaving = usize::MAX;
        for (t, &e) in path.iter().enumerate() {
            if t % 2 == 0 && basis.flow[e] < theta {
                theta = basis.flow[e];
                leaving = e;
            }
        }
        for (t, &e) in path.iter().enumerate() {
            if t % 2 == 0 {
                basis.flow[e] -= theta;
            } else {
                basis.flow[e] += theta;
            }
        }
        basis.cells[leaving] = (ei, ej);
        basis.flow[leaving] = theta;
    }
    Err(WppError::Solver(format!(
        "transport simplex did not converge in {max_iter} pivots"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_assignment(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for k in 0..n {
                if !used[k] {
                    used[k] = true;
                    best = best.min(cost[row * n + k] + rec(cost, n, row + 1, used));
                    used[k] = false;
                }
            }
            best
        }
        rec(cost, n, 0, &mut vec![false; n])
    }

    #[test]
    fn one_dimensional_pairing() {
        let a = PatchDistribution::from_scalars(&[0.0, 1.0]).unwrap();
        let b = PatchDistribution::from_scalars(&[2.0, 3.0]).unwrap();
        let (v, plan) = w2_exact_lp(&a, &b).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        assert_eq!(plan.get(0, 0), 0.5);
        assert_eq!(plan.get(1, 1), 0.5);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
                let perm = hungarian(&cost, n);
                let got: f64 = perm.iter().enumerate().map(|(j, &k)| cost[j * n + k]).sum();
                assert!((got - brute_force_assignment(&cost, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simplex_agrees_with_hungarian_on_square_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=9 {
            for _ in 0..10 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
                let perm = hungarian(&cost, n);
                let h: f64 = perm.iter().enumerate().map(|(j, &k)| cost[j * n + k]).sum::<f64>()
                    / n as f64;
                let plan = transport_simplex(&cost, n, n).unwrap();
                assert!((plan.cost(&cost) - h).abs() < 1e-12, "n={n}");
                assert!(plan.marginal_error() < 1e-12);
            }
        }
    }

    #[test]
    fn simplex_on_duplicated_support_matches_assignment() {
        // replicate atoms to turn an N x M instance into an lcm-sized assignment
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (n, m) in [(2, 3), (3, 5), (4, 6), (6, 4), (1, 5), (5, 1)] {
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let l = n * m / gcd(n, m);
            let xr: Vec<f64> = (0..l).map(|t| xs[t / (l / n)]).collect();
            let yr: Vec<f64> = (0..l).map(|t| ys[t / (l / m)]).collect();
            let cost_l: Vec<f64> = xr
                .iter()
                .flat_map(|x| yr.iter().map(move |y| (x - y) * (x - y)))
                .collect();
            let perm = hungarian(&cost_l, l);
            let expect: f64 =
                perm.iter().enumerate().map(|(j, &k)| cost_l[j * l + k]).sum::<f64>() / l as f64;
            let a = PatchDistribution::from_scalars(&xs).unwrap();
            let b = PatchDistribution::from_scalars(&ys).unwrap();
            let (v, plan) = w2_exact_lp(&a, &b).unwrap();
            assert!((v - expect).abs() < 1e-12, "{n}x{m}: {v} vs {expect}");
            assert!(plan.marginal_error() < 1e-9);
            assert!(plan.as_slice().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn capacity_guard() {
        let a = PatchDistribution::from_scalars(&vec![0.0; 1001]).unwrap();
        let b = PatchDistribution::from_scalars(&vec![0.0; 1000]).unwrap();
        assert!(matches!(w2_exact_lp(&a, &b), Err(WppError::Capacity(_))));
    }
}

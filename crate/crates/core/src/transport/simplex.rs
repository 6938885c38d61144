//! Transportation simplex (MODI / u-v method) for balanced problems.
//!
//! The basis is kept as a spanning tree over row and column nodes with exactly
//! `m + n - 1` basic cells, zero-flow cells included. Entering and leaving
//! cells are chosen by lowest `(row, col)` among candidates, which rules out
//! cycling on degenerate pivots.

use thiserror::Error;

/// Reduced costs above `-REDUCED_COST_TOL` count as optimal.
const REDUCED_COST_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("empty supply or demand")]
    Empty,
    #[error("cost matrix shape does not match supplies and demands")]
    Shape,
    #[error("supplies and demands must be finite and non-negative")]
    BadMass,
    #[error("costs must be finite")]
    BadCost,
    #[error("pivot limit exceeded")]
    PivotLimit,
}

/// Optimal flows (row-major `m × n`) and their total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub flows: Vec<f64>,
    pub cost: f64,
    pub pivots: usize,
}

/// Solves `min Σ c_ij x_ij` subject to row sums `supply`, column sums
/// `demand`, `x ≥ 0`. Total supply and demand are assumed equal up to
/// rounding; the last basic cell absorbs the residue.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<SimplexSolution, SimplexError> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(SimplexError::Empty);
    }
    if cost.len() != m * n {
        return Err(SimplexError::Shape);
    }
    if supply.iter().chain(demand).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(SimplexError::BadMass);
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(SimplexError::BadCost);
    }

    let mut t = Tableau::northwest_corner(supply, demand);
    let mut pivots = 0;
    loop {
        let (u, v) = t.potentials(cost);
        let entering =
            (0..m * n).find(|&cell| !t.basic[cell] && cost[cell] - u[cell / n] - v[cell % n] < -REDUCED_COST_TOL);
        let Some(cell) = entering else { break };
        t.pivot(cell);
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(SimplexError::PivotLimit);
        }
    }

    let total = t.flows.iter().zip(cost).map(|(x, c)| x * c).sum();
    Ok(SimplexSolution {
        flows: t.flows,
        cost: total,
        pivots,
    })
}

struct Tableau {
    m: usize,
    n: usize,
    flows: Vec<f64>,
    basic: Vec<bool>,
}

impl Tableau {
    fn northwest_corner(supply: &[f64], demand: &[f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut flows = vec![0.0; m * n];
        let mut basic = vec![false; m * n];
        let mut rs = supply.to_vec();
        let mut cs = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let f = rs[i].min(cs[j]);
            flows[i * n + j] = f;
            basic[i * n + j] = true;
            rs[i] -= f;
            cs[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // advance exactly one index so the basis stays at m + n - 1 cells
            if j == n - 1 || (i < m - 1 && rs[i] <= cs[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, flows, basic }
    }

    /// Tree adjacency: node `i < m` is row `i`, node `m + j` is column `j`.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for cell in (0..self.m * self.n).filter(|&c| self.basic[c]) {
            let (i, j) = (cell / self.n, cell % self.n);
            adj[i].push(self.m + j);
            adj[self.m + j].push(i);
        }
        adj
    }

    /// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on basic cells.
    fn potentials(&self, cost: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &next in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = if node < m { (node, next - m) } else { (next, node - m) };
                    pot[next] = cost[i * n + j] - pot[node];
                    stack.push(next);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    /// Basis path from column node of `cell` to its row node, as cells.
    fn cycle_path(&self, cell: usize) -> Vec<usize> {
        let (m, n) = (self.m, self.n);
        let (ei, ej) = (cell / n, cell % n);
        let adj = self.adjacency();
        let start = m + ej;
        let mut parent = vec![usize::MAX; m + n];
        parent[start] = start;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == ei {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = ei;
        while node != start {
            let prev = parent[node];
            let (i, j) = if node < m { (node, prev - m) } else { (prev, node - m) };
            path.push(i * n + j);
            node = prev;
        }
        // path runs row ei -> ... -> column ej; the cycle alternates signs
        // starting with the cell adjacent to the entering one in column ej.
        path.reverse();
        path
    }

    fn pivot(&mut self, entering: usize) {
        let path = self.cycle_path(entering);
        // Signs along the cycle: entering +, then -, +, - ... ; `path[0]` sits
        // in the entering column.
        let minus: Vec<usize> = path.iter().copied().step_by(2).collect();
        let plus: Vec<usize> = path.iter().copied().skip(1).step_by(2).collect();
        let leaving = *minus
            .iter()
            .min_by(|&&a, &&b| self.flows[a].total_cmp(&self.flows[b]).then(a.cmp(&b)))
            .expect("cycle has a minus cell");
        let theta = self.flows[leaving];
        self.flows[entering] += theta;
        for &c in &plus {
            self.flows[c] += theta;
        }
        for &c in &minus {
            self.flows[c] = (self.flows[c] - theta).max(0.0);
        }
        self.flows[leaving] = 0.0;
        self.basic[leaving] = false;
        self.basic[entering] = true;
    }
}

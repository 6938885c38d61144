//! Successive-shortest-path min-cost flow, used as an independent check on
//! the transportation simplex.

const EPS: f64 = 1e-15;

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

struct Graph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    /// Adds `from -> to` and its zero-capacity reverse at index `id ^ 1`.
    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    /// Bellman-Ford distances and predecessor edges from `s`.
    fn shortest(&self, s: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap > EPS && dist[u] + edge.cost < dist[edge.to] - 1e-14 {
                        dist[edge.to] = dist[u] + edge.cost;
                        pred[edge.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        (dist, pred)
    }
}

/// Minimum cost of shipping `supply` to `demand` over the row-major cost
/// matrix, each row to each column uncapacitated.
pub fn min_cost(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let (s, t) = (m + n, m + n + 1);
    let mut g = Graph::new(m + n + 2);
    for (i, &a) in supply.iter().enumerate() {
        g.add(s, i, a, 0.0);
    }
    for (j, &b) in demand.iter().enumerate() {
        g.add(m + j, t, b, 0.0);
    }
    for i in 0..m {
        for j in 0..n {
            g.add(i, m + j, f64::INFINITY, cost[i * n + j]);
        }
    }
    let total: f64 = supply.iter().sum::<f64>().min(demand.iter().sum());
    let mut shipped = 0.0;
    let mut value = 0.0;
    while total - shipped > 1e-13 {
        let (dist, pred) = g.shortest(s);
        if dist[t].is_infinite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while let Some(e) = pred[v] {
            push = push.min(g.edges[e].cap);
            v = g.edges[e ^ 1].to;
        }
        let mut v = t;
        while let Some(e) = pred[v] {
            g.edges[e].cap -= push;
            g.edges[e ^ 1].cap += push;
            v = g.edges[e ^ 1].to;
        }
        shipped += push;
        value += push * dist[t];
    }
    value
}

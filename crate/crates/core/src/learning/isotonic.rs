//! Weighted least-squares isotonic regression and the monotone CPT projection.
//!
//! On a chain the regression is solved exactly by pool-adjacent-violators.
//! On a general partial order it is solved exactly by recursive partitioning:
//! at the weighted mean of a block, the maximum-weight up-closed subset
//! (found with a minimum cut) holds every value that ends above the mean, so
//! the block splits and each side is solved independently.

use crate::model::Cpt;
use crate::order::{cumulative_levels, ParentConfigOrder};

/// Non-decreasing weighted isotonic regression of `values` in index order.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Blocks as (mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&y, &w) in values.iter().zip(weights) {
        let mut cur = (y, w, 1usize);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let total = bw + cur.1;
            let mean = if total > 0.0 {
                (m * bw + cur.0 * cur.1) / total
            } else {
                (m + cur.0) / 2.0
            };
            cur = (mean, total, len + cur.2);
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect()
}

/// Weighted isotonic regression on a DAG: minimizes `sum w (z - y)^2`
/// subject to `z[a] <= z[b]` for every edge `(a, b)`.
///
/// Weights must be positive.
pub fn isotonic_dag(values: &[f64], weights: &[f64], edges: &[(usize, usize)]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    let mut stack = vec![(0..n).collect::<Vec<usize>>()];
    while let Some(block) = stack.pop() {
        let wsum: f64 = block.iter().map(|&v| weights[v]).sum();
        let mean = block.iter().map(|&v| weights[v] * values[v]).sum::<f64>() / wsum;
        match upper_split(&block, values, weights, edges, mean) {
            Some((upper, lower)) => {
                stack.push(upper);
                stack.push(lower);
            }
            None => block.iter().for_each(|&v| out[v] = mean),
        }
    }
    out
}

/// Splits `block` into its maximum-weight up-closed subset (values above
/// `mean`) and the rest, or `None` when the block is already level.
fn upper_split(
    block: &[usize],
    values: &[f64],
    weights: &[f64],
    edges: &[(usize, usize)],
    mean: f64,
) -> Option<(Vec<usize>, Vec<usize>)> {
    if block.len() < 2 {
        return None;
    }
    let n = block.len();
    let mut local = vec![usize::MAX; values.len()];
    for (i, &v) in block.iter().enumerate() {
        local[v] = i;
    }
    let gains: Vec<f64> = block.iter().map(|&v| weights[v] * (values[v] - mean)).collect();
    let scale: f64 = gains.iter().map(|g| g.abs()).sum();
    if scale <= 1e-300 {
        return None;
    }
    let eps = scale * 1e-13;
    let source = n;
    let sink = n + 1;
    let mut net = FlowNet::new(n + 2, eps);
    for (i, &g) in gains.iter().enumerate() {
        if g > eps {
            net.add_edge(source, i, g);
        } else if g < -eps {
            net.add_edge(i, sink, -g);
        }
    }
    for &(a, b) in edges {
        let (la, lb) = (local[a], local[b]);
        if la != usize::MAX && lb != usize::MAX {
            net.add_edge(la, lb, f64::INFINITY);
        }
    }
    net.max_flow(source, sink);
    let reach = net.reachable(source);
    let upper: Vec<usize> = (0..n).filter(|&i| reach[i]).map(|i| block[i]).collect();
    if upper.is_empty() || upper.len() == n {
        return None;
    }
    let gain: f64 = (0..n).filter(|&i| reach[i]).map(|i| gains[i]).sum();
    if gain <= eps {
        return None;
    }
    let lower = (0..n).filter(|&i| !reach[i]).map(|i| block[i]).collect();
    Some((upper, lower))
}

/// Residual network for Edmonds-Karp max flow.
struct FlowNet {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    eps: f64,
}

impl FlowNet {
    fn new(n: usize, eps: f64) -> Self {
        FlowNet {
            adj: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            eps,
        }
    }

    fn add_edge(&mut self, a: usize, b: usize, c: f64) {
        self.adj[a].push(self.to.len());
        self.to.push(b);
        self.cap.push(c);
        self.adj[b].push(self.to.len());
        self.to.push(a);
        self.cap.push(0.0);
    }

    fn max_flow(&mut self, s: usize, t: usize) {
        let n = self.adj.len();
        loop {
            let mut prev = vec![usize::MAX; n];
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if !seen[v] && self.cap[e] > self.eps {
                        seen[v] = true;
                        prev[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return;
            }
            let mut push = f64::INFINITY;
            let mut v = t;
            while v != s {
                let e = prev[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = prev[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                v = self.to[e ^ 1];
            }
        }
    }

    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if !seen[v] && self.cap[e] > self.eps {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// Projects a CPT onto the monotone tables of its parent order.
///
/// Each cumulative level is replaced by its weighted isotonic regression,
/// constrained to be non-increasing along the order; rows are recovered by
/// differencing. `weights` are per-row (parent configuration) weights, such
/// as expected configuration counts. All-zero weights fall back to uniform
/// weights; individual zero weights are raised to a negligible floor.
pub fn isotonic_project(cpt: &Cpt, order: &ParentConfigOrder, weights: &[f64]) -> Cpt {
    let rows = cpt.num_rows();
    assert_eq!(weights.len(), rows);
    let total: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
    let weights: Vec<f64> = if total > 0.0 {
        let floor = total * 1e-12;
        weights
            .iter()
            .map(|&w| if w.is_finite() && w > floor { w } else { floor })
            .collect()
    } else {
        vec![1.0; rows]
    };

    let cumulative: Vec<Vec<f64>> = cpt.rows().map(cumulative_levels).collect();
    let levels = cpt.num_states() - 1;
    let mut projected = vec![vec![0.0; levels]; rows];
    // Non-increasing along `lower -> upper` is non-decreasing along
    // `upper -> lower`.
    let reversed: Vec<(usize, usize)> = order.covering().iter().map(|&(l, u)| (u, l)).collect();
    let chain = order.chain();
    for k in 0..levels {
        let y: Vec<f64> = cumulative.iter().map(|c| c[k]).collect();
        let z = match &chain {
            Some(bottom_up) => {
                // Walk the chain top-down so the regression is non-decreasing.
                let idx: Vec<usize> = bottom_up.iter().rev().copied().collect();
                let ys: Vec<f64> = idx.iter().map(|&r| y[r]).collect();
                let ws: Vec<f64> = idx.iter().map(|&r| weights[r]).collect();
                let zs = pava(&ys, &ws);
                let mut z = vec![0.0; rows];
                for (&r, v) in idx.iter().zip(zs) {
                    z[r] = v;
                }
                z
            }
            None => isotonic_dag(&y, &weights, &reversed),
        };
        for (r, v) in z.into_iter().enumerate() {
            projected[r][k] = v;
        }
    }

    let mut out = cpt.clone();
    for (r, cum) in projected.iter().enumerate() {
        let row = out.row_mut(r);
        let mut prev = 0.0;
        for (t, slot) in row.iter_mut().enumerate() {
            let f = if t < levels { cum[t].clamp(0.0, 1.0) } else { 1.0 };
            *slot = (f - prev).max(0.0);
            prev = prev.max(f);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    out
}

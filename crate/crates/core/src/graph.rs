use std::collections::VecDeque;

/// Directed graph with an edge `j -> i` for every strictly positive `J[i][j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingGraph {
    n: usize,
    /// `successors[j]` lists every `i` with `J[i][j] > 0`, ascending.
    successors: Vec<Vec<usize>>,
}

impl CouplingGraph {
    pub fn from_couplings(couplings: &[Vec<f64>]) -> Self {
        let n = couplings.len();
        let mut successors = vec![Vec::new(); n];
        for (i, row) in couplings.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0.0 {
                    successors[j].push(i);
                }
            }
        }
        for s in &mut successors {
            s.sort_unstable();
        }
        Self { n, successors }
    }

    /// Graph on `n` nodes from `(source, target)` pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut successors = vec![Vec::new(); n];
        for &(from, to) in edges {
            successors[from].push(to);
        }
        for s in &mut successors {
            s.sort_unstable();
            s.dedup();
        }
        Self { n, successors }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Edges as `(source, target)` pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> = self
            .successors
            .iter()
            .enumerate()
            .flat_map(|(j, succ)| succ.iter().map(move |&i| (j, i)))
            .collect();
        edges.sort_unstable();
        edges
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.successors[node]
    }

    /// Kahn's source elimination. `None` when a directed cycle (including a
    /// self-loop) exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut in_degree = vec![0usize; self.n];
        for succ in &self.successors {
            for &i in succ {
                in_degree[i] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..self.n).filter(|&v| in_degree[v] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &self.successors[v] {
                in_degree[w] -= 1;
                if in_degree[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        (order.len() == self.n).then_some(order)
    }

    pub fn has_causal_loops(&self) -> bool {
        self.topological_order().is_none()
    }
}

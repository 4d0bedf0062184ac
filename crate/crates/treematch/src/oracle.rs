//! Exact offline matching optimum. Forests get a linear-time rooted
//! dynamic program; tiny general graphs get brute force over all edge
//! subsets, which doubles as the oracle's own cross-check.

use thiserror::Error;

use crate::instance::InstanceStream;
use crate::rational::{rint, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("graph contains a cycle; the forest optimum is undefined here")]
    Cyclic,
    #[error("graph has {0} edges, above the brute-force limit of {1}")]
    SizeLimit(usize, usize),
}

/// Completed graph built from a full stream (or raw edges), with weights
/// defaulting to 1.
#[derive(Debug, Clone)]
pub struct OfflineGraph {
    n: usize,
    adj: Vec<Vec<(usize, usize)>>,
    edges: Vec<(usize, usize)>,
    weights: Vec<Rational>,
}

impl OfflineGraph {
    pub fn from_stream(stream: &InstanceStream) -> Self {
        let edges: Vec<(usize, usize)> = stream
            .events()
            .iter()
            .map(|ev| (ev.u.0 as usize, ev.v.0 as usize))
            .collect();
        OfflineGraph::from_edges(stream.vertex_count(), &edges, stream.weights())
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)], weights: Vec<Rational>) -> Self {
        assert_eq!(edges.len(), weights.len());
        let mut adj = vec![Vec::new(); n];
        for (i, &(u, v)) in edges.iter().enumerate() {
            adj[u].push((v, i));
            adj[v].push((u, i));
        }
        OfflineGraph {
            n,
            adj,
            edges: edges.to_vec(),
            weights,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    fn is_forest(&self) -> bool {
        // A graph is a forest iff every component has exactly
        // vertices - 1 edges; equivalently no back edge shows up during
        // traversal.
        let mut seen = vec![false; self.n];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push((start, usize::MAX));
            while let Some((u, via)) = stack.pop() {
                for &(v, e) in &self.adj[u] {
                    if e == via {
                        continue;
                    }
                    if seen[v] {
                        return false;
                    }
                    seen[v] = true;
                    stack.push((v, e));
                }
            }
        }
        true
    }
}

/// Per-vertex DP pair: best subtree value with the vertex left free for
/// its parent, and best value overall.
struct DpCell {
    free: Rational,
    best: Rational,
}

/// Exact maximum weight matching on a forest. Each component is rooted at
/// its lowest vertex id and folded bottom-up with an explicit stack, so
/// path-shaped components of any depth are safe.
pub fn max_weight_forest(graph: &OfflineGraph) -> Result<Rational, OracleError> {
    if !graph.is_forest() {
        return Err(OracleError::Cyclic);
    }
    let n = graph.n;
    let mut cell: Vec<Option<DpCell>> = (0..n).map(|_| None).collect();
    let mut total = rint(0);
    let mut visited = vec![false; n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        // Post-order over the component: first pass discovers, second
        // pass (popped entries) folds children into parents.
        let mut order: Vec<(usize, usize)> = Vec::new();
        let mut stack: Vec<(usize, usize)> = vec![(root, usize::MAX)];
        visited[root] = true;
        while let Some((u, via)) = stack.pop() {
            order.push((u, via));
            for &(v, e) in &graph.adj[u] {
                if e != via {
                    visited[v] = true;
                    stack.push((v, e));
                }
            }
        }
        for &(u, via) in order.iter().rev() {
            let mut free = rint(0);
            let mut best_gain = rint(0);
            for &(v, e) in &graph.adj[u] {
                if e == via {
                    continue;
                }
                let child = cell[v].take().expect("children folded before parents");
                free += &child.best;
                let gain = &graph.weights[e] + &child.free - &child.best;
                if gain > best_gain {
                    best_gain = gain;
                }
            }
            let best = &free + &best_gain;
            cell[u] = Some(DpCell { free, best });
        }
        let root_cell = cell[root].take().expect("root folded last");
        total += root_cell.best;
    }
    Ok(total)
}

/// Exact maximum cardinality matching on a forest: the weight DP with
/// unit weights.
pub fn max_cardinality_forest(graph: &OfflineGraph) -> Result<usize, OracleError> {
    let unit = OfflineGraph {
        n: graph.n,
        adj: graph.adj.clone(),
        edges: graph.edges.clone(),
        weights: vec![rint(1); graph.edges.len()],
    };
    let value = max_weight_forest(&unit)?;
    assert!(value.is_integer(), "unit-weight optimum must be integral");
    let size: usize = value
        .to_integer()
        .try_into()
        .expect("matching size fits usize");
    Ok(size)
}

pub const BRUTE_FORCE_EDGE_LIMIT: usize = 16;

/// Maximum weight matching by enumerating every edge subset. Works on any
/// graph with at most [`BRUTE_FORCE_EDGE_LIMIT`] edges; the oracle's
/// oracle.
pub fn brute_force(graph: &OfflineGraph) -> Result<Rational, OracleError> {
    let m = graph.edges.len();
    if m > BRUTE_FORCE_EDGE_LIMIT {
        return Err(OracleError::SizeLimit(m, BRUTE_FORCE_EDGE_LIMIT));
    }
    let mut best = rint(0);
    'subsets: for mask in 0u32..(1u32 << m) {
        let mut used = vec![false; graph.n];
        let mut value = rint(0);
        for (i, &(u, v)) in graph.edges.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            if used[u] || used[v] {
                continue 'subsets;
            }
            used[u] = true;
            used[v] = true;
            value += &graph.weights[i];
        }
        if value > best {
            best = value;
        }
    }
    Ok(best)
}

/// Enumerates every labeled tree on `n_vertices` vertices (sequence
/// decoding over all label strings of length n-2). Used to cross-check
/// the forest DP exhaustively on small sizes.
pub fn all_labeled_trees(n_vertices: usize) -> Vec<Vec<(usize, usize)>> {
    assert!((2..=9).contains(&n_vertices), "enumeration is for small n");
    if n_vertices == 2 {
        return vec![vec![(0, 1)]];
    }
    let n = n_vertices;
    let seq_len = n - 2;
    let count = n.pow(seq_len as u32);
    let mut out = Vec::with_capacity(count);
    for code in 0..count {
        let mut seq = Vec::with_capacity(seq_len);
        let mut c = code;
        for _ in 0..seq_len {
            seq.push(c % n);
            c /= n;
        }
        out.push(decode_tree(&seq, n));
    }
    out
}

fn decode_tree(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf exists");
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let mut last = (0..n).filter(|&v| degree[v] == 1);
    let a = last.next().expect("two vertices remain");
    let b = last.next().expect("two vertices remain");
    edges.push((a, b));
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_hard_mcm_static, gen_hard_mwm, HardMwmVariant};
    use crate::rational::rat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_graph(weights: &[Rational]) -> OfflineGraph {
        let edges: Vec<(usize, usize)> = (0..weights.len()).map(|i| (i, i + 1)).collect();
        OfflineGraph::from_edges(weights.len() + 1, &edges, weights.to_vec())
    }

    #[test]
    fn cardinality_basics() {
        let single = OfflineGraph::from_edges(2, &[(0, 1)], vec![rint(1)]);
        assert_eq!(max_cardinality_forest(&single).unwrap(), 1);
        let star = OfflineGraph::from_edges(
            5,
            &[(0, 1), (0, 2), (0, 3), (0, 4)],
            vec![rint(1); 4],
        );
        assert_eq!(max_cardinality_forest(&star).unwrap(), 1);
        let empty = OfflineGraph::from_edges(0, &[], vec![]);
        assert_eq!(max_cardinality_forest(&empty).unwrap(), 0);
        assert_eq!(brute_force(&empty).unwrap(), rint(0));
    }

    #[test]
    fn spine_with_pendants_has_perfect_spine_matching() {
        for n in 1..=50 {
            let s = gen_hard_mcm_static(n).unwrap();
            let g = OfflineGraph::from_stream(&s);
            assert_eq!(max_cardinality_forest(&g).unwrap(), n);
        }
    }

    #[test]
    fn weighted_paths() {
        let g = path_graph(&[rint(3), rint(1), rint(3)]);
        assert_eq!(max_weight_forest(&g).unwrap(), rint(6));
        let g = path_graph(&[rint(1), rint(10)]);
        assert_eq!(max_weight_forest(&g).unwrap(), rint(10));
    }

    #[test]
    fn additive_hard_instance_optimum_matches_closed_form() {
        let eps = rat(1, 1000);
        for n in 1..=12usize {
            let s = gen_hard_mwm(n, HardMwmVariant::Additive, &eps).unwrap();
            let g = OfflineGraph::from_stream(&s);
            let opt = max_weight_forest(&g).unwrap();
            let n_r = rint(n as i64);
            let expect = &n_r + rat(((n * n - n + 2) / 2) as i64, 1) * &eps;
            assert_eq!(opt, expect, "n = {n}");
        }
    }

    #[test]
    fn cycles_are_rejected() {
        let tri = OfflineGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)], vec![rint(1); 3]);
        assert!(matches!(max_weight_forest(&tri), Err(OracleError::Cyclic)));
        assert_eq!(brute_force(&tri).unwrap(), rint(1));
    }

    #[test]
    fn brute_force_size_limit() {
        let edges: Vec<(usize, usize)> = (0..17).map(|i| (2 * i, 2 * i + 1)).collect();
        let g = OfflineGraph::from_edges(34, &edges, vec![rint(1); 17]);
        assert!(matches!(brute_force(&g), Err(OracleError::SizeLimit(17, _))));
    }

    #[test]
    fn dp_agrees_with_brute_force_on_all_small_trees() {
        // Every labeled tree on up to 6 vertices, with pseudorandom
        // rational weights.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in 2..=6usize {
            for edges in all_labeled_trees(n) {
                let weights: Vec<Rational> = edges
                    .iter()
                    .map(|_| rat(rng.gen_range(1..=32), rng.gen_range(1..=4)))
                    .collect();
                let g = OfflineGraph::from_edges(n, &edges, weights);
                assert_eq!(
                    max_weight_forest(&g).unwrap(),
                    brute_force(&g).unwrap(),
                    "tree {edges:?}"
                );
            }
        }
    }

    #[test]
    fn dp_agrees_with_brute_force_on_random_forests() {
        use crate::instance::gen_random_forest;
        for seed in 0..30u64 {
            let s = gen_random_forest(12, &rat(1, 3), seed).unwrap();
            let g = OfflineGraph::from_stream(&s);
            assert_eq!(
                max_weight_forest(&g).unwrap(),
                brute_force(&g).unwrap(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn deep_path_does_not_overflow() {
        let weights: Vec<Rational> = (0..200_000).map(|_| rint(1)).collect();
        let g = path_graph(&weights);
        assert_eq!(max_weight_forest(&g).unwrap(), rint(100_000));
    }
}

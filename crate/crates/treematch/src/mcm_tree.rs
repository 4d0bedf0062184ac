//! Fractional maximum cardinality matching on growing trees, with a
//! guaranteed ratio of 2/3 against the offline optimum.
//!
//! Rule per arriving leaf edge e at parent u: if u carries an incident
//! edge with fraction at least 2/3, lower it to 1/3 (making u stable),
//! then match e to the remaining capacity 1 - x(u). All fractions stay
//! on the thirds grid.
//!
//! The dual certificate is parent-only: each vertex u is assigned
//! alpha(u) = x(u) - x(e_u) where e_u is the edge to u's parent, the
//! root keeps its whole load, and leaves get zero. This pays every
//! matched fraction to exactly one endpoint, so the primal and dual
//! objectives agree exactly, and every arrived edge keeps
//! alpha(u) + alpha(v) >= 2/3.

use std::collections::HashMap;

use crate::fracstate::FracState;
use crate::instance::{EdgeId, EdgeKind, PrefixGraph, VertexId};
use crate::matcher::{AlgoError, DualSnapshot, OnlineMatcher, RunArtifacts};
use crate::rational::{rat, rint, Rational};

pub const ALGO_ID: &str = "mcm-tree";

/// Competitive ratio certified by this algorithm's duals.
pub fn guarantee() -> Rational {
    rat(2, 3)
}

pub struct TreeMatcher {
    state: FracState,
    prefix: PrefixGraph,
    root: Option<VertexId>,
    /// Edge to the parent, per non-root vertex.
    parent_edge: HashMap<VertexId, EdgeId>,
    snapshots: Vec<DualSnapshot>,
    kinds: Vec<EdgeKind>,
}

impl Default for TreeMatcher {
    fn default() -> Self {
        TreeMatcher::new()
    }
}

impl TreeMatcher {
    pub fn new() -> Self {
        TreeMatcher {
            state: FracState::new(),
            prefix: PrefixGraph::new(),
            root: None,
            parent_edge: HashMap::new(),
            snapshots: Vec::new(),
            kinds: Vec::new(),
        }
    }

    /// Parent-only dual values, recomputed from the closed form.
    fn snapshot(&self) -> DualSnapshot {
        let mut snap = DualSnapshot::default();
        let root = self.root.expect("snapshot after at least one event");
        for i in 0..self.prefix.n_vertices() as u32 {
            let v = VertexId(i);
            let alpha = if v == root {
                self.state.load(v)
            } else if self.prefix.degree(v) <= 1 {
                rint(0)
            } else {
                let pe = self.parent_edge[&v];
                self.state.load(v) - self.state.x(pe)
            };
            if alpha != rint(0) {
                snap.alpha.insert(v, alpha);
            }
        }
        snap
    }
}

impl OnlineMatcher for TreeMatcher {
    fn algo_id(&self) -> &'static str {
        ALGO_ID
    }

    fn wants_weights(&self) -> bool {
        false
    }

    fn process(
        &mut self,
        u: VertexId,
        v: VertexId,
        weight: Option<Rational>,
    ) -> Result<EdgeId, AlgoError> {
        let event_no = self.state.n_edges() + 1;
        let kind = self.prefix.classify(u, v)?;
        match kind {
            EdgeKind::Isolated => {
                if self.root.is_some() {
                    return Err(AlgoError::ModelViolation {
                        event: event_no,
                        reason: "second component is not allowed in a growing tree".into(),
                    });
                }
                let e = self.state.begin_arrival(u, v, weight)?;
                self.state.match_isolated(rint(1))?;
                self.root = Some(u);
                self.parent_edge.insert(v, e);
                self.prefix.insert(u, v, e);
                self.kinds.push(kind);
                self.snapshots.push(self.snapshot());
                Ok(e)
            }
            EdgeKind::Growing { parent, child } => {
                let e = self.state.begin_arrival(u, v, weight)?;
                let threshold = rat(2, 3);
                let heavy: Vec<EdgeId> = self
                    .prefix
                    .neighbors(parent)
                    .iter()
                    .map(|&(_, pe)| pe)
                    .filter(|&pe| *self.state.x(pe) >= threshold)
                    .collect();
                if heavy.len() > 1 {
                    return Err(AlgoError::InvariantBroken(format!(
                        "{parent} carries {} edges at 2/3 or more; capacity allows one",
                        heavy.len()
                    )));
                }
                if let Some(&pe) = heavy.first() {
                    self.state.dispose_to(pe, rat(1, 3))?;
                }
                let gamma = rint(1) - self.state.load(parent);
                self.state.match_growing(parent, gamma)?;
                self.parent_edge.insert(child, e);
                self.prefix.insert(u, v, e);
                self.kinds.push(kind);
                self.snapshots.push(self.snapshot());
                Ok(e)
            }
            EdgeKind::TrivialMerge { .. } | EdgeKind::NonTrivialMerge => {
                Err(AlgoError::ModelViolation {
                    event: event_no,
                    reason: "merging edges are not allowed in a growing tree".into(),
                })
            }
        }
    }

    fn state(&self) -> &FracState {
        &self.state
    }

    fn snapshots(&self) -> &[DualSnapshot] {
        &self.snapshots
    }

    fn kinds(&self) -> &[EdgeKind] {
        &self.kinds
    }

    fn into_artifacts(self) -> RunArtifacts {
        RunArtifacts {
            algo: ALGO_ID,
            state: self.state,
            snapshots: self.snapshots,
            kinds: self.kinds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_hard_mcm_static, gen_random_growing_tree};
    use crate::matcher::run_stream;
    use crate::oracle::{max_cardinality_forest, OfflineGraph};

    fn fractions(m: &TreeMatcher) -> Vec<Rational> {
        (0..m.state().n_edges())
            .map(|i| m.state().x(EdgeId(i as u32)).clone())
            .collect()
    }

    #[test]
    fn two_edge_path() {
        let mut m = TreeMatcher::new();
        m.process(VertexId(0), VertexId(1), None).unwrap();
        assert_eq!(fractions(&m), vec![rint(1)]);
        m.process(VertexId(1), VertexId(2), None).unwrap();
        assert_eq!(fractions(&m), vec![rat(1, 3), rat(2, 3)]);
        assert_eq!(*m.state().primal_value(), rint(1));
        // Dual pays the full primal: 1/3 on the root, 2/3 on the middle.
        let snap = m.snapshots().last().unwrap();
        assert_eq!(snap.alpha_of(VertexId(0)), rat(1, 3));
        assert_eq!(snap.alpha_of(VertexId(1)), rat(2, 3));
        assert_eq!(snap.alpha_of(VertexId(2)), rint(0));
        assert_eq!(snap.dual_value(), rint(1));
    }

    #[test]
    fn star_saturates_in_thirds() {
        let mut m = TreeMatcher::new();
        m.process(VertexId(0), VertexId(1), None).unwrap();
        m.process(VertexId(0), VertexId(2), None).unwrap();
        m.process(VertexId(0), VertexId(3), None).unwrap();
        assert_eq!(fractions(&m), vec![rat(1, 3); 3]);
        assert_eq!(*m.state().primal_value(), rint(1));
        // A fourth leaf finds no capacity and matches zero.
        m.process(VertexId(0), VertexId(4), None).unwrap();
        assert_eq!(*m.state().x(EdgeId(3)), rint(0));
        assert_eq!(*m.state().primal_value(), rint(1));
    }

    #[test]
    fn static_spine_instance_lands_on_two_thirds() {
        let s = gen_hard_mcm_static(3).unwrap();
        let mut m = TreeMatcher::new();
        run_stream(&mut m, &s).unwrap();
        assert_eq!(fractions(&m), vec![rat(1, 3); 6]);
        assert_eq!(*m.state().primal_value(), rint(2));
        let g = OfflineGraph::from_stream(&s);
        assert_eq!(max_cardinality_forest(&g).unwrap(), 3);
        m.state().verify_replay().unwrap();
    }

    #[test]
    fn fractions_stay_on_thirds_grid_and_duals_pay_primal() {
        for seed in 0..20u64 {
            let s = gen_random_growing_tree(60, false, seed).unwrap();
            let mut m = TreeMatcher::new();
            run_stream(&mut m, &s).unwrap();
            for i in 0..m.state().n_edges() {
                let x = m.state().x(EdgeId(i as u32));
                assert!(crate::rational::on_grid(x, 3), "off-grid {x} seed {seed}");
            }
            for snap in m.snapshots() {
                assert!(snap.uncertain.is_empty());
            }
            let final_dual = m.snapshots().last().unwrap().dual_value();
            assert_eq!(final_dual, *m.state().primal_value(), "seed {seed}");
            m.state().verify_replay().unwrap();
        }
    }

    #[test]
    fn ratio_at_least_two_thirds_on_random_trees() {
        for seed in 0..20u64 {
            let s = gen_random_growing_tree(50, false, seed).unwrap();
            let mut m = TreeMatcher::new();
            run_stream(&mut m, &s).unwrap();
            let opt = max_cardinality_forest(&OfflineGraph::from_stream(&s)).unwrap();
            let bound = rat(2, 3) * rint(opt as i64);
            assert!(
                *m.state().primal_value() >= bound,
                "seed {seed}: {} < 2/3 of {opt}",
                m.state().primal_value()
            );
        }
    }

    #[test]
    fn merging_arrivals_are_rejected() {
        let mut m = TreeMatcher::new();
        m.process(VertexId(0), VertexId(1), None).unwrap();
        let err = m.process(VertexId(2), VertexId(3), None).unwrap_err();
        assert!(matches!(err, AlgoError::ModelViolation { event: 2, .. }));
    }
}

//! Ordinal fractional matching for weighted growing trees, with a one-bit
//! integral implementation.
//!
//! Every edge is matched at either 0 or 1/2. An arriving edge at parent `u`
//! matches 1/2 outright while `x(u) <= 1/2`. Once `u` is saturated it holds
//! exactly two half edges; the new edge evicts the lighter incumbent only if
//! it is strictly heavier, otherwise it is matched at 0. All decisions are
//! weight *comparisons*, so any order-preserving transform of the weights
//! yields the same decision sequence (see [`ordinal_signature`]).
//!
//! The guarantee is certified per event by two checks:
//!
//! * heavy-edge certificate: the total half-matched weight is at least the
//!   sum over parented vertices `u` of the heaviest child edge of `u`;
//! * dual feasibility at ratio 1/2: setting `alpha(u)` to half the heaviest
//!   child weight covers every arrived edge, because each edge arrives as a
//!   child edge of its parent.
//!
//! The fractional output hides exactly one bit of randomness. [`one_bit_run`]
//! materializes either of two integral matchings `M0`, `M1` that partition
//! the half edges; picking one by a fair coin matches every edge with
//! probability `x(e)`, and the average of their weights equals the
//! fractional value exactly. Assignment to sides is deterministic: an edge
//! whose parent already holds a live half edge takes the opposite side, and
//! an edge whose parent is free alternates per component of the
//! ever-half-matched subgraph, starting with `M1`. That start matters: the
//! first half-matched edge of a component must never sit in `M0`, which is
//! what keeps both sides valid matchings at the same time.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::fracstate::FracState;
use crate::instance::{
    EdgeId, EdgeKind, InstanceStream, PrefixGraph, UnionFind, VertexId,
};
use crate::matcher::{AlgoError, DualSnapshot, OnlineMatcher, RunArtifacts};
use crate::rational::{rat, rint, Rational};

pub const ALGO_ID: &str = "mwm";

/// Worst-case ratio against the offline optimum.
pub fn guarantee() -> Rational {
    rat(1, 2)
}

/// One entry per committed action. Disposal entries carry the evicted edge
/// and are always followed by a `MatchHalf` for the arriving edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    MatchHalf,
    MatchZero,
    Dispose(EdgeId),
}

/// The two integral matchings whose uniform mixture realizes the fractional
/// solution. `component_first` records, per component of the
/// ever-half-matched subgraph, the first edge half-matched there; such an
/// edge is assigned to `m1`, never to `m0`.
#[derive(Debug, Clone)]
pub struct TwoMatchings {
    pub m0: BTreeSet<EdgeId>,
    pub m1: BTreeSet<EdgeId>,
    pub component_first: BTreeMap<VertexId, EdgeId>,
}

pub struct MwmMatcher {
    state: FracState,
    prefix: PrefixGraph,
    root: Option<VertexId>,
    /// Edges currently at 1/2.
    half: BTreeSet<EdgeId>,
    /// Heaviest child edge per parented vertex (ties keep the earlier edge).
    heavy: HashMap<VertexId, EdgeId>,
    /// Certificate sides, maintained incrementally.
    lhs: Rational,
    rhs: Rational,
    /// Matching side of each live half edge: 0 or 1.
    side: HashMap<EdgeId, u8>,
    m0: BTreeSet<EdgeId>,
    m1: BTreeSet<EdgeId>,
    /// Components of the ever-half-matched subgraph. Roots are stable
    /// because every union hangs a fresh singleton under the old root.
    ef: UnionFind,
    ef_member: HashSet<VertexId>,
    coins: HashMap<u32, u64>,
    component_first: HashMap<u32, EdgeId>,
    signature: Vec<Decision>,
    snapshots: Vec<DualSnapshot>,
    kinds: Vec<EdgeKind>,
}

impl MwmMatcher {
    pub fn new() -> Self {
        MwmMatcher {
            state: FracState::new(),
            prefix: PrefixGraph::new(),
            root: None,
            half: BTreeSet::new(),
            heavy: HashMap::new(),
            lhs: rint(0),
            rhs: rint(0),
            side: HashMap::new(),
            m0: BTreeSet::new(),
            m1: BTreeSet::new(),
            ef: UnionFind::new(),
            ef_member: HashSet::new(),
            coins: HashMap::new(),
            component_first: HashMap::new(),
            signature: Vec::new(),
            snapshots: Vec::new(),
            kinds: Vec::new(),
        }
    }

    pub fn signature(&self) -> &[Decision] {
        &self.signature
    }

    /// Certificate pair: total half-matched weight on the left, sum of
    /// heaviest-child weights over parented vertices on the right. The
    /// algorithm keeps left >= right after every event, which is what pins
    /// the primal at half the optimum or better.
    pub fn heavy_certificate(&self) -> (Rational, Rational) {
        (self.lhs.clone(), self.rhs.clone())
    }

    pub fn two_matchings(&self) -> TwoMatchings {
        let mut component_first = BTreeMap::new();
        for (root, e) in &self.component_first {
            component_first.insert(VertexId(self.ef.find(*root)), *e);
        }
        TwoMatchings {
            m0: self.m0.clone(),
            m1: self.m1.clone(),
            component_first,
        }
    }

    fn weight(&self, e: EdgeId) -> Rational {
        self.state.weight(e).clone()
    }

    /// The two live half edges at a saturated parent, lighter first; weight
    /// ties go to the earlier arrival.
    fn halves_at(&self, u: VertexId) -> (EdgeId, EdgeId) {
        let mut live: Vec<EdgeId> = self
            .prefix
            .neighbors(u)
            .iter()
            .map(|&(_, e)| e)
            .filter(|e| self.half.contains(e))
            .collect();
        assert_eq!(live.len(), 2, "saturated vertex must hold two half edges");
        live.sort_by_key(|e| (self.weight(*e), e.0));
        (live[0], live[1])
    }

    fn update_heavy(&mut self, parent: VertexId, e: EdgeId) {
        let better = match self.heavy.get(&parent) {
            None => true,
            Some(&old) => self.weight(e) > self.weight(old),
        };
        if better {
            if let Some(&old) = self.heavy.get(&parent) {
                self.rhs -= self.weight(old);
            }
            self.rhs += self.weight(e);
            self.heavy.insert(parent, e);
        }
    }

    /// Puts a freshly half-matched edge into one of the two integral
    /// matchings. The child endpoint is always fresh, so validity is decided
    /// at the parent: a parent holding a live half edge forces the opposite
    /// side, and a free parent takes the alternating coin side of its
    /// component, starting at `m1`.
    fn assign_side(&mut self, e: EdgeId, parent: VertexId, child: VertexId) {
        let live_at_parent: Vec<EdgeId> = self
            .prefix
            .neighbors(parent)
            .iter()
            .map(|&(_, p)| p)
            .filter(|p| self.half.contains(p) && *p != e)
            .collect();
        let s = if let Some(&f) = live_at_parent.first() {
            assert_eq!(live_at_parent.len(), 1, "parent held more than one half");
            1 - self.side[&f]
        } else if self.ef_member.contains(&parent) {
            let k = self.coins.entry(self.ef.find(parent.0)).or_insert(0);
            let s = 1 - (*k % 2) as u8;
            *k += 1;
            s
        } else {
            self.ef.ensure(parent.0);
            self.coins.insert(self.ef.find(parent.0), 1);
            self.component_first.insert(self.ef.find(parent.0), e);
            1
        };
        self.ef.ensure(parent.0);
        self.ef.ensure(child.0);
        self.ef.union(parent.0, child.0);
        self.ef_member.insert(parent);
        self.ef_member.insert(child);
        self.side.insert(e, s);
        if s == 0 {
            self.m0.insert(e);
        } else {
            self.m1.insert(e);
        }
    }

    fn drop_side(&mut self, e: EdgeId) {
        if let Some(s) = self.side.remove(&e) {
            if s == 0 {
                self.m0.remove(&e);
            } else {
                self.m1.remove(&e);
            }
        }
    }

    fn match_half(
        &mut self,
        e: EdgeId,
        parent: Option<VertexId>,
        child: VertexId,
    ) -> Result<(), AlgoError> {
        match parent {
            None => self.state.match_isolated(rat(1, 2))?,
            Some(p) => self.state.match_growing(p, rat(1, 2))?,
        }
        self.half.insert(e);
        self.lhs += self.weight(e);
        self.signature.push(Decision::MatchHalf);
        let anchor = parent.unwrap_or_else(|| {
            let (a, _) = self.state.endpoints(e);
            a
        });
        self.assign_side(e, anchor, child);
        Ok(())
    }

    fn snapshot(&self) -> DualSnapshot {
        let mut alpha = BTreeMap::new();
        for (u, e) in &self.heavy {
            alpha.insert(*u, self.weight(*e) / rint(2));
        }
        DualSnapshot {
            alpha,
            uncertain: BTreeMap::new(),
        }
    }

    fn check_invariants(&self) -> Result<(), AlgoError> {
        let fail = |msg: String| Err(AlgoError::InvariantBroken(msg));
        let mut lhs = rint(0);
        for i in 0..self.state.n_edges() {
            let e = EdgeId(i as u32);
            let x = self.state.x(e).clone();
            if x != rint(0) && x != rat(1, 2) {
                return fail(format!("fraction off the half grid on {e}"));
            }
            if (x == rat(1, 2)) != self.half.contains(&e) {
                return fail(format!("half set out of sync on {e}"));
            }
            let sides = rint(self.m0.contains(&e) as i64 + self.m1.contains(&e) as i64);
            if sides != rint(2) * &x {
                return fail(format!("integral sides disagree with fraction on {e}"));
            }
            if x == rat(1, 2) {
                lhs += self.weight(e);
            }
        }
        let mut rhs = rint(0);
        for e in self.heavy.values() {
            rhs += self.weight(*e);
        }
        if lhs != self.lhs || rhs != self.rhs {
            return fail("certificate accumulators drifted".into());
        }
        if lhs < rhs {
            return fail(format!("heavy-edge certificate violated: {lhs} < {rhs}"));
        }
        for (root, e) in &self.component_first {
            if self.m0.contains(e) {
                return fail(format!(
                    "first half edge of component v{root} landed in m0"
                ));
            }
        }
        Ok(())
    }
}

impl Default for MwmMatcher {
    fn default() -> Self {
        MwmMatcher::new()
    }
}

impl OnlineMatcher for MwmMatcher {
    fn algo_id(&self) -> &'static str {
        ALGO_ID
    }

    fn wants_weights(&self) -> bool {
        true
    }

    fn process(
        &mut self,
        u: VertexId,
        v: VertexId,
        weight: Option<Rational>,
    ) -> Result<EdgeId, AlgoError> {
        let kind = self.prefix.classify(u, v)?;
        let event = self.state.n_edges();
        match kind {
            EdgeKind::Isolated if self.root.is_some() => {
                return Err(AlgoError::ModelViolation {
                    event,
                    reason: "second component in a growing tree".into(),
                });
            }
            EdgeKind::TrivialMerge { .. } | EdgeKind::NonTrivialMerge => {
                return Err(AlgoError::ModelViolation {
                    event,
                    reason: "weighted matcher only accepts growing trees".into(),
                });
            }
            _ => {}
        }
        let e = self.state.begin_arrival(u, v, weight)?;
        match kind {
            EdgeKind::Isolated => {
                self.root = Some(u);
                self.match_half(e, None, v)?;
                self.update_heavy(u, e);
            }
            EdgeKind::Growing { parent, child } => {
                if self.state.load(parent) <= rat(1, 2) {
                    self.match_half(e, Some(parent), child)?;
                } else {
                    let (light, _) = self.halves_at(parent);
                    if self.weight(e) > self.weight(light) {
                        self.state.dispose_to(light, rint(0))?;
                        self.half.remove(&light);
                        self.lhs -= self.weight(light);
                        self.drop_side(light);
                        self.signature.push(Decision::Dispose(light));
                        self.match_half(e, Some(parent), child)?;
                    } else {
                        self.state.match_growing(parent, rint(0))?;
                        self.signature.push(Decision::MatchZero);
                    }
                }
                self.update_heavy(parent, e);
            }
            _ => unreachable!("merges rejected above"),
        }
        self.prefix.insert(u, v, e);
        self.kinds.push(kind);
        self.snapshots.push(self.snapshot());
        self.check_invariants()?;
        Ok(e)
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

/// Runs the matcher and returns the decision list. Two streams with the
/// same arrival order and order-isomorphic weights produce equal lists.
pub fn ordinal_signature(stream: &InstanceStream) -> Result<Vec<Decision>, AlgoError> {
    let mut m = MwmMatcher::new();
    for ev in stream.events() {
        m.process(ev.u, ev.v, Some(ev.weight_or_one()))?;
    }
    Ok(m.signature)
}

/// Runs the matcher and extracts one of the two integral matchings together
/// with its total weight. Drawing `bit` uniformly matches every edge with
/// probability exactly equal to its fraction.
pub fn one_bit_run(
    stream: &InstanceStream,
    bit: u8,
) -> Result<(BTreeSet<EdgeId>, Rational), AlgoError> {
    assert!(bit < 2, "the randomness is a single bit");
    let mut m = MwmMatcher::new();
    for ev in stream.events() {
        m.process(ev.u, ev.v, Some(ev.weight_or_one()))?;
    }
    let side = if bit == 0 { m.m0 } else { m.m1 };
    let total = side.iter().map(|e| m.state.weight(*e).clone()).sum();
    Ok((side, total))
}

/// Checks that the edge set is vertex-disjoint in the stream's final graph.
pub fn is_matching(stream: &InstanceStream, edges: &BTreeSet<EdgeId>) -> bool {
    let mut used: HashSet<VertexId> = HashSet::new();
    for (i, ev) in stream.events().iter().enumerate() {
        if edges.contains(&EdgeId(i as u32)) && (!used.insert(ev.u) || !used.insert(ev.v)) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_hard_mwm, gen_random_growing_tree, ArrivalModel, HardMwmVariant};
    use crate::matcher::run_stream;
    use crate::oracle::{max_weight_forest, OfflineGraph};
    use crate::pd_verify::{audit_run, profile_for};
    use crate::rounding;

    fn star_stream(weights: &[i64]) -> InstanceStream {
        let mut s = InstanceStream::new(ArrivalModel::GrowingTree, true);
        for (i, w) in weights.iter().enumerate() {
            s.add_edge("hub", &format!("tip{i}"), Some(rint(*w)))
                .unwrap();
        }
        s
    }

    fn run(stream: &InstanceStream) -> MwmMatcher {
        let mut m = MwmMatcher::new();
        run_stream(&mut m, stream).unwrap();
        m
    }

    #[test]
    fn star_evicts_lighter_and_refuses_ties() {
        let s = star_stream(&[1, 2, 3, 2]);
        let m = run(&s);
        let xs: Vec<Rational> = (0..4).map(|i| m.state.x(EdgeId(i)).clone()).collect();
        assert_eq!(xs, vec![rint(0), rat(1, 2), rat(1, 2), rint(0)]);
        assert_eq!(*m.state.primal_value(), rat(5, 2));
        assert_eq!(
            m.signature(),
            &[
                Decision::MatchHalf,
                Decision::MatchHalf,
                Decision::Dispose(EdgeId(0)),
                Decision::MatchHalf,
                Decision::MatchZero,
            ]
        );
        assert_eq!(m.heavy_certificate(), (rint(5), rint(3)));
        let snap = m.snapshots.last().unwrap();
        assert_eq!(snap.alpha_of(VertexId(0)), rat(3, 2));
        assert_eq!(snap.dual_value(), rat(3, 2));
    }

    #[test]
    fn path_duals_cover_both_edges() {
        let mut s = InstanceStream::new(ArrivalModel::GrowingTree, true);
        s.add_edge("a", "b", Some(rint(1))).unwrap();
        s.add_edge("b", "c", Some(rint(10))).unwrap();
        let m = run(&s);
        assert_eq!(m.heavy_certificate(), (rint(11), rint(11)));
        let snap = m.snapshots.last().unwrap();
        assert_eq!(snap.alpha_of(VertexId(0)), rat(1, 2));
        assert_eq!(snap.alpha_of(VertexId(1)), rint(5));
        assert_eq!(snap.dual_value(), rat(11, 2));
        assert_eq!(*m.state.primal_value(), rat(11, 2));
    }

    #[test]
    fn single_edge_certificate_and_sides() {
        let mut s = InstanceStream::new(ArrivalModel::GrowingTree, true);
        s.add_edge("a", "b", Some(rint(5))).unwrap();
        let m = run(&s);
        assert_eq!(m.heavy_certificate(), (rint(5), rint(5)));
        assert_eq!(m.snapshots.last().unwrap().alpha_of(VertexId(0)), rat(5, 2));
        assert!(m.m0.is_empty());
        assert_eq!(m.m1.iter().copied().collect::<Vec<_>>(), vec![EdgeId(0)]);
    }

    #[test]
    fn merges_and_second_components_are_rejected() {
        let mut m = MwmMatcher::new();
        m.process(VertexId(0), VertexId(1), Some(rint(1))).unwrap();
        m.process(VertexId(1), VertexId(2), Some(rint(1))).unwrap();
        let err = m.process(VertexId(0), VertexId(2), Some(rint(1))).unwrap_err();
        assert!(matches!(err, AlgoError::ModelViolation { .. }));
        let mut m2 = MwmMatcher::new();
        m2.process(VertexId(0), VertexId(1), Some(rint(1))).unwrap();
        let err2 = m2.process(VertexId(2), VertexId(3), Some(rint(1))).unwrap_err();
        assert!(matches!(err2, AlgoError::ModelViolation { .. }));
    }

    #[test]
    fn audits_and_ratio_on_random_trees() {
        let profile = profile_for(ALGO_ID).unwrap();
        for seed in 0..25u64 {
            let s = gen_random_growing_tree(40, true, seed).unwrap();
            let arts = run(&s).into_artifacts();
            let report = audit_run(&arts, &profile).unwrap();
            assert!(report.all_pass(), "audit failed on seed {seed}");
            let opt = max_weight_forest(&OfflineGraph::from_stream(&s)).unwrap();
            let ratio = arts.state.primal_value() / &opt;
            assert!(ratio >= rat(1, 2), "ratio {ratio} below half on seed {seed}");
        }
    }

    #[test]
    fn one_bit_sides_average_to_the_fractional_value() {
        for seed in 0..25u64 {
            let s = gen_random_growing_tree(30, true, seed).unwrap();
            let m = run(&s);
            let (m0, w0) = one_bit_run(&s, 0).unwrap();
            let (m1, w1) = one_bit_run(&s, 1).unwrap();
            assert!(is_matching(&s, &m0), "m0 invalid on seed {seed}");
            assert!(is_matching(&s, &m1), "m1 invalid on seed {seed}");
            assert_eq!(
                (w0 + w1) / rint(2),
                *m.state.primal_value(),
                "average weight drifted on seed {seed}"
            );
            for i in 0..m.state.n_edges() {
                let e = EdgeId(i as u32);
                let avg = rint(m0.contains(&e) as i64 + m1.contains(&e) as i64) / rint(2);
                assert_eq!(avg, *m.state.x(e), "indicator average off on seed {seed}");
            }
            let tm = m.two_matchings();
            for (_, first) in tm.component_first {
                assert!(!tm.m0.contains(&first));
            }
        }
    }

    #[test]
    fn signature_ignores_weight_magnitudes() {
        let base = gen_random_growing_tree(40, true, 7).unwrap();
        let mut scaled = InstanceStream::new(ArrivalModel::GrowingTree, true);
        let mut squared = InstanceStream::new(ArrivalModel::GrowingTree, true);
        for ev in base.events() {
            let w = ev.weight_or_one();
            let un = base.vertex_name(ev.u).to_owned();
            let vn = base.vertex_name(ev.v).to_owned();
            scaled.add_edge(&un, &vn, Some(&w * rint(7))).unwrap();
            squared.add_edge(&un, &vn, Some(&w * &w)).unwrap();
        }
        let sig = ordinal_signature(&base).unwrap();
        assert_eq!(sig, ordinal_signature(&scaled).unwrap());
        assert_eq!(sig, ordinal_signature(&squared).unwrap());
        assert!(sig.contains(&Decision::MatchHalf));
    }

    #[test]
    fn additive_and_geometric_ladders_share_a_signature() {
        let i1 = gen_hard_mwm(5, HardMwmVariant::Additive, &rat(1, 1000)).unwrap();
        let i2 = gen_hard_mwm(5, HardMwmVariant::Geometric, &rint(30)).unwrap();
        let s1 = ordinal_signature(&i1).unwrap();
        let s2 = ordinal_signature(&i2).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.iter().any(|d| matches!(d, Decision::Dispose(_))));
    }

    #[test]
    fn traces_round_without_error() {
        for seed in [3u64, 11, 19] {
            let s = gen_random_growing_tree(25, true, seed).unwrap();
            let m = run(&s);
            let plan = rounding::compile(&m.state).unwrap();
            rounding::merge_triples_dominated(&plan).unwrap();
            let dist = rounding::exact_distribution_bounded(&plan, 80).unwrap();
            for (i, x) in dist.final_marginals.iter().enumerate() {
                assert_eq!(*x, *m.state.x(EdgeId(i as u32)));
            }
        }
    }
}

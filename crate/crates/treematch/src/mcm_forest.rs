//! Fractional maximum cardinality matching on forests, with a guaranteed
//! ratio of 5/8. All fractions live on the eighths grid.
//!
//! Structure of the algorithm:
//!
//! * A tree's first two edges form the base case: both settle at 4/8 and
//!   their common vertex becomes the tree's root, keeping all but 2/8 of
//!   its load as its dual. That withheld 2/8 is the component's surplus,
//!   maintained as P >= D + 2/8 forever and spent covering merge edges.
//! * Growing edges into type A parents (or leaves) lower every incident
//!   edge holding 4/8 or more down to 3/8, then match the parent's
//!   remaining capacity. Growing edges into type B parents match just
//!   enough to bring the parent's dual to 5/8.
//! * An edge merging two trees matches nothing if the endpoint duals
//!   already cover 3/8 (lifting an endpoint still below 2/8, or a type B
//!   endpoint at 2/8, so the new edge is covered); otherwise the
//!   endpoints are a leaf paired with either a leaf or a type B vertex
//!   at 2/8, and the edge matches 3/8 or 1/8 respectively. A two-leaves
//!   merge leaves 1/8 of dual parked on the edge itself ("uncertain"),
//!   flagging both endpoints until a later event either spends that 1/8
//!   against a 1/8 primal decrease or hands it to an endpoint.
//! * An edge merging away a single-edge tree is processed by replaying
//!   the pair in swapped order as two growing edges; the trace records
//!   the replay atomically so the randomized rounding can reproduce it.
//!
//! Every non-leaf vertex is classified type A (touches only positively
//! matched growing edges) or type B (touches a positively matched merge
//! edge) exactly once; the invariants each class maintains are checked
//! after every event in `check_invariants`.

use std::collections::{HashMap, HashSet};

use crate::fracstate::{FracState, TrivialReplaySpec};
use crate::instance::{ArrivalModel, EdgeId, EdgeKind, InstanceStream, PrefixGraph, VertexId};
use crate::matcher::{AlgoError, DualSnapshot, OnlineMatcher, RunArtifacts};
use crate::rational::{on_grid, rat, rint, Rational};

pub const ALGO_ID: &str = "mcm-forest";

/// Competitive ratio certified by this algorithm's duals.
pub fn guarantee() -> Rational {
    rat(5, 8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VClass {
    TypeA,
    TypeB,
}

pub struct ForestMatcher {
    state: FracState,
    prefix: PrefixGraph,
    /// Write-once class per non-leaf vertex; absent means leaf (or an
    /// isolated-edge endpoint), which always has zero dual.
    class: HashMap<VertexId, VClass>,
    alpha: HashMap<VertexId, Rational>,
    /// Dual mass parked on edges; every entry is exactly 1/8.
    uncertain: HashMap<EdgeId, Rational>,
    /// Type B vertices currently paired across an uncertain edge.
    flagged: HashSet<VertexId>,
    /// Vertex whose dual holds an edge's matched mass; disposals debit
    /// the owner.
    owner: HashMap<EdgeId, VertexId>,
    roots: HashSet<VertexId>,
    /// Last seen dual per type B vertex, to enforce monotonicity.
    typeb_floor: HashMap<VertexId, Rational>,
    snapshots: Vec<DualSnapshot>,
    kinds: Vec<EdgeKind>,
}

impl Default for ForestMatcher {
    fn default() -> Self {
        ForestMatcher::new()
    }
}

impl ForestMatcher {
    pub fn new() -> Self {
        ForestMatcher {
            state: FracState::new(),
            prefix: PrefixGraph::new(),
            class: HashMap::new(),
            alpha: HashMap::new(),
            uncertain: HashMap::new(),
            flagged: HashSet::new(),
            owner: HashMap::new(),
            roots: HashSet::new(),
            typeb_floor: HashMap::new(),
            snapshots: Vec::new(),
            kinds: Vec::new(),
        }
    }

    pub fn alpha_of(&self, v: VertexId) -> Rational {
        self.alpha.get(&v).cloned().unwrap_or_else(|| rint(0))
    }

    fn add_alpha(&mut self, v: VertexId, delta: &Rational) {
        if *delta == rint(0) {
            return;
        }
        let entry = self.alpha.entry(v).or_insert_with(|| rint(0));
        *entry += delta;
    }

    fn set_alpha(&mut self, v: VertexId, value: Rational) {
        self.alpha.insert(v, value);
    }

    fn is_leaf(&self, v: VertexId) -> bool {
        !self.class.contains_key(&v)
    }

    fn set_class(&mut self, v: VertexId, c: VClass) -> Result<(), AlgoError> {
        match self.class.get(&v) {
            None => {
                self.class.insert(v, c);
                Ok(())
            }
            Some(old) if *old == c => Ok(()),
            Some(old) => Err(AlgoError::InvariantBroken(format!(
                "{v} reclassified {old:?} -> {c:?}; classes are write-once"
            ))),
        }
    }

    /// Lowers an edge holding 4/8 or more down to exactly 3/8, debiting
    /// the owning vertex's dual.
    fn stabilize(&mut self, e: EdgeId) -> Result<(), AlgoError> {
        let old = self.state.x(e).clone();
        if old < rat(4, 8) {
            return Err(AlgoError::InvariantBroken(format!(
                "{e} at {old} does not need lowering"
            )));
        }
        let owner = *self.owner.get(&e).ok_or_else(|| {
            AlgoError::InvariantBroken(format!("{e} has no dual owner to debit"))
        })?;
        self.state.dispose_to(e, rat(3, 8))?;
        let delta = &old - rat(3, 8);
        let entry = self.alpha.entry(owner).or_insert_with(|| rint(0));
        *entry -= &delta;
        if *entry < rint(0) {
            return Err(AlgoError::InvariantBroken(format!(
                "debiting {owner} for {e} made its dual negative"
            )));
        }
        Ok(())
    }

    /// Clears an unsafe pairing at `u`: lowers the uncertain edge by 1/8,
    /// deletes the parked dual, and unflags both endpoints.
    fn unsafe_fix(&mut self, u: VertexId) -> Result<(), AlgoError> {
        let carriers: Vec<EdgeId> = self
            .prefix
            .neighbors(u)
            .iter()
            .map(|&(_, e)| e)
            .filter(|e| self.uncertain.contains_key(e))
            .collect();
        if carriers.len() != 1 {
            return Err(AlgoError::InvariantBroken(format!(
                "{u} is flagged but touches {} uncertain edges",
                carriers.len()
            )));
        }
        let e = carriers[0];
        let old = self.state.x(e).clone();
        self.state.dispose_to(e, &old - rat(1, 8))?;
        self.uncertain.remove(&e);
        let (a, b) = self.state.endpoints(e);
        if !self.flagged.remove(&a) || !self.flagged.remove(&b) {
            return Err(AlgoError::InvariantBroken(format!(
                "uncertain edge {e} endpoints were not both flagged"
            )));
        }
        Ok(())
    }

    /// Base case: the parent's component is a single fully matched edge.
    /// Both edges settle at 4/8; the parent becomes the tree's root and
    /// keeps its load minus the component's 2/8 surplus as its dual.
    fn grow_base_case(
        &mut self,
        e: EdgeId,
        parent: VertexId,
    ) -> Result<(), AlgoError> {
        let nbrs = self.prefix.neighbors(parent);
        if nbrs.len() != 1 {
            return Err(AlgoError::InvariantBroken(format!(
                "{parent} heads a single-edge component but has degree {}",
                nbrs.len()
            )));
        }
        let first = nbrs[0].1;
        if *self.state.x(first) != rint(1) {
            return Err(AlgoError::InvariantBroken(format!(
                "single-component edge {first} is not fully matched"
            )));
        }
        self.state.dispose_to(first, rat(4, 8))?;
        self.state.match_growing(parent, rat(4, 8))?;
        self.set_class(parent, VClass::TypeA)?;
        self.roots.insert(parent);
        self.owner.insert(first, parent);
        self.owner.insert(e, parent);
        self.set_alpha(parent, rat(6, 8));
        Ok(())
    }

    /// Growing edge whose parent is type A or a leaf, in a component with
    /// at least two edges: stabilize every incident edge at 4/8 or more,
    /// then match the parent's remaining capacity.
    fn grow_type_a(&mut self, e: EdgeId, parent: VertexId) -> Result<(), AlgoError> {
        let incident: Vec<(VertexId, EdgeId)> = self.prefix.neighbors(parent).to_vec();
        for (z, pe) in incident {
            if *self.state.x(pe) >= rat(4, 8) {
                if self.class.get(&z) == Some(&VClass::TypeB) {
                    return Err(AlgoError::InvariantBroken(format!(
                        "{pe} is unstable yet touches type B vertex {z}"
                    )));
                }
                self.stabilize(pe)?;
            }
        }
        let gamma = rint(1) - self.state.load(parent);
        self.state.match_growing(parent, gamma.clone())?;
        self.owner.insert(e, parent);
        self.add_alpha(parent, &gamma);
        self.set_class(parent, VClass::TypeA)?;
        Ok(())
    }

    /// Growing edge whose parent is type B: clear any unsafe pairing,
    /// then match exactly enough to bring the parent's dual to 5/8.
    fn grow_type_b(&mut self, e: EdgeId, parent: VertexId) -> Result<(), AlgoError> {
        if self.flagged.contains(&parent) {
            self.unsafe_fix(parent)?;
        }
        let gamma = std::cmp::max(rat(5, 8) - self.alpha_of(parent), rint(0));
        self.state.match_growing(parent, gamma.clone())?;
        self.owner.insert(e, parent);
        self.add_alpha(parent, &gamma);
        Ok(())
    }

    /// Covered merge: the endpoint duals already sum to 3/8 or more, so
    /// nothing is matched. A leaf endpoint is lifted to a 2/8 dual (its
    /// own edge gets stabilized first so type B rules hold for it), and a
    /// type B endpoint still at 2/8 rises to 3/8 (clearing its unsafe
    /// pairing first if it has one).
    fn merge_covered(&mut self, u: VertexId, v: VertexId) -> Result<(), AlgoError> {
        for w in [u, v] {
            if self.is_leaf(w) {
                let nbrs = self.prefix.neighbors(w).to_vec();
                if nbrs.len() != 1 {
                    return Err(AlgoError::InvariantBroken(format!(
                        "leaf {w} in a merge has degree {}",
                        nbrs.len()
                    )));
                }
                if *self.state.x(nbrs[0].1) >= rat(4, 8) {
                    self.stabilize(nbrs[0].1)?;
                }
            } else if self.class.get(&w) == Some(&VClass::TypeB)
                && self.alpha_of(w) == rat(2, 8)
                && self.flagged.contains(&w)
            {
                self.unsafe_fix(w)?;
            }
        }
        self.state.match_merge(rint(0))?;
        for w in [u, v] {
            if self.is_leaf(w) {
                if self.alpha_of(w) != rint(0) {
                    return Err(AlgoError::InvariantBroken(format!(
                        "leaf {w} entered a merge with a nonzero dual"
                    )));
                }
                self.set_alpha(w, rat(2, 8));
                self.set_class(w, VClass::TypeB)?;
            } else if self.class.get(&w) == Some(&VClass::TypeB) && self.alpha_of(w) == rat(2, 8)
            {
                self.set_alpha(w, rat(3, 8));
            }
        }
        Ok(())
    }

    /// Uncovered merge; the endpoints must be a leaf paired with either a
    /// leaf or a type B vertex at 2/8 (anything else would already be
    /// covered). Leaf edges get stabilized so their loads are at most
    /// 3/8 before the new edge matches.
    fn merge_uncovered(&mut self, e: EdgeId, u: VertexId, v: VertexId) -> Result<(), AlgoError> {
        let leaves: Vec<VertexId> = [u, v].into_iter().filter(|w| self.is_leaf(*w)).collect();
        for &w in &leaves {
            let nbrs = self.prefix.neighbors(w).to_vec();
            if nbrs.len() != 1 {
                return Err(AlgoError::InvariantBroken(format!(
                    "leaf {w} in a merge has degree {}",
                    nbrs.len()
                )));
            }
            if *self.state.x(nbrs[0].1) >= rat(4, 8) {
                self.stabilize(nbrs[0].1)?;
            }
        }
        match leaves.len() {
            2 => {
                self.state.match_merge(rat(3, 8))?;
                for w in [u, v] {
                    self.set_alpha(w, rat(2, 8));
                    self.set_class(w, VClass::TypeB)?;
                    self.flagged.insert(w);
                }
                self.uncertain.insert(e, rat(1, 8));
                Ok(())
            }
            1 => {
                let leaf = leaves[0];
                let b = if leaf == u { v } else { u };
                if self.class.get(&b) != Some(&VClass::TypeB) || self.alpha_of(b) != rat(2, 8) {
                    return Err(AlgoError::InvariantBroken(format!(
                        "uncovered merge endpoint {b} should be type B at 2/8"
                    )));
                }
                if self.flagged.contains(&b) {
                    self.unsafe_fix(b)?;
                }
                self.state.match_merge(rat(1, 8))?;
                self.set_alpha(leaf, rat(2, 8));
                self.set_class(leaf, VClass::TypeB)?;
                self.set_alpha(b, rat(3, 8));
                Ok(())
            }
            _ => Err(AlgoError::InvariantBroken(format!(
                "uncovered merge {e} between two classified vertices"
            ))),
        }
    }

    /// Merge that absorbs a single-edge tree, processed by order-swapped
    /// replay: the arriving edge grows into the other component at
    /// `grow_parent` (real disposals there happen now), then the isolated
    /// edge re-grows off the shared endpoint, possibly lowering the
    /// arriving edge back to 3/8. Only the net effect reaches the state,
    /// as one atomic match step carrying the replay record.
    fn merge_trivial(
        &mut self,
        e: EdgeId,
        u: VertexId,
        v: VertexId,
        eprime: EdgeId,
    ) -> Result<(), AlgoError> {
        let (p1, p2) = self.state.endpoints(eprime);
        let shared = if u == p1 || u == p2 {
            u
        } else if v == p1 || v == p2 {
            v
        } else {
            return Err(AlgoError::InvariantBroken(format!(
                "merged edge {eprime} shares no endpoint with {e}"
            )));
        };
        let grow_parent = if shared == u { v } else { u };
        if *self.state.x(eprime) != rint(1) {
            return Err(AlgoError::InvariantBroken(format!(
                "single-component edge {eprime} is not fully matched"
            )));
        }
        if self.alpha_of(shared) != rint(0) {
            return Err(AlgoError::InvariantBroken(format!(
                "isolated-edge endpoint {shared} carries a dual"
            )));
        }

        // Replayed growth of the arriving edge at grow_parent.
        let gamma = if self.prefix.component_edge_count(grow_parent) == 1 {
            let nbrs = self.prefix.neighbors(grow_parent).to_vec();
            let first = nbrs[0].1;
            if *self.state.x(first) != rint(1) {
                return Err(AlgoError::InvariantBroken(format!(
                    "single-component edge {first} is not fully matched"
                )));
            }
            self.state.dispose_to(first, rat(4, 8))?;
            self.set_class(grow_parent, VClass::TypeA)?;
            self.roots.insert(grow_parent);
            self.owner.insert(first, grow_parent);
            self.owner.insert(e, grow_parent);
            self.set_alpha(grow_parent, rat(6, 8));
            rat(4, 8)
        } else if self.class.get(&grow_parent) == Some(&VClass::TypeB) {
            if self.flagged.contains(&grow_parent) {
                self.unsafe_fix(grow_parent)?;
            }
            let g = std::cmp::max(rat(5, 8) - self.alpha_of(grow_parent), rint(0));
            self.owner.insert(e, grow_parent);
            self.add_alpha(grow_parent, &g);
            g
        } else {
            let incident: Vec<(VertexId, EdgeId)> = self.prefix.neighbors(grow_parent).to_vec();
            for (z, pe) in incident {
                if *self.state.x(pe) >= rat(4, 8) {
                    if self.class.get(&z) == Some(&VClass::TypeB) {
                        return Err(AlgoError::InvariantBroken(format!(
                            "{pe} is unstable yet touches type B vertex {z}"
                        )));
                    }
                    self.stabilize(pe)?;
                }
            }
            let g = rint(1) - self.state.load(grow_parent);
            self.owner.insert(e, grow_parent);
            self.add_alpha(grow_parent, &g);
            self.set_class(grow_parent, VClass::TypeA)?;
            g
        };

        // Replayed growth of the isolated edge at the shared endpoint:
        // its only incident edge is the arriving one, which gets lowered
        // to 3/8 when it took 4/8 or more.
        let hyp_dispose = if gamma >= rat(4, 8) {
            let delta = &gamma - rat(3, 8);
            let entry = self
                .alpha
                .entry(grow_parent)
                .or_insert_with(|| rint(0));
            *entry -= &delta;
            Some((delta, gamma.clone()))
        } else {
            None
        };
        let final_e = match &hyp_dispose {
            Some((d, _)) => &gamma - d,
            None => gamma.clone(),
        };
        let eprime_gamma = rint(1) - &final_e;
        self.owner.insert(eprime, shared);
        self.add_alpha(shared, &eprime_gamma);
        self.set_class(shared, VClass::TypeA)?;
        self.state.match_trivial(TrivialReplaySpec {
            grow_parent,
            grow_gamma: gamma,
            hyp_dispose,
            eprime,
            eprime_gamma,
        })?;
        Ok(())
    }

    /// Full consistency sweep, run after every event. Anything caught
    /// here is a bug in the implementation, never an input error.
    fn check_invariants(&mut self) -> Result<(), AlgoError> {
        let fail = |msg: String| Err(AlgoError::InvariantBroken(msg));
        // Fractions on the eighths grid; single-edge components fully
        // matched; per-component primal and dual tallies.
        let mut comp_primal: HashMap<u32, Rational> = HashMap::new();
        let mut comp_dual: HashMap<u32, Rational> = HashMap::new();
        for i in 0..self.state.n_edges() {
            let e = EdgeId(i as u32);
            let x = self.state.x(e);
            if !on_grid(x, 8) || *x < rint(0) || *x > rint(1) {
                return fail(format!("{e} holds off-grid fraction {x}"));
            }
            let root = self.prefix.component_root(self.state.endpoints(e).0);
            *comp_primal.entry(root).or_insert_with(|| rint(0)) += x;
            if let Some(uval) = self.uncertain.get(&e) {
                if *uval != rat(1, 8) {
                    return fail(format!("uncertain mass on {e} is {uval}, not 1/8"));
                }
                let (a, b) = self.state.endpoints(e);
                if !self.flagged.contains(&a) || !self.flagged.contains(&b) {
                    return fail(format!("uncertain edge {e} endpoints are not both flagged"));
                }
                *comp_dual.entry(root).or_insert_with(|| rint(0)) += uval;
            }
        }
        for (v, a) in &self.alpha {
            if *a < rint(0) {
                return fail(format!("{v} carries negative dual {a}"));
            }
            if *a > rint(0) && self.is_leaf(*v) {
                return fail(format!("unclassified vertex {v} carries dual {a}"));
            }
            let root = self.prefix.component_root(*v);
            *comp_dual.entry(root).or_insert_with(|| rint(0)) += a;
        }
        let surplus = rat(2, 8);
        for (root, d) in &comp_dual {
            let p = comp_primal.get(root).cloned().unwrap_or_else(|| rint(0));
            if p < d + &surplus {
                return fail(format!(
                    "component {root}: P = {p} < D + 2/8 with D = {d}"
                ));
            }
        }
        for i in 0..self.state.n_edges() {
            let e = EdgeId(i as u32);
            let (a, _) = self.state.endpoints(e);
            let root = self.prefix.component_root(a);
            if self.prefix.component_edge_count(a) == 1 && *self.state.x(e) != rint(1) {
                return fail(format!("lone edge {e} in component {root} is not at 1"));
            }
        }
        // Per-class conditions.
        for (v, c) in &self.class {
            let a = self.alpha_of(*v);
            match c {
                VClass::TypeA => {
                    if a < rat(3, 8) {
                        return fail(format!("type A vertex {v} has dual {a} below 3/8"));
                    }
                    let near_leaf = self
                        .prefix
                        .neighbors(*v)
                        .iter()
                        .any(|(z, _)| self.prefix.degree(*z) == 1);
                    if near_leaf && a < rat(5, 8) {
                        return fail(format!(
                            "type A vertex {v} is adjacent to a leaf with dual {a} below 5/8"
                        ));
                    }
                    let mut owned = rint(0);
                    for (oe, ov) in &self.owner {
                        if ov == v {
                            owned += self.state.x(*oe);
                        }
                    }
                    if self.roots.contains(v) {
                        owned -= rat(2, 8);
                    }
                    if owned != a {
                        return fail(format!(
                            "type A vertex {v} dual {a} disagrees with owned mass {owned}"
                        ));
                    }
                }
                VClass::TypeB => {
                    if a < rat(2, 8) {
                        return fail(format!("type B vertex {v} has dual {a} below 2/8"));
                    }
                    if let Some(floor) = self.typeb_floor.get(v) {
                        if a < *floor {
                            return fail(format!("type B dual at {v} decreased: {floor} -> {a}"));
                        }
                    }
                    for (_, ie) in self.prefix.neighbors(*v) {
                        if *self.state.x(*ie) > rat(3, 8) {
                            return fail(format!(
                                "type B vertex {v} touches {ie} above 3/8"
                            ));
                        }
                    }
                    let slack = &a + rint(1) - self.state.load(*v);
                    if self.flagged.contains(v) {
                        if a != rat(2, 8) {
                            return fail(format!("flagged vertex {v} has dual {a}, not 2/8"));
                        }
                        let carriers = self
                            .prefix
                            .neighbors(*v)
                            .iter()
                            .filter(|(_, ie)| self.uncertain.contains_key(ie))
                            .count();
                        if carriers != 1 {
                            return fail(format!(
                                "flagged vertex {v} touches {carriers} uncertain edges"
                            ));
                        }
                        if slack < rat(4, 8) {
                            return fail(format!(
                                "flagged vertex {v} has dual-plus-capacity {slack} below 4/8"
                            ));
                        }
                    } else if slack < rat(5, 8) {
                        return fail(format!(
                            "type B vertex {v} has dual-plus-capacity {slack} below 5/8"
                        ));
                    }
                }
            }
        }
        for v in &self.flagged {
            if self.class.get(v) != Some(&VClass::TypeB) {
                return fail(format!("flagged vertex {v} is not type B"));
            }
        }
        for (v, _) in self.class.iter() {
            if self.prefix.degree(*v) < 2 {
                return fail(format!("classified vertex {v} has degree below 2"));
            }
        }
        // Refresh monotonicity floors.
        for (v, c) in &self.class {
            if *c == VClass::TypeB {
                self.typeb_floor.insert(*v, self.alpha_of(*v));
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> DualSnapshot {
        let mut snap = DualSnapshot::default();
        for (v, a) in &self.alpha {
            if *a != rint(0) {
                snap.alpha.insert(*v, a.clone());
            }
        }
        for (e, u) in &self.uncertain {
            snap.uncertain.insert(*e, u.clone());
        }
        snap
    }
}

impl OnlineMatcher for ForestMatcher {
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
        let kind = self.prefix.classify(u, v)?;
        let e = self.state.begin_arrival(u, v, weight)?;
        match kind {
            EdgeKind::Isolated => {
                self.state.match_isolated(rint(1))?;
            }
            EdgeKind::Growing { parent, .. } => {
                if self.prefix.component_edge_count(parent) == 1 {
                    self.grow_base_case(e, parent)?;
                } else if self.class.get(&parent) == Some(&VClass::TypeB) {
                    self.grow_type_b(e, parent)?;
                } else {
                    self.grow_type_a(e, parent)?;
                }
            }
            EdgeKind::NonTrivialMerge => {
                if self.alpha_of(u) + self.alpha_of(v) >= rat(3, 8) {
                    self.merge_covered(u, v)?;
                } else {
                    self.merge_uncovered(e, u, v)?;
                }
            }
            EdgeKind::TrivialMerge { isolated_edge } => {
                self.merge_trivial(e, u, v, isolated_edge)?;
            }
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

/// Hand-built streams exercising every merge behavior; used by unit
/// tests and the rounding checks. Naming scheme inside: each `side` is a
/// 4-edge tree whose vertex `w` is a leaf with its edge at exactly 3/8.
pub mod fixtures {
    use super::*;

    /// Appends edges (r,s), (r,t), (t,w), (t,w2) with the given name
    /// prefix. Running the forest matcher over them yields fractions
    /// 4/8, 3/8, 3/8, 2/8 with duals 5/8 on r and t.
    fn side(s: &mut InstanceStream, p: &str) {
        let e = |a: &str, b: &str| (format!("{p}{a}"), format!("{p}{b}"));
        let pairs = [e("r", "s"), e("r", "t"), e("t", "w"), e("t", "w2")];
        for (a, b) in pairs {
            s.add_edge(&a, &b, None).unwrap();
        }
    }

    /// Two leaves merge (parking 1/8 on the edge), then a growth at one
    /// flagged endpoint clears the pairing, then the other endpoint
    /// (now safe at 2/8) absorbs a leaf merge.
    pub fn growth_fix_walkthrough() -> InstanceStream {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        side(&mut s, "a_");
        side(&mut s, "b_");
        side(&mut s, "c_");
        s.add_edge("a_w", "b_w", None).unwrap();
        s.add_edge("a_w", "a_c", None).unwrap();
        s.add_edge("c_w", "b_w", None).unwrap();
        s
    }

    /// Two leaves merge, then a leaf merge at a still-flagged endpoint
    /// (the fix happens inside the merge), then a growth at the other
    /// endpoint after it was unflagged by its partner's fix.
    pub fn merge_fix_walkthrough() -> InstanceStream {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        side(&mut s, "a_");
        side(&mut s, "b_");
        side(&mut s, "c_");
        s.add_edge("a_w", "b_w", None).unwrap();
        s.add_edge("c_w", "b_w", None).unwrap();
        s.add_edge("a_w", "a_c", None).unwrap();
        s
    }

    /// Zero-match merges covering the dual lifts: two type A endpoints,
    /// a leaf lifted to 2/8, a flagged type B endpoint fixed then lifted
    /// to 3/8, and finally two lifted 2/8 vertices meeting. Every merge
    /// joins two distinct trees.
    pub fn zero_match_lift_walkthrough() -> InstanceStream {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        side(&mut s, "a_");
        side(&mut s, "b_");
        s.add_edge("a_t", "b_t", None).unwrap();
        side(&mut s, "e_");
        s.add_edge("e_w2", "a_r", None).unwrap();
        side(&mut s, "c_");
        side(&mut s, "d_");
        s.add_edge("c_w", "d_w", None).unwrap();
        side(&mut s, "f_");
        s.add_edge("f_t", "c_w", None).unwrap();
        s.add_edge("d_w", "e_w2", None).unwrap();
        s
    }

    /// A single-edge tree absorbed into a three-edge tree; the replay
    /// lowers the arriving edge from 5/8 to 3/8 and re-derives 5/8 for
    /// the absorbed edge.
    pub fn trivial_merge_into_tree() -> InstanceStream {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        s.add_edge("a", "b", None).unwrap();
        s.add_edge("b", "c", None).unwrap();
        s.add_edge("d", "e", None).unwrap();
        s.add_edge("c", "e", None).unwrap();
        s
    }

    /// Two single-edge trees joined; the replay runs the base case on
    /// one side and the growth rule on the other.
    pub fn trivial_merge_both_isolated() -> InstanceStream {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        s.add_edge("a", "b", None).unwrap();
        s.add_edge("c", "d", None).unwrap();
        s.add_edge("b", "c", None).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_random_forest, gen_random_growing_tree};
    use crate::matcher::run_stream;
    use crate::oracle::{max_cardinality_forest, OfflineGraph};
    use crate::pd_verify::{audit_run, profile_for};

    fn run(stream: &InstanceStream) -> ForestMatcher {
        let mut m = ForestMatcher::new();
        run_stream(&mut m, stream).unwrap();
        m
    }

    fn vert(s: &InstanceStream, name: &str) -> VertexId {
        (0..s.vertex_count() as u32)
            .map(VertexId)
            .find(|&v| s.vertex_name(v) == name)
            .unwrap()
    }

    fn edge(s: &InstanceStream, a: &str, b: &str) -> EdgeId {
        let label = format!("{a}-{b}");
        let flipped = format!("{b}-{a}");
        (0..s.len() as u32)
            .map(EdgeId)
            .find(|&e| s.edge_label(e) == label || s.edge_label(e) == flipped)
            .unwrap()
    }

    #[test]
    fn base_case_and_third_edge() {
        let mut m = ForestMatcher::new();
        m.process(VertexId(0), VertexId(1), None).unwrap();
        assert_eq!(*m.state().x(EdgeId(0)), rint(1));
        m.process(VertexId(1), VertexId(2), None).unwrap();
        assert_eq!(*m.state().x(EdgeId(0)), rat(4, 8));
        assert_eq!(*m.state().x(EdgeId(1)), rat(4, 8));
        assert_eq!(m.alpha_of(VertexId(1)), rat(6, 8));
        // Third edge at a 4/8 leaf: stabilize it, match 5/8.
        m.process(VertexId(2), VertexId(3), None).unwrap();
        assert_eq!(*m.state().x(EdgeId(1)), rat(3, 8));
        assert_eq!(*m.state().x(EdgeId(2)), rat(5, 8));
        assert_eq!(m.alpha_of(VertexId(1)), rat(5, 8));
        assert_eq!(m.alpha_of(VertexId(2)), rat(5, 8));
        m.state().verify_replay().unwrap();
    }

    #[test]
    fn growth_fix_walkthrough_milestones() {
        let s = fixtures::growth_fix_walkthrough();
        let m = run(&s);
        let st = m.state();
        // Two-leaves merge: 3/8 on the edge, 2/8 duals, 1/8 parked.
        let merge = edge(&s, "a_w", "b_w");
        assert_eq!(*st.x(merge), rat(2, 8));
        // The growth at a_w cleared the pairing: parked mass gone, the
        // merge edge lowered 3/8 -> 2/8, the growth matched 3/8.
        let growth = edge(&s, "a_w", "a_c");
        assert_eq!(*st.x(growth), rat(3, 8));
        assert!(m.uncertain.is_empty());
        assert!(m.flagged.is_empty());
        assert_eq!(m.alpha_of(vert(&s, "a_w")), rat(5, 8));
        // Leaf merge into the safe 2/8 endpoint: 1/8 matched.
        let leafmerge = edge(&s, "c_w", "b_w");
        assert_eq!(*st.x(leafmerge), rat(1, 8));
        assert_eq!(m.alpha_of(vert(&s, "b_w")), rat(3, 8));
        assert_eq!(m.alpha_of(vert(&s, "c_w")), rat(2, 8));
        st.verify_replay().unwrap();
        // Mid-run snapshot right after the two-leaves merge shows the
        // parked 1/8 and both 2/8 duals.
        let snap = &m.snapshots()[12];
        assert_eq!(snap.uncertain_of(merge), rat(1, 8));
        assert_eq!(snap.alpha_of(vert(&s, "a_w")), rat(2, 8));
        assert_eq!(snap.alpha_of(vert(&s, "b_w")), rat(2, 8));
    }

    #[test]
    fn merge_fix_walkthrough_milestones() {
        let s = fixtures::merge_fix_walkthrough();
        let m = run(&s);
        let st = m.state();
        let merge = edge(&s, "a_w", "b_w");
        let leafmerge = edge(&s, "c_w", "b_w");
        let growth = edge(&s, "a_w", "a_c");
        // The leaf merge hit b_w while flagged: fix inside the merge.
        assert_eq!(*st.x(merge), rat(2, 8));
        assert_eq!(*st.x(leafmerge), rat(1, 8));
        assert_eq!(m.alpha_of(vert(&s, "b_w")), rat(3, 8));
        // a_w was unflagged by its partner's fix; the growth needs no
        // further disposal and matches 3/8.
        assert_eq!(*st.x(growth), rat(3, 8));
        assert_eq!(m.alpha_of(vert(&s, "a_w")), rat(5, 8));
        assert!(m.uncertain.is_empty());
        st.verify_replay().unwrap();
    }

    #[test]
    fn zero_match_lift_walkthrough_milestones() {
        let s = fixtures::zero_match_lift_walkthrough();
        let m = run(&s);
        let st = m.state();
        // All five covered merges matched nothing.
        for (a, b) in [
            ("a_t", "b_t"),
            ("e_w2", "a_r"),
            ("f_t", "c_w"),
            ("d_w", "e_w2"),
        ] {
            assert_eq!(*st.x(edge(&s, a, b)), rint(0), "{a}-{b}");
        }
        // Leaf lift: e_w2 rose to 2/8 and then to 3/8 when it met d_w.
        assert_eq!(m.alpha_of(vert(&s, "e_w2")), rat(3, 8));
        // Flagged lift: c_w was fixed (its pair edge lowered to 2/8)
        // and lifted to 3/8; its partner d_w was lifted by the last
        // merge.
        assert_eq!(*st.x(edge(&s, "c_w", "d_w")), rat(2, 8));
        assert_eq!(m.alpha_of(vert(&s, "c_w")), rat(3, 8));
        assert_eq!(m.alpha_of(vert(&s, "d_w")), rat(3, 8));
        assert!(m.uncertain.is_empty());
        assert!(m.flagged.is_empty());
        st.verify_replay().unwrap();
    }

    #[test]
    fn trivial_merge_into_tree_fractions() {
        let s = fixtures::trivial_merge_into_tree();
        let m = run(&s);
        let st = m.state();
        assert_eq!(*st.x(edge(&s, "a", "b")), rat(4, 8));
        assert_eq!(*st.x(edge(&s, "b", "c")), rat(3, 8));
        assert_eq!(*st.x(edge(&s, "c", "e")), rat(3, 8));
        assert_eq!(*st.x(edge(&s, "d", "e")), rat(5, 8));
        assert_eq!(m.alpha_of(vert(&s, "b")), rat(5, 8));
        assert_eq!(m.alpha_of(vert(&s, "c")), rat(3, 8));
        assert_eq!(m.alpha_of(vert(&s, "e")), rat(5, 8));
        assert_eq!(*st.primal_value(), rat(15, 8));
        st.verify_replay().unwrap();
    }

    #[test]
    fn trivial_merge_both_isolated_fractions() {
        let s = fixtures::trivial_merge_both_isolated();
        let m = run(&s);
        let st = m.state();
        assert_eq!(*st.x(edge(&s, "a", "b")), rat(5, 8));
        assert_eq!(*st.x(edge(&s, "c", "d")), rat(4, 8));
        assert_eq!(*st.x(edge(&s, "b", "c")), rat(3, 8));
        assert_eq!(m.alpha_of(vert(&s, "b")), rat(5, 8));
        assert_eq!(m.alpha_of(vert(&s, "c")), rat(5, 8));
        assert_eq!(*st.primal_value(), rat(12, 8));
        st.verify_replay().unwrap();
    }

    #[test]
    fn zero_match_growth_at_saturated_type_b() {
        // After the growth fix, a_w holds a 5/8 dual; one more child
        // matches zero.
        let s = {
            let mut s = fixtures::growth_fix_walkthrough();
            s.add_edge("a_w", "extra", None).unwrap();
            s
        };
        let m = run(&s);
        assert_eq!(*m.state().x(EdgeId(15)), rint(0));
        assert_eq!(m.alpha_of(vert(&s, "a_w")), rat(5, 8));
    }

    #[test]
    fn audits_pass_on_fixtures_and_random_forests() {
        let profile = profile_for(ALGO_ID).unwrap();
        let fixture_streams = [
            fixtures::growth_fix_walkthrough(),
            fixtures::merge_fix_walkthrough(),
            fixtures::zero_match_lift_walkthrough(),
            fixtures::trivial_merge_into_tree(),
            fixtures::trivial_merge_both_isolated(),
        ];
        for s in &fixture_streams {
            let run = run(s).into_artifacts();
            let report = audit_run(&run, &profile).unwrap();
            assert!(report.all_pass());
        }
        for seed in 0..25u64 {
            let s = gen_random_forest(80, &rat(1, 2), seed).unwrap();
            let run = run(&s).into_artifacts();
            let report = audit_run(&run, &profile).unwrap();
            assert!(report.all_pass(), "seed {seed}");
        }
    }

    #[test]
    fn ratio_at_least_five_eighths() {
        for seed in 0..25u64 {
            let s = gen_random_forest(60, &rat(1, 3), seed).unwrap();
            let m = run(&s);
            let opt = max_cardinality_forest(&OfflineGraph::from_stream(&s)).unwrap();
            let bound = rat(5, 8) * rint(opt as i64);
            assert!(
                *m.state().primal_value() >= bound,
                "seed {seed}: {} < 5/8 of {opt}",
                m.state().primal_value()
            );
        }
    }

    #[test]
    fn growing_tree_streams_dispatch_cleanly() {
        for seed in 0..10u64 {
            let s = gen_random_growing_tree(50, false, seed).unwrap();
            let m = run(&s);
            assert!(m.uncertain.is_empty());
            let opt = max_cardinality_forest(&OfflineGraph::from_stream(&s)).unwrap();
            assert!(*m.state().primal_value() >= rat(5, 8) * rint(opt as i64));
        }
    }

    #[test]
    fn cycles_are_rejected() {
        let mut m = ForestMatcher::new();
        m.process(VertexId(0), VertexId(1), None).unwrap();
        m.process(VertexId(1), VertexId(2), None).unwrap();
        let err = m.process(VertexId(0), VertexId(2), None).unwrap_err();
        assert!(matches!(err, AlgoError::ModelViolation { .. }));
    }
}

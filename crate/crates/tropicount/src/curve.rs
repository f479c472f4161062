//! Abstract tropical curves, plane parameterized tropical (PPT) curves,
//! marked and real marked curves, and embedded plane tropical (EPT) curves.
//!
//! A PPT-curve is a metric graph together with a piecewise integer-affine
//! map to the plane, balanced at every finite vertex. The vertices at
//! infinity are univalent and sit on infinite-length edges. Edge directions
//! are stored once per edge from a designated tail; the head-side direction
//! is the negation.

use crate::error::{Error, Result, ValidationReport};
use crate::lattice::{
    self, angle_cmp, line_intersection, LatticePoint, LatticePolygon, RationalPoint,
    WeightedDirection,
};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type VertexId = usize;
pub type EdgeId = usize;

/// Finite vertices carry positions; infinite ones close up the ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Finite,
    Infinite,
}

/// Metric length of an edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeLength {
    Finite(BigRational),
    Infinite,
}

impl EdgeLength {
    pub fn as_finite(&self) -> Option<&BigRational> {
        match self {
            EdgeLength::Finite(l) => Some(l),
            EdgeLength::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub tail: VertexId,
    pub head: VertexId,
    pub length: EdgeLength,
}

/// A compact graph without divalent vertices whose univalent vertices are
/// the ends at infinity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractGraph {
    vertices: Vec<VertexKind>,
    edges: Vec<Edge>,
}

impl AbstractGraph {
    /// Validates the structural invariants: finite vertices have valency at
    /// least 3, infinite vertices exactly 1, edge lengths match endpoint
    /// kinds (finite-finite edges have finite positive length, edges
    /// touching infinity are infinite), ends are stored with a finite tail,
    /// and no edge joins two infinite vertices.
    pub fn new(vertices: Vec<VertexKind>, edges: Vec<Edge>) -> Result<Self> {
        let g = AbstractGraph { vertices, edges };
        for (i, e) in g.edges.iter().enumerate() {
            if e.tail >= g.vertices.len() || e.head >= g.vertices.len() {
                return Err(Error::MalformedGraph(format!("edge {i} endpoint out of range")));
            }
            if e.tail == e.head {
                return Err(Error::MalformedGraph(format!("edge {i} is a loop")));
            }
            let tk = g.vertices[e.tail];
            let hk = g.vertices[e.head];
            match (tk, hk) {
                (VertexKind::Finite, VertexKind::Finite) => match &e.length {
                    EdgeLength::Finite(l) if l.is_positive() => {}
                    _ => {
                        return Err(Error::MalformedGraph(format!(
                            "finite edge {i} must have finite positive length"
                        )))
                    }
                },
                (VertexKind::Finite, VertexKind::Infinite) => {
                    if e.length != EdgeLength::Infinite {
                        return Err(Error::MalformedGraph(format!(
                            "end {i} must have infinite length"
                        )));
                    }
                }
                (VertexKind::Infinite, _) => {
                    return Err(Error::MalformedGraph(format!(
                        "edge {i} must have its finite endpoint as tail"
                    )))
                }
            }
        }
        for v in 0..g.vertices.len() {
            let val = g.valency(v);
            match g.vertices[v] {
                VertexKind::Finite => {
                    if val == 0 {
                        return Err(Error::MalformedGraph(format!("vertex {v} is isolated")));
                    }
                    if val < 3 {
                        return Err(Error::MalformedGraph(format!(
                            "finite vertex {v} has valency {val} < 3"
                        )));
                    }
                }
                VertexKind::Infinite => {
                    if val != 1 {
                        return Err(Error::MalformedGraph(format!(
                            "infinite vertex {v} has valency {val} != 1"
                        )));
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn kind(&self, v: VertexId) -> VertexKind {
        self.vertices[v]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_end(&self, e: EdgeId) -> bool {
        self.vertices[self.edges[e].head] == VertexKind::Infinite
    }

    pub fn finite_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.vertices.len()).filter(|&v| self.vertices[v] == VertexKind::Finite)
    }

    pub fn infinite_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.vertices.len()).filter(|&v| self.vertices[v] == VertexKind::Infinite)
    }

    pub fn ends(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edges.len()).filter(|&e| self.is_end(e))
    }

    pub fn finite_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edges.len()).filter(|&e| !self.is_end(e))
    }

    pub fn incident_edges(&self, v: VertexId) -> Vec<EdgeId> {
        (0..self.edges.len())
            .filter(|&e| self.edges[e].tail == v || self.edges[e].head == v)
            .collect()
    }

    pub fn valency(&self, v: VertexId) -> usize {
        self.incident_edges(v).len()
    }

    pub fn other_end(&self, e: EdgeId, v: VertexId) -> VertexId {
        let edge = &self.edges[e];
        if edge.tail == v {
            edge.head
        } else {
            edge.tail
        }
    }

    /// Connected components over all vertices; each component is a sorted
    /// vertex list.
    pub fn components(&self) -> Vec<Vec<VertexId>> {
        let n = self.vertices.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = count;
            while let Some(v) = stack.pop() {
                for e in self.incident_edges(v) {
                    let w = self.other_end(e, v);
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        let mut out = vec![Vec::new(); count];
        for v in 0..n {
            out[comp[v]].push(v);
        }
        out
    }
}

/// Genus of the finite part: b1 - b0 + 1, with the ends at infinity removed.
pub fn genus(g: &AbstractGraph) -> i64 {
    let finite_vertices: Vec<VertexId> = g.finite_vertices().collect();
    let finite_edges: Vec<EdgeId> = g.finite_edges().collect();
    let mut index = BTreeMap::new();
    for (i, &v) in finite_vertices.iter().enumerate() {
        index.insert(v, i);
    }
    let mut parent: Vec<usize> = (0..finite_vertices.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &e in &finite_edges {
        let a = find(&mut parent, index[&g.edge(e).tail]);
        let b = find(&mut parent, index[&g.edge(e).head]);
        if a != b {
            parent[a] = b;
        }
    }
    let b0 = (0..finite_vertices.len())
        .filter(|&i| find(&mut parent, i) == i)
        .count() as i64;
    let b1 = finite_edges.len() as i64 - finite_vertices.len() as i64 + b0;
    b1 - b0 + 1
}

/// A plane parameterized tropical curve: graph, vertex positions, and one
/// weighted primitive direction per edge (taken from the tail).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PptCurve {
    pub graph: AbstractGraph,
    positions: Vec<Option<RationalPoint>>,
    directions: Vec<WeightedDirection>,
}

impl PptCurve {
    pub fn new(
        graph: AbstractGraph,
        positions: Vec<Option<RationalPoint>>,
        directions: Vec<WeightedDirection>,
    ) -> Result<Self> {
        if positions.len() != graph.vertex_count() {
            return Err(Error::MalformedCurve("positions length mismatch".into()));
        }
        if directions.len() != graph.edge_count() {
            return Err(Error::MalformedCurve("directions length mismatch".into()));
        }
        for v in 0..graph.vertex_count() {
            match graph.kind(v) {
                VertexKind::Finite if positions[v].is_none() => {
                    return Err(Error::MalformedCurve(format!(
                        "finite vertex {v} has no position"
                    )))
                }
                VertexKind::Infinite if positions[v].is_some() => {
                    return Err(Error::MalformedCurve(format!(
                        "infinite vertex {v} must not carry a position"
                    )))
                }
                _ => {}
            }
        }
        Ok(PptCurve {
            graph,
            positions,
            directions,
        })
    }

    pub fn position(&self, v: VertexId) -> &RationalPoint {
        self.positions[v]
            .as_ref()
            .expect("position of a finite vertex")
    }

    pub fn try_position(&self, v: VertexId) -> Option<&RationalPoint> {
        self.positions[v].as_ref()
    }

    /// Weighted direction of `e` as seen from its tail.
    pub fn direction(&self, e: EdgeId) -> WeightedDirection {
        self.directions[e]
    }

    /// Weighted direction of `e` as seen from vertex `v` (negated at the head).
    pub fn direction_from(&self, e: EdgeId, v: VertexId) -> WeightedDirection {
        let edge = self.graph.edge(e);
        if edge.tail == v {
            self.directions[e]
        } else {
            debug_assert_eq!(edge.head, v);
            self.directions[e].reversed()
        }
    }

    pub fn weight(&self, e: EdgeId) -> u64 {
        self.directions[e].weight
    }

    /// Translate all vertex positions by a rational vector.
    pub fn translate(&self, v: &RationalPoint) -> PptCurve {
        let mut out = self.clone();
        for p in out.positions.iter_mut().flatten() {
            *p = p.add(v);
        }
        out
    }

    /// Point on edge `e` at metric offset `o` from the tail.
    pub fn point_on_edge(&self, e: EdgeId, offset: &BigRational) -> RationalPoint {
        let edge = self.graph.edge(e);
        let base = self.position(edge.tail);
        let d = self.directions[e];
        let step = offset * lattice::rat(d.weight as i64);
        base.advance(&step, d.primitive)
    }
}

/// Sorted multiset of weighted end directions, oriented toward infinity.
pub fn degree(c: &PptCurve) -> Vec<WeightedDirection> {
    let mut degree: Vec<WeightedDirection> = c.graph.ends().map(|e| c.direction(e)).collect();
    degree.sort_by(|a, b| angle_cmp(a.primitive, b.primitive).then(a.weight.cmp(&b.weight)));
    degree
}

/// Structural plus metric validation of a PPT-curve.
///
/// Reports one entry per checked condition: per-edge affine consistency,
/// per-vertex balancing and nondegeneracy, the global end-direction sum,
/// and the rotated moment relation for the end base points.
pub fn validate_ppt(c: &PptCurve) -> ValidationReport {
    let mut report = ValidationReport::new();

    for e in c.graph.finite_edges() {
        let edge = c.graph.edge(e);
        let len = match edge.length.as_finite() {
            Some(l) => l.clone(),
            None => continue,
        };
        let d = c.directions[e];
        let expected = c
            .position(edge.tail)
            .advance(&(len * lattice::rat(d.weight as i64)), d.primitive);
        if expected == *c.position(edge.head) {
            report.pass("affine", format!("edge {e} is Z-affine consistent"));
        } else {
            report.fail_at(
                "affine",
                format!("edge {e}"),
                "head position differs from tail + length*weight*direction",
            );
        }
    }

    for v in c.graph.finite_vertices() {
        let mut sum = LatticePoint::new(0, 0);
        let mut dirs: Vec<LatticePoint> = Vec::new();
        for e in c.graph.incident_edges(v) {
            let d = c.direction_from(e, v);
            sum = sum.add(d.vector());
            dirs.push(d.primitive);
        }
        if sum.is_zero() {
            report.pass("e1", format!("vertex {v} balanced"));
        } else {
            report.fail_at("e1", format!("vertex {v}"), format!("directions sum to {sum}"));
        }
        let spans = dirs.iter().any(|a| dirs.iter().any(|b| a.cross(*b) != 0));
        if spans {
            report.pass("nondegenerate", format!("vertex {v} spans the plane"));
        } else {
            report.fail_at(
                "nondegenerate",
                format!("vertex {v}"),
                "outgoing directions are collinear",
            );
        }
    }

    let mut total = LatticePoint::new(0, 0);
    for e in c.graph.ends() {
        total = total.add(c.direction(e).vector());
    }
    if total.is_zero() {
        report.pass("e8", "end directions sum to zero");
    } else {
        report.fail("e8", format!("end directions sum to {total}"));
    }

    report.merge(check_moment_relation(c, &[]));

    report
}

/// The rotated moment relation: for points `x_e` on the end images,
/// `sum <R90(dh(tau(e))), x_e> = 0`. Offsets pick the points along the
/// ends; missing offsets default to zero (the base vertex image).
pub fn check_moment_relation(c: &PptCurve, offsets: &[(EdgeId, BigRational)]) -> ValidationReport {
    let mut report = ValidationReport::new();
    let offset_of = |e: EdgeId| -> BigRational {
        offsets
            .iter()
            .find(|(id, _)| *id == e)
            .map(|(_, o)| o.clone())
            .unwrap_or_else(BigRational::zero)
    };
    let mut sum = BigRational::zero();
    let mut any = false;
    for e in c.graph.ends() {
        any = true;
        let x = c.point_on_edge(e, &offset_of(e));
        let rotated = c.direction(e).vector().rot90();
        sum += x.dot_int(rotated);
    }
    if !any || sum.is_zero() {
        report.pass("e10", "rotated moment relation holds");
    } else {
        report.fail("e10", format!("moment sum is {sum}"));
    }
    report
}

/// Simplicity classification of a PPT-curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveClass {
    Simple,
    PseudoSimple,
    Neither,
}

/// Per-edge tag at a vertex of valency above three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeTag {
    Simple,
    Multiple,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub class: CurveClass,
    /// Tags for every (vertex, edge) pair at vertices of valency > 3.
    pub tags: BTreeMap<(VertexId, EdgeId), EdgeTag>,
}

/// Classify a curve as simple (all finite vertices trivalent),
/// pseudo-simple, or neither.
///
/// At a vertex of valency m > 3 the pseudo-simple condition singles out one
/// edge whose direction differs from all others and requires exactly two
/// distinct directions among the rest; every choice of the distinguished
/// edge is tried.
pub fn classify(c: &PptCurve) -> Classification {
    let mut tags = BTreeMap::new();
    let mut class = CurveClass::Simple;
    for v in c.graph.finite_vertices() {
        let edges = c.graph.incident_edges(v);
        if edges.len() <= 3 {
            continue;
        }
        if class == CurveClass::Simple {
            class = CurveClass::PseudoSimple;
        }
        let dirs: Vec<LatticePoint> = edges
            .iter()
            .map(|&e| c.direction_from(e, v).primitive)
            .collect();
        for (i, &e) in edges.iter().enumerate() {
            let unique = dirs.iter().enumerate().all(|(j, d)| j == i || *d != dirs[i]);
            tags.insert(
                (v, e),
                if unique { EdgeTag::Simple } else { EdgeTag::Multiple },
            );
        }
        let ok = (0..edges.len()).any(|first| {
            let rest: Vec<LatticePoint> = (0..edges.len())
                .filter(|&j| j != first)
                .map(|j| dirs[j])
                .collect();
            let first_unique = rest.iter().all(|d| *d != dirs[first]);
            let distinct: BTreeSet<LatticePoint> = rest.iter().copied().collect();
            first_unique && distinct.len() == 2
        });
        if !ok {
            class = CurveClass::Neither;
        }
    }
    Classification { class, tags }
}

// ---------------------------------------------------------------------------
// Marked curves
// ---------------------------------------------------------------------------

/// Address of a point of the graph: a vertex, or an interior point of an
/// edge at a positive metric offset from the tail.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum MarkAddr {
    Vertex(VertexId),
    OnEdge { edge: EdgeId, offset: BigRational },
}

/// Mark multiplicity: 1, (1,0), (0,1) or (1,1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MarkMult {
    One,
    OneZero,
    ZeroOne,
    OneOne,
}

impl MarkMult {
    pub fn components(self) -> (u32, u32) {
        match self {
            MarkMult::One => (1, 0),
            MarkMult::OneZero => (1, 0),
            MarkMult::ZeroOne => (0, 1),
            MarkMult::OneOne => (1, 1),
        }
    }
}

impl fmt::Display for MarkMult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkMult::One => write!(f, "1"),
            MarkMult::OneZero => write!(f, "(1,0)"),
            MarkMult::ZeroOne => write!(f, "(0,1)"),
            MarkMult::OneOne => write!(f, "(1,1)"),
        }
    }
}

/// Which part of the mark set a mark belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MarkGroup {
    /// End mark at an infinite vertex.
    End,
    /// Simple interior mark (multiplicity 1).
    Simple,
    /// Double-point interior mark (multiplicity (1,0), (0,1) or (1,1)).
    Double,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mark {
    pub addr: MarkAddr,
    pub group: MarkGroup,
    pub mult: MarkMult,
}

impl Mark {
    pub fn end(v: VertexId) -> Self {
        Mark {
            addr: MarkAddr::Vertex(v),
            group: MarkGroup::End,
            mult: MarkMult::One,
        }
    }

    pub fn simple_on_edge(e: EdgeId, offset: BigRational) -> Self {
        Mark {
            addr: MarkAddr::OnEdge { edge: e, offset },
            group: MarkGroup::Simple,
            mult: MarkMult::One,
        }
    }

    pub fn double_on_edge(e: EdgeId, offset: BigRational, mult: MarkMult) -> Self {
        Mark {
            addr: MarkAddr::OnEdge { edge: e, offset },
            group: MarkGroup::Double,
            mult,
        }
    }

    pub fn double_at_vertex(v: VertexId) -> Self {
        Mark {
            addr: MarkAddr::Vertex(v),
            group: MarkGroup::Double,
            mult: MarkMult::OneOne,
        }
    }
}

/// A PPT-curve with an ordered tuple of distinct marked points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedCurve {
    pub curve: PptCurve,
    pub marks: Vec<Mark>,
}

impl MarkedCurve {
    pub fn new(curve: PptCurve, marks: Vec<Mark>) -> Result<Self> {
        let m = MarkedCurve { curve, marks };
        m.validate_structure()?;
        Ok(m)
    }

    fn validate_structure(&self) -> Result<()> {
        for (i, mark) in self.marks.iter().enumerate() {
            match &mark.addr {
                MarkAddr::Vertex(v) => {
                    if *v >= self.curve.graph.vertex_count() {
                        return Err(Error::MalformedCurve(format!("mark {i}: vertex out of range")));
                    }
                    let infinite = self.curve.graph.kind(*v) == VertexKind::Infinite;
                    match (infinite, mark.group) {
                        (true, MarkGroup::End) => {}
                        (false, MarkGroup::Simple) => {
                            return Err(Error::MalformedCurve(format!(
                                "mark {i}: simple marks may not sit at vertices"
                            )))
                        }
                        (false, MarkGroup::Double) => {
                            if mark.mult != MarkMult::OneOne {
                                return Err(Error::MalformedCurve(format!(
                                    "mark {i}: vertex double mark must have multiplicity (1,1)"
                                )));
                            }
                            if self.curve.graph.valency(*v) != 3 {
                                return Err(Error::MalformedCurve(format!(
                                    "mark {i}: (1,1) marks require a trivalent vertex"
                                )));
                            }
                        }
                        (true, _) => {
                            return Err(Error::MalformedCurve(format!(
                                "mark {i}: interior mark at an infinite vertex"
                            )))
                        }
                        (false, MarkGroup::End) => {
                            return Err(Error::MalformedCurve(format!(
                                "mark {i}: end mark away from infinity"
                            )))
                        }
                    }
                }
                MarkAddr::OnEdge { edge, offset } => {
                    if *edge >= self.curve.graph.edge_count() {
                        return Err(Error::MalformedCurve(format!("mark {i}: edge out of range")));
                    }
                    if mark.group == MarkGroup::End {
                        return Err(Error::MalformedCurve(format!(
                            "mark {i}: end marks sit at infinite vertices"
                        )));
                    }
                    if mark.group == MarkGroup::Double && mark.mult == MarkMult::One {
                        return Err(Error::MalformedCurve(format!(
                            "mark {i}: double marks need a component multiplicity"
                        )));
                    }
                    if mark.group == MarkGroup::Simple && mark.mult != MarkMult::One {
                        return Err(Error::MalformedCurve(format!(
                            "mark {i}: simple marks have multiplicity 1"
                        )));
                    }
                    if mark.group == MarkGroup::Double && mark.mult == MarkMult::OneOne {
                        return Err(Error::MalformedCurve(format!(
                            "mark {i}: (1,1) marks sit at trivalent vertices"
                        )));
                    }
                    if !offset.is_positive() {
                        return Err(Error::MalformedCurve(format!(
                            "mark {i}: offsets are strictly positive (vertex marks use vertex addresses)"
                        )));
                    }
                    if let Some(len) = self.curve.graph.edge(*edge).length.as_finite() {
                        if offset >= len {
                            return Err(Error::MalformedCurve(format!(
                                "mark {i}: offset exceeds the edge length"
                            )));
                        }
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (i, mark) in self.marks.iter().enumerate() {
            if !seen.insert(mark.addr.clone()) {
                return Err(Error::MalformedCurve(format!("mark {i}: duplicate mark point")));
            }
        }
        Ok(())
    }

    /// Plane image of a mark; `None` for end marks (they live on the
    /// boundary of the compactification).
    pub fn mark_plane_image(&self, i: usize) -> Option<RationalPoint> {
        match &self.marks[i].addr {
            MarkAddr::Vertex(v) => self.curve.try_position(*v).cloned(),
            MarkAddr::OnEdge { edge, offset } => Some(self.curve.point_on_edge(*edge, offset)),
        }
    }

    /// Indices of the interior marks (everything except end marks).
    pub fn interior_marks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.marks.len()).filter(|&i| self.marks[i].group != MarkGroup::End)
    }

    pub fn end_marks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.marks.len()).filter(|&i| self.marks[i].group == MarkGroup::End)
    }

    /// The edge a mark sits on, if it addresses an edge interior.
    pub fn mark_edge(&self, i: usize) -> Option<EdgeId> {
        match self.marks[i].addr {
            MarkAddr::OnEdge { edge, .. } => Some(edge),
            MarkAddr::Vertex(_) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Real structures
// ---------------------------------------------------------------------------

/// Involution on a marked curve: permutations of vertices and edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Involution {
    pub vertex_map: Vec<VertexId>,
    pub edge_map: Vec<EdgeId>,
}

impl Involution {
    pub fn identity(graph: &AbstractGraph) -> Self {
        Involution {
            vertex_map: (0..graph.vertex_count()).collect(),
            edge_map: (0..graph.edge_count()).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.vertex_map.iter().enumerate().all(|(i, &v)| i == v)
            && self.edge_map.iter().enumerate().all(|(i, &e)| i == e)
    }
}

/// Real/imaginary tag of a mark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealTag {
    Re,
    Im,
}

/// A marked curve with a real structure: an involution commuting with the
/// plane map, and a conjugation-invariant partition of the marks.
#[derive(Debug, Clone)]
pub struct RealMarkedCurve {
    pub base: MarkedCurve,
    pub involution: Involution,
    pub mark_tags: Vec<RealTag>,
}

impl RealMarkedCurve {
    pub fn new(base: MarkedCurve, involution: Involution, mark_tags: Vec<RealTag>) -> Result<Self> {
        let r = RealMarkedCurve {
            base,
            involution,
            mark_tags,
        };
        r.validate_structure()?;
        Ok(r)
    }

    fn validate_structure(&self) -> Result<()> {
        let g = &self.base.curve.graph;
        let c = &self.involution;
        if c.vertex_map.len() != g.vertex_count() || c.edge_map.len() != g.edge_count() {
            return Err(Error::InvalidInvolution("permutation length mismatch".into()));
        }
        if self.mark_tags.len() != self.base.marks.len() {
            return Err(Error::InvalidInvolution("mark tag length mismatch".into()));
        }
        for v in 0..g.vertex_count() {
            let w = c.vertex_map[v];
            if w >= g.vertex_count() || c.vertex_map[w] != v {
                return Err(Error::InvalidInvolution(format!("vertex map not involutive at {v}")));
            }
            if g.kind(v) != g.kind(w) {
                return Err(Error::InvalidInvolution(format!("vertex {v} changes kind")));
            }
            if g.kind(v) == VertexKind::Finite
                && self.base.curve.position(v) != self.base.curve.position(w)
            {
                return Err(Error::InvalidInvolution(format!(
                    "involution does not commute with h at vertex {v}"
                )));
            }
        }
        for e in 0..g.edge_count() {
            let f = c.edge_map[e];
            if f >= g.edge_count() || c.edge_map[f] != e {
                return Err(Error::InvalidInvolution(format!("edge map not involutive at {e}")));
            }
            let (et, eh) = (g.edge(e).tail, g.edge(e).head);
            let (ft, fh) = (g.edge(f).tail, g.edge(f).head);
            let mapped = (c.vertex_map[et], c.vertex_map[eh]);
            if mapped != (ft, fh) {
                return Err(Error::InvalidInvolution(format!(
                    "edge {e} endpoints do not map onto edge {f}"
                )));
            }
            if g.edge(e).length != g.edge(f).length {
                return Err(Error::InvalidInvolution(format!("edge {e} changes length")));
            }
            if self.base.curve.direction(e) != self.base.curve.direction(f) {
                return Err(Error::InvalidInvolution(format!("edge {e} changes direction")));
            }
        }
        for (i, mark) in self.base.marks.iter().enumerate() {
            let image = self.map_addr(&mark.addr);
            match self.find_mark(&image) {
                Some(j) => {
                    if self.mark_tags[i] != self.mark_tags[j] {
                        return Err(Error::InvalidInvolution(format!(
                            "mark {i} and its conjugate carry different tags"
                        )));
                    }
                }
                None => {
                    return Err(Error::InvalidInvolution(format!("mark {i} has no conjugate mark")))
                }
            }
        }
        Ok(())
    }

    pub fn map_addr(&self, addr: &MarkAddr) -> MarkAddr {
        match addr {
            MarkAddr::Vertex(v) => MarkAddr::Vertex(self.involution.vertex_map[*v]),
            MarkAddr::OnEdge { edge, offset } => MarkAddr::OnEdge {
                edge: self.involution.edge_map[*edge],
                offset: offset.clone(),
            },
        }
    }

    pub fn find_mark(&self, addr: &MarkAddr) -> Option<usize> {
        self.base.marks.iter().position(|m| m.addr == *addr)
    }

    /// Conjugate mark index of mark `i`.
    pub fn conjugate_mark(&self, i: usize) -> usize {
        let image = self.map_addr(&self.base.marks[i].addr);
        self.find_mark(&image).expect("validated real curve")
    }

    pub fn fixed_vertex(&self, v: VertexId) -> bool {
        self.involution.vertex_map[v] == v
    }

    pub fn fixed_edge(&self, e: EdgeId) -> bool {
        self.involution.edge_map[e] == e
    }

    /// True if the mark sits in the imaginary part of the graph (on a
    /// non-fixed edge or at a non-fixed vertex).
    pub fn mark_in_imaginary_part(&self, i: usize) -> bool {
        match &self.base.marks[i].addr {
            MarkAddr::Vertex(v) => !self.fixed_vertex(*v),
            MarkAddr::OnEdge { edge, .. } => !self.fixed_edge(*edge),
        }
    }

    /// Number of connected components of the imaginary part of the graph
    /// (the complement of the fixed-point set).
    pub fn imaginary_component_count(&self) -> usize {
        let g = &self.base.curve.graph;
        let non_fixed_edges: Vec<EdgeId> =
            (0..g.edge_count()).filter(|&e| !self.fixed_edge(e)).collect();
        if non_fixed_edges.is_empty() {
            return 0;
        }
        let mut parent: BTreeMap<EdgeId, EdgeId> =
            non_fixed_edges.iter().map(|&e| (e, e)).collect();
        fn find(parent: &mut BTreeMap<EdgeId, EdgeId>, mut x: EdgeId) -> EdgeId {
            while parent[&x] != x {
                let up = parent[&parent[&x]];
                parent.insert(x, up);
                x = up;
            }
            x
        }
        for v in 0..g.vertex_count() {
            if self.fixed_vertex(v) {
                continue;
            }
            let incident: Vec<EdgeId> = g
                .incident_edges(v)
                .into_iter()
                .filter(|e| !self.fixed_edge(*e))
                .collect();
            for w in incident.windows(2) {
                let a = find(&mut parent, w[0]);
                let b = find(&mut parent, w[1]);
                if a != b {
                    parent.insert(a, b);
                }
            }
        }
        let keys: Vec<EdgeId> = parent.keys().copied().collect();
        keys.iter().filter(|&&e| find(&mut parent, e) == e).count()
    }
}

/// Quotient of a real curve by its involution. Swapped edge pairs descend
/// to a single edge of doubled weight and halved length; marks descend to
/// their orbits (order follows the first occurrence upstairs).
pub fn quotient_by_involution(r: &RealMarkedCurve) -> Result<MarkedCurve> {
    let g = &r.base.curve.graph;
    let c = &r.involution;

    let mut vmap: BTreeMap<VertexId, usize> = BTreeMap::new();
    let mut kinds = Vec::new();
    for v in 0..g.vertex_count() {
        let rep = v.min(c.vertex_map[v]);
        if rep == v {
            vmap.insert(v, kinds.len());
            kinds.push(g.kind(v));
        }
    }
    let rep_vertex = |v: VertexId| vmap[&v.min(c.vertex_map[v])];

    let mut emap: BTreeMap<EdgeId, usize> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut directions = Vec::new();
    for e in 0..g.edge_count() {
        let rep = e.min(c.edge_map[e]);
        if rep != e {
            continue;
        }
        let swapped = c.edge_map[e] != e;
        let edge = g.edge(e);
        let dir = r.base.curve.direction(e);
        let (weight, length) = if swapped {
            let len = match &edge.length {
                EdgeLength::Finite(l) => EdgeLength::Finite(l / lattice::rat(2)),
                EdgeLength::Infinite => EdgeLength::Infinite,
            };
            (dir.weight * 2, len)
        } else {
            (dir.weight, edge.length.clone())
        };
        emap.insert(e, edges.len());
        edges.push(Edge {
            tail: rep_vertex(edge.tail),
            head: rep_vertex(edge.head),
            length,
        });
        directions.push(WeightedDirection::new(dir.primitive, weight));
    }
    let rep_edge = |e: EdgeId| emap[&e.min(c.edge_map[e])];

    let graph = AbstractGraph::new(kinds.clone(), edges)?;
    let mut positions = vec![None; kinds.len()];
    for v in 0..g.vertex_count() {
        if g.kind(v) == VertexKind::Finite {
            positions[rep_vertex(v)] = Some(r.base.curve.position(v).clone());
        }
    }
    let curve = PptCurve::new(graph, positions, directions)?;

    let mut marks = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, mark) in r.base.marks.iter().enumerate() {
        let j = r.conjugate_mark(i);
        if !seen.insert(i.min(j)) {
            continue;
        }
        let addr = match &mark.addr {
            MarkAddr::Vertex(v) => MarkAddr::Vertex(rep_vertex(*v)),
            MarkAddr::OnEdge { edge, offset } => {
                let swapped_edge = c.edge_map[*edge] != *edge;
                MarkAddr::OnEdge {
                    edge: rep_edge(*edge),
                    offset: if swapped_edge {
                        offset / lattice::rat(2)
                    } else {
                        offset.clone()
                    },
                }
            }
        };
        marks.push(Mark {
            addr,
            group: mark.group,
            mult: mark.mult,
        });
    }
    MarkedCurve::new(curve, marks)
}

/// Double a marked curve along a set of even-weight edges: the union of the
/// chosen edges is duplicated, glued at the vertices shared with the rest
/// of the curve, and the duplicated edges carry half weight and doubled
/// length. Marks on the doubled part are duplicated; the involution swaps
/// the copies.
pub fn double(m: &MarkedCurve, doubled: &BTreeSet<EdgeId>) -> Result<RealMarkedCurve> {
    let g = &m.curve.graph;
    for &e in doubled {
        if e >= g.edge_count() {
            return Err(Error::MalformedCurve(format!("doubled edge {e} out of range")));
        }
        if m.curve.weight(e) % 2 != 0 {
            return Err(Error::OddWeightDouble(e));
        }
    }

    let mut dup_vertex: BTreeMap<VertexId, VertexId> = BTreeMap::new();
    let mut kinds: Vec<VertexKind> = (0..g.vertex_count()).map(|v| g.kind(v)).collect();
    let mut positions: Vec<Option<RationalPoint>> = (0..g.vertex_count())
        .map(|v| m.curve.try_position(v).cloned())
        .collect();
    for v in 0..g.vertex_count() {
        let incident = g.incident_edges(v);
        let all_doubled = !incident.is_empty() && incident.iter().all(|e| doubled.contains(e));
        if all_doubled {
            dup_vertex.insert(v, kinds.len());
            kinds.push(g.kind(v));
            positions.push(m.curve.try_position(v).cloned());
        }
    }

    let mut edges: Vec<Edge> = Vec::new();
    let mut directions: Vec<WeightedDirection> = Vec::new();
    let mut copy_edge: BTreeMap<EdgeId, EdgeId> = BTreeMap::new();
    for e in 0..g.edge_count() {
        let edge = g.edge(e);
        let dir = m.curve.direction(e);
        if doubled.contains(&e) {
            let half = WeightedDirection::new(dir.primitive, dir.weight / 2);
            let len = match &edge.length {
                EdgeLength::Finite(l) => EdgeLength::Finite(l * lattice::rat(2)),
                EdgeLength::Infinite => EdgeLength::Infinite,
            };
            edges.push(Edge {
                tail: edge.tail,
                head: edge.head,
                length: len,
            });
            directions.push(half);
        } else {
            edges.push(edge.clone());
            directions.push(dir);
        }
    }
    for &e in doubled {
        let edge = g.edge(e);
        let dir = directions[e];
        let tail = *dup_vertex.get(&edge.tail).unwrap_or(&edge.tail);
        let head = *dup_vertex.get(&edge.head).unwrap_or(&edge.head);
        copy_edge.insert(e, edges.len());
        let length = edges[e].length.clone();
        edges.push(Edge { tail, head, length });
        directions.push(dir);
    }

    let graph = AbstractGraph::new(kinds.clone(), edges)?;
    let curve = PptCurve::new(graph, positions, directions)?;

    let mut vertex_map: Vec<VertexId> = (0..kinds.len()).collect();
    for (&v, &w) in &dup_vertex {
        vertex_map[v] = w;
        vertex_map[w] = v;
    }
    let mut edge_map: Vec<EdgeId> = (0..curve.graph.edge_count()).collect();
    for (&e, &f) in &copy_edge {
        edge_map[e] = f;
        edge_map[f] = e;
    }

    let mut marks: Vec<Mark> = Vec::new();
    let mut tags: Vec<RealTag> = Vec::new();
    for mark in &m.marks {
        match &mark.addr {
            MarkAddr::Vertex(v) => {
                if let Some(&w) = dup_vertex.get(v) {
                    marks.push(Mark {
                        addr: MarkAddr::Vertex(*v),
                        ..mark.clone()
                    });
                    tags.push(RealTag::Im);
                    marks.push(Mark {
                        addr: MarkAddr::Vertex(w),
                        ..mark.clone()
                    });
                    tags.push(RealTag::Im);
                } else {
                    marks.push(mark.clone());
                    tags.push(RealTag::Re);
                }
            }
            MarkAddr::OnEdge { edge, offset } => {
                if doubled.contains(edge) {
                    let new_offset = offset * lattice::rat(2);
                    marks.push(Mark {
                        addr: MarkAddr::OnEdge {
                            edge: *edge,
                            offset: new_offset.clone(),
                        },
                        ..mark.clone()
                    });
                    tags.push(RealTag::Im);
                    marks.push(Mark {
                        addr: MarkAddr::OnEdge {
                            edge: copy_edge[edge],
                            offset: new_offset,
                        },
                        ..mark.clone()
                    });
                    tags.push(RealTag::Im);
                } else {
                    marks.push(mark.clone());
                    tags.push(RealTag::Re);
                }
            }
        }
    }

    let base = MarkedCurve::new(curve, marks)?;
    RealMarkedCurve::new(
        base,
        Involution {
            vertex_map,
            edge_map,
        },
        tags,
    )
}

// ---------------------------------------------------------------------------
// Embedded plane tropical curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EptSegment {
    pub a: usize,
    pub b: usize,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EptRay {
    pub base: usize,
    pub dir: LatticePoint,
    pub weight: u64,
}

/// Weighted embedded plane tropical curve: a planar graph of segments and
/// rays with positive integer weights, balanced at every vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EptCurve {
    pub vertices: Vec<RationalPoint>,
    pub segments: Vec<EptSegment>,
    pub rays: Vec<EptRay>,
}

impl EptCurve {
    /// Weighted primitive directions leaving vertex `v`.
    pub fn directions_at(&self, v: usize) -> Vec<WeightedDirection> {
        let mut out = Vec::new();
        for s in &self.segments {
            if s.a == v || s.b == v {
                let (from, to) = if s.a == v { (s.a, s.b) } else { (s.b, s.a) };
                let d = self.vertices[to].sub(&self.vertices[from]);
                let dir = rational_primitive(&d).expect("nonzero segment");
                out.push(WeightedDirection::new(dir, s.weight));
            }
        }
        for r in &self.rays {
            if r.base == v {
                out.push(WeightedDirection::new(r.dir, r.weight));
            }
        }
        out
    }

    /// Balancing report over all vertices.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        for v in 0..self.vertices.len() {
            let mut sum = LatticePoint::new(0, 0);
            for d in self.directions_at(v) {
                sum = sum.add(d.vector());
            }
            if sum.is_zero() {
                report.pass("ept-balance", format!("vertex {v} balanced"));
            } else {
                report.fail_at(
                    "ept-balance",
                    format!("vertex {v} at {}", self.vertices[v]),
                    format!("directions sum to {sum}"),
                );
            }
        }
        report
    }

    /// Unordered multiset of weighted ray directions.
    pub fn degree(&self) -> Vec<WeightedDirection> {
        let mut out: Vec<WeightedDirection> = self
            .rays
            .iter()
            .map(|r| WeightedDirection::new(r.dir, r.weight))
            .collect();
        out.sort_by(|a, b| angle_cmp(a.primitive, b.primitive).then(a.weight.cmp(&b.weight)));
        out
    }
}

/// Primitive integer direction of a nonzero rational vector.
pub fn rational_primitive(v: &RationalPoint) -> Option<LatticePoint> {
    if v.x.is_zero() && v.y.is_zero() {
        return None;
    }
    let scale = v.x.denom().clone() * v.y.denom().clone();
    let xi = (&v.x * BigRational::from_integer(scale.clone())).to_integer();
    let yi = (&v.y * BigRational::from_integer(scale)).to_integer();
    let g = num_integer::gcd(xi.clone(), yi.clone());
    let x: i64 = i64::try_from(&(xi / &g)).ok()?;
    let y: i64 = i64::try_from(&(yi / g)).ok()?;
    Some(LatticePoint::new(x, y))
}

// Overlay machinery for push_forward.

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Bound {
    NegInf,
    Finite(BigRational),
    PosInf,
}

#[derive(Debug, Clone)]
struct LinePiece {
    lo: Bound,
    hi: Bound,
    weight: u64,
}

/// Canonical key of a line: primitive direction with positive sign
/// convention plus the cross-product offset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct LineKey {
    dir: LatticePoint,
    offset: BigRational,
}

fn canonical_dir(u: LatticePoint) -> LatticePoint {
    if u.x > 0 || (u.x == 0 && u.y > 0) {
        u
    } else {
        u.neg()
    }
}

fn line_key(point: &RationalPoint, dir: LatticePoint) -> LineKey {
    let dir = canonical_dir(dir);
    LineKey {
        dir,
        offset: point.cross_int(dir),
    }
}

fn param_on(key: &LineKey, p: &RationalPoint) -> BigRational {
    p.dot_int(key.dir)
}

fn point_at(key: &LineKey, t: &BigRational) -> RationalPoint {
    // Solve dot(d, p) = t, cross(p, d) = offset.
    let d = key.dir;
    let n2 = lattice::rat(d.x * d.x + d.y * d.y);
    let x = (t * lattice::rat(d.x) + &key.offset * lattice::rat(d.y)) / n2.clone();
    let y = (t * lattice::rat(d.y) - &key.offset * lattice::rat(d.x)) / n2;
    RationalPoint::new(x, y)
}

/// Piece covers the closed atom [lo, hi].
fn covers(p: &LinePiece, lo: &Bound, hi: &Bound) -> bool {
    p.lo <= *lo && p.hi >= *hi
}

/// Push a PPT-curve forward to its embedded image: overlapping edge images
/// are merged with weights added, transverse crossings become vertices, and
/// collinear pass-throughs of constant weight are not vertices.
pub fn push_forward(c: &PptCurve) -> Result<EptCurve> {
    let mut lines: BTreeMap<LineKey, Vec<LinePiece>> = BTreeMap::new();
    for e in 0..c.graph.edge_count() {
        let edge = c.graph.edge(e);
        let d = c.direction(e);
        let tail_pos = c.position(edge.tail).clone();
        let key = line_key(&tail_pos, d.primitive);
        let t0 = param_on(&key, &tail_pos);
        let piece = if c.graph.is_end(e) {
            let positive = canonical_dir(d.primitive) == d.primitive;
            if positive {
                LinePiece {
                    lo: Bound::Finite(t0),
                    hi: Bound::PosInf,
                    weight: d.weight,
                }
            } else {
                LinePiece {
                    lo: Bound::NegInf,
                    hi: Bound::Finite(t0),
                    weight: d.weight,
                }
            }
        } else {
            let head_pos = c.position(edge.head).clone();
            let t1 = param_on(&key, &head_pos);
            let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            if lo == hi {
                return Err(Error::MalformedCurve(format!("edge {e} has a degenerate image")));
            }
            LinePiece {
                lo: Bound::Finite(lo),
                hi: Bound::Finite(hi),
                weight: d.weight,
            }
        };
        lines.entry(key).or_default().push(piece);
    }

    let keys: Vec<LineKey> = lines.keys().cloned().collect();

    // Atoms per line: split at piece endpoints and at crossings with other
    // lines, then weight each atom by the pieces covering it.
    let mut atoms: Vec<(LineKey, Bound, Bound, u64)> = Vec::new();
    for key in &keys {
        let pieces = &lines[key];
        let mut params: Vec<BigRational> = Vec::new();
        for p in pieces {
            if let Bound::Finite(t) = &p.lo {
                params.push(t.clone());
            }
            if let Bound::Finite(t) = &p.hi {
                params.push(t.clone());
            }
        }
        for other in &keys {
            if other == key {
                continue;
            }
            let p0 = point_at(key, &BigRational::zero());
            let q0 = point_at(other, &BigRational::zero());
            if let Some(x) = line_intersection(&p0, key.dir, &q0, other.dir) {
                let t_here = param_on(key, &x);
                let t_there = param_on(other, &x);
                let on_other = lines[other].iter().any(|pc| {
                    covers(pc, &Bound::Finite(t_there.clone()), &Bound::Finite(t_there.clone()))
                });
                if on_other {
                    params.push(t_here);
                }
            }
        }
        params.sort();
        params.dedup();

        let has_neg = pieces.iter().any(|p| p.lo == Bound::NegInf);
        let has_pos = pieces.iter().any(|p| p.hi == Bound::PosInf);
        let mut cuts: Vec<Bound> = Vec::new();
        if has_neg {
            cuts.push(Bound::NegInf);
        }
        cuts.extend(params.into_iter().map(Bound::Finite));
        if has_pos {
            cuts.push(Bound::PosInf);
        }
        for w in cuts.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            let weight: u64 = pieces
                .iter()
                .filter(|p| covers(p, lo, hi))
                .map(|p| p.weight)
                .sum();
            if weight > 0 {
                atoms.push((key.clone(), lo.clone(), hi.clone(), weight));
            }
        }
    }

    // Vertex candidates: finite atom endpoints.
    let mut candidate_points: Vec<RationalPoint> = Vec::new();
    for (key, lo, hi, _) in &atoms {
        for b in [lo, hi] {
            if let Bound::Finite(t) = b {
                candidate_points.push(point_at(key, t));
            }
        }
    }
    candidate_points.sort();
    candidate_points.dedup();

    // A candidate is a vertex of the image unless exactly two atoms of
    // equal weight on the same line meet there (collinear pass-through).
    let mut vertices: Vec<RationalPoint> = Vec::new();
    for p in &candidate_points {
        let mut incident: Vec<(&LineKey, u64)> = Vec::new();
        for (key, lo, hi, w) in &atoms {
            let t = param_on(key, p);
            let at_lo = matches!(lo, Bound::Finite(x) if *x == t);
            let at_hi = matches!(hi, Bound::Finite(x) if *x == t);
            if at_lo || at_hi {
                incident.push((key, *w));
            }
        }
        let collinear_pass =
            incident.len() == 2 && incident[0].0 == incident[1].0 && incident[0].1 == incident[1].1;
        if !collinear_pass {
            vertices.push(p.clone());
        }
    }

    let vertex_index = |p: &RationalPoint| vertices.iter().position(|q| q == p);
    let mut segments: Vec<EptSegment> = Vec::new();
    let mut rays: Vec<EptRay> = Vec::new();
    for key in &keys {
        let mut line_atoms: Vec<(Bound, Bound, u64)> = atoms
            .iter()
            .filter(|(k, _, _, _)| k == key)
            .map(|(_, lo, hi, w)| (lo.clone(), hi.clone(), *w))
            .collect();
        line_atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut i = 0;
        while i < line_atoms.len() {
            let (lo, mut hi, w) = line_atoms[i].clone();
            let mut j = i + 1;
            while j < line_atoms.len() {
                let (nlo, nhi, nw) = line_atoms[j].clone();
                let joinable = nlo == hi
                    && nw == w
                    && matches!(&hi, Bound::Finite(t)
                        if vertex_index(&point_at(key, t)).is_none());
                if joinable {
                    hi = nhi;
                    j += 1;
                } else {
                    break;
                }
            }
            let lost = || Error::MalformedCurve("overlay endpoint is not a vertex".into());
            match (&lo, &hi) {
                (Bound::Finite(t0), Bound::Finite(t1)) => {
                    let a = vertex_index(&point_at(key, t0)).ok_or_else(lost)?;
                    let b = vertex_index(&point_at(key, t1)).ok_or_else(lost)?;
                    segments.push(EptSegment { a, b, weight: w });
                }
                (Bound::NegInf, Bound::Finite(t)) => {
                    let b = vertex_index(&point_at(key, t)).ok_or_else(lost)?;
                    rays.push(EptRay {
                        base: b,
                        dir: key.dir.neg(),
                        weight: w,
                    });
                }
                (Bound::Finite(t), Bound::PosInf) => {
                    let b = vertex_index(&point_at(key, t)).ok_or_else(lost)?;
                    rays.push(EptRay {
                        base: b,
                        dir: key.dir,
                        weight: w,
                    });
                }
                _ => {
                    return Err(Error::MalformedCurve(
                        "overlay produced a full line without vertices".into(),
                    ))
                }
            }
            i = j;
        }
    }

    Ok(EptCurve {
        vertices,
        segments,
        rays,
    })
}

/// Where an end closes up on the boundary of the compactification defined
/// by a Newton polygon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundaryTarget {
    /// The end hits the interior of a side: side index (into
    /// `LatticePolygon::sides()`) plus the line parameter distinguishing
    /// parallel rays.
    Side { side: usize, param: BigRational },
    /// The direction is not an exterior normal of any side; the ray closes
    /// up at the corner between the adjacent sides (vertex index).
    Corner { vertex: usize },
}

/// Close up one end of a PPT-curve on the boundary of the compactification
/// associated with `delta`. Distinct parallel rays on distinct lines
/// receive distinct parameters.
pub fn compactify_end(c: &PptCurve, end: EdgeId, delta: &LatticePolygon) -> Result<BoundaryTarget> {
    if !c.graph.is_end(end) {
        return Err(Error::MalformedCurve(format!("edge {end} is not an end")));
    }
    let d = c.direction(end);
    let sides = delta.sides();
    if sides.is_empty() {
        return Err(Error::InvalidInput(
            "compactification needs a 2-dimensional polygon".into(),
        ));
    }
    if let Some(i) = sides.iter().position(|s| s.normal == d.primitive) {
        let base = c.position(c.graph.edge(end).tail);
        return Ok(BoundaryTarget::Side {
            side: i,
            param: base.cross_int(d.primitive),
        });
    }
    let n = sides.len();
    for i in 0..n {
        // Vertex sides[i].start sits between side i-1 and side i.
        let prev = &sides[(i + n - 1) % n];
        let next = &sides[i];
        let inside = prev.normal.cross(d.primitive) > 0 && d.primitive.cross(next.normal) > 0;
        if inside {
            return Ok(BoundaryTarget::Corner { vertex: i });
        }
    }
    Err(Error::MalformedCurve(format!(
        "direction {} matches no boundary cone of {}",
        d.primitive, delta
    )))
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

/// Canonical serialization of a marked curve used for deduplication and
/// isomorphism tests. With `up_to_translation` the positions are normalized
/// by subtracting the lexicographically smallest finite-vertex position.
pub fn canonical_key(m: &MarkedCurve, up_to_translation: bool) -> String {
    let c = &m.curve;
    let g = &c.graph;
    let shift = if up_to_translation {
        g.finite_vertices()
            .map(|v| c.position(v).clone())
            .min_by(|a, b| (&a.x, &a.y).cmp(&(&b.x, &b.y)))
            .unwrap_or_else(RationalPoint::zero)
    } else {
        RationalPoint::zero()
    };
    let pos = |v: VertexId| -> RationalPoint { c.position(v).sub(&shift) };

    let mut finite: Vec<VertexId> = g.finite_vertices().collect();
    let local = |v: VertexId| -> Vec<String> {
        let mut dirs: Vec<String> = g
            .incident_edges(v)
            .into_iter()
            .map(|e| {
                let d = c.direction_from(e, v);
                let len = match &g.edge(e).length {
                    EdgeLength::Finite(l) => format!("{l}"),
                    EdgeLength::Infinite => "inf".to_string(),
                };
                format!("{}:{}:{}", d.primitive, d.weight, len)
            })
            .collect();
        dirs.sort();
        dirs
    };
    finite.sort_by(|&a, &b| {
        let pa = pos(a);
        let pb = pos(b);
        (&pa.x, &pa.y)
            .cmp(&(&pb.x, &pb.y))
            .then_with(|| local(a).cmp(&local(b)))
    });
    let rank: BTreeMap<VertexId, usize> = finite.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    let mut edge_keys: Vec<String> = Vec::new();
    let mut end_rank: BTreeMap<EdgeId, String> = BTreeMap::new();
    for e in 0..g.edge_count() {
        let edge = g.edge(e);
        let d = c.direction(e);
        let key = if g.is_end(e) {
            let k = format!("end[{}]->{}x{}", rank[&edge.tail], d.weight, d.primitive);
            end_rank.insert(e, k.clone());
            k
        } else {
            let (lo, hi) = if rank[&edge.tail] <= rank[&edge.head] {
                (rank[&edge.tail], rank[&edge.head])
            } else {
                (rank[&edge.head], rank[&edge.tail])
            };
            format!("fin[{lo},{hi}]w{}", d.weight)
        };
        edge_keys.push(key);
    }
    let mut sorted_edges = edge_keys.clone();
    sorted_edges.sort();

    let mark_keys: Vec<String> = m
        .marks
        .iter()
        .enumerate()
        .map(|(i, mark)| {
            let addr = match &mark.addr {
                MarkAddr::Vertex(v) => match g.kind(*v) {
                    VertexKind::Finite => format!("v{}", rank[v]),
                    VertexKind::Infinite => {
                        let e = g.incident_edges(*v)[0];
                        format!("inf({})", end_rank[&e])
                    }
                },
                MarkAddr::OnEdge { edge, offset } => {
                    format!("e({})@{}", edge_keys[*edge], offset)
                }
            };
            format!("{i}:{addr}:{:?}:{}", mark.group, mark.mult)
        })
        .collect();

    let vertex_keys: Vec<String> = finite
        .iter()
        .map(|&v| format!("{}|{}", pos(v), local(v).join(",")))
        .collect();

    format!(
        "V[{}]E[{}]M[{}]",
        vertex_keys.join(";"),
        sorted_edges.join(";"),
        mark_keys.join(";")
    )
}

/// Isomorphism of marked curves as decorated graphs with equal plane images
/// (positions compared up to translation).
pub fn isomorphic_marked(a: &MarkedCurve, b: &MarkedCurve) -> bool {
    canonical_key(a, true) == canonical_key(b, true)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lattice::{rat, ratio};

    pub(crate) fn tripod(weights: [u64; 3], dirs: [(i64, i64); 3]) -> PptCurve {
        star(&[
            ((dirs[0].0, dirs[0].1), weights[0]),
            ((dirs[1].0, dirs[1].1), weights[1]),
            ((dirs[2].0, dirs[2].1), weights[2]),
        ])
    }

    pub(crate) fn line_tripod() -> PptCurve {
        tripod([1, 1, 1], [(-1, 0), (0, -1), (1, 1)])
    }

    pub(crate) fn star(dirs_weights: &[((i64, i64), u64)]) -> PptCurve {
        let n = dirs_weights.len();
        let mut vertices = vec![VertexKind::Finite];
        vertices.extend(std::iter::repeat(VertexKind::Infinite).take(n));
        let edges = (0..n)
            .map(|i| Edge {
                tail: 0,
                head: i + 1,
                length: EdgeLength::Infinite,
            })
            .collect();
        let graph = AbstractGraph::new(vertices, edges).unwrap();
        let mut positions = vec![Some(RationalPoint::zero())];
        positions.extend(std::iter::repeat(None).take(n));
        let directions = dirs_weights
            .iter()
            .map(|&((x, y), w)| WeightedDirection::new(LatticePoint::new(x, y), w))
            .collect();
        PptCurve::new(graph, positions, directions).unwrap()
    }

    #[test]
    fn genus_examples() {
        assert_eq!(genus(&line_tripod().graph), 0);

        let vertices = vec![
            VertexKind::Finite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Finite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
        ];
        let edges = vec![
            Edge { tail: 0, head: 1, length: EdgeLength::Infinite },
            Edge { tail: 0, head: 2, length: EdgeLength::Infinite },
            Edge { tail: 0, head: 3, length: EdgeLength::Infinite },
            Edge { tail: 4, head: 5, length: EdgeLength::Infinite },
            Edge { tail: 4, head: 6, length: EdgeLength::Infinite },
            Edge { tail: 4, head: 7, length: EdgeLength::Infinite },
        ];
        let g = AbstractGraph::new(vertices, edges).unwrap();
        assert_eq!(genus(&g), -1);

        // One cycle (two parallel finite edges) plus three ends; b1 = 1 by
        // the edge-vertex Euler count: 2 finite edges - 2 vertices + 1.
        let vertices = vec![
            VertexKind::Finite,
            VertexKind::Finite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
        ];
        let edges = vec![
            Edge { tail: 0, head: 1, length: EdgeLength::Finite(rat(1)) },
            Edge { tail: 0, head: 1, length: EdgeLength::Finite(rat(1)) },
            Edge { tail: 0, head: 2, length: EdgeLength::Infinite },
            Edge { tail: 1, head: 3, length: EdgeLength::Infinite },
            Edge { tail: 1, head: 4, length: EdgeLength::Infinite },
        ];
        let g = AbstractGraph::new(vertices, edges).unwrap();
        assert_eq!(genus(&g), 1);
    }

    #[test]
    fn validate_examples() {
        let good = line_tripod();
        assert!(validate_ppt(&good).is_clean());

        let bad = tripod([1, 1, 1], [(1, 0), (0, 1), (-1, 0)]);
        let report = validate_ppt(&bad);
        assert!(!report.is_clean());
        assert!(report.failures().any(|f| f.rule == "e1"));
        assert!(report.failures().any(|f| f.rule == "e8"));
    }

    #[test]
    fn degree_examples() {
        let c = line_tripod();
        let deg = degree(&c);
        assert_eq!(deg.len(), 3);
        let dirs: Vec<LatticePoint> = deg.iter().map(|d| d.primitive).collect();
        assert!(dirs.contains(&LatticePoint::new(-1, 0)));
        assert!(dirs.contains(&LatticePoint::new(0, -1)));
        assert!(dirs.contains(&LatticePoint::new(1, 1)));

        let weighted = tripod([2, 1, 1], [(1, 1), (-1, 0), (-1, -2)]);
        let deg = degree(&weighted);
        assert!(deg
            .iter()
            .any(|d| d.primitive == LatticePoint::new(1, 1) && d.weight == 2));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&line_tripod()).class, CurveClass::Simple);

        // 4-valent: a, b, b, c with the multiple pair b.
        let ps = star(&[((1, 2), 1), ((1, 0), 1), ((1, 0), 1), ((-3, -2), 1)]);
        let cl = classify(&ps);
        assert_eq!(cl.class, CurveClass::PseudoSimple);
        let multiple: Vec<EdgeId> = cl
            .tags
            .iter()
            .filter(|(_, t)| **t == EdgeTag::Multiple)
            .map(|((_, e), _)| *e)
            .collect();
        assert_eq!(multiple, vec![1, 2]);

        // 5-valent: a, b, b, c, c.
        let ps5 = star(&[
            ((1, 3), 1),
            ((1, 0), 1),
            ((1, 0), 1),
            ((-1, -1), 1),
            ((-1, -1), 2),
        ]);
        assert_eq!(classify(&ps5).class, CurveClass::PseudoSimple);

        // Three distinct directions among the non-distinguished edges.
        let bad = star(&[
            ((1, 3), 1),
            ((1, 0), 2),
            ((0, 1), 1),
            ((-1, -1), 2),
            ((-1, -2), 1),
        ]);
        assert_eq!(classify(&bad).class, CurveClass::Neither);
    }

    #[test]
    fn push_forward_injective_keeps_weights() {
        let c = line_tripod();
        let t = push_forward(&c).unwrap();
        assert_eq!(t.vertices.len(), 1);
        assert_eq!(t.rays.len(), 3);
        assert!(t.rays.iter().all(|r| r.weight == 1));
        assert!(t.validate().is_clean());
    }

    #[test]
    fn push_forward_merges_parallel_equal_images() {
        // Two vertices at (0,0) and (1,0), each with a rightward end along
        // y = 0; the overlap past (1,0) must carry weight 2.
        let vertices = vec![
            VertexKind::Finite,
            VertexKind::Finite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
        ];
        let edges = vec![
            Edge { tail: 0, head: 2, length: EdgeLength::Infinite },
            Edge { tail: 0, head: 3, length: EdgeLength::Infinite },
            Edge { tail: 0, head: 4, length: EdgeLength::Infinite },
            Edge { tail: 1, head: 5, length: EdgeLength::Infinite },
            Edge { tail: 1, head: 6, length: EdgeLength::Infinite },
            Edge { tail: 1, head: 7, length: EdgeLength::Infinite },
        ];
        let graph = AbstractGraph::new(vertices, edges).unwrap();
        let positions = vec![
            Some(RationalPoint::zero()),
            Some(RationalPoint::from_ints(1, 0)),
            None,
            None,
            None,
            None,
            None,
            None,
        ];
        let dir = |x, y, w| WeightedDirection::new(LatticePoint::new(x, y), w);
        let directions = vec![
            dir(1, 0, 1),
            dir(-1, 1, 1),
            dir(0, -1, 1),
            dir(1, 0, 1),
            dir(-1, 1, 1),
            dir(0, -1, 1),
        ];
        let c = PptCurve::new(graph, positions, directions).unwrap();
        let t = push_forward(&c).unwrap();
        let heavy: Vec<&EptRay> = t.rays.iter().filter(|r| r.weight == 2).collect();
        assert_eq!(heavy.len(), 1);
        assert_eq!(heavy[0].dir, LatticePoint::new(1, 0));
        assert_eq!(t.vertices[heavy[0].base], RationalPoint::from_ints(1, 0));
        assert!(t.segments.iter().any(|s| s.weight == 1));
        assert!(t.validate().is_clean());
    }

    #[test]
    fn compactify_end_examples() {
        let delta = LatticePolygon::hull(&[
            LatticePoint::new(0, 0),
            LatticePoint::new(1, 0),
            LatticePoint::new(0, 1),
        ])
        .unwrap();
        let c1 = line_tripod().translate(&RationalPoint::from_ints(3, 1));
        let t1 = compactify_end(&c1, 0, &delta).unwrap();
        let c2 = line_tripod().translate(&RationalPoint::from_ints(3, 2));
        let t2 = compactify_end(&c2, 0, &delta).unwrap();
        match (&t1, &t2) {
            (
                BoundaryTarget::Side { side: s1, param: p1 },
                BoundaryTarget::Side { side: s2, param: p2 },
            ) => {
                assert_eq!(s1, s2);
                assert_ne!(p1, p2);
            }
            _ => panic!("expected side targets"),
        }

        let t3 = compactify_end(&c1, 2, &delta).unwrap();
        let hyp = delta
            .sides()
            .iter()
            .position(|s| s.normal == LatticePoint::new(1, 1))
            .unwrap();
        match t3 {
            BoundaryTarget::Side { side, .. } => assert_eq!(side, hyp),
            _ => panic!("expected a side"),
        }

        let c4 = tripod([1, 1, 1], [(2, 1), (-1, 0), (-1, -1)]);
        match compactify_end(&c4, 0, &delta).unwrap() {
            BoundaryTarget::Corner { .. } => {}
            _ => panic!("expected a corner"),
        }
    }

    #[test]
    fn double_and_quotient_roundtrip() {
        let c = tripod([2, 1, 1], [(1, 1), (-1, 0), (-1, -2)]);
        let m = MarkedCurve::new(
            c,
            vec![
                Mark::simple_on_edge(0, rat(1)),
                Mark::simple_on_edge(1, ratio(1, 2)),
            ],
        )
        .unwrap();

        let trivial = double(&m, &BTreeSet::new()).unwrap();
        assert!(trivial.involution.is_identity());
        assert!(trivial.mark_tags.iter().all(|t| *t == RealTag::Re));

        let set: BTreeSet<EdgeId> = [0usize].into_iter().collect();
        let dbl = double(&m, &set).unwrap();
        assert_eq!(dbl.base.curve.graph.edge_count(), 4);
        assert_eq!(dbl.base.curve.weight(0), 1);
        let copy = dbl.involution.edge_map[0];
        assert_ne!(copy, 0);
        assert_eq!(dbl.base.curve.weight(copy), 1);
        assert_eq!(
            dbl.base.marks[0].addr,
            MarkAddr::OnEdge { edge: 0, offset: rat(2) }
        );
        assert_eq!(dbl.mark_tags[0], RealTag::Im);

        let q = quotient_by_involution(&dbl).unwrap();
        assert!(isomorphic_marked(&q, &m));

        let odd: BTreeSet<EdgeId> = [1usize].into_iter().collect();
        assert!(matches!(double(&m, &odd), Err(Error::OddWeightDouble(1))));
    }

    #[test]
    fn quotient_identity_is_isomorphic() {
        let c = line_tripod();
        let m = MarkedCurve::new(c, vec![Mark::simple_on_edge(0, rat(1))]).unwrap();
        let r = RealMarkedCurve::new(
            m.clone(),
            Involution::identity(&m.curve.graph),
            vec![RealTag::Re],
        )
        .unwrap();
        let q = quotient_by_involution(&r).unwrap();
        assert!(isomorphic_marked(&q, &m));
    }

    #[test]
    fn quotient_merges_swapped_mark_pairs() {
        let c = tripod([2, 1, 1], [(1, 1), (-1, 0), (-1, -2)]);
        let m = MarkedCurve::new(c, vec![Mark::simple_on_edge(0, rat(1))]).unwrap();
        let set: BTreeSet<EdgeId> = [0usize].into_iter().collect();
        let dbl = double(&m, &set).unwrap();
        assert_eq!(dbl.base.marks.len(), 2);
        let q = quotient_by_involution(&dbl).unwrap();
        assert_eq!(q.marks.len(), 1);
    }

    #[test]
    fn moment_relation_random_choices() {
        let c = tripod([1, 1, 1], [(2, 1), (-1, 1), (-1, -2)]);
        for k in 0..5 {
            let offs: Vec<(EdgeId, BigRational)> = (0..3)
                .map(|e| (e, ratio(3 * k as i64 + e as i64 + 1, 7)))
                .collect();
            assert!(check_moment_relation(&c, &offs).is_clean());
        }
    }

    #[test]
    fn degree_translation_invariant() {
        let c = tripod([1, 1, 1], [(2, 1), (-1, 1), (-1, -2)]);
        let d1 = degree(&c);
        let d2 = degree(&c.translate(&RationalPoint::from_ints(7, -3)));
        assert_eq!(d1, d2);
    }
}

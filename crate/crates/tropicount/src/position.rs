//! Point configurations, combinatorial types, the reconstruction solver,
//! edge orientation of marked curves, and genericity checking.
//!
//! The solver recovers the unique marked curve of a regular combinatorial
//! type through a configuration by solving an exact linear system: one base
//! position per component plus all finite edge lengths and mark offsets,
//! with incidence equations contributed by the marks. Strict positivity of
//! lengths and offsets is checked after solving; degenerate solutions are
//! rejected as lying on the boundary of the deformation space.

use crate::curve::{
    AbstractGraph, Edge, EdgeId, EdgeLength, Mark, MarkAddr, MarkGroup, MarkedCurve, PptCurve,
    VertexId, VertexKind,
};
use crate::error::{Error, Result};
use crate::lattice::{self, LatticePoint, LatticePolygon, RationalPoint, WeightedDirection};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// A point of a configuration: in the plane or on a boundary side of the
/// compactification (identified by side index and line parameter).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigPoint {
    Interior(RationalPoint),
    Boundary { side: usize, param: BigRational },
}

/// An ordered configuration of distinct points: boundary points first,
/// then interior points, matching the usual ordering conventions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub boundary: Vec<(usize, BigRational)>,
    pub interior: Vec<RationalPoint>,
}

impl Configuration {
    pub fn new(boundary: Vec<(usize, BigRational)>, interior: Vec<RationalPoint>) -> Result<Self> {
        let cfg = Configuration { boundary, interior };
        let mut seen = BTreeSet::new();
        for i in 0..cfg.len() {
            let key = format!("{:?}", cfg.point(i));
            if !seen.insert(key) {
                return Err(Error::InvalidInput(format!("duplicate configuration point {i}")));
            }
        }
        Ok(cfg)
    }

    pub fn len(&self) -> usize {
        self.boundary.len() + self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> ConfigPoint {
        if i < self.boundary.len() {
            let (side, param) = &self.boundary[i];
            ConfigPoint::Boundary {
                side: *side,
                param: param.clone(),
            }
        } else {
            ConfigPoint::Interior(self.interior[i - self.boundary.len()].clone())
        }
    }

    pub fn interior_points(&self) -> &[RationalPoint] {
        &self.interior
    }
}

/// A configuration with nonnegative integer weights per point.
#[derive(Debug, Clone)]
pub struct WeightedConfiguration {
    pub base: Configuration,
    pub weights: Vec<u32>,
}

impl WeightedConfiguration {
    pub fn new(base: Configuration, weights: Vec<u32>) -> Result<Self> {
        if weights.len() != base.len() {
            return Err(Error::InvalidInput("weight count mismatch".into()));
        }
        Ok(WeightedConfiguration { base, weights })
    }

    /// All-ones weights.
    pub fn simple(base: Configuration) -> Self {
        let weights = vec![1; base.len()];
        WeightedConfiguration { base, weights }
    }
}

/// Counts of marks per location class for configuration generation.
#[derive(Debug, Clone, Default)]
pub struct MarkLayout {
    pub interior: usize,
    /// Boundary point counts per side of the polygon.
    pub boundary_per_side: Vec<usize>,
}

impl MarkLayout {
    pub fn interior_only(n: usize) -> Self {
        MarkLayout {
            interior: n,
            boundary_per_side: Vec::new(),
        }
    }
}

/// Deterministic pseudo-random generic configuration: interior points on a
/// line whose slope has a huge denominator, with gaps growing by a factor
/// of at least two, so that no small-coefficient affine relation can hold.
/// Identical seeds reproduce the configuration bit-exactly.
pub fn stretched_config(delta: &LatticePolygon, layout: &MarkLayout, seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x74726f70);
    let dither = |rng: &mut ChaCha8Rng| -> BigRational {
        let num: i64 = rng.gen_range(1..(1 << 20) as i64);
        BigRational::new(num.into(), (1i64 << 40).into())
    };

    // Slope 13/8 plus a seed-dependent dither with denominator 2^40.
    let slope = lattice::ratio(13, 8) + dither(&mut rng);
    let x0 = lattice::rat(rng.gen_range(-64i64..64)) + dither(&mut rng);
    let y0 = lattice::rat(rng.gen_range(-64i64..64)) + dither(&mut rng);

    let mut interior = Vec::with_capacity(layout.interior);
    let mut t = BigRational::zero();
    let mut gap = BigRational::one();
    for _ in 0..layout.interior {
        t += &gap * (lattice::rat(1) + dither(&mut rng));
        gap *= lattice::rat(2);
        let x = &x0 + &t;
        let y = &y0 + &slope * &t;
        interior.push(RationalPoint::new(x, y));
    }

    let mut boundary = Vec::new();
    let sides = delta.sides();
    for (si, &count) in layout.boundary_per_side.iter().enumerate() {
        if si >= sides.len() {
            break;
        }
        let mut p = lattice::rat(rng.gen_range(-64i64..64)) + dither(&mut rng);
        let mut bgap = BigRational::one();
        for _ in 0..count {
            p += &bgap * (lattice::rat(1) + dither(&mut rng));
            bgap *= lattice::rat(2);
            boundary.push((si, p.clone()));
        }
    }

    Configuration { boundary, interior }
}

// ---------------------------------------------------------------------------
// Combinatorial types
// ---------------------------------------------------------------------------

/// Mark placement in a combinatorial type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TypeMark {
    /// Interior mark somewhere on this edge.
    OnEdge(EdgeId),
    /// Mark at a finite vertex.
    AtVertex(VertexId),
    /// End mark at an infinite vertex (closes on the boundary).
    AtEnd(VertexId),
}

/// A combinatorial type: the decorated graph of a marked PPT-curve without
/// positions or lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinatorialType {
    pub vertex_kinds: Vec<VertexKind>,
    /// (tail, head); ends have their finite endpoint as tail.
    pub edges: Vec<(VertexId, VertexId)>,
    pub directions: Vec<WeightedDirection>,
    pub marks: Vec<TypeMark>,
}

impl CombinatorialType {
    pub fn vertex_count(&self) -> usize {
        self.vertex_kinds.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_end(&self, e: EdgeId) -> bool {
        self.vertex_kinds[self.edges[e].1] == VertexKind::Infinite
    }

    pub fn incident_edges(&self, v: VertexId) -> Vec<EdgeId> {
        (0..self.edges.len())
            .filter(|&e| self.edges[e].0 == v || self.edges[e].1 == v)
            .collect()
    }

    pub fn direction_from(&self, e: EdgeId, v: VertexId) -> WeightedDirection {
        if self.edges[e].0 == v {
            self.directions[e]
        } else {
            self.directions[e].reversed()
        }
    }

    /// Balancing at every finite vertex plus the end-sum closure.
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.directions.len() {
            return Err(Error::MalformedGraph("direction count mismatch".into()));
        }
        for v in 0..self.vertex_count() {
            if self.vertex_kinds[v] != VertexKind::Finite {
                continue;
            }
            let mut sum = LatticePoint::new(0, 0);
            for e in self.incident_edges(v) {
                sum = sum.add(self.direction_from(e, v).vector());
            }
            if !sum.is_zero() {
                return Err(Error::MalformedGraph(format!("type unbalanced at vertex {v}")));
            }
        }
        let mut total = LatticePoint::new(0, 0);
        for e in 0..self.edge_count() {
            if self.is_end(e) {
                total = total.add(self.directions[e].vector());
            }
        }
        if !total.is_zero() {
            return Err(Error::OpenDegree(total.x, total.y));
        }
        Ok(())
    }

    /// Degree multiset of the type (weighted end directions).
    pub fn degree(&self) -> Vec<WeightedDirection> {
        let mut out: Vec<WeightedDirection> = (0..self.edge_count())
            .filter(|&e| self.is_end(e))
            .map(|e| self.directions[e])
            .collect();
        out.sort_by(|a, b| {
            lattice::angle_cmp(a.primitive, b.primitive).then(a.weight.cmp(&b.weight))
        });
        out
    }

    pub fn genus(&self) -> i64 {
        let finite: Vec<VertexId> = (0..self.vertex_count())
            .filter(|&v| self.vertex_kinds[v] == VertexKind::Finite)
            .collect();
        let index: BTreeMap<VertexId, usize> =
            finite.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut parent: Vec<usize> = (0..finite.len()).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut finite_edges = 0i64;
        for e in 0..self.edge_count() {
            if self.is_end(e) {
                continue;
            }
            finite_edges += 1;
            let a = find(&mut parent, index[&self.edges[e].0]);
            let b = find(&mut parent, index[&self.edges[e].1]);
            if a != b {
                parent[a] = b;
            }
        }
        let b0 = (0..finite.len())
            .filter(|&i| find(&mut parent, i) == i)
            .count() as i64;
        let b1 = finite_edges - finite.len() as i64 + b0;
        b1 - b0 + 1
    }

    /// Forget the metric data of a marked curve.
    pub fn from_marked_curve(m: &MarkedCurve) -> Self {
        let g = &m.curve.graph;
        let marks: Vec<TypeMark> = m
            .marks
            .iter()
            .map(|mark| match &mark.addr {
                MarkAddr::Vertex(v) => {
                    if g.kind(*v) == VertexKind::Infinite {
                        TypeMark::AtEnd(*v)
                    } else {
                        TypeMark::AtVertex(*v)
                    }
                }
                MarkAddr::OnEdge { edge, .. } => TypeMark::OnEdge(*edge),
            })
            .collect();
        CombinatorialType {
            vertex_kinds: (0..g.vertex_count()).map(|v| g.kind(v)).collect(),
            edges: g.edges().iter().map(|e| (e.tail, e.head)).collect(),
            directions: (0..g.edge_count()).map(|e| m.curve.direction(e)).collect(),
            marks,
        }
    }
}

// ---------------------------------------------------------------------------
// Regularity and component structure
// ---------------------------------------------------------------------------

/// Component decomposition of the complement of the marks. Vertices carry
/// their component index; edges that join (no interior mark, endpoints
/// unmarked) are listed per component.
struct MarkComplement {
    /// Component id per unmarked vertex.
    comp_of: BTreeMap<VertexId, usize>,
    count: usize,
    /// Joining edges per component.
    edges_in: Vec<Vec<EdgeId>>,
    /// Unmarked infinite vertices per component.
    infinite_in: Vec<Vec<VertexId>>,
}

fn mark_complement(
    vertex_kinds: &[VertexKind],
    edges: &[(VertexId, VertexId)],
    marked_vertices: &BTreeSet<VertexId>,
    edge_mark_counts: &BTreeMap<EdgeId, usize>,
) -> MarkComplement {
    let n = vertex_kinds.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let joins = |e: EdgeId| -> bool {
        edge_mark_counts.get(&e).copied().unwrap_or(0) == 0
            && !marked_vertices.contains(&edges[e].0)
            && !marked_vertices.contains(&edges[e].1)
    };
    for e in 0..edges.len() {
        if joins(e) {
            let a = find(&mut parent, edges[e].0);
            let b = find(&mut parent, edges[e].1);
            if a != b {
                parent[a] = b;
            }
        }
    }
    let mut roots: BTreeMap<usize, usize> = BTreeMap::new();
    let mut comp_of = BTreeMap::new();
    for v in 0..n {
        if marked_vertices.contains(&v) {
            continue;
        }
        let r = find(&mut parent, v);
        let next = roots.len();
        let id = *roots.entry(r).or_insert(next);
        comp_of.insert(v, id);
    }
    let count = roots.len();
    let mut edges_in = vec![Vec::new(); count];
    let mut infinite_in = vec![Vec::new(); count];
    for e in 0..edges.len() {
        if joins(e) {
            edges_in[comp_of[&edges[e].0]].push(e);
        }
    }
    for v in 0..n {
        if vertex_kinds[v] == VertexKind::Infinite && !marked_vertices.contains(&v) {
            infinite_in[comp_of[&v]].push(v);
        }
    }
    MarkComplement {
        comp_of,
        count,
        edges_in,
        infinite_in,
    }
}

fn complement_of_type(t: &CombinatorialType) -> MarkComplement {
    let mut marked_vertices = BTreeSet::new();
    let mut edge_marks: BTreeMap<EdgeId, usize> = BTreeMap::new();
    for m in &t.marks {
        match m {
            TypeMark::AtVertex(v) | TypeMark::AtEnd(v) => {
                marked_vertices.insert(*v);
            }
            TypeMark::OnEdge(e) => {
                *edge_marks.entry(*e).or_insert(0) += 1;
            }
        }
    }
    mark_complement(&t.vertex_kinds, &t.edges, &marked_vertices, &edge_marks)
}

fn complement_of_marked(m: &MarkedCurve) -> MarkComplement {
    let g = &m.curve.graph;
    let mut marked_vertices = BTreeSet::new();
    let mut edge_marks: BTreeMap<EdgeId, usize> = BTreeMap::new();
    for mark in &m.marks {
        match &mark.addr {
            MarkAddr::Vertex(v) => {
                marked_vertices.insert(*v);
            }
            MarkAddr::OnEdge { edge, .. } => {
                *edge_marks.entry(*edge).or_insert(0) += 1;
            }
        }
    }
    let kinds: Vec<VertexKind> = (0..g.vertex_count()).map(|v| g.kind(v)).collect();
    let edges: Vec<(VertexId, VertexId)> = g.edges().iter().map(|e| (e.tail, e.head)).collect();
    mark_complement(&kinds, &edges, &marked_vertices, &edge_marks)
}

fn complement_is_regular(c: &MarkComplement, multi_marked_edge: bool) -> bool {
    if multi_marked_edge {
        // A piece between two interior marks carries no end at infinity.
        return false;
    }
    for id in 0..c.count {
        if c.infinite_in[id].len() != 1 {
            return false;
        }
        let vertices = c.comp_of.values().filter(|&&x| x == id).count() as i64;
        let b1 = c.edges_in[id].len() as i64 - vertices + 1;
        if b1 != 0 {
            return false;
        }
    }
    true
}

/// Regularity of a marked curve: every component of the complement of the
/// marks is a tree containing exactly one vertex at infinity.
pub fn check_regular(m: &MarkedCurve) -> bool {
    let mut per_edge: BTreeMap<EdgeId, usize> = BTreeMap::new();
    for mark in &m.marks {
        if let MarkAddr::OnEdge { edge, .. } = &mark.addr {
            *per_edge.entry(*edge).or_insert(0) += 1;
        }
    }
    let multi = per_edge.values().any(|&k| k > 1);
    complement_is_regular(&complement_of_marked(m), multi)
}

/// Regularity of a combinatorial type.
pub fn check_regular_type(t: &CombinatorialType) -> bool {
    let mut per_edge: BTreeMap<EdgeId, usize> = BTreeMap::new();
    for m in &t.marks {
        if let TypeMark::OnEdge(e) = m {
            *per_edge.entry(*e).or_insert(0) += 1;
        }
    }
    let multi = per_edge.values().any(|&k| k > 1);
    complement_is_regular(&complement_of_type(t), multi)
}

/// Orientation of the complement of the marks: every edge points toward
/// the unique unmarked end of its component, so each unmarked finite
/// vertex has exactly one outgoing edge.
#[derive(Debug, Clone)]
pub struct Orientation {
    /// Outgoing edge at each unmarked finite vertex.
    pub outgoing: BTreeMap<VertexId, EdgeId>,
    /// Vertices whose outgoing edge is multiple at that vertex (violating
    /// the orientation lemma; empty on valid inputs).
    pub simple_violations: Vec<(VertexId, EdgeId)>,
}

pub fn orient_components(m: &MarkedCurve) -> Result<Orientation> {
    let g = &m.curve.graph;
    let comp = complement_of_marked(m);
    let mut per_edge: BTreeMap<EdgeId, usize> = BTreeMap::new();
    for mark in &m.marks {
        if let MarkAddr::OnEdge { edge, .. } = &mark.addr {
            *per_edge.entry(*edge).or_insert(0) += 1;
        }
    }
    if !complement_is_regular(&comp, per_edge.values().any(|&k| k > 1)) {
        // Identify the failing component for the error message.
        for id in 0..comp.count {
            let ends = comp.infinite_in[id].len();
            if ends != 1 {
                return Err(Error::NotRegular(format!(
                    "component {id} contains {ends} unmarked ends"
                )));
            }
        }
        return Err(Error::NotRegular("a component is not a tree".into()));
    }

    let tags = crate::curve::classify(&m.curve).tags;
    let mut outgoing = BTreeMap::new();
    let mut simple_violations = Vec::new();
    for id in 0..comp.count {
        let inf = comp.infinite_in[id][0];
        // Root the component at the finite tail of the unmarked end.
        let end_edge = g.incident_edges(inf)[0];
        let root = g.edge(end_edge).tail;
        if !comp.comp_of.contains_key(&root) || comp.comp_of[&root] != id {
            // Trivial component: a dangling end with a marked interior.
            continue;
        }
        outgoing.insert(root, end_edge);
        // BFS over joining edges.
        let mut queue = VecDeque::from([root]);
        let mut seen: BTreeSet<VertexId> = [root].into_iter().collect();
        while let Some(v) = queue.pop_front() {
            for &e in &comp.edges_in[id] {
                let (a, b) = (g.edge(e).tail, g.edge(e).head);
                if a != v && b != v {
                    continue;
                }
                let w = if a == v { b } else { a };
                if g.kind(w) == VertexKind::Infinite || seen.contains(&w) {
                    continue;
                }
                seen.insert(w);
                outgoing.insert(w, e);
                queue.push_back(w);
            }
        }
    }

    for (&v, &e) in &outgoing {
        if let Some(tag) = tags.get(&(v, e)) {
            if *tag == crate::curve::EdgeTag::Multiple {
                simple_violations.push((v, e));
            }
        }
    }

    Ok(Orientation {
        outgoing,
        simple_violations,
    })
}

// ---------------------------------------------------------------------------
// Exact linear algebra
// ---------------------------------------------------------------------------

/// Dense exact linear system `A x = b`.
pub(crate) struct LinearSystem {
    pub cols: usize,
    pub rows: Vec<(Vec<BigRational>, BigRational)>,
}

pub(crate) enum LinearSolution {
    Inconsistent,
    /// Unique solution vector.
    Unique(Vec<BigRational>),
    /// Consistent but underdetermined: a particular solution plus a basis
    /// of the null space.
    Under {
        particular: Vec<BigRational>,
        null_basis: Vec<Vec<BigRational>>,
    },
}

impl LinearSystem {
    pub fn new(cols: usize) -> Self {
        LinearSystem {
            cols,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, coeffs: Vec<BigRational>, rhs: BigRational) {
        debug_assert_eq!(coeffs.len(), self.cols);
        self.rows.push((coeffs, rhs));
    }

    pub fn solve(&self) -> LinearSolution {
        let mut m: Vec<(Vec<BigRational>, BigRational)> = self.rows.clone();
        let cols = self.cols;
        let mut pivot_of_col: Vec<Option<usize>> = vec![None; cols];
        let mut rank = 0usize;
        for col in 0..cols {
            let Some(pr) = (rank..m.len()).find(|&r| !m[r].0[col].is_zero()) else {
                continue;
            };
            m.swap(rank, pr);
            let pivot = m[rank].0[col].clone();
            for x in m[rank].0.iter_mut() {
                *x /= &pivot;
            }
            m[rank].1 /= &pivot;
            for r in 0..m.len() {
                if r != rank && !m[r].0[col].is_zero() {
                    let factor = m[r].0[col].clone();
                    for c in 0..cols {
                        let delta = &factor * &m[rank].0[c];
                        m[r].0[c] -= delta;
                    }
                    let delta = &factor * &m[rank].1;
                    m[r].1 -= delta;
                }
            }
            pivot_of_col[col] = Some(rank);
            rank += 1;
        }
        for (coeffs, rhs) in m.iter().skip(rank) {
            debug_assert!(coeffs.iter().all(|c| c.is_zero()));
            if !rhs.is_zero() {
                return LinearSolution::Inconsistent;
            }
        }
        let free_cols: Vec<usize> = (0..cols).filter(|&c| pivot_of_col[c].is_none()).collect();
        let mut particular = vec![BigRational::zero(); cols];
        for col in 0..cols {
            if let Some(r) = pivot_of_col[col] {
                particular[col] = m[r].1.clone();
            }
        }
        if free_cols.is_empty() {
            return LinearSolution::Unique(particular);
        }
        let mut null_basis = Vec::new();
        for &fc in &free_cols {
            let mut vec = vec![BigRational::zero(); cols];
            vec[fc] = BigRational::one();
            for col in 0..cols {
                if let Some(r) = pivot_of_col[col] {
                    vec[col] = -m[r].0[fc].clone();
                }
            }
            null_basis.push(vec);
        }
        LinearSolution::Under {
            particular,
            null_basis,
        }
    }
}

/// Fourier-Motzkin feasibility of strict inequalities `a . y > b` over free
/// variables `y`. Constant rows degenerate to direct checks.
pub(crate) fn strict_feasible(mut rows: Vec<(Vec<BigRational>, BigRational)>) -> bool {
    let dims = rows.first().map(|(a, _)| a.len()).unwrap_or(0);
    for dim in (0..dims).rev() {
        let mut pos: Vec<(Vec<BigRational>, BigRational)> = Vec::new();
        let mut neg: Vec<(Vec<BigRational>, BigRational)> = Vec::new();
        let mut rest: Vec<(Vec<BigRational>, BigRational)> = Vec::new();
        for (a, b) in rows {
            if a[dim].is_positive() {
                pos.push((a, b));
            } else if a[dim].is_negative() {
                neg.push((a, b));
            } else {
                rest.push((a, b));
            }
        }
        // Eliminate y[dim]: each (pos, neg) pair yields a combined strict
        // inequality; pure pos or neg rows are always satisfiable in dim.
        for (ap, bp) in &pos {
            for (an, bn) in &neg {
                // ap.y > bp gives y_dim > (bp - rest)/ap_dim; an.y > bn
                // gives y_dim < (rest - bn)/(-an_dim). Combine.
                let scale_p = ap[dim].clone();
                let scale_n = -an[dim].clone();
                let mut combined = vec![BigRational::zero(); dims];
                for c in 0..dims {
                    if c == dim {
                        continue;
                    }
                    combined[c] = &ap[c] * &scale_n + &an[c] * &scale_p;
                }
                let rhs = bp * &scale_n + bn * &scale_p;
                rest.push((combined, rhs));
            }
        }
        rows = rest;
    }
    rows.iter().all(|(_, b)| b.is_negative())
}

// ---------------------------------------------------------------------------
// The reconstruction solver
// ---------------------------------------------------------------------------

/// Outcome of solving a type against a configuration.
#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Unique(MarkedCurve),
    /// The linear system is inconsistent or a positivity constraint fails.
    NoSolution,
    /// The system is consistent but underdetermined, which signals a
    /// non-generic configuration for this type.
    Degenerate(String),
}

/// Solve for the unique marked curve of a regular combinatorial type
/// through the configuration (type marks matched to configuration points
/// in order).
pub fn solve_type(t: &CombinatorialType, cfg: &Configuration) -> Result<SolveOutcome> {
    t.validate()?;
    if !check_regular_type(t) {
        return Err(Error::NotRegular("type is not regular".into()));
    }
    if t.marks.len() != cfg.len() {
        return Err(Error::InvalidInput(format!(
            "type has {} marks but the configuration has {} points",
            t.marks.len(),
            cfg.len()
        )));
    }
    solve_type_unchecked(t, cfg, None)
}

/// Inner solver; `delta` supplies the boundary sides for end marks. The
/// regularity and balancing of `t` are the caller's responsibility.
pub fn solve_type_unchecked(
    t: &CombinatorialType,
    cfg: &Configuration,
    delta: Option<&LatticePolygon>,
) -> Result<SolveOutcome> {
    // Column layout: 2 per component base, then one per finite edge
    // (length), then one per interior mark (offset).
    let finite_edges: Vec<EdgeId> = (0..t.edge_count()).filter(|&e| !t.is_end(e)).collect();
    let edge_col: BTreeMap<EdgeId, usize> =
        finite_edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();

    // Components over all vertices (graph connectivity).
    let n = t.vertex_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in 0..t.edge_count() {
        let a = find(&mut parent, t.edges[e].0);
        let b = find(&mut parent, t.edges[e].1);
        if a != b {
            parent[a] = b;
        }
    }
    let mut comp_index: BTreeMap<usize, usize> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        let next = comp_index.len();
        comp_index.entry(r).or_insert(next);
    }
    let comp_of = |parent: &mut Vec<usize>, v: usize, idx: &BTreeMap<usize, usize>| -> usize {
        idx[&find(parent, v)]
    };
    let comp_count = comp_index.len();

    let base_cols = 2 * comp_count;
    let len_cols = finite_edges.len();
    let offset_col_start = base_cols + len_cols;
    let interior_mark_cols: Vec<usize> = t
        .marks
        .iter()
        .enumerate()
        .filter(|(_, m)| matches!(m, TypeMark::OnEdge(_)))
        .map(|(i, _)| i)
        .collect();
    let offset_col: BTreeMap<usize, usize> = interior_mark_cols
        .iter()
        .enumerate()
        .map(|(k, &i)| (i, offset_col_start + k))
        .collect();
    let cols = offset_col_start + interior_mark_cols.len();

    // Express vertex positions: spanning tree per component from the base
    // vertex, position = base + sum of signed length terms.
    // expr[v] = (coeff vector for x, coeff vector for y, constant 0).
    // Since every term is length * weight * direction, the x and y parts
    // share the same length coefficients scaled by the direction.
    let mut expr_x: Vec<Option<Vec<BigRational>>> = vec![None; n];
    let mut expr_y: Vec<Option<Vec<BigRational>>> = vec![None; n];
    let mut extra_rows: Vec<(Vec<BigRational>, BigRational)> = Vec::new();

    for v in 0..n {
        if t.vertex_kinds[v] != VertexKind::Finite {
            continue;
        }
        if expr_x[v].is_some() {
            continue;
        }
        let comp = comp_of(&mut parent, v, &comp_index);
        let mut ex = vec![BigRational::zero(); cols];
        ex[2 * comp] = BigRational::one();
        let mut ey = vec![BigRational::zero(); cols];
        ey[2 * comp + 1] = BigRational::one();
        expr_x[v] = Some(ex);
        expr_y[v] = Some(ey);
        // BFS through finite edges.
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &e in &finite_edges {
                let (a, b) = t.edges[e];
                if a != u && b != u {
                    continue;
                }
                let w = if a == u { b } else { a };
                let d = t.direction_from(e, u);
                let step = d.vector();
                if expr_x[w].is_none() {
                    let mut ex = expr_x[u].clone().unwrap();
                    ex[base_cols + edge_col[&e]] += lattice::rat(step.x);
                    let mut ey = expr_y[u].clone().unwrap();
                    ey[base_cols + edge_col[&e]] += lattice::rat(step.y);
                    expr_x[w] = Some(ex);
                    expr_y[w] = Some(ey);
                    queue.push_back(w);
                } else {
                    // Cycle closure: pos(w) = pos(u) + len * step, i.e.
                    // expr[w] - expr[u] - len*step = 0. Record once per
                    // cycle edge; duplicates are harmless for the solver
                    // but wasteful, so only add when u is the tail.
                    if a == u {
                        let mut row_x = expr_x[u].clone().unwrap();
                        let mut row_y = expr_y[u].clone().unwrap();
                        row_x[base_cols + edge_col[&e]] += lattice::rat(step.x);
                        row_y[base_cols + edge_col[&e]] += lattice::rat(step.y);
                        let wx = expr_x[w].clone().unwrap();
                        let wy = expr_y[w].clone().unwrap();
                        for c in 0..cols {
                            row_x[c] -= &wx[c];
                            row_y[c] -= &wy[c];
                        }
                        extra_rows.push((row_x, BigRational::zero()));
                        extra_rows.push((row_y, BigRational::zero()));
                    }
                }
            }
        }
    }

    let mut system = LinearSystem::new(cols);
    for row in extra_rows {
        system.push(row.0, row.1);
    }

    // Mark incidence equations.
    for (i, mark) in t.marks.iter().enumerate() {
        match (mark, cfg.point(i)) {
            (TypeMark::OnEdge(e), ConfigPoint::Interior(x)) => {
                let tail = t.edges[*e].0;
                let d = t.directions[*e];
                let step = d.vector();
                let mut row_x = expr_x[tail].clone().ok_or_else(|| {
                    Error::MalformedGraph(format!("edge {e} tail has no position expression"))
                })?;
                let mut row_y = expr_y[tail].clone().unwrap();
                row_x[offset_col[&i]] += lattice::rat(step.x);
                row_y[offset_col[&i]] += lattice::rat(step.y);
                system.push(row_x, x.x.clone());
                system.push(row_y, x.y.clone());
            }
            (TypeMark::AtVertex(v), ConfigPoint::Interior(x)) => {
                system.push(expr_x[*v].clone().unwrap(), x.x.clone());
                system.push(expr_y[*v].clone().unwrap(), x.y.clone());
            }
            (TypeMark::AtEnd(v), ConfigPoint::Boundary { side, param }) => {
                let delta = delta.ok_or_else(|| {
                    Error::InvalidInput(
                        "boundary marks require the Newton polygon for side data".into(),
                    )
                })?;
                let sides = delta.sides();
                if side >= sides.len() {
                    return Err(Error::InvalidInput(format!("side {side} out of range")));
                }
                let e = t
                    .incident_edges(*v)
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::MalformedGraph(format!("end vertex {v} isolated")))?;
                let d = t.directions[e];
                if d.primitive != sides[side].normal {
                    return Ok(SolveOutcome::NoSolution);
                }
                // Line parameter: cross(tail_pos, u) = param.
                let tail = t.edges[e].0;
                let ex = expr_x[tail].clone().unwrap();
                let ey = expr_y[tail].clone().unwrap();
                let mut row = vec![BigRational::zero(); cols];
                for c in 0..cols {
                    row[c] = &ex[c] * lattice::rat(d.primitive.y)
                        - &ey[c] * lattice::rat(d.primitive.x);
                }
                system.push(row, param.clone());
            }
            (mark, point) => {
                return Err(Error::InvalidInput(format!(
                    "mark {i} ({mark:?}) does not match configuration point {point:?}"
                )))
            }
        }
    }

    let values = match system.solve() {
        LinearSolution::Inconsistent => return Ok(SolveOutcome::NoSolution),
        LinearSolution::Under { .. } => {
            return Ok(SolveOutcome::Degenerate(
                "solution space is positive-dimensional".into(),
            ))
        }
        LinearSolution::Unique(v) => v,
    };

    // Positivity: all lengths strictly positive.
    for (&e, &col) in &edge_col {
        if !values[base_cols + col].is_positive() {
            let _ = e;
            return Ok(SolveOutcome::NoSolution);
        }
    }
    // Offsets strictly inside their edges.
    for (&i, &col) in &offset_col {
        if !values[col].is_positive() {
            return Ok(SolveOutcome::NoSolution);
        }
        if let TypeMark::OnEdge(e) = t.marks[i] {
            if let Some(&lcol) = edge_col.get(&e) {
                if values[col] >= values[base_cols + lcol] {
                    return Ok(SolveOutcome::NoSolution);
                }
            }
        }
    }

    // Materialize the curve.
    let eval = |expr: &Vec<BigRational>| -> BigRational {
        expr.iter()
            .zip(values.iter())
            .map(|(a, b)| a * b)
            .sum::<BigRational>()
    };
    let mut positions: Vec<Option<RationalPoint>> = vec![None; n];
    for v in 0..n {
        if t.vertex_kinds[v] == VertexKind::Finite {
            positions[v] = Some(RationalPoint::new(
                eval(expr_x[v].as_ref().unwrap()),
                eval(expr_y[v].as_ref().unwrap()),
            ));
        }
    }
    let edges: Vec<Edge> = (0..t.edge_count())
        .map(|e| {
            let (tail, head) = t.edges[e];
            let length = if t.is_end(e) {
                EdgeLength::Infinite
            } else {
                EdgeLength::Finite(values[base_cols + edge_col[&e]].clone())
            };
            Edge { tail, head, length }
        })
        .collect();
    let graph = AbstractGraph::new(t.vertex_kinds.clone(), edges)?;
    let curve = PptCurve::new(graph, positions, t.directions.clone())?;
    let marks: Vec<Mark> = t
        .marks
        .iter()
        .enumerate()
        .map(|(i, mark)| match mark {
            TypeMark::OnEdge(e) => Mark {
                addr: MarkAddr::OnEdge {
                    edge: *e,
                    offset: values[offset_col[&i]].clone(),
                },
                group: MarkGroup::Simple,
                mult: crate::curve::MarkMult::One,
            },
            TypeMark::AtVertex(v) => Mark::double_at_vertex(*v),
            TypeMark::AtEnd(v) => Mark::end(*v),
        })
        .collect();
    match MarkedCurve::new(curve, marks) {
        Ok(m) => Ok(SolveOutcome::Unique(m)),
        // Coincident marks and similar degeneracies surface here.
        Err(_) => Ok(SolveOutcome::NoSolution),
    }
}

/// Check that the marks exhaust the preimages of the interior
/// configuration points: no unmarked part of the curve passes through any
/// of them. End images are checked against the boundary parameters when
/// the polygon is supplied.
pub fn marks_exhaust_preimages(
    m: &MarkedCurve,
    cfg: &Configuration,
    delta: Option<&LatticePolygon>,
) -> bool {
    let c = &m.curve;
    let marked_addrs: BTreeSet<String> =
        m.marks.iter().map(|mk| format!("{:?}", mk.addr)).collect();
    for i in 0..cfg.len() {
        match cfg.point(i) {
            ConfigPoint::Interior(x) => {
                // Vertices at x.
                for v in c.graph.finite_vertices() {
                    if *c.position(v) == x {
                        let addr = MarkAddr::Vertex(v);
                        if !marked_addrs.contains(&format!("{addr:?}")) {
                            return false;
                        }
                    }
                }
                // Edge interiors through x.
                for e in 0..c.graph.edge_count() {
                    let edge = c.graph.edge(e);
                    let d = c.direction(e);
                    let base = c.position(edge.tail);
                    let rel = x.sub(base);
                    if !rel.cross_int(d.primitive).is_zero() {
                        continue;
                    }
                    let along = rel.dot_int(d.primitive);
                    if !along.is_positive() {
                        continue;
                    }
                    let inside = if c.graph.is_end(e) {
                        true
                    } else {
                        let span = c.position(edge.head).sub(base).dot_int(d.primitive);
                        along < span
                    };
                    if inside {
                        // Offset in metric units: along = offset * weight * |u|^2
                        // is not needed; compare by position instead.
                        let hit = m.marks.iter().any(|mk| match &mk.addr {
                            MarkAddr::OnEdge { edge: me, offset } if *me == e => {
                                c.point_on_edge(e, offset) == x
                            }
                            _ => false,
                        });
                        if !hit {
                            return false;
                        }
                    }
                }
            }
            ConfigPoint::Boundary { side, param } => {
                let Some(delta) = delta else { continue };
                let sides = delta.sides();
                if side >= sides.len() {
                    return false;
                }
                for e in c.graph.ends() {
                    let d = c.direction(e);
                    if d.primitive != sides[side].normal {
                        continue;
                    }
                    let base = c.position(c.graph.edge(e).tail);
                    if base.cross_int(d.primitive) == param {
                        let inf = c.graph.edge(e).head;
                        let addr = MarkAddr::Vertex(inf);
                        if !marked_addrs.contains(&format!("{addr:?}")) {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Genericity
// ---------------------------------------------------------------------------

/// Outcome of the bounded genericity decision procedure.
#[derive(Debug, Clone)]
pub enum GenericityOutcome {
    Generic,
    /// A matching end-marked curve exists; the description names it.
    Witness(String),
    /// The enumeration budget was exhausted before the search completed.
    Inconclusive,
}

/// Candidate primitive directions: vectors orthogonal to integral segments
/// of the polygon (both signs).
pub fn candidate_directions(delta: &LatticePolygon) -> Vec<LatticePoint> {
    let (interior, boundary) = delta.lattice_points();
    let mut points = interior;
    points.extend(boundary);
    let mut out: BTreeSet<LatticePoint> = BTreeSet::new();
    for (i, a) in points.iter().enumerate() {
        for b in points.iter().skip(i + 1) {
            let d = b.sub(*a);
            if d.is_zero() {
                continue;
            }
            let g = num_integer::gcd(d.x.abs(), d.y.abs());
            let p = LatticePoint::new(d.x / g, d.y / g).rot90();
            out.insert(p);
            out.insert(p.neg());
        }
    }
    out.into_iter().collect()
}

/// Bounded decision procedure for Delta-genericity: enumerates end-marked
/// irreducible rational types with at most `|boundary lattice points|`
/// ends and edge directions orthogonal to integral segments of the
/// polygon, and attempts to match every weighted subconfiguration. The
/// budget bounds the number of (type, assignment) pairs examined.
pub fn check_delta_generic(
    cfg: &WeightedConfiguration,
    delta: &LatticePolygon,
    budget: u64,
) -> GenericityOutcome {
    let mut remaining = budget;
    let dirs = candidate_directions(delta);
    let max_ends = delta.lattice_points().1.len();
    let max_weight = delta
        .sides()
        .iter()
        .map(|s| s.length)
        .max()
        .unwrap_or(1);

    // Straight lines: a single doubly-infinite edge matching two points.
    // Two interior points on a common line with a candidate direction, or
    // an interior point whose candidate line hits a marked boundary
    // parameter, witness non-genericity.
    let pts = &cfg.base;
    let sides = delta.sides();
    for d in &dirs {
        for i in 0..pts.len() {
            if cfg.weights[i] == 0 {
                continue;
            }
            for j in i + 1..pts.len() {
                if cfg.weights[j] == 0 {
                    continue;
                }
                if remaining == 0 {
                    return GenericityOutcome::Inconclusive;
                }
                remaining -= 1;
                match (pts.point(i), pts.point(j)) {
                    (ConfigPoint::Interior(a), ConfigPoint::Interior(b)) => {
                        if b.sub(&a).cross_int(*d).is_zero() {
                            return GenericityOutcome::Witness(format!(
                                "points {i} and {j} lie on a line with direction {d}"
                            ));
                        }
                    }
                    (ConfigPoint::Interior(a), ConfigPoint::Boundary { side, param })
                    | (ConfigPoint::Boundary { side, param }, ConfigPoint::Interior(a)) => {
                        if side < sides.len()
                            && sides[side].normal == *d
                            && a.cross_int(*d) == param
                        {
                            return GenericityOutcome::Witness(format!(
                                "point {i} and boundary point {j} lie on a line with direction {d}"
                            ));
                        }
                    }
                    (
                        ConfigPoint::Boundary { side: s1, param: p1 },
                        ConfigPoint::Boundary { side: s2, param: p2 },
                    ) => {
                        if s1 < sides.len()
                            && s2 < sides.len()
                            && sides[s1].normal == *d
                            && sides[s2].normal == d.neg()
                            && p1 == -p2.clone()
                        {
                            return GenericityOutcome::Witness(format!(
                                "boundary points {i} and {j} share the line with direction {d}"
                            ));
                        }
                    }
                }
            }
        }
    }

    // Star and tree types with 3..=max_ends ends.
    let interior_idx: Vec<usize> = (0..pts.len())
        .filter(|&i| matches!(pts.point(i), ConfigPoint::Interior(_)) && cfg.weights[i] > 0)
        .collect();
    for m in 3..=max_ends.min(6) {
        let mut multiset: Vec<WeightedDirection> = Vec::new();
        if !enumerate_end_multisets(
            &dirs,
            max_weight,
            m,
            LatticePoint::new(0, 0),
            0,
            &mut multiset,
            &mut |ends| {
                // All trees on this end multiset.
                for tree in rational_trees(ends) {
                    // Assignments of marks (one per end) to interior
                    // points respecting weights.
                    let mut assign = vec![usize::MAX; ends.len()];
                    if !assign_and_test(
                        &tree,
                        ends,
                        &interior_idx,
                        cfg,
                        0,
                        &mut assign,
                        &mut remaining,
                    ) {
                        return false; // witness found or budget exhausted
                    }
                }
                true
            },
        ) {
            if remaining == 0 {
                return GenericityOutcome::Inconclusive;
            }
            return GenericityOutcome::Witness("an end-marked tree matches the configuration".into());
        }
    }

    GenericityOutcome::Generic
}

/// Enumerate multisets of `m` weighted directions summing to zero.
/// Returns false if the callback reports a witness.
fn enumerate_end_multisets(
    dirs: &[LatticePoint],
    max_weight: u64,
    m: usize,
    partial_sum: LatticePoint,
    start: usize,
    acc: &mut Vec<WeightedDirection>,
    callback: &mut impl FnMut(&[WeightedDirection]) -> bool,
) -> bool {
    if acc.len() == m {
        if partial_sum.is_zero() {
            return callback(acc);
        }
        return true;
    }
    for di in start..dirs.len() {
        for w in 1..=max_weight {
            acc.push(WeightedDirection::new(dirs[di], w));
            let ok = enumerate_end_multisets(
                dirs,
                max_weight,
                m,
                partial_sum.add(dirs[di].scale(w as i64)),
                di,
                acc,
                callback,
            );
            acc.pop();
            if !ok {
                return false;
            }
        }
    }
    true
}

/// A tree on labeled ends: internal structure as a list of edges between
/// node ids; ends are nodes 0..m, internal nodes follow.
#[derive(Debug, Clone)]
pub(crate) struct EndTree {
    pub node_count: usize,
    /// (a, b) node pairs; ends are leaves.
    pub edges: Vec<(usize, usize)>,
}

/// All combinatorial trees with the given labeled ends (every internal
/// vertex of valency at least 3), generated as trivalent trees by leaf
/// insertion (lower valencies arise from contracted internal edges and are
/// covered by the solver rejecting zero lengths; the matching test only
/// needs the trivalent family since degenerations lie in its closure and
/// would make the equality system consistent as well).
pub(crate) fn rational_trees(ends: &[WeightedDirection]) -> Vec<EndTree> {
    let m = ends.len();
    if m < 3 {
        return Vec::new();
    }
    // Start with the star on the first three ends.
    let base = EndTree {
        node_count: m + 1,
        edges: vec![(0, m), (1, m), (2, m)],
    };
    let mut trees = vec![base];
    for leaf in 3..m {
        let mut next = Vec::new();
        for tree in &trees {
            for (i, &(a, b)) in tree.edges.iter().enumerate() {
                let mut t = tree.clone();
                let new_internal = t.node_count;
                t.node_count += 1;
                t.edges[i] = (a, new_internal);
                t.edges.push((new_internal, b));
                t.edges.push((leaf, new_internal));
                let _ = i;
                next.push(t);
            }
        }
        trees = next;
    }
    trees
}

/// Convert a labeled end tree into a combinatorial type: leaves become
/// infinite vertices, internal nodes finite ones; internal edge directions
/// come from subtree end sums. The first `marked_ends` leaves carry marks
/// on their end edges. Returns `None` for degenerate trees (an internal
/// edge with zero direction vector or a vertex whose directions do not
/// span the plane).
pub(crate) fn end_tree_to_type(
    tree: &EndTree,
    ends: &[WeightedDirection],
    marked_ends: usize,
) -> Option<CombinatorialType> {
    let m = ends.len();
    let node_count = tree.node_count;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); node_count];
    for (i, &(a, b)) in tree.edges.iter().enumerate() {
        adj[a].push((b, i));
        adj[b].push((a, i));
    }
    // Subtree end sums seen from the root (node m).
    let mut edge_child_sum: Vec<Option<(LatticePoint, usize)>> = vec![None; tree.edges.len()];
    fn dfs(
        node: usize,
        from_edge: Option<usize>,
        adj: &[Vec<(usize, usize)>],
        ends: &[WeightedDirection],
        out: &mut Vec<Option<(LatticePoint, usize)>>,
        m: usize,
    ) -> LatticePoint {
        if node < m {
            return ends[node].vector();
        }
        let mut sum = LatticePoint::new(0, 0);
        for &(next, e) in &adj[node] {
            if Some(e) == from_edge {
                continue;
            }
            let s = dfs(next, Some(e), adj, ends, out, m);
            out[e] = Some((s, next));
            sum = sum.add(s);
        }
        sum
    }
    let total = dfs(m, None, &adj, ends, &mut edge_child_sum, m);
    if !total.is_zero() {
        return None;
    }

    let vertex_kinds: Vec<VertexKind> = (0..node_count)
        .map(|n| {
            if n < m {
                VertexKind::Infinite
            } else {
                VertexKind::Finite
            }
        })
        .collect();
    let mut edges: Vec<(VertexId, VertexId)> = Vec::with_capacity(tree.edges.len());
    let mut directions: Vec<WeightedDirection> = Vec::with_capacity(tree.edges.len());
    let mut end_edge_of_leaf: BTreeMap<usize, EdgeId> = BTreeMap::new();
    for (i, &(a, b)) in tree.edges.iter().enumerate() {
        if a < m || b < m {
            let (leaf, internal) = if a < m { (a, b) } else { (b, a) };
            end_edge_of_leaf.insert(leaf, edges.len());
            edges.push((internal, leaf));
            directions.push(ends[leaf]);
        } else {
            // Direction from the parent side toward the child equals the
            // child-side subtree sum.
            let (sum, child) = edge_child_sum[i]?;
            if sum.is_zero() {
                return None;
            }
            let parent = if a == child { b } else { a };
            let d = crate::lattice::primitive_decompose(sum).ok()?;
            edges.push((parent, child));
            directions.push(d);
        }
    }

    // Nondegeneracy: directions at each internal node must span the plane.
    let t = CombinatorialType {
        vertex_kinds,
        edges,
        directions,
        marks: (0..marked_ends)
            .map(|leaf| TypeMark::OnEdge(end_edge_of_leaf[&leaf]))
            .collect(),
    };
    for v in 0..t.vertex_count() {
        if t.vertex_kinds[v] != VertexKind::Finite {
            continue;
        }
        let dirs: Vec<LatticePoint> = t
            .incident_edges(v)
            .into_iter()
            .map(|e| t.direction_from(e, v).primitive)
            .collect();
        let spans = dirs.iter().any(|a| dirs.iter().any(|b| a.cross(*b) != 0));
        if !spans {
            return None;
        }
    }
    if t.validate().is_err() {
        return None;
    }
    Some(t)
}

/// Try every assignment of marks to interior points and test feasibility.
/// Returns false when a witness is found or the budget is exhausted.
#[allow(clippy::too_many_arguments)]
fn assign_and_test(
    tree: &EndTree,
    ends: &[WeightedDirection],
    interior_idx: &[usize],
    cfg: &WeightedConfiguration,
    pos: usize,
    assign: &mut Vec<usize>,
    remaining: &mut u64,
) -> bool {
    if pos == ends.len() {
        if *remaining == 0 {
            return false;
        }
        *remaining -= 1;
        return !end_marked_match(tree, ends, assign, cfg);
    }
    for &pi in interior_idx {
        let used = assign[..pos].iter().filter(|&&a| a == pi).count() as u32;
        if used >= cfg.weights[pi] {
            continue;
        }
        // Symmetry: ends with equal data take nondecreasing point indices.
        if pos > 0 && ends[pos] == ends[pos - 1] && assign[pos - 1] > pi {
            continue;
        }
        assign[pos] = pi;
        if !assign_and_test(tree, ends, interior_idx, cfg, pos + 1, assign, remaining) {
            return false;
        }
    }
    assign[pos] = usize::MAX;
    true
}

/// Feasibility of an end-marked tree through the assigned points: the
/// collinearity equalities must be consistent and admit strictly positive
/// lengths and offsets.
fn end_marked_match(
    tree: &EndTree,
    ends: &[WeightedDirection],
    assign: &[usize],
    cfg: &WeightedConfiguration,
) -> bool {
    let m = ends.len();
    // Internal edge directions: vector = sum of end vectors on the leaf
    // side of the edge. Build adjacency and compute leaf sets.
    let node_count = tree.node_count;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); node_count];
    for (i, &(a, b)) in tree.edges.iter().enumerate() {
        adj[a].push((b, i));
        adj[b].push((a, i));
    }
    // Direction of each tree edge as seen from its lower-id side toward
    // the other: computed from leaf sums via DFS from node m (an internal
    // root; node m exists since m >= 3).
    let root = m;
    let mut edge_vec: Vec<Option<LatticePoint>> = vec![None; tree.edges.len()];
    // DFS post-order accumulating subtree end sums.
    fn subtree_sum(
        node: usize,
        from_edge: Option<usize>,
        adj: &[Vec<(usize, usize)>],
        ends: &[WeightedDirection],
        edge_vec: &mut Vec<Option<LatticePoint>>,
        m: usize,
    ) -> LatticePoint {
        if node < m {
            return ends[node].vector();
        }
        let mut sum = LatticePoint::new(0, 0);
        for &(next, e) in &adj[node] {
            if Some(e) == from_edge {
                continue;
            }
            let s = subtree_sum(next, Some(e), adj, ends, edge_vec, m);
            edge_vec[e] = Some(s);
            sum = sum.add(s);
        }
        sum
    }
    let total = subtree_sum(root, None, &adj, ends, &mut edge_vec, m);
    debug_assert!(total.is_zero());

    // Internal edges with zero vector would be contracted; skip such trees
    // (the corresponding lower-valency type is a boundary case that the
    // genericity test treats through the remaining trees).
    for (i, &(a, b)) in tree.edges.iter().enumerate() {
        if a >= m && b >= m {
            match edge_vec[i] {
                Some(v) if !v.is_zero() => {}
                _ => return false,
            }
        }
    }

    // Unknowns: root position (2) + one length per internal edge.
    let internal: Vec<usize> = (0..tree.edges.len())
        .filter(|&i| tree.edges[i].0 >= m && tree.edges[i].1 >= m)
        .collect();
    let col_of: BTreeMap<usize, usize> = internal
        .iter()
        .enumerate()
        .map(|(k, &e)| (e, 2 + k))
        .collect();
    let cols = 2 + internal.len();

    // Node position expressions via DFS from root.
    let mut expr_x: Vec<Option<Vec<BigRational>>> = vec![None; node_count];
    let mut expr_y: Vec<Option<Vec<BigRational>>> = vec![None; node_count];
    let mut ex0 = vec![BigRational::zero(); cols];
    ex0[0] = BigRational::one();
    let mut ey0 = vec![BigRational::zero(); cols];
    ey0[1] = BigRational::one();
    expr_x[root] = Some(ex0);
    expr_y[root] = Some(ey0);
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        for &(wnode, e) in &adj[u] {
            if wnode < m || expr_x[wnode].is_some() {
                continue;
            }
            let vecd = edge_vec[e].expect("internal edge vector");
            // Balancing at the child vertex forces the edge direction from
            // parent to child to equal the sum of the end vectors on the
            // child side: pos(child) = pos(parent) + len * subtree_sum.
            let dir = vecd;
            let mut ex = expr_x[u].clone().unwrap();
            ex[col_of[&e]] += lattice::rat(dir.x);
            let mut ey = expr_y[u].clone().unwrap();
            ey[col_of[&e]] += lattice::rat(dir.y);
            expr_x[wnode] = Some(ex);
            expr_y[wnode] = Some(ey);
            stack.push(wnode);
        }
    }

    // Equalities: marks on ends are collinear with the end's line.
    let mut eq = LinearSystem::new(cols);
    let mut inequalities: Vec<(Vec<BigRational>, BigRational)> = Vec::new();
    for leaf in 0..m {
        let (attach, _e) = adj[leaf][0];
        let u = ends[leaf].primitive;
        let x = match cfg.base.point(assign[leaf]) {
            ConfigPoint::Interior(x) => x,
            ConfigPoint::Boundary { .. } => return false,
        };
        let ex = expr_x[attach].clone().unwrap();
        let ey = expr_y[attach].clone().unwrap();
        // cross(x - pos(attach), u) = 0.
        let mut row = vec![BigRational::zero(); cols];
        for c in 0..cols {
            row[c] = &ex[c] * lattice::rat(u.y) - &ey[c] * lattice::rat(u.x);
        }
        let rhs = x.cross_int(u);
        eq.push(row, rhs);
        // dot(x - pos(attach), u) > 0.
        let mut irow = vec![BigRational::zero(); cols];
        for c in 0..cols {
            irow[c] = -(&ex[c] * lattice::rat(u.x) + &ey[c] * lattice::rat(u.y));
        }
        let irhs = -x.dot_int(u);
        inequalities.push((irow, irhs));
    }
    // Lengths positive.
    for (_, &col) in col_of.iter() {
        let mut row = vec![BigRational::zero(); cols];
        row[col] = BigRational::one();
        inequalities.push((row, BigRational::zero()));
    }

    match eq.solve() {
        LinearSolution::Inconsistent => false,
        LinearSolution::Unique(values) => inequalities.iter().all(|(a, b)| {
            let lhs: BigRational = a.iter().zip(values.iter()).map(|(p, q)| p * q).sum();
            lhs > *b
        }),
        LinearSolution::Under {
            particular,
            null_basis,
        } => {
            // Substitute x = particular + sum t_k * basis_k; feasibility of
            // the strict system over t.
            let rows: Vec<(Vec<BigRational>, BigRational)> = inequalities
                .iter()
                .map(|(a, b)| {
                    let base: BigRational =
                        a.iter().zip(particular.iter()).map(|(p, q)| p * q).sum();
                    let coeffs: Vec<BigRational> = null_basis
                        .iter()
                        .map(|nb| a.iter().zip(nb.iter()).map(|(p, q)| p * q).sum())
                        .collect();
                    (coeffs, b - base)
                })
                .collect();
            strict_feasible(rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{rat, ratio};

    fn unit_triangle() -> LatticePolygon {
        LatticePolygon::hull(&[
            LatticePoint::new(0, 0),
            LatticePoint::new(1, 0),
            LatticePoint::new(0, 1),
        ])
        .unwrap()
    }

    fn line_type(marks: usize) -> CombinatorialType {
        // Tripod type with `marks` marks on distinct ends.
        CombinatorialType {
            vertex_kinds: vec![
                VertexKind::Finite,
                VertexKind::Infinite,
                VertexKind::Infinite,
                VertexKind::Infinite,
            ],
            edges: vec![(0, 1), (0, 2), (0, 3)],
            directions: vec![
                WeightedDirection::new(LatticePoint::new(-1, 0), 1),
                WeightedDirection::new(LatticePoint::new(0, -1), 1),
                WeightedDirection::new(LatticePoint::new(1, 1), 1),
            ],
            marks: (0..marks).map(TypeMark::OnEdge).collect(),
        }
    }

    #[test]
    fn stretched_config_deterministic_and_distinct() {
        let delta = unit_triangle();
        let layout = MarkLayout::interior_only(2);
        let a = stretched_config(&delta, &layout, 0);
        let b = stretched_config(&delta, &layout, 0);
        assert_eq!(a, b);
        assert_eq!(a.interior.len(), 2);
        assert_ne!(a.interior[0], a.interior[1]);
        let c = stretched_config(&delta, &layout, 1);
        assert_ne!(a, c);
    }

    #[test]
    fn solve_line_through_two_points() {
        let t = line_type(2);
        let cfg = Configuration::new(
            vec![],
            vec![
                RationalPoint::from_ints(-3, 1),
                RationalPoint::from_ints(2, -4),
            ],
        )
        .unwrap();
        // Marks on ends 0 (direction (-1,0)) and 1 (direction (0,-1)):
        // vertex at (2, 1).
        match solve_type(&t, &cfg).unwrap() {
            SolveOutcome::Unique(m) => {
                assert_eq!(*m.curve.position(0), RationalPoint::from_ints(2, 1));
                assert!(crate::curve::validate_ppt(&m.curve).is_clean());
                assert!(check_regular(&m));
            }
            other => panic!("expected a unique curve, got {other:?}"),
        }
    }

    #[test]
    fn solve_rejects_wrong_side_of_ray() {
        let t = line_type(2);
        // Point 0 must sit on the ray toward (-1, 0) from the vertex, and
        // point 1 on the ray toward (0, -1). Placing point 0 to the right
        // of point 1's column makes the offsets negative.
        let cfg = Configuration::new(
            vec![],
            vec![
                RationalPoint::from_ints(5, 1),
                RationalPoint::from_ints(2, -4),
            ],
        )
        .unwrap();
        match solve_type(&t, &cfg).unwrap() {
            SolveOutcome::NoSolution => {}
            other => panic!("expected no solution, got {other:?}"),
        }
    }

    #[test]
    fn solve_boundary_mark_constrains_line() {
        let delta = unit_triangle();
        let mut t = line_type(1);
        t.marks = vec![TypeMark::AtEnd(1), TypeMark::OnEdge(1)];
        // End 0 has direction (-1, 0): outward normal of the x = 0 side.
        let side = delta
            .sides()
            .iter()
            .position(|s| s.normal == LatticePoint::new(-1, 0))
            .unwrap();
        // Line parameter of the horizontal line through y = 3 for
        // direction (-1, 0): cross((x, 3), (-1, 0)) = 3... cross(p, d) =
        // px*dy - py*dx = 3.
        let cfg = Configuration::new(
            vec![(side, rat(3))],
            vec![RationalPoint::from_ints(2, -4)],
        )
        .unwrap();
        match solve_type_unchecked(&t, &cfg, Some(&delta)).unwrap() {
            SolveOutcome::Unique(m) => {
                assert_eq!(*m.curve.position(0), RationalPoint::from_ints(2, 3));
            }
            other => panic!("expected a unique curve, got {other:?}"),
        }
    }

    #[test]
    fn regularity_examples() {
        // Tripod with marks on two ends: regular.
        let t = line_type(2);
        assert!(check_regular_type(&t));
        // Marks on all three ends: not regular.
        let t3 = line_type(3);
        assert!(!check_regular_type(&t3));
        // No marks at all: single component with three ends: not regular.
        let t0 = line_type(0);
        assert!(!check_regular_type(&t0));
    }

    #[test]
    fn orientation_tripod() {
        let t = line_type(2);
        let cfg = Configuration::new(
            vec![],
            vec![
                RationalPoint::from_ints(-3, 1),
                RationalPoint::from_ints(2, -4),
            ],
        )
        .unwrap();
        let SolveOutcome::Unique(m) = solve_type(&t, &cfg).unwrap() else {
            panic!("solve failed")
        };
        let orient = orient_components(&m).unwrap();
        // One unmarked finite vertex, whose outgoing edge is the unmarked
        // end (edge 2).
        assert_eq!(orient.outgoing.len(), 1);
        assert_eq!(orient.outgoing[&0], 2);
        assert!(orient.simple_violations.is_empty());
    }

    #[test]
    fn orientation_two_vertex_path() {
        // Two vertices joined by an edge; four marked ends, one unmarked.
        // Vertex 0: ends (-1,0), (0,-1) marked; vertex 1: ends (0,1),
        // (2,-1) with (0,1) marked... build a balanced 5-end tree:
        // v0: (-1,0), (0,-1), connector (1,1); v1: connector (-1,-1),
        // (1,0), (0,1): marks on (-1,0), (0,-1), (1,0): unmarked end (0,1).
        let t = CombinatorialType {
            vertex_kinds: vec![
                VertexKind::Finite,
                VertexKind::Finite,
                VertexKind::Infinite,
                VertexKind::Infinite,
                VertexKind::Infinite,
                VertexKind::Infinite,
            ],
            edges: vec![(0, 1), (0, 2), (0, 3), (1, 4), (1, 5)],
            directions: vec![
                WeightedDirection::new(LatticePoint::new(1, 1), 1),
                WeightedDirection::new(LatticePoint::new(-1, 0), 1),
                WeightedDirection::new(LatticePoint::new(0, -1), 1),
                WeightedDirection::new(LatticePoint::new(1, 0), 1),
                WeightedDirection::new(LatticePoint::new(0, 1), 1),
            ],
            marks: vec![
                TypeMark::OnEdge(1),
                TypeMark::OnEdge(2),
                TypeMark::OnEdge(3),
            ],
        };
        t.validate().unwrap();
        assert!(check_regular_type(&t));
        let cfg = Configuration::new(
            vec![],
            vec![
                RationalPoint::from_ints(-5, 0),
                RationalPoint::from_ints(0, -7),
                RationalPoint::from_ints(9, 2),
            ],
        )
        .unwrap();
        let SolveOutcome::Unique(m) = solve_type(&t, &cfg).unwrap() else {
            panic!("solve failed")
        };
        let orient = orient_components(&m).unwrap();
        assert_eq!(orient.outgoing.len(), 2);
        // Vertex 1 emits the unmarked end (edge 4); vertex 0 emits the
        // connector (edge 0) toward it.
        assert_eq!(orient.outgoing[&1], 4);
        assert_eq!(orient.outgoing[&0], 0);
    }

    #[test]
    fn solve_uniqueness_under_permuted_rows() {
        // Re-solving with permuted mark order (both type marks and points)
        // returns the identical curve.
        let t = line_type(2);
        let p0 = RationalPoint::from_ints(-3, 1);
        let p1 = RationalPoint::from_ints(2, -4);
        let cfg = Configuration::new(vec![], vec![p0.clone(), p1.clone()]).unwrap();
        let SolveOutcome::Unique(m1) = solve_type(&t, &cfg).unwrap() else {
            panic!()
        };
        let mut t2 = t.clone();
        t2.marks = vec![TypeMark::OnEdge(1), TypeMark::OnEdge(0)];
        let cfg2 = Configuration::new(vec![], vec![p1, p0]).unwrap();
        let SolveOutcome::Unique(m2) = solve_type(&t2, &cfg2).unwrap() else {
            panic!()
        };
        assert_eq!(m1.curve, m2.curve);
    }

    #[test]
    fn genericity_of_stretched_configs() {
        let delta = unit_triangle();
        let cfg = stretched_config(&delta, &MarkLayout::interior_only(2), 0);
        let outcome = check_delta_generic(
            &WeightedConfiguration::simple(cfg),
            &delta,
            200_000,
        );
        assert!(matches!(outcome, GenericityOutcome::Generic), "{outcome:?}");
    }

    #[test]
    fn genericity_detects_collinear_pair() {
        let delta = unit_triangle();
        // Two points on a horizontal line: direction (1, 0) is orthogonal
        // to the integral segment (0, 1) of the triangle.
        let cfg = Configuration::new(
            vec![],
            vec![
                RationalPoint::new(ratio(1, 3), ratio(5, 7)),
                RationalPoint::new(ratio(22, 7), ratio(5, 7)),
            ],
        )
        .unwrap();
        let outcome =
            check_delta_generic(&WeightedConfiguration::simple(cfg), &delta, 200_000);
        assert!(matches!(outcome, GenericityOutcome::Witness(_)), "{outcome:?}");
    }

    #[test]
    fn genericity_budget_exhaustion() {
        let delta = unit_triangle();
        let cfg = stretched_config(&delta, &MarkLayout::interior_only(2), 0);
        let outcome = check_delta_generic(&WeightedConfiguration::simple(cfg), &delta, 0);
        assert!(matches!(outcome, GenericityOutcome::Inconclusive));
    }

    #[test]
    fn marks_exhaust_preimages_detects_extra_crossings() {
        let t = line_type(2);
        let cfg = Configuration::new(
            vec![],
            vec![
                RationalPoint::from_ints(-3, 1),
                RationalPoint::from_ints(2, -4),
            ],
        )
        .unwrap();
        let SolveOutcome::Unique(m) = solve_type(&t, &cfg).unwrap() else {
            panic!()
        };
        assert!(marks_exhaust_preimages(&m, &cfg, None));
        // A configuration point on the unmarked end is not exhausted.
        let bad_cfg = Configuration::new(
            vec![],
            vec![
                RationalPoint::from_ints(-3, 1),
                RationalPoint::from_ints(2, -4),
                RationalPoint::from_ints(3, 2), // on the (1,1) end from (2,1)
            ],
        )
        .unwrap();
        assert!(!marks_exhaust_preimages(&m, &bad_cfg, None));
    }
}

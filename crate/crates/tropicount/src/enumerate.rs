//! Enumeration of marked curves of a given Newton polygon and genus
//! through generic point configurations, with complex and real weight
//! totals.
//!
//! Type generation goes through dual subdivisions: tilings of the polygon
//! by lattice triangles and parallelograms are enumerated exhaustively and
//! lifted to simple combinatorial types; each type is then matched against
//! the configuration by an incidence-propagating backtracking search whose
//! survivors are confirmed by the exact linear solver. Genericity is
//! validated lazily: degenerate solves or non-exhausted preimages abort
//! the run and reseed the configuration.

use crate::curve::{canonical_key, validate_ppt, EdgeId, MarkAddr, MarkedCurve, RealTag, VertexKind};
use crate::duality::{dual_subdivision, verify_duality};
use crate::error::{Error, Result};
use crate::lattice::{self, interiors_disjoint, LatticePoint, LatticePolygon, RationalPoint};
use crate::patchdata::{ComplexRat, KConfigPoint, KConfiguration};
use crate::position::{
    check_regular, marks_exhaust_preimages, solve_type_unchecked, stretched_config,
    CombinatorialType, ConfigPoint, Configuration, MarkLayout, SolveOutcome, TypeMark,
};
use crate::weights::{complex_weight_seeded, real_weight_seeded, RealWeightBreakdown, WeightBreakdown};
use num_bigint::BigInt;
use num_traits::Zero;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

/// An enumeration instance: polygon, genus, mark layout and the seed for
/// the stretched configuration.
#[derive(Debug, Clone)]
pub struct EnumerationProblem {
    pub delta: LatticePolygon,
    pub genus: i64,
    pub layout: MarkLayout,
    pub seed: u64,
}

impl EnumerationProblem {
    /// The default layout: interior marks only, one fewer than the number
    /// of boundary lattice points plus the genus.
    pub fn standard(delta: LatticePolygon, genus: i64, seed: u64) -> Self {
        let boundary = delta.lattice_points().1.len() as i64;
        let marks = (boundary + genus - 1).max(0) as usize;
        EnumerationProblem {
            delta,
            genus,
            layout: MarkLayout::interior_only(marks),
            seed,
        }
    }

    /// Degree-d instance over the standard triangle.
    pub fn degree(d: i64, genus: i64, seed: u64) -> Self {
        let delta = LatticePolygon::hull(&[
            LatticePoint::new(0, 0),
            LatticePoint::new(d, 0),
            LatticePoint::new(0, d),
        ])
        .unwrap();
        Self::standard(delta, genus, seed)
    }
}

/// One enumerated curve with its weight data.
#[derive(Debug, Clone)]
pub struct CountedCurve {
    pub curve: MarkedCurve,
    pub weight: WeightBreakdown,
    pub real_weight: Option<RealWeightBreakdown>,
}

/// The outcome of a counting run.
#[derive(Debug, Clone)]
pub struct EnumerationResult {
    pub configuration: Configuration,
    pub seed_used: u64,
    pub curves: Vec<CountedCurve>,
    pub total_complex: BigInt,
    pub total_real: Option<BigInt>,
    pub diagnostics: Vec<String>,
}

// ---------------------------------------------------------------------------
// Tiling enumeration
// ---------------------------------------------------------------------------

/// Catalog cell: polygon plus its counterclockwise primitive boundary
/// steps.
#[derive(Debug, Clone)]
struct CatalogCell {
    polygon: LatticePolygon,
    steps: Vec<(LatticePoint, LatticePoint)>,
    volume: i64,
}

fn primitive_steps(p: &LatticePolygon) -> Vec<(LatticePoint, LatticePoint)> {
    let mut out = Vec::new();
    for side in p.sides() {
        let dir = side.direction();
        let mut cur = side.start;
        for _ in 0..side.length {
            let next = cur.add(dir);
            out.push((cur, next));
            cur = next;
        }
    }
    out
}

/// All lattice triangles and parallelograms with vertices in the polygon.
fn cell_catalog(delta: &LatticePolygon) -> Vec<CatalogCell> {
    let (interior, boundary) = delta.lattice_points();
    let mut points = interior;
    points.extend(boundary);
    points.sort();
    let mut out = Vec::new();
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                if b.sub(a).cross(c.sub(a)) == 0 {
                    continue;
                }
                let poly = LatticePolygon::hull(&[a, b, c]).unwrap();
                // Only true triangles (no extra lattice points become new
                // vertices for a hull of three points).
                out.push(CatalogCell {
                    steps: primitive_steps(&poly),
                    volume: poly.lattice_volume(),
                    polygon: poly,
                });
            }
        }
    }
    // Parallelograms: a + u, a + v, a + u + v inside.
    let point_set: BTreeSet<LatticePoint> = points.iter().copied().collect();
    for &a in &points {
        for &b in &points {
            if b <= a {
                continue;
            }
            let u = b.sub(a);
            for &c in &points {
                if c <= b {
                    continue;
                }
                let v = c.sub(a);
                if u.cross(v) == 0 {
                    continue;
                }
                let d = a.add(u).add(v);
                if !point_set.contains(&d) {
                    continue;
                }
                let poly = LatticePolygon::hull(&[a, b, c, d]).unwrap();
                if poly.vertices().len() != 4 {
                    continue;
                }
                out.push(CatalogCell {
                    steps: primitive_steps(&poly),
                    volume: poly.lattice_volume(),
                    polygon: poly,
                });
            }
        }
    }
    out
}

/// Exhaustively enumerate tilings of the polygon by catalog cells with
/// pairwise disjoint interiors, meeting face-to-face. Deterministic order.
fn enumerate_tilings(delta: &LatticePolygon) -> Vec<Vec<LatticePolygon>> {
    let catalog = cell_catalog(delta);
    // Index catalog cells by their counterclockwise steps for the frontier
    // extension.
    let mut by_step: BTreeMap<(LatticePoint, LatticePoint), Vec<usize>> = BTreeMap::new();
    for (i, cell) in catalog.iter().enumerate() {
        for &step in &cell.steps {
            by_step.entry(step).or_default().push(i);
        }
    }

    let target = delta.lattice_volume();
    let mut exposed: BTreeMap<(LatticePoint, LatticePoint), i64> = BTreeMap::new();
    for step in primitive_steps(delta) {
        *exposed.entry(step).or_insert(0) += 1;
    }
    let mut placed: Vec<usize> = Vec::new();
    let mut results: Vec<Vec<LatticePolygon>> = Vec::new();

    fn recurse(
        catalog: &[CatalogCell],
        by_step: &BTreeMap<(LatticePoint, LatticePoint), Vec<usize>>,
        exposed: &mut BTreeMap<(LatticePoint, LatticePoint), i64>,
        placed: &mut Vec<usize>,
        area: i64,
        target: i64,
        results: &mut Vec<Vec<LatticePolygon>>,
    ) {
        // Completed tiling: no exposed demand and the area matches.
        let first = exposed.iter().find(|(_, &c)| c > 0).map(|(k, _)| *k);
        let Some(step) = first else {
            if area == target && exposed.values().all(|&c| c == 0) {
                results.push(placed.iter().map(|&i| catalog[i].polygon.clone()).collect());
            }
            return;
        };
        if area >= target {
            return;
        }
        let Some(candidates) = by_step.get(&step) else { return };
        for &ci in candidates {
            let cell = &catalog[ci];
            if area + cell.volume > target {
                continue;
            }
            if placed
                .iter()
                .any(|&pi| !interiors_disjoint(&catalog[pi].polygon, &cell.polygon))
            {
                continue;
            }
            // Face-to-face: intersection with each placed cell is a shared
            // vertex or a shared side, which the step bookkeeping enforces
            // at primitive granularity.
            let mut delta_changes: Vec<((LatticePoint, LatticePoint), i64)> = Vec::new();
            for &(a, b) in &cell.steps {
                if exposed.get(&(a, b)).copied().unwrap_or(0) > 0 {
                    delta_changes.push(((a, b), -1));
                } else {
                    delta_changes.push(((b, a), 1));
                }
            }
            for (k, d) in &delta_changes {
                *exposed.entry(*k).or_insert(0) += d;
            }
            placed.push(ci);
            recurse(catalog, by_step, exposed, placed, area + cell.volume, target, results);
            placed.pop();
            for (k, d) in &delta_changes {
                *exposed.entry(*k).or_insert(0) -= d;
                if exposed[k] == 0 {
                    exposed.remove(k);
                }
            }
        }
    }

    recurse(
        &catalog,
        &by_step,
        &mut exposed,
        &mut placed,
        0,
        target,
        &mut results,
    );
    results
}

/// Every pair of cells meets in a common face (empty, point, or full
/// shared side): the tiling is a polyhedral complex without T-junctions.
fn is_complex(cells: &[LatticePolygon]) -> bool {
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let vi: BTreeSet<LatticePoint> = cells[i].vertices().iter().copied().collect();
            let vj: BTreeSet<LatticePoint> = cells[j].vertices().iter().copied().collect();
            let shared: Vec<LatticePoint> = vi.intersection(&vj).copied().collect();
            // Any vertex of one cell lying on the other must be a vertex
            // of both.
            let ok_vertices = cells[i]
                .vertices()
                .iter()
                .all(|p| !cells[j].contains(*p) || vj.contains(p))
                && cells[j]
                    .vertices()
                    .iter()
                    .all(|p| !cells[i].contains(*p) || vi.contains(p));
            if !ok_vertices {
                return false;
            }
            if shared.len() == 2 {
                // Must be a full common side of both.
                let (a, b) = (shared[0], shared[1]);
                let side_of = |cell: &LatticePolygon| {
                    cell.sides()
                        .iter()
                        .any(|s| (s.start == a && s.end == b) || (s.start == b && s.end == a))
                };
                if !side_of(&cells[i]) || !side_of(&cells[j]) {
                    return false;
                }
            }
            if shared.len() > 2 {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Lifting tilings to combinatorial types
// ---------------------------------------------------------------------------

/// Lift a nodal tiling (triangles and parallelograms) to the combinatorial
/// type of the simple parameterized curve dual to it. Parallelogram cells
/// become transverse crossings.
fn lift_tiling(delta: &LatticePolygon, cells: &[LatticePolygon]) -> Option<CombinatorialType> {
    let is_parallelogram = |c: &LatticePolygon| c.vertices().len() == 4;

    // Map cells to graph vertices (triangles only).
    let mut vertex_of_cell: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kinds: Vec<VertexKind> = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        if !is_parallelogram(cell) {
            if cell.vertices().len() != 3 {
                return None;
            }
            vertex_of_cell.insert(i, kinds.len());
            kinds.push(VertexKind::Finite);
        }
    }

    // Shared sides.
    let side_key = |a: LatticePoint, b: LatticePoint| if a < b { (a, b) } else { (b, a) };
    let mut owners: BTreeMap<(LatticePoint, LatticePoint), Vec<usize>> = BTreeMap::new();
    for (i, cell) in cells.iter().enumerate() {
        for s in cell.sides() {
            owners.entry(side_key(s.start, s.end)).or_default().push(i);
        }
    }
    for members in owners.values() {
        if members.len() > 2 {
            return None;
        }
    }

    // Walk strands: start from each triangle side or boundary side, pass
    // straight through parallelograms (to the opposite side).
    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    struct SideRef {
        cell: usize,
        key: (LatticePoint, LatticePoint),
    }
    let opposite_side = |cell: &LatticePolygon, key: (LatticePoint, LatticePoint)| {
        let vs = cell.vertices();
        let sides: Vec<(LatticePoint, LatticePoint)> = (0..4)
            .map(|i| side_key(vs[i], vs[(i + 1) % 4]))
            .collect();
        let idx = sides.iter().position(|&s| s == key)?;
        Some(sides[(idx + 2) % 4])
    };

    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut directions: Vec<crate::lattice::WeightedDirection> = Vec::new();
    let mut used: BTreeSet<SideRef> = BTreeSet::new();

    let normal_toward = |key: (LatticePoint, LatticePoint), from_cell: usize| -> LatticePoint {
        // Primitive normal of the side pointing out of `from_cell`.
        let d = key.1.sub(key.0);
        let g = num_integer::gcd(d.x.abs(), d.y.abs());
        let n = LatticePoint::new(d.y / g, -d.x / g);
        // Orient out of the cell: compare against a vertex of the cell not
        // on the side.
        let cell = &cells[from_cell];
        let off = cell
            .vertices()
            .iter()
            .find(|p| {
                let r = p.sub(key.0);
                d.cross(r) != 0
            })
            .copied()
            .expect("two-dimensional cell");
        if off.sub(key.0).dot(n) > 0 {
            n.neg()
        } else {
            n
        }
    };

    for (start_cell, cell) in cells.iter().enumerate() {
        if is_parallelogram(cell) {
            continue;
        }
        for s in cell.sides() {
            let key = side_key(s.start, s.end);
            let start_ref = SideRef { cell: start_cell, key };
            if used.contains(&start_ref) {
                continue;
            }
            used.insert(start_ref);
            let weight = s.length;
            let dir = normal_toward(key, start_cell);
            // Follow through parallelograms.
            let mut cur_key = key;
            let mut cur_cell = start_cell;
            let terminal;
            loop {
                let next_cell = owners[&cur_key].iter().copied().find(|&c| c != cur_cell);
                match next_cell {
                    None => {
                        terminal = None; // boundary side: an end
                        break;
                    }
                    Some(nc) => {
                        if !is_parallelogram(&cells[nc]) {
                            used.insert(SideRef { cell: nc, key: cur_key });
                            terminal = Some(nc);
                            break;
                        }
                        used.insert(SideRef { cell: nc, key: cur_key });
                        let opp = opposite_side(&cells[nc], cur_key)?;
                        used.insert(SideRef { cell: nc, key: opp });
                        cur_key = opp;
                        cur_cell = nc;
                    }
                }
            }
            let tail = vertex_of_cell[&start_cell];
            match terminal {
                Some(nc) => {
                    if nc < start_cell {
                        continue; // already walked from the other triangle
                    }
                    if nc == start_cell {
                        // A strand closing onto its own vertex would be a
                        // loop; not a valid curve type.
                        return None;
                    }
                    let head = vertex_of_cell[&nc];
                    edges.push((tail, head));
                    directions.push(crate::lattice::WeightedDirection::new(dir, weight));
                }
                None => {
                    let inf = kinds.len();
                    kinds.push(VertexKind::Infinite);
                    edges.push((tail, inf));
                    directions.push(crate::lattice::WeightedDirection::new(dir, weight));
                }
            }
        }
    }

    let t = CombinatorialType {
        vertex_kinds: kinds,
        edges,
        directions,
        marks: Vec::new(),
    };
    t.validate().ok()?;
    // The lift of a genuine dual tiling is balanced; sanity-check the
    // degree against the polygon.
    let degree_total: i64 = t
        .degree()
        .iter()
        .map(|d| d.weight as i64)
        .sum();
    let boundary_total: i64 = delta.sides().iter().map(|s| s.length as i64).sum();
    if degree_total != boundary_total {
        return None;
    }
    Some(t)
}

fn type_is_connected(t: &CombinatorialType) -> bool {
    let n = t.vertex_count();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for e in t.incident_edges(v) {
            let (a, b) = t.edges[e];
            let w = if a == v { b } else { a };
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Exhaustive, duplicate-free stream of combinatorial types of connected
/// curves with the given Newton polygon and genus, generated from dual
/// tilings in deterministic order. Marks are left unplaced; matching
/// against a configuration places them.
pub fn enumerate_types(
    delta: &LatticePolygon,
    genus: i64,
    _layout: &MarkLayout,
) -> Vec<CombinatorialType> {
    let mut out = Vec::new();
    for cells in enumerate_tilings(delta) {
        if !is_complex(&cells) {
            continue;
        }
        if let Some(t) = lift_tiling(delta, &cells) {
            if type_is_connected(&t) && t.genus() == genus {
                out.push(t);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Matching a type against a configuration
// ---------------------------------------------------------------------------

/// Propagation state of the incidence search: known lines per edge, known
/// positions per vertex and assigned points per edge, all behind reference
/// counts so branching clones are cheap.
#[derive(Clone)]
struct SearchState {
    edge_line: Vec<Option<std::rc::Rc<(RationalPoint, LatticePoint)>>>,
    vertex_pos: Vec<Option<std::rc::Rc<RationalPoint>>>,
    edge_point: Vec<Option<std::rc::Rc<RationalPoint>>>,
}

impl SearchState {
    fn new(t: &CombinatorialType) -> Self {
        SearchState {
            edge_line: vec![None; t.edge_count()],
            vertex_pos: vec![None; t.vertex_count()],
            edge_point: vec![None; t.edge_count()],
        }
    }

    /// Close the state under incidence propagation and reject states that
    /// violate a side condition: marks must sit strictly on the correct
    /// side of pinned endpoints and pinned edges must have positive
    /// displacement along their direction.
    fn propagate(&mut self, t: &CombinatorialType, adjacency: &[Vec<EdgeId>]) -> bool {
        loop {
            let mut changed = false;
            for v in 0..t.vertex_count() {
                if t.vertex_kinds[v] != VertexKind::Finite {
                    continue;
                }
                if self.vertex_pos[v].is_none() {
                    let known: Vec<&std::rc::Rc<(RationalPoint, LatticePoint)>> = adjacency[v]
                        .iter()
                        .filter_map(|&e| self.edge_line[e].as_ref())
                        .collect();
                    'pairs: for i in 0..known.len() {
                        for j in i + 1..known.len() {
                            let (p1, d1) = known[i].as_ref();
                            let (p2, d2) = known[j].as_ref();
                            if d1.cross(*d2) == 0 {
                                continue;
                            }
                            match lattice::line_intersection(p1, *d1, p2, *d2) {
                                Some(x) => {
                                    self.vertex_pos[v] = Some(std::rc::Rc::new(x));
                                    changed = true;
                                    break 'pairs;
                                }
                                None => return false,
                            }
                        }
                    }
                }
                if let Some(pos) = self.vertex_pos[v].clone() {
                    for &e in &adjacency[v] {
                        let dir = t.direction_from(e, v).primitive;
                        match &self.edge_line[e] {
                            None => {
                                self.edge_line[e] =
                                    Some(std::rc::Rc::new(((*pos).clone(), dir)));
                                changed = true;
                            }
                            Some(line) => {
                                let (p, d) = line.as_ref();
                                if !pos.sub(p).cross_int(*d).is_zero() {
                                    return false;
                                }
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        self.side_conditions(t)
    }

    /// Strict side conditions against the pinned vertices.
    fn side_conditions(&self, t: &CombinatorialType) -> bool {
        use num_traits::Signed;
        for e in 0..t.edge_count() {
            let (tail, head) = t.edges[e];
            let u = t.directions[e].primitive;
            let tail_pos = self.vertex_pos[tail].as_ref();
            let head_pos = if t.is_end(e) {
                None
            } else {
                self.vertex_pos[head].as_ref()
            };
            if let (Some(tp), Some(hp)) = (tail_pos, head_pos) {
                // Positive length along the direction.
                if !hp.sub(tp).dot_int(u).is_positive() {
                    return false;
                }
            }
            if let Some(x) = &self.edge_point[e] {
                if let Some(tp) = tail_pos {
                    if !x.sub(tp).dot_int(u).is_positive() {
                        return false;
                    }
                }
                if let Some(hp) = head_pos {
                    if !hp.sub(x).dot_int(u).is_positive() {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Record that the edge's image line passes through a point; false on
    /// contradiction.
    fn constrain_edge(&mut self, t: &CombinatorialType, e: EdgeId, x: &RationalPoint) -> bool {
        let dir = t.directions[e].primitive;
        let ok = match &self.edge_line[e] {
            None => {
                self.edge_line[e] = Some(std::rc::Rc::new((x.clone(), dir)));
                true
            }
            Some(line) => {
                let (p, d) = line.as_ref();
                x.sub(p).cross_int(*d).is_zero()
            }
        };
        if ok {
            self.edge_point[e] = Some(std::rc::Rc::new(x.clone()));
        }
        ok
    }

    /// Record a boundary line constraint (line parameter for a ray).
    fn constrain_end_param(
        &mut self,
        t: &CombinatorialType,
        e: EdgeId,
        param: &num_rational::BigRational,
    ) -> bool {
        let u = t.directions[e].primitive;
        match &self.edge_line[e] {
            Some(line) => line.0.cross_int(u) == *param,
            None => {
                // A point on the line cross(q, u) = param.
                let n2 = lattice::rat(u.x * u.x + u.y * u.y);
                let q = RationalPoint::new(
                    param * lattice::rat(u.y) / n2.clone(),
                    -(param * lattice::rat(u.x)) / n2,
                );
                self.edge_line[e] = Some(std::rc::Rc::new((q, u)));
                true
            }
        }
    }

    /// Could the point be placed on this edge? Cheap consistency test used
    /// for the fail-first variable ordering.
    fn candidate_ok(&self, t: &CombinatorialType, e: EdgeId, x: &RationalPoint) -> bool {
        use num_traits::Signed;
        if let Some(line) = &self.edge_line[e] {
            let (p, d) = line.as_ref();
            if !x.sub(p).cross_int(*d).is_zero() {
                return false;
            }
        }
        let (tail, head) = t.edges[e];
        let u = t.directions[e].primitive;
        if let Some(tp) = &self.vertex_pos[tail] {
            if !x.sub(tp).dot_int(u).is_positive() {
                return false;
            }
        }
        if !t.is_end(e) {
            if let Some(hp) = &self.vertex_pos[head] {
                if !hp.sub(x).dot_int(u).is_positive() {
                    return false;
                }
            }
        }
        true
    }
}

/// Counting prune for partial mark sets: in the complement of the marked
/// edges, any component without an end can never become regular, and a
/// component with `k` ends and `b1` independent cycles needs at least
/// `k - 1 + b1` further cuts inside it. Returns `None` when regularity is
/// already impossible, otherwise the minimum number of additional marks
/// required.
fn regularity_demand(t: &CombinatorialType, used_mask: u64) -> Option<usize> {
    let n = t.vertex_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut edges_in: Vec<u32> = vec![0; n];
    for e in 0..t.edge_count() {
        if used_mask & (1 << e) != 0 {
            continue;
        }
        let (a, b) = t.edges[e];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    for e in 0..t.edge_count() {
        if used_mask & (1 << e) != 0 {
            continue;
        }
        let r = find(&mut parent, t.edges[e].0);
        edges_in[r] += 1;
    }
    let mut vertices_in: Vec<u32> = vec![0; n];
    let mut ends_in: Vec<u32> = vec![0; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        vertices_in[r] += 1;
        if t.vertex_kinds[v] == VertexKind::Infinite {
            ends_in[r] += 1;
        }
    }
    let mut demand = 0usize;
    for v in 0..n {
        if find(&mut parent, v) != v {
            continue;
        }
        let ends = ends_in[v];
        if ends == 0 {
            return None;
        }
        let b1 = edges_in[v] as i64 - vertices_in[v] as i64 + 1;
        demand += (ends as usize - 1) + b1.max(0) as usize;
    }
    Some(demand)
}

/// All solutions of one type through the configuration: assign points to
/// distinct edges (interior points) and end edges (boundary points) with
/// propagation, side-condition and regularity-count pruning, picking the
/// most constrained point first; survivors are confirmed by the exact
/// solver.
pub fn match_type(
    t: &CombinatorialType,
    cfg: &Configuration,
    delta: &LatticePolygon,
) -> Result<Vec<MarkedCurve>> {
    if t.edge_count() > 64 {
        return Err(Error::InvalidInput("type has more than 64 edges".into()));
    }
    let sides = delta.sides();
    let n = cfg.len();
    let mut solutions = Vec::new();
    let mut degenerate: Option<String> = None;
    let adjacency: Vec<Vec<EdgeId>> = (0..t.vertex_count()).map(|v| t.incident_edges(v)).collect();
    let points: Vec<ConfigPoint> = (0..n).map(|i| cfg.point(i)).collect();

    struct Frame<'a> {
        t: &'a CombinatorialType,
        cfg: &'a Configuration,
        sides: &'a [crate::lattice::Side],
        delta: &'a LatticePolygon,
        adjacency: &'a [Vec<EdgeId>],
        points: &'a [ConfigPoint],
    }
    let frame = Frame {
        t,
        cfg,
        sides: &sides,
        delta,
        adjacency: &adjacency,
        points: &points,
    };

    fn candidates_of(f: &Frame, state: &SearchState, used_mask: u64, i: usize) -> Vec<EdgeId> {
        match &f.points[i] {
            ConfigPoint::Interior(x) => (0..f.t.edge_count())
                .filter(|e| used_mask & (1 << e) == 0 && state.candidate_ok(f.t, *e, x))
                .collect(),
            ConfigPoint::Boundary { side, param: _ } => (0..f.t.edge_count())
                .filter(|&e| {
                    used_mask & (1 << e) == 0
                        && f.t.is_end(e)
                        && *side < f.sides.len()
                        && f.t.directions[e].primitive == f.sides[*side].normal
                })
                .collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &Frame,
        state: &SearchState,
        assigned: &mut BTreeMap<usize, TypeMark>,
        used_mask: u64,
        solutions: &mut Vec<MarkedCurve>,
        degenerate: &mut Option<String>,
    ) -> Result<()> {
        if degenerate.is_some() {
            return Ok(());
        }
        if assigned.len() == f.points.len() {
            let mut tt = f.t.clone();
            tt.marks = assigned.values().cloned().collect();
            if !crate::position::check_regular_type(&tt) {
                return Ok(());
            }
            match solve_type_unchecked(&tt, f.cfg, Some(f.delta))? {
                SolveOutcome::Unique(m) => {
                    if validate_ppt(&m.curve).is_clean() {
                        solutions.push(m);
                    }
                }
                SolveOutcome::NoSolution => {}
                SolveOutcome::Degenerate(msg) => *degenerate = Some(msg),
            }
            return Ok(());
        }
        // Most constrained point next.
        let mut best: Option<(usize, Vec<EdgeId>)> = None;
        for i in 0..f.points.len() {
            if assigned.contains_key(&i) {
                continue;
            }
            let cands = candidates_of(f, state, used_mask, i);
            let better = match &best {
                None => true,
                Some((_, b)) => cands.len() < b.len(),
            };
            if better {
                let empty = cands.is_empty();
                best = Some((i, cands));
                if empty {
                    break;
                }
            }
        }
        let Some((idx, cands)) = best else { return Ok(()) };
        let remaining = f.points.len() - assigned.len() - 1;
        for e in cands {
            let next_mask = used_mask | (1 << e);
            match regularity_demand(f.t, next_mask) {
                Some(demand) if demand <= remaining => {}
                _ => continue,
            }
            let mut next = state.clone();
            let mark = match &f.points[idx] {
                ConfigPoint::Interior(x) => {
                    if !next.constrain_edge(f.t, e, x) {
                        continue;
                    }
                    TypeMark::OnEdge(e)
                }
                ConfigPoint::Boundary { param, .. } => {
                    if !next.constrain_end_param(f.t, e, param) {
                        continue;
                    }
                    TypeMark::AtEnd(f.t.edges[e].1)
                }
            };
            if !next.propagate(f.t, f.adjacency) {
                continue;
            }
            assigned.insert(idx, mark);
            recurse(f, &next, assigned, next_mask, solutions, degenerate)?;
            assigned.remove(&idx);
        }
        Ok(())
    }

    let state = SearchState::new(t);
    let mut assigned = BTreeMap::new();
    recurse(
        &frame,
        &state,
        &mut assigned,
        0,
        &mut solutions,
        &mut degenerate,
    )?;
    if let Some(msg) = degenerate {
        return Err(Error::DegenerateConfiguration(msg));
    }
    Ok(solutions)
}

// ---------------------------------------------------------------------------
// Counting
// ---------------------------------------------------------------------------

fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("TROPICOUNT_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Enumerate all marked curves of the problem through one seeded
/// configuration. Retries with fresh seeds on genericity failures.
fn enumerate_curves(problem: &EnumerationProblem) -> Result<(Configuration, u64, Vec<MarkedCurve>)> {
    let types = enumerate_types(&problem.delta, problem.genus, &problem.layout);
    let n = problem.layout.interior
        + problem.layout.boundary_per_side.iter().sum::<usize>();
    // Dimension filter: matching regular marked types have exactly
    // n + 1 - genus ends.
    let wanted_ends = (n as i64 + 1 - problem.genus).max(0) as usize;
    let candidates: Vec<&CombinatorialType> = types
        .iter()
        .filter(|t| t.degree().len() == wanted_ends)
        .collect();

    let pool = thread_pool();
    for attempt in 0..8u64 {
        let seed = problem.seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9));
        let cfg = stretched_config(&problem.delta, &problem.layout, seed);
        let results: Vec<Result<Vec<MarkedCurve>>> = pool.install(|| {
            candidates
                .par_iter()
                .map(|t| match_type(t, &cfg, &problem.delta))
                .collect()
        });
        let mut all = Vec::new();
        let mut failed = false;
        for r in results {
            match r {
                Ok(ms) => all.extend(ms),
                Err(Error::DegenerateConfiguration(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            continue;
        }
        // Lazy genericity: every solution must be regular with marks
        // exhausting the preimages of the configuration.
        let mut ok = true;
        for m in &all {
            if !check_regular(m) || !marks_exhaust_preimages(m, &cfg, Some(&problem.delta)) {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        // Deduplicate by canonical form.
        let mut seen = BTreeSet::new();
        let mut curves = Vec::new();
        for m in all {
            if seen.insert(canonical_key(&m, false)) {
                curves.push(m);
            }
        }
        curves.sort_by_key(|m| canonical_key(m, false));
        return Ok((cfg, seed, curves));
    }
    Err(Error::GenericityExhausted(8))
}

/// Count curves with complex weights through a stretched configuration.
pub fn count_complex(problem: &EnumerationProblem) -> Result<EnumerationResult> {
    let (cfg, seed_used, curves) = enumerate_curves(problem)?;
    let mut counted = Vec::new();
    let mut total = BigInt::zero();
    let mut diagnostics = Vec::new();
    for m in curves {
        let weight = complex_weight_seeded(&m, problem.seed)?;
        total += &weight.total;
        counted.push(CountedCurve {
            curve: m,
            weight,
            real_weight: None,
        });
    }
    // Euler relation against generated configurations is an invariant of
    // the pipeline; violations are reported as diagnostics.
    for (i, c) in counted.iter().enumerate() {
        let k = generate_kconfiguration(&c.curve, &cfg, problem.seed);
        match crate::patchdata::check_euler(&c.curve, &k, problem.genus) {
            Ok(true) => {}
            Ok(false) => diagnostics.push(format!("curve {i}: Euler relation fails")),
            Err(e) => diagnostics.push(format!("curve {i}: Euler check error: {e}")),
        }
    }
    Ok(EnumerationResult {
        configuration: cfg,
        seed_used,
        curves: counted,
        total_complex: total,
        total_real: None,
        diagnostics,
    })
}

/// Count curves with real weights through a totally real stretched
/// configuration: every solved curve carries the identity real structure.
pub fn count_real(problem: &EnumerationProblem) -> Result<EnumerationResult> {
    let mut result = count_complex(problem)?;
    let mut total_real = BigInt::zero();
    for c in result.curves.iter_mut() {
        let r = crate::curve::RealMarkedCurve::new(
            c.curve.clone(),
            crate::curve::Involution::identity(&c.curve.curve.graph),
            vec![RealTag::Re; c.curve.marks.len()],
        )?;
        let rw = real_weight_seeded(&r, problem.seed)?;
        total_real += &rw.total;
        c.real_weight = Some(rw);
    }
    // Parity finding: the real total and complex total agree mod 2.
    let parity = (&result.total_complex - &total_real) % BigInt::from(2);
    if parity != BigInt::zero() {
        result
            .diagnostics
            .push("parity violation: real and complex totals differ mod 2".into());
    }
    result.total_real = Some(total_real);
    Ok(result)
}

/// Totals agree across seeds (complex, and real when requested).
pub fn invariance_check(
    delta: &LatticePolygon,
    genus: i64,
    seeds: &[u64],
    with_real: bool,
) -> Result<bool> {
    if seeds.len() < 2 {
        return Err(Error::InvalidInput("need at least two seeds".into()));
    }
    let mut complex_totals = Vec::new();
    let mut real_totals = Vec::new();
    for &seed in seeds {
        let problem = EnumerationProblem::standard(delta.clone(), genus, seed);
        if with_real {
            let r = count_real(&problem)?;
            complex_totals.push(r.total_complex);
            real_totals.push(r.total_real.unwrap());
        } else {
            let r = count_complex(&problem)?;
            complex_totals.push(r.total_complex);
        }
    }
    let complex_ok = complex_totals.windows(2).all(|w| w[0] == w[1]);
    let real_ok = real_totals.windows(2).all(|w| w[0] == w[1]);
    Ok(complex_ok && real_ok)
}

/// Deterministic pseudo-random configuration over the field for a solved
/// curve: valuations from the tropical configuration, nonzero rational
/// initial coefficients, identity conjugation, and the boundary matching
/// taken from the end marks.
pub fn generate_kconfiguration(
    m: &MarkedCurve,
    cfg: &Configuration,
    seed: u64,
) -> KConfiguration {
    let mut state = seed ^ 0x6b43_7970;
    let mut next = move || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        (z ^ (z >> 31)) % 1000 + 1
    };
    let mut points = Vec::new();
    let mut psi = BTreeMap::new();
    for i in 0..cfg.len() {
        let valuation = cfg.point(i);
        let coeffs = (
            ComplexRat::new(lattice::rat(next() as i64), lattice::rat(0)),
            ComplexRat::new(lattice::rat(next() as i64), lattice::rat(0)),
        );
        if matches!(valuation, ConfigPoint::Boundary { .. }) {
            // The i-th mark of a solved curve corresponds to the i-th
            // configuration point, so boundary points match their marks.
            if i < m.marks.len() && matches!(m.marks[i].addr, MarkAddr::Vertex(_)) {
                psi.insert(points.len(), i);
            }
        }
        points.push(KConfigPoint {
            valuation,
            coeffs,
            conj: i,
        });
    }
    KConfiguration { points, psi }
}

/// Diagnostic round trip used by tests: every enumerated curve's image has
/// a valid dual subdivision.
pub fn verify_enumeration(result: &EnumerationResult) -> Result<bool> {
    for c in &result.curves {
        let t = crate::curve::push_forward(&c.curve.curve)?;
        let s = dual_subdivision(&t)?;
        if !verify_duality(&t, &s).is_clean() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle(d: i64) -> LatticePolygon {
        LatticePolygon::hull(&[
            LatticePoint::new(0, 0),
            LatticePoint::new(d, 0),
            LatticePoint::new(0, d),
        ])
        .unwrap()
    }

    #[test]
    fn tilings_of_unit_triangle() {
        let tilings = enumerate_tilings(&triangle(1));
        assert_eq!(tilings.len(), 1);
        assert_eq!(tilings[0].len(), 1);
    }

    #[test]
    fn types_unit_triangle() {
        let types = enumerate_types(&triangle(1), 0, &MarkLayout::interior_only(2));
        assert_eq!(types.len(), 1, "only the tripod");
        assert_eq!(types[0].degree().len(), 3);
    }

    #[test]
    fn types_degree_two() {
        // Genus 0 connected types of the conic. Includes the 6-end types
        // (primitive ends) and 4-end types with one weight-2 end per
        // degenerate side, etc. Verified against the tiling count by
        // construction; spot-check a few structural facts.
        let types = enumerate_types(&triangle(2), 0, &MarkLayout::interior_only(5));
        assert!(!types.is_empty());
        assert!(types.iter().any(|t| t.degree().len() == 6));
        let four_enders: Vec<_> = types.iter().filter(|t| t.degree().len() == 4).collect();
        assert!(!four_enders.is_empty(), "4-end weighted types exist");
        for t in &types {
            t.validate().unwrap();
            assert_eq!(t.genus(), 0);
        }
    }

    #[test]
    fn types_degree_three_genus_one() {
        let types = enumerate_types(&triangle(3), 1, &MarkLayout::interior_only(9));
        // The smooth type dual to the full unit triangulation with an
        // interior vertex exists.
        assert!(!types.is_empty());
        assert!(types.iter().all(|t| t.genus() == 1));
    }

    #[test]
    fn count_degree_one() {
        let problem = EnumerationProblem::degree(1, 0, 0);
        let result = count_complex(&problem).unwrap();
        assert_eq!(result.curves.len(), 1);
        assert_eq!(result.total_complex, BigInt::from(1));
        assert!(result.diagnostics.is_empty());
        assert!(verify_enumeration(&result).unwrap());
    }

    #[test]
    fn count_degree_two() {
        let problem = EnumerationProblem::degree(2, 0, 0);
        let result = count_complex(&problem).unwrap();
        assert_eq!(result.total_complex, BigInt::from(1));
        assert_eq!(result.curves.len(), 1);
        assert!(result.diagnostics.is_empty());
        assert!(verify_enumeration(&result).unwrap());
    }

    #[test]
    fn count_real_degree_two() {
        let problem = EnumerationProblem::degree(2, 0, 3);
        let result = count_real(&problem).unwrap();
        assert_eq!(result.total_real, Some(BigInt::from(1)));
        assert!(result.diagnostics.is_empty());
    }

    #[test]
    fn invariance_small_degrees() {
        assert!(invariance_check(&triangle(1), 0, &[0, 1, 2], true).unwrap());
        assert!(invariance_check(&triangle(2), 0, &[0, 1], false).unwrap());
    }
}

//! Newton polygons, dual subdivisions and tropicalization.
//!
//! The support function of an embedded tropical curve is
//! `f(x) = max over omega of (<omega, x> + c_omega)`; its Legendre dual
//! `nu(omega) = -c_omega` is convex piecewise linear on the Newton polygon
//! and its linearity domains cut the dual subdivision. On the cell dual to
//! a curve vertex `V` the gradient of `nu` equals `V`.

use crate::curve::{
    genus, rational_primitive, AbstractGraph, Edge, EdgeLength, EptCurve, EptRay, EptSegment,
    PptCurve, VertexKind,
};
use crate::error::{Error, Result, ValidationReport};
use crate::lattice::{
    self, angle_cmp, LatticePoint, LatticePolygon, RationalPoint, WeightedDirection,
};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Convex piecewise-linear data on a lattice polygon: exact rational values
/// recorded on a subset of its lattice points (cell vertices); values
/// elsewhere are induced by affine extension per cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlFunction {
    pub carrier: LatticePolygon,
    pub values: BTreeMap<LatticePoint, BigRational>,
}

/// A subdivision of a Newton polygon dual to an embedded tropical curve.
#[derive(Debug, Clone)]
pub struct DualSubdivision {
    pub polygon: LatticePolygon,
    pub cells: Vec<LatticePolygon>,
    pub nu: PlFunction,
    /// Cell dual to each curve vertex (index into `cells`).
    pub vertex_cell: Vec<usize>,
    /// Dual edge of each curve segment.
    pub segment_dual: Vec<(LatticePoint, LatticePoint)>,
    /// Dual boundary edge of each curve ray.
    pub ray_dual: Vec<(LatticePoint, LatticePoint)>,
}

impl DualSubdivision {
    /// Total cell volume; equals the polygon volume for genuine subdivisions.
    pub fn cell_volume_sum(&self) -> i64 {
        self.cells.iter().map(|c| c.lattice_volume()).sum()
    }
}

/// Newton polygon of a PPT-curve, assembled from its degree: each end
/// contributes the boundary edge vector `R90(w * u)`. Canonical translate
/// (minimum corner at the origin).
pub fn newton_polygon(c: &PptCurve) -> Result<LatticePolygon> {
    let vectors: Vec<LatticePoint> = c
        .graph
        .ends()
        .map(|e| c.direction(e).vector().rot90())
        .collect();
    if vectors.is_empty() {
        return Err(Error::EmptySupport);
    }
    LatticePolygon::from_edge_vectors(&vectors)
}

/// The convex polygon spanned at a finite vertex by the outgoing weighted
/// directions rotated by pi/2 (a triangle at trivalent vertices). Canonical
/// translate.
pub fn vertex_dual_polygon(c: &PptCurve, v: usize) -> Result<LatticePolygon> {
    let vectors: Vec<LatticePoint> = c
        .graph
        .incident_edges(v)
        .into_iter()
        .map(|e| c.direction_from(e, v).vector().rot90())
        .collect();
    LatticePolygon::from_edge_vectors(&vectors)
}

/// What an item incident to an embedded-curve vertex leads to.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Attach {
    Segment(usize),
    Ray(usize),
}

fn ept_incidences(t: &EptCurve) -> Result<Vec<Vec<(WeightedDirection, Attach)>>> {
    let mut out: Vec<Vec<(WeightedDirection, Attach)>> = vec![Vec::new(); t.vertices.len()];
    for (i, s) in t.segments.iter().enumerate() {
        let d = t.vertices[s.b].sub(&t.vertices[s.a]);
        let dir = rational_primitive(&d)
            .ok_or_else(|| Error::MalformedCurve(format!("segment {i} is degenerate")))?;
        out[s.a].push((WeightedDirection::new(dir, s.weight), Attach::Segment(i)));
        out[s.b].push((WeightedDirection::new(dir.neg(), s.weight), Attach::Segment(i)));
    }
    for (i, r) in t.rays.iter().enumerate() {
        out[r.base].push((WeightedDirection::new(r.dir, r.weight), Attach::Ray(i)));
    }
    Ok(out)
}

type CellWalk = (Vec<LatticePoint>, Vec<(Attach, (LatticePoint, LatticePoint))>);

/// Local dual cell of a vertex: walk the rotated weighted directions in
/// counterclockwise order. Returns the walk anchored at the origin plus,
/// for each incident item, its dual side.
fn local_cell(items: &[(WeightedDirection, Attach)]) -> Result<CellWalk> {
    let mut sorted: Vec<&(WeightedDirection, Attach)> = items.iter().collect();
    sorted.sort_by(|a, b| angle_cmp(a.0.primitive, b.0.primitive));
    let mut walk = vec![LatticePoint::new(0, 0)];
    let mut sides = Vec::new();
    let mut cur = LatticePoint::new(0, 0);
    for (d, attach) in sorted {
        let step = d.vector().rot90();
        let next = cur.add(step);
        sides.push((attach.clone(), (cur, next)));
        walk.push(next);
        cur = next;
    }
    if !cur.is_zero() {
        return Err(Error::Unbalanced("local".into(), "cell does not close".into()));
    }
    walk.pop();
    Ok((walk, sides))
}

/// Dual subdivision of a balanced embedded curve with at least one vertex.
///
/// Cells are assembled per vertex and glued along shared dual edges; the
/// subdivision is translated so the Newton polygon has its minimum corner
/// at the origin, and `nu` is normalized to minimum value zero.
pub fn dual_subdivision(t: &EptCurve) -> Result<DualSubdivision> {
    if t.vertices.is_empty() {
        return Err(Error::MalformedCurve("curve has no vertices".into()));
    }
    let balance = t.validate();
    if !balance.is_clean() {
        let f = balance.failures().next().unwrap();
        return Err(Error::Unbalanced(
            f.location.clone().unwrap_or_default(),
            f.message.clone(),
        ));
    }
    let incidences = ept_incidences(t)?;

    let n = t.vertices.len();
    let mut local: Vec<CellWalk> = Vec::with_capacity(n);
    for items in &incidences {
        local.push(local_cell(items)?);
    }

    // Glue cells across segments: the dual side of a segment must coincide
    // in both endpoint cells.
    let mut offset: Vec<Option<LatticePoint>> = vec![None; n];
    offset[0] = Some(LatticePoint::new(0, 0));
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let off_v = offset[v].unwrap();
        for (attach, (a, b)) in &local[v].1 {
            let Attach::Segment(si) = attach else { continue };
            let seg = &t.segments[*si];
            let w = if seg.a == v { seg.b } else { seg.a };
            let (wa, wb) = local[w]
                .1
                .iter()
                .find(|(at, _)| *at == Attach::Segment(*si))
                .map(|(_, s)| *s)
                .expect("segment side exists at both endpoints");
            // Orientations are opposite: v's side runs a -> b, w's runs
            // wa -> wb with wb - wa = -(b - a); align wa with b.
            let need = off_v.add(*b).sub(wa);
            match offset[w] {
                None => {
                    offset[w] = Some(need);
                    queue.push_back(w);
                }
                Some(existing) => {
                    if existing != need {
                        return Err(Error::MalformedCurve(format!(
                            "dual cells do not close around segment {si}"
                        )));
                    }
                }
            }
            if offset[w].unwrap().add(wb) != off_v.add(*a) {
                return Err(Error::MalformedCurve(format!(
                    "dual edge of segment {si} mismatches between its cells"
                )));
            }
        }
    }
    if offset.iter().any(Option::is_none) {
        return Err(Error::MalformedCurve("embedded curve is disconnected".into()));
    }

    // Assemble cells, translate canonically.
    let mut all_points = Vec::new();
    let mut raw_cells: Vec<Vec<LatticePoint>> = Vec::with_capacity(n);
    for v in 0..n {
        let off = offset[v].unwrap();
        let pts: Vec<LatticePoint> = local[v].0.iter().map(|p| p.add(off)).collect();
        all_points.extend(pts.iter().copied());
        raw_cells.push(pts);
    }
    let bbox_min = LatticePoint::new(
        all_points.iter().map(|p| p.x).min().unwrap(),
        all_points.iter().map(|p| p.y).min().unwrap(),
    );
    let shift = bbox_min.neg();
    let cells: Vec<LatticePolygon> = raw_cells
        .iter()
        .map(|pts| {
            let shifted: Vec<LatticePoint> = pts.iter().map(|p| p.add(shift)).collect();
            LatticePolygon::hull(&shifted)
        })
        .collect::<Result<_>>()?;
    let polygon =
        LatticePolygon::hull(&all_points.iter().map(|p| p.add(shift)).collect::<Vec<_>>())?;

    // nu: affine with gradient V on the cell dual to V; propagate the
    // constants over the gluing structure and normalize the minimum to 0.
    let grad = |v: usize, p: LatticePoint| -> BigRational {
        let pos = &t.vertices[v];
        &pos.x * lattice::rat(p.x) + &pos.y * lattice::rat(p.y)
    };
    let mut constant: Vec<Option<BigRational>> = vec![None; n];
    constant[0] = Some(BigRational::zero());
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let c_v = constant[v].clone().unwrap();
        for (attach, (a, _)) in &local[v].1 {
            let Attach::Segment(si) = attach else { continue };
            let seg = &t.segments[*si];
            let w = if seg.a == v { seg.b } else { seg.a };
            if constant[w].is_some() {
                continue;
            }
            let shared = a.add(offset[v].unwrap()).add(shift);
            let value = grad(v, shared) + &c_v;
            constant[w] = Some(value - grad(w, shared));
            queue.push_back(w);
        }
    }
    let mut values: BTreeMap<LatticePoint, BigRational> = BTreeMap::new();
    for v in 0..n {
        let c_v = constant[v].clone().unwrap();
        for p in cells[v].vertices() {
            let val = grad(v, *p) + &c_v;
            if let Some(existing) = values.get(p) {
                if *existing != val {
                    return Err(Error::MalformedCurve(format!(
                        "inconsistent dual values at {p}"
                    )));
                }
            } else {
                values.insert(*p, val);
            }
        }
    }
    let min = values.values().min().cloned().unwrap_or_else(BigRational::zero);
    for val in values.values_mut() {
        *val -= &min;
    }

    // Dual edges of segments and rays in the translated coordinates.
    let zero = LatticePoint::new(0, 0);
    let mut segment_dual = vec![(zero, zero); t.segments.len()];
    let mut ray_dual = vec![(zero, zero); t.rays.len()];
    for v in 0..n {
        let off = offset[v].unwrap().add(shift);
        for (attach, (a, b)) in &local[v].1 {
            let edge = (a.add(off), b.add(off));
            match attach {
                Attach::Segment(si) => segment_dual[*si] = edge,
                Attach::Ray(ri) => ray_dual[*ri] = edge,
            }
        }
    }

    Ok(DualSubdivision {
        polygon,
        cells,
        nu: PlFunction {
            carrier: LatticePolygon::hull(&values.keys().copied().collect::<Vec<_>>())?,
            values,
        },
        vertex_cell: (0..n).collect(),
        segment_dual,
        ray_dual,
    })
}

/// Verify the duality clauses between an embedded curve and a subdivision:
/// face bijection, orthogonality of dual edges, weight = lattice length,
/// affineness and convexity of nu, and the volume sum.
pub fn verify_duality(t: &EptCurve, s: &DualSubdivision) -> ValidationReport {
    let mut report = ValidationReport::new();

    if s.cells.len() == t.vertices.len() && s.vertex_cell.len() == t.vertices.len() {
        report.pass("faces", "one cell per curve vertex");
    } else {
        report.fail(
            "faces",
            format!("{} cells for {} vertices", s.cells.len(), t.vertices.len()),
        );
        return report;
    }

    let total = s.cell_volume_sum();
    if total == s.polygon.lattice_volume() {
        report.pass("volume", format!("cell volumes sum to {total}"));
    } else {
        report.fail(
            "volume",
            format!(
                "cell volumes sum to {total}, polygon volume is {}",
                s.polygon.lattice_volume()
            ),
        );
    }

    let mut overlap = false;
    for i in 0..s.cells.len() {
        for j in i + 1..s.cells.len() {
            if !lattice::interiors_disjoint(&s.cells[i], &s.cells[j]) {
                overlap = true;
                report.fail_at("disjoint", format!("cells {i},{j}"), "interiors overlap");
            }
        }
    }
    if !overlap {
        report.pass("disjoint", "cell interiors are pairwise disjoint");
    }

    for (i, seg) in t.segments.iter().enumerate() {
        if i >= s.segment_dual.len() {
            report.fail_at("dual-edge", format!("segment {i}"), "missing dual edge");
            continue;
        }
        let (a, b) = s.segment_dual[i];
        let dvec = b.sub(a);
        let dir = t.vertices[seg.b].sub(&t.vertices[seg.a]);
        let ortho = dir.dot_int(dvec).is_zero();
        let length = num_integer::gcd(dvec.x.abs(), dvec.y.abs());
        if ortho && length == seg.weight as i64 {
            report.pass("dual-edge", format!("segment {i} dual edge matches"));
        } else {
            report.fail_at(
                "dual-edge",
                format!("segment {i}"),
                format!(
                    "orthogonal={ortho}, lattice length {length} vs weight {}",
                    seg.weight
                ),
            );
        }
        let in_a = cell_has_side(&s.cells[s.vertex_cell[seg.a]], a, b);
        let in_b = cell_has_side(&s.cells[s.vertex_cell[seg.b]], a, b);
        if in_a && in_b {
            report.pass("incidence", format!("segment {i} dual edge shared by its cells"));
        } else {
            report.fail_at(
                "incidence",
                format!("segment {i}"),
                "dual edge is not a shared side of the endpoint cells",
            );
        }
    }

    for (i, ray) in t.rays.iter().enumerate() {
        if i >= s.ray_dual.len() {
            report.fail_at("dual-ray", format!("ray {i}"), "missing dual edge");
            continue;
        }
        let (a, b) = s.ray_dual[i];
        let dvec = b.sub(a);
        let ortho = ray.dir.dot(dvec) == 0;
        let length = num_integer::gcd(dvec.x.abs(), dvec.y.abs());
        let on_boundary = !s.polygon.contains_interior(a) && !s.polygon.contains_interior(b);
        if ortho && length == ray.weight as i64 && on_boundary {
            report.pass("dual-ray", format!("ray {i} boundary dual edge matches"));
        } else {
            report.fail_at(
                "dual-ray",
                format!("ray {i}"),
                format!(
                    "orthogonal={ortho}, length {length} vs weight {}, boundary={on_boundary}",
                    ray.weight
                ),
            );
        }
    }

    // nu affine on each cell with gradient the dual vertex position.
    let mut nu_ok = true;
    for (v, &ci) in s.vertex_cell.iter().enumerate() {
        let cell = &s.cells[ci];
        let pos = &t.vertices[v];
        let vs = cell.vertices();
        let base = vs[0];
        let base_val = match s.nu.values.get(&base) {
            Some(x) => x.clone(),
            None => {
                nu_ok = false;
                report.fail_at("nu", format!("cell {ci}"), format!("no value at {base}"));
                continue;
            }
        };
        for p in &vs[1..] {
            let expect = &base_val
                + (&pos.x * lattice::rat(p.x - base.x) + &pos.y * lattice::rat(p.y - base.y));
            match s.nu.values.get(p) {
                Some(x) if *x == expect => {}
                _ => {
                    nu_ok = false;
                    report.fail_at(
                        "nu",
                        format!("cell {ci}"),
                        format!("value at {p} does not match gradient {pos}"),
                    );
                }
            }
        }
    }
    if nu_ok {
        report.pass("nu", "nu is affine on each cell with the dual gradient");
    }

    // Strict convexity across interior dual edges: the gradient jump from
    // cell(a) to cell(b) points out of cell(a) across the shared side. The
    // outward normal is disambiguated against the cell centroid since the
    // stored dual-edge orientation is arbitrary.
    let mut convex_ok = true;
    for (i, seg) in t.segments.iter().enumerate() {
        if i >= s.segment_dual.len() {
            continue;
        }
        let (a, b) = s.segment_dual[i];
        let side_vec = b.sub(a);
        let jump = t.vertices[seg.b].sub(&t.vertices[seg.a]);
        let cell_a = &s.cells[s.vertex_cell[seg.a]];
        let n = cell_a.vertices().len() as i64;
        let centroid = cell_a.vertices().iter().fold(RationalPoint::zero(), |acc, p| {
            acc.add(&RationalPoint::new(
                lattice::ratio(p.x, n),
                lattice::ratio(p.y, n),
            ))
        });
        let midpoint = RationalPoint::new(
            lattice::ratio(a.x + b.x, 2),
            lattice::ratio(a.y + b.y, 2),
        );
        let mut normal = side_vec.rot90();
        if centroid.sub(&midpoint).dot_int(normal).is_positive() {
            normal = normal.neg();
        }
        if !jump.dot_int(normal).is_positive() {
            convex_ok = false;
            report.fail_at(
                "convex",
                format!("segment {i}"),
                "nu is not strictly convex across the dual edge",
            );
        }
    }
    if convex_ok {
        report.pass("convex", "nu is strictly convex across interior edges");
    }

    report
}

fn cell_has_side(cell: &LatticePolygon, a: LatticePoint, b: LatticePoint) -> bool {
    cell.sides()
        .iter()
        .any(|s| (s.start == a && s.end == b) || (s.start == b && s.end == a))
}

/// True iff every cell is a triangle or a parallelogram.
pub fn is_nodal(s: &DualSubdivision) -> bool {
    s.cells.iter().all(|c| {
        let vs = c.vertices();
        match vs.len() {
            3 => true,
            4 => vs[1].sub(vs[0]) == vs[2].sub(vs[3]),
            _ => false,
        }
    })
}

/// Minkowski decomposition of the dual cell at an image point: one segment
/// per edge whose interior passes through the point and one vertex polygon
/// per vertex mapped there. All summands in canonical translation.
pub fn vertex_cell_decomposition(
    c: &PptCurve,
    v_img: &RationalPoint,
) -> Result<Vec<LatticePolygon>> {
    let mut parts = Vec::new();
    for e in 0..c.graph.edge_count() {
        let edge = c.graph.edge(e);
        let d = c.direction(e);
        let base = c.position(edge.tail);
        let rel = v_img.sub(base);
        if !rel.cross_int(d.primitive).is_zero() {
            continue;
        }
        let along = rel.dot_int(d.primitive);
        let inside = if c.graph.is_end(e) {
            along.is_positive()
        } else {
            let head = c.position(edge.head);
            let span = head.sub(base).dot_int(d.primitive);
            along.is_positive() && along < span
        };
        if inside {
            let seg_vec = d.vector().rot90();
            parts.push(
                LatticePolygon::segment(LatticePoint::new(0, 0), seg_vec).canonical_translate(),
            );
        }
    }
    for v in c.graph.finite_vertices() {
        if c.position(v) == v_img {
            parts.push(vertex_dual_polygon(c, v)?);
        }
    }
    if parts.is_empty() {
        return Err(Error::PointNotOnCurve(
            v_img.x.to_string(),
            v_img.y.to_string(),
        ));
    }
    Ok(parts)
}

// ---------------------------------------------------------------------------
// Tropicalization
// ---------------------------------------------------------------------------

/// A polynomial over the Puiseux field reduced to its tropical data: the
/// support, the exponent `nu(omega)` of the leading term of each
/// coefficient (the negated valuation), and optionally the initial
/// coefficients as complex rationals.
#[derive(Debug, Clone)]
pub struct ValuatedPolynomial {
    pub support: Vec<LatticePoint>,
    pub valuation: BTreeMap<LatticePoint, BigRational>,
    pub initial: Option<BTreeMap<LatticePoint, (BigRational, BigRational)>>,
}

impl ValuatedPolynomial {
    pub fn new(
        support: Vec<LatticePoint>,
        valuation: BTreeMap<LatticePoint, BigRational>,
        initial: Option<BTreeMap<LatticePoint, (BigRational, BigRational)>>,
    ) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        for p in &support {
            if !valuation.contains_key(p) {
                return Err(Error::InvalidInput(format!("no valuation for {p}")));
            }
        }
        Ok(ValuatedPolynomial {
            support,
            valuation,
            initial,
        })
    }
}

/// Corner locus of `x -> max(<omega, x> - nu(omega))` together with the
/// regular subdivision induced by the lower hull of the lifted support.
///
/// One-dimensional supports produce a union of parallel lines, each
/// represented as two opposite rays from a point on it.
pub fn tropicalize(p: &ValuatedPolynomial) -> Result<(EptCurve, DualSubdivision)> {
    let mut support = p.support.clone();
    support.sort();
    support.dedup();
    if support.len() < 2 {
        return Err(Error::EmptySupport);
    }
    let delta = LatticePolygon::hull(&support)?;
    if delta.dim() == 0 {
        return Err(Error::EmptySupport);
    }
    let nu = |w: &LatticePoint| p.valuation[w].clone();

    if delta.dim() == 1 {
        return tropicalize_segment(p, &support, &delta);
    }

    // Lower hull by supporting-plane enumeration over affinely independent
    // triples of lifted points.
    #[derive(PartialEq, Eq, PartialOrd, Ord, Clone)]
    struct Plane {
        gx: BigRational,
        gy: BigRational,
        c: BigRational,
    }
    let mut planes: BTreeSet<Plane> = BTreeSet::new();
    let m = support.len();
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                let (a, b, c3) = (support[i], support[j], support[k]);
                let det = b.sub(a).cross(c3.sub(a));
                if det == 0 {
                    continue;
                }
                let (na, nb, nc) = (nu(&a), nu(&b), nu(&c3));
                let det_r = lattice::rat(det as i64);
                let gx = ((&nb - &na) * lattice::rat(c3.y - a.y)
                    - (&nc - &na) * lattice::rat(b.y - a.y))
                    / det_r.clone();
                let gy = ((&nc - &na) * lattice::rat(b.x - a.x)
                    - (&nb - &na) * lattice::rat(c3.x - a.x))
                    / det_r;
                let c0 = na - (&gx * lattice::rat(a.x) + &gy * lattice::rat(a.y));
                let supports_all = support
                    .iter()
                    .all(|w| nu(w) >= &gx * lattice::rat(w.x) + &gy * lattice::rat(w.y) + &c0);
                if supports_all {
                    planes.insert(Plane { gx, gy, c: c0 });
                }
            }
        }
    }

    // Cells: support points lying on each plane; keep 2-dimensional ones.
    let mut cells: Vec<LatticePolygon> = Vec::new();
    let mut gradients: Vec<RationalPoint> = Vec::new();
    for plane in &planes {
        let on_plane: Vec<LatticePoint> = support
            .iter()
            .copied()
            .filter(|w| {
                nu(w) == &plane.gx * lattice::rat(w.x) + &plane.gy * lattice::rat(w.y) + &plane.c
            })
            .collect();
        if on_plane.len() < 3 {
            continue;
        }
        let cell = LatticePolygon::hull(&on_plane)?;
        if cell.dim() == 2 {
            cells.push(cell);
            gradients.push(RationalPoint::new(plane.gx.clone(), plane.gy.clone()));
        }
    }
    if cells.is_empty() {
        return Err(Error::InvalidInput(
            "support does not span a two-dimensional subdivision".into(),
        ));
    }

    if let Some(initial) = &p.initial {
        for cell in &cells {
            for w in cell.vertices() {
                match initial.get(w) {
                    Some((re, im)) if !(re.is_zero() && im.is_zero()) => {}
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "initial coefficient at subdivision vertex {w} is zero or missing"
                        )))
                    }
                }
            }
        }
    }

    let vertices: Vec<RationalPoint> = gradients;

    let mut segments: Vec<EptSegment> = Vec::new();
    let mut rays: Vec<EptRay> = Vec::new();
    let mut segment_dual: Vec<(LatticePoint, LatticePoint)> = Vec::new();
    let mut ray_dual: Vec<(LatticePoint, LatticePoint)> = Vec::new();
    let mut open_sides: BTreeMap<(LatticePoint, LatticePoint), usize> = BTreeMap::new();
    for (ci, cell) in cells.iter().enumerate() {
        for side in cell.sides() {
            let key = if side.start < side.end {
                (side.start, side.end)
            } else {
                (side.end, side.start)
            };
            match open_sides.get(&key) {
                None => {
                    open_sides.insert(key, ci);
                }
                Some(&cj) => {
                    segments.push(EptSegment {
                        a: cj,
                        b: ci,
                        weight: side.length,
                    });
                    segment_dual.push(key);
                    open_sides.remove(&key);
                }
            }
        }
    }
    for (key, ci) in open_sides {
        let side_vec = key.1.sub(key.0);
        let length = num_integer::gcd(side_vec.x.abs(), side_vec.y.abs()) as u64;
        let normal = delta
            .sides()
            .iter()
            .find(|s| s.contains(key.0) && s.contains(key.1))
            .map(|s| s.normal)
            .ok_or_else(|| {
                Error::InvalidInput(format!("cell side {} - {} on no boundary side", key.0, key.1))
            })?;
        rays.push(EptRay {
            base: ci,
            dir: normal,
            weight: length,
        });
        ray_dual.push(key);
    }

    let curve = EptCurve {
        vertices,
        segments,
        rays,
    };

    let mut values = BTreeMap::new();
    for cell in &cells {
        for w in cell.vertices() {
            values.insert(*w, nu(w));
        }
    }
    let sub = DualSubdivision {
        polygon: delta.clone(),
        cells,
        nu: PlFunction {
            carrier: delta,
            values,
        },
        vertex_cell: (0..curve.vertices.len()).collect(),
        segment_dual,
        ray_dual,
    };
    Ok((curve, sub))
}

/// One-dimensional support: the tropical curve is a union of parallel
/// lines dual to the cells of the one-dimensional lower hull.
fn tropicalize_segment(
    p: &ValuatedPolynomial,
    support: &[LatticePoint],
    delta: &LatticePolygon,
) -> Result<(EptCurve, DualSubdivision)> {
    let a0 = delta.vertices()[0];
    let dvec = delta.vertices()[1].sub(a0);
    let g = num_integer::gcd(dvec.x.abs(), dvec.y.abs());
    let step = LatticePoint::new(dvec.x / g, dvec.y / g);
    let mut pts: Vec<(i64, LatticePoint)> = support
        .iter()
        .map(|w| {
            let rel = w.sub(a0);
            (rel.dot(step) as i64, *w)
        })
        .collect();
    pts.sort();
    let mut hull: Vec<(i64, LatticePoint)> = Vec::new();
    for &(t, w) in &pts {
        while hull.len() >= 2 {
            let (t1, w1) = hull[hull.len() - 2];
            let (t2, w2) = hull[hull.len() - 1];
            let v1 = &p.valuation[&w1];
            let v2 = &p.valuation[&w2];
            let vv = &p.valuation[&w];
            // Drop w2 when it is on or above the chord from w1 to w.
            let lhs = (v2 - v1) * lattice::rat(t - t1);
            let rhs = (vv - v1) * lattice::rat(t2 - t1);
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((t, w));
    }
    if hull.len() < 2 {
        return Err(Error::EmptySupport);
    }
    let mut vertices = Vec::new();
    let mut rays = Vec::new();
    let mut cells = Vec::new();
    let mut ray_dual = Vec::new();
    let normal = step.rot90();
    for win in hull.windows(2) {
        let (t1, w1) = win[0];
        let (t2, w2) = win[1];
        // Dual line: <w2 - w1, x> = nu(w2) - nu(w1); anchor at the closest
        // point to the origin.
        let diff = w2.sub(w1);
        let rhs = &p.valuation[&w2] - &p.valuation[&w1];
        let n2 = lattice::rat(diff.x * diff.x + diff.y * diff.y);
        let base = RationalPoint::new(
            &rhs * lattice::rat(diff.x) / n2.clone(),
            &rhs * lattice::rat(diff.y) / n2,
        );
        let vi = vertices.len();
        vertices.push(base);
        let weight = (t2 - t1) as u64;
        rays.push(EptRay {
            base: vi,
            dir: normal,
            weight,
        });
        rays.push(EptRay {
            base: vi,
            dir: normal.neg(),
            weight,
        });
        cells.push(LatticePolygon::segment(w1, w2));
        ray_dual.push((w1, w2));
        ray_dual.push((w1, w2));
    }
    let mut values = BTreeMap::new();
    for (_, w) in &hull {
        values.insert(*w, p.valuation[w].clone());
    }
    let curve = EptCurve {
        vertices,
        segments: Vec::new(),
        rays,
    };
    let sub = DualSubdivision {
        polygon: delta.clone(),
        cells,
        nu: PlFunction {
            carrier: delta.clone(),
            values,
        },
        vertex_cell: (0..curve.vertices.len()).collect(),
        segment_dual: Vec::new(),
        ray_dual,
    };
    Ok((curve, sub))
}

/// Canonically lift a nodal embedded curve to a simple PPT-curve: vertices
/// whose dual cells are parallelograms are resolved into transverse
/// crossings, all others become graph vertices.
pub fn lift_nodal(t: &EptCurve, s: &DualSubdivision) -> Result<PptCurve> {
    let incidences = ept_incidences(t)?;
    let is_node = |v: usize| -> bool {
        let cell = &s.cells[s.vertex_cell[v]];
        cell.vertices().len() == 4 && incidences[v].len() == 4
    };

    let mut vertex_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kinds: Vec<VertexKind> = Vec::new();
    let mut positions: Vec<Option<RationalPoint>> = Vec::new();
    for v in 0..t.vertices.len() {
        if !is_node(v) {
            vertex_of.insert(v, kinds.len());
            kinds.push(VertexKind::Finite);
            positions.push(Some(t.vertices[v].clone()));
        }
    }

    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    enum Item {
        Seg(usize),
        Ray(usize),
    }
    let mut used: BTreeSet<(usize, Item)> = BTreeSet::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut directions: Vec<WeightedDirection> = Vec::new();

    let other_end = |seg: usize, v: usize| -> usize {
        let s = &t.segments[seg];
        if s.a == v {
            s.b
        } else {
            s.a
        }
    };

    for v0 in 0..t.vertices.len() {
        if is_node(v0) {
            continue;
        }
        for (d0, attach) in &incidences[v0] {
            let item = match attach {
                Attach::Segment(i) => Item::Seg(*i),
                Attach::Ray(i) => Item::Ray(*i),
            };
            if used.contains(&(v0, item)) {
                continue;
            }
            used.insert((v0, item));
            let weight = d0.weight;
            let dir = d0.primitive;
            let mut cur_item = item;
            let mut cur_from = v0;
            let terminal;
            loop {
                match cur_item {
                    Item::Ray(_) => {
                        terminal = None;
                        break;
                    }
                    Item::Seg(si) => {
                        let w = other_end(si, cur_from);
                        if !is_node(w) {
                            used.insert((w, Item::Seg(si)));
                            terminal = Some(w);
                            break;
                        }
                        used.insert((w, Item::Seg(si)));
                        let next = incidences[w]
                            .iter()
                            .find(|(d, at)| {
                                d.primitive == dir
                                    && d.weight == weight
                                    && *at != Attach::Segment(si)
                            })
                            .ok_or_else(|| {
                                Error::MalformedCurve(format!(
                                    "node at vertex {w} has no straight continuation"
                                ))
                            })?;
                        cur_item = match &next.1 {
                            Attach::Segment(i) => Item::Seg(*i),
                            Attach::Ray(i) => Item::Ray(*i),
                        };
                        used.insert((w, cur_item));
                        cur_from = w;
                    }
                }
            }
            let tail = vertex_of[&v0];
            match terminal {
                Some(w) => {
                    if w < v0 {
                        continue; // already emitted from the other side
                    }
                    let head = vertex_of[&w];
                    let disp = t.vertices[w].sub(&t.vertices[v0]);
                    let len = metric_length(&disp, dir, weight)?;
                    edges.push(Edge {
                        tail,
                        head,
                        length: EdgeLength::Finite(len),
                    });
                    directions.push(WeightedDirection::new(dir, weight));
                }
                None => {
                    let inf = kinds.len();
                    kinds.push(VertexKind::Infinite);
                    positions.push(None);
                    edges.push(Edge {
                        tail,
                        head: inf,
                        length: EdgeLength::Infinite,
                    });
                    directions.push(WeightedDirection::new(dir, weight));
                }
            }
        }
    }

    let graph = AbstractGraph::new(kinds, edges)?;
    PptCurve::new(graph, positions, directions)
}

/// Metric length of an edge with displacement `disp`, primitive direction
/// `dir` and weight `w`: disp = len * w * dir.
fn metric_length(disp: &RationalPoint, dir: LatticePoint, w: u64) -> Result<BigRational> {
    let denom = lattice::rat(w as i64);
    let len = if dir.x != 0 {
        &disp.x / (lattice::rat(dir.x) * &denom)
    } else {
        &disp.y / (lattice::rat(dir.y) * &denom)
    };
    if len <= BigRational::zero() {
        return Err(Error::MalformedCurve("nonpositive strand length".into()));
    }
    let expect = RationalPoint::zero().advance(&(&len * &denom), dir);
    if expect != *disp {
        return Err(Error::MalformedCurve("strand displacement mismatch".into()));
    }
    Ok(len)
}

/// Genus of the simple lift of a nodal curve.
pub fn lifted_genus(t: &EptCurve, s: &DualSubdivision) -> Result<i64> {
    Ok(genus(&lift_nodal(t, s)?.graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::push_forward;
    use crate::curve::tests::{line_tripod, tripod};
    use crate::lattice::rat;

    fn pt(x: i64, y: i64) -> LatticePoint {
        LatticePoint::new(x, y)
    }

    fn poly(pts: &[(i64, i64)]) -> LatticePolygon {
        LatticePolygon::hull(&pts.iter().map(|&(x, y)| pt(x, y)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn newton_polygon_examples() {
        assert_eq!(
            newton_polygon(&line_tripod()).unwrap(),
            poly(&[(0, 0), (1, 0), (0, 1)])
        );

        let c = tripod([2, 2, 2], [(-1, 0), (0, -1), (1, 1)]);
        assert_eq!(newton_polygon(&c).unwrap(), poly(&[(0, 0), (2, 0), (0, 2)]));
    }

    #[test]
    fn newton_polygon_degree_d_oracle() {
        // d copies of each line direction, assembled by rotating and
        // walking the boundary; closure is checked by the constructor.
        for d in 1..=4i64 {
            let mut vectors = Vec::new();
            for _ in 0..d {
                vectors.push(pt(-1, 0).rot90());
                vectors.push(pt(0, -1).rot90());
                vectors.push(pt(1, 1).rot90());
            }
            let p = LatticePolygon::from_edge_vectors(&vectors).unwrap();
            assert_eq!(p, poly(&[(0, 0), (d, 0), (0, d)]));
        }
    }

    #[test]
    fn dual_subdivision_tripod() {
        let t = push_forward(&line_tripod()).unwrap();
        let s = dual_subdivision(&t).unwrap();
        assert_eq!(s.polygon, poly(&[(0, 0), (1, 0), (0, 1)]));
        assert_eq!(s.cells.len(), 1);
        assert!(verify_duality(&t, &s).is_clean());
        assert!(is_nodal(&s));
    }

    #[test]
    fn dual_subdivision_weight_two_edge() {
        use crate::curve::{AbstractGraph, Edge, EdgeLength, PptCurve, VertexKind};
        use crate::lattice::WeightedDirection;
        let vertices = vec![
            VertexKind::Finite,
            VertexKind::Finite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
            VertexKind::Infinite,
        ];
        let edges = vec![
            Edge { tail: 0, head: 1, length: EdgeLength::Finite(rat(1)) },
            Edge { tail: 0, head: 2, length: EdgeLength::Infinite },
            Edge { tail: 0, head: 3, length: EdgeLength::Infinite },
            Edge { tail: 1, head: 4, length: EdgeLength::Infinite },
            Edge { tail: 1, head: 5, length: EdgeLength::Infinite },
        ];
        let graph = AbstractGraph::new(vertices, edges).unwrap();
        let positions = vec![
            Some(RationalPoint::zero()),
            Some(RationalPoint::from_ints(0, 2)),
            None,
            None,
            None,
            None,
        ];
        let w = |x, y, k| WeightedDirection::new(pt(x, y), k);
        let directions = vec![
            w(0, 1, 2),
            w(1, -1, 1),
            w(-1, -1, 1),
            w(1, 1, 1),
            w(-1, 1, 1),
        ];
        let c = PptCurve::new(graph, positions, directions).unwrap();
        assert!(crate::curve::validate_ppt(&c).is_clean());
        let t = push_forward(&c).unwrap();
        let s = dual_subdivision(&t).unwrap();
        assert!(verify_duality(&t, &s).is_clean());
        let (a, b) = s.segment_dual[0];
        let d = b.sub(a);
        assert_eq!(num_integer::gcd(d.x.abs(), d.y.abs()), 2);
    }

    #[test]
    fn verify_duality_detects_perturbations() {
        let t = push_forward(&line_tripod()).unwrap();
        let mut s = dual_subdivision(&t).unwrap();
        s.cells[0] = poly(&[(0, 0), (2, 0), (0, 1)]);
        let report = verify_duality(&t, &s);
        assert!(!report.is_clean());
        assert!(report.failures().any(|f| f.rule == "volume"));

        let mut t2 = push_forward(&line_tripod()).unwrap();
        let s2 = dual_subdivision(&t2).unwrap();
        t2.rays[0].weight = 2;
        let report = verify_duality(&t2, &s2);
        assert!(report
            .failures()
            .any(|f| f.rule == "dual-ray" || f.rule == "dual-edge"));
    }

    #[test]
    fn tropicalize_symmetric_tripod() {
        let support = vec![pt(0, 0), pt(1, 0), pt(0, 1)];
        let valuation: BTreeMap<LatticePoint, BigRational> =
            support.iter().map(|w| (*w, rat(0))).collect();
        let p = ValuatedPolynomial::new(support, valuation, None).unwrap();
        let (t, s) = tropicalize(&p).unwrap();
        assert_eq!(t.vertices.len(), 1);
        assert_eq!(t.vertices[0], RationalPoint::zero());
        assert_eq!(t.rays.len(), 3);
        assert!(verify_duality(&t, &s).is_clean());
    }

    #[test]
    fn tropicalize_shifted_vertex() {
        // c values (0, 0, -1) for 1, x, y: nu = (0, 0, 1); the triple
        // point solves x = y - 1 = 0.
        let support = vec![pt(0, 0), pt(1, 0), pt(0, 1)];
        let mut valuation = BTreeMap::new();
        valuation.insert(pt(0, 0), rat(0));
        valuation.insert(pt(1, 0), rat(0));
        valuation.insert(pt(0, 1), rat(1));
        let p = ValuatedPolynomial::new(support, valuation, None).unwrap();
        let (t, _) = tropicalize(&p).unwrap();
        assert_eq!(t.vertices.len(), 1);
        assert_eq!(t.vertices[0], RationalPoint::from_ints(0, 1));
    }

    #[test]
    fn tropicalize_stretched_conic() {
        let support = vec![pt(0, 0), pt(1, 0), pt(2, 0), pt(0, 1), pt(1, 1), pt(0, 2)];
        let mut valuation = BTreeMap::new();
        valuation.insert(pt(0, 0), rat(0));
        valuation.insert(pt(1, 0), rat(0));
        valuation.insert(pt(2, 0), rat(2));
        valuation.insert(pt(0, 1), rat(0));
        valuation.insert(pt(1, 1), rat(1));
        valuation.insert(pt(0, 2), rat(3));
        let p = ValuatedPolynomial::new(support, valuation, None).unwrap();
        let (t, s) = tropicalize(&p).unwrap();
        assert_eq!(s.cells.len(), 4);
        assert!(s.cells.iter().all(|c| c.lattice_volume() == 1));
        assert_eq!(s.cell_volume_sum(), 4);
        assert!(verify_duality(&t, &s).is_clean());
        assert!(is_nodal(&s));
    }

    #[test]
    fn tropicalize_rejects_single_monomial() {
        let support = vec![pt(2, 3)];
        let valuation: BTreeMap<LatticePoint, BigRational> =
            support.iter().map(|w| (*w, rat(0))).collect();
        assert!(ValuatedPolynomial::new(support, valuation, None)
            .and_then(|p| tropicalize(&p).map(|_| ()))
            .is_err());
    }

    #[test]
    fn tropicalize_invariances() {
        let support = vec![pt(0, 0), pt(1, 0), pt(2, 0), pt(0, 1), pt(1, 1), pt(0, 2)];
        let base: BTreeMap<LatticePoint, BigRational> = [
            (pt(0, 0), rat(0)),
            (pt(1, 0), rat(0)),
            (pt(2, 0), rat(2)),
            (pt(0, 1), rat(0)),
            (pt(1, 1), rat(1)),
            (pt(0, 2), rat(3)),
        ]
        .into_iter()
        .collect();
        let p = ValuatedPolynomial::new(support.clone(), base.clone(), None).unwrap();
        let (t0, _) = tropicalize(&p).unwrap();

        let shifted: BTreeMap<LatticePoint, BigRational> =
            base.iter().map(|(w, v)| (*w, v + rat(5))).collect();
        let p1 = ValuatedPolynomial::new(support.clone(), shifted, None).unwrap();
        let (t1, _) = tropicalize(&p1).unwrap();
        assert_eq!(t0, t1);

        // Adding <(2,-3), omega> to nu translates the curve by (2,-3).
        let affine: BTreeMap<LatticePoint, BigRational> = base
            .iter()
            .map(|(w, v)| (*w, v + rat(2 * w.x - 3 * w.y)))
            .collect();
        let p2 = ValuatedPolynomial::new(support, affine, None).unwrap();
        let (t2, _) = tropicalize(&p2).unwrap();
        let delta = RationalPoint::from_ints(2, -3);
        let moved: Vec<RationalPoint> = t0.vertices.iter().map(|p| p.add(&delta)).collect();
        assert_eq!(moved, t2.vertices);
    }

    fn crossing_curve() -> PptCurve {
        use crate::curve::{AbstractGraph, Edge, EdgeLength, PptCurve, VertexKind};
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
        let graph = AbstractGraph::new(vertices, edges).unwrap();
        let positions = vec![
            Some(RationalPoint::from_ints(-2, 0)),
            None,
            None,
            None,
            Some(RationalPoint::from_ints(0, -2)),
            None,
            None,
            None,
        ];
        let w = |x, y| WeightedDirection::new(pt(x, y), 1);
        let directions = vec![w(1, 0), w(-1, 1), w(0, -1), w(0, 1), w(1, -1), w(-1, 0)];
        PptCurve::new(graph, positions, directions).unwrap()
    }

    #[test]
    fn vertex_cell_decomposition_cases() {
        let c = line_tripod();
        let parts = vertex_cell_decomposition(&c, &RationalPoint::zero()).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].lattice_volume(), 1);

        let c2 = crossing_curve();
        let parts = vertex_cell_decomposition(&c2, &RationalPoint::zero()).unwrap();
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.is_segment()));
        let sum = lattice::minkowski_sum(&parts).unwrap();
        // Unit parallelogram: normalized lattice volume 2.
        assert_eq!(sum.lattice_volume(), 2);

        assert!(vertex_cell_decomposition(&c, &RationalPoint::from_ints(5, 7)).is_err());
    }

    #[test]
    fn decomposition_matches_dual_cell_at_crossing() {
        let c = crossing_curve();
        let t = push_forward(&c).unwrap();
        let s = dual_subdivision(&t).unwrap();
        let parts = vertex_cell_decomposition(&c, &RationalPoint::zero()).unwrap();
        let sum = lattice::minkowski_sum(&parts).unwrap();
        let crossing = t
            .vertices
            .iter()
            .position(|p| *p == RationalPoint::zero())
            .unwrap();
        let cell = &s.cells[s.vertex_cell[crossing]];
        assert!(sum.congruent_by_translation(cell));
    }

    #[test]
    fn nodal_lift_reproduces_pushforward() {
        let c = crossing_curve();
        let t = push_forward(&c).unwrap();
        let s = dual_subdivision(&t).unwrap();
        assert!(is_nodal(&s));
        let lift = lift_nodal(&t, &s).unwrap();
        assert!(crate::curve::validate_ppt(&lift).is_clean());
        let t2 = push_forward(&lift).unwrap();
        let s2 = dual_subdivision(&t2).unwrap();
        assert!(verify_duality(&t2, &s2).is_clean());
        assert_eq!(s.polygon, s2.polygon);
        assert_eq!(lift.graph.finite_vertices().count(), 2);
        assert_eq!(genus(&lift.graph), -1);
    }

    #[test]
    fn newton_polygon_matches_dual_carrier() {
        let c = tripod([2, 2, 2], [(-1, 0), (0, -1), (1, 1)]);
        let t = push_forward(&c).unwrap();
        let s = dual_subdivision(&t).unwrap();
        let np = newton_polygon(&c).unwrap();
        assert!(np.congruent_by_translation(&s.polygon));
    }
}

//! Planar scene model for one construction phase.
//!
//! A scene is a set of 2D polygons (obstacles, regions of interest and
//! no-fly zones) plus the flight layers the vehicle may use. This module
//! turns it into the two discrete sets the planner works on: grid cells
//! inside the navigable part of each ROI, and candidate tag locations along
//! installable obstacle edges.

use std::collections::BTreeSet;

use geo::{Area, BooleanOps, BoundingRect, Coord, LineString, MultiPolygon};
use nalgebra::Vector2;
use thiserror::Error;

use crate::spatial::HomPoint;

pub type Vec2 = Vector2<f64>;

/// Scale factor offset applied to obstacle polygons before sampling tag
/// locations, so tags sit just outside the surface they are mounted on.
pub const SURFACE_OFFSET: f64 = 5e-5;

/// Clearance added to the largest tag size when spacing tag locations.
pub const TAG_CLEARANCE: f64 = 0.02;

/// Tolerance used when matching tag locations across phases.
const LOCATION_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("polygon needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has non-finite coordinates")]
    NonFinite,
    #[error("polygon is not simple (edges {0} and {1} intersect)")]
    SelfIntersecting(usize, usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("flight altitude must be positive, got {0}")]
    BadAltitude(f64),
    #[error("ROI importance must be non-negative, got {0}")]
    NegativeImportance(f64),
    #[error("obstacles {0} and {1} overlap")]
    OverlappingObstacles(usize, usize),
    #[error("installable surface refers to obstacle {polygon} edge {edge}, which does not exist")]
    BadInstallable { polygon: usize, edge: usize },
    #[error("at least one installation height is required")]
    NoHeights,
}

/// Simple polygon stored counter-clockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn orient(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    robust::orient2d(
        robust::Coord { x: a.x, y: a.y },
        robust::Coord { x: b.x, y: b.y },
        robust::Coord { x: c.x, y: c.y },
    )
}

/// Exact test: does closed segment `[a, b]` contain `p`?
fn on_segment(a: &Vec2, b: &Vec2, p: &Vec2) -> bool {
    orient(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Exact test for any contact between closed segments.
fn closed_segments_touch(a: &Vec2, b: &Vec2, c: &Vec2, d: &Vec2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a) || on_segment(c, d, b)
}

fn signed_area(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| cross(&vertices[i], &vertices[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

fn dedup_ring(points: impl IntoIterator<Item = Vec2>) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::new();
    for p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

impl Polygon {
    /// Validates and normalizes to counter-clockwise order.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, SceneError> {
        Self::with_orientation(vertices).map(|(p, _)| p)
    }

    /// Like [`Polygon::new`], also reporting whether the input was reversed.
    pub fn with_orientation(vertices: Vec<Vec2>) -> Result<(Self, bool), SceneError> {
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(SceneError::NonFinite);
        }
        let vertices = dedup_ring(vertices);
        if vertices.len() < 3 {
            return Err(SceneError::TooFewVertices(vertices.len()));
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = (&vertices[i], &vertices[(i + 1) % n]);
                let (c, d) = (&vertices[j], &vertices[(j + 1) % n]);
                if adjacent {
                    // neighbours share one vertex; they may not fold back onto each other
                    let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    if orient(p, shared, q) == 0.0 && (q - shared).dot(&(p - shared)) > 0.0 {
                        return Err(SceneError::SelfIntersecting(i, j));
                    }
                } else if closed_segments_touch(a, b, c, d) {
                    return Err(SceneError::SelfIntersecting(i, j));
                }
            }
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err(SceneError::ZeroArea);
        }
        if area < 0.0 {
            let mut v = vertices;
            v.reverse();
            Ok((Polygon { vertices: v }, true))
        } else {
            Ok((Polygon { vertices }, false))
        }
    }

    /// Builds a polygon from a clipping result without simplicity checks.
    fn from_ring_unchecked(ring: &LineString<f64>) -> Option<Self> {
        let mut v = dedup_ring(ring.coords().map(|c| Vec2::new(c.x, c.y)));
        if v.len() < 3 {
            return None;
        }
        let area = signed_area(&v);
        if area.abs() < 1e-12 {
            return None;
        }
        if area < 0.0 {
            v.reverse();
        }
        Some(Polygon { vertices: v })
    }

    pub fn rectangle(min: Vec2, max: Vec2) -> Self {
        Polygon {
            vertices: vec![min, Vec2::new(max.x, min.y), max, Vec2::new(min.x, max.y)],
        }
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edge `i` runs from vertex `i` to vertex `i + 1`.
    pub fn edge(&self, i: usize) -> (Vec2, Vec2) {
        let n = self.vertices.len();
        (self.vertices[i % n], self.vertices[(i + 1) % n])
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        (0..self.vertices.len()).map(move |i| self.edge(i))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).norm()).sum()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let mut acc = Vec2::zeros();
        let mut twice_area = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let w = cross(&a, &b);
            twice_area += w;
            acc += (a + b) * w;
        }
        acc / (3.0 * twice_area)
    }

    /// Largest vertex-to-vertex distance.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for a in &self.vertices {
            for b in &self.vertices {
                best = best.max((a - b).norm());
            }
        }
        best
    }

    pub fn scaled(&self, factor: f64) -> Polygon {
        let c = self.centroid();
        Polygon {
            vertices: self.vertices.iter().map(|v| c + (v - c) * factor).collect(),
        }
    }

    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// True iff `p` is strictly inside (boundary points are outside).
    pub fn contains_strict(&self, p: &Vec2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if on_segment(&a, &b, p) {
                return false;
            }
            if (a.y > p.y) != (b.y > p.y) {
                // sign of the crossing relative to the upward edge direction
                let o = orient(&a, &b, p);
                let upward = b.y > a.y;
                if (o > 0.0) == upward {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn to_geo(&self) -> geo::Polygon<f64> {
        let ring: Vec<Coord<f64>> = self
            .vertices
            .iter()
            .map(|v| Coord { x: v.x, y: v.y })
            .collect();
        geo::Polygon::new(LineString::from(ring), vec![])
    }
}

/// Region of interest weighted by its importance.
#[derive(Clone, Debug, PartialEq)]
pub struct Roi {
    pub polygon: Polygon,
    pub importance: f64,
}

/// 2D model of one construction phase, flown at one or more altitudes.
#[derive(Clone, Debug)]
pub struct Scene {
    pub phase_id: usize,
    /// Flight layers (meters). All layers share the same planar geometry.
    pub altitudes: Vec<f64>,
    pub obstacles: Vec<Polygon>,
    pub rois: Vec<Roi>,
    pub no_fly: Vec<Polygon>,
    /// `(obstacle index, edge index)` pairs eligible for tags, edge indices
    /// referring to the stored counter-clockwise vertex order.
    pub installable: Vec<(usize, usize)>,
    edge_boxes: Vec<(Vec2, Vec2, Vec2, Vec2)>,
}

impl Scene {
    pub fn new(
        phase_id: usize,
        altitudes: Vec<f64>,
        obstacles: Vec<Polygon>,
        rois: Vec<Roi>,
        no_fly: Vec<Polygon>,
        installable: Vec<(usize, usize)>,
    ) -> Result<Self, SceneError> {
        if let Some(a) = altitudes.iter().find(|a| !(**a > 0.0)) {
            return Err(SceneError::BadAltitude(*a));
        }
        if let Some(r) = rois.iter().find(|r| !(r.importance >= 0.0)) {
            return Err(SceneError::NegativeImportance(r.importance));
        }
        for &(p, e) in &installable {
            if p >= obstacles.len() || e >= obstacles[p].len() {
                return Err(SceneError::BadInstallable {
                    polygon: p,
                    edge: e,
                });
            }
        }
        let geos: Vec<_> = obstacles.iter().map(Polygon::to_geo).collect();
        for i in 0..geos.len() {
            for j in (i + 1)..geos.len() {
                let (bi, bj) = (obstacles[i].bounds(), obstacles[j].bounds());
                if bi.1.x <= bj.0.x || bj.1.x <= bi.0.x || bi.1.y <= bj.0.y || bj.1.y <= bi.0.y {
                    continue;
                }
                if geos[i].intersection(&geos[j]).unsigned_area() > 1e-9 {
                    return Err(SceneError::OverlappingObstacles(i, j));
                }
            }
        }
        let edge_boxes = obstacles
            .iter()
            .flat_map(|p| p.edges())
            .map(|(a, b)| (a, b, a.inf(&b), a.sup(&b)))
            .collect();
        let mut installable = installable;
        installable.sort_unstable();
        installable.dedup();
        Ok(Scene {
            phase_id,
            altitudes,
            obstacles,
            rois,
            no_fly,
            installable,
            edge_boxes,
        })
    }
}

/// A piece of an ROI left after removing no-fly zones and obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct ModifiedRoi {
    pub polygon: Polygon,
    pub roi_index: usize,
}

/// Splits a polygon with holes into hole-free pieces by cutting vertically
/// through each hole.
fn split_holes(poly: &geo::Polygon<f64>, out: &mut Vec<Polygon>) {
    let Some(hole) = poly.interiors().first() else {
        if let Some(p) = Polygon::from_ring_unchecked(poly.exterior()) {
            out.push(p);
        }
        return;
    };
    let (Some(outer), Some(hb)) = (poly.bounding_rect(), hole.bounding_rect()) else {
        return;
    };
    let cut = 0.5 * (hb.min().x + hb.max().x);
    let pad = 1.0;
    let lo = Vec2::new(outer.min().x - pad, outer.min().y - pad);
    let hi = Vec2::new(outer.max().x + pad, outer.max().y + pad);
    for half in [
        Polygon::rectangle(lo, Vec2::new(cut, hi.y)),
        Polygon::rectangle(Vec2::new(cut, lo.y), hi),
    ] {
        for piece in poly.intersection(&half.to_geo()).0 {
            split_holes(&piece, out);
        }
    }
}

/// Result of ROI clipping, including warnings about ROIs that vanished.
#[derive(Clone, Debug, Default)]
pub struct ModifiedRois {
    pub pieces: Vec<ModifiedRoi>,
    pub warnings: Vec<String>,
}

/// Navigable part of each ROI: `ROI \ (no-fly ∪ obstacles)`, split into
/// simple counter-clockwise pieces. An ROI whose remainder is smaller than
/// one grid cell is dropped with a warning.
pub fn modified_rois(scene: &Scene, cell_size: f64) -> ModifiedRois {
    let mut blocked = MultiPolygon::<f64>(vec![]);
    for p in scene.no_fly.iter().chain(&scene.obstacles) {
        blocked = blocked.union(&p.to_geo());
    }
    let mut out = ModifiedRois::default();
    for (roi_index, roi) in scene.rois.iter().enumerate() {
        let remainder = roi.polygon.to_geo().difference(&blocked);
        let mut pieces = Vec::new();
        for poly in &remainder.0 {
            split_holes(poly, &mut pieces);
        }
        let area: f64 = pieces.iter().map(Polygon::area).sum();
        if area < cell_size * cell_size {
            out.warnings.push(format!(
                "phase {}: ROI {} has no navigable area left ({:.4} m^2)",
                scene.phase_id, roi_index, area
            ));
            continue;
        }
        // deterministic order: lowest-left piece first
        pieces.sort_by(|a, b| {
            let (la, lb) = (a.bounds().0, b.bounds().0);
            la.y.total_cmp(&lb.y).then(la.x.total_cmp(&lb.x))
        });
        out.pieces.extend(pieces.into_iter().map(|polygon| ModifiedRoi {
            polygon,
            roi_index,
        }));
    }
    out
}

/// Square navigable cell; its center is a query point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub center: Vec2,
    pub size: f64,
    pub roi_index: usize,
}

/// Lattice cells (anchored at `origin`) whose centers lie strictly inside a piece.
pub fn discretize_rois(polys: &[ModifiedRoi], cell_size: f64, origin: Vec2) -> Vec<GridCell> {
    assert!(cell_size > 0.0, "cell size must be positive");
    let mut cells = Vec::new();
    for piece in polys {
        let (lo, hi) = piece.polygon.bounds();
        let i0 = ((lo.x - origin.x) / cell_size - 0.5).floor() as i64;
        let i1 = ((hi.x - origin.x) / cell_size - 0.5).ceil() as i64;
        let j0 = ((lo.y - origin.y) / cell_size - 0.5).floor() as i64;
        let j1 = ((hi.y - origin.y) / cell_size - 0.5).ceil() as i64;
        for j in j0..=j1 {
            for i in i0..=i1 {
                let center = Vec2::new(
                    origin.x + (i as f64 + 0.5) * cell_size,
                    origin.y + (j as f64 + 0.5) * cell_size,
                );
                if piece.polygon.contains_strict(&center) {
                    cells.push(GridCell {
                        center,
                        size: cell_size,
                        roi_index: piece.roi_index,
                    });
                }
            }
        }
    }
    cells
}

/// Candidate tag location on an obstacle surface.
#[derive(Clone, Debug, PartialEq)]
pub struct TagOption {
    pub id: usize,
    /// Footprint of the tag center (meters).
    pub anchor: Vec2,
    /// Outward unit normal `(u, v)`.
    pub normal: Vec2,
    /// Installation heights at which this option is available.
    pub heights: Vec<f64>,
    pub feasible_phases: BTreeSet<usize>,
    /// Host obstacle polygon and edge in the phase the option was found in.
    pub host: (usize, usize),
}

/// Spacing between neighbouring tag locations along one surface.
pub fn find_minimum_tag_distance(d_res: f64, tag_sizes: &[f64]) -> f64 {
    let largest = tag_sizes.iter().copied().fold(0.0, f64::max);
    d_res.max(largest + TAG_CLEARANCE)
}

/// Samples tag locations along every installable obstacle edge.
///
/// Each obstacle is grown by `1 + SURFACE_OFFSET` about its centroid, edges
/// are sampled from their start vertex every
/// [`find_minimum_tag_distance`] meters, and samples closer than half the
/// largest tag size to either end are discarded.
pub fn identify_tag_options(scene: &Scene, d_res: f64, tag_sizes: &[f64]) -> Vec<TagOption> {
    assert!(d_res > 0.0, "tag placement resolution must be positive");
    let spacing = find_minimum_tag_distance(d_res, tag_sizes);
    let margin = 0.5 * tag_sizes.iter().copied().fold(0.0, f64::max);
    let mut options = Vec::new();
    let mut current: Option<(usize, Polygon)> = None;
    for &(poly_idx, edge_idx) in &scene.installable {
        if current.as_ref().map(|c| c.0) != Some(poly_idx) {
            current = Some((poly_idx, scene.obstacles[poly_idx].scaled(1.0 + SURFACE_OFFSET)));
        }
        let scaled = &current.as_ref().unwrap().1;
        let (a, b) = scaled.edge(edge_idx);
        let length = (b - a).norm();
        if length < 2.0 * margin {
            continue;
        }
        let dir = (b - a) / length;
        let normal = Vec2::new(dir.y, -dir.x);
        let steps = (length / spacing).floor() as usize;
        for k in 0..=steps {
            let s = k as f64 * spacing;
            if s < margin || length - s < margin {
                continue;
            }
            options.push(TagOption {
                id: options.len(),
                anchor: a + dir * s,
                normal,
                heights: Vec::new(),
                feasible_phases: BTreeSet::from([scene.phase_id]),
                host: (poly_idx, edge_idx),
            });
        }
    }
    options
}

/// Merges per-phase option lists into one list with global ids; options at
/// the same anchor and normal in several phases become one location.
pub fn merge_options_across_phases(per_phase: Vec<Vec<TagOption>>) -> Vec<TagOption> {
    let mut merged: Vec<TagOption> = Vec::new();
    for options in per_phase {
        for opt in options {
            let existing = merged.iter_mut().find(|m| {
                (m.anchor - opt.anchor).amax() < LOCATION_MATCH_TOL
                    && (m.normal - opt.normal).amax() < LOCATION_MATCH_TOL
            });
            match existing {
                Some(m) => m.feasible_phases.extend(opt.feasible_phases.iter().copied()),
                None => {
                    let id = merged.len();
                    merged.push(TagOption { id, ..opt });
                }
            }
        }
    }
    merged
}

/// A tag location at one installation height; the unit a gene selects.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub id: usize,
    pub option: usize,
    pub anchor: Vec2,
    pub normal: Vec2,
    pub height: f64,
}

/// Cartesian product of options and installation heights, option-major.
pub fn expand_to_heights(options: &[TagOption], heights: &[f64]) -> Result<Vec<Slot>, SceneError> {
    if heights.is_empty() {
        return Err(SceneError::NoHeights);
    }
    Ok(options
        .iter()
        .flat_map(|o| {
            heights.iter().map(move |&h| (o, h))
        })
        .enumerate()
        .map(|(id, (o, h))| Slot {
            id,
            option: o.id,
            anchor: o.anchor,
            normal: o.normal,
            height: h,
        })
        .collect())
}

/// The four corners of a vertical square tag centered at `(anchor, height)`
/// facing along `normal`. With tangent `t = (-v, u)` the order is
/// `+t` bottom, `-t` bottom, `-t` top, `+t` top.
pub fn tag_corners_world(anchor: &Vec2, normal: &Vec2, height: f64, size: f64) -> [HomPoint; 4] {
    let t = Vec2::new(-normal.y, normal.x) * (0.5 * size);
    let h = 0.5 * size;
    [
        HomPoint::new(anchor.x + t.x, anchor.y + t.y, height - h),
        HomPoint::new(anchor.x - t.x, anchor.y - t.y, height - h),
        HomPoint::new(anchor.x - t.x, anchor.y - t.y, height + h),
        HomPoint::new(anchor.x + t.x, anchor.y + t.y, height + h),
    ]
}

/// Does the open segment `(p, q)` touch the closed segment `[a, b]`?
/// Grazing contact counts.
fn open_segment_hits(p: &Vec2, q: &Vec2, a: &Vec2, b: &Vec2) -> bool {
    let o1 = orient(p, q, a);
    let o2 = orient(p, q, b);
    let o3 = orient(a, b, p);
    let o4 = orient(a, b, q);
    if o1 == 0.0 && o2 == 0.0 {
        // collinear: compare parameters along pq
        let d = q - p;
        let len2 = d.norm_squared();
        let ta = (a - p).dot(&d) / len2;
        let tb = (b - p).dot(&d) / len2;
        return ta.min(tb) < 1.0 && ta.max(tb) > 0.0;
    }
    let strictly_between = |o_ab_p: f64, o_ab_q: f64| o_ab_p * o_ab_q < 0.0;
    if o1 * o2 < 0.0 && strictly_between(o3, o4) {
        return true;
    }
    // an edge vertex lying on the open segment
    let interior = |x: &Vec2| {
        orient(p, q, x) == 0.0 && {
            let d = q - p;
            let t = (x - p).dot(&d);
            t > 0.0 && t < d.norm_squared()
        }
    };
    (o1 == 0.0 && interior(a)) || (o2 == 0.0 && interior(b))
}

/// True iff the open segment `(p, q)` meets no obstacle edge.
pub fn line_of_sight(p: &Vec2, q: &Vec2, scene: &Scene) -> bool {
    if p == q {
        return true;
    }
    let lo = p.inf(q);
    let hi = p.sup(q);
    !scene.edge_boxes.iter().any(|(a, b, elo, ehi)| {
        ehi.x >= lo.x
            && elo.x <= hi.x
            && ehi.y >= lo.y
            && elo.y <= hi.y
            && open_segment_hits(p, q, a, b)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn square(x: f64, y: f64, s: f64) -> Polygon {
        Polygon::rectangle(v(x, y), v(x + s, y + s))
    }

    fn scene_with(obstacles: Vec<Polygon>, rois: Vec<Polygon>, no_fly: Vec<Polygon>) -> Scene {
        let installable = obstacles
            .iter()
            .enumerate()
            .flat_map(|(i, p)| (0..p.len()).map(move |e| (i, e)))
            .collect();
        Scene::new(
            0,
            vec![1.5],
            obstacles,
            rois.into_iter()
                .map(|polygon| Roi {
                    polygon,
                    importance: 1.0,
                })
                .collect(),
            no_fly,
            installable,
        )
        .unwrap()
    }

    #[test]
    fn polygon_is_normalized_ccw() {
        let (p, reversed) =
            Polygon::with_orientation(vec![v(0., 0.), v(0., 1.), v(1., 1.), v(1., 0.)]).unwrap();
        assert!(reversed);
        assert!(p.area() > 0.0);
        assert_eq!(p.area(), 1.0);
    }

    #[test]
    fn polygon_rejects_bad_input() {
        assert_eq!(
            Polygon::new(vec![v(0., 0.), v(1., 0.)]),
            Err(SceneError::TooFewVertices(2))
        );
        // bow tie
        assert!(matches!(
            Polygon::new(vec![v(0., 0.), v(1., 1.), v(1., 0.), v(0., 1.)]),
            Err(SceneError::SelfIntersecting(..))
        ));
        assert!(matches!(
            Polygon::new(vec![v(0., 0.), v(1., 0.), v(2., 0.)]),
            Err(SceneError::ZeroArea) | Err(SceneError::SelfIntersecting(..))
        ));
    }

    #[test]
    fn strict_containment_excludes_boundary() {
        let s = square(0., 0., 1.);
        assert!(s.contains_strict(&v(0.5, 0.5)));
        assert!(!s.contains_strict(&v(0.0, 0.5)));
        assert!(!s.contains_strict(&v(1.0, 1.0)));
        assert!(!s.contains_strict(&v(1.5, 0.5)));
    }

    #[test]
    fn modified_roi_without_subtrahend_is_unchanged() {
        let scene = scene_with(vec![], vec![square(0., 0., 4.)], vec![]);
        let m = modified_rois(&scene, 0.5);
        assert_eq!(m.pieces.len(), 1);
        assert!((m.pieces[0].polygon.area() - 16.0).abs() < 1e-12);
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn modified_roi_corner_no_fly_is_l_shape() {
        let scene = scene_with(vec![], vec![square(0., 0., 4.)], vec![square(0., 0., 2.)]);
        let m = modified_rois(&scene, 0.5);
        let area: f64 = m.pieces.iter().map(|p| p.polygon.area()).sum();
        assert!((area - 12.0).abs() < 1e-9);
        assert_eq!(m.pieces.len(), 1);
        assert_eq!(m.pieces[0].polygon.len(), 6);
    }

    #[test]
    fn modified_roi_fully_covered_warns() {
        let scene = scene_with(vec![], vec![square(0., 0., 2.)], vec![square(-1., -1., 4.)]);
        let m = modified_rois(&scene, 0.5);
        assert!(m.pieces.is_empty());
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn interior_obstacle_hole_is_split() {
        let scene = scene_with(vec![square(1.5, 1.5, 1.0)], vec![square(0., 0., 4.)], vec![]);
        let m = modified_rois(&scene, 0.5);
        assert!(m.pieces.len() >= 2);
        let area: f64 = m.pieces.iter().map(|p| p.polygon.area()).sum();
        assert!((area - 15.0).abs() < 1e-9);
        // no piece contains the obstacle center
        assert!(m.pieces.iter().all(|p| !p.polygon.contains_strict(&v(2.0, 2.0))));
        let cells = discretize_rois(&m.pieces, 0.5, v(0., 0.));
        assert_eq!(cells.len(), 64 - 4);
    }

    #[test]
    fn discretize_examples() {
        let piece = |p| ModifiedRoi {
            polygon: p,
            roi_index: 0,
        };
        let cells = discretize_rois(&[piece(square(0., 0., 4.))], 0.5, v(0., 0.));
        assert_eq!(cells.len(), 64);
        assert!(discretize_rois(&[], 0.5, v(0., 0.)).is_empty());
        let cells = discretize_rois(&[piece(square(0., 0., 1.))], 0.5, v(0., 0.));
        let centers: Vec<_> = cells.iter().map(|c| (c.center.x, c.center.y)).collect();
        assert_eq!(
            centers,
            vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
        );
    }

    #[test]
    fn minimum_tag_distance_examples() {
        assert_eq!(find_minimum_tag_distance(0.3, &[0.23]), 0.3);
        assert!((find_minimum_tag_distance(0.1, &[0.23]) - 0.25).abs() < 1e-15);
        assert_eq!(find_minimum_tag_distance(0.3, &[0.23, 0.165, 0.12]), 0.3);
    }

    #[test]
    fn unit_square_yields_two_options_per_edge() {
        let scene = scene_with(vec![square(0., 0., 1.)], vec![], vec![]);
        let opts = identify_tag_options(&scene, 0.3, &[0.23]);
        assert_eq!(opts.len(), 8);
        for o in &opts {
            assert!((o.normal.norm() - 1.0).abs() < 1e-9);
            // outward: moving along the normal leaves the square
            assert!(!scene.obstacles[0].contains_strict(&(o.anchor + o.normal * 0.01)));
            assert!(!scene.obstacles[0].contains_strict(&o.anchor));
        }
        // first edge runs (0,0)->(1,0); normal points to -y
        assert!((opts[0].normal - v(0., -1.)).amax() < 1e-12);
        assert!((opts[1].anchor - opts[0].anchor).norm() >= 0.3 - 1e-12);
    }

    #[test]
    fn short_and_non_installable_edges_yield_nothing() {
        let wall = Polygon::rectangle(v(0., 0.), v(0.2, 0.05));
        let scene = scene_with(vec![wall], vec![], vec![]);
        assert!(identify_tag_options(&scene, 0.3, &[0.23]).is_empty());

        let scene = Scene::new(0, vec![1.5], vec![square(0., 0., 5.)], vec![], vec![], vec![(0, 1)])
            .unwrap();
        let opts = identify_tag_options(&scene, 0.3, &[0.23]);
        assert!(opts.iter().all(|o| o.host == (0, 1)));
        assert!(!opts.is_empty());
    }

    #[test]
    fn heights_expand_as_product() {
        let scene = scene_with(vec![square(0., 0., 1.)], vec![], vec![]);
        let opts = identify_tag_options(&scene, 0.3, &[0.23]);
        assert_eq!(expand_to_heights(&opts, &[1.0, 1.5]).unwrap().len(), 16);
        assert_eq!(expand_to_heights(&opts, &[]), Err(SceneError::NoHeights));
        let one = expand_to_heights(&opts[..1], &[1.5]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].height, 1.5);
    }

    #[test]
    fn corners_match_hand_construction() {
        let c = tag_corners_world(&v(0., 0.), &v(1., 0.), 1.5, 0.2);
        let expect = [
            (0.0, 0.1, 1.4),
            (0.0, -0.1, 1.4),
            (0.0, -0.1, 1.6),
            (0.0, 0.1, 1.6),
        ];
        for (p, e) in c.iter().zip(expect) {
            let x = p.xyz();
            assert!((x.x - e.0).abs() < 1e-12 && (x.y - e.1).abs() < 1e-12 && (x.z - e.2).abs() < 1e-12);
        }
        let centroid = c.iter().map(|p| p.xyz()).sum::<crate::spatial::Vec3>() / 4.0;
        assert!((centroid - crate::spatial::Vec3::new(0., 0., 1.5)).amax() < 1e-12);
        for i in 0..4 {
            let side = (c[i].xyz() - c[(i + 1) % 4].xyz()).norm();
            assert!((side - 0.2).abs() < 1e-12);
        }
        assert!(((c[0].xyz() - c[2].xyz()).norm() - 0.2 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn line_of_sight_cases() {
        let wall = Polygon::rectangle(v(1.0, -1.0), v(1.1, 1.0));
        let scene = scene_with(vec![wall], vec![], vec![]);
        assert!(!line_of_sight(&v(0., 0.), &v(2., 0.), &scene));
        assert!(line_of_sight(&v(0., 0.), &v(0., 0.), &scene));
        assert!(line_of_sight(&v(0., 0.), &v(0.5, 3.), &scene));
        // grazing the corner (1, 1) exactly
        assert!(!line_of_sight(&v(0., 0.), &v(2., 2.), &scene));
        // running along the wall face
        assert!(!line_of_sight(&v(1.0, -2.0), &v(1.0, 2.0), &scene));
        // ending exactly on the wall face: the open segment stays clear
        assert!(line_of_sight(&v(0., 0.), &v(1.0, 0.5), &scene));
    }

    #[test]
    fn overlapping_obstacles_are_rejected() {
        let err = Scene::new(0, vec![1.0], vec![square(0., 0., 2.), square(1., 1., 2.)], vec![], vec![], vec![]);
        assert!(matches!(err, Err(SceneError::OverlappingObstacles(0, 1))));
        // touching walls are fine
        assert!(Scene::new(0, vec![1.0], vec![square(0., 0., 1.), square(1., 0., 1.)], vec![], vec![], vec![]).is_ok());
        assert!(matches!(
            Scene::new(0, vec![0.0], vec![], vec![], vec![], vec![]),
            Err(SceneError::BadAltitude(_))
        ));
    }
}

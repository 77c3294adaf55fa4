//! Segment predicates, clearance between polygon edges, and the
//! diffeomorphism monitor for interface maps.

use serde::{Deserialize, Serialize};

use super::interface::InterfaceMap;

type P = [f64; 2];

#[inline]
fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn cross(a: P, b: P) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn dot(a: P, b: P) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn orient(a: P, b: P, c: P) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn on_segment(a: P, b: P, p: P) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// True when the closed segments `[p1, p2]` and `[q1, q2]` share a point.
pub fn segments_intersect(p1: P, p2: P, q1: P, q2: P) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: P, a: P, b: P) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    let d = sub(p, q);
    dot(d, d).sqrt()
}

/// Euclidean distance between two closed segments.
pub fn segment_distance(p1: P, p2: P, q1: P, q2: P) -> f64 {
    if segments_intersect(p1, p2, q1, q2) {
        return 0.0;
    }
    point_segment_distance(p1, q1, q2)
        .min(point_segment_distance(p2, q1, q2))
        .min(point_segment_distance(q1, p1, p2))
        .min(point_segment_distance(q2, p1, p2))
}

/// Minimum cyclic index gap at which two edges of the same closed polygon
/// of `n` edges enter the clearance.
pub fn clearance_window(n: usize) -> usize {
    (n / 8).max(2)
}

struct Edge {
    comp: usize,
    idx: usize,
    a: P,
    b: P,
    xmin: f64,
    xmax: f64,
}

/// Relation between two edges for clearance purposes.
enum PairKind {
    Skip,
    CrossOnly,
    Distance,
}

fn pair_kind(e: &Edge, f: &Edge, sizes: &[usize]) -> PairKind {
    if e.comp != f.comp {
        return PairKind::Distance;
    }
    let n = sizes[e.comp];
    let d = e.idx.abs_diff(f.idx);
    let gap = d.min(n - d);
    if gap <= 1 {
        PairKind::Skip
    } else if gap < clearance_window(n) {
        PairKind::CrossOnly
    } else {
        PairKind::Distance
    }
}

fn edges(polys: &[&[P]]) -> (Vec<Edge>, Vec<usize>) {
    let mut out = Vec::new();
    let sizes: Vec<usize> = polys.iter().map(|p| p.len()).collect();
    for (c, poly) in polys.iter().enumerate() {
        let n = poly.len();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            out.push(Edge {
                comp: c,
                idx: i,
                a,
                b,
                xmin: a[0].min(b[0]),
                xmax: a[0].max(b[0]),
            });
        }
    }
    (out, sizes)
}

/// Clearance of a family of closed polygons: the minimum distance between
/// edges on different polygons, or on the same polygon at cyclic index gap
/// of at least [`clearance_window`]. Any crossing between non-adjacent edges
/// yields 0. Uses an x-sorted sweep pruned by the running minimum.
pub fn clearance(polys: &[&[P]]) -> f64 {
    let (mut es, sizes) = edges(polys);
    es.sort_by(|e, f| e.xmin.total_cmp(&f.xmin));
    let mut best = f64::INFINITY;
    for i in 0..es.len() {
        let e = &es[i];
        for f in &es[i + 1..] {
            if f.xmin > e.xmax + best {
                break;
            }
            match pair_kind(e, f, &sizes) {
                PairKind::Skip => {}
                PairKind::CrossOnly => {
                    if f.xmin <= e.xmax && segments_intersect(e.a, e.b, f.a, f.b) {
                        return 0.0;
                    }
                }
                PairKind::Distance => {
                    if f.xmin - e.xmax < best {
                        let d = segment_distance(e.a, e.b, f.a, f.b);
                        if d == 0.0 {
                            return 0.0;
                        }
                        best = best.min(d);
                    }
                }
            }
        }
    }
    best
}

/// O(N²) reference implementation of [`clearance`].
pub fn clearance_brute_force(polys: &[&[P]]) -> f64 {
    let (es, sizes) = edges(polys);
    let mut best = f64::INFINITY;
    for i in 0..es.len() {
        for j in i + 1..es.len() {
            let (e, f) = (&es[i], &es[j]);
            match pair_kind(e, f, &sizes) {
                PairKind::Skip => {}
                PairKind::CrossOnly => {
                    if segments_intersect(e.a, e.b, f.a, f.b) {
                        return 0.0;
                    }
                }
                PairKind::Distance => best = best.min(segment_distance(e.a, e.b, f.a, f.b)),
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupReason {
    JacobianFloor,
    ClearanceFloor,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub min_det_jac: f64,
    /// Global node index attaining `min_det_jac`.
    pub min_det_jac_node: usize,
    pub clearance: f64,
    pub jacobian_ok: bool,
    pub clearance_ok: bool,
    pub valid: bool,
}

impl ValidityReport {
    pub fn reason(&self) -> BlowupReason {
        if !self.jacobian_ok {
            BlowupReason::JacobianFloor
        } else if !self.clearance_ok {
            BlowupReason::ClearanceFloor
        } else {
            BlowupReason::None
        }
    }
}

/// Checks that `phi` is a diffeomorphism onto its image up to the given
/// floors on the Jacobian and on the polygon clearance.
pub fn diffeo_check(phi: &InterfaceMap, jac_floor: f64, clearance_floor: f64) -> ValidityReport {
    let mut min_det_jac = f64::INFINITY;
    let mut min_det_jac_node = 0;
    for i in 0..phi.len() {
        let j = phi.det_jac(i);
        if !(j >= min_det_jac) {
            min_det_jac = j;
            min_det_jac_node = i;
        }
    }
    let polys: Vec<&[P]> = (0..phi.mesh().components().len())
        .map(|c| phi.component_values(c))
        .collect();
    let finite = phi.values().iter().all(|v| v[0].is_finite() && v[1].is_finite());
    let clr = if finite { clearance(&polys) } else { 0.0 };
    let jacobian_ok = min_det_jac >= jac_floor;
    let clearance_ok = clr >= clearance_floor;
    ValidityReport {
        min_det_jac,
        min_det_jac_node,
        clearance: clr,
        jacobian_ok,
        clearance_ok,
        valid: jacobian_ok && clearance_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crossing_and_touching() {
        assert!(segments_intersect([0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]));
        assert!(segments_intersect([0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 1.0]));
        assert!(!segments_intersect([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]));
        assert!(segments_intersect([0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [3.0, 0.0]));
        assert!(!segments_intersect([0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]));
    }

    #[test]
    fn parallel_segment_distance() {
        let d = segment_distance([0.0, 0.0], [1.0, 0.0], [0.5, 0.3], [2.0, 0.3]);
        assert!((d - 0.3).abs() < 1e-15);
    }

    fn regular(n: usize, r: f64, cx: f64) -> Vec<P> {
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                [cx + r * t.cos(), r * t.sin()]
            })
            .collect()
    }

    #[test]
    fn concentric_circles_clearance() {
        let a = regular(64, 2.0, 0.0);
        let b = regular(64, 1.0, 0.0);
        let c = clearance(&[&a, &b]);
        let pi = std::f64::consts::PI;
        let apothem = 2.0 * (pi / 64.0).cos();
        // inner edges at the window gap sit (window - 1) chords apart
        let own = 2.0 * (7.0 * pi / 64.0).sin();
        assert!((c - (apothem - 1.0).min(own)).abs() < 1e-12, "{c}");
        let far = regular(64, 0.1, 0.0);
        let c2 = clearance(&[&a, &far]);
        let expect = (2.0 * (pi / 64.0).cos() - 0.1).min(0.2 * (7.0 * pi / 64.0).sin());
        assert!((c2 - expect).abs() < 1e-12, "{c2}");
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16..40),
            shift in -3.0f64..3.0,
        ) {
            let a: Vec<P> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let b = regular(20, 0.5, shift);
            let fast = clearance(&[&a, &b]);
            let slow = clearance_brute_force(&[&a, &b]);
            prop_assert!((fast - slow).abs() <= 1e-14 * (1.0 + slow));
        }
    }
}

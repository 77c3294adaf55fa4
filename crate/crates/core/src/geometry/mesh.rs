//! The reference boundary: closed planar curves with arclength coordinates.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::GeometryError;
use crate::spline::{Jet, PeriodicSpline};

use super::validity::clearance;

pub const MIN_NODES: usize = 16;

/// Traversal direction. Outer components run counterclockwise, holes
/// clockwise, so the outward normal of the domain is always the unit
/// tangent rotated by −90°.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    CounterClockwise,
    Clockwise,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::CounterClockwise => 1.0,
            Orientation::Clockwise => -1.0,
        }
    }

    pub fn from_sign(s: i32) -> Option<Self> {
        match s {
            1 => Some(Orientation::CounterClockwise),
            -1 => Some(Orientation::Clockwise),
            _ => None,
        }
    }
}

/// A point of the reference boundary: component index and arclength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub component: usize,
    pub s: f64,
}

/// One closed curve of the reference boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    nodes: Vec<[f64; 2]>,
    orientation: Orientation,
    arclength: Vec<f64>,
    weights: Vec<f64>,
    length: f64,
    spline: PeriodicSpline<2>,
}

fn shoelace(nodes: &[[f64; 2]]) -> f64 {
    let n = nodes.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (nodes[i], nodes[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

// 8-point Gauss-Legendre on [0, 1]
const GL8: [(f64, f64); 8] = [
    (0.019_855_071_751_231_856, 0.050_614_268_145_188_13),
    (0.101_666_761_293_186_63, 0.111_190_517_226_687_24),
    (0.237_233_795_041_835_5, 0.156_853_322_938_943_64),
    (0.408_282_678_752_175_1, 0.181_341_891_689_180_99),
    (0.591_717_321_247_824_9, 0.181_341_891_689_180_99),
    (0.762_766_204_958_164_5, 0.156_853_322_938_943_64),
    (0.898_333_238_706_813_4, 0.111_190_517_226_687_24),
    (0.980_144_928_248_768_1, 0.050_614_268_145_188_13),
];

fn spline_segment_lengths(spline: &PeriodicSpline<2>) -> Vec<f64> {
    let n = spline.knots().len();
    (0..n)
        .map(|seg| {
            let (_, h) = spline.segment(seg);
            let t0 = spline.knots()[seg];
            GL8.iter()
                .map(|&(x, w)| {
                    let j = spline.jet_in(seg, t0 + x * h);
                    w * h * j.d1[0].hypot(j.d1[1])
                })
                .sum()
        })
        .collect()
}

impl Component {
    pub fn new(nodes: Vec<[f64; 2]>, orientation: Orientation, index: usize) -> Result<Self, GeometryError> {
        let bad = |reason: String| GeometryError::InvalidMesh { component: index, reason };
        let n = nodes.len();
        if n < MIN_NODES {
            return Err(bad(format!("{n} nodes, at least {MIN_NODES} required")));
        }
        if nodes.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(bad("non-finite node".into()));
        }
        let mut chords = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (nodes[i], nodes[(i + 1) % n]);
            let d = (b[0] - a[0]).hypot(b[1] - a[1]);
            if d == 0.0 {
                return Err(bad(format!("nodes {i} and {} coincide", (i + 1) % n)));
            }
            chords.push(d);
        }
        let area = shoelace(&nodes);
        if area * orientation.sign() <= 0.0 {
            return Err(bad(format!(
                "orientation flag {} disagrees with signed area {area:e}",
                orientation.sign()
            )));
        }
        if clearance(&[&nodes]) == 0.0 {
            return Err(bad("polygon is not simple".into()));
        }

        // chord-length knots, then two passes replacing them by the spline's
        // own arclength
        let mut seg = chords;
        let mut spline = None;
        for _ in 0..3 {
            let mut knots = Vec::with_capacity(n);
            let mut acc = 0.0;
            for h in &seg {
                knots.push(acc);
                acc += h;
            }
            let s = PeriodicSpline::fit(&knots, &nodes, acc);
            seg = spline_segment_lengths(&s);
            spline = Some(s);
        }
        let spline = spline.unwrap();
        let arclength = spline.knots().to_vec();
        let length = spline.period();
        let h: Vec<f64> = (0..n)
            .map(|i| if i + 1 == n { length - arclength[i] } else { arclength[i + 1] - arclength[i] })
            .collect();
        let weights = (0..n).map(|i| 0.5 * (h[(i + n - 1) % n] + h[i])).collect();
        Ok(Self {
            nodes,
            orientation,
            arclength,
            weights,
            length,
            spline,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Arclength coordinate of each node, starting at 0.
    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    /// Trapezoidal arclength weight of each node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spline(&self) -> &PeriodicSpline<2> {
        &self.spline
    }

    /// Signed area enclosed by the node polygon.
    pub fn polygon_area(&self) -> f64 {
        shoelace(&self.nodes)
    }
}

/// The reference boundary ∂U(0) as a union of closed curves.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMesh {
    components: Vec<Component>,
    offsets: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    nodes: Vec<[f64; 2]>,
    orientation: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshFile {
    components: Vec<ComponentFile>,
}

impl BoundaryMesh {
    pub fn new(components: Vec<(Vec<[f64; 2]>, Orientation)>) -> Result<Self, GeometryError> {
        if components.is_empty() {
            return Err(GeometryError::InvalidMesh {
                component: 0,
                reason: "mesh has no components".into(),
            });
        }
        let comps = components
            .into_iter()
            .enumerate()
            .map(|(i, (nodes, o))| Component::new(nodes, o, i))
            .collect::<Result<Vec<_>, _>>()?;
        let polys: Vec<&[[f64; 2]]> = comps.iter().map(|c| c.nodes()).collect();
        if comps.len() > 1 && clearance(&polys) == 0.0 {
            return Err(GeometryError::InvalidMesh {
                component: 0,
                reason: "components intersect".into(),
            });
        }
        let mut offsets = vec![0];
        for c in &comps {
            offsets.push(offsets.last().unwrap() + c.len());
        }
        Ok(Self {
            components: comps,
            offsets,
        })
    }

    /// Circle of radius `r` about `center` with `n` nodes, the first at
    /// angle `phase`.
    pub fn circle_with_phase(center: [f64; 2], r: f64, n: usize, phase: f64) -> Result<Self, GeometryError> {
        Self::new(vec![(circle_nodes(center, r, n, phase, 1.0), Orientation::CounterClockwise)])
    }

    pub fn circle(center: [f64; 2], r: f64, n: usize) -> Result<Self, GeometryError> {
        Self::circle_with_phase(center, r, n, 0.0)
    }

    /// Concentric annulus centered at the origin: component 0 is the outer
    /// circle (counterclockwise), component 1 the inner one (clockwise).
    pub fn annulus(r_inner: f64, r_outer: f64, n_inner: usize, n_outer: usize) -> Result<Self, GeometryError> {
        if !(r_inner > 0.0 && r_outer > r_inner) {
            return Err(GeometryError::InvalidMesh {
                component: 1,
                reason: format!("annulus radii ({r_inner}, {r_outer}) must satisfy 0 < inner < outer"),
            });
        }
        Self::new(vec![
            (circle_nodes([0.0, 0.0], r_outer, n_outer, 0.0, 1.0), Orientation::CounterClockwise),
            (circle_nodes([0.0, 0.0], r_inner, n_inner, 0.0, -1.0), Orientation::Clockwise),
        ])
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let file: MeshFile = serde_json::from_str(text)
            .map_err(|e| GeometryError::InvalidMesh { component: 0, reason: e.to_string() })?;
        let comps = file
            .components
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                Orientation::from_sign(c.orientation)
                    .map(|o| (c.nodes, o))
                    .ok_or(GeometryError::InvalidMesh {
                        component: i,
                        reason: format!("orientation must be +1 or -1, got {}", c.orientation),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(comps)
    }

    pub fn to_json(&self) -> String {
        let file = MeshFile {
            components: self
                .components
                .iter()
                .map(|c| ComponentFile {
                    nodes: c.nodes.clone(),
                    orientation: c.orientation.sign() as i32,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("mesh serializes")
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &Component {
        &self.components[c]
    }

    /// Total number of nodes over all components.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global index range of component `c`.
    pub fn range(&self, c: usize) -> std::ops::Range<usize> {
        self.offsets[c]..self.offsets[c + 1]
    }

    /// (component, local index) of global node `i`.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        let c = self.offsets.partition_point(|&o| o <= i) - 1;
        (c, i - self.offsets[c])
    }

    pub fn global(&self, component: usize, local: usize) -> usize {
        self.offsets[component] + local
    }

    pub fn point(&self, i: usize) -> BoundaryPoint {
        let (c, k) = self.locate(i);
        BoundaryPoint {
            component: c,
            s: self.components[c].arclength[k],
        }
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        let (c, k) = self.locate(i);
        self.components[c].nodes[k]
    }

    /// Trapezoidal arclength weights of all nodes, in global order.
    pub fn arclength_weights(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.weights.iter().copied()).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.components.iter().map(|c| c.length).sum()
    }

    pub fn mean_spacing(&self) -> f64 {
        self.total_length() / self.len() as f64
    }

    /// Reference curve and its derivatives in arclength at `p`.
    pub fn jet(&self, p: BoundaryPoint) -> Jet<2> {
        self.components[p.component].spline.jet(p.s)
    }

    pub fn eval(&self, p: BoundaryPoint) -> [f64; 2] {
        self.jet(p).value
    }

    /// Outward unit normal of the reference domain at `p`.
    pub fn outward_normal(&self, p: BoundaryPoint) -> [f64; 2] {
        let d = self.jet(p).d1;
        let n = d[0].hypot(d[1]);
        [d[1] / n, -d[0] / n]
    }

    /// Signed distance along the component from `a` to `b` (shortest way
    /// around), or `None` for points on different components.
    pub fn arc_offset(&self, a: BoundaryPoint, b: BoundaryPoint) -> Option<f64> {
        if a.component != b.component {
            return None;
        }
        let l = self.components[a.component].length;
        let d = (b.s - a.s).rem_euclid(l);
        Some(if d > 0.5 * l { d - l } else { d })
    }

    /// Wraps `p.s` into `[0, length)`.
    pub fn normalize(&self, p: BoundaryPoint) -> BoundaryPoint {
        BoundaryPoint {
            component: p.component,
            s: self.components[p.component].spline.wrap(p.s),
        }
    }

    /// Index of the node nearest to `p` along its component.
    pub fn nearest_node(&self, p: BoundaryPoint) -> usize {
        let c = &self.components[p.component];
        let s = c.spline.wrap(p.s);
        let k = c.arclength.partition_point(|&a| a <= s).max(1) - 1;
        let next = (k + 1) % c.len();
        let upper = if next == 0 { c.length } else { c.arclength[next] };
        let local = if s - c.arclength[k] <= upper - s { k } else { next };
        self.global(p.component, local)
    }
}

fn circle_nodes(center: [f64; 2], r: f64, n: usize, phase: f64, dir: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let t = phase + dir * TAU * i as f64 / n as f64;
            [center[0] + r * t.cos(), center[1] + r * t.sin()]
        })
        .collect()
}

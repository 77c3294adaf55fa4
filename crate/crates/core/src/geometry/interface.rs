//! Interface maps Φ from the reference boundary into the plane.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::GeometryError;
use crate::spline::{Jet, PeriodicSpline};

use super::mesh::{BoundaryMesh, BoundaryPoint};

/// Node values of Φ together with one periodic spline per component in the
/// reference arclength.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceMap {
    mesh: Arc<BoundaryMesh>,
    values: Vec<[f64; 2]>,
    splines: Vec<PeriodicSpline<2>>,
}

/// Discrete norms of an interface map, evaluated at the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceNorms {
    /// `c_norm[k]` = max over orders j ≤ k of sup |∂_s^j Φ|.
    pub c_norm: [f64; 4],
    /// sup of 1/|det JacΦ|.
    pub inv_jac_norm: f64,
    /// `c_norm[k] + inv_jac_norm` for the requested k.
    pub bracket_norm: f64,
    pub k: usize,
}

#[inline]
fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

// 3-point Gauss-Legendre on [0, 1]; exact for the quintic area integrand
const GL3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 0.277_777_777_777_777_8),
    (0.5, 0.444_444_444_444_444_4),
    (0.887_298_334_620_741_7, 0.277_777_777_777_777_8),
];

impl InterfaceMap {
    pub fn new(mesh: Arc<BoundaryMesh>, values: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if values.len() != mesh.len() {
            return Err(GeometryError::SizeMismatch {
                expected: mesh.len(),
                got: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(GeometryError::NonFinite { node });
        }
        let splines = (0..mesh.components().len())
            .map(|c| {
                let comp = mesh.component(c);
                PeriodicSpline::fit(comp.arclength(), &values[mesh.range(c)], comp.length())
            })
            .collect();
        Ok(Self { mesh, values, splines })
    }

    pub fn identity(mesh: Arc<BoundaryMesh>) -> Self {
        let values = (0..mesh.len()).map(|i| mesh.position(i)).collect();
        Self::new(mesh, values).expect("reference nodes are finite")
    }

    /// Map given by `f(reference point)` at each node.
    pub fn from_fn(mesh: Arc<BoundaryMesh>, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Self, GeometryError> {
        let values = (0..mesh.len()).map(|i| f(mesh.position(i))).collect();
        Self::new(mesh, values)
    }

    /// Φ + scale·delta, refitted.
    pub fn displaced(&self, delta: &[[f64; 2]], scale: f64) -> Result<Self, GeometryError> {
        if delta.len() != self.values.len() {
            return Err(GeometryError::SizeMismatch {
                expected: self.values.len(),
                got: delta.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(delta)
            .map(|(v, d)| [v[0] + scale * d[0], v[1] + scale * d[1]])
            .collect();
        Self::new(self.mesh.clone(), values)
    }

    pub fn scaled(&self, c: f64) -> Result<Self, GeometryError> {
        let values = self.values.iter().map(|v| [c * v[0], c * v[1]]).collect();
        Self::new(self.mesh.clone(), values)
    }

    pub fn mesh(&self) -> &Arc<BoundaryMesh> {
        &self.mesh
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn value(&self, i: usize) -> [f64; 2] {
        self.values[i]
    }

    pub fn component_values(&self, c: usize) -> &[[f64; 2]] {
        &self.values[self.mesh.range(c)]
    }

    pub fn spline(&self, c: usize) -> &PeriodicSpline<2> {
        &self.splines[c]
    }

    /// Φ and its arclength derivatives at an arbitrary boundary point.
    pub fn jet(&self, p: BoundaryPoint) -> Jet<2> {
        self.splines[p.component].jet(p.s)
    }

    pub fn node_jet(&self, i: usize) -> Jet<2> {
        let (c, k) = self.mesh.locate(i);
        self.splines[c].jet_at_knot(k)
    }

    fn reference_speed_at_node(&self, i: usize) -> f64 {
        let (c, k) = self.mesh.locate(i);
        norm(self.mesh.component(c).spline().jet_at_knot(k).d1)
    }

    /// JacΦ at node `i`: the derivative of Φ along the unit tangent of the
    /// reference curve.
    pub fn jacobian(&self, i: usize) -> [f64; 2] {
        let d = self.node_jet(i).d1;
        let g = self.reference_speed_at_node(i);
        [d[0] / g, d[1] / g]
    }

    pub fn jacobian_at(&self, p: BoundaryPoint) -> [f64; 2] {
        let d = self.jet(p).d1;
        let g = norm(self.mesh.jet(p).d1);
        [d[0] / g, d[1] / g]
    }

    /// |det JacΦ| at node `i`.
    pub fn det_jac(&self, i: usize) -> f64 {
        norm(self.jacobian(i))
    }

    pub fn det_jac_at(&self, p: BoundaryPoint) -> f64 {
        norm(self.jacobian_at(p))
    }

    fn outward_from(&self, t: [f64; 2], node: usize) -> Result<[f64; 2], GeometryError> {
        let l = norm(t);
        if !(l > 0.0) || !l.is_finite() {
            return Err(GeometryError::DegenerateJacobian { node, value: l });
        }
        Ok([t[1] / l, -t[0] / l])
    }

    /// Outward unit normal of the image curve at node `i`.
    pub fn normal(&self, i: usize) -> Result<[f64; 2], GeometryError> {
        self.outward_from(self.node_jet(i).d1, i)
    }

    /// Outward unit normal of the image curve at an arbitrary point; errors
    /// name the nearest node.
    pub fn normal_at(&self, p: BoundaryPoint) -> Result<[f64; 2], GeometryError> {
        self.outward_from(self.jet(p).d1, self.mesh.nearest_node(p))
    }

    pub fn normals(&self) -> Result<Vec<[f64; 2]>, GeometryError> {
        (0..self.len()).map(|i| self.normal(i)).collect()
    }

    /// Probability weights w_i ∝ |det JacΦ(x_i)|·Δs_i.
    pub fn surface_measure(&self) -> Result<Vec<f64>, GeometryError> {
        let ds = self.mesh.arclength_weights();
        let mut w: Vec<f64> = (0..self.len()).map(|i| self.det_jac(i) * ds[i]).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(GeometryError::ZeroMeasure);
        }
        w.iter_mut().for_each(|x| *x /= total);
        Ok(w)
    }

    /// Discrete C^k norms for k ≤ 3 plus the inverse-Jacobian sup. Orders
    /// above 3 are not represented; `k` is clamped.
    pub fn norms(&self, k: usize) -> InterfaceNorms {
        let mut sup = [0.0f64; 4];
        let mut inv = 0.0f64;
        for i in 0..self.len() {
            let j = self.node_jet(i);
            sup[0] = sup[0].max(norm(j.value));
            sup[1] = sup[1].max(norm(j.d1));
            sup[2] = sup[2].max(norm(j.d2));
            sup[3] = sup[3].max(norm(j.d3));
            inv = inv.max(1.0 / self.det_jac(i));
        }
        let mut c_norm = [0.0; 4];
        let mut acc = 0.0f64;
        for k in 0..4 {
            acc = acc.max(sup[k]);
            c_norm[k] = acc;
        }
        let k = k.min(3);
        InterfaceNorms {
            c_norm,
            inv_jac_norm: inv,
            bracket_norm: c_norm[k] + inv,
            k,
        }
    }

    /// Discrete sup-norm of Φ − Ψ and of its first `k` derivatives (k ≤ 3),
    /// taken as the maximum over orders.
    pub fn c_distance(&self, other: &Self, k: usize) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.len() {
            let (a, b) = (self.node_jet(i), other.node_jet(i));
            let pairs = [(a.value, b.value), (a.d1, b.d1), (a.d2, b.d2), (a.d3, b.d3)];
            for (x, y) in pairs.iter().take(k.min(3) + 1) {
                d = d.max(norm([x[0] - y[0], x[1] - y[1]]));
            }
        }
        d
    }

    /// ⟨Φ, Ψ⟩ at order one: C¹ distance plus the sup distance of the inverse
    /// Jacobians.
    pub fn bracket_distance(&self, other: &Self) -> f64 {
        let inv = (0..self.len())
            .map(|i| (1.0 / self.det_jac(i) - 1.0 / other.det_jac(i)).abs())
            .fold(0.0, f64::max);
        self.c_distance(other, 1) + inv
    }

    /// Signed area enclosed by the image curves, integrating ½(x y' − y x')
    /// exactly over every spline segment. Holes subtract.
    pub fn enclosed_area(&self) -> Result<f64, GeometryError> {
        if let Some(node) = (0..self.len()).find(|&i| !(self.det_jac(i) > 0.0)) {
            return Err(GeometryError::DegenerateJacobian {
                node,
                value: self.det_jac(node),
            });
        }
        let mut area = 0.0;
        for s in &self.splines {
            for seg in 0..s.knots().len() {
                let (_, h) = s.segment(seg);
                let t0 = s.knots()[seg];
                for &(x, w) in &GL3 {
                    let j = s.jet_in(seg, t0 + x * h);
                    area += 0.5 * w * h * (j.value[0] * j.d1[1] - j.value[1] * j.d1[0]);
                }
            }
        }
        Ok(area)
    }
}

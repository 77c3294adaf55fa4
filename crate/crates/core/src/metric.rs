//! The growth metric g^Φ on the reference domain: pullback of the image
//! metric on the boundary, interpolated across a collar to the Euclidean
//! metric in the interior.
//!
//! Collar coordinates (c, s, r) place x = γ_c(s) + r·ν(s), where γ_c is the
//! arclength parametrization of component c and ν the inward unit normal.
//! With f = 1 − k·r (k the signed curvature), a = |γ'|² and b = |Φ'|², the
//! metric in these coordinates is diag(H, 1) with
//! H = f²·(χ(r)·a + (1 − χ(r))·b), i.e. diag(χ + (1 − χ)·b/a, 1) in the
//! orthonormal frame (T, ν). For Φ = γ it is exactly Euclidean.
//!
//! The diffusion has generator Δ_g:
//! ds = √2·H^{-1/2} dB₁ + m^s dt, dr = √2 dB₂ + m^r dt + dL with
//! m^s = −½·H^{-2}·∂_sH and m^r = ∂_rH / (2H).

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::MetricError;
use crate::geometry::{BoundaryMesh, BoundaryPoint, InterfaceMap};

type V2 = [f64; 2];

#[inline]
fn dot(a: V2, b: V2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn cross(a: V2, b: V2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn rot90(v: V2) -> V2 {
    [-v[1], v[0]]
}

/// Smoothstep polynomial used for the cutoff χ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiProfile {
    /// 6x⁵ − 15x⁴ + 10x³
    Quintic,
    /// −20x⁷ + 70x⁶ − 84x⁵ + 35x⁴
    Septic,
    /// Coefficients c₀, c₁, … of Σ c_k x^k.
    Polynomial(Vec<f64>),
}

impl ChiProfile {
    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            ChiProfile::Quintic => vec![0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
            ChiProfile::Septic => vec![0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0],
            ChiProfile::Polynomial(c) => c.clone(),
        }
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// χ(r) = p(2r/ℓ − 1) on (ℓ/2, ℓ), 0 below and 1 above.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutoff {
    profile: ChiProfile,
    length: f64,
    coeffs: Vec<f64>,
    deriv: Vec<f64>,
}

impl Cutoff {
    /// Validates the profile: p(0) = 0, p(1) = 1, p'(0) = p'(1) = 0, p
    /// nondecreasing with values in [0, 1].
    pub fn new(profile: ChiProfile, collar_length: f64) -> Result<Self, MetricError> {
        if !(collar_length > 0.0 && collar_length.is_finite()) {
            return Err(MetricError::CollarLength(collar_length));
        }
        let coeffs = profile.coefficients();
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(MetricError::Cutoff("coefficients must be finite and nonempty".into()));
        }
        let deriv: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
        let tol = 1e-9;
        let p0 = horner(&coeffs, 0.0);
        let p1 = horner(&coeffs, 1.0);
        if p0.abs() > tol {
            return Err(MetricError::Cutoff(format!("p(0) = {p0}, must be 0")));
        }
        if (p1 - 1.0).abs() > tol {
            return Err(MetricError::Cutoff(format!("p(1) = {p1}, must be 1")));
        }
        let (d0, d1) = (horner(&deriv, 0.0), horner(&deriv, 1.0));
        if d0.abs() > tol || d1.abs() > tol {
            return Err(MetricError::Cutoff(format!("p'(0) = {d0}, p'(1) = {d1}, both must vanish")));
        }
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            let (v, d) = (horner(&coeffs, x), horner(&deriv, x));
            if !(-tol..=1.0 + tol).contains(&v) || d < -tol {
                return Err(MetricError::Cutoff(format!(
                    "not a monotone map into [0, 1] (p({x}) = {v}, p'({x}) = {d})"
                )));
            }
        }
        Ok(Self {
            profile,
            length: collar_length,
            coeffs,
            deriv,
        })
    }

    pub fn profile(&self) -> &ChiProfile {
        &self.profile
    }

    pub fn collar_length(&self) -> f64 {
        self.length
    }

    /// χ(r).
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        let l = self.length;
        if r <= 0.5 * l {
            0.0
        } else if r >= l {
            1.0
        } else {
            horner(&self.coeffs, 2.0 * r / l - 1.0)
        }
    }

    /// dχ/dr.
    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        let l = self.length;
        if r <= 0.5 * l || r >= l {
            0.0
        } else {
            horner(&self.deriv, 2.0 * r / l - 1.0) * 2.0 / l
        }
    }
}

/// A point in collar coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarPoint {
    pub component: usize,
    pub s: f64,
    /// Signed depth: positive inside the domain.
    pub r: f64,
}

impl CollarPoint {
    pub fn boundary(&self) -> BoundaryPoint {
        BoundaryPoint {
            component: self.component,
            s: self.s,
        }
    }
}

/// Derivatives of the reference curve at one arclength.
#[derive(Debug, Clone, Copy)]
struct Frame {
    p: V2,
    p2: V2,
    p3: V2,
    speed: f64,
    k: f64,
    dk: f64,
}

impl Frame {
    fn new(p: V2, p2: V2, p3: V2) -> Self {
        let speed = dot(p, p).sqrt();
        let c = cross(p, p2);
        let k = c / speed.powi(3);
        let dk = (cross(p, p3) * speed.powi(3) - c * 3.0 * speed * dot(p, p2)) / speed.powi(6);
        Self { p, p2, p3, speed, k, dk }
    }

    fn tangent(&self) -> V2 {
        [self.p[0] / self.speed, self.p[1] / self.speed]
    }

    fn inward(&self) -> V2 {
        rot90(self.tangent())
    }
}

/// Collar chart of a reference mesh: (c, s, r) ↦ γ_c(s) + r·ν(s) on
/// [0, 1.25·ℓ], validated to be injective at construction.
#[derive(Debug, Clone)]
pub struct CollarChart {
    mesh: Arc<BoundaryMesh>,
    length: f64,
}

/// Collar extent beyond ℓ over which the chart is validated.
pub const COLLAR_EXTENT: f64 = 1.25;

impl CollarChart {
    pub fn new(mesh: Arc<BoundaryMesh>, collar_length: f64) -> Result<Self, MetricError> {
        if !(collar_length > 0.0 && collar_length.is_finite()) {
            return Err(MetricError::CollarLength(collar_length));
        }
        let chart = Self {
            mesh,
            length: collar_length,
        };
        let extent = COLLAR_EXTENT * collar_length;
        let fail = |reason: String| MetricError::NotInjective {
            length: collar_length,
            reason,
        };
        for (c, comp) in chart.mesh.components().iter().enumerate() {
            let n = comp.len();
            let len = comp.length();
            for k in 0..2 * n {
                let s = len * k as f64 / (2 * n) as f64;
                let f = chart.frame(c, s);
                if 1.0 - f.k * extent <= 0.0 {
                    return Err(fail(format!(
                        "component {c}: curvature radius {:.4} at s = {s:.4} below the collar extent {extent:.4}",
                        1.0 / f.k
                    )));
                }
                for frac in [0.1, 0.5, 0.9, COLLAR_EXTENT] {
                    let r = frac * collar_length;
                    let x = chart.to_cartesian(CollarPoint { component: c, s, r });
                    let back = chart.project(x);
                    let ds = (back.s - s).rem_euclid(len);
                    let ds = ds.min(len - ds);
                    if back.component != c || ds > 1e-6 * len.max(1.0) || (back.r - r).abs() > 1e-8 {
                        return Err(fail(format!(
                            "point (component {c}, s = {s:.4}, r = {r:.4}) projects to (component {}, s = {:.4}, r = {:.4})",
                            back.component, back.s, back.r
                        )));
                    }
                }
            }
        }
        Ok(chart)
    }

    pub fn mesh(&self) -> &Arc<BoundaryMesh> {
        &self.mesh
    }

    pub fn collar_length(&self) -> f64 {
        self.length
    }

    fn frame(&self, c: usize, s: f64) -> Frame {
        let j = self.mesh.component(c).spline().jet(s);
        Frame::new(j.d1, j.d2, j.d3)
    }

    pub fn to_cartesian(&self, p: CollarPoint) -> V2 {
        let j = self.mesh.component(p.component).spline().jet(p.s);
        let f = Frame::new(j.d1, j.d2, j.d3);
        let n = f.inward();
        [j.value[0] + p.r * n[0], j.value[1] + p.r * n[1]]
    }

    /// Nearest point of the reference boundary and signed depth of `x`
    /// (positive inside the domain).
    pub fn project(&self, x: V2) -> CollarPoint {
        let mesh = &*self.mesh;
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..mesh.len() {
            let p = mesh.position(i);
            let d = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        let (c, k) = mesh.locate(best.1);
        let comp = mesh.component(c);
        let n = comp.len();
        let nodes = comp.nodes();
        let s_of = |i: usize| if i == n { comp.length() } else { comp.arclength()[i] };
        // start from the closer of the two polygon edges at the nearest node
        let edge_param = |i: usize| {
            let (a, b) = (nodes[i % n], nodes[(i + 1) % n]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let t = (dot([x[0] - a[0], x[1] - a[1]], ab) / dot(ab, ab)).clamp(0.0, 1.0);
            let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d = (q[0] - x[0]).powi(2) + (q[1] - x[1]).powi(2);
            (d, s_of(i % n) + t * (s_of(i % n + 1) - s_of(i % n)))
        };
        let prev = edge_param((k + n - 1) % n);
        let next = edge_param(k);
        let mut s = if prev.0 < next.0 { prev.1 } else { next.1 };
        let spline = comp.spline();
        let h = comp.length() / n as f64;
        let mut seg = spline.locate(spline.wrap(s), k);
        for _ in 0..30 {
            let sw = spline.wrap(s);
            seg = spline.locate(sw, seg);
            let j = spline.jet_in(seg, sw);
            let d = [j.value[0] - x[0], j.value[1] - x[1]];
            let g = dot(d, j.d1);
            let dg = dot(j.d1, j.d1) + dot(d, j.d2);
            let step = if dg > 0.0 { (g / dg).clamp(-0.5 * h, 0.5 * h) } else { -0.5 * h * g.signum() };
            s -= step;
            if step.abs() < 1e-15 * comp.length().max(1.0) {
                break;
            }
        }
        let s = spline.wrap(s);
        let j = spline.jet(s);
        let f = Frame::new(j.d1, j.d2, j.d3);
        let d = [x[0] - j.value[0], x[1] - j.value[1]];
        let dist = dot(d, d).sqrt();
        let r = if dot(d, f.inward()) >= 0.0 { dist } else { -dist };
        CollarPoint { component: c, s, r }
    }

    /// Signed distance to the reference boundary, positive inside.
    pub fn depth(&self, x: V2) -> f64 {
        self.project(x).r
    }
}

/// Coefficients of the collar diffusion at one point, in (s, r)
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollarCoefficients {
    /// Tangential metric entry H.
    pub h: f64,
    /// Tangential entry in the orthonormal frame (T, ν).
    pub lambda: f64,
    pub drift_s: f64,
    pub drift_r: f64,
}

/// Metric at a point: ambient matrix and, inside the collar, its collar
/// representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub ambient: [[f64; 2]; 2],
    pub collar: Option<(CollarPoint, CollarCoefficients)>,
}

/// g^Φ and its SDE coefficients for one interface map.
#[derive(Debug, Clone)]
pub struct MetricField {
    phi: InterfaceMap,
    chart: CollarChart,
    cutoff: Cutoff,
}

impl MetricField {
    pub fn new(phi: InterfaceMap, chart: CollarChart, profile: ChiProfile) -> Result<Self, MetricError> {
        if !Arc::ptr_eq(phi.mesh(), chart.mesh()) && **phi.mesh() != **chart.mesh() {
            return Err(MetricError::Geometry(crate::error::GeometryError::InvalidInterface(
                "interface and collar chart use different reference meshes".into(),
            )));
        }
        let cutoff = Cutoff::new(profile, chart.collar_length())?;
        Ok(Self { phi, chart, cutoff })
    }

    pub fn phi(&self) -> &InterfaceMap {
        &self.phi
    }

    pub fn chart(&self) -> &CollarChart {
        &self.chart
    }

    pub fn cutoff(&self) -> &Cutoff {
        &self.cutoff
    }

    pub fn mesh(&self) -> &Arc<BoundaryMesh> {
        self.chart.mesh()
    }

    pub fn collar_length(&self) -> f64 {
        self.chart.length
    }

    /// χ(r).
    pub fn chi_eval(&self, r: f64) -> f64 {
        self.cutoff.eval(r)
    }

    fn terms(&self, c: usize, s: f64, r: f64, hint: &mut usize) -> (Frame, CollarCoefficients) {
        let gs = self.chart.mesh.component(c).spline();
        let ps = self.phi.spline(c);
        let s = gs.wrap(s);
        *hint = gs.locate(s, *hint);
        let g = gs.jet_in(*hint, s);
        let q = ps.jet_in(*hint, s);
        let fr = Frame::new(g.d1, g.d2, g.d3);
        let a = dot(fr.p, fr.p);
        let da = 2.0 * dot(fr.p, fr.p2);
        let b = dot(q.d1, q.d1);
        let db = 2.0 * dot(q.d1, q.d2);
        let chi = self.cutoff.eval(r);
        let dchi = self.cutoff.derivative(r);
        let f = 1.0 - fr.k * r;
        let qt = chi * a + (1.0 - chi) * b;
        let h = f * f * qt;
        let dh_s = 2.0 * f * (-fr.dk * r) * qt + f * f * (chi * da + (1.0 - chi) * db);
        let dh_r = -2.0 * f * fr.k * qt + f * f * dchi * (a - b);
        (
            fr,
            CollarCoefficients {
                h,
                lambda: qt / a,
                drift_s: -0.5 * dh_s / (h * h),
                drift_r: dh_r / (2.0 * h),
            },
        )
    }

    /// Collar coefficients at (c, s, r); `hint` caches the spline segment.
    #[inline]
    pub fn coefficients(&self, c: usize, s: f64, r: f64, hint: &mut usize) -> CollarCoefficients {
        self.terms(c, s, r, hint).1
    }

    /// Drift of the diffusion in ambient coordinates at a collar point.
    pub fn ambient_drift(&self, p: CollarPoint) -> V2 {
        let mut hint = 0;
        let (fr, co) = self.terms(p.component, p.s, p.r, &mut hint);
        let (pv, p2, p3, sp) = (fr.p, fr.p2, fr.p3, fr.speed);
        let pp2 = dot(pv, p2);
        let s3 = sp.powi(3);
        let t1 = [p2[0] / sp - pv[0] * pp2 / s3, p2[1] / sp - pv[1] * pp2 / s3];
        let c = (dot(p2, p2) + dot(pv, p3)) / s3 - 3.0 * pp2 * pp2 / sp.powi(5);
        let t2 = [
            p3[0] / sp - 2.0 * p2[0] * pp2 / s3 - pv[0] * c,
            p3[1] / sp - 2.0 * p2[1] * pp2 / s3 - pv[1] * c,
        ];
        let (n1, n2) = (rot90(t1), rot90(t2));
        let nu = fr.inward();
        let r = p.r;
        let xs = [pv[0] + r * n1[0], pv[1] + r * n1[1]];
        let xss = [p2[0] + r * n2[0], p2[1] + r * n2[1]];
        [
            xss[0] / co.h + xs[0] * co.drift_s + nu[0] * co.drift_r,
            xss[1] / co.h + xs[1] * co.drift_s + nu[1] * co.drift_r,
        ]
    }

    fn locate(&self, x: V2) -> Result<Option<CollarPoint>, MetricError> {
        if !x[0].is_finite() || !x[1].is_finite() {
            return Err(MetricError::OutsideDomain(x[0], x[1]));
        }
        let p = self.chart.project(x);
        if p.r < 0.0 {
            return Err(MetricError::OutsideDomain(x[0], x[1]));
        }
        Ok(if p.r < self.chart.length { Some(p) } else { None })
    }

    /// g^Φ at an ambient point of the reference domain.
    pub fn metric_eval(&self, x: V2) -> Result<MetricValue, MetricError> {
        let Some(p) = self.locate(x)? else {
            return Ok(MetricValue {
                ambient: [[1.0, 0.0], [0.0, 1.0]],
                collar: None,
            });
        };
        let mut hint = 0;
        let (fr, co) = self.terms(p.component, p.s, p.r, &mut hint);
        if !(co.lambda > 0.0) {
            return Err(MetricError::NotPositiveDefinite(co.lambda));
        }
        let t = fr.tangent();
        let n = fr.inward();
        let l = co.lambda;
        let ambient = [
            [l * t[0] * t[0] + n[0] * n[0], l * t[0] * t[1] + n[0] * n[1]],
            [l * t[1] * t[0] + n[1] * n[0], l * t[1] * t[1] + n[1] * n[1]],
        ];
        Ok(MetricValue {
            ambient,
            collar: Some((p, co)),
        })
    }

    /// SPD square root A of g^{-1} in ambient coordinates.
    pub fn diffusion_matrix(&self, x: V2) -> Result<[[f64; 2]; 2], MetricError> {
        let Some(p) = self.locate(x)? else {
            return Ok([[1.0, 0.0], [0.0, 1.0]]);
        };
        let mut hint = 0;
        let (fr, co) = self.terms(p.component, p.s, p.r, &mut hint);
        if !(co.lambda > 0.0) {
            return Err(MetricError::NotPositiveDefinite(co.lambda));
        }
        let t = fr.tangent();
        let n = fr.inward();
        let a = 1.0 / co.lambda.sqrt();
        Ok([
            [a * t[0] * t[0] + n[0] * n[0], a * t[0] * t[1] + n[0] * n[1]],
            [a * t[1] * t[0] + n[1] * n[0], a * t[1] * t[1] + n[1] * n[1]],
        ])
    }

    /// Drift m^Φ in ambient coordinates; zero outside the collar.
    pub fn drift_vector(&self, x: V2) -> Result<V2, MetricError> {
        Ok(match self.locate(x)? {
            Some(p) => self.ambient_drift(p),
            None => [0.0, 0.0],
        })
    }
}

/// Default collar length for a scenario with the given minimal curvature
/// radius: half of it, capped at 0.5.
pub fn default_collar_length(min_curvature_radius: f64) -> f64 {
    (0.5 * min_curvature_radius).min(0.5)
}

//! Smooth nonnegative bump kernels on the reference boundary.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use crate::error::KernelError;
use crate::geometry::{BoundaryMesh, BoundaryPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    WrappedGaussian,
    VonMises,
    CompactBump,
    Zero,
}

/// Per-component scaling of the raw profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw profiles integrate to one in arclength.
    Raw,
    /// Mean of K(x, ·) under the uniform arclength measure of the component
    /// is one, averaged over x.
    UnitMeanUnderUniform,
    /// Mean of K(x, ·)·n(x)·n(·) under the uniform arclength measure of the
    /// component is one, averaged over x, so a circle inflates at unit speed.
    UnitSpeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    #[serde(default)]
    pub coupling: f64,
    pub normalization: Normalization,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::WrappedGaussian,
            bandwidth: 0.3,
            coupling: 0.0,
            normalization: Normalization::UnitSpeed,
        }
    }
}

pub const WRAP_TERMS: i32 = 7;

/// Support radius of the compact bump in units of its bandwidth.
pub const BUMP_REACH: f64 = 2.5;

fn gaussian(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    let q = z * z;
    if q > 1500.0 {
        0.0
    } else {
        (-0.5 * q).exp() / (sigma * (TAU).sqrt())
    }
}

/// Standard bump exp(-1/(1-z²)) with support radius 2.5σ, so its spread is
/// comparable to a Gaussian of deviation σ.
fn bump_shape(x: f64, sigma: f64) -> f64 {
    let z = x / (BUMP_REACH * sigma);
    if z.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - z * z)).exp()
    }
}

/// ∫ exp(-1/(1-z²)) dz over (-1, 1), by the trapezoid rule on a smooth
/// compactly supported integrand.
fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        let n = 4000;
        let h = 2.0 / n as f64;
        (1..n).map(|k| bump_shape(-1.0 + k as f64 * h, 1.0 / BUMP_REACH)).sum::<f64>() * h
    })
}

fn von_mises_mass(kappa: f64, period: f64) -> f64 {
    // smooth periodic integrand: the trapezoid rule converges geometrically
    let n = 2048;
    let h = period / n as f64;
    (0..n)
        .map(|k| (kappa * ((TAU * k as f64 / n as f64).cos() - 1.0)).exp())
        .sum::<f64>()
        * h
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(KernelError::Bandwidth(self.bandwidth));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(KernelError::Coupling(self.coupling));
        }
        Ok(())
    }

    /// Raw profile on a closed curve of length `period`, integrating to one
    /// over a period.
    pub fn profile(&self, period: f64) -> Profile {
        let norm = match self.family {
            KernelFamily::VonMises => {
                let kappa = (period / (TAU * self.bandwidth)).powi(2);
                1.0 / von_mises_mass(kappa, period)
            }
            KernelFamily::CompactBump => 1.0 / (bump_mass() * BUMP_REACH * self.bandwidth),
            _ => 1.0,
        };
        Profile {
            family: self.family,
            sigma: self.bandwidth,
            period,
            norm,
        }
    }

    /// Unwrapped profile at Euclidean distance `r`, used between components.
    pub fn free_profile(&self, r: f64) -> f64 {
        let sigma = self.bandwidth;
        match self.family {
            KernelFamily::Zero => 0.0,
            KernelFamily::WrappedGaussian | KernelFamily::VonMises => gaussian(r, sigma),
            KernelFamily::CompactBump => bump_shape(r, sigma) / (bump_mass() * BUMP_REACH * sigma),
        }
    }
}

/// A raw kernel profile bound to one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    family: KernelFamily,
    sigma: f64,
    period: f64,
    norm: f64,
}

impl Profile {
    /// Value at signed arclength offset `d`.
    pub fn eval(&self, d: f64) -> f64 {
        let (sigma, period) = (self.sigma, self.period);
        let mut d = d.rem_euclid(period);
        if d > 0.5 * period {
            d -= period;
        }
        match self.family {
            KernelFamily::Zero => 0.0,
            KernelFamily::WrappedGaussian => (-WRAP_TERMS..=WRAP_TERMS)
                .map(|m| gaussian(d + m as f64 * period, sigma))
                .sum(),
            KernelFamily::VonMises => {
                let kappa = (period / (TAU * sigma)).powi(2);
                (kappa * ((TAU * d / period).cos() - 1.0)).exp() * self.norm
            }
            KernelFamily::CompactBump => {
                let reach = (BUMP_REACH * sigma / period).ceil() as i32;
                (-reach..=reach)
                    .map(|m| bump_shape(d + m as f64 * period, sigma))
                    .sum::<f64>()
                    * self.norm
            }
        }
    }
}

/// A kernel family and scale bound to a reference mesh, with normalization
/// scales and the node-to-node kernel matrix precomputed.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    mesh: Arc<BoundaryMesh>,
    scales: Vec<f64>,
    matrix: Vec<f64>,
    profiles: Vec<Profile>,
}

impl Kernel {
    pub fn new(spec: KernelSpec, mesh: Arc<BoundaryMesh>) -> Result<Self, KernelError> {
        spec.validate()?;
        let profiles: Vec<Profile> = mesh.components().iter().map(|c| spec.profile(c.length())).collect();
        let mut k = Self {
            spec,
            mesh,
            scales: vec![1.0; profiles.len()],
            matrix: Vec::new(),
            profiles,
        };
        if spec.family != KernelFamily::Zero {
            for c in 0..k.profiles.len() {
                k.scales[c] = k.normalization_scale(c)?;
            }
        }
        let n = k.mesh.len();
        let points: Vec<BoundaryPoint> = (0..n).map(|i| k.mesh.point(i)).collect();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = k.eval(points[i], points[j]);
                matrix[i * n + j] = v;
                matrix[j * n + i] = v;
            }
        }
        k.matrix = matrix;
        Ok(k)
    }

    fn normalization_scale(&self, c: usize) -> Result<f64, KernelError> {
        let comp = self.mesh.component(c);
        let len = comp.length();
        let profile = self.profiles[c];
        let s = comp.arclength();
        let w = comp.weights();
        let normals: Vec<[f64; 2]> = (0..comp.len())
            .map(|k| self.mesh.outward_normal(BoundaryPoint { component: c, s: s[k] }))
            .collect();
        let mean = match self.spec.normalization {
            Normalization::Raw => return Ok(1.0),
            Normalization::UnitMeanUnderUniform | Normalization::UnitSpeed => {
                let project = self.spec.normalization == Normalization::UnitSpeed;
                let mut total = 0.0;
                for i in 0..comp.len() {
                    let mut row = 0.0;
                    for j in 0..comp.len() {
                        let mut v = profile.eval(s[j] - s[i]) * w[j];
                        if project {
                            v *= normals[i][0] * normals[j][0] + normals[i][1] * normals[j][1];
                        }
                        row += v;
                    }
                    total += w[i] * row / len;
                }
                total / len
            }
        };
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(KernelError::Normalization(c));
        }
        Ok(1.0 / mean)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn mesh(&self) -> &Arc<BoundaryMesh> {
        &self.mesh
    }

    /// Normalization scale applied on component `c`.
    pub fn scale(&self, c: usize) -> f64 {
        self.scales[c]
    }

    /// K(x, y) at arbitrary boundary points.
    pub fn eval(&self, x: BoundaryPoint, y: BoundaryPoint) -> f64 {
        if self.spec.family == KernelFamily::Zero {
            return 0.0;
        }
        if x.component == y.component {
            let c = x.component;
            self.scales[c] * self.profiles[c].eval(y.s - x.s)
        } else if self.spec.coupling == 0.0 {
            0.0
        } else {
            let (a, b) = (self.mesh.eval(x), self.mesh.eval(y));
            let r = (a[0] - b[0]).hypot(a[1] - b[1]);
            self.spec.coupling
                * (self.scales[x.component] * self.scales[y.component]).sqrt()
                * self.spec.free_profile(r)
        }
    }

    /// K(x_i, x_j) for nodes `i`, `j`.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.mesh.len() + j]
    }

    /// Row `i` of the node kernel matrix.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.mesh.len();
        &self.matrix[i * n..(i + 1) * n]
    }

    /// K(x_i, y) for every node `i`.
    pub fn column_at(&self, y: BoundaryPoint) -> Vec<f64> {
        (0..self.mesh.len()).map(|i| self.eval(self.mesh.point(i), y)).collect()
    }

    /// K(x, x), the peak of K(x, ·) for the built-in families.
    pub fn peak(&self, x: BoundaryPoint) -> f64 {
        self.eval(x, x)
    }

    /// Σ_j w_j K(x, y_j).
    pub fn mean_under(&self, weights: &[f64], x: BoundaryPoint) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * self.eval(x, self.mesh.point(j)))
            .sum()
    }

    /// Σ_j w_j K(x_i, y_j) at node `i`.
    pub fn mean_under_node(&self, weights: &[f64], i: usize) -> f64 {
        self.row(i).iter().zip(weights).map(|(k, w)| k * w).sum()
    }
}

/// Normal-projected kernel mean on a circle of radius `radius` under the
/// requested normalization, by trapezoid quadrature on `n` points of the exact
/// circle. Independent of any mesh.
pub fn projected_kernel_mean(spec: &KernelSpec, radius: f64, n: usize) -> f64 {
    if spec.family == KernelFamily::Zero {
        return 0.0;
    }
    let len = TAU * radius;
    let profile = spec.profile(len);
    let h = len / n as f64;
    let (mut plain, mut proj) = (0.0, 0.0);
    for k in 0..n {
        let d = k as f64 * h;
        let p = profile.eval(d) * h;
        plain += p;
        proj += p * (d / radius).cos();
    }
    match spec.normalization {
        Normalization::Raw => proj / len,
        Normalization::UnitMeanUnderUniform => proj / plain,
        Normalization::UnitSpeed => 1.0,
    }
}

/// Normal speed of a unit-mean wrapped Gaussian on the unit circle for
/// small bandwidth: E[cos Δθ] ≈ e^{-σ²/2}.
pub fn gaussian_circle_speed(sigma: f64) -> f64 {
    (-0.5 * sigma * sigma).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn circle(n: usize) -> Arc<BoundaryMesh> {
        Arc::new(BoundaryMesh::circle([0.0, 0.0], 1.0, n).unwrap())
    }

    fn spec(family: KernelFamily, normalization: Normalization) -> KernelSpec {
        KernelSpec {
            family,
            bandwidth: 0.3,
            coupling: 0.0,
            normalization,
        }
    }

    #[test]
    fn peak_at_diagonal() {
        let k = Kernel::new(spec(KernelFamily::WrappedGaussian, Normalization::Raw), circle(64)).unwrap();
        let x = BoundaryPoint { component: 0, s: 1.0 };
        for t in 0..50 {
            let y = BoundaryPoint { component: 0, s: 1.0 + 0.1 * t as f64 };
            assert!(k.eval(x, y) <= k.peak(x));
        }
    }

    #[test]
    fn antipodal_value_matches_wrapped_sum() {
        let s = spec(KernelFamily::WrappedGaussian, Normalization::Raw);
        let k = Kernel::new(s, circle(64)).unwrap();
        let len = k.mesh().component(0).length();
        let x = BoundaryPoint { component: 0, s: 0.0 };
        let y = BoundaryPoint { component: 0, s: 0.5 * len };
        let sigma: f64 = 0.3;
        let direct: f64 = (-7..=7)
            .map(|m| {
                let d = 0.5 * len + m as f64 * len;
                (-(d * d) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
            })
            .sum();
        assert!((k.eval(x, y) - direct).abs() <= 1e-14 * direct.max(1e-300));
        let half = 0.5 * len;
        assert!(k.eval(x, y) <= 2.0 * k.peak(x) * (-(half * half) / (2.0 * sigma * sigma)).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn raw_profiles_integrate_to_one() {
        for fam in [KernelFamily::WrappedGaussian, KernelFamily::VonMises, KernelFamily::CompactBump] {
            let s = spec(fam, Normalization::Raw);
            let n = 4096;
            let len = TAU;
            let p = s.profile(len);
            let total: f64 = (0..n).map(|k| p.eval(len * k as f64 / n as f64)).sum::<f64>() * len / n as f64;
            assert!((total - 1.0).abs() < 1e-9, "{fam:?}: {total}");
        }
    }

    #[test]
    fn uniform_means() {
        let m = circle(256);
        let w = vec![1.0 / 256.0; 256];
        let raw = Kernel::new(spec(KernelFamily::WrappedGaussian, Normalization::Raw), m.clone()).unwrap();
        let len = m.component(0).length();
        for i in (0..256).step_by(17) {
            assert!((raw.mean_under_node(&w, i) - 1.0 / len).abs() < 1e-6);
        }
        assert!((len - TAU).abs() < 1e-6);
        let unit = Kernel::new(spec(KernelFamily::WrappedGaussian, Normalization::UnitMeanUnderUniform), m.clone()).unwrap();
        for i in (0..256).step_by(13) {
            assert!((unit.mean_under_node(&w, i) - 1.0).abs() < 1e-6);
        }
        let zero = Kernel::new(spec(KernelFamily::Zero, Normalization::Raw), m).unwrap();
        assert_eq!(zero.mean_under_node(&w, 3), 0.0);
    }

    #[test]
    fn cross_component_coupling() {
        let m = Arc::new(BoundaryMesh::annulus(1.0, 2.0, 32, 32).unwrap());
        let mut s = spec(KernelFamily::WrappedGaussian, Normalization::UnitSpeed);
        let x = BoundaryPoint { component: 0, s: 0.0 };
        let y = BoundaryPoint { component: 1, s: 0.0 };
        assert_eq!(Kernel::new(s, m.clone()).unwrap().eval(x, y), 0.0);
        s.coupling = 0.5;
        s.bandwidth = 1.0;
        let k = Kernel::new(s, m).unwrap();
        assert!(k.eval(x, y) > 0.0);
        assert!((k.eval(x, y) - k.eval(y, x)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(KernelFamily::WrappedGaussian, Normalization::Raw);
        s.bandwidth = 0.0;
        assert_eq!(s.validate(), Err(KernelError::Bandwidth(0.0)));
        s.bandwidth = 0.3;
        s.coupling = 1.5;
        assert_eq!(s.validate(), Err(KernelError::Coupling(1.5)));
    }

    #[test]
    fn projected_mean_quadrature() {
        let s = spec(KernelFamily::WrappedGaussian, Normalization::UnitMeanUnderUniform);
        let v = projected_kernel_mean(&s, 1.0, 4096);
        assert!((v - gaussian_circle_speed(0.3)).abs() < 1e-3, "{v}");
    }

    #[test]
    fn smoothness_proxy() {
        for fam in [KernelFamily::WrappedGaussian, KernelFamily::VonMises, KernelFamily::CompactBump] {
            let k = Kernel::new(spec(fam, Normalization::UnitMeanUnderUniform), circle(64)).unwrap();
            let y = BoundaryPoint { component: 0, s: 0.0 };
            let k0 = k.peak(y);
            let h = 1e-3;
            let sigma: f64 = 0.3;
            for t in 0..400 {
                let x = -1.0 + 0.005 * t as f64;
                let f = |s: f64| k.eval(BoundaryPoint { component: 0, s }, y);
                let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
                assert!(d2.abs() <= 4.0 * k0 / (sigma * sigma), "{fam:?} at {x}: {d2}");
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_rotation_equivariant(a in 0.0f64..7.0, b in 0.0f64..7.0, rot in -10.0f64..10.0) {
            let k = Kernel::new(spec(KernelFamily::VonMises, Normalization::UnitSpeed), circle(32)).unwrap();
            let p = |s| BoundaryPoint { component: 0, s };
            let v = k.eval(p(a), p(b));
            prop_assert!((v - k.eval(p(b), p(a))).abs() <= 1e-14 * v.max(1e-300));
            let r = k.eval(p(a + rot), p(b + rot));
            prop_assert!((v - r).abs() <= 1e-9 * v.max(1e-12));
        }
    }
}

//! Property checks shared by the proptest suite and the acceptance run.

#![allow(dead_code)]

use std::f64::consts::TAU;
use std::sync::Arc;

use lgrowth_core::growth::{run_growth, GrowthParams};
use lgrowth_core::sde::{sample_traces, SdeOptions};
use lgrowth_core::{
    BoundaryMesh, BoundaryPoint, ChiProfile, CollarChart, InterfaceMap, Kernel, KernelFamily, KernelSpec,
    MetricField, Normalization,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Check = Result<(), TestCaseError>;

/// Smooth star-shaped perturbation of the unit circle:
/// r(θ) = 1 + Σ a_k cos(kθ + p_k), k = 2..=4, plus an anisotropic scale.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub amps: [f64; 3],
    pub phases: [f64; 3],
    pub sx: f64,
    pub sy: f64,
}

pub fn shape() -> impl Strategy<Value = Shape> {
    (
        prop::array::uniform3(-0.06f64..0.06),
        prop::array::uniform3(0.0f64..TAU),
        0.7f64..1.5,
        0.7f64..1.5,
    )
        .prop_map(|(amps, phases, sx, sy)| Shape { amps, phases, sx, sy })
}

pub fn disk(n: usize) -> Arc<BoundaryMesh> {
    Arc::new(BoundaryMesh::circle([0.0, 0.0], 1.0, n).unwrap())
}

pub fn apply(mesh: &Arc<BoundaryMesh>, s: &Shape) -> InterfaceMap {
    InterfaceMap::from_fn(mesh.clone(), |p| {
        let t = p[1].atan2(p[0]);
        let r = 1.0
            + (0..3)
                .map(|k| s.amps[k] * ((k as f64 + 2.0) * t + s.phases[k]).cos())
                .sum::<f64>();
        [s.sx * r * t.cos(), s.sy * r * t.sin()]
    })
    .unwrap()
}

/// Normals are unit and orthogonal to Φ'; weights are a probability
/// vector; scaling Φ by c keeps normals and weights and scales det Jac.
pub fn geometry_invariants(s: &Shape, c: f64) -> Check {
    let mesh = disk(64);
    let phi = apply(&mesh, s);
    let w = phi.surface_measure().unwrap();
    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    prop_assert!(w.iter().all(|&x| x >= 0.0));
    let scaled = phi.scaled(c).unwrap();
    let ws = scaled.surface_measure().unwrap();
    for i in 0..phi.len() {
        let n = phi.normal(i).unwrap();
        let d = phi.jacobian(i);
        prop_assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-12);
        prop_assert!((n[0] * d[0] + n[1] * d[1]).abs() < 1e-12 * (1.0 + d[0].hypot(d[1])));
        let ns = scaled.normal(i).unwrap();
        prop_assert!((ns[0] - n[0]).abs() < 1e-12 && (ns[1] - n[1]).abs() < 1e-12);
        prop_assert!((ws[i] - w[i]).abs() < 1e-14);
        prop_assert!((scaled.det_jac(i) - c * phi.det_jac(i)).abs() < 1e-11 * c * phi.det_jac(i));
    }
    Ok(())
}

/// |n^Φ − n^Ψ| ≤ 2·|Φ' − Ψ'| / |Φ'| pointwise and
/// Σ|w^Φ − w^Ψ| ≤ 2·sup|J^Φ − J^Ψ| / mean J^Φ.
pub fn continuity(s: &Shape, t: &Shape, eta: f64) -> Check {
    let mesh = disk(64);
    let phi = apply(&mesh, s);
    let other = apply(&mesh, t);
    let delta: Vec<[f64; 2]> = phi
        .values()
        .iter()
        .zip(other.values())
        .map(|(a, b)| [b[0] - a[0], b[1] - a[1]])
        .collect();
    let psi = phi.displaced(&delta, eta).unwrap();
    let mut sup_j: f64 = 0.0;
    for i in 0..phi.len() {
        let (a, b) = (phi.jacobian(i), psi.jacobian(i));
        let (na, nb) = (phi.normal(i).unwrap(), psi.normal(i).unwrap());
        let dn = (na[0] - nb[0]).hypot(na[1] - nb[1]);
        let dd = (a[0] - b[0]).hypot(a[1] - b[1]);
        prop_assert!(dn <= 2.0 * dd / a[0].hypot(a[1]) * (1.0 + 1e-9) + 1e-14);
        sup_j = sup_j.max((phi.det_jac(i) - psi.det_jac(i)).abs());
    }
    let (wa, wb) = (phi.surface_measure().unwrap(), psi.surface_measure().unwrap());
    let tv: f64 = wa.iter().zip(&wb).map(|(a, b)| (a - b).abs()).sum();
    let weights = mesh.arclength_weights();
    let len: f64 = weights.iter().sum();
    let mean_j_arc: f64 = (0..phi.len()).map(|i| phi.det_jac(i) * weights[i]).sum::<f64>() / len;
    prop_assert!(tv <= 2.0 * sup_j / mean_j_arc * (1.0 + 1e-9) + 1e-14, "tv {tv} sup_j {sup_j}");
    Ok(())
}

fn field(s: &Shape, profile: ChiProfile) -> MetricField {
    let mesh = disk(128);
    let phi = apply(&mesh, s);
    let chart = CollarChart::new(mesh, 0.5).unwrap();
    MetricField::new(phi, chart, profile).unwrap()
}

/// g^Φ is SPD, has ν as an eigenvector with eigenvalue 1, and its
/// tangential eigenvalue lies between min(J²) ∧ 1 and max(J²) ∨ 1.
pub fn metric_structure(s: &Shape, theta: f64, depth: f64) -> Check {
    let f = field(s, ChiProfile::Septic);
    let rho = 1.0 - depth;
    let x = [rho * theta.cos(), rho * theta.sin()];
    let v = f.metric_eval(x).unwrap();
    let g = v.ambient;
    prop_assert!((g[0][1] - g[1][0]).abs() < 1e-14);
    let tr = g[0][0] + g[1][1];
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    prop_assert!(tr > 0.0 && det > 0.0);
    let jets: Vec<f64> = (0..f.phi().len()).map(|i| f.phi().det_jac(i).powi(2)).collect();
    let lo = jets.iter().copied().fold(1.0, f64::min);
    let hi = jets.iter().copied().fold(1.0, f64::max);
    if let Some((p, co)) = v.collar {
        let nu = f.chart().to_cartesian(lgrowth_core::CollarPoint { r: p.r + 1e-3, ..p });
        let base = f.chart().to_cartesian(p);
        let n = [(nu[0] - base[0]) / 1e-3, (nu[1] - base[1]) / 1e-3];
        let gn = [g[0][0] * n[0] + g[0][1] * n[1], g[1][0] * n[0] + g[1][1] * n[1]];
        prop_assert!((gn[0] - n[0]).abs() < 1e-9 && (gn[1] - n[1]).abs() < 1e-9);
        // spline interpolation may dip slightly below the node extrema
        prop_assert!(co.lambda >= lo * (1.0 - 1e-3) && co.lambda <= hi * (1.0 + 1e-3));
        let a = f.diffusion_matrix(x).unwrap();
        let aa = [
            [a[0][0] * a[0][0] + a[0][1] * a[1][0], a[0][0] * a[0][1] + a[0][1] * a[1][1]],
            [a[1][0] * a[0][0] + a[1][1] * a[1][0], a[1][0] * a[0][1] + a[1][1] * a[1][1]],
        ];
        let gi = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((aa[i][j] - gi[i][j]).abs() < 1e-10);
            }
        }
    } else {
        prop_assert!(g == [[1.0, 0.0], [0.0, 1.0]]);
    }
    Ok(())
}

/// Analytic drift against central differences of
/// m_j = |g|^{-1/2} Σ_i ∂_i(|g|^{1/2} g^{ij}) with h = 1e-5.
pub fn drift_residual(s: &Shape, theta: f64, depth: f64) -> Result<f64, TestCaseError> {
    let f = field(s, ChiProfile::Quintic);
    let rho = 1.0 - depth;
    let x = [rho * theta.cos(), rho * theta.sin()];
    let g_inv = |x: [f64; 2]| {
        let g = f.metric_eval(x).unwrap().ambient;
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        (det, [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]])
    };
    let h = 1e-5;
    let (det, _) = g_inv(x);
    let mut m = [0.0; 2];
    for j in 0..2 {
        for i in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let (dp, gp) = g_inv(xp);
            let (dm, gm) = g_inv(xm);
            m[j] += (dp.sqrt() * gp[i][j] - dm.sqrt() * gm[i][j]) / (2.0 * h);
        }
        m[j] /= det.sqrt();
    }
    let a = f.drift_vector(x).unwrap();
    let scale = a[0].hypot(a[1]).max(1.0);
    let res = (a[0] - m[0]).hypot(a[1] - m[1]) / scale;
    prop_assert!(res <= 1e-6, "drift residual {res} at {x:?}");
    Ok(res)
}

/// Same seed gives identical trace draws and growth records, independent
/// of the worker count.
pub fn reproducibility(seed: u64) -> Check {
    let mesh = disk(64);
    let phi = InterfaceMap::identity(mesh.clone());
    let chart = CollarChart::new(mesh.clone(), 0.5).unwrap();
    let field = MetricField::new(phi.clone(), chart, ChiProfile::Quintic).unwrap();
    let opts = SdeOptions { dt: 1.6e-2, ..Default::default() };
    let z = BoundaryPoint { component: 0, s: 0.3 };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| sample_traces(&field, z, 0.7, 24, &opts, seed, 5).unwrap());
    let b = three.install(|| sample_traces(&field, z, 0.7, 24, &opts, seed, 5).unwrap());
    prop_assert_eq!(a, b);
    let spec = KernelSpec {
        family: KernelFamily::WrappedGaussian,
        bandwidth: 0.3,
        coupling: 0.0,
        normalization: Normalization::UnitSpeed,
    };
    let kernel = Kernel::new(spec, mesh).unwrap();
    let params = GrowthParams {
        compensator_samples: 4,
        ..GrowthParams::new(0.05, 0.2, 0.15)
    };
    let r1 = one.install(|| run_growth(&phi, z, &kernel, &params, seed).unwrap());
    let r2 = three.install(|| run_growth(&phi, z, &kernel, &params, seed).unwrap());
    prop_assert_eq!(r1, r2);
    Ok(())
}

//! The deterministic limit flow ∂_tΦ(x) = ∫ T^Φ(dy) K(x, y) n^Φ(y): explicit
//! stepping, the Picard map, blow-up detection and the radial reduction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{FlowError, GeometryError};
use crate::geometry::{diffeo_check, validity::clearance_window, BlowupReason, InterfaceMap};
use crate::kernels::{projected_kernel_mean, Kernel, KernelSpec};

/// Velocity V(x_i) = Σ_j w_j K(x_i, y_j) n^Φ(y_j).
pub fn flow_rhs(phi: &InterfaceMap, kernel: &Kernel) -> Result<Vec<[f64; 2]>, GeometryError> {
    let w = phi.surface_measure()?;
    let n = phi.normals()?;
    let wn: Vec<[f64; 2]> = w.iter().zip(&n).map(|(w, n)| [w * n[0], w * n[1]]).collect();
    Ok((0..phi.len())
        .into_par_iter()
        .with_min_len(64)
        .map(|i| {
            let row = kernel.row(i);
            let (mut vx, mut vy) = (0.0, 0.0);
            for (k, v) in row.iter().zip(&wn) {
                vx += k * v[0];
                vy += k * v[1];
            }
            [vx, vy]
        })
        .collect())
}

pub fn euler_step(phi: &InterfaceMap, kernel: &Kernel, dt: f64) -> Result<InterfaceMap, GeometryError> {
    let v = flow_rhs(phi, kernel)?;
    phi.displaced(&v, dt)
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<InterfaceMap>,
    pub tau_sol_estimate: Option<f64>,
    pub blowup_reason: BlowupReason,
    /// Picard iterations used, when produced by [`picard_solve`].
    pub iterations: Option<usize>,
}

impl FlowTrajectory {
    pub fn last(&self) -> &InterfaceMap {
        self.states.last().expect("trajectory holds the initial state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupOptions {
    pub dt: f64,
    pub t_max: f64,
    pub jac_floor: f64,
    /// Defaults to twice the mean reference node spacing.
    pub clearance_floor: Option<f64>,
    /// Keep every `store_every`-th state (the final one is always kept).
    pub store_every: usize,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 1.0,
            jac_floor: 1e-3,
            clearance_floor: None,
            store_every: 1,
        }
    }
}

pub fn default_clearance_floor(phi: &InterfaceMap) -> f64 {
    2.0 * phi.mesh().mean_spacing()
}

/// Euler integration until `t_max` or until the diffeomorphism monitor
/// fails. The failing step is bisected in its length down to a bracket of
/// width `1e-3·dt`, whose midpoint is the reported blow-up time.
pub fn integrate_until_blowup(
    phi0: &InterfaceMap,
    kernel: &Kernel,
    opts: &BlowupOptions,
) -> Result<FlowTrajectory, FlowError> {
    if !(opts.dt > 0.0) || !(opts.t_max >= 0.0) || opts.store_every == 0 {
        return Err(FlowError::Parameter(format!(
            "need dt > 0, t_max >= 0, store_every >= 1 (got {}, {}, {})",
            opts.dt, opts.t_max, opts.store_every
        )));
    }
    let floor = opts.clearance_floor.unwrap_or_else(|| default_clearance_floor(phi0));
    let start = diffeo_check(phi0, opts.jac_floor, floor);
    if !start.valid {
        return Err(FlowError::Parameter(format!(
            "initial interface fails the validity check ({:?})",
            start.reason()
        )));
    }
    let mut traj = FlowTrajectory {
        times: vec![0.0],
        states: vec![phi0.clone()],
        tau_sol_estimate: None,
        blowup_reason: BlowupReason::None,
        iterations: None,
    };
    let steps = (opts.t_max / opts.dt - 1e-9).ceil().max(0.0) as usize;
    let mut phi = phi0.clone();
    let mut t = 0.0;
    for k in 0..steps {
        let h = if k + 1 == steps { opts.t_max - t } else { opts.dt };
        let v = flow_rhs(&phi, kernel)?;
        let next = phi.displaced(&v, h)?;
        let report = diffeo_check(&next, opts.jac_floor, floor);
        if !report.valid {
            let (mut lo, mut hi) = (0.0, h);
            let mut reason = report.reason();
            while hi - lo > 1e-3 * opts.dt {
                let mid = 0.5 * (lo + hi);
                let trial = diffeo_check(&phi.displaced(&v, mid)?, opts.jac_floor, floor);
                if trial.valid {
                    lo = mid;
                } else {
                    hi = mid;
                    reason = trial.reason();
                }
            }
            traj.tau_sol_estimate = Some(t + 0.5 * (lo + hi));
            traj.blowup_reason = reason;
            if traj.times.last() != Some(&t) {
                traj.times.push(t);
                traj.states.push(phi);
            }
            return Ok(traj);
        }
        phi = next;
        t = if k + 1 == steps { opts.t_max } else { t + h };
        if (k + 1) % opts.store_every == 0 || k + 1 == steps {
            traj.times.push(t);
            traj.states.push(phi.clone());
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub tau: f64,
    /// Number of intervals of the time grid on [0, tau].
    pub steps: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub jac_floor: f64,
    pub clearance_floor: Option<f64>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tau: 0.2,
            steps: 200,
            tol: 1e-8,
            max_iter: 50,
            jac_floor: 1e-3,
            clearance_floor: None,
        }
    }
}

/// Fixed point of 𝔖Φ(t) = Φ(0) + ∫₀ᵗ V(Φ(s)) ds on a uniform grid with
/// left-endpoint quadrature, iterated from the constant path until the sup
/// over the grid of the node distance between iterates drops below `tol`.
pub fn picard_solve(phi0: &InterfaceMap, kernel: &Kernel, opts: &PicardOptions) -> Result<FlowTrajectory, FlowError> {
    if !(opts.tau >= 0.0) || (opts.tau > 0.0 && opts.steps == 0) {
        return Err(FlowError::Parameter(format!(
            "need tau >= 0 and a nonempty grid (tau {}, steps {})",
            opts.tau, opts.steps
        )));
    }
    let steps = if opts.tau == 0.0 { 0 } else { opts.steps };
    let dt = if steps == 0 { 0.0 } else { opts.tau / steps as f64 };
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let floor = opts.clearance_floor.unwrap_or_else(|| default_clearance_floor(phi0));
    let n = phi0.len();
    let base = phi0.values().to_vec();
    let mut path: Vec<InterfaceMap> = vec![phi0.clone(); steps + 1];
    let mut last = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let velocities = path[..steps]
            .iter()
            .map(|p| flow_rhs(p, kernel))
            .collect::<Result<Vec<_>, _>>()?;
        let mut acc = vec![[0.0; 2]; n];
        let mut next = Vec::with_capacity(steps + 1);
        let mut dist = 0.0f64;
        for k in 0..=steps {
            if k > 0 {
                for (a, v) in acc.iter_mut().zip(&velocities[k - 1]) {
                    a[0] += dt * v[0];
                    a[1] += dt * v[1];
                }
            }
            let vals: Vec<[f64; 2]> = base.iter().zip(&acc).map(|(b, a)| [b[0] + a[0], b[1] + a[1]]).collect();
            for (p, q) in vals.iter().zip(path[k].values()) {
                dist = dist.max((p[0] - q[0]).hypot(p[1] - q[1]));
            }
            let state = InterfaceMap::new(phi0.mesh().clone(), vals)?;
            if !diffeo_check(&state, opts.jac_floor, floor).valid {
                return Err(FlowError::ContractionEscaped {
                    iteration: iter,
                    time: times[k],
                });
            }
            next.push(state);
        }
        path = next;
        last = dist;
        if dist < opts.tol {
            return Ok(FlowTrajectory {
                times,
                states: path,
                tau_sol_estimate: None,
                blowup_reason: BlowupReason::None,
                iterations: Some(iter),
            });
        }
    }
    Err(FlowError::NoConvergence {
        max_iter: opts.max_iter,
        last,
    })
}

/// Centroid, mean radius and max radial deviation of the image of a
/// single-component interface.
pub fn circle_fit(phi: &InterfaceMap, component: usize) -> ([f64; 2], f64, f64) {
    let v = phi.component_values(component);
    let n = v.len() as f64;
    let c = [v.iter().map(|p| p[0]).sum::<f64>() / n, v.iter().map(|p| p[1]).sum::<f64>() / n];
    let radii: Vec<f64> = v.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).collect();
    let mean = radii.iter().sum::<f64>() / n;
    let dev = radii.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
    (c, mean, dev)
}

/// Radius of an `n`-gon inscribed circle at which the diffeomorphism
/// monitor fires: either |det Jac| = `jac_floor` relative to the reference
/// radius, or the same-component clearance, a chord spanning
/// `clearance_window(n) - 1` edges, reaches `clearance_floor`.
pub fn circle_collapse_radius(n: usize, reference_radius: f64, jac_floor: f64, clearance_floor: f64) -> f64 {
    let w = clearance_window(n) as f64;
    let chord = 2.0 * (PI * (w - 1.0) / n as f64).sin();
    (jac_floor * reference_radius).max(clearance_floor / chord)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSolution {
    pub times: Vec<f64>,
    pub r_inner: Vec<f64>,
    pub r_outer: Vec<f64>,
    pub collapse_time: Option<f64>,
}

impl RadialSolution {
    /// Linear interpolation of (r_inner, r_outer) at `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return (self.r_inner[0], self.r_outer[0]);
        }
        if k == self.times.len() {
            return (*self.r_inner.last().unwrap(), *self.r_outer.last().unwrap());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let a = (t - t0) / (t1 - t0);
        (
            self.r_inner[k - 1] + a * (self.r_inner[k] - self.r_inner[k - 1]),
            self.r_outer[k - 1] + a * (self.r_outer[k] - self.r_outer[k - 1]),
        )
    }
}

/// Rotationally symmetric reduction of the flow for concentric circles with
/// reference radii `(r_inner0, r_outer0)` and no cross-component coupling:
/// dr_in/dt = −r_in/(r_in + r_out)·k_in, dr_out/dt = r_out/(r_in + r_out)·k_out,
/// where k_a is the normal-projected kernel mean on the reference circle a
/// and the factors are the measure shares. `r_inner0 = 0` is the single
/// circle. Integrated by RK4 with step-doubling error control; the collapse
/// time is the first time r_in reaches `collapse_radius`.
pub fn radial_ode_oracle(
    r_inner0: f64,
    r_outer0: f64,
    spec: &KernelSpec,
    collapse_radius: f64,
    t_max: f64,
) -> Result<RadialSolution, FlowError> {
    if !(r_outer0 > 0.0) || r_inner0 < 0.0 || r_inner0 >= r_outer0 {
        return Err(FlowError::Parameter(format!("radii ({r_inner0}, {r_outer0})")));
    }
    if r_inner0 > 0.0 && spec.coupling != 0.0 {
        return Err(FlowError::NotRotationInvariant(
            "cross-component coupling is not captured by the two-circle reduction".into(),
        ));
    }
    let quad = 1 << 14;
    let k_out = projected_kernel_mean(spec, r_outer0, quad);
    let k_in = if r_inner0 > 0.0 {
        projected_kernel_mean(spec, r_inner0, quad)
    } else {
        0.0
    };
    let single = r_inner0 == 0.0;
    let rhs = |y: [f64; 2]| -> [f64; 2] {
        if single {
            [0.0, k_out]
        } else {
            let total = y[0] + y[1];
            [-y[0] / total * k_in, y[1] / total * k_out]
        }
    };
    let rk4 = |y: [f64; 2], h: f64| -> [f64; 2] {
        let k1 = rhs(y);
        let k2 = rhs([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = rhs([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = rhs([y[0] + h * k3[0], y[1] + h * k3[1]]);
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    };
    // one controlled step: returns (extrapolated state, error estimate)
    let step = |y: [f64; 2], h: f64| -> ([f64; 2], f64) {
        let full = rk4(y, h);
        let half = rk4(rk4(y, 0.5 * h), 0.5 * h);
        let err = ((half[0] - full[0]).abs()).max((half[1] - full[1]).abs()) / 15.0;
        (
            [half[0] + (half[0] - full[0]) / 15.0, half[1] + (half[1] - full[1]) / 15.0],
            err,
        )
    };
    let tol = 1e-8;
    let mut sol = RadialSolution {
        times: vec![0.0],
        r_inner: vec![r_inner0],
        r_outer: vec![r_outer0],
        collapse_time: None,
    };
    let mut y = [r_inner0, r_outer0];
    let mut t = 0.0;
    let mut h: f64 = 1e-2;
    let watch = !single && collapse_radius > 0.0;
    if watch && r_inner0 <= collapse_radius {
        sol.collapse_time = Some(0.0);
        return Ok(sol);
    }
    while t < t_max {
        h = h.min(t_max - t);
        let (cand, err) = step(y, h);
        if err > tol && h > 1e-12 {
            h *= (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.5);
            continue;
        }
        if watch && cand[0] <= collapse_radius {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > 1e-13 * (1.0 + t) {
                let mid = 0.5 * (lo + hi);
                if step(y, mid).0[0] <= collapse_radius {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let yc = step(y, hi).0;
            t += hi;
            sol.times.push(t);
            sol.r_inner.push(yc[0]);
            sol.r_outer.push(yc[1]);
            sol.collapse_time = Some(t);
            return Ok(sol);
        }
        y = cand;
        t += h;
        sol.times.push(t);
        sol.r_inner.push(y[0]);
        sol.r_outer.push(y[1]);
        if err < tol / 32.0 {
            h *= 2.0;
        }
    }
    Ok(sol)
}

//! The microscopic growth process (z^ε, Φ^ε): at the rings of a rate ε⁻¹
//! Poisson clock the particle jumps to a draw of T^{Φ,δ}_z and the
//! interface receives the bump ε·K(·, y)·n^Φ(y).
//!
//! Between jumps the state is constant, so the compensator of the jump sum
//! and the effective flux are integrals of piecewise-constant integrands.
//! Both are recorded per jump interval as a flux history.

use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::GrowthError;
use crate::flow::{default_clearance_floor, flow_rhs};
use crate::geometry::{diffeo_check, BoundaryPoint, InterfaceMap};
use crate::kernels::Kernel;
use crate::metric::{ChiProfile, CollarChart, MetricField};
use crate::rng::CounterRng;
use crate::sde::{sample_trace, SdeOptions};

/// δ as a function of ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSchedule {
    Fixed(f64),
    /// δ = ε^{1/2}
    Sqrt,
}

impl DeltaSchedule {
    pub fn delta(&self, epsilon: f64) -> f64 {
        match *self {
            DeltaSchedule::Fixed(d) => d,
            DeltaSchedule::Sqrt => epsilon.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthParams {
    pub epsilon: f64,
    pub delta: f64,
    pub t_max: f64,
    pub snapshot_times: Vec<f64>,
    pub sde: SdeOptions,
    pub collar_length: f64,
    pub chi: ChiProfile,
    pub jac_floor: f64,
    /// Defaults to twice the mean reference node spacing.
    pub clearance_floor: Option<f64>,
    /// Auxiliary trace draws per jump interval for the flux history; 0
    /// disables it.
    pub compensator_samples: usize,
}

impl GrowthParams {
    pub fn new(epsilon: f64, delta: f64, t_max: f64) -> Self {
        Self {
            epsilon,
            delta,
            t_max,
            snapshot_times: vec![t_max],
            sde: SdeOptions::default(),
            collar_length: 0.5,
            chi: ChiProfile::Quintic,
            jac_floor: 1e-3,
            clearance_floor: None,
            compensator_samples: 64,
        }
    }

    pub fn validate(&self) -> Result<(), GrowthError> {
        let bad = |m: String| Err(GrowthError::Parameter(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max must be nonnegative, got {}", self.t_max));
        }
        if self.snapshot_times.windows(2).any(|w| w[0] > w[1])
            || self.snapshot_times.iter().any(|&t| !(0.0..=self.t_max).contains(&t))
        {
            return bad("snapshot_times must be sorted within [0, t_max]".into());
        }
        self.sde.validate()?;
        Ok(())
    }
}

/// Markov state (z, Φ) with its clock.
#[derive(Debug, Clone)]
pub struct GrowthState {
    pub z: BoundaryPoint,
    pub phi: InterfaceMap,
    pub t: f64,
    pub jump_count: u64,
}

/// Flux integrands on one interval of constant state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxInterval {
    pub t0: f64,
    pub t1: f64,
    /// Monte Carlo mean of ∫T^{Φ,δ}_z(dy) K(x_i, y) n^Φ(y).
    pub micro: Vec<[f64; 2]>,
    /// Variance of that mean, per coordinate.
    pub micro_var: Vec<[f64; 2]>,
    /// ∫T^Φ(dy) K(x_i, y) n^Φ(y).
    pub effective: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub values: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRunRecord {
    pub seed: u64,
    pub params: GrowthParams,
    pub z0: BoundaryPoint,
    pub phi0: Vec<[f64; 2]>,
    pub jump_times: Vec<f64>,
    pub jump_locations: Vec<BoundaryPoint>,
    /// Snapshot at each requested time: the last state at or before it.
    pub snapshots: Vec<Snapshot>,
    pub tau_sol_epsilon: Option<f64>,
    pub flux: Vec<FluxInterval>,
    pub trace_steps: u64,
    pub trace_fallbacks: u64,
}

impl GrowthRunRecord {
    pub fn final_values(&self) -> &[[f64; 2]] {
        self.snapshots.last().map(|s| &s.values[..]).unwrap_or(&self.phi0)
    }
}

/// 𝒯^{ε,y}Φ(x) = Φ(x) + ε·K(x, y)·n^Φ(y).
pub fn bump(phi: &InterfaceMap, y: BoundaryPoint, epsilon: f64, kernel: &Kernel) -> Result<InterfaceMap, GrowthError> {
    if epsilon == 0.0 {
        return Ok(phi.clone());
    }
    let n = phi.normal_at(y)?;
    let k = kernel.column_at(y);
    let delta: Vec<[f64; 2]> = k.iter().map(|&k| [k * n[0], k * n[1]]).collect();
    Ok(phi.displaced(&delta, epsilon)?)
}

/// K(·, y)·n^Φ(y) at every node.
fn kernel_push(phi: &InterfaceMap, y: BoundaryPoint, kernel: &Kernel) -> Result<Vec<[f64; 2]>, GrowthError> {
    let n = phi.normal_at(y)?;
    Ok(kernel.column_at(y).iter().map(|&k| [k * n[0], k * n[1]]).collect())
}

const STREAM_CLOCK: u64 = 1;
const STREAM_TRACE: u64 = 2;
const STREAM_AUX: u64 = 3;

/// Growth driver holding the fixed ingredients of one run.
pub struct GrowthRunner<'a> {
    pub kernel: &'a Kernel,
    pub chart: CollarChart,
    pub params: GrowthParams,
    clearance_floor: f64,
}

impl<'a> GrowthRunner<'a> {
    pub fn new(kernel: &'a Kernel, params: GrowthParams) -> Result<Self, GrowthError> {
        params.validate()?;
        let chart = CollarChart::new(kernel.mesh().clone(), params.collar_length)?;
        let clearance_floor = params
            .clearance_floor
            .unwrap_or_else(|| default_clearance_floor(&InterfaceMap::identity(kernel.mesh().clone())));
        Ok(Self {
            kernel,
            chart,
            params,
            clearance_floor,
        })
    }

    pub fn field(&self, phi: &InterfaceMap) -> Result<MetricField, GrowthError> {
        Ok(MetricField::new(phi.clone(), self.chart.clone(), self.params.chi.clone())?)
    }

    fn flux_interval(
        &self,
        state: &GrowthState,
        field: &MetricField,
        t1: f64,
        seed: u64,
    ) -> Result<FluxInterval, GrowthError> {
        let n = self.params.compensator_samples;
        let nodes = state.phi.len();
        let pushes: Vec<Vec<[f64; 2]>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut rng = CounterRng::keyed(seed, &[STREAM_AUX, state.jump_count, j as u64]);
                let y = sample_trace(field, state.z, self.params.delta, &self.params.sde, &mut rng)
                    .map_err(|e| GrowthError::Trace {
                        jump: state.jump_count,
                        source: e,
                    })?;
                kernel_push(&state.phi, y.endpoint, self.kernel)
            })
            .collect::<Result<_, _>>()?;
        let mut micro = vec![[0.0; 2]; nodes];
        let mut second = vec![[0.0; 2]; nodes];
        for p in &pushes {
            for i in 0..nodes {
                for c in 0..2 {
                    micro[i][c] += p[i][c];
                    second[i][c] += p[i][c] * p[i][c];
                }
            }
        }
        let nf = n as f64;
        let mut micro_var = vec![[0.0; 2]; nodes];
        for i in 0..nodes {
            for c in 0..2 {
                micro[i][c] /= nf;
                let var = if n > 1 {
                    (second[i][c] / nf - micro[i][c] * micro[i][c]).max(0.0) * nf / (nf - 1.0)
                } else {
                    0.0
                };
                micro_var[i][c] = var / nf;
            }
        }
        Ok(FluxInterval {
            t0: state.t,
            t1,
            micro,
            micro_var,
            effective: flow_rhs(&state.phi, self.kernel)?,
        })
    }

    /// One ring of the clock: advance t by an Exp(ε⁻¹) wait, then jump.
    /// Returns `None` when the wait passes `t_max`, leaving the state
    /// unchanged. The flux interval ending at the new time (or at `t_max`)
    /// is returned alongside.
    pub fn growth_step(
        &self,
        state: &GrowthState,
        clock: &mut CounterRng,
        seed: u64,
    ) -> Result<(Option<GrowthState>, Option<FluxInterval>, u64, u64), GrowthError> {
        let eps = self.params.epsilon;
        let wait = Exp::new(1.0 / eps)
            .map_err(|e| GrowthError::Parameter(e.to_string()))?
            .sample(clock);
        let t_next = state.t + wait;
        let field = self.field(&state.phi)?;
        let t_end = t_next.min(self.params.t_max);
        let flux = if self.params.compensator_samples > 0 && t_end > state.t {
            Some(self.flux_interval(state, &field, t_end, seed)?)
        } else {
            None
        };
        if t_next > self.params.t_max {
            return Ok((None, flux, 0, 0));
        }
        let mut rng = CounterRng::keyed(seed, &[STREAM_TRACE, state.jump_count]);
        let y = sample_trace(&field, state.z, self.params.delta, &self.params.sde, &mut rng).map_err(|e| {
            GrowthError::Trace {
                jump: state.jump_count,
                source: e,
            }
        })?;
        let phi = bump(&state.phi, y.endpoint, eps, self.kernel)?;
        Ok((
            Some(GrowthState {
                z: y.endpoint,
                phi,
                t: t_next,
                jump_count: state.jump_count + 1,
            }),
            flux,
            y.steps_used,
            y.fallbacks,
        ))
    }

    /// Iterates [`Self::growth_step`] until `t_max` or until the interface
    /// fails the diffeomorphism monitor.
    pub fn run(&self, phi0: &InterfaceMap, z0: BoundaryPoint, seed: u64) -> Result<GrowthRunRecord, GrowthError> {
        let p = &self.params;
        let mut state = GrowthState {
            z: self.kernel.mesh().normalize(z0),
            phi: phi0.clone(),
            t: 0.0,
            jump_count: 0,
        };
        let mut rec = GrowthRunRecord {
            seed,
            params: p.clone(),
            z0: state.z,
            phi0: phi0.values().to_vec(),
            jump_times: Vec::new(),
            jump_locations: Vec::new(),
            snapshots: Vec::new(),
            tau_sol_epsilon: None,
            flux: Vec::new(),
            trace_steps: 0,
            trace_fallbacks: 0,
        };
        let mut clock = CounterRng::keyed(seed, &[STREAM_CLOCK]);
        let mut snap = 0;
        loop {
            let (next, flux, steps, fallbacks) = self.growth_step(&state, &mut clock, seed)?;
            rec.trace_steps += steps;
            rec.trace_fallbacks += fallbacks;
            if let Some(f) = flux {
                rec.flux.push(f);
            }
            let t_until = next.as_ref().map_or(f64::INFINITY, |s| s.t);
            while snap < p.snapshot_times.len() && p.snapshot_times[snap] < t_until {
                rec.snapshots.push(Snapshot {
                    t: p.snapshot_times[snap],
                    values: state.phi.values().to_vec(),
                });
                snap += 1;
            }
            let Some(next) = next else { break };
            rec.jump_times.push(next.t);
            rec.jump_locations.push(next.z);
            let report = diffeo_check(&next.phi, p.jac_floor, self.clearance_floor);
            state = next;
            if !report.valid {
                rec.tau_sol_epsilon = Some(state.t);
                break;
            }
        }
        Ok(rec)
    }
}

/// Convenience wrapper around [`GrowthRunner`].
pub fn run_growth(
    phi0: &InterfaceMap,
    z0: BoundaryPoint,
    kernel: &Kernel,
    params: &GrowthParams,
    seed: u64,
) -> Result<GrowthRunRecord, GrowthError> {
    GrowthRunner::new(kernel, params.clone())?.run(phi0, z0, seed)
}

/// Interface after replaying every recorded jump from Φ(0).
pub fn replay(record: &GrowthRunRecord, kernel: &Kernel) -> Result<InterfaceMap, GrowthError> {
    let mut phi = InterfaceMap::new(kernel.mesh().clone(), record.phi0.clone())?;
    for &y in &record.jump_locations {
        phi = bump(&phi, y, record.params.epsilon, kernel)?;
    }
    Ok(phi)
}

/// Time integrals of the recorded flux integrands on [0, t].
#[derive(Debug, Clone, PartialEq)]
pub struct FluxIntegrals {
    pub micro: Vec<[f64; 2]>,
    pub micro_var: Vec<[f64; 2]>,
    pub effective: Vec<[f64; 2]>,
}

pub fn integrate_flux(flux: &[FluxInterval], nodes: usize, t: f64) -> FluxIntegrals {
    let mut out = FluxIntegrals {
        micro: vec![[0.0; 2]; nodes],
        micro_var: vec![[0.0; 2]; nodes],
        effective: vec![[0.0; 2]; nodes],
    };
    for f in flux {
        let dt = (f.t1.min(t) - f.t0).max(0.0);
        if dt == 0.0 {
            continue;
        }
        for i in 0..nodes {
            for c in 0..2 {
                out.micro[i][c] += dt * f.micro[i][c];
                out.micro_var[i][c] += dt * dt * f.micro_var[i][c];
                out.effective[i][c] += dt * f.effective[i][c];
            }
        }
    }
    out
}

/// Sup-node |M^ε| at each snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrack {
    pub times: Vec<f64>,
    pub sup_norm: Vec<f64>,
    /// Monte Carlo standard error of the compensator at the maximizing node.
    pub std_error: Vec<f64>,
}

impl MartingaleTrack {
    pub fn sup(&self) -> f64 {
        self.sup_norm.iter().copied().fold(0.0, f64::max)
    }
}

/// M^ε(t, x) = Φ^ε(t, x) − Φ(0, x) − ∫₀ᵗ ∫T^{Φ,δ}_{z(s)}(dy) K(x, y) n(y) ds
/// on the snapshot grid, from the recorded flux history.
pub fn martingale_track(record: &GrowthRunRecord) -> MartingaleTrack {
    let nodes = record.phi0.len();
    let mut out = MartingaleTrack {
        times: Vec::new(),
        sup_norm: Vec::new(),
        std_error: Vec::new(),
    };
    for s in &record.snapshots {
        let f = integrate_flux(&record.flux, nodes, s.t);
        let (mut best, mut se) = (0.0, 0.0);
        for i in 0..nodes {
            let m = [
                s.values[i][0] - record.phi0[i][0] - f.micro[i][0],
                s.values[i][1] - record.phi0[i][1] - f.micro[i][1],
            ];
            let norm = m[0].hypot(m[1]);
            if norm >= best {
                best = norm;
                se = (f.micro_var[i][0] + f.micro_var[i][1]).sqrt();
            }
        }
        out.times.push(s.t);
        out.sup_norm.push(best);
        out.std_error.push(se);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundaryMesh;
    use crate::kernels::{KernelFamily, KernelSpec, Normalization};
    use std::sync::Arc;

    fn setup(n: usize, family: KernelFamily) -> (InterfaceMap, Kernel) {
        let mesh = Arc::new(BoundaryMesh::circle([0.0, 0.0], 1.0, n).unwrap());
        let spec = KernelSpec {
            family,
            bandwidth: 0.3,
            coupling: 0.0,
            normalization: Normalization::UnitSpeed,
        };
        let kernel = Kernel::new(spec, mesh.clone()).unwrap();
        (InterfaceMap::identity(mesh), kernel)
    }

    #[test]
    fn bump_formula() {
        let (phi, k) = setup(64, KernelFamily::WrappedGaussian);
        let y = BoundaryPoint { component: 0, s: 0.0 };
        assert_eq!(bump(&phi, y, 0.0, &k).unwrap(), phi);
        let b = bump(&phi, y, 0.01, &k).unwrap();
        let d0 = [b.value(0)[0] - 1.0, b.value(0)[1]];
        assert!((d0[0] - 0.01 * k.peak(y)).abs() < 1e-12 && d0[1].abs() < 1e-12);
        let far = b.value(32);
        assert!((far[0] + 1.0).abs() < 1e-6 && far[1].abs() < 1e-6);
    }

    #[test]
    fn bump_area_first_order() {
        let (phi, k) = setup(128, KernelFamily::WrappedGaussian);
        let y = BoundaryPoint { component: 0, s: 0.7 };
        let eps = 1e-3;
        let b = bump(&phi, y, eps, &k).unwrap();
        let da = b.enclosed_area().unwrap() - phi.enclosed_area().unwrap();
        // ε ∫ K(x, y) ⟨n(y), n(x)⟩ dΣ(x) by trapezoid quadrature
        let ny = phi.normal_at(y).unwrap();
        let col = k.column_at(y);
        let w = phi.mesh().arclength_weights();
        let oracle: f64 = (0..phi.len())
            .map(|i| {
                let nx = phi.normal(i).unwrap();
                eps * col[i] * (ny[0] * nx[0] + ny[1] * nx[1]) * w[i] * phi.det_jac(i)
            })
            .sum();
        assert!((da / oracle - 1.0).abs() < 0.02, "{da} vs {oracle}");
    }

    fn params(eps: f64, delta: f64, t_max: f64) -> GrowthParams {
        GrowthParams {
            snapshot_times: vec![0.0, 0.5 * t_max, t_max],
            compensator_samples: 8,
            ..GrowthParams::new(eps, delta, t_max)
        }
    }

    #[test]
    fn run_is_reproducible_and_replayable() {
        let (phi, k) = setup(64, KernelFamily::WrappedGaussian);
        let p = params(0.04, 0.2, 0.2);
        let z = BoundaryPoint { component: 0, s: 0.0 };
        let a = run_growth(&phi, z, &k, &p, 3).unwrap();
        let b = run_growth(&phi, z, &k, &p, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        let r = replay(&a, &k).unwrap();
        assert_eq!(r.values(), a.final_values());
        assert_eq!(a.snapshots[0].values, a.phi0);
        let track = martingale_track(&a);
        assert_eq!(track.sup_norm[0], 0.0);
    }

    #[test]
    fn zero_kernel_moves_only_particle() {
        let (phi, k) = setup(64, KernelFamily::Zero);
        let p = params(0.05, 0.2, 0.3);
        let rec = run_growth(&phi, BoundaryPoint { component: 0, s: 0.0 }, &k, &p, 4).unwrap();
        assert!(!rec.jump_times.is_empty());
        assert_eq!(rec.final_values(), phi.values());
        assert!(rec.jump_locations.iter().any(|y| y.s != 0.0));
    }

    #[test]
    fn jump_count_is_poisson() {
        let (phi, k) = setup(32, KernelFamily::Zero);
        let p = GrowthParams {
            compensator_samples: 0,
            ..params(0.01, 0.1, 0.5)
        };
        let counts: Vec<f64> = (0..40)
            .map(|s| run_growth(&phi, BoundaryPoint { component: 0, s: 0.0 }, &k, &p, s).unwrap().jump_times.len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        // mean of 40 Poisson(50) counts: standard error √(50/40)
        assert!((mean - 50.0).abs() < 3.0 * (50.0f64 / 40.0).sqrt(), "{mean}");
        for c in &counts {
            assert!((c - 50.0).abs() < 5.0 * 50.0f64.sqrt());
        }
    }

    #[test]
    fn single_jump_martingale() {
        let (phi, k) = setup(64, KernelFamily::WrappedGaussian);
        let p = GrowthParams {
            snapshot_times: vec![0.4],
            compensator_samples: 16,
            ..GrowthParams::new(0.2, 0.3, 0.4)
        };
        let z = BoundaryPoint { component: 0, s: 0.0 };
        let rec = (0..200)
            .map(|s| run_growth(&phi, z, &k, &p, s).unwrap())
            .find(|r| r.jump_times.len() == 1)
            .unwrap();
        let y = rec.jump_locations[0];
        let n = phi.normal_at(y).unwrap();
        let col = k.column_at(y);
        let track = martingale_track(&rec);
        let mut sup: f64 = 0.0;
        for i in 0..64 {
            let mut m = [0.2 * col[i] * n[0], 0.2 * col[i] * n[1]];
            for f in &rec.flux {
                let dt = f.t1 - f.t0;
                m[0] -= dt * f.micro[i][0];
                m[1] -= dt * f.micro[i][1];
            }
            sup = sup.max(m[0].hypot(m[1]));
        }
        assert!((track.sup_norm[0] - sup).abs() < 1e-12);
    }

    #[test]
    fn area_grows_at_macroscopic_rate() {
        let (phi, k) = setup(64, KernelFamily::WrappedGaussian);
        let p = GrowthParams {
            compensator_samples: 0,
            ..params(0.01, 0.1, 0.2)
        };
        let z = BoundaryPoint { component: 0, s: 0.0 };
        let gains: Vec<f64> = (0..8)
            .map(|s| {
                let r = run_growth(&phi, z, &k, &p, 100 + s).unwrap();
                let end = InterfaceMap::new(phi.mesh().clone(), r.final_values().to_vec()).unwrap();
                end.enclosed_area().unwrap() - phi.enclosed_area().unwrap()
            })
            .collect();
        let m = crate::stats::mean_se(&gains);
        // unit normal speed on a circle of radius 1 + t: area π((1.2)² − 1)
        let expected = std::f64::consts::PI * (1.2f64.powi(2) - 1.0);
        assert!((m.mean - expected).abs() < 3.0 * m.std_error + 0.02 * expected, "{m:?} vs {expected}");
    }

    #[test]
    fn radius_tracks_macro_circle() {
        let (phi, k) = setup(128, KernelFamily::WrappedGaussian);
        let p = GrowthParams {
            compensator_samples: 0,
            ..GrowthParams::new(0.01, 0.2, 0.5)
        };
        let z = BoundaryPoint { component: 0, s: 0.0 };
        let mut radii = Vec::new();
        for s in 0..8 {
            let r = run_growth(&phi, z, &k, &p, 200 + s).unwrap();
            assert!(r.tau_sol_epsilon.is_none());
            let v = r.final_values();
            radii.push(v.iter().map(|q| q[0].hypot(q[1])).sum::<f64>() / v.len() as f64);
        }
        let m = crate::stats::mean_se(&radii);
        assert!((m.mean - 1.5).abs() < 0.1, "{m:?}");
    }

    #[test]
    fn small_delta_jumps_are_local() {
        let (phi, k) = setup(64, KernelFamily::Zero);
        let z = BoundaryPoint { component: 0, s: 0.0 };
        let median_gap = |delta: f64| {
            let p = GrowthParams {
                compensator_samples: 0,
                ..GrowthParams::new(0.02, delta, 0.4)
            };
            let mut gaps = Vec::new();
            for s in 0..4 {
                let r = run_growth(&phi, z, &k, &p, 300 + s).unwrap();
                let mut prev = z;
                for &y in &r.jump_locations {
                    gaps.push(phi.mesh().arc_offset(prev, y).unwrap().abs());
                    prev = y;
                }
            }
            crate::stats::median(&gaps)
        };
        let (near, far) = (median_gap(0.01), median_gap(0.5));
        assert!(near < far, "{near} vs {far}");
    }
}

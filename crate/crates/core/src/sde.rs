//! Reflecting diffusion with generator Δ_g on the reference domain, its
//! boundary local time, and the trace kernel T^{Φ,δ}_z.
//!
//! In the collar the step is split: the depth coordinate is advanced by an
//! exact reflected Brownian bridge update carrying the local time, the
//! arclength coordinate by Euler–Maruyama. Beyond the collar the metric is
//! Euclidean and steps are exact Gaussians. Time is measured on the Δ_g
//! clock, so the depth coordinate has variance 2 per unit time.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SdeError;
use crate::geometry::{BoundaryMesh, BoundaryPoint, InterfaceMap};
use crate::metric::{ChiProfile, CollarChart, CollarPoint, MetricField, COLLAR_EXTENT};
use crate::rng::CounterRng;
use crate::stats::{mean_se, normal_cdf};
use std::sync::Arc;

/// Collar steps are `dt / COLLAR_SUBSTEPS`.
pub const COLLAR_SUBSTEPS: f64 = 16.0;
/// Level crossings are located to `dt / 2^LEVEL_BISECTIONS`.
pub const LEVEL_BISECTIONS: i32 = 10;
/// Depth, in units of the collar length, above which a path leaves the
/// collar chart.
pub const COLLAR_EXIT: f64 = 1.125;
pub const DEFAULT_STEP_BUDGET: u64 = 100_000_000;
const MAX_BRIDGE_PROPOSALS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeOptions {
    /// Interior step; the collar uses `dt / 16`.
    pub dt: f64,
    pub step_budget: u64,
}

impl Default for SdeOptions {
    fn default() -> Self {
        Self {
            dt: 4e-3,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl SdeOptions {
    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SdeError::Parameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.step_budget == 0 {
            return Err(SdeError::Parameter("step_budget must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one exact reflected step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalStep {
    pub depth: f64,
    pub local_time: f64,
    /// Endpoint of the unreflected path.
    pub free_end: f64,
    /// Minimum of the unreflected path over the step.
    pub bridge_min: f64,
}

#[inline]
fn normal(rng: &mut CounterRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Reflected step of a Brownian motion with constant drift and the given
/// variance, exact in law: the free increment, the minimum of its bridge,
/// and the Skorokhod push.
#[inline]
pub fn vertical_step_with(depth: f64, drift: f64, variance: f64, rng: &mut CounterRng) -> VerticalStep {
    let e = drift + variance.sqrt() * normal(rng);
    let b = depth + e;
    let u = rng.open01();
    let m = 0.5 * (depth + b - (e * e - 2.0 * variance * u.ln()).sqrt());
    let dl = (-m).max(0.0);
    VerticalStep {
        depth: (b + dl).max(0.0),
        local_time: dl,
        free_end: b,
        bridge_min: m,
    }
}

/// Reflected standard Brownian step of duration `dt`.
pub fn vertical_step(depth: f64, dt: f64, rng: &mut CounterRng) -> VerticalStep {
    vertical_step_with(depth, 0.0, dt, rng)
}

/// P(min of the bridge from a to b with the given variance ≤ level).
#[inline]
fn hit_probability(a: f64, b: f64, variance: f64, level: f64) -> f64 {
    let (x, y) = (a - level, b - level);
    if x <= 0.0 || y <= 0.0 {
        1.0
    } else {
        (-2.0 * x * y / variance).exp()
    }
}

/// First time in [0, h] at which a Brownian bridge from a to b (total
/// variance `variance`), known to reach `level`, first does so. Resolved
/// by recursive halving to width `tol`.
fn locate_crossing(mut a: f64, mut b: f64, mut variance: f64, mut h: f64, level: f64, tol: f64, rng: &mut CounterRng) -> f64 {
    let mut t0 = 0.0;
    while h > tol {
        let mut mid = 0.5 * (a + b);
        let mut p1 = 1.0;
        for _ in 0..MAX_BRIDGE_PROPOSALS {
            mid = 0.5 * (a + b) + (0.25 * variance).sqrt() * normal(rng);
            p1 = hit_probability(a, mid, 0.5 * variance, level);
            let p2 = hit_probability(mid, b, 0.5 * variance, level);
            let p = 1.0 - (1.0 - p1) * (1.0 - p2);
            if rng.open01() < p {
                p1 /= p;
                break;
            }
        }
        variance *= 0.5;
        h *= 0.5;
        if rng.open01() < p1 {
            b = mid;
        } else {
            a = mid;
            t0 += h;
        }
    }
    t0 + 0.5 * h
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Collar { c: usize, s: f64, r: f64, hint: usize },
    Interior { x: [f64; 2], depth_lb: f64 },
}

/// Outcome of one [`Walker::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Moved,
    /// The local time reached the requested level at this boundary point.
    LevelHit(BoundaryPoint),
}

/// Stateful simulator of one reflected path.
#[derive(Debug, Clone)]
pub struct Walker<'a> {
    field: &'a MetricField,
    dt: f64,
    dt_collar: f64,
    tol: f64,
    mode: Mode,
    pub clock: f64,
    pub local_time: f64,
    pub steps: u64,
    /// Steps that left the domain between chart checks and were mirrored.
    pub fallbacks: u64,
}

impl<'a> Walker<'a> {
    pub fn at_boundary(field: &'a MetricField, z: BoundaryPoint, dt: f64) -> Self {
        let z = field.mesh().normalize(z);
        Self::with_mode(
            field,
            dt,
            Mode::Collar {
                c: z.component,
                s: z.s,
                r: 0.0,
                hint: 0,
            },
        )
    }

    pub fn at_position(field: &'a MetricField, x: [f64; 2], dt: f64) -> Result<Self, SdeError> {
        let p = field.chart().project(x);
        if p.r < 0.0 {
            return Err(SdeError::Metric(crate::error::MetricError::OutsideDomain(x[0], x[1])));
        }
        let mode = if p.r < field.collar_length() {
            Mode::Collar {
                c: p.component,
                s: p.s,
                r: p.r,
                hint: 0,
            }
        } else {
            Mode::Interior { x, depth_lb: p.r }
        };
        Ok(Self::with_mode(field, dt, mode))
    }

    fn with_mode(field: &'a MetricField, dt: f64, mode: Mode) -> Self {
        Self {
            field,
            dt,
            dt_collar: dt / COLLAR_SUBSTEPS,
            tol: dt / 2f64.powi(LEVEL_BISECTIONS),
            mode,
            clock: 0.0,
            local_time: 0.0,
            steps: 0,
            fallbacks: 0,
        }
    }

    /// Current ambient position.
    pub fn position(&self) -> [f64; 2] {
        match self.mode {
            Mode::Collar { c, s, r, .. } => self.field.chart().to_cartesian(CollarPoint { component: c, s, r }),
            Mode::Interior { x, .. } => x,
        }
    }

    /// Depth in the collar; beyond it a lower bound of at least ℓ.
    pub fn depth(&self) -> f64 {
        match self.mode {
            Mode::Collar { r, .. } => r,
            Mode::Interior { depth_lb, .. } => depth_lb,
        }
    }

    pub fn in_collar(&self) -> bool {
        matches!(self.mode, Mode::Collar { .. })
    }

    /// Advances by at most `max_h`. With `level = Some(δ)` the step stops
    /// at the first time the local time reaches δ.
    pub fn step(&mut self, rng: &mut CounterRng, level: Option<f64>, max_h: f64) -> StepOutcome {
        self.steps += 1;
        let ell = self.field.collar_length();
        match self.mode {
            Mode::Collar { c, s, r, mut hint } => {
                let h = self.dt_collar.min(max_h);
                let co = self.field.coefficients(c, s, r, &mut hint);
                let zs = normal(rng);
                let v = vertical_step_with(r, co.drift_r * h, 2.0 * h, rng);
                let spline = self.field.mesh().component(c).spline();
                if let Some(delta) = level {
                    let remaining = delta - self.local_time;
                    if v.local_time >= remaining {
                        let tau = locate_crossing(r, v.free_end, 2.0 * h, h, -remaining, self.tol, rng);
                        let s_hit = s + co.drift_s * tau + (2.0 * tau / co.h).sqrt() * zs;
                        self.clock += tau;
                        self.local_time = delta;
                        let s_hit = spline.wrap(s_hit);
                        self.mode = Mode::Collar { c, s: s_hit, r: 0.0, hint };
                        return StepOutcome::LevelHit(BoundaryPoint { component: c, s: s_hit });
                    }
                }
                let s_new = spline.wrap(s + co.drift_s * h + (2.0 * h / co.h).sqrt() * zs);
                self.clock += h;
                self.local_time += v.local_time;
                self.mode = if v.depth > COLLAR_EXIT * ell {
                    let p = CollarPoint {
                        component: c,
                        s: s_new,
                        r: v.depth,
                    };
                    Mode::Interior {
                        x: self.field.chart().to_cartesian(p),
                        depth_lb: v.depth,
                    }
                } else {
                    Mode::Collar {
                        c,
                        s: s_new,
                        r: v.depth,
                        hint,
                    }
                };
                StepOutcome::Moved
            }
            Mode::Interior { x, depth_lb } => {
                let gap = (depth_lb - ell) / 4.0;
                let h = (0.5 * gap * gap).clamp(self.dt_collar, self.dt).min(max_h);
                let sd = (2.0 * h).sqrt();
                let (z1, z2) = (normal(rng), normal(rng));
                let x = [x[0] + sd * z1, x[1] + sd * z2];
                let depth_lb = depth_lb - sd * z1.hypot(z2);
                self.clock += h;
                self.mode = if depth_lb < ell {
                    let mut p = self.field.chart().project(x);
                    let mut x = x;
                    if p.r < 0.0 {
                        self.fallbacks += 1;
                        p.r = -p.r;
                        x = self.field.chart().to_cartesian(p);
                    }
                    if p.r < ell {
                        Mode::Collar {
                            c: p.component,
                            s: p.s,
                            r: p.r,
                            hint: 0,
                        }
                    } else {
                        Mode::Interior { x, depth_lb: p.r }
                    }
                } else {
                    Mode::Interior { x, depth_lb }
                };
                StepOutcome::Moved
            }
        }
    }
}

/// Recorded path of a reflected diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlePath {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    /// Exact depth in the collar; beyond it a lower bound of at least ℓ.
    pub depths: Vec<f64>,
    /// Cumulative boundary local time.
    pub local_time: Vec<f64>,
    /// Variance rate of the depth coordinate.
    pub diffusivity: f64,
}

impl ParticlePath {
    fn new(diffusivity: f64) -> Self {
        Self {
            times: Vec::new(),
            positions: Vec::new(),
            depths: Vec::new(),
            local_time: Vec::new(),
            diffusivity,
        }
    }

    fn push(&mut self, t: f64, x: [f64; 2], depth: f64, l: f64) {
        self.times.push(t);
        self.positions.push(x);
        self.depths.push(depth);
        self.local_time.push(l);
    }

    pub fn clock(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_local_time(&self) -> f64 {
        self.local_time.last().copied().unwrap_or(0.0)
    }
}

/// One diffusion step of duration `dt` from `x`, sub-stepped by the step
/// policy. Returns the new position and the local time accrued.
pub fn diffusion_step(
    field: &MetricField,
    x: [f64; 2],
    dt: f64,
    opts: &SdeOptions,
    rng: &mut CounterRng,
) -> Result<([f64; 2], f64), SdeError> {
    let path = simulate_path(field, x, dt, opts, rng, false)?;
    Ok((path.positions[path.positions.len() - 1], path.final_local_time()))
}

/// Simulates the reflected diffusion from `x0` over `[0, horizon]`.
/// With `record = false` only the endpoints are kept.
pub fn simulate_path(
    field: &MetricField,
    x0: [f64; 2],
    horizon: f64,
    opts: &SdeOptions,
    rng: &mut CounterRng,
    record: bool,
) -> Result<ParticlePath, SdeError> {
    opts.validate()?;
    let mut w = Walker::at_position(field, x0, opts.dt)?;
    let mut path = ParticlePath::new(2.0);
    path.push(0.0, x0, w.depth(), 0.0);
    while w.clock < horizon {
        if w.steps >= opts.step_budget {
            return Err(SdeError::BudgetExceeded {
                budget: opts.step_budget,
                elapsed: w.clock,
                local_time: w.local_time,
                target: f64::INFINITY,
            });
        }
        w.step(rng, None, horizon - w.clock);
        if horizon - w.clock < 1e-14 * horizon.max(1.0) {
            w.clock = horizon;
        }
        if record {
            path.push(w.clock, w.position(), w.depth(), w.local_time);
        }
    }
    if !record {
        path.push(w.clock, w.position(), w.depth(), w.local_time);
    }
    Ok(path)
}

/// Reflected standard Brownian motion on [0, ∞) from `depth0`, with step
/// size refined to `(resolve / 8)²` within `2·resolve` of the boundary.
pub fn reflected_bm_path(depth0: f64, horizon: f64, dt_max: f64, resolve: f64, rng: &mut CounterRng) -> ParticlePath {
    let mut path = ParticlePath::new(1.0);
    let (mut t, mut r, mut l) = (0.0, depth0.max(0.0), 0.0);
    path.push(t, [0.0, r], r, l);
    let h_min = (resolve / 8.0).powi(2).min(dt_max);
    while t < horizon {
        let gap = (r - 2.0 * resolve).max(0.0) / 4.0;
        let h = (gap * gap).clamp(h_min, dt_max).min(horizon - t);
        let v = vertical_step(r, h, rng);
        r = v.depth;
        l += v.local_time;
        t += h;
        path.push(t, [0.0, r], r, l);
    }
    path
}

/// Υ_β(d) = (35 / 32β)·(1 − (d/β)²)³ on [0, β), which integrates to ½.
#[inline]
pub fn depth_mollifier(d: f64, beta: f64) -> f64 {
    if d < 0.0 || d >= beta {
        0.0
    } else {
        let u = d / beta;
        35.0 / (32.0 * beta) * (1.0 - u * u).powi(3)
    }
}

/// D·∫ Υ_β(depth) dt along the path by the trapezoid rule, an estimator of
/// the boundary local time (D the depth variance rate).
pub fn smoothed_local_time(path: &ParticlePath, beta0: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..path.times.len() {
        let dt = path.times[k] - path.times[k - 1];
        acc += 0.5 * dt * (depth_mollifier(path.depths[k - 1], beta0) + depth_mollifier(path.depths[k], beta0));
    }
    path.diffusivity * acc
}

/// One draw from T^{Φ,δ}_z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub endpoint: BoundaryPoint,
    pub elapsed_time: f64,
    pub steps_used: u64,
    pub fallbacks: u64,
}

/// Runs the diffusion from z until its local time reaches δ.
pub fn sample_trace(
    field: &MetricField,
    z: BoundaryPoint,
    delta: f64,
    opts: &SdeOptions,
    rng: &mut CounterRng,
) -> Result<TraceSample, SdeError> {
    opts.validate()?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(SdeError::Parameter(format!("delta must be nonnegative, got {delta}")));
    }
    let z = field.mesh().normalize(z);
    if delta == 0.0 {
        return Ok(TraceSample {
            endpoint: z,
            elapsed_time: 0.0,
            steps_used: 0,
            fallbacks: 0,
        });
    }
    let mut w = Walker::at_boundary(field, z, opts.dt);
    loop {
        if w.steps >= opts.step_budget {
            return Err(SdeError::BudgetExceeded {
                budget: opts.step_budget,
                elapsed: w.clock,
                local_time: w.local_time,
                target: delta,
            });
        }
        if let StepOutcome::LevelHit(y) = w.step(rng, Some(delta), f64::INFINITY) {
            return Ok(TraceSample {
                endpoint: y,
                elapsed_time: w.clock,
                steps_used: w.steps,
                fallbacks: w.fallbacks,
            });
        }
    }
}

/// `n` independent trace draws; draw `i` uses the stream keyed by
/// `(seed, stream, i)`.
pub fn sample_traces(
    field: &MetricField,
    z: BoundaryPoint,
    delta: f64,
    n: usize,
    opts: &SdeOptions,
    seed: u64,
    stream: u64,
) -> Result<Vec<TraceSample>, SdeError> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::keyed(seed, &[stream, i as u64]);
            sample_trace(field, z, delta, opts, &mut rng)
        })
        .collect()
}

/// Euclidean disk field of radius R with collar length R/2.
pub fn euclidean_disk(radius: f64, nodes: usize) -> Result<MetricField, SdeError> {
    let mesh = Arc::new(BoundaryMesh::circle([0.0, 0.0], radius, nodes)?);
    let chart = CollarChart::new(mesh.clone(), 0.5 * radius)?;
    Ok(MetricField::new(InterfaceMap::identity(mesh), chart, ChiProfile::Quintic)?)
}

/// Monte Carlo E[τ^ξ] on the Euclidean disk against (R/2)·ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletReport {
    pub radius: f64,
    pub xi: f64,
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub expected: f64,
    pub rel_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

pub fn dirichlet_local_time_check(
    radius: f64,
    xi: f64,
    n_paths: usize,
    opts: &SdeOptions,
    seed: u64,
) -> Result<DirichletReport, SdeError> {
    let field = euclidean_disk(radius, 128)?;
    let z = BoundaryPoint { component: 0, s: 0.0 };
    let draws = sample_traces(&field, z, xi, n_paths, opts, seed, 0xd1)?;
    let times: Vec<f64> = draws.iter().map(|d| d.elapsed_time).collect();
    let m = mean_se(&times);
    let expected = 0.5 * radius * xi;
    let z_score = if m.std_error > 0.0 {
        (m.mean - expected) / m.std_error
    } else if m.mean == expected {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(DirichletReport {
        radius,
        xi,
        n: n_paths,
        mean: m.mean,
        std_error: m.std_error,
        expected,
        rel_error: if expected > 0.0 { (m.mean - expected).abs() / expected } else { m.mean.abs() },
        z_score,
        pass: z_score.abs() <= 3.0,
    })
}

/// Empirical P(τ^δ ≤ u) for reflected standard Brownian motion from 0
/// against 2·(1 − Φ(δ/√u)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeLawReport {
    pub delta: f64,
    pub horizon: f64,
    pub n: usize,
    pub steps_per_path: usize,
    pub empirical: f64,
    pub expected: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

pub fn local_time_law_check(delta: f64, horizon: f64, n_paths: usize, steps_per_path: usize, seed: u64) -> LocalTimeLawReport {
    let h = horizon / steps_per_path as f64;
    let hits: usize = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = CounterRng::keyed(seed, &[0x17, i as u64]);
            let (mut r, mut l) = (0.0, 0.0);
            for _ in 0..steps_per_path {
                let v = vertical_step(r, h, &mut rng);
                r = v.depth;
                l += v.local_time;
                if l >= delta {
                    return 1;
                }
            }
            0
        })
        .sum();
    let p = hits as f64 / n_paths as f64;
    let expected = 2.0 * (1.0 - normal_cdf(delta / horizon.sqrt()));
    let std_error = (expected * (1.0 - expected) / n_paths as f64).sqrt();
    let z_score = (p - expected) / std_error;
    LocalTimeLawReport {
        delta,
        horizon,
        n: n_paths,
        steps_per_path,
        empirical: p,
        expected,
        std_error,
        z_score,
        pass: z_score.abs() <= 3.0,
    }
}

/// Fraction of arclength from `z` to `y` on a shared component, in
/// (−½, ½].
pub fn signed_displacement(mesh: &BoundaryMesh, z: BoundaryPoint, y: BoundaryPoint) -> f64 {
    let len = mesh.component(z.component).length();
    let d = (y.s - z.s).rem_euclid(len) / len;
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// Collar extent in units of ℓ over which the chart is valid.
pub fn collar_extent() -> f64 {
    COLLAR_EXTENT
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_uniform, median};

    #[test]
    fn deep_step_never_touches() {
        let mut rng = CounterRng::new(1);
        for _ in 0..100_000 {
            let v = vertical_step(5.0, 1e-4, &mut rng);
            assert_eq!(v.local_time, 0.0);
        }
    }

    #[test]
    fn step_from_zero_local_time_mean() {
        let mut rng = CounterRng::new(2);
        let dt = 1e-3;
        let n = 200_000;
        let mean = (0..n).map(|_| vertical_step(0.0, dt, &mut rng).local_time).sum::<f64>() / n as f64;
        let exact = (2.0 * dt / std::f64::consts::PI).sqrt();
        assert!(mean <= 2.0 * dt.sqrt());
        assert!((mean - exact).abs() < 0.01 * exact, "{mean} vs {exact}");
    }

    #[test]
    fn depth_stays_nonnegative_and_local_time_monotone() {
        let mut rng = CounterRng::new(3);
        let (mut r, mut l) = (0.0, 0.0);
        for _ in 0..1_000_000 {
            let v = vertical_step(r, 1e-3, &mut rng);
            assert!(v.depth >= 0.0 && v.local_time >= 0.0);
            if v.bridge_min > 0.0 {
                assert_eq!(v.local_time, 0.0);
            }
            r = v.depth;
            l += v.local_time;
        }
        assert!(l > 0.0);
    }

    #[test]
    fn local_time_law_small() {
        let rep = local_time_law_check(0.5, 1.0, 20_000, 50, 4);
        assert!((rep.expected - 0.617_075).abs() < 1e-5);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn crossing_time_matches_first_passage_law() {
        // from depth 0, local time of standard BM reaches δ when the free
        // path first hits −δ: P(T ≤ t) = 2(1 − Φ(δ/√t)) on a single step
        let mut rng = CounterRng::new(5);
        let (delta, h) = (0.3, 1.0);
        let mut times = Vec::new();
        while times.len() < 20_000 {
            let v = vertical_step(0.0, h, &mut rng);
            if v.local_time >= delta {
                times.push(locate_crossing(0.0, v.free_end, h, h, -delta, 1e-4, &mut rng));
            }
        }
        let p_total = 2.0 * (1.0 - normal_cdf(delta));
        let cdf = |t: f64| 2.0 * (1.0 - normal_cdf(delta / t.max(1e-300).sqrt())) / p_total;
        let ks = crate::stats::ks_statistic(&times, cdf);
        assert!(ks < 0.015, "{ks}");
    }

    #[test]
    fn trace_is_deterministic_and_on_boundary() {
        let field = euclidean_disk(1.0, 64).unwrap();
        let opts = SdeOptions { dt: 1.6e-2, ..Default::default() };
        let z = BoundaryPoint { component: 0, s: 0.0 };
        let a = sample_traces(&field, z, 0.5, 64, &opts, 9, 0).unwrap();
        let b = sample_traces(&field, z, 0.5, 64, &opts, 9, 0).unwrap();
        assert_eq!(a, b);
        let len = field.mesh().total_length();
        assert!(a.iter().all(|t| t.endpoint.s >= 0.0 && t.endpoint.s < len && t.elapsed_time > 0.0));
    }

    #[test]
    fn trace_concentrates_for_small_delta() {
        let field = euclidean_disk(1.0, 64).unwrap();
        let opts = SdeOptions { dt: 4e-3, ..Default::default() };
        let z = BoundaryPoint { component: 0, s: 1.0 };
        let mut med = Vec::new();
        for delta in [0.5, 0.1, 0.01] {
            let d = sample_traces(&field, z, delta, 2000, &opts, 11, 0).unwrap();
            let disp: Vec<f64> = d
                .iter()
                .map(|t| signed_displacement(field.mesh(), z, t.endpoint).abs())
                .collect();
            med.push(median(&disp));
            // the displacement law is Cauchy-like, so symmetry is tested by
            // the sign of the displacement rather than its skewness
            let pos = d
                .iter()
                .filter(|t| signed_displacement(field.mesh(), z, t.endpoint) > 0.0)
                .count() as f64
                / d.len() as f64;
            let se = 0.5 / (d.len() as f64).sqrt();
            assert!((pos - 0.5).abs() < 3.0 * se, "P(disp > 0) = {pos} at δ = {delta}");
        }
        assert!(med[0] > med[1] && med[1] > med[2], "{med:?}");
    }

    #[test]
    fn trace_mixes_for_large_delta() {
        let field = euclidean_disk(1.0, 64).unwrap();
        let opts = SdeOptions { dt: 1.6e-2, ..Default::default() };
        let z = BoundaryPoint { component: 0, s: 0.0 };
        let d = sample_traces(&field, z, 4.0, 4000, &opts, 12, 0).unwrap();
        let len = field.mesh().total_length();
        let u: Vec<f64> = d.iter().map(|t| t.endpoint.s / len).collect();
        assert!(ks_uniform(&u) < 0.03);
    }

    #[test]
    fn dirichlet_small() {
        let opts = SdeOptions { dt: 1.6e-2, ..Default::default() };
        let rep = dirichlet_local_time_check(1.0, 1.0, 2000, &opts, 13).unwrap();
        assert!(rep.pass, "{rep:?}");
        let zero = dirichlet_local_time_check(1.0, 0.0, 10, &opts, 13).unwrap();
        assert_eq!(zero.mean, 0.0);
    }

    #[test]
    fn euclidean_increments_are_gaussian() {
        let field = euclidean_disk(1.0, 64).unwrap();
        let opts = SdeOptions { dt: 1e-4, ..Default::default() };
        let mut rng = CounterRng::new(14);
        let n = 20_000;
        let mut sx = 0.0;
        let mut sxx = 0.0;
        for _ in 0..n {
            let (x, l) = diffusion_step(&field, [0.0, 0.0], 1e-4, &opts, &mut rng).unwrap();
            assert_eq!(l, 0.0);
            sx += x[0];
            sxx += x[0] * x[0];
        }
        let var = sxx / n as f64 - (sx / n as f64).powi(2);
        assert!((var / 2e-4 - 1.0).abs() < 0.04, "{var}");
    }

    #[test]
    fn doubled_map_slows_tangential_motion() {
        let mesh = Arc::new(BoundaryMesh::circle([0.0, 0.0], 1.0, 64).unwrap());
        let chart = CollarChart::new(mesh.clone(), 0.5).unwrap();
        let phi = InterfaceMap::identity(mesh).scaled(2.0).unwrap();
        let field = MetricField::new(phi, chart, ChiProfile::Quintic).unwrap();
        let mut rng = CounterRng::new(15);
        let h = 1e-3;
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut w = Walker::at_boundary(&field, BoundaryPoint { component: 0, s: 1.0 }, 16.0 * h);
            w.step(&mut rng, None, h);
            let Mode::Collar { s, .. } = w.mode else { panic!() };
            acc += (s - 1.0).powi(2);
        }
        // var(ds) = 2h / H with H = 4 at the boundary
        let ratio = acc / n as f64 / h;
        assert!((ratio - 0.5).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn smoothed_local_time_matches_exact() {
        let n = 2000;
        let (mut sm, mut ex) = (0.0, 0.0);
        for i in 0..n {
            let mut rng = CounterRng::keyed(16, &[i]);
            let p = reflected_bm_path(0.0, 1.0, 1e-2, 0.01, &mut rng);
            sm += smoothed_local_time(&p, 0.01);
            ex += p.final_local_time();
        }
        let exact = (2.0 / std::f64::consts::PI).sqrt();
        assert!((sm / n as f64 / exact - 1.0).abs() < 0.05);
        assert!((sm - ex).abs() / ex < 0.05);
        let far = reflected_bm_path(5.0, 0.01, 1e-3, 0.01, &mut CounterRng::new(1));
        assert_eq!(smoothed_local_time(&far, 0.01), 0.0);
    }

    #[test]
    fn mollifier_mass_is_half() {
        let beta = 0.3;
        let n = 100_000;
        let h = beta / n as f64;
        let m: f64 = (0..n).map(|k| depth_mollifier((k as f64 + 0.5) * h, beta) * h).sum();
        assert!((m - 0.5).abs() < 1e-9);
    }
}

//! Micro-versus-macro comparison experiments: flux replacement, the
//! convergence trend of Φ^ε towards Φ^hom, martingale scaling and
//! χ-independence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

use crate::error::{FlowError, GeometryError, GrowthError};
use crate::flow::{integrate_until_blowup, BlowupOptions, FlowTrajectory};
use crate::geometry::{BoundaryMesh, BoundaryPoint, InterfaceMap};
use crate::growth::{integrate_flux, martingale_track, DeltaSchedule, GrowthParams, GrowthRunRecord, GrowthRunner};
use crate::kernels::Kernel;
use crate::metric::{ChiProfile, CollarChart, MetricField};
use crate::sde::{sample_traces, SdeOptions};
use crate::stats::{ks_statistic, ks_uniform, quantile, Summary};

/// Reference geometry with its initial particle position.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub mesh: Arc<BoundaryMesh>,
    pub z0: BoundaryPoint,
}

impl Scenario {
    pub fn circle(radius: f64, nodes: usize) -> Result<Self, GeometryError> {
        Ok(Self::custom("circle", BoundaryMesh::circle([0.0, 0.0], radius, nodes)?))
    }

    pub fn annulus(r_inner: f64, r_outer: f64, n_inner: usize, n_outer: usize) -> Result<Self, GeometryError> {
        Ok(Self::custom("annulus", BoundaryMesh::annulus(r_inner, r_outer, n_inner, n_outer)?))
    }

    pub fn custom(id: &str, mesh: BoundaryMesh) -> Self {
        Self {
            id: id.to_string(),
            mesh: Arc::new(mesh),
            z0: BoundaryPoint { component: 0, s: 0.0 },
        }
    }

    pub fn phi0(&self) -> InterfaceMap {
        InterfaceMap::identity(self.mesh.clone())
    }
}

/// Sup over snapshot times and nodes of |F^ε − F^{ε,eff}|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxGap {
    pub sup_gap: f64,
    /// Monte Carlo standard error of F^ε at the maximizing time and node.
    pub std_error: f64,
    pub samples_per_interval: usize,
}

pub fn flux_compare(record: &GrowthRunRecord) -> FluxGap {
    let nodes = record.phi0.len();
    let (mut gap, mut se) = (0.0, 0.0);
    for s in &record.snapshots {
        let f = integrate_flux(&record.flux, nodes, s.t);
        for i in 0..nodes {
            let d = (f.micro[i][0] - f.effective[i][0]).hypot(f.micro[i][1] - f.effective[i][1]);
            if d >= gap {
                gap = d;
                se = (f.micro_var[i][0] + f.micro_var[i][1]).sqrt();
            }
        }
    }
    FluxGap {
        sup_gap: gap,
        std_error: se,
        samples_per_interval: record.params.compensator_samples,
    }
}

/// Φ^hom at time t by linear interpolation between stored flow states.
pub fn trajectory_at(traj: &FlowTrajectory, t: f64) -> Vec<[f64; 2]> {
    let k = traj.times.partition_point(|&s| s <= t);
    if k == 0 {
        return traj.states[0].values().to_vec();
    }
    if k == traj.times.len() {
        return traj.last().values().to_vec();
    }
    let (t0, t1) = (traj.times[k - 1], traj.times[k]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    let (a, b) = (traj.states[k - 1].values(), traj.states[k].values());
    a.iter()
        .zip(b)
        .map(|(a, b)| [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
        .collect()
}

/// Per-seed outcome of one growth run against the macro flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub jumps: usize,
    pub exploded: Option<f64>,
    /// Sup over snapshots and nodes of |Φ^ε − Φ^hom|.
    pub c0_gap: f64,
    /// Same with first arclength derivatives included.
    pub c1_gap: f64,
    pub flux_gap: FluxGap,
    pub martingale_sup: f64,
    pub martingale_se: f64,
    pub final_values: Vec<[f64; 2]>,
    pub trace_fallbacks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub epsilon: f64,
    pub delta: f64,
    pub c0_gap: Summary,
    pub c1_gap: Summary,
    pub flux_gap: Summary,
    pub martingale_sup: Summary,
    pub exploded: usize,
    pub seeds: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub epsilon_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub criteria: Vec<CriterionResult>,
    pub runtime_seconds: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid experiment: {0}")]
    Parameter(String),
}

/// Settings shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    /// Template for every growth run; epsilon and delta are overridden per
    /// cell.
    pub growth: GrowthParams,
    pub delta_schedule: DeltaSchedule,
    pub flow_dt: f64,
}

fn macro_reference(scenario: &Scenario, kernel: &Kernel, setup: &ExperimentSetup) -> Result<FlowTrajectory, LabError> {
    let opts = BlowupOptions {
        dt: setup.flow_dt,
        t_max: setup.growth.t_max,
        jac_floor: setup.growth.jac_floor,
        clearance_floor: setup.growth.clearance_floor,
        store_every: 1,
    };
    Ok(integrate_until_blowup(&scenario.phi0(), kernel, &opts)?)
}

fn seed_result(record: &GrowthRunRecord, kernel: &Kernel, reference: &FlowTrajectory) -> Result<SeedResult, LabError> {
    let mesh = kernel.mesh().clone();
    let (mut c0, mut c1) = (0.0f64, 0.0f64);
    for s in &record.snapshots {
        let hom = InterfaceMap::new(mesh.clone(), trajectory_at(reference, s.t))?;
        let mic = InterfaceMap::new(mesh.clone(), s.values.clone())?;
        c0 = c0.max(mic.c_distance(&hom, 0));
        c1 = c1.max(mic.c_distance(&hom, 1));
    }
    let track = martingale_track(record);
    let k = track
        .sup_norm
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > track.sup_norm[b] { i } else { b });
    Ok(SeedResult {
        seed: record.seed,
        jumps: record.jump_times.len(),
        exploded: record.tau_sol_epsilon,
        c0_gap: c0,
        c1_gap: c1,
        flux_gap: flux_compare(record),
        martingale_sup: track.sup(),
        martingale_se: track.std_error.get(k).copied().unwrap_or(0.0),
        final_values: record.final_values().to_vec(),
        trace_fallbacks: record.trace_fallbacks,
    })
}

/// Runs one (ε, χ) cell over the seed list.
pub fn run_cell(
    scenario: &Scenario,
    kernel: &Kernel,
    setup: &ExperimentSetup,
    epsilon: f64,
    chi: &ChiProfile,
    seeds: &[u64],
    reference: &FlowTrajectory,
) -> Result<CellReport, LabError> {
    let delta = setup.delta_schedule.delta(epsilon);
    let params = GrowthParams {
        epsilon,
        delta,
        chi: chi.clone(),
        ..setup.growth.clone()
    };
    let runner = GrowthRunner::new(kernel, params)?;
    let phi0 = scenario.phi0();
    let seeds_out: Vec<SeedResult> = seeds
        .par_iter()
        .map(|&s| {
            let rec = runner.run(&phi0, scenario.z0, s)?;
            seed_result(&rec, kernel, reference)
        })
        .collect::<Result<_, LabError>>()?;
    let col = |f: &dyn Fn(&SeedResult) -> f64| Summary::of(&seeds_out.iter().map(f).collect::<Vec<_>>());
    Ok(CellReport {
        epsilon,
        delta,
        c0_gap: col(&|r| r.c0_gap),
        c1_gap: col(&|r| r.c1_gap),
        flux_gap: col(&|r| r.flux_gap.sup_gap),
        martingale_sup: col(&|r| r.martingale_sup),
        exploded: seeds_out.iter().filter(|r| r.exploded.is_some()).count(),
        seeds: seeds_out,
    })
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Martingale scaling: C = max over seeds of sup|M|/ε^{1/3} on the first
/// (largest) ε; each smaller ε passes when at least 90% of seeds satisfy
/// sup|M| ≤ C·ε^{1/3}.
pub fn martingale_criterion(cells: &[CellReport]) -> CriterionResult {
    let Some(first) = cells.first() else {
        return CriterionResult {
            name: "martingale_scaling".into(),
            pass: false,
            detail: "empty grid".into(),
        };
    };
    let c = first
        .seeds
        .iter()
        .map(|r| r.martingale_sup / first.epsilon.powf(1.0 / 3.0))
        .fold(0.0, f64::max);
    let mut pass = cells.len() > 1;
    let mut parts = vec![format!("C = {c:.4} at eps = {}", first.epsilon)];
    for cell in &cells[1..] {
        let bound = c * cell.epsilon.powf(1.0 / 3.0);
        let ok = cell.seeds.iter().filter(|r| r.martingale_sup <= bound).count();
        let frac = ok as f64 / cell.seeds.len() as f64;
        pass &= frac >= 0.9;
        parts.push(format!("eps = {}: {ok}/{} seeds within {bound:.4}", cell.epsilon, cell.seeds.len()));
    }
    CriterionResult {
        name: "martingale_scaling".into(),
        pass,
        detail: parts.join("; "),
    }
}

/// Homogenization trend: median flux gap and median C⁰ gap strictly
/// decreasing along the ε grid.
pub fn trend_criterion(cells: &[CellReport]) -> CriterionResult {
    let flux: Vec<f64> = cells.iter().map(|c| c.flux_gap.median).collect();
    let c0: Vec<f64> = cells.iter().map(|c| c.c0_gap.median).collect();
    CriterionResult {
        name: "homogenization_trend".into(),
        pass: cells.len() > 1 && strictly_decreasing(&flux) && strictly_decreasing(&c0),
        detail: format!("median flux gap {flux:?}; median C0 gap {c0:?}"),
    }
}

/// Micro runs over an ε grid compared with the macro flow.
pub fn convergence_experiment(
    scenario: &Scenario,
    kernel: &Kernel,
    setup: &ExperimentSetup,
    epsilon_grid: &[f64],
    seeds: &[u64],
) -> Result<ExperimentReport, LabError> {
    if epsilon_grid.is_empty() || seeds.is_empty() {
        return Err(LabError::Parameter("need a nonempty epsilon grid and seed list".into()));
    }
    let start = Instant::now();
    let reference = macro_reference(scenario, kernel, setup)?;
    let cells = epsilon_grid
        .iter()
        .map(|&e| run_cell(scenario, kernel, setup, e, &setup.growth.chi, seeds, &reference))
        .collect::<Result<Vec<_>, _>>()?;
    let criteria = vec![martingale_criterion(&cells), trend_criterion(&cells)];
    Ok(ExperimentReport {
        scenario: scenario.id.clone(),
        epsilon_grid: epsilon_grid.to_vec(),
        seeds: seeds.to_vec(),
        cells,
        criteria,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Final-interface medians per profile against the pooled cross-seed IQR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiReport {
    pub scenario: String,
    pub epsilon: f64,
    pub profiles: Vec<ChiProfile>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    /// max over nodes and coordinates of |median_a − median_b| / IQR.
    pub max_ratio: f64,
    pub max_median_gap: f64,
    pub min_iqr: f64,
    pub criterion: CriterionResult,
    pub runtime_seconds: f64,
}

pub fn chi_independence_check(
    scenario: &Scenario,
    kernel: &Kernel,
    setup: &ExperimentSetup,
    profiles: &[ChiProfile],
    epsilon: f64,
    seeds: &[u64],
) -> Result<ChiReport, LabError> {
    if profiles.len() < 2 {
        return Err(LabError::Parameter("need at least two chi profiles".into()));
    }
    let start = Instant::now();
    let reference = macro_reference(scenario, kernel, setup)?;
    let cells = profiles
        .iter()
        .map(|p| run_cell(scenario, kernel, setup, epsilon, p, seeds, &reference))
        .collect::<Result<Vec<_>, _>>()?;
    let nodes = scenario.mesh.len();
    let (mut ratio, mut gap_max, mut iqr_min) = (0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..nodes {
        for c in 0..2 {
            let per: Vec<Vec<f64>> = cells
                .iter()
                .map(|cell| cell.seeds.iter().map(|r| r.final_values[i][c]).collect())
                .collect();
            let pooled: Vec<f64> = per.iter().flatten().copied().collect();
            let spread = quantile(&pooled, 0.75) - quantile(&pooled, 0.25);
            let meds: Vec<f64> = per.iter().map(|v| quantile(v, 0.5)).collect();
            let gap = meds.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - meds.iter().copied().fold(f64::INFINITY, f64::min);
            gap_max = gap_max.max(gap);
            iqr_min = iqr_min.min(spread);
            ratio = ratio.max(if spread > 0.0 {
                gap / spread
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            });
        }
    }
    Ok(ChiReport {
        scenario: scenario.id.clone(),
        epsilon,
        profiles: profiles.to_vec(),
        seeds: seeds.to_vec(),
        cells,
        max_ratio: ratio,
        max_median_gap: gap_max,
        min_iqr: iqr_min,
        criterion: CriterionResult {
            name: "chi_independence".into(),
            pass: ratio < 1.0,
            detail: format!("max |median gap| / pooled IQR = {ratio:.4}"),
        },
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Max over nodes of | |Φ(x) − c| − r |.
pub fn circle_deviation(values: &[[f64; 2]], center: [f64; 2], radius: f64) -> f64 {
    values
        .iter()
        .map(|v| ((v[0] - center[0]).hypot(v[1] - center[1]) - radius).abs())
        .fold(0.0, f64::max)
}

/// CDF of the normalized surface measure T^Φ in the global reference
/// arclength fraction (components concatenated in order), by midpoint
/// quadrature on `m` cells per component.
pub fn surface_cdf(phi: &InterfaceMap, m: usize) -> impl Fn(f64) -> f64 {
    let mesh = phi.mesh();
    let mut dens = Vec::with_capacity(m * mesh.components().len());
    for (c, comp) in mesh.components().iter().enumerate() {
        let h = comp.length() / m as f64;
        for k in 0..m {
            let p = BoundaryPoint { component: c, s: (k as f64 + 0.5) * h };
            dens.push(phi.det_jac_at(p) * h);
        }
    }
    let total: f64 = dens.iter().sum();
    let mut cum = vec![0.0; dens.len() + 1];
    for (k, d) in dens.iter().enumerate() {
        cum[k + 1] = cum[k] + d / total;
    }
    let starts: Vec<f64> = mesh
        .components()
        .iter()
        .scan(0.0, |acc, c| {
            let s = *acc;
            *acc += c.length();
            Some(s)
        })
        .collect();
    let lengths: Vec<f64> = mesh.components().iter().map(|c| c.length()).collect();
    let full = mesh.total_length();
    move |x: f64| {
        let g = (x * full).clamp(0.0, full);
        let c = starts.partition_point(|&s| s <= g).saturating_sub(1);
        let p = ((g - starts[c]) / lengths[c] * m as f64).clamp(0.0, m as f64 - 1e-9);
        let k = c * m + p as usize;
        cum[k] + (p - p.floor()) * (cum[k + 1] - cum[k])
    }
}

/// Global reference arclength fraction of a boundary point.
pub fn arclength_fraction(mesh: &BoundaryMesh, p: BoundaryPoint) -> f64 {
    let before: f64 = mesh.components()[..p.component].iter().map(|c| c.length()).sum();
    (before + mesh.normalize(p).s) / mesh.total_length()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInvarianceReport {
    pub delta: f64,
    pub n: usize,
    /// KS distance of the endpoint law to T^Φ.
    pub ks_surface: f64,
    /// KS distance to the uniform reference measure, for contrast.
    pub ks_uniform: f64,
    pub mean_elapsed_time: f64,
    pub fallbacks: u64,
    pub criterion: CriterionResult,
    pub runtime_seconds: f64,
}

/// Endpoint law of the δ-trace from `z` against the surface measure of Φ.
#[allow(clippy::too_many_arguments)]
pub fn trace_invariance_check(
    phi: &InterfaceMap,
    z: BoundaryPoint,
    delta: f64,
    n: usize,
    collar_length: f64,
    chi: &ChiProfile,
    opts: &SdeOptions,
    seed: u64,
    ks_tol: f64,
) -> Result<(TraceInvarianceReport, Vec<crate::sde::TraceSample>), LabError> {
    let start = Instant::now();
    let chart = CollarChart::new(phi.mesh().clone(), collar_length).map_err(GrowthError::from)?;
    let field = MetricField::new(phi.clone(), chart, chi.clone()).map_err(GrowthError::from)?;
    let draws = sample_traces(&field, z, delta, n, opts, seed, 0x7a).map_err(GrowthError::from)?;
    let u: Vec<f64> = draws.iter().map(|d| arclength_fraction(phi.mesh(), d.endpoint)).collect();
    let ks = ks_statistic(&u, surface_cdf(phi, 4096));
    let report = TraceInvarianceReport {
        delta,
        n,
        ks_surface: ks,
        ks_uniform: ks_uniform(&u),
        mean_elapsed_time: draws.iter().map(|d| d.elapsed_time).sum::<f64>() / n.max(1) as f64,
        fallbacks: draws.iter().map(|d| d.fallbacks).sum(),
        criterion: CriterionResult {
            name: "trace_invariance".into(),
            pass: ks < ks_tol,
            detail: format!("KS to surface measure {ks:.4} (tolerance {ks_tol})"),
        },
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, draws))
}

//! Subcommand dispatch: builds the scenario from a validated config, runs
//! the module, and writes the manifest, summaries and CSV tables.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use lgrowth_core::flow::{circle_fit, integrate_until_blowup, picard_solve, BlowupOptions, PicardOptions};
use lgrowth_core::growth::{martingale_track, GrowthParams, GrowthRunRecord, GrowthRunner};
use lgrowth_core::lab::{
    chi_independence_check, convergence_experiment, flux_compare, trace_invariance_check, ChiReport,
    CriterionResult, ExperimentReport, ExperimentSetup, Scenario,
};
use lgrowth_core::sde::{dirichlet_local_time_check, local_time_law_check, DirichletReport, LocalTimeLawReport};
use lgrowth_core::stats::linear_fit;
use lgrowth_core::{BoundaryMesh, BoundaryPoint, FlowTrajectory, InterfaceMap, Kernel};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{FlowMethod, RunConfig, ScenarioKind};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Flow,
    Grow,
    Compare,
    ValidateSde,
    TraceInvariance,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Grow => "grow",
            Command::Compare => "compare",
            Command::ValidateSde => "validate-sde",
            Command::TraceInvariance => "trace-invariance",
        }
    }
}

/// Result of a run: whether every reported criterion held.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub criteria_pass: bool,
    pub out_dir: PathBuf,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

struct Table {
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(path: &Path, header: &[&str]) -> Result<Self, BoxError> {
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    fn row(&mut self, fields: &[Cell]) -> Result<(), BoxError> {
        self.writer.write_record(fields.iter().map(Cell::render))?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), BoxError> {
        self.writer.flush()?;
        Ok(())
    }
}

enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

fn opt_f(x: Option<f64>) -> Cell {
    x.map_or(Cell::S(String::new()), Cell::F)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), BoxError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn criteria_json(criteria: &[CriterionResult]) -> Value {
    json!(criteria)
}

pub fn build_scenario(cfg: &RunConfig) -> Result<Scenario, BoxError> {
    let s = &cfg.scenario;
    let mut scenario = match s.kind {
        ScenarioKind::Circle => Scenario::circle(s.radius.unwrap_or(1.0), s.nodes.unwrap_or(128))?,
        ScenarioKind::Annulus => Scenario::annulus(
            s.r_inner.unwrap_or(1.0),
            s.r_outer.unwrap_or(2.0),
            s.n_inner.unwrap_or(128),
            s.n_outer.unwrap_or(256),
        )?,
        ScenarioKind::Custom => {
            let path = s.mesh_file.as_ref().ok_or("scenario.mesh_file missing")?;
            let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            Scenario::custom("custom", BoundaryMesh::from_json(&text)?)
        }
    };
    if s.start.0 >= scenario.mesh.components().len() {
        return Err(format!("scenario.start: component {} does not exist", s.start.0).into());
    }
    scenario.z0 = scenario.mesh.normalize(BoundaryPoint {
        component: s.start.0,
        s: s.start.1,
    });
    Ok(scenario)
}

fn growth_params(cfg: &RunConfig, epsilon: f64, delta: f64) -> GrowthParams {
    GrowthParams {
        epsilon,
        delta,
        t_max: cfg.micro.t_max,
        snapshot_times: cfg.micro.snapshot_times.clone().unwrap_or_else(|| vec![cfg.micro.t_max]),
        sde: cfg.micro.sde,
        collar_length: cfg.collar.collar_length,
        chi: cfg.collar.chi.clone(),
        jac_floor: cfg.flow.jac_floor,
        clearance_floor: cfg.flow.clearance_floor,
        compensator_samples: cfg.micro.compensator_samples,
    }
}

fn experiment_setup(cfg: &RunConfig) -> ExperimentSetup {
    let first = cfg.deltas()[0];
    ExperimentSetup {
        growth: growth_params(cfg, first.epsilon, first.delta),
        delta_schedule: cfg.micro.delta.schedule(),
        flow_dt: cfg.lab.flow_dt,
    }
}

/// Runs `command` with a validated config, writing everything under the
/// config's output directory.
pub fn run(command: Command, cfg: &RunConfig, quiet: bool) -> Result<RunOutcome, BoxError> {
    let start = Instant::now();
    let out = cfg.output.clone();
    fs::create_dir_all(&out)?;
    let log = |msg: &str| {
        if !quiet {
            eprintln!("[lgrowth {}] {msg}", command.name());
        }
    };
    log(&format!("writing to {}", out.display()));
    let (pass, seeds) = match command {
        Command::Flow => (run_flow(cfg, &out, &log)?, vec![]),
        Command::Grow => (run_grow(cfg, &out, &log)?, cfg.seeds()),
        Command::Compare => (run_compare(cfg, &out, &log)?, cfg.seeds()),
        Command::ValidateSde => (run_validate_sde(cfg, &out, &log)?, vec![cfg.seed]),
        Command::TraceInvariance => (run_trace(cfg, &out, &log)?, vec![cfg.seed]),
    };
    let manifest = json!({
        "subcommand": command.name(),
        "config": cfg,
        "materialized": {
            "delta_by_epsilon": cfg.deltas(),
            "seeds": seeds,
            "threads": rayon::current_num_threads(),
        },
        "versions": {
            "lgrowth-cli": env!("CARGO_PKG_VERSION"),
            "lgrowth-core": lgrowth_core::VERSION,
        },
        "criteria_pass": pass,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    log(&format!(
        "done in {:.2} s, criteria {}",
        start.elapsed().as_secs_f64(),
        if pass { "pass" } else { "FAIL" }
    ));
    Ok(RunOutcome {
        criteria_pass: pass,
        out_dir: out,
    })
}

fn write_trajectory(path: &Path, traj: &FlowTrajectory) -> Result<(), BoxError> {
    let mut t = Table::create(path, &["t", "component", "node", "x", "y"])?;
    for (time, state) in traj.times.iter().zip(&traj.states) {
        let mesh = state.mesh();
        for (i, v) in state.values().iter().enumerate() {
            let (c, k) = mesh.locate(i);
            t.row(&[Cell::F(*time), Cell::U(c as u64), Cell::U(k as u64), Cell::F(v[0]), Cell::F(v[1])])?;
        }
    }
    t.finish()
}

fn run_flow(cfg: &RunConfig, out: &Path, log: &dyn Fn(&str)) -> Result<bool, BoxError> {
    let scenario = build_scenario(cfg)?;
    let kernel = Kernel::new(cfg.kernel, scenario.mesh.clone())?;
    let phi0 = scenario.phi0();
    let f = &cfg.flow;
    let traj = match f.method {
        FlowMethod::Euler => integrate_until_blowup(
            &phi0,
            &kernel,
            &BlowupOptions {
                dt: f.dt,
                t_max: f.t_max,
                jac_floor: f.jac_floor,
                clearance_floor: f.clearance_floor,
                store_every: f.store_every,
            },
        )?,
        FlowMethod::Picard => picard_solve(
            &phi0,
            &kernel,
            &PicardOptions {
                tau: f.t_max,
                steps: ((f.t_max / f.dt).round() as usize).max(1),
                tol: f.tol,
                max_iter: f.max_iter,
                jac_floor: f.jac_floor,
                clearance_floor: f.clearance_floor,
            },
        )?,
    };
    log(&format!("{} states, blow-up {:?}", traj.states.len(), traj.tau_sol_estimate));
    write_trajectory(&out.join("trajectory.csv"), &traj)?;
    let fits: Vec<Value> = (0..scenario.mesh.components().len())
        .map(|c| {
            let (mut radii, mut dev) = (Vec::new(), 0.0f64);
            for s in &traj.states {
                let (_, r, d) = circle_fit(s, c);
                radii.push(r);
                dev = dev.max(d);
            }
            let (slope, intercept) = linear_fit(&traj.times, &radii);
            json!({
                "component": c,
                "slope": slope,
                "intercept": intercept,
                "final_mean_radius": radii.last(),
                "max_shape_deviation": dev,
            })
        })
        .collect();
    let last = traj.last();
    write_json(
        &out.join("summary.json"),
        &json!({
            "scenario": scenario.id,
            "method": f.method,
            "states": traj.states.len(),
            "t_final": traj.times.last(),
            "tau_sol": traj.tau_sol_estimate,
            "blowup_reason": traj.blowup_reason,
            "picard_iterations": traj.iterations,
            "radius_fit": fits,
            "final_area": last.enclosed_area().ok(),
        }),
    )?;
    Ok(true)
}

fn run_grow(cfg: &RunConfig, out: &Path, log: &dyn Fn(&str)) -> Result<bool, BoxError> {
    let scenario = build_scenario(cfg)?;
    let kernel = Kernel::new(cfg.kernel, scenario.mesh.clone())?;
    let phi0: InterfaceMap = scenario.phi0();
    let seeds = cfg.seeds();
    let mut snaps = Table::create(
        &out.join("snapshots.csv"),
        &["epsilon", "delta", "seed", "t", "component", "node", "x", "y"],
    )?;
    let mut jumps = Table::create(
        &out.join("jumps.csv"),
        &["epsilon", "delta", "seed", "index", "t", "component", "s"],
    )?;
    let mut mart = Table::create(
        &out.join("martingale.csv"),
        &["epsilon", "delta", "seed", "t", "sup_norm", "std_error"],
    )?;
    let mut runs = Vec::new();
    for entry in cfg.deltas() {
        let runner = GrowthRunner::new(&kernel, growth_params(cfg, entry.epsilon, entry.delta))?;
        let records: Vec<GrowthRunRecord> = seeds
            .par_iter()
            .map(|&s| runner.run(&phi0, scenario.z0, s))
            .collect::<Result<_, _>>()?;
        log(&format!("epsilon {}: {} runs", entry.epsilon, records.len()));
        let ed = || [Cell::F(entry.epsilon), Cell::F(entry.delta)];
        for rec in &records {
            for snap in &rec.snapshots {
                for (i, v) in snap.values.iter().enumerate() {
                    let (c, k) = scenario.mesh.locate(i);
                    let [a, b] = ed();
                    snaps.row(&[
                        a,
                        b,
                        Cell::U(rec.seed),
                        Cell::F(snap.t),
                        Cell::U(c as u64),
                        Cell::U(k as u64),
                        Cell::F(v[0]),
                        Cell::F(v[1]),
                    ])?;
                }
            }
            for (j, (t, y)) in rec.jump_times.iter().zip(&rec.jump_locations).enumerate() {
                let [a, b] = ed();
                jumps.row(&[
                    a,
                    b,
                    Cell::U(rec.seed),
                    Cell::U(j as u64),
                    Cell::F(*t),
                    Cell::U(y.component as u64),
                    Cell::F(y.s),
                ])?;
            }
            let track = martingale_track(rec);
            for ((t, m), se) in track.times.iter().zip(&track.sup_norm).zip(&track.std_error) {
                let [a, b] = ed();
                mart.row(&[a, b, Cell::U(rec.seed), Cell::F(*t), Cell::F(*m), Cell::F(*se)])?;
            }
            let gap = flux_compare(rec);
            runs.push(json!({
                "epsilon": entry.epsilon,
                "delta": entry.delta,
                "seed": rec.seed,
                "jumps": rec.jump_times.len(),
                "tau_sol_epsilon": rec.tau_sol_epsilon,
                "trace_steps": rec.trace_steps,
                "trace_fallbacks": rec.trace_fallbacks,
                "martingale_sup": track.sup(),
                "flux_gap": gap,
            }));
        }
    }
    snaps.finish()?;
    jumps.finish()?;
    mart.finish()?;
    write_json(&out.join("summary.json"), &json!({ "scenario": scenario.id, "runs": runs }))?;
    Ok(true)
}

fn write_cells(path: &Path, report: &ExperimentReport, profile: Option<&str>) -> Result<(), BoxError> {
    let mut t = Table::create(
        path,
        &[
            "profile",
            "epsilon",
            "delta",
            "seed",
            "c0_gap",
            "c1_gap",
            "flux_gap",
            "flux_gap_std_error",
            "martingale_sup",
            "martingale_std_error",
            "jumps",
            "tau_sol_epsilon",
            "trace_fallbacks",
        ],
    )?;
    for cell in &report.cells {
        for r in &cell.seeds {
            t.row(&[
                Cell::S(profile.unwrap_or("").to_string()),
                Cell::F(cell.epsilon),
                Cell::F(cell.delta),
                Cell::U(r.seed),
                Cell::F(r.c0_gap),
                Cell::F(r.c1_gap),
                Cell::F(r.flux_gap.sup_gap),
                Cell::F(r.flux_gap.std_error),
                Cell::F(r.martingale_sup),
                Cell::F(r.martingale_se),
                Cell::U(r.jumps as u64),
                opt_f(r.exploded),
                Cell::U(r.trace_fallbacks),
            ])?;
        }
    }
    t.finish()
}

fn write_chi_cells(path: &Path, report: &ChiReport, mesh: &BoundaryMesh) -> Result<(), BoxError> {
    let mut t = Table::create(path, &["profile", "seed", "component", "node", "x", "y"])?;
    for (p, cell) in report.profiles.iter().zip(&report.cells) {
        let name = serde_json::to_string(p)?;
        for r in &cell.seeds {
            for (i, v) in r.final_values.iter().enumerate() {
                let (c, k) = mesh.locate(i);
                t.row(&[
                    Cell::S(name.clone()),
                    Cell::U(r.seed),
                    Cell::U(c as u64),
                    Cell::U(k as u64),
                    Cell::F(v[0]),
                    Cell::F(v[1]),
                ])?;
            }
        }
    }
    t.finish()
}

fn run_compare(cfg: &RunConfig, out: &Path, log: &dyn Fn(&str)) -> Result<bool, BoxError> {
    let scenario = build_scenario(cfg)?;
    let kernel = Kernel::new(cfg.kernel, scenario.mesh.clone())?;
    let setup = experiment_setup(cfg);
    let seeds = cfg.seeds();
    let report = convergence_experiment(&scenario, &kernel, &setup, &cfg.epsilons(), &seeds)?;
    for c in &report.criteria {
        log(&format!("{}: {} ({})", c.name, if c.pass { "pass" } else { "FAIL" }, c.detail));
    }
    write_cells(&out.join("cells.csv"), &report, None)?;
    let mut pass = report.criteria.iter().all(|c| c.pass);
    let chi = if cfg.lab.chi_profiles.len() >= 2 {
        let r = chi_independence_check(&scenario, &kernel, &setup, &cfg.lab.chi_profiles, cfg.lab.chi_epsilon, &seeds)?;
        log(&format!("{}: {}", r.criterion.name, r.criterion.detail));
        pass &= r.criterion.pass;
        write_chi_cells(&out.join("chi_final.csv"), &r, &scenario.mesh)?;
        Some(r)
    } else {
        None
    };
    let mut criteria = report.criteria.clone();
    if let Some(r) = &chi {
        criteria.push(r.criterion.clone());
    }
    write_json(
        &out.join("report.json"),
        &json!({ "experiment": report, "chi": chi, "criteria": criteria_json(&criteria), "pass": pass }),
    )?;
    Ok(pass)
}

fn run_validate_sde(cfg: &RunConfig, out: &Path, log: &dyn Fn(&str)) -> Result<bool, BoxError> {
    let c = &cfg.sde_checks;
    let law: Vec<LocalTimeLawReport> = c
        .law_points
        .iter()
        .enumerate()
        .map(|(k, &(d, u))| local_time_law_check(d, u, c.law_paths, c.law_steps, cfg.seed.wrapping_add(k as u64)))
        .collect();
    let dirichlet: Vec<DirichletReport> = c
        .dirichlet_xi
        .iter()
        .enumerate()
        .map(|(k, &xi)| dirichlet_local_time_check(c.radius, xi, c.dirichlet_paths, &c.sde, cfg.seed.wrapping_add(100 + k as u64)))
        .collect::<Result<_, _>>()?;
    let disk = Scenario::circle(c.radius, 128)?;
    let (trace, _) = trace_invariance_check(
        &disk.phi0(),
        disk.z0,
        c.trace_delta,
        c.trace_samples,
        0.5 * c.radius,
        &cfg.collar.chi,
        &c.sde,
        cfg.seed,
        c.ks_tol,
    )?;
    let criteria = vec![
        CriterionResult {
            name: "local_time_law".into(),
            pass: law.iter().all(|r| r.pass),
            detail: law
                .iter()
                .map(|r| format!("(δ={}, u={}) z={:.2}", r.delta, r.horizon, r.z_score))
                .collect::<Vec<_>>()
                .join("; "),
        },
        CriterionResult {
            name: "dirichlet_local_time".into(),
            pass: dirichlet.iter().all(|r| r.pass),
            detail: dirichlet
                .iter()
                .map(|r| format!("ξ={} z={:.2}", r.xi, r.z_score))
                .collect::<Vec<_>>()
                .join("; "),
        },
        trace.criterion.clone(),
    ];
    for k in &criteria {
        log(&format!("{}: {} ({})", k.name, if k.pass { "pass" } else { "FAIL" }, k.detail));
    }
    let pass = criteria.iter().all(|k| k.pass);
    write_json(
        &out.join("report.json"),
        &json!({
            "local_time_law": law,
            "dirichlet": dirichlet,
            "trace": trace,
            "criteria": criteria_json(&criteria),
            "pass": pass,
        }),
    )?;
    Ok(pass)
}

fn trace_map(cfg: &RunConfig, mesh: &Arc<BoundaryMesh>) -> Result<InterfaceMap, BoxError> {
    let t = &cfg.trace;
    Ok(InterfaceMap::from_fn(mesh.clone(), |p| {
        let th = p[1].atan2(p[0]);
        let w = 1.0 + t.wobble * (t.wobble_mode as f64 * th).cos();
        [t.stretch[0] * w * p[0], t.stretch[1] * w * p[1]]
    })?)
}

fn run_trace(cfg: &RunConfig, out: &Path, log: &dyn Fn(&str)) -> Result<bool, BoxError> {
    let scenario = build_scenario(cfg)?;
    let phi = trace_map(cfg, &scenario.mesh)?;
    let t = &cfg.trace;
    let (report, draws) = trace_invariance_check(
        &phi,
        scenario.z0,
        t.delta,
        t.samples,
        cfg.collar.collar_length,
        &cfg.collar.chi,
        &t.sde,
        cfg.seed,
        t.ks_tol,
    )?;
    log(&report.criterion.detail);
    let mut table = Table::create(
        &out.join("endpoints.csv"),
        &["index", "component", "s", "fraction", "elapsed_time", "steps", "fallbacks"],
    )?;
    for (i, d) in draws.iter().enumerate() {
        table.row(&[
            Cell::U(i as u64),
            Cell::U(d.endpoint.component as u64),
            Cell::F(d.endpoint.s),
            Cell::F(lgrowth_core::lab::arclength_fraction(&scenario.mesh, d.endpoint)),
            Cell::F(d.elapsed_time),
            Cell::U(d.steps_used),
            Cell::U(d.fallbacks),
        ])?;
    }
    table.finish()?;
    let pass = report.criterion.pass;
    write_json(&out.join("report.json"), &json!({ "scenario": scenario.id, "trace": report, "pass": pass }))?;
    Ok(pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_17_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        let x = std::f64::consts::PI;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}

//! Staged run: background, spectrum, solve, diagnostics, asymptotics.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use waveforce::asymptotics::{classical_decay_crosscheck, decay_rate_fit, flux_tail_expansion};
use waveforce::background::{parameter_for_froude, solve_background, ShearFlow};
use waveforce::dispersion::{criticality_check, sl_spectrum, SlSpectrum};
use waveforce::field::{BoundaryCondition, StripGrid, WaveField};
use waveforce::flow_force::{flow_force_profile, flux_function, relative_variation, FluxDiagnostics};
use waveforce::physical::{euler_residuals, physical_flow_force, physical_laplacian, reconstruct};
use waveforce::quadrature::Quadrature;
use waveforce::solver::{
    decay_rate, default_half_length, solve_periodic, solve_solitary, subcritical_probe, surface_shape,
    WaveSolution,
};
use waveforce::WaveError;

use crate::config::{BcKind, RunConfig};
use crate::output::{svg, Cell, OutputDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// SHA-256 of the canonical config with the output directory blanked.
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn first_failure(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.status == StageStatus::Failed)
    }

    pub fn succeeded(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let mut canonical = cfg.clone();
    canonical.output.dir.clear();
    format!("{:x}", Sha256::digest(canonical.to_toml().as_bytes()))
}

/// A stage outcome: a value, a failed invariant, or an I/O problem.
enum StageError {
    Invariant(String),
    Io(anyhow::Error),
}

impl From<WaveError> for StageError {
    fn from(e: WaveError) -> Self {
        StageError::Invariant(e.to_string())
    }
}

impl From<anyhow::Error> for StageError {
    fn from(e: anyhow::Error) -> Self {
        StageError::Io(e)
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

fn invariant<T>(msg: String) -> StageResult<T> {
    Err(StageError::Invariant(msg))
}

struct Runner {
    stages: Vec<StageRecord>,
}

impl Runner {
    /// Run `f` unless a dependency failed; I/O errors abort the pipeline.
    fn stage<T>(&mut self, name: &str, deps_ok: bool, f: impl FnOnce() -> StageResult<T>) -> Result<Option<T>> {
        if !deps_ok {
            self.stages.push(StageRecord {
                name: name.into(),
                status: StageStatus::Skipped,
                seconds: 0.0,
                message: Some("upstream stage failed".into()),
            });
            return Ok(None);
        }
        let start = Instant::now();
        let outcome = f();
        let seconds = start.elapsed().as_secs_f64();
        match outcome {
            Ok(v) => {
                self.stages.push(StageRecord { name: name.into(), status: StageStatus::Ok, seconds, message: None });
                Ok(Some(v))
            }
            Err(StageError::Invariant(msg)) => {
                self.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    seconds,
                    message: Some(msg),
                });
                Ok(None)
            }
            Err(StageError::Io(e)) => Err(e.context(format!("stage `{name}`"))),
        }
    }
}

fn background(cfg: &RunConfig) -> StageResult<ShearFlow> {
    let b = &cfg.background;
    let vorticity = cfg.vorticity();
    let s = match (b.s, b.froude) {
        (Some(s), _) => s,
        (None, Some(f)) => parameter_for_froude(&vorticity, b.n_p, Quadrature::Trapezoid, f)?,
        (None, None) => return invariant("no flow parameter".into()),
    };
    Ok(solve_background(&vorticity, s, b.n_p)?)
}

fn write_background(out: &mut OutputDir, flow: &ShearFlow) -> Result<()> {
    out.write_json(
        "background.json",
        &json!({"d": flow.depth, "R": flow.bernoulli, "s": flow.s, "F": flow.froude}),
    )?;
    out.write_csv(
        "background.csv",
        &["p", "H", "H_p", "H_pp"],
        (0..flow.n_p()).map(|j| vec![flow.p[j].into(), flow.h[j].into(), flow.h_p[j].into(), flow.h_pp[j].into()]),
    )
}

fn spectrum(out: &mut OutputDir, flow: &ShearFlow, modes: usize) -> StageResult<SlSpectrum> {
    let spec = sl_spectrum(flow, modes + 1)?;
    let crit = criticality_check(flow, &spec)?;
    out.write_csv(
        "spectrum.csv",
        &["j", "lambda", "zero_count"],
        (0..spec.n_modes()).map(|j| vec![j.into(), spec.lambdas[j].into(), spec.zero_counts[j].into()]),
    )?;
    let mut header = vec!["p".to_string()];
    header.extend((0..spec.n_modes()).map(|j| format!("phi_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv(
        "eigenfunctions.csv",
        &header,
        (0..spec.p.len()).map(|k| {
            let mut row: Vec<Cell> = vec![spec.p[k].into()];
            row.extend(spec.phis.iter().map(|phi| Cell::F(phi[k])));
            row
        }),
    )?;
    out.write_json(
        "spectrum.json",
        &json!({
            "F": crit.froude,
            "lambda0": crit.lambda0,
            "lambda1": crit.lambda1,
            "subcritical": crit.subcritical,
            "lambda0_negative": crit.lambda0_negative,
            "boundary_case": crit.boundary_case,
            "orthonormality_defect": spec.orthonormality_defect(),
            "shooting_gap": spec.shooting_gap(),
        }),
    )?;
    Ok(spec)
}

fn solve(out: &mut OutputDir, cfg: &RunConfig, flow: &ShearFlow) -> StageResult<WaveSolution> {
    let solver = cfg.solver.as_ref().expect("solve stage requires [solver]");
    let opts = cfg.newton();
    let sol = match solver.bc {
        BcKind::Periodic => solve_periodic(flow, solver.amplitude.unwrap_or(0.0), solver.n_q, &opts)?,
        _ => {
            let l = match solver.half_length {
                Some(l) => l,
                None => default_half_length(flow, decay_rate(flow)?),
            };
            solve_solitary(flow, solver.n_q, l, &opts)?
        }
    };
    let field = &sol.field;
    let grid = &field.grid;
    let n_p = grid.n_p();
    out.write_csv(
        "wave.csv",
        &["q", "p", "w"],
        (0..grid.n_q()).flat_map(|i| (0..n_p).map(move |j| (i, j))).map(|(i, j)| {
            vec![grid.q[i].into(), grid.p[j].into(), field.at(i, j).into()]
        }),
    )?;
    let eta = field.surface();
    out.write_csv("surface.csv", &["q", "eta"], (0..grid.n_q()).map(|i| vec![grid.q[i].into(), eta[i].into()]))?;
    let shape = surface_shape(field);
    out.write_json(
        "wave.json",
        &json!({
            "F": sol.froude(),
            "amplitude": sol.amplitude(),
            "iterations": sol.stats.iterations,
            "residual_inf": sol.stats.residual_inf,
            "bc": solver.bc,
            "n_q": grid.n_q(),
            "n_p": n_p,
            "L": grid.half_length,
            "period": sol.period,
            "damped_steps": sol.stats.damped_steps,
            "residual_history": sol.stats.residual_history,
            "increments": sol.stats.increments,
            "convergence_order": sol.stats.convergence_order(1e-13),
            "shape": {
                "min_eta": shape.min_eta,
                "even_defect": shape.even_defect,
                "max_rise": shape.max_rise,
                "min_w_interior": shape.min_w_interior,
            },
        }),
    )?;
    Ok(sol)
}

fn flow_force(out: &mut OutputDir, cfg: &RunConfig, field: &WaveField) -> StageResult<FluxDiagnostics> {
    let diag = FluxDiagnostics::compute(field)?;
    let grid = &field.grid;
    let n_p = grid.n_p();
    out.write_csv(
        "phi.csv",
        &["q", "p", "Phi"],
        (0..grid.n_q()).flat_map(|i| (0..n_p).map(move |j| (i, j))).map(|(i, j)| {
            vec![grid.q[i].into(), grid.p[j].into(), diag.phi[i * n_p + j].into()]
        }),
    )?;
    out.write_csv(
        "diagnostics.csv",
        &["q", "S", "Phi_top_residual"],
        (0..grid.n_q()).map(|i| vec![grid.q[i].into(), diag.s_of_q[i].into(), diag.bc_residuals[i].into()]),
    )?;
    let norms = diag.norms(grid);
    let sup: serde_json::Map<String, serde_json::Value> =
        norms.as_array().iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let (min_b2, max_b1, max_b2) = diag.coefficient_ranges();
    let pos = &diag.positivity;
    let sign_change_columns: Vec<f64> =
        pos.sign_change.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| grid.q[i]).collect();
    out.write_json(
        "flow_force.json",
        &json!({
            "S": diag.s_of_q[grid.center()],
            "S_plus": diag.s_plus,
            "S_variation": diag.s_variation,
            "min_Phi": pos.min_value,
            "min_Phi_at": [pos.location.0, pos.location.1],
            "sign_change_columns": sign_change_columns,
            "sup_residuals": sup,
            "coefficients": {"min_B2": min_b2, "max_abs_B1": max_b1, "max_B2": max_b2,
                             "degenerate_cells": diag.coefficients.degenerate_count()},
        }),
    )?;
    if let Some(tol) = cfg.diagnostics.s_tolerance {
        if !(diag.s_variation < tol) {
            return invariant(format!(
                "flow force not constant: relative S-variation {:e} exceeds {tol:e}",
                diag.s_variation
            ));
        }
    }
    if let Some(tol) = cfg.diagnostics.min_phi_tolerance {
        if pos.min_value < -tol || pos.any_sign_change() {
            return invariant(format!(
                "flux function not nonnegative: min Phi {:e} at (q, p) = ({}, {}), {} sign-change columns",
                pos.min_value,
                pos.location.0,
                pos.location.1,
                sign_change_columns.len()
            ));
        }
    }
    Ok(diag)
}

fn asymptotics(out: &mut OutputDir, field: &WaveField, phi: &[f64], spec: &SlSpectrum) -> StageResult<()> {
    let grid = &field.grid;
    let eta = field.surface();
    out.write_csv(
        "tail.csv",
        &["q", "eta", "log_abs_eta"],
        (grid.center()..grid.n_q()).map(|i| vec![grid.q[i].into(), eta[i].into(), eta[i].abs().ln().into()]),
    )?;
    let fit = decay_rate_fit(field)?;
    let classical = if field.flow.is_irrotational() {
        let c = classical_decay_crosscheck(&field.flow, fit.tau)?;
        json!({"lhs": c.lhs, "F_squared": c.froude_squared, "relative_gap": c.relative_gap})
    } else {
        serde_json::Value::Null
    };
    let tail = flux_tail_expansion(field, phi, &fit, spec);
    out.write_json(
        "asymptotics.json",
        &json!({
            "tau": fit.tau,
            "a": fit.a,
            "lambda0_sl": spec.lambdas[0],
            "relative_gap": fit.rate_gap(spec),
            "profile_sup_error": fit.profile_gap(spec),
            "window": [fit.window.0, fit.window.1],
            "r_squared": fit.r_squared,
            "remainder_norm": fit.remainder_norm,
            "accepted": fit.is_accepted(),
            "classical": classical,
            "flux_tail": {
                "sup_relative_deviation": tail.sup_relative_deviation,
                "ratio_to_half_coefficient": tail.ratio_to_half_coefficient,
                "limit_nonnegative": tail.limit_nonnegative,
                "limit_sign_changes": tail.limit_sign_changes,
            },
        }),
    )?;
    if !fit.is_accepted() {
        return invariant(format!(
            "decay fit rejected: window [{}, {}] with R^2 = {}",
            fit.window.0, fit.window.1, fit.r_squared
        ));
    }
    Ok(())
}

fn physical(out: &mut OutputDir, field: &WaveField, phi: &[f64]) -> StageResult<()> {
    let phys = reconstruct(field)?;
    let n = phys.x.len();
    out.write_csv(
        "physical.csv",
        &["x", "y", "u_rel", "v", "P"],
        (0..n).map(|k| {
            vec![phys.x[k].into(), phys.y[k].into(), phys.rel_u[k].into(), phys.v[k].into(), phys.pressure[k].into()]
        }),
    )?;
    let euler = euler_residuals(&phys);
    let s_height = flow_force_profile(field)?;
    let s_phys = physical_flow_force(&phys);
    let s_gap = s_height
        .iter()
        .zip(&s_phys)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / a.abs().max(1e-300)));
    let laplacian = field.flow.is_irrotational().then(|| physical_laplacian(&phys, phi).sup());
    out.write_json(
        "physical.json",
        &json!({
            "x_momentum_sup": euler.x_momentum.sup(),
            "y_momentum_sup": euler.y_momentum.sup(),
            "vorticity_sup": euler.vorticity.sup(),
            "mass_flux_defect": euler.mass_flux_defect,
            "min_u_rel": phys.min_rel_u(),
            "S_physical_gap": s_gap,
            "laplacian_phi_sup": laplacian,
        }),
    )?;
    if !(phys.min_rel_u() > 0.0) {
        return invariant(format!("flow not unidirectional: min u - c = {}", phys.min_rel_u()));
    }
    Ok(())
}

fn probe(out: &mut OutputDir, cfg: &RunConfig, flow: &ShearFlow, spec: &SlSpectrum) -> StageResult<()> {
    let p = cfg.probe.as_ref().expect("probe stage requires [probe]");
    if spec.lambdas[0] >= 0.0 {
        return invariant(format!("probe needs a subcritical flow, F = {}", flow.froude));
    }
    let wavelength = 2.0 * PI / (-spec.lambdas[0]).sqrt();
    let l = p.half_length.unwrap_or(10.0 * wavelength);
    let n_q = p.n_q.unwrap_or(801);
    let report = subcritical_probe(flow, p.a0, n_q, l, &cfg.newton())?;
    out.write_json(
        "probe.json",
        &json!({
            "outcome": format!("{:?}", report.outcome),
            "F": report.froude,
            "a0": report.a0,
            "n_q": n_q,
            "L": l,
            "iterations": report.iterations,
            "residual_inf": report.residual_inf,
            "sup_w": report.sup_w,
            "tail_ratio": report.tail_ratio,
            "passes_tail_test": report.passes_tail_test,
            "tail_wavelength": report.tail_wavelength,
            "linear_wavelength": report.linear_wavelength,
            "wavelength_gap": report.wavelength_gap(),
            "decaying_nontrivial": report.is_decaying_nontrivial(),
            "message": report.message,
        }),
    )?;
    if report.is_decaying_nontrivial() {
        return invariant(format!(
            "subcritical probe returned a decaying nontrivial field (sup w = {:e}, tail ratio {:e})",
            report.sup_w, report.tail_ratio
        ));
    }
    Ok(())
}

/// Seeded random field of size `amplitude` in `w_p`, vanishing on the bed
/// and at `q = ±L`.
pub fn random_field(flow: &Arc<ShearFlow>, seed: u64, n_q: usize, half_length: f64) -> Result<WaveField, WaveError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(f64, f64, f64)> = (1..=6)
        .map(|m| (m as f64, rng.gen_range(-1.0..1.0) / m as f64, rng.gen_range(1.0..3.0)))
        .collect();
    let weight: f64 = modes.iter().map(|(_, c, k)| c.abs() * k).sum();
    let min_hp = flow.h_p.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let scale = 0.8 * min_hp / weight.max(1e-12);
    let grid = StripGrid::new(half_length, n_q, flow.n_p(), BoundaryCondition::Decay)?;
    WaveField::from_fn(grid, flow.clone(), |q, p| {
        let x = PI * (q + half_length) / (2.0 * half_length);
        scale * modes.iter().map(|(m, c, k)| c * (m * x).sin() * (k * p).sin()).sum::<f64>()
    })
}

pub const NEGATIVE_CONTROL_FLOOR: f64 = 1e-2;

fn negative_control(out: &mut OutputDir, cfg: &RunConfig, flow: &ShearFlow) -> StageResult<()> {
    let field = random_field(&Arc::new(flow.clone()), cfg.seed, 81, 5.0)?;
    let s = flow_force_profile(&field)?;
    let variation = relative_variation(&field.grid, &s);
    out.write_json(
        "negative_control.json",
        &json!({"seed": cfg.seed, "sup_w": field.sup_norm(), "S_variation": variation, "floor": NEGATIVE_CONTROL_FLOOR}),
    )?;
    if !(variation > NEGATIVE_CONTROL_FLOOR) {
        return invariant(format!(
            "negative control not detected: S-variation {variation:e} of a random field is below {NEGATIVE_CONTROL_FLOOR:e}"
        ));
    }
    Ok(())
}

fn plots(out: &mut OutputDir, field: &WaveField, phi: Option<&[f64]>) -> StageResult<()> {
    let grid = &field.grid;
    let eta = field.surface();
    out.write_text("surface.svg", &svg::line_plot("Surface elevation", "q", "eta", &grid.q, &eta))?;
    let computed;
    let phi = match phi {
        Some(p) => p,
        None => {
            computed = flux_function(field)?;
            &computed
        }
    };
    out.write_text("phi_heatmap.svg", &svg::heat_map("Flux function Phi", "q", "p", &grid.q, &grid.p, phi, 160))?;
    let c = grid.center();
    let log_eta: Vec<f64> = eta[c..].iter().map(|v| v.abs().ln()).collect();
    out.write_text("tail.svg", &svg::line_plot("Tail decay", "q", "log |eta|", &grid.q[c..], &log_eta))?;
    Ok(())
}

/// Run every stage the config requests into `out_dir` and write the manifest.
/// `Err` is reserved for I/O failures; stage failures are recorded.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    let mut out = OutputDir::create(out_dir)?;
    out.clear_previous()?;
    let mut run = Runner { stages: Vec::new() };

    let flow = run.stage("background", true, || {
        let flow = background(cfg)?;
        write_background(&mut out, &flow)?;
        Ok(flow)
    })?;
    let spec = run.stage("spectrum", flow.is_some(), || spectrum(&mut out, flow.as_ref().unwrap(), cfg.modes()))?;

    let mut phi: Option<Vec<f64>> = None;
    if cfg.solver.is_some() {
        let sol = run.stage("solve", spec.is_some(), || solve(&mut out, cfg, flow.as_ref().unwrap()))?;
        let solitary = cfg.solver.as_ref().map(|s| s.bc) == Some(BcKind::EvenSymmetric);
        if cfg.diagnostics.flow_force {
            let diag = run.stage("flow_force", sol.is_some(), || flow_force(&mut out, cfg, &sol.as_ref().unwrap().field))?;
            phi = diag.map(|d| d.phi);
        }
        let field_and_phi = |phi: &Option<Vec<f64>>| -> StageResult<(WaveField, Vec<f64>)> {
            let field = sol.as_ref().unwrap().field.clone();
            let p = match phi {
                Some(p) => p.clone(),
                None => flux_function(&field)?,
            };
            Ok((field, p))
        };
        let ff_ok = !cfg.diagnostics.flow_force || phi.is_some();
        if solitary && cfg.diagnostics.asymptotics {
            run.stage("asymptotics", sol.is_some() && ff_ok, || {
                let (field, p) = field_and_phi(&phi)?;
                asymptotics(&mut out, &field, &p, spec.as_ref().unwrap())
            })?;
        }
        if cfg.diagnostics.physical {
            run.stage("physical", sol.is_some() && ff_ok, || {
                let (field, p) = field_and_phi(&phi)?;
                physical(&mut out, &field, &p)
            })?;
        }
        if cfg.output.plots {
            run.stage("plots", sol.is_some() && ff_ok, || plots(&mut out, &sol.as_ref().unwrap().field, phi.as_deref()))?;
        }
    }
    if cfg.probe.as_ref().is_some_and(|p| p.subcritical) {
        run.stage("probe", spec.is_some(), || probe(&mut out, cfg, flow.as_ref().unwrap(), spec.as_ref().unwrap()))?;
    }
    if cfg.diagnostics.negative_control {
        run.stage("negative_control", flow.is_some(), || negative_control(&mut out, cfg, flow.as_ref().unwrap()))?;
    }

    let mut files = out.files().to_vec();
    files.push("manifest.json".into());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        stages: run.stages,
        files,
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: String,
    pub succeeded: bool,
    pub failed_stage: Option<String>,
    pub message: Option<String>,
}

pub fn sweep_dir_name(param: &str, value: f64) -> String {
    format!("{}={value}", param.replace(['/', '\\'], "_"))
}

/// One pipeline per value, run concurrently on at most `threads` workers.
/// Config errors in any override abort before anything runs.
pub fn run_sweep(
    cfg: &RunConfig,
    param: &str,
    values: &[f64],
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SweepEntry>> {
    use rayon::prelude::*;

    let configs = values
        .iter()
        .map(|&v| cfg.with_override(param, v).map(|c| (v, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let entries = pool.install(|| {
        configs
            .par_iter()
            .map(|(v, c)| {
                let dir = sweep_dir_name(param, *v);
                let manifest = run_pipeline(c, &out_dir.join(&dir))?;
                let failure = manifest.first_failure();
                Ok(SweepEntry {
                    value: *v,
                    dir,
                    succeeded: failure.is_none(),
                    failed_stage: failure.map(|f| f.name.clone()),
                    message: failure.and_then(|f| f.message.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut root = OutputDir::create(out_dir)?;
    root.write_json("sweep.json", &json!({"param": param, "runs": entries}))?;
    Ok(entries)
}

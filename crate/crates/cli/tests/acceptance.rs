//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use waveforce::asymptotics::{decay_rate_fit, flux_tail_expansion};
use waveforce::background::{critical_parameter, parameter_for_froude, solve_background, ShearFlow, Vorticity};
use waveforce::dispersion::{count_sign_changes, criticality_check, sl_spectrum};
use waveforce::flow_force::{flow_force_profile, relative_variation, FluxDiagnostics};
use waveforce::physical::{physical_laplacian_with, reconstruct};
use waveforce::quadrature::Quadrature;
use waveforce::solver::{decay_rate, default_half_length, solve_solitary, subcritical_probe, surface_shape, NewtonOptions, ProbeOutcome, WaveSolution};
use waveforce_cli::pipeline::random_field;
use waveforce_cli::{run_pipeline, RunConfig};

struct Suite {
    failures: Vec<usize>,
    lines: BTreeMap<usize, String>,
}

impl Suite {
    fn report(&mut self, n: usize, title: &str, checks: Vec<(String, bool)>, started: Instant) {
        let pass = checks.iter().all(|(_, ok)| *ok);
        if !pass {
            self.failures.push(n);
        }
        let detail: Vec<String> = checks
            .iter()
            .map(|(msg, ok)| if *ok { msg.clone() } else { format!("FAILED {msg}") })
            .collect();
        let line = format!(
            "criterion {n:>2} {} {title} [{:.1}s]: {}",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            detail.join("; ")
        );
        self.lines.insert(n, line);
    }
}

fn check(msg: String, ok: bool) -> (String, bool) {
    (msg, ok)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) * f(hi) < 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Trapezoid `(∫_0^1 H_p³)^{-1/2}` from the tabulated `H_p`.
fn froude_oracle(flow: &ShearFlow) -> f64 {
    let n = flow.h_p.len();
    let dp = 1.0 / (n - 1) as f64;
    let cubes: Vec<f64> = flow.h_p.iter().map(|h| h.powi(3)).collect();
    let integral = dp * (cubes.iter().sum::<f64>() - 0.5 * (cubes[0] + cubes[n - 1]));
    integral.powf(-0.5)
}

fn flow_at_froude(v: &Vorticity, froude: f64, n_p: usize) -> ShearFlow {
    let s = parameter_for_froude(v, n_p, Quadrature::Trapezoid, froude).expect("flow parameter");
    solve_background(v, s, n_p).expect("background")
}

fn solitary(flow: &ShearFlow, n_q: usize, l: f64) -> Result<WaveSolution, String> {
    solve_solitary(flow, n_q, l, &NewtonOptions::default()).map_err(|e| e.to_string())
}

fn criterion_1(suite: &mut Suite) {
    let t = Instant::now();
    let n_p = 2001;
    let mut worst_f: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for d in [0.5, 0.8, 1.0, 1.5, 2.0, 3.0] {
        let flow = solve_background(&Vorticity::zero(), 0.5 / (d * d), n_p).unwrap();
        worst_d = worst_d.max((flow.depth - d).abs());
        worst_f = worst_f.max((flow.froude - d.powf(-1.5)).abs());
    }
    let s_c = critical_parameter(&Vorticity::zero(), n_p).unwrap();
    let flow_c = solve_background(&Vorticity::zero(), s_c, n_p).unwrap();
    let r_c = flow_c.bernoulli;
    suite.report(
        1,
        "background closed forms",
        vec![
            check(format!("max |d - 1/sqrt(2s)| = {worst_d:.2e}"), worst_d < 1e-10),
            check(format!("max |F - d^-1.5| = {worst_f:.2e}"), worst_f < 1e-10),
            check(format!("|s_c - 0.5| = {:.2e}", (s_c - 0.5).abs()), (s_c - 0.5).abs() < 1e-10),
            check(format!("|R_c - 1.5| = {:.2e}", (r_c - 1.5).abs()), (r_c - 1.5).abs() < 1e-10),
        ],
        t,
    );
}

fn criterion_2(suite: &mut Suite) {
    let t = Instant::now();
    let n_p = 2001;
    let d: f64 = 2.0;
    let kappa = bisect(|k| k.tanh() - k / d.powi(3), 1e-3, 1.5 * d.powi(3));
    let expected0 = -kappa * kappa / (d * d);
    let spec2 = sl_spectrum(&solve_background(&Vorticity::zero(), 0.5 / (d * d), n_p).unwrap(), 6).unwrap();
    let gap0 = (spec2.lambdas[0] - expected0).abs() / expected0.abs();

    let k1 = bisect(|k| k.sin() - k * k.cos(), PI + 1e-9, 1.5 * PI - 1e-9);
    let spec1 = sl_spectrum(&solve_background(&Vorticity::zero(), 0.5, n_p).unwrap(), 6).unwrap();
    let gap1 = (spec1.lambdas[1] - k1 * k1).abs() / (k1 * k1);

    let counts_ok = [&spec1, &spec2].iter().all(|s| {
        (0..6).all(|j| s.zero_counts[j] == j && count_sign_changes(&s.phis[j][1..], 1e-10) == j)
    });
    suite.report(
        2,
        "dispersion oracle",
        vec![
            check(format!("lambda_0(d=2) rel gap {gap0:.2e}"), gap0 < 1e-5),
            check(format!("lambda_1(d=1) rel gap {gap1:.2e}"), gap1 < 1e-5),
            check("zero counts j=0..5 exact".into(), counts_ok),
        ],
        t,
    );
}

fn criterion_3(suite: &mut Suite) {
    let t = Instant::now();
    let n_p = 401;
    let cases: Vec<(&str, Vorticity)> = vec![
        ("omega=0", Vorticity::zero()),
        ("omega=0.3", Vorticity::constant(0.3)),
        ("omega=-0.3", Vorticity::constant(-0.3)),
        ("omega=0.6p", Vorticity::Polynomial(vec![0.0, 0.6])),
    ];
    let mut checks = Vec::new();
    for (name, v) in cases {
        let s_c = critical_parameter(&v, n_p).unwrap();
        let profile = waveforce::background::build_primitive(&v, n_p, Quadrature::Trapezoid).unwrap();
        let s_min = waveforce::background::min_parameter(&profile);
        let (lo, hi) = (s_min + 0.02 * (s_c - s_min), s_c + 2.0 * (s_c - s_min));
        let mut exceptions = 0;
        let (mut sub, mut sup) = (0, 0);
        for k in 0..20 {
            let s = lo + (hi - lo) * k as f64 / 19.0;
            let flow = solve_background(&v, s, n_p).unwrap();
            let f = froude_oracle(&flow);
            let spec = sl_spectrum(&flow, 2).unwrap();
            let crit = criticality_check(&flow, &spec);
            let agree = (spec.lambdas[0] < 0.0) == (f < 1.0) && spec.lambdas[0] != 0.0 && crit.is_ok();
            if !agree {
                exceptions += 1;
            }
            if f < 1.0 {
                sub += 1
            } else {
                sup += 1
            }
        }
        checks.push(check(format!("{name}: {exceptions} exceptions ({sub} sub, {sup} super)"), exceptions == 0 && sub > 0 && sup > 0));
    }
    suite.report(3, "criticality biconditional", checks, t);
}

struct Waves {
    irrotational: WaveSolution,
    irrotational_l: f64,
    rotational_fine: Result<WaveSolution, String>,
}

fn criterion_4(suite: &mut Suite) -> Option<(ShearFlow, f64, WaveSolution)> {
    let t = Instant::now();
    let froude = 1.1;
    let flow = flow_at_froude(&Vorticity::zero(), froude, 41);
    let l = default_half_length(&flow, decay_rate(&flow).unwrap());
    match solitary(&flow, 801, l) {
        Ok(sol) => {
            let law = (froude * froude - 1.0) * flow.depth;
            let ratio = sol.amplitude() / law;
            let shape = surface_shape(&sol.field);
            suite.report(
                4,
                "solitary wave reproduction",
                vec![
                    check(format!("converged in {} iterations, residual {:.1e}", sol.stats.iterations, sol.stats.residual_inf), true),
                    check(format!("amplitude/((F^2-1)d) = {ratio:.4}"), (0.7..=1.3).contains(&ratio)),
                    check(format!("min eta = {:.2e}", shape.min_eta), shape.min_eta > 0.0),
                    check(format!("even defect = {:.1e}", shape.even_defect), shape.even_defect == 0.0),
                    check(format!("max rise on q>0 = {:.2e}", shape.max_rise), shape.max_rise < 0.0),
                ],
                t,
            );
            Some((flow, l, sol))
        }
        Err(e) => {
            suite.report(4, "solitary wave reproduction", vec![check(format!("solve failed: {e}"), false)], t);
            None
        }
    }
}

fn criterion_5_and_7(suite: &mut Suite, waves: &Waves, rotational_mid: &Option<WaveSolution>) {
    let t = Instant::now();
    let mut checks = Vec::new();
    let irr = FluxDiagnostics::compute(&waves.irrotational.field).unwrap();
    checks.push(check(format!("irrotational 801x41 S-variation {:.2e}", irr.s_variation), irr.s_variation < 1e-6));
    let rot = match &waves.rotational_fine {
        Ok(sol) => {
            let diag = FluxDiagnostics::compute(&sol.field).unwrap();
            checks.push(check(format!("omega=0.3 1601x161 S-variation {:.2e}", diag.s_variation), diag.s_variation < 1e-6));
            Some(diag)
        }
        Err(e) => {
            checks.push(check(format!("omega=0.3 solve failed: {e}"), false));
            None
        }
    };
    let flow = Arc::new(flow_at_froude(&Vorticity::constant(0.3), 1.1, 41));
    let mut worst: f64 = f64::INFINITY;
    for seed in 0..4 {
        let field = random_field(&flow, seed, 81, 5.0).unwrap();
        let s = flow_force_profile(&field).unwrap();
        worst = worst.min(relative_variation(&field.grid, &s));
    }
    checks.push(check(format!("negative control min S-variation over 4 seeds {worst:.2e}"), worst > 1e-2));
    suite.report(5, "flow-force invariance", checks, t);

    let t = Instant::now();
    let mut checks = Vec::new();
    let mut scan = |name: &str, d: &FluxDiagnostics| {
        let p = &d.positivity;
        checks.push(check(
            format!("{name} min Phi {:.2e}, {} sign-change columns", p.min_value, p.sign_change.iter().filter(|c| **c).count()),
            p.min_value >= -1e-8 && !p.any_sign_change(),
        ));
    };
    scan("irrotational 801x41", &irr);
    if let Some(d) = &rot {
        scan("omega=0.3 1601x161", d);
    }
    if let Some(sol) = rotational_mid {
        scan("omega=0.3 801x41", &FluxDiagnostics::compute(&sol.field).unwrap());
    }
    if rot.is_none() {
        checks.push(check("omega=0.3 1601x161 wave unavailable".into(), false));
    }
    suite.report(7, "positivity", checks, t);
}

fn criterion_6(suite: &mut Suite) -> Option<WaveSolution> {
    let t = Instant::now();
    let v = Vorticity::constant(0.3);
    let s = parameter_for_froude(&v, 41, Quadrature::Trapezoid, 1.1).unwrap();
    let fine_flow = solve_background(&v, s, 41).unwrap();
    let coarse_flow = solve_background(&v, s, 21).unwrap();
    let l = default_half_length(&fine_flow, decay_rate(&fine_flow).unwrap());
    let (coarse, fine) = match (solitary(&coarse_flow, 401, l), solitary(&fine_flow, 801, l)) {
        (Ok(c), Ok(f)) => (c, f),
        (c, f) => {
            let msg = format!("solve failed: {:?} {:?}", c.err(), f.err());
            suite.report(6, "identity suite convergence", vec![check(msg, false)], t);
            return None;
        }
    };
    let nc = FluxDiagnostics::compute(&coarse.field).unwrap().norms(&coarse.field.grid);
    let nf = FluxDiagnostics::compute(&fine.field).unwrap().norms_on(&fine.field.grid, 2);
    let checks = nc
        .as_array()
        .iter()
        .zip(nf.as_array())
        .map(|((name, c), (_, f))| {
            let factor = c / f;
            check(format!("{name} {c:.2e} -> {f:.2e} factor {factor:.2}"), (3.5..=4.5).contains(&factor))
        })
        .collect();
    suite.report(6, "identity suite convergence (omega=0.3, 401x21 -> 801x41)", checks, t);
    Some(fine)
}

fn criterion_8(suite: &mut Suite, flow41: &ShearFlow, l: f64, mid: &WaveSolution) {
    let t = Instant::now();
    let s = flow41.s;
    let solve_at = |n_q, n_p| solitary(&solve_background(&Vorticity::zero(), s, n_p).unwrap(), n_q, l);
    let (coarse, fine) = match (solve_at(401, 21), solve_at(1601, 81)) {
        (Ok(c), Ok(f)) => (c, f),
        (c, f) => {
            let msg = format!("solve failed: {:?} {:?}", c.err(), f.err());
            suite.report(8, "irrotational harmonicity", vec![check(msg, false)], t);
            return;
        }
    };
    let laplacian = |sol: &WaveSolution, collar: usize, stride: usize| {
        let phys = reconstruct(&sol.field).unwrap();
        let phi = waveforce::flow_force::flux_function(&sol.field).unwrap();
        physical_laplacian_with(&phys, &phi, collar).sup_on(stride)
    };
    let l_coarse = laplacian(&coarse, 2, 1);
    let l_mid_vs_coarse = laplacian(mid, 4, 2);
    let l_mid = laplacian(mid, 2, 1);
    let l_fine_vs_mid = laplacian(&fine, 4, 2);
    let f1 = l_coarse / l_mid_vs_coarse;
    let f2 = l_mid / l_fine_vs_mid;
    suite.report(
        8,
        "irrotational harmonicity",
        vec![
            check(format!("401x21 -> 801x41: {l_coarse:.2e} -> {l_mid_vs_coarse:.2e} factor {f1:.2}"), f1 >= 3.5),
            check(format!("801x41 -> 1601x81: {l_mid:.2e} -> {l_fine_vs_mid:.2e} factor {f2:.2}"), f2 >= 3.5),
        ],
        t,
    );
}

fn criterion_9(suite: &mut Suite, sol: &WaveSolution) {
    let t = Instant::now();
    let field = &sol.field;
    let flow = &field.flow;
    let d = flow.depth;
    let f2 = flow.froude * flow.froude;
    // Classical irrotational decay: tan(x)/x = F², x = τ d, profile sin(x p)/sin(x).
    let x = bisect(|x| x.tan() / x - f2, 1e-6, 0.5 * PI - 1e-9);
    let tau_oracle = x / d;
    let fit = match decay_rate_fit(field) {
        Ok(f) => f,
        Err(e) => {
            suite.report(9, "tail asymptotics", vec![check(format!("fit failed: {e}"), false)], t);
            return;
        }
    };
    let spec = sl_spectrum(flow, 1).unwrap();
    let rate_gap = (fit.tau - tau_oracle).abs() / tau_oracle;
    let rate_gap_sl = fit.rate_gap(&spec);
    let profile_gap = field
        .grid
        .p
        .iter()
        .zip(&fit.profile)
        .map(|(p, v)| (v - (x * p).sin() / x.sin()).abs())
        .fold(0.0, f64::max);

    let diag = FluxDiagnostics::compute(field).unwrap();
    let grid = &field.grid;
    let n_p = grid.n_p();
    let lo = fit.window.0;
    let hi = fit.window.1;
    let predicted = |p: f64| fit.a * fit.a * (x * p).sin() * x * (x * p).cos() / (x.sin().powi(2) * d.powi(3));
    let scale = grid.p.iter().map(|&p| predicted(p).abs()).fold(0.0, f64::max);
    let mut deviation: f64 = 0.0;
    let mut literal: f64 = 0.0;
    for i in 0..grid.n_q() {
        let q = grid.q[i];
        if q < lo || q > hi {
            continue;
        }
        for j in 0..n_p {
            let scaled = diag.phi[i * n_p + j] * (2.0 * fit.tau * q).exp();
            deviation = deviation.max((scaled - predicted(grid.p[j])).abs() / scale);
            literal = literal.max((scaled - 0.5 * predicted(grid.p[j])).abs() / (0.5 * scale));
        }
    }
    let report = flux_tail_expansion(field, &diag.phi, &fit, &spec);
    suite.report(
        9,
        "tail asymptotics",
        vec![
            check(format!("tau gap to classical root {rate_gap:.2e} (to sqrt(lambda_0) {rate_gap_sl:.2e})"), rate_gap < 0.02 && rate_gap_sl < 0.02),
            check(format!("profile sup gap {profile_gap:.2e}"), profile_gap < 0.02),
            check(format!("Phi e^(2 tau q) vs a^2 phi phi_p / H_p^3: {deviation:.2e} (library {:.2e})", report.sup_relative_deviation), deviation < 0.1),
            check(format!("ratio to the half-coefficient form {:.4}, deviation from it {literal:.2e} (not asserted)", report.ratio_to_half_coefficient), true),
        ],
        t,
    );
}

fn criterion_10(suite: &mut Suite) {
    let t = Instant::now();
    let d: f64 = 2.0;
    let kappa = bisect(|k| k.tanh() - k / d.powi(3), 1e-3, 1.5 * d.powi(3));
    let cases: Vec<(&str, ShearFlow, f64)> = {
        let irr = solve_background(&Vorticity::zero(), 0.5 / (d * d), 41).unwrap();
        let rot = solve_background(&Vorticity::constant(0.3), 0.3, 41).unwrap();
        let rot_wavelength = 2.0 * PI / (-sl_spectrum(&rot, 1).unwrap().lambdas[0]).sqrt();
        vec![("d=2", irr, 2.0 * PI * d / kappa), ("omega=0.3", rot, rot_wavelength)]
    };
    let mut checks = Vec::new();
    for (name, flow, wavelength) in &cases {
        let l = 10.0 * wavelength;
        let mut outcomes = BTreeMap::new();
        let mut ok = flow.froude < 1.0;
        for a0 in [0.0, 0.05, 0.2, 0.5] {
            match subcritical_probe(flow, a0, 801, l, &NewtonOptions::default()) {
                Ok(r) => {
                    let nontrivial_ok = r.outcome != ProbeOutcome::ConvergedNontrivial
                        || r.passes_tail_test
                        || r.tail_wavelength.is_some_and(|w| (w - wavelength).abs() / wavelength < 0.1);
                    ok &= !r.is_decaying_nontrivial() && nontrivial_ok;
                    *outcomes.entry(format!("{:?}", r.outcome)).or_insert(0) += 1;
                }
                Err(e) => {
                    ok = false;
                    *outcomes.entry(format!("error {e}")).or_insert(0) += 1;
                }
            }
        }
        checks.push(check(format!("{name} (F = {:.3}): {outcomes:?}", flow.froude), ok));
    }
    suite.report(10, "nonexistence probe", checks, t);
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Every file in the directory, with `seconds` fields dropped from the manifest.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let bytes = std::fs::read(&path).unwrap();
        let bytes = if name == "manifest.json" {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            for s in v["stages"].as_array_mut().unwrap() {
                s.as_object_mut().unwrap().remove("seconds");
            }
            serde_json::to_vec(&v).unwrap()
        } else {
            bytes
        };
        out.insert(name, bytes);
    }
    out
}

fn criterion_11(suite: &mut Suite) {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut checks = Vec::new();
    for name in ["solitary", "rotational", "periodic", "probe", "background"] {
        let cfg = RunConfig::load(&configs_dir().join(format!("{name}.toml"))).unwrap();
        let runs: Vec<_> = (0..2)
            .map(|k| {
                let dir = tmp.path().join(format!("{name}-{k}"));
                let manifest = run_pipeline(&cfg, &dir).unwrap();
                (manifest, snapshot(&dir))
            })
            .collect();
        let (m, a) = &runs[0];
        let b = &runs[1].1;
        let listed: Vec<&String> = m.files.iter().collect();
        let on_disk: Vec<&String> = a.keys().collect();
        let mut listed_sorted = listed.clone();
        listed_sorted.sort();
        let identical = a == b;
        let exact_listing = listed_sorted == on_disk;
        checks.push(check(
            format!("{name}: {} files, identical {identical}, manifest complete {exact_listing}, all stages ok {}", a.len(), m.succeeded()),
            identical && exact_listing && m.succeeded(),
        ));
    }
    suite.report(11, "determinism", checks, t);
}

fn main() {
    let started = Instant::now();
    let mut suite = Suite { failures: Vec::new(), lines: BTreeMap::new() };
    criterion_1(&mut suite);
    criterion_2(&mut suite);
    criterion_3(&mut suite);
    let wave = criterion_4(&mut suite);
    let rotational_mid = criterion_6(&mut suite);
    match wave {
        Some((flow41, l, sol)) => {
            let rot_flow = flow_at_froude(&Vorticity::constant(0.3), 1.1, 161);
            let rot_l = default_half_length(&rot_flow, decay_rate(&rot_flow).unwrap());
            let waves = Waves {
                irrotational: sol,
                irrotational_l: l,
                rotational_fine: solitary(&rot_flow, 1601, rot_l),
            };
            criterion_5_and_7(&mut suite, &waves, &rotational_mid);
            criterion_8(&mut suite, &flow41, waves.irrotational_l, &waves.irrotational);
            criterion_9(&mut suite, &waves.irrotational);
        }
        None => {
            for n in [5, 7, 8, 9] {
                suite.report(n, "needs the F=1.1 solitary wave", vec![check("unavailable".into(), false)], Instant::now());
            }
        }
    }
    criterion_10(&mut suite);
    criterion_11(&mut suite);
    for line in suite.lines.values() {
        println!("{line}");
    }
    suite.failures.sort_unstable();
    println!("acceptance: {} of 11 criteria passed in {:.1}s", 11 - suite.failures.len(), started.elapsed().as_secs_f64());
    if !suite.failures.is_empty() {
        println!("acceptance: failed criteria {:?}", suite.failures);
        std::process::exit(1);
    }
}

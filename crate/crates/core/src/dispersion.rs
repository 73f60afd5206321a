//! The dispersion Sturm–Liouville problem
//!
//! ```text
//! -(φ_p / H_p^3)_p = λ φ / H_p   on (0, 1),
//! φ(0) = 0,   -φ_p / H_p^3 + φ = 0   at p = 1,
//! ```
//!
//! discretized by second-order differences with a ghost-point Robin closure.
//! The discrete pencil `K φ = λ M φ` is symmetric with `M` diagonal (trapezoid
//! weights against `1/H_p`). Face coefficients are `1/avg(H_p^3)` so that the
//! discrete critical condition `λ_0 = 0` coincides with the trapezoid Froude
//! number being exactly one.

use std::f64::consts::{FRAC_PI_4, PI};

use crate::background::ShearFlow;
use crate::banded::BandedMatrix;
use crate::error::{Result, WaveError};
use crate::stencil;

/// Values `|φ| < ZERO_GUARD` do not take part in sign-change counting.
pub const ZERO_GUARD: f64 = 1e-12;

/// Lowest eigenpairs of the dispersion problem.
#[derive(Debug, Clone)]
pub struct SlSpectrum {
    pub p: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Eigenfunctions on the full p-grid (`φ(0) = 0` included).
    pub phis: Vec<Vec<f64>>,
    pub zero_counts: Vec<usize>,
    pub tau0: Option<f64>,
    pub lambda0_shooting: f64,
    /// Richardson extrapolation of the matrix `λ_0` from this grid and the
    /// grid with every other node; `None` when `n_p - 1` is odd.
    pub lambda0_extrapolated: Option<f64>,
    /// Weights of the discrete `L²(0,1; H_p^{-1})` inner product.
    pub weights: Vec<f64>,
    dp: f64,
}

impl SlSpectrum {
    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn dp(&self) -> f64 {
        self.dp
    }

    pub fn phi_p(&self, j: usize) -> Vec<f64> {
        stencil::derivative(&self.phis[j], self.dp)
    }

    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.weights
            .iter()
            .zip(self.phis[i].iter().zip(&self.phis[j]))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// `max_{i,j} |⟨φ_i, φ_j⟩ - δ_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.n_modes();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(i, j) - target).abs());
            }
        }
        worst
    }

    /// Gap between the shooting value of `λ_0` and the best matrix estimate.
    pub fn shooting_gap(&self) -> f64 {
        let matrix = self.lambda0_extrapolated.unwrap_or(self.lambdas[0]);
        (self.lambda0_shooting - matrix).abs()
    }

    /// `φ_j / φ_j(1)`.
    pub fn surface_normalized(&self, j: usize) -> Vec<f64> {
        let top = *self.phis[j].last().unwrap();
        self.phis[j].iter().map(|v| v / top).collect()
    }
}

/// Coefficients of the discrete pencil on a p-grid with spacing `h`.
struct Pencil {
    h: f64,
    /// `1/H_p` at nodes.
    b: Vec<f64>,
    /// Face values of `1/H_p^3`, `faces[k]` between nodes `k` and `k+1`.
    faces: Vec<f64>,
    /// `1/H_p^3` at nodes, for shooting.
    a: Vec<f64>,
}

impl Pencil {
    fn new(h_p: &[f64], h: f64) -> Self {
        let cubes: Vec<f64> = h_p.iter().map(|v| v.powi(3)).collect();
        Pencil {
            h,
            b: h_p.iter().map(|v| 1.0 / v).collect(),
            faces: cubes.windows(2).map(|c| 2.0 / (c[0] + c[1])).collect(),
            a: cubes.iter().map(|c| 1.0 / c).collect(),
        }
    }

    fn n(&self) -> usize {
        self.b.len() - 1
    }

    /// Mass diagonal for unknowns `1..=N`.
    fn mass(&self) -> Vec<f64> {
        let n = self.n();
        (1..=n)
            .map(|j| if j == n { 0.5 * self.h * self.b[j] } else { self.h * self.b[j] })
            .collect()
    }

    /// Symmetric tridiagonal `M^{-1/2} K M^{-1/2}` as (diagonal, offdiagonal).
    fn symmetric(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let m = self.mass();
        let h = self.h;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        for r in 0..n {
            let j = r + 1;
            let k = if j == n {
                self.faces[j - 1] / h - 1.0
            } else {
                (self.faces[j - 1] + self.faces[j]) / h
            };
            diag[r] = k / m[r];
            if r + 1 < n {
                off[r] = -self.faces[j] / h / (m[r] * m[r + 1]).sqrt();
            }
        }
        (diag, off)
    }
}

fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut d = diag[0] - x;
    if d < 0.0 {
        count += 1;
    }
    for k in 1..diag.len() {
        if d == 0.0 {
            d = tiny;
        }
        d = diag[k] - x - off[k - 1] * off[k - 1] / d;
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn gershgorin(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..diag.len() {
        let r = if k > 0 { off[k - 1].abs() } else { 0.0 } + off.get(k).map_or(0.0, |v| v.abs());
        lo = lo.min(diag[k] - r);
        hi = hi.max(diag[k] + r);
    }
    (lo, hi)
}

/// The `index`-th smallest eigenvalue by bisection on the Sturm count.
fn bisect_eigenvalue(diag: &[f64], off: &[f64], index: usize, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn inverse_iteration(diag: &[f64], off: &[f64], lambda: f64, scale: f64) -> Result<Vec<f64>> {
    let n = diag.len();
    let shift = lambda + 64.0 * f64::EPSILON * scale;
    let mut t = BandedMatrix::zeros(n, 1, 1);
    for k in 0..n {
        t.add(k, k, diag[k] - shift);
        if k + 1 < n {
            t.add(k, k + 1, off[k]);
            t.add(k + 1, k, off[k]);
        }
    }
    let lu = t.factor()?;
    let mut v: Vec<f64> = (0..n).map(|k| 1.0 + 0.1 * ((k as f64) * 0.731).sin()).collect();
    for _ in 0..4 {
        lu.solve_in_place(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(WaveError::Solver("inverse iteration broke down".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

fn matrix_eigenvalues(pencil: &Pencil, count: usize) -> Vec<f64> {
    let (diag, off) = pencil.symmetric();
    let (lo, hi) = gershgorin(&diag, &off);
    (0..count).map(|j| bisect_eigenvalue(&diag, &off, j, lo, hi)).collect()
}

/// Prüfer angle at `p = 1` for `θ' = cos²θ / a + λ b sin²θ`, `θ(0) = 0`.
fn prufer_endpoint(pencil: &Pencil, lambda: f64) -> f64 {
    let rhs = |theta: f64, a: f64, b: f64| {
        let (s, c) = theta.sin_cos();
        c * c / a + lambda * b * s * s
    };
    let n = pencil.n();
    let (a, b) = (&pencil.a, &pencil.b);
    let mut theta = 0.0;
    if n % 2 == 0 {
        let step = 2.0 * pencil.h;
        for k in (0..n).step_by(2) {
            let k1 = rhs(theta, a[k], b[k]);
            let k2 = rhs(theta + 0.5 * step * k1, a[k + 1], b[k + 1]);
            let k3 = rhs(theta + 0.5 * step * k2, a[k + 1], b[k + 1]);
            let k4 = rhs(theta + step * k3, a[k + 2], b[k + 2]);
            theta += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    } else {
        let step = pencil.h;
        for k in 0..n {
            let am = 0.5 * (a[k] + a[k + 1]);
            let bm = 0.5 * (b[k] + b[k + 1]);
            let k1 = rhs(theta, a[k], b[k]);
            let k2 = rhs(theta + 0.5 * step * k1, am, bm);
            let k3 = rhs(theta + 0.5 * step * k2, am, bm);
            let k4 = rhs(theta + step * k3, a[k + 1], b[k + 1]);
            theta += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    theta
}

/// Eigenvalue of mode `j` by shooting: `θ(1) = π/4 + jπ`.
fn shoot(pencil: &Pencil, j: usize, guess: f64) -> Result<f64> {
    let target = FRAC_PI_4 + j as f64 * PI;
    let g = |l: f64| prufer_endpoint(pencil, l) - target;
    let mut width = 1e-3 * guess.abs().max(1.0);
    let (mut lo, mut hi) = (guess - width, guess + width);
    let mut tries = 0;
    while g(lo) > 0.0 || g(hi) < 0.0 {
        width *= 2.0;
        lo = guess - width;
        hi = guess + width;
        tries += 1;
        if tries > 80 {
            return Err(WaveError::Solver(format!(
                "shooting could not bracket mode {j} near {guess}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn count_sign_changes(values: &[f64], guard: f64) -> usize {
    let mut last = 0.0f64;
    let mut changes = 0;
    for &v in values {
        if v.abs() < guard {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            changes += 1;
        }
        last = v;
    }
    changes
}

pub fn sl_spectrum(flow: &ShearFlow, n_modes: usize) -> Result<SlSpectrum> {
    let n = flow.n_p() - 1;
    if n_modes == 0 || n_modes > n {
        return Err(WaveError::Input(format!(
            "n_modes must lie in 1..={n}, got {n_modes}"
        )));
    }
    let pencil = Pencil::new(&flow.h_p, flow.dp());
    let (diag, off) = pencil.symmetric();
    let (lo, hi) = gershgorin(&diag, &off);
    let scale = lo.abs().max(hi.abs());
    let mass = pencil.mass();

    let mut lambdas = Vec::with_capacity(n_modes);
    let mut phis: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for j in 0..n_modes {
        let lambda = bisect_eigenvalue(&diag, &off, j, lo, hi);
        let mut v = inverse_iteration(&diag, &off, lambda, scale)?;
        for prev in &phis {
            let dot: f64 = v
                .iter()
                .zip(&mass)
                .zip(&prev[1..])
                .map(|((vk, m), pk)| vk * m.sqrt() * pk)
                .sum();
            for ((vk, m), pk) in v.iter_mut().zip(&mass).zip(&prev[1..]) {
                *vk -= dot * m.sqrt() * pk;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut phi = Vec::with_capacity(n + 1);
        phi.push(0.0);
        phi.extend(v.iter().zip(&mass).map(|(vk, m)| vk / norm / m.sqrt()));
        if phi[1] < 0.0 {
            phi.iter_mut().for_each(|x| *x = -*x);
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(WaveError::Solver(format!("non-finite eigenvector for mode {j}")));
        }
        lambdas.push(lambda);
        phis.push(phi);
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(WaveError::Solver("eigenvalues not strictly increasing".into()));
    }

    let zero_counts = phis.iter().map(|phi| count_sign_changes(&phi[1..], ZERO_GUARD)).collect();
    let lambda0_shooting = shoot(&pencil, 0, lambdas[0])?;
    let lambda0_extrapolated = if n % 2 == 0 && n >= 8 {
        let coarse_hp: Vec<f64> = flow.h_p.iter().step_by(2).copied().collect();
        let coarse = matrix_eigenvalues(&Pencil::new(&coarse_hp, 2.0 * flow.dp()), 1)[0];
        Some((4.0 * lambdas[0] - coarse) / 3.0)
    } else {
        None
    };

    let mut weights = vec![0.0];
    weights.extend(mass);

    Ok(SlSpectrum {
        p: flow.p.clone(),
        tau0: (lambdas[0] < 0.0).then(|| (-lambdas[0]).sqrt()),
        lambdas,
        phis,
        zero_counts,
        lambda0_shooting,
        lambda0_extrapolated,
        weights,
        dp: flow.dp(),
    })
}

/// Outcome of the criticality test `λ_0 < 0 ⇔ F < 1` (and `λ_1 > 0` then).
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalityReport {
    pub froude: f64,
    pub lambda0: f64,
    pub lambda1: Option<f64>,
    pub subcritical: bool,
    pub lambda0_negative: bool,
    pub lambda1_positive: Option<bool>,
    /// `|F - 1|` or `|λ_0|` below tolerance: no sign is asserted.
    pub boundary_case: bool,
}

pub const CRITICAL_FROUDE_TOL: f64 = 1e-9;
pub const CRITICAL_LAMBDA_TOL: f64 = 1e-6;

pub fn criticality_check(flow: &ShearFlow, spectrum: &SlSpectrum) -> Result<CriticalityReport> {
    let froude = flow.froude;
    let lambda0 = spectrum.lambdas[0];
    let lambda1 = spectrum.lambdas.get(1).copied();
    let report = CriticalityReport {
        froude,
        lambda0,
        lambda1,
        subcritical: froude < 1.0,
        lambda0_negative: lambda0 < 0.0,
        lambda1_positive: lambda1.map(|l| l > 0.0),
        boundary_case: (froude - 1.0).abs() < CRITICAL_FROUDE_TOL
            || lambda0.abs() < CRITICAL_LAMBDA_TOL,
    };
    if report.boundary_case {
        return Ok(report);
    }
    if report.subcritical != report.lambda0_negative {
        return Err(WaveError::InvariantViolation(format!(
            "F = {froude} but λ_0 = {lambda0}"
        )));
    }
    if report.subcritical && report.lambda1_positive == Some(false) {
        return Err(WaveError::InvariantViolation(format!(
            "F = {froude} < 1 but λ_1 = {}",
            lambda1.unwrap()
        )));
    }
    Ok(report)
}

/// Both sides of `∫_0^p (φ_p²/H_p³ - τ² φ²/H_p) = φ φ_p / H_p³` at every node.
///
/// The left side uses face differences for `φ_p²` and trapezoid weights for
/// `φ²`; the right side uses the face-averaged flux, and the Robin flux `φ(1)`
/// at the surface. For a discrete eigenpair the two agree by summation by parts.
pub fn sl_integral_identity_profile(
    flow: &ShearFlow,
    phi: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if lambda <= 0.0 {
        return Err(WaveError::Domain(format!(
            "identity is stated for λ = τ² > 0, got λ = {lambda}"
        )));
    }
    if phi.len() != flow.n_p() {
        return Err(WaveError::Input("eigenfunction length does not match the p-grid".into()));
    }
    let pencil = Pencil::new(&flow.h_p, flow.dp());
    let h = pencil.h;
    let n = pencil.n();
    let flux: Vec<f64> = (0..n).map(|k| pencil.faces[k] * (phi[k + 1] - phi[k]) / h).collect();
    let mut lhs = vec![0.0; n + 1];
    let mut rhs = vec![0.0; n + 1];
    let mut grad = 0.0;
    let mut mass = 0.0;
    for m in 1..=n {
        let k = m - 1;
        grad += h * flux[k] * flux[k] / pencil.faces[k];
        let left = pencil.b[k] * phi[k] * phi[k];
        let right = pencil.b[m] * phi[m] * phi[m];
        mass += 0.5 * h * (left + right);
        lhs[m] = grad - lambda * mass;
        rhs[m] = if m == n {
            phi[n] * phi[n]
        } else {
            phi[m] * 0.5 * (flux[m - 1] + flux[m])
        };
    }
    Ok((lhs, rhs))
}

pub fn sl_integral_identity(
    flow: &ShearFlow,
    phi: &[f64],
    lambda: f64,
    p: f64,
) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(WaveError::Domain(format!("p = {p} outside [0, 1]")));
    }
    let (lhs, rhs) = sl_integral_identity_profile(flow, phi, lambda)?;
    let m = (p / flow.dp()).round() as usize;
    Ok((lhs[m], rhs[m]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{solve_background, Vorticity};

    fn irrotational(d: f64, n_p: usize) -> ShearFlow {
        solve_background(&Vorticity::zero(), 0.5 / (d * d), n_p).unwrap()
    }

    #[test]
    fn critical_flow_has_zero_ground_eigenvalue() {
        let spec = sl_spectrum(&irrotational(1.0, 2001), 3).unwrap();
        assert!(spec.lambdas[0].abs() < 1e-6, "{}", spec.lambdas[0]);
        assert!(spec.lambda0_shooting.abs() < 1e-6);
    }

    #[test]
    fn sturm_count_matches_diagonal_matrix() {
        let diag = [3.0, -1.0, 2.0, 5.0];
        let off = [0.0, 0.0, 0.0];
        assert_eq!(sturm_count(&diag, &off, 0.0), 1);
        assert_eq!(sturm_count(&diag, &off, 4.0), 3);
    }

    #[test]
    fn eigenfunctions_signed_and_orthonormal() {
        let flow = solve_background(&Vorticity::Polynomial(vec![0.1, 0.6]), 0.3, 801).unwrap();
        let spec = sl_spectrum(&flow, 6).unwrap();
        assert!(spec.orthonormality_defect() < 1e-8);
        for (j, phi) in spec.phis.iter().enumerate() {
            assert!(phi[1] > 0.0);
            assert_eq!(spec.zero_counts[j], j);
        }
    }

    #[test]
    fn supercritical_spectrum_is_positive() {
        let flow = irrotational(0.8, 1001);
        let spec = sl_spectrum(&flow, 2).unwrap();
        assert!(spec.lambdas[0] > 0.0);
        assert!(spec.tau0.is_none());
        let report = criticality_check(&flow, &spec).unwrap();
        assert!(!report.subcritical && !report.lambda0_negative);
    }

    #[test]
    fn subcritical_report() {
        let flow = irrotational(2.0, 1001);
        let spec = sl_spectrum(&flow, 2).unwrap();
        let report = criticality_check(&flow, &spec).unwrap();
        assert!(report.subcritical && report.lambda0_negative);
        assert_eq!(report.lambda1_positive, Some(true));
    }

    #[test]
    fn critical_flow_reported_as_boundary() {
        let flow = irrotational(1.0, 1001);
        let spec = sl_spectrum(&flow, 2).unwrap();
        assert!(criticality_check(&flow, &spec).unwrap().boundary_case);
    }

    #[test]
    fn bad_mode_count_rejected() {
        let flow = irrotational(1.0, 11);
        assert!(sl_spectrum(&flow, 0).is_err());
        assert!(sl_spectrum(&flow, 11).is_err());
    }

    #[test]
    fn integral_identity_requires_positive_lambda() {
        let flow = irrotational(2.0, 201);
        let spec = sl_spectrum(&flow, 2).unwrap();
        let err = sl_integral_identity(&flow, &spec.phis[0], spec.lambdas[0], 0.5).unwrap_err();
        assert!(matches!(err, WaveError::Domain(_)));
    }

    #[test]
    fn integral_identity_at_bed_is_zero() {
        let flow = irrotational(1.0, 201);
        let spec = sl_spectrum(&flow, 2).unwrap();
        let (l, r) = sl_integral_identity(&flow, &spec.phis[1], spec.lambdas[1], 0.0).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
    }

    #[test]
    fn odd_interval_count_still_shoots() {
        let flow = irrotational(1.5, 500);
        let spec = sl_spectrum(&flow, 1).unwrap();
        assert!(spec.lambda0_extrapolated.is_none());
        assert!((spec.lambda0_shooting - spec.lambdas[0]).abs() < 1e-4 * spec.lambdas[0].abs());
    }
}

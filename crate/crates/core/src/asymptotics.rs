//! Exponential tails of solitary waves and the matching expansion of `Φ`.

use crate::background::ShearFlow;
use crate::dispersion::{count_sign_changes, SlSpectrum, ZERO_GUARD};
use crate::error::{Result, WaveError};
use crate::field::WaveField;
use crate::stencil;

/// Default fit window as fractions of `L`.
pub const WINDOW: (f64, f64) = (0.4, 0.8);

/// Least-squares fit `η ≈ a e^{-τ q}` on a window of the right half-line.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub tau: f64,
    pub a: f64,
    pub window: (f64, f64),
    /// Column `w(q₁, ·) / w(q₁, 1)` at the window start.
    pub profile: Vec<f64>,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
    /// `sup |w e^{τ q} - a · profile|` over the window.
    pub remainder_norm: f64,
}

pub fn decay_rate_fit(field: &WaveField) -> Result<DecayFit> {
    decay_rate_fit_on(field, WINDOW.0, WINDOW.1)
}

/// Fit on `[f1 L, f2 L]`.
pub fn decay_rate_fit_on(field: &WaveField, f1: f64, f2: f64) -> Result<DecayFit> {
    let grid = &field.grid;
    let l = grid.half_length;
    let (q1, q2) = (f1 * l, f2 * l);
    if !(0.0 <= q1 && q1 < q2 && q2 <= l) {
        return Err(WaveError::Input(format!("fit window [{q1}, {q2}] outside [0, {l}]")));
    }
    let eta = field.surface();
    let cols: Vec<usize> = (0..grid.n_q())
        .filter(|&i| grid.q[i] >= q1 - 1e-12 && grid.q[i] <= q2 + 1e-12)
        .collect();
    if cols.len() < 3 {
        return Err(WaveError::Fit(format!("only {} nodes in the fit window", cols.len())));
    }
    if let Some(&i) = cols.iter().find(|&&i| !(eta[i] > 0.0)) {
        return Err(WaveError::Fit(format!("surface tail not positive at q = {}", grid.q[i])));
    }
    if cols.windows(2).any(|w| eta[w[1]] >= eta[w[0]]) {
        return Err(WaveError::Fit("surface tail is not monotone".into()));
    }
    let xs: Vec<f64> = cols.iter().map(|&i| grid.q[i]).collect();
    let ys: Vec<f64> = cols.iter().map(|&i| eta[i].ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let tau = -slope;
    let a = intercept.exp();

    let n_p = grid.n_p();
    let first = cols[0];
    let top = field.at(first, n_p - 1);
    let profile: Vec<f64> = (0..n_p).map(|j| field.at(first, j) / top).collect();
    let mut remainder_norm: f64 = 0.0;
    for &i in &cols {
        let scale = (tau * grid.q[i]).exp();
        for j in 0..n_p {
            remainder_norm = remainder_norm.max((field.at(i, j) * scale - a * profile[j]).abs());
        }
    }
    Ok(DecayFit {
        tau,
        a,
        window: (xs[0], *xs.last().unwrap()),
        profile,
        r_squared,
        remainder_norm,
    })
}

impl DecayFit {
    /// Fits are accepted when the window spans `3/τ` and `R² ≥ 0.999`.
    pub fn is_accepted(&self) -> bool {
        self.window.1 - self.window.0 >= 3.0 / self.tau && self.r_squared >= 0.999
    }

    /// `|τ - √λ_0| / √λ_0`.
    pub fn rate_gap(&self, spectrum: &SlSpectrum) -> f64 {
        let expected = spectrum.lambdas[0].sqrt();
        (self.tau - expected).abs() / expected
    }

    /// Sup-norm distance of the fitted profile from `φ_0/φ_0(1)`, relative to
    /// the sup of the latter.
    pub fn profile_gap(&self, spectrum: &SlSpectrum) -> f64 {
        let expected = spectrum.surface_normalized(0);
        let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.profile
            .iter()
            .zip(&expected)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale
    }
}

/// `tan(τ d)/(τ d)` against `F²` for an irrotational background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalCheck {
    pub lhs: f64,
    pub froude_squared: f64,
    pub relative_gap: f64,
}

impl ClassicalCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.relative_gap <= tol
    }
}

pub fn classical_decay_crosscheck(flow: &ShearFlow, tau: f64) -> Result<ClassicalCheck> {
    if !flow.is_irrotational() {
        return Err(WaveError::Precondition("classical relation needs an irrotational flow".into()));
    }
    let k = tau * flow.depth;
    let lhs = k.tan() / k;
    let f2 = flow.froude * flow.froude;
    Ok(ClassicalCheck {
        lhs,
        froude_squared: f2,
        relative_gap: (lhs - f2).abs() / f2,
    })
}

/// `φ̂ φ̂_p / H_p³` with `φ̂ = φ_j / φ_j(1)`: the `p`-profile multiplying
/// `a² e^{-2τq}` in the tail of `Φ`.
pub fn tail_profile(spectrum: &SlSpectrum, h_p: &[f64], j: usize) -> Vec<f64> {
    let phi = spectrum.surface_normalized(j);
    let phi_p = stencil::derivative(&phi, spectrum.dp());
    phi.iter()
        .zip(&phi_p)
        .zip(h_p)
        .map(|((f, fp), hp)| f * fp / hp.powi(3))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailExpansionReport {
    /// `sup |Φ e^{2τq} - a² φ̂φ̂_p/H_p³|` over the window, relative to the
    /// sup of the predicted profile.
    pub sup_relative_deviation: f64,
    /// Mean of `Φ e^{2τq}` over the prediction with an extra factor `1/2`,
    /// at the column nearest the window centre (sup-weighted).
    pub ratio_to_half_coefficient: f64,
    pub predicted: Vec<f64>,
    pub limit_nonnegative: bool,
    pub limit_sign_changes: usize,
}

/// Compare `Φ e^{2τ q}` with `a² φ̂ φ̂_p / H_p³` on the fit window.
pub fn flux_tail_expansion(
    field: &WaveField,
    phi: &[f64],
    fit: &DecayFit,
    spectrum: &SlSpectrum,
) -> TailExpansionReport {
    let grid = &field.grid;
    let n_p = grid.n_p();
    let profile = tail_profile(spectrum, &field.flow.h_p, 0);
    let predicted: Vec<f64> = profile.iter().map(|v| fit.a * fit.a * v).collect();
    let scale = predicted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = ZERO_GUARD * scale;
    let limit_sign_changes = count_sign_changes(&predicted[1..], floor.max(f64::MIN_POSITIVE));
    let limit_nonnegative = predicted.iter().all(|v| *v >= -floor);
    if scale == 0.0 && phi.iter().all(|v| *v == 0.0) {
        return TailExpansionReport {
            sup_relative_deviation: 0.0,
            ratio_to_half_coefficient: f64::NAN,
            predicted,
            limit_nonnegative,
            limit_sign_changes,
        };
    }
    let cols: Vec<usize> = (0..grid.n_q())
        .filter(|&i| grid.q[i] >= fit.window.0 - 1e-12 && grid.q[i] <= fit.window.1 + 1e-12)
        .collect();
    let mut dev: f64 = 0.0;
    for &i in &cols {
        let growth = (2.0 * fit.tau * grid.q[i]).exp();
        for j in 0..n_p {
            dev = dev.max((phi[i * n_p + j] * growth - predicted[j]).abs());
        }
    }
    let mid = cols[cols.len() / 2];
    let growth = (2.0 * fit.tau * grid.q[mid]).exp();
    let (num, den) = (0..n_p).fold((0.0, 0.0), |(n, d), j| {
        let half = 0.5 * predicted[j];
        (n + phi[mid * n_p + j] * growth * half, d + half * half)
    });
    TailExpansionReport {
        sup_relative_deviation: dev / scale,
        ratio_to_half_coefficient: num / den,
        predicted,
        limit_nonnegative,
        limit_sign_changes,
    }
}

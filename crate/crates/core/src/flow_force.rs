//! Flow force `S`, the relative flow force flux function `Φ`, and residuals
//! of the identities `Φ` satisfies on solutions.

use crate::background::ShearFlow;
use crate::dispersion::count_sign_changes;
use crate::error::Result;
use crate::field::{BoundaryCondition, StripGrid, WaveField};
use crate::quadrature;

/// Cells where both `|Φ_p|` and `|Φ_p h_q - Φ_q h_p|` vanish to this level
/// get `B₁ = 0`, `B₂ = 1`.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-14;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn column_flow_force(field: &WaveField, i: usize) -> f64 {
    let flow = &field.flow;
    let n_p = field.grid.n_p();
    let total = flow.vorticity.total();
    let integrand: Vec<f64> = (0..n_p)
        .map(|j| {
            let k = field.grid.idx(i, j);
            let (hq, hp) = (field.w_q[k], field.h_p[k]);
            let h = flow.h[j] + field.w[k];
            ((1.0 - hq * hq) / (2.0 * hp * hp) - h - flow.vorticity.primitive[j] + total + flow.bernoulli) * hp
        })
        .collect();
    quadrature::integrate(&integrand, flow.dp(), flow.rule())
}

/// `S` on column `i`.
pub fn flow_force(field: &WaveField, i: usize) -> Result<f64> {
    field.check_unidirectional()?;
    Ok(column_flow_force(field, i))
}

/// `S` on every column.
pub fn flow_force_profile(field: &WaveField) -> Result<Vec<f64>> {
    field.check_unidirectional()?;
    Ok((0..field.grid.n_q()).map(|i| column_flow_force(field, i)).collect())
}

/// `S₊`, the flow force of the undisturbed background.
pub fn background_flow_force(flow: &ShearFlow) -> f64 {
    let total = flow.vorticity.total();
    let integrand: Vec<f64> = (0..flow.n_p())
        .map(|j| {
            let hp = flow.h_p[j];
            (0.5 / (hp * hp) - flow.h[j] - flow.vorticity.primitive[j] + total + flow.bernoulli) * hp
        })
        .collect();
    quadrature::integrate(&integrand, flow.dp(), flow.rule())
}

/// `max_q |S(q) - S(0)| / |S(0)|` over columns that are not pinned by a
/// Dirichlet condition.
pub fn relative_variation(grid: &StripGrid, s: &[f64]) -> f64 {
    let (lo, hi) = match grid.bc {
        BoundaryCondition::Periodic => (0, grid.n_q()),
        _ => (1, grid.n_q() - 1),
    };
    let reference = s[grid.center()];
    s[lo..hi]
        .iter()
        .fold(0.0f64, |m, v| m.max((v - reference).abs()))
        / reference.abs()
}

/// `Φ(q, p) = ∫_0^p (w_p² / (h_p H_p²) - w_q² / h_p) dp'`.
pub fn flux_function(field: &WaveField) -> Result<Vec<f64>> {
    field.check_unidirectional()?;
    let flow = &field.flow;
    let n_p = field.grid.n_p();
    let mut phi = Vec::with_capacity(field.w.len());
    for i in 0..field.grid.n_q() {
        let integrand: Vec<f64> = (0..n_p)
            .map(|j| {
                let k = field.grid.idx(i, j);
                let (wp, wq, hp) = (field.w_p[k], field.w_q[k], field.h_p[k]);
                let hb = flow.h_p[j];
                (wp * wp / (hb * hb) - wq * wq) / hp
            })
            .collect();
        phi.extend(quadrature::cumulative(&integrand, flow.dp(), flow.rule()));
    }
    Ok(phi)
}

/// `(1 + w_q²)/h_p² - 1/H_p²` without cancellation.
fn bernoulli_gap(hb: f64, w_q: f64, w_p: f64, h_p: f64) -> f64 {
    (hb * hb * w_q * w_q - 2.0 * hb * w_p - w_p * w_p) / (h_p * h_p * hb * hb)
}

/// Residual of `Φ_q = -w_q((1 + w_q²)/h_p² - 1/H_p²)`, with `Φ_q` by
/// differences of `phi`.
pub fn flux_q_identity(field: &WaveField, phi: &[f64]) -> Vec<f64> {
    let phi_q = field.grid.d_q(phi);
    let n_p = field.grid.n_p();
    (0..phi.len())
        .map(|k| {
            let hb = field.flow.h_p[k % n_p];
            phi_q[k] + field.w_q[k] * bernoulli_gap(hb, field.w_q[k], field.w_p[k], field.h_p[k])
        })
        .collect()
}

/// `Φ` rebuilt by integrating the `Φ_q` identity inward from `q = +L`,
/// where it is taken to vanish.
pub fn flux_from_q_identity(field: &WaveField) -> Vec<f64> {
    let grid = &field.grid;
    let (n_q, n_p, dq) = (grid.n_q(), grid.n_p(), grid.dq());
    let rate: Vec<f64> = (0..field.w.len())
        .map(|k| {
            let hb = field.flow.h_p[k % n_p];
            -field.w_q[k] * bernoulli_gap(hb, field.w_q[k], field.w_p[k], field.h_p[k])
        })
        .collect();
    let mut out = vec![0.0; rate.len()];
    for i in (0..n_q - 1).rev() {
        for j in 0..n_p {
            let (a, b) = (grid.idx(i, j), grid.idx(i + 1, j));
            out[a] = out[b] - 0.5 * dq * (rate[a] + rate[b]);
        }
    }
    out
}

/// `Φ(q, 1) - η² - 2(S(q) - S₊)` per column.
pub fn boundary_identity(field: &WaveField, phi: &[f64], s: &[f64], s_plus: f64) -> Vec<f64> {
    let n_p = field.grid.n_p();
    (0..field.grid.n_q())
        .map(|i| {
            let eta = field.at(i, n_p - 1);
            phi[i * n_p + n_p - 1] - eta * eta - 2.0 * (s[i] - s_plus)
        })
        .collect()
}

/// Derivatives of `Φ` by centered differences on its grid.
#[derive(Debug, Clone)]
pub struct FluxDerivatives {
    pub phi_q: Vec<f64>,
    pub phi_p: Vec<f64>,
    pub phi_qq: Vec<f64>,
    pub phi_qp: Vec<f64>,
    pub phi_pp: Vec<f64>,
}

impl FluxDerivatives {
    pub fn new(grid: &StripGrid, phi: &[f64]) -> Self {
        let phi_p = grid.d_p(phi);
        FluxDerivatives {
            phi_q: grid.d_q(phi),
            phi_qq: grid.d_qq(phi),
            phi_qp: grid.d_q(&phi_p),
            phi_pp: grid.d_pp(phi),
            phi_p,
        }
    }
}

/// The three `w_p` identities: `w_p² = H_p² w_q² + H_p² h_p Φ_p`,
/// `w_p w_q = (H_p h_p / 2)(h_p Φ_q - h_q Φ_p)` and the resolved form
/// `w_p² = (H_p² h_p / 2)(B₁ Φ_q + B₂ Φ_p)`.
#[derive(Debug, Clone)]
pub struct WpResiduals {
    pub square: Vec<f64>,
    pub product: Vec<f64>,
    pub resolved: Vec<f64>,
    /// `(H_p² h_p / 2)(Φ_p + √(Φ_p² + (Φ_p h_q - Φ_q h_p)²))`.
    pub wp_squared_from_root: Vec<f64>,
}

pub fn wp_identities(field: &WaveField, d: &FluxDerivatives, coeffs: &EllipticCoefficients) -> WpResiduals {
    let n = field.w.len();
    let n_p = field.grid.n_p();
    let mut out = WpResiduals {
        square: vec![0.0; n],
        product: vec![0.0; n],
        resolved: vec![0.0; n],
        wp_squared_from_root: vec![0.0; n],
    };
    for k in 0..n {
        let hb = field.flow.h_p[k % n_p];
        let (wp, wq, hp) = (field.w_p[k], field.w_q[k], field.h_p[k]);
        let (fq, fp) = (d.phi_q[k], d.phi_p[k]);
        out.square[k] = wp * wp - hb * hb * wq * wq - hb * hb * hp * fp;
        out.product[k] = wp * wq - 0.5 * hb * hp * (hp * fq - wq * fp);
        let half = 0.5 * hb * hb * hp;
        out.resolved[k] = wp * wp - half * (coeffs.b1_big[k] * fq + coeffs.b2_big[k] * fp);
        let e = fp * wq - fq * hp;
        out.wp_squared_from_root[k] = half * (fp + fp.hypot(e));
    }
    out
}

/// Coefficients of the homogeneous equation for `Φ`.
#[derive(Debug, Clone)]
pub struct EllipticCoefficients {
    /// `B₁ = -sign(E) h_p ρ` with `E = Φ_p h_q - Φ_q h_p`,
    /// `ρ = √(Φ_p² + E²) / (|Φ_p| + |E|)`.
    pub b1_big: Vec<f64>,
    /// `B₂ = 1 + ρ (sign Φ_p + sign(E) h_q)`.
    pub b2_big: Vec<f64>,
    /// `b₁ = -2 H_pp B₁ / (H_p² h_p)`.
    pub b1: Vec<f64>,
    /// `b₂ = -(H_pp (w_p - H_p) / (H_p³ h_p) + 2 H_pp B₂ / (H_p² h_p))`.
    pub b2: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl EllipticCoefficients {
    pub fn new(field: &WaveField, d: &FluxDerivatives) -> Self {
        let n = field.w.len();
        let n_p = field.grid.n_p();
        let mut c = EllipticCoefficients {
            b1_big: vec![0.0; n],
            b2_big: vec![1.0; n],
            b1: vec![0.0; n],
            b2: vec![0.0; n],
            degenerate: vec![false; n],
        };
        for k in 0..n {
            let j = k % n_p;
            let (hb, hpp) = (field.flow.h_p[j], field.flow.h_pp[j]);
            let (wp, wq, hp) = (field.w_p[k], field.w_q[k], field.h_p[k]);
            let (fq, fp) = (d.phi_q[k], d.phi_p[k]);
            let e = fp * wq - fq * hp;
            let denom = fp.abs() + e.abs();
            if denom < DEGENERATE_DENOMINATOR {
                c.degenerate[k] = true;
            } else {
                let rho = fp.hypot(e) / denom;
                c.b1_big[k] = -sign(e) * hp * rho;
                c.b2_big[k] = 1.0 + rho * (sign(fp) + sign(e) * wq);
            }
            let g = hpp / (hb * hb * hp);
            c.b1[k] = -2.0 * g * c.b1_big[k];
            c.b2[k] = -(hpp * (wp - hb) / (hb.powi(3) * hp) + 2.0 * g * c.b2_big[k]);
        }
        c
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }
}

/// Residuals of the inhomogeneous and homogeneous second-order equations.
#[derive(Debug, Clone)]
pub struct EllipticResiduals {
    pub inhomogeneous: Vec<f64>,
    pub homogeneous: Vec<f64>,
}

pub fn elliptic_residuals(
    field: &WaveField,
    d: &FluxDerivatives,
    coeffs: &EllipticCoefficients,
) -> EllipticResiduals {
    let n = field.w.len();
    let n_p = field.grid.n_p();
    let mut out = EllipticResiduals {
        inhomogeneous: vec![0.0; n],
        homogeneous: vec![0.0; n],
    };
    for k in 0..n {
        let j = k % n_p;
        let (hb, hpp) = (field.flow.h_p[j], field.flow.h_pp[j]);
        let (wp, wq, hp) = (field.w_p[k], field.w_q[k], field.h_p[k]);
        let principal = (1.0 + wq * wq) / (hp * hp) * d.phi_pp[k] - 2.0 * wq / hp * d.phi_qp[k] + d.phi_qq[k];
        out.inhomogeneous[k] = principal
            - hpp * (wp - hb) / (hb.powi(3) * hp) * d.phi_p[k]
            - 4.0 * hpp * wp * wp / (hb.powi(4) * hp * hp);
        out.homogeneous[k] = principal + coeffs.b1[k] * d.phi_q[k] + coeffs.b2[k] * d.phi_p[k];
    }
    out
}

/// Sup norm over the interior with `collar` cells dropped at every edge; the
/// `q`-edges are kept for periodic grids.
pub fn interior_sup(grid: &StripGrid, values: &[f64], collar: usize) -> f64 {
    let (n_q, n_p) = (grid.n_q(), grid.n_p());
    let (lo, hi) = match grid.bc {
        BoundaryCondition::Periodic => (0, n_q),
        _ => (collar, n_q - collar),
    };
    let mut m: f64 = 0.0;
    for i in lo..hi {
        for j in collar..n_p - collar {
            m = m.max(values[i * n_p + j].abs());
        }
    }
    m
}

/// Minimum of `Φ` over interior nodes and per-column sign changes in `p`.
#[derive(Debug, Clone)]
pub struct PositivityScan {
    pub min_value: f64,
    /// `(q, p)` of the minimum.
    pub location: (f64, f64),
    pub sign_change: Vec<bool>,
}

impl PositivityScan {
    pub fn any_sign_change(&self) -> bool {
        self.sign_change.iter().any(|b| *b)
    }
}

/// Values below `1e-12 · max|Φ|` are treated as zero when looking for sign changes.
pub fn positivity_scan(grid: &StripGrid, phi: &[f64]) -> PositivityScan {
    let (n_q, n_p) = (grid.n_q(), grid.n_p());
    let (lo, hi) = match grid.bc {
        BoundaryCondition::Periodic => (0, n_q),
        _ => (1, n_q - 1),
    };
    let floor = 1e-12 * phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut min_value = f64::INFINITY;
    let mut location = (grid.q[grid.center()], 0.5);
    let mut sign_change = vec![false; n_q];
    for i in lo..hi {
        let col = &phi[i * n_p..(i + 1) * n_p];
        for j in 1..n_p - 1 {
            if col[j] < min_value {
                min_value = col[j];
                location = (grid.q[i], grid.p[j]);
            }
        }
        sign_change[i] = count_sign_changes(&col[1..], floor.max(f64::MIN_POSITIVE)) > 0;
    }
    PositivityScan {
        min_value,
        location,
        sign_change,
    }
}

/// Everything the flux-function checks produce for one field.
#[derive(Debug, Clone)]
pub struct FluxDiagnostics {
    pub s_of_q: Vec<f64>,
    pub s_plus: f64,
    pub s_variation: f64,
    pub phi: Vec<f64>,
    pub phi_q_residual: Vec<f64>,
    pub bc_residuals: Vec<f64>,
    pub wp: WpResiduals,
    pub coefficients: EllipticCoefficients,
    pub elliptic: EllipticResiduals,
    pub positivity: PositivityScan,
}

/// Sup norms of the residual suites (interior collar of two cells).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualNorms {
    pub phi_q: f64,
    pub boundary: f64,
    pub wp_square: f64,
    pub wp_product: f64,
    pub wp_resolved: f64,
    pub inhomogeneous: f64,
    pub homogeneous: f64,
}

impl ResidualNorms {
    pub fn as_array(&self) -> [(&'static str, f64); 7] {
        [
            ("phi_q", self.phi_q),
            ("boundary", self.boundary),
            ("wp_square", self.wp_square),
            ("wp_product", self.wp_product),
            ("wp_resolved", self.wp_resolved),
            ("elliptic_inhomogeneous", self.inhomogeneous),
            ("elliptic_homogeneous", self.homogeneous),
        ]
    }
}

pub const COLLAR: usize = 2;

impl FluxDiagnostics {
    pub fn compute(field: &WaveField) -> Result<Self> {
        let s_of_q = flow_force_profile(field)?;
        let s_plus = background_flow_force(&field.flow);
        let phi = flux_function(field)?;
        let d = FluxDerivatives::new(&field.grid, &phi);
        let coefficients = EllipticCoefficients::new(field, &d);
        Ok(FluxDiagnostics {
            s_variation: relative_variation(&field.grid, &s_of_q),
            phi_q_residual: flux_q_identity(field, &phi),
            bc_residuals: boundary_identity(field, &phi, &s_of_q, s_plus),
            wp: wp_identities(field, &d, &coefficients),
            elliptic: elliptic_residuals(field, &d, &coefficients),
            positivity: positivity_scan(&field.grid, &phi),
            coefficients,
            s_of_q,
            s_plus,
            phi,
        })
    }

    /// Sup norms restricted to the nodes of `coarse` (every `stride`-th node
    /// of this grid), with the collar measured on `coarse`.
    pub fn norms_on(&self, grid: &StripGrid, stride: usize) -> ResidualNorms {
        let n_p = grid.n_p();
        let n_q = grid.n_q();
        let cq = (n_q - 1) / stride + 1;
        let cp = (n_p - 1) / stride + 1;
        let (lo, hi) = match grid.bc {
            BoundaryCondition::Periodic => (0, cq),
            _ => (COLLAR, cq - COLLAR),
        };
        let sup = |v: &[f64]| {
            let mut m: f64 = 0.0;
            for ic in lo..hi {
                for jc in COLLAR..cp - COLLAR {
                    m = m.max(v[ic * stride * n_p + jc * stride].abs());
                }
            }
            m
        };
        let sup_top = |v: &[f64]| {
            (lo..hi).map(|ic| v[ic * stride].abs()).fold(0.0, f64::max)
        };
        ResidualNorms {
            phi_q: sup(&self.phi_q_residual),
            boundary: sup_top(&self.bc_residuals),
            wp_square: sup(&self.wp.square),
            wp_product: sup(&self.wp.product),
            wp_resolved: sup(&self.wp.resolved),
            inhomogeneous: sup(&self.elliptic.inhomogeneous),
            homogeneous: sup(&self.elliptic.homogeneous),
        }
    }

    pub fn norms(&self, grid: &StripGrid) -> ResidualNorms {
        self.norms_on(grid, 1)
    }

    /// `(min B₂, max |B₁|, max B₂)` over non-degenerate cells.
    pub fn coefficient_ranges(&self) -> (f64, f64, f64) {
        let c = &self.coefficients;
        let mut min_b2 = f64::INFINITY;
        let mut max_b1: f64 = 0.0;
        let mut max_b2 = f64::NEG_INFINITY;
        for k in 0..c.b1_big.len() {
            if c.degenerate[k] {
                continue;
            }
            min_b2 = min_b2.min(c.b2_big[k]);
            max_b2 = max_b2.max(c.b2_big[k]);
            max_b1 = max_b1.max(c.b1_big[k].abs());
        }
        (min_b2, max_b1, max_b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{solve_background, Vorticity};
    use crate::field::BoundaryCondition;
    use std::sync::Arc;

    fn flow(omega: f64, s: f64, n_p: usize) -> Arc<ShearFlow> {
        Arc::new(solve_background(&Vorticity::constant(omega), s, n_p).unwrap())
    }

    #[test]
    fn background_flow_force_closed_forms() {
        let f1 = solve_background(&Vorticity::zero(), 0.5, 201).unwrap();
        assert!((background_flow_force(&f1) - 1.5).abs() < 1e-12);
        let f2 = solve_background(&Vorticity::zero(), 0.125, 201).unwrap();
        assert!((background_flow_force(&f2) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_field_gives_background_values() {
        let f = flow(0.3, 0.4, 21);
        let grid = StripGrid::new(5.0, 21, 21, BoundaryCondition::Decay).unwrap();
        let field = WaveField::zero(grid.clone(), f.clone()).unwrap();
        let diag = FluxDiagnostics::compute(&field).unwrap();
        for s in &diag.s_of_q {
            assert!((s - diag.s_plus).abs() < 1e-14);
        }
        assert!(diag.phi.iter().all(|v| *v == 0.0));
        let n = diag.norms(&grid);
        for (_, v) in n.as_array() {
            assert!(v.abs() < 1e-14);
        }
        assert_eq!(diag.coefficients.degenerate_count(), grid.len());
        assert!(!diag.positivity.any_sign_change());
        assert_eq!(diag.positivity.min_value, 0.0);
    }

    #[test]
    fn q_independent_perturbation_is_monotone() {
        let f = flow(0.0, 0.5, 41);
        let grid = StripGrid::new(2.0, 11, 41, BoundaryCondition::Periodic).unwrap();
        let field = WaveField::from_fn(grid, f, |_, p| 0.05 * (2.0 * p).sin()).unwrap();
        let phi = flux_function(&field).unwrap();
        for col in phi.chunks(41) {
            assert!(col.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn flow_force_literal_coefficients_fail_corrected_hold() {
        // Random-ish field; both w_p² forms are algebraic consequences of the
        // two linear identities once `Φ_p`, `Φ_q` are taken from them.
        let (hb, hp, wq) = (1.3f64, 1.1f64, -0.4f64);
        let wp = hp - hb;
        let fp = (wp * wp - hb * hb * wq * wq) / (hb * hb * hp);
        let fq = (2.0 * wp * wq / (hb * hp) + wq * fp) / hp;
        let e = fp * wq - fq * hp;
        let rho = fp.hypot(e) / (fp.abs() + e.abs());
        let half = 0.5 * hb * hb * hp;
        let literal = half * (sign(e) * rho * fq + (1.0 + sign(fp) * rho) * fp);
        let corrected = half * (-sign(e) * hp * rho * fq + (1.0 + rho * (sign(fp) + sign(e) * wq)) * fp);
        assert!((corrected - wp * wp).abs() < 1e-14);
        assert!((literal - wp * wp).abs() > 1e-3);
    }

    #[test]
    fn synthetic_second_mode_changes_sign() {
        let f = flow(0.0, 0.125, 81);
        let spec = crate::dispersion::sl_spectrum(&f, 2).unwrap();
        let phi1 = spec.phis[1].clone();
        let tau = spec.lambdas[1].sqrt();
        let grid = StripGrid::new(10.0, 81, 81, BoundaryCondition::Decay).unwrap();
        let field = WaveField::from_fn(grid.clone(), f, |q, p| {
            1e-3 * (tau * q).sin() * phi1[(p * 80.0).round() as usize]
        })
        .unwrap();
        let phi = flux_function(&field).unwrap();
        assert!(positivity_scan(&grid, &phi).any_sign_change());
    }

    #[test]
    fn random_field_violates_identities() {
        let f = flow(0.3, 0.4, 21);
        let grid = StripGrid::new(5.0, 41, 21, BoundaryCondition::Decay).unwrap();
        let field = WaveField::from_fn(grid.clone(), f, |q, p| {
            0.3 * p * (-(q * q) / 3.0).exp() * (1.0 + 0.3 * (2.0 * q + p).sin())
        })
        .unwrap();
        let diag = FluxDiagnostics::compute(&field).unwrap();
        assert!(diag.norms(&grid).phi_q > 1e-4);
        assert!(diag.s_variation > 1e-2, "{}", diag.s_variation);
    }
}

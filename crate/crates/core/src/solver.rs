//! Newton solver for the height-equation system in perturbation form.
//!
//! With `h = H + w` the unknown satisfies
//!
//! ```text
//! (w_p / H_p^3)_p + (w_q / H_p)_q = N_1(w)      in the strip,
//! -w_p / H_p^3 + w = N_2(w)                     at p = 1,
//! w = 0                                         at p = 0.
//! ```
//!
//! The interior equation is evaluated in the expanded form
//! `[(1 + w_q²) w_pp / h_p² - 2 w_q w_qp / h_p + w_qq - ω K / h_p²] / h_p` with
//! `K = w_p (h_p² + h_p H_p + H_p²) - H_p³ w_q²`, which has no cancellation
//! against the background, so tails are resolved to relative precision.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::background::{from_profile, parameter_for_froude, ShearFlow};
use crate::banded::BandedMatrix;
use crate::dispersion::{sl_spectrum, CRITICAL_FROUDE_TOL};
use crate::error::{Result, WaveError};
use crate::field::{BoundaryCondition, StripGrid, WaveField};

/// Interior and top-boundary residuals on the full grid.
#[derive(Debug, Clone)]
pub struct Residual {
    /// Zero on the rows `p = 0` and `p = 1`.
    pub interior: Vec<f64>,
    /// One value per column.
    pub boundary: Vec<f64>,
}

impl Residual {
    /// Sup norm over the equations actually imposed (excludes Dirichlet columns).
    pub fn sup(&self, grid: &StripGrid) -> f64 {
        self.sup_over(grid, 0)
    }

    /// Sup norm skipping `collar` columns at each open end and in `p` at the ends.
    pub fn sup_over(&self, grid: &StripGrid, collar: usize) -> f64 {
        let n_p = grid.n_p();
        let (lo, hi) = active_columns(grid, collar);
        let mut m: f64 = 0.0;
        for i in lo..hi {
            for j in (1 + collar)..(n_p - 1).saturating_sub(collar) {
                m = m.max(self.interior[i * n_p + j].abs());
            }
            m = m.max(self.boundary[i].abs());
        }
        m
    }
}

fn active_columns(grid: &StripGrid, collar: usize) -> (usize, usize) {
    let n_q = grid.n_q();
    match grid.bc {
        BoundaryCondition::Periodic => (0, n_q),
        _ => (1 + collar, n_q - 1 - collar),
    }
}

#[derive(Debug, Clone, Copy)]
struct Pointwise {
    hp_bg: f64,
    omega: f64,
    w_q: f64,
    w_p: f64,
    w_qq: f64,
    w_qp: f64,
    w_pp: f64,
}

impl Pointwise {
    fn h_p(&self) -> f64 {
        self.hp_bg + self.w_p
    }

    fn k(&self) -> f64 {
        let (hp, hb) = (self.h_p(), self.hp_bg);
        self.w_p * (hp * hp + hp * hb + hb * hb) - hb.powi(3) * self.w_q * self.w_q
    }

    fn a(&self) -> f64 {
        let hp = self.h_p();
        let hp2 = hp * hp;
        (1.0 + self.w_q * self.w_q) * self.w_pp / hp2 - 2.0 * self.w_q * self.w_qp / hp + self.w_qq
            - self.omega * self.k() / hp2
    }

    fn interior(&self) -> f64 {
        self.a() / self.h_p()
    }

    /// Partials with respect to `(w_q, w_p, w_qq, w_qp, w_pp)`.
    fn interior_partials(&self) -> [f64; 5] {
        let hp = self.h_p();
        let hp2 = hp * hp;
        let hp3 = hp2 * hp;
        let (wq, wqp, wpp) = (self.w_q, self.w_qp, self.w_pp);
        let a = self.a();
        let b3 = self.hp_bg.powi(3);
        let d_wq = (2.0 * wq * wpp / hp2 - 2.0 * wqp / hp + 2.0 * self.omega * b3 * wq / hp2) / hp;
        let a_wp = -2.0 * (1.0 + wq * wq) * wpp / hp3 + 2.0 * wq * wqp / hp2
            - self.omega * (3.0 - 2.0 * self.k() / hp3);
        let d_wp = a_wp / hp - a / hp2;
        [d_wq, d_wp, 1.0 / hp, -2.0 * wq / hp2, (1.0 + wq * wq) / hp3]
    }
}

fn top_residual(w: f64, hb: f64, w_q: f64, w_p: f64) -> f64 {
    let hp = hb + w_p;
    w + (hb * hb * w_q * w_q - 2.0 * hb * w_p - w_p * w_p) / (2.0 * hb * hb * hp * hp)
}

/// Partials of the top residual with respect to `(w_q, w_p)`.
fn top_partials(w: f64, hb: f64, w_q: f64, w_p: f64) -> (f64, f64) {
    let hp = hb + w_p;
    let q = top_residual(w, hb, w_q, w_p) - w;
    (w_q / (hp * hp), -1.0 / (hb * hb * hp) - 2.0 * q / hp)
}

fn pointwise(field: &WaveField, i: usize, j: usize) -> Pointwise {
    let k = field.grid.idx(i, j);
    Pointwise {
        hp_bg: field.flow.h_p[j],
        omega: field.flow.vorticity.omega[j],
        w_q: field.w_q[k],
        w_p: field.w_p[k],
        w_qq: field.w_qq[k],
        w_qp: field.w_qp[k],
        w_pp: field.w_pp[k],
    }
}

/// Residual of the perturbation system for `field`.
pub fn residual(field: &WaveField) -> Result<Residual> {
    field.check_unidirectional()?;
    let (n_q, n_p) = (field.grid.n_q(), field.grid.n_p());
    let mut interior = vec![0.0; n_q * n_p];
    let mut boundary = vec![0.0; n_q];
    for i in 0..n_q {
        for j in 1..n_p - 1 {
            interior[i * n_p + j] = pointwise(field, i, j).interior();
        }
        let k = i * n_p + n_p - 1;
        boundary[i] = top_residual(field.w[k], field.flow.h_p[n_p - 1], field.w_q[k], field.w_p[k]);
    }
    Ok(Residual { interior, boundary })
}

/// The interior equation in divergence form,
/// `(h_q / h_p)_q - ((1 + h_q²) / (2 h_p²))_p - ω`, discretized with fluxes
/// on half-cells in `p`. Zero on the rows `p = 0, 1`.
pub fn divergence_residual(field: &WaveField) -> Result<Vec<f64>> {
    field.check_unidirectional()?;
    let grid = &field.grid;
    let (n_q, n_p, dp) = (grid.n_q(), grid.n_p(), grid.dp());
    let h = field.height();
    let ratio: Vec<f64> = field.w_q.iter().zip(&field.h_p).map(|(a, b)| a / b).collect();
    let ratio_q = grid.d_q(&ratio);
    let mut out = vec![0.0; n_q * n_p];
    for i in 0..n_q {
        let base = i * n_p;
        let flux = |j: usize| {
            let hp = (h[base + j + 1] - h[base + j]) / dp;
            let hq = 0.5 * (field.w_q[base + j] + field.w_q[base + j + 1]);
            (1.0 + hq * hq) / (2.0 * hp * hp)
        };
        for j in 1..n_p - 1 {
            let g_p = (flux(j) - flux(j - 1)) / dp;
            out[base + j] = ratio_q[base + j] - g_p - field.flow.vorticity.omega[j];
        }
    }
    Ok(out)
}

/// Which grid columns carry unknowns and how the others are recovered.
#[derive(Debug, Clone, Copy)]
struct Layout {
    bc: BoundaryCondition,
    n_q: usize,
    n_p: usize,
}

impl Layout {
    fn new(grid: &StripGrid) -> Self {
        Layout {
            bc: grid.bc,
            n_q: grid.n_q(),
            n_p: grid.n_p(),
        }
    }

    fn center(&self) -> usize {
        (self.n_q - 1) / 2
    }

    fn columns(&self) -> usize {
        match self.bc {
            BoundaryCondition::Decay => self.n_q - 2,
            BoundaryCondition::EvenSymmetric => self.n_q - 1 - self.center(),
            BoundaryCondition::Periodic => self.n_q - self.center(),
        }
    }

    fn rows_per_column(&self) -> usize {
        self.n_p - 1
    }

    fn len(&self) -> usize {
        self.columns() * self.rows_per_column()
    }

    fn column_of(&self, k: usize) -> usize {
        match self.bc {
            BoundaryCondition::Decay => k + 1,
            _ => k + self.center(),
        }
    }

    fn unknown_column(&self, i: usize) -> Option<usize> {
        match self.bc {
            BoundaryCondition::Decay => (i > 0 && i + 1 < self.n_q).then(|| i - 1),
            _ => {
                let c = self.center();
                let m = if i < c { 2 * c - i } else { i };
                (self.bc == BoundaryCondition::Periodic || m + 1 < self.n_q).then(|| m - c)
            }
        }
    }

    fn unknown(&self, i: usize, j: usize) -> Option<usize> {
        if j == 0 {
            return None;
        }
        self.unknown_column(i).map(|k| k * self.rows_per_column() + j - 1)
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n_q * self.n_p];
        for i in 0..self.n_q {
            for j in 1..self.n_p {
                if let Some(u) = self.unknown(i, j) {
                    w[i * self.n_p + j] = x[u];
                }
            }
        }
        w
    }

    fn gather(&self, full: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        for k in 0..self.columns() {
            let i = self.column_of(k);
            for j in 1..self.n_p {
                x[k * self.rows_per_column() + j - 1] = full[i * self.n_p + j];
            }
        }
        x
    }

    fn gather_residual(&self, r: &Residual) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let n_p = self.n_p;
        for k in 0..self.columns() {
            let i = self.column_of(k);
            for j in 1..n_p {
                out[k * (n_p - 1) + j - 1] = if j == n_p - 1 {
                    r.boundary[i]
                } else {
                    r.interior[i * n_p + j]
                };
            }
        }
        out
    }
}

/// Analytic Jacobian of the imposed equations, and the derivative of the
/// equations with respect to the q-spacing.
fn jacobian(field: &WaveField, layout: &Layout) -> (BandedMatrix, Vec<f64>) {
    let grid = &field.grid;
    let n_p = grid.n_p();
    let n = layout.rows_per_column();
    let (dq, dp) = (grid.dq(), grid.dp());
    let mut jac = BandedMatrix::zeros(layout.len(), n + 1, n + 1);
    let mut d_spacing = vec![0.0; layout.len()];
    for k in 0..layout.columns() {
        let i = layout.column_of(k);
        let (im, ip) = grid.q_neighbors(i);
        let (im, ip) = (im.expect("row column has a left neighbour"), ip.expect("row column has a right neighbour"));
        for j in 1..n_p {
            let row = k * n + j - 1;
            let mut put = |ii: usize, jj: usize, v: f64| {
                if let Some(col) = layout.unknown(ii, jj) {
                    jac.add(row, col, v);
                }
            };
            if j == n_p - 1 {
                let m = grid.idx(i, j);
                let hb = field.flow.h_p[j];
                let (g_q, g_p) = top_partials(field.w[m], hb, field.w_q[m], field.w_p[m]);
                put(i, j, 1.0 + 1.5 * g_p / dp);
                put(i, j - 1, -2.0 * g_p / dp);
                put(i, j - 2, 0.5 * g_p / dp);
                put(ip, j, 0.5 * g_q / dq);
                put(im, j, -0.5 * g_q / dq);
                d_spacing[row] = -g_q * field.w_q[m] / dq;
            } else {
                let pw = pointwise(field, i, j);
                let [d_q, d_p, d_qq, d_qp, d_pp] = pw.interior_partials();
                let (cq, cp) = (0.5 / dq, 0.5 / dp);
                let (cqq, cpp, cqp) = (1.0 / (dq * dq), 1.0 / (dp * dp), 0.25 / (dq * dp));
                put(i, j, -2.0 * d_qq * cqq - 2.0 * d_pp * cpp);
                put(ip, j, d_q * cq + d_qq * cqq);
                put(im, j, -d_q * cq + d_qq * cqq);
                put(i, j + 1, d_p * cp + d_pp * cpp);
                put(i, j - 1, -d_p * cp + d_pp * cpp);
                put(ip, j + 1, d_qp * cqp);
                put(ip, j - 1, -d_qp * cqp);
                put(im, j + 1, -d_qp * cqp);
                put(im, j - 1, d_qp * cqp);
                d_spacing[row] = -(d_q * pw.w_q + 2.0 * d_qq * pw.w_qq + d_qp * pw.w_qp) / dq;
            }
        }
    }
    (jac, d_spacing)
}

/// Newton controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Extra full steps taken once the tolerance is met.
    pub polish: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-11,
            max_iter: 50,
            polish: 2,
        }
    }
}

/// Iteration history of a Newton solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Sup norm of each accepted update.
    pub increments: Vec<f64>,
    pub damped_steps: usize,
    pub residual_inf: f64,
}

impl NewtonStats {
    /// Ratios `e_{k+1} / e_k²` over the last three updates above `floor`.
    pub fn quadratic_ratios(&self, floor: f64) -> Vec<f64> {
        let e: Vec<f64> = self.increments.iter().copied().filter(|v| *v > floor).collect();
        let tail = &e[e.len().saturating_sub(3)..];
        tail.windows(2).map(|w| w[1] / (w[0] * w[0])).collect()
    }

    /// Observed order `log(e_{k+1}/e_k) / log(e_k/e_{k-1})` from the last three
    /// updates above `floor`.
    pub fn convergence_order(&self, floor: f64) -> Option<f64> {
        let e: Vec<f64> = self.increments.iter().copied().filter(|v| *v > floor).collect();
        if e.len() < 3 {
            return None;
        }
        let t = &e[e.len() - 3..];
        Some((t[2] / t[1]).ln() / (t[1] / t[0]).ln())
    }

    /// Each of the last updates is bounded by `C e_k²` with a single `C`, and
    /// shrinks by at least a factor of ten.
    pub fn is_quadratic(&self, floor: f64, c_max: f64) -> bool {
        let e: Vec<f64> = self.increments.iter().copied().filter(|v| *v > floor).collect();
        if e.len() < 2 {
            return !self.increments.is_empty();
        }
        let tail = &e[e.len().saturating_sub(3)..];
        tail.windows(2)
            .all(|w| w[1] <= c_max * w[0] * w[0] && w[1] <= 0.1 * w[0])
    }
}

/// A converged wave with its solve history.
#[derive(Debug, Clone)]
pub struct WaveSolution {
    pub field: WaveField,
    pub stats: NewtonStats,
    /// Period in `q` for periodic waves.
    pub period: Option<f64>,
}

impl WaveSolution {
    pub fn froude(&self) -> f64 {
        self.field.flow.froude
    }

    pub fn amplitude(&self) -> f64 {
        self.field.amplitude()
    }
}

/// The nonlinear problem on a fixed layout; optionally the q-spacing is an
/// extra unknown tied to an amplitude constraint at `(q = 0, p = 1)`.
struct Problem {
    layout: Layout,
    grid: StripGrid,
    flow: Arc<ShearFlow>,
    amplitude: Option<f64>,
}

struct State {
    x: Vec<f64>,
    dq: f64,
}

impl Problem {
    fn grid_for(&self, dq: f64) -> Result<StripGrid> {
        if self.amplitude.is_none() {
            return Ok(self.grid.clone());
        }
        if !(dq.is_finite() && dq > 0.0) {
            return Err(WaveError::Solver(format!("q-spacing {dq} left the admissible range")));
        }
        self.grid.with_half_length(0.5 * dq * (self.layout.n_q - 1) as f64)
    }

    fn field(&self, s: &State) -> Result<WaveField> {
        WaveField::new(self.grid_for(s.dq)?, self.flow.clone(), self.layout.expand(&s.x))
    }

    fn crest_unknown(&self) -> usize {
        self.layout
            .unknown(self.layout.center(), self.layout.n_p - 1)
            .expect("crest is an unknown")
    }

    fn equations(&self, field: &WaveField) -> Result<(Vec<f64>, f64)> {
        let r = self.layout.gather_residual(&residual(field)?);
        let c = match self.amplitude {
            Some(a) => field.amplitude() - a,
            None => 0.0,
        };
        Ok((r, c))
    }

    fn norm(r: &[f64], c: f64) -> f64 {
        r.iter().fold(c.abs(), |m, v| m.max(v.abs()))
    }

    fn step(&self, field: &WaveField, r: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
        let (jac, g) = jacobian(field, &self.layout);
        let lu = jac.factor()?;
        let mut y1: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut y1);
        match self.amplitude {
            None => Ok((y1, 0.0)),
            Some(_) => {
                let y2 = lu.solve(&g);
                let e = self.crest_unknown();
                if y2[e] == 0.0 {
                    return Err(WaveError::Solver("amplitude constraint is degenerate".into()));
                }
                let ds = (y1[e] + c) / y2[e];
                let dx = y1.iter().zip(&y2).map(|(a, b)| a - ds * b).collect();
                Ok((dx, ds))
            }
        }
    }

    fn newton(&self, mut s: State, opts: &NewtonOptions) -> Result<(WaveField, State, NewtonStats)> {
        let mut stats = NewtonStats::default();
        let mut field = self.field(&s)?;
        let (mut r, mut c) = self.equations(&field)?;
        let mut norm = Self::norm(&r, c);
        stats.residual_history.push(norm);
        let mut polished = 0;
        loop {
            let converged = norm < opts.tol;
            if converged && polished >= opts.polish {
                break;
            }
            if stats.iterations >= opts.max_iter {
                if converged {
                    break;
                }
                return Err(WaveError::Convergence {
                    iterations: stats.iterations,
                    residual: norm,
                });
            }
            let (dx, ds) = match self.step(&field, &r, c) {
                Ok(v) => v,
                Err(_) if converged => break,
                Err(WaveError::Solver(_)) => {
                    return Err(WaveError::Convergence {
                        iterations: stats.iterations,
                        residual: norm,
                    })
                }
                Err(e) => return Err(e),
            };
            let inc = dx.iter().fold(ds.abs(), |m, v| m.max(v.abs()));
            let mut t = 1.0;
            let mut accepted = None;
            while t >= 1.0 / 1024.0 {
                let trial = State {
                    x: s.x.iter().zip(&dx).map(|(a, b)| a + t * b).collect(),
                    dq: s.dq + t * ds,
                };
                if let Ok(f) = self.field(&trial) {
                    if let Ok((r2, c2)) = self.equations(&f) {
                        let n2 = Self::norm(&r2, c2);
                        let ok = if converged { n2 <= 10.0 * opts.tol } else { n2 < norm };
                        if ok && n2.is_finite() {
                            accepted = Some((trial, f, r2, c2, n2));
                            break;
                        }
                    }
                }
                if converged {
                    break;
                }
                t *= 0.5;
            }
            stats.iterations += 1;
            match accepted {
                Some((trial, f, r2, c2, n2)) => {
                    if t < 1.0 {
                        stats.damped_steps += 1;
                    }
                    stats.increments.push(t * inc);
                    s = trial;
                    field = f;
                    r = r2;
                    c = c2;
                    norm = n2;
                    stats.residual_history.push(norm);
                    if converged {
                        polished += 1;
                    }
                }
                None if converged => break,
                None => {
                    return Err(WaveError::Convergence {
                        iterations: stats.iterations,
                        residual: norm,
                    })
                }
            }
        }
        stats.residual_inf = norm;
        Ok((field, s, stats))
    }
}

/// Solve on a fixed grid from the initial field `guess`.
pub fn solve_from(guess: &WaveField, opts: &NewtonOptions) -> Result<WaveSolution> {
    let layout = Layout::new(&guess.grid);
    let problem = Problem {
        layout,
        grid: guess.grid.clone(),
        flow: guess.flow.clone(),
        amplitude: None,
    };
    let state = State {
        x: layout.gather(&guess.w),
        dq: guess.grid.dq(),
    };
    let (field, _, stats) = problem.newton(state, opts)?;
    Ok(WaveSolution {
        field,
        stats,
        period: None,
    })
}

/// Relative error of the analytic Jacobian against a centered difference of
/// the residual along a fixed smooth direction (including the spacing when
/// the grid is periodic).
pub fn jacobian_check(field: &WaveField, step: f64) -> Result<f64> {
    let layout = Layout::new(&field.grid);
    let periodic = field.grid.bc == BoundaryCondition::Periodic;
    let problem = Problem {
        layout,
        grid: field.grid.clone(),
        flow: field.flow.clone(),
        amplitude: periodic.then_some(0.0),
    };
    let x = layout.gather(&field.w);
    let scale = field.sup_norm().max(1e-3);
    let v: Vec<f64> = (0..x.len())
        .map(|k| scale * ((0.37 * k as f64).sin() + 0.5 * (0.011 * k as f64).cos()))
        .collect();
    let v_dq = if periodic { 0.1 * field.grid.dq() } else { 0.0 };
    let eval = |t: f64| -> Result<Vec<f64>> {
        let s = State {
            x: x.iter().zip(&v).map(|(a, b)| a + t * b).collect(),
            dq: field.grid.dq() + t * v_dq,
        };
        Ok(problem.equations(&problem.field(&s)?)?.0)
    };
    let (plus, minus) = (eval(step)?, eval(-step)?);
    let (jac, g) = jacobian(field, &layout);
    let jv = jac.mul_vec(&v);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for k in 0..jv.len() {
        let analytic = jv[k] + g[k] * v_dq;
        let fd = (plus[k] - minus[k]) / (2.0 * step);
        num = num.max((analytic - fd).abs());
        den = den.max(analytic.abs());
    }
    Ok(num / den.max(f64::MIN_POSITIVE))
}

fn phi_hat(flow: &ShearFlow) -> Result<(Vec<f64>, f64)> {
    let spec = sl_spectrum(flow, 1)?;
    Ok((spec.surface_normalized(0), spec.lambdas[0]))
}

/// Even periodic wave of crest amplitude `a` (at `q = 0, p = 1`) with `n_q`
/// nodes over one period. The period is solved for along with the field,
/// starting from the linear period `2π/τ_0`.
pub fn solve_periodic(
    flow: &ShearFlow,
    amplitude: f64,
    n_q: usize,
    opts: &NewtonOptions,
) -> Result<WaveSolution> {
    if !(flow.froude < 1.0 - CRITICAL_FROUDE_TOL) {
        return Err(WaveError::Precondition(format!(
            "periodic waves need F < 1, got F = {}",
            flow.froude
        )));
    }
    if !amplitude.is_finite() {
        return Err(WaveError::Input(format!("amplitude {amplitude} is not finite")));
    }
    let (phi, lambda0) = phi_hat(flow)?;
    if lambda0 >= 0.0 {
        return Err(WaveError::Precondition(format!(
            "λ_0 = {lambda0:e} is not negative; no periodic branch"
        )));
    }
    let tau = (-lambda0).sqrt();
    let grid = StripGrid::new(PI / tau, n_q, flow.n_p(), BoundaryCondition::Periodic)?;
    let flow = Arc::new(flow.clone());
    if amplitude == 0.0 {
        return Ok(WaveSolution {
            period: Some(2.0 * PI / tau),
            field: WaveField::zero(grid, flow)?,
            stats: NewtonStats::default(),
        });
    }
    let layout = Layout::new(&grid);
    let problem = Problem {
        layout,
        grid: grid.clone(),
        flow: flow.clone(),
        amplitude: None,
    };

    let linear = |a: f64| {
        WaveField::from_fn(grid.clone(), flow.clone(), |q, p| {
            let j = ((p * (phi.len() - 1) as f64).round()) as usize;
            a * (tau * q).cos() * phi[j]
        })
    };

    // Continuation in amplitude with step halving.
    let mut reached = 0.0;
    let mut current: Option<(State, NewtonStats)> = None;
    let mut step = amplitude;
    while reached != amplitude {
        let target = if (amplitude - reached).abs() <= step.abs() * (1.0 + 1e-12) {
            amplitude
        } else {
            reached + step
        };
        let guess = match &current {
            None => State {
                x: layout.gather(&linear(target)?.w),
                dq: grid.dq(),
            },
            Some((s, _)) => State {
                x: s.x.iter().map(|v| v * target / reached).collect(),
                dq: s.dq,
            },
        };
        let p = Problem {
            amplitude: Some(target),
            ..problem_clone(&problem)
        };
        match p.newton(guess, opts) {
            Ok((_, s, stats)) => {
                reached = target;
                current = Some((s, stats));
            }
            Err(e) => {
                step *= 0.5;
                if step.abs() < amplitude.abs() / 64.0 {
                    return Err(e);
                }
            }
        }
    }
    let (s, stats) = current.expect("continuation reached the target");
    let p = Problem {
        amplitude: Some(amplitude),
        ..problem_clone(&problem)
    };
    let field = p.field(&s)?;
    Ok(WaveSolution {
        period: Some(s.dq * (n_q - 1) as f64),
        field,
        stats,
    })
}

fn problem_clone(p: &Problem) -> Problem {
    Problem {
        layout: p.layout,
        grid: p.grid.clone(),
        flow: p.flow.clone(),
        amplitude: p.amplitude,
    }
}

/// Truncation half-length `max(30/τ, 40 d)` for a wave decaying like `e^{-τ|q|}`.
pub fn default_half_length(flow: &ShearFlow, tau: f64) -> f64 {
    (30.0 / tau).max(40.0 * flow.depth)
}

/// Decay rate `√λ_0` of a supercritical background.
pub fn decay_rate(flow: &ShearFlow) -> Result<f64> {
    let (_, lambda0) = phi_hat(flow)?;
    if lambda0 <= 0.0 {
        return Err(WaveError::Precondition(format!(
            "λ_0 = {lambda0:e} is not positive; the flow is not supercritical"
        )));
    }
    Ok(lambda0.sqrt())
}

/// `a₀ sech²(γ q) φ_0(p)/φ_0(1)` with `a₀ = (F² - 1) d`, `γ = √(3|a₀| / (4 d³))`.
pub fn sech2_initializer(grid: &StripGrid, flow: &Arc<ShearFlow>, a0: f64) -> Result<WaveField> {
    let (phi, _) = phi_hat(flow)?;
    let d = flow.depth;
    let gamma = (3.0 * a0.abs() / (4.0 * d.powi(3))).sqrt();
    let n_p = flow.n_p();
    let mut field = WaveField::from_fn(grid.clone(), flow.clone(), |q, p| {
        let j = (p * (n_p - 1) as f64).round() as usize;
        a0 * (gamma * q).cosh().powi(-2) * phi[j]
    })?;
    if grid.bc != BoundaryCondition::Periodic {
        let (n_q, n_p) = (grid.n_q(), grid.n_p());
        for j in 0..n_p {
            field.w[j] = 0.0;
            field.w[(n_q - 1) * n_p + j] = 0.0;
        }
        field = WaveField::new(field.grid, field.flow, field.w)?;
    }
    Ok(field)
}

/// Solitary wave on `[-L, L]` with `n_q` (odd) columns, even in `q`.
pub fn solve_solitary(
    flow: &ShearFlow,
    n_q: usize,
    half_length: f64,
    opts: &NewtonOptions,
) -> Result<WaveSolution> {
    if !(flow.froude > 1.0 + CRITICAL_FROUDE_TOL) {
        return Err(WaveError::Precondition(format!(
            "solitary waves need F > 1, got F = {}",
            flow.froude
        )));
    }
    let grid = StripGrid::new(half_length, n_q, flow.n_p(), BoundaryCondition::EvenSymmetric)?;
    let flow = Arc::new(flow.clone());
    let a0 = (flow.froude.powi(2) - 1.0) * flow.depth;
    let guess = sech2_initializer(&grid, &flow, a0)?;
    let solution = match solve_from(&guess, opts) {
        Ok(sol) => sol,
        Err(WaveError::Convergence { .. }) | Err(WaveError::UnidirectionalityViolation { .. }) => {
            continue_in_froude(&flow, &grid, opts, 0)?
        }
        Err(e) => return Err(e),
    };
    check_tail(&solution.field)?;
    Ok(solution)
}

fn continue_in_froude(
    flow: &Arc<ShearFlow>,
    grid: &StripGrid,
    opts: &NewtonOptions,
    depth: usize,
) -> Result<WaveSolution> {
    let target = flow.froude;
    if depth > 4 || target - 1.0 < 1e-3 {
        return Err(WaveError::Convergence {
            iterations: opts.max_iter,
            residual: f64::NAN,
        });
    }
    let mid = 1.0 + 0.5 * (target - 1.0);
    let profile = flow.vorticity.clone();
    let s_mid = parameter_for_froude(&profile.function, profile.n_p(), profile.rule, mid)?;
    let flow_mid = Arc::new(from_profile(profile, s_mid)?);
    let a_mid = (mid * mid - 1.0) * flow_mid.depth;
    let guess = sech2_initializer(grid, &flow_mid, a_mid)?;
    let mid_sol = match solve_from(&guess, opts) {
        Ok(sol) => sol,
        Err(_) => continue_in_froude(&flow_mid, grid, opts, depth + 1)?,
    };
    let scale = (target * target - 1.0) / (mid * mid - 1.0);
    let w: Vec<f64> = mid_sol.field.w.iter().map(|v| v * scale).collect();
    let guess = WaveField::new(grid.clone(), flow.clone(), w)?;
    solve_from(&guess, opts)
}

/// `TailNotResolved` when `|η|` on `[0.9 L, L]` exceeds `1e-6` of the amplitude.
pub fn check_tail(field: &WaveField) -> Result<()> {
    let amplitude = field.surface().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tail = tail_level(field, 0.9);
    if tail > 1e-6 * amplitude {
        return Err(WaveError::TailNotResolved { tail, amplitude });
    }
    Ok(())
}

/// Largest `|η|` with `|q| ≥ fraction·L`.
pub fn tail_level(field: &WaveField, fraction: f64) -> f64 {
    let l = field.grid.half_length;
    field
        .grid
        .q
        .iter()
        .zip(field.surface())
        .filter(|(q, _)| q.abs() >= fraction * l * (1.0 - 1e-12))
        .fold(0.0, |m, (_, e)| m.max(e.abs()))
}

/// Shape properties of the surface `η = w(·, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceShape {
    pub min_eta: f64,
    /// `max |η(q) - η(-q)|`.
    pub even_defect: f64,
    /// Largest `η_{i+1} - η_i` on `q > 0` (negative when strictly decreasing).
    pub max_rise: f64,
    /// Smallest `w` over `0 < p ≤ 1`.
    pub min_w_interior: f64,
}

pub fn surface_shape(field: &WaveField) -> SurfaceShape {
    let eta = field.surface();
    let n = eta.len();
    let q = &field.grid.q;
    let open = field.grid.bc != BoundaryCondition::Periodic;
    let active = |i: usize| !open || (i > 0 && i + 1 < n);
    let min_eta = (0..n).filter(|&i| active(i)).map(|i| eta[i]).fold(f64::INFINITY, f64::min);
    let even_defect = (0..n).map(|i| (eta[i] - eta[n - 1 - i]).abs()).fold(0.0, f64::max);
    let max_rise = (0..n - 1)
        .filter(|&i| q[i] >= 0.0 && active(i + 1))
        .map(|i| eta[i + 1] - eta[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let n_p = field.grid.n_p();
    let min_w_interior = (0..n)
        .filter(|&i| active(i))
        .flat_map(|i| (1..n_p).map(move |j| (i, j)))
        .map(|(i, j)| field.at(i, j))
        .fold(f64::INFINITY, f64::min);
    SurfaceShape {
        min_eta,
        even_defect,
        max_rise,
        min_w_interior,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    ConvergedTrivial,
    ConvergedNontrivial,
    Diverged,
}

/// Result of a subcritical Newton probe.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub outcome: ProbeOutcome,
    pub froude: f64,
    pub a0: f64,
    pub iterations: usize,
    pub residual_inf: f64,
    pub sup_w: f64,
    /// `max |η|` on `|q| ≥ 0.9 L` over `max |η|`.
    pub tail_ratio: f64,
    pub passes_tail_test: bool,
    pub tail_wavelength: Option<f64>,
    /// `2π/τ_0`.
    pub linear_wavelength: f64,
    pub message: Option<String>,
    pub field: Option<WaveField>,
}

impl ProbeReport {
    pub fn wavelength_gap(&self) -> Option<f64> {
        self.tail_wavelength
            .map(|l| (l - self.linear_wavelength).abs() / self.linear_wavelength)
    }

    /// A solution decaying like a solitary wave would.
    pub fn is_decaying_nontrivial(&self) -> bool {
        self.outcome == ProbeOutcome::ConvergedNontrivial && self.passes_tail_test
    }
}

/// Mean spacing between sign changes of `η` on `|q| ≥ L/2`, doubled.
fn tail_wavelength(field: &WaveField) -> Option<f64> {
    let eta = field.surface();
    let q = &field.grid.q;
    let l = field.grid.half_length;
    let guard = 1e-14 * eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut crossings = Vec::new();
    for i in 1..eta.len() - 2 {
        if q[i].abs() < 0.5 * l {
            continue;
        }
        let (a, b) = (eta[i], eta[i + 1]);
        if a.abs() > guard && b.abs() > guard && a.signum() != b.signum() {
            crossings.push(q[i] + (q[i + 1] - q[i]) * a / (a - b));
        }
    }
    let mut gaps = Vec::new();
    for side in [-1.0, 1.0] {
        let c: Vec<f64> = crossings.iter().copied().filter(|x| x * side > 0.0).collect();
        gaps.extend(c.windows(2).map(|w| (w[1] - w[0]).abs()));
    }
    if gaps.len() < 2 {
        return None;
    }
    Some(2.0 * gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// Newton from the sech² initializer with decay conditions on `[-L, L]`.
pub fn subcritical_probe(
    flow: &ShearFlow,
    a0: f64,
    n_q: usize,
    half_length: f64,
    opts: &NewtonOptions,
) -> Result<ProbeReport> {
    if !(flow.froude < 1.0 - CRITICAL_FROUDE_TOL) {
        return Err(WaveError::Precondition(format!(
            "probe needs F < 1, got F = {}",
            flow.froude
        )));
    }
    let (_, lambda0) = phi_hat(flow)?;
    let linear_wavelength = if lambda0 < 0.0 { 2.0 * PI / (-lambda0).sqrt() } else { f64::INFINITY };
    let grid = StripGrid::new(half_length, n_q, flow.n_p(), BoundaryCondition::Decay)?;
    let flow = Arc::new(flow.clone());
    let mut report = ProbeReport {
        outcome: ProbeOutcome::Diverged,
        froude: flow.froude,
        a0,
        iterations: 0,
        residual_inf: f64::NAN,
        sup_w: f64::NAN,
        tail_ratio: f64::NAN,
        passes_tail_test: false,
        tail_wavelength: None,
        linear_wavelength,
        message: None,
        field: None,
    };
    let guess = match sech2_initializer(&grid, &flow, a0) {
        Ok(g) => g,
        Err(e) => {
            report.message = Some(e.to_string());
            return Ok(report);
        }
    };
    match solve_from(&guess, opts) {
        Ok(sol) => {
            let sup = sol.field.sup_norm();
            report.iterations = sol.stats.iterations;
            report.residual_inf = sol.stats.residual_inf;
            report.sup_w = sup;
            if sup < 1e-8 {
                report.outcome = ProbeOutcome::ConvergedTrivial;
            } else {
                let amp = sol.field.surface().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                report.outcome = ProbeOutcome::ConvergedNontrivial;
                report.tail_ratio = tail_level(&sol.field, 0.9) / amp;
                report.passes_tail_test = report.tail_ratio <= 1e-6;
                report.tail_wavelength = tail_wavelength(&sol.field);
                report.field = Some(sol.field);
            }
        }
        Err(e) => {
            if let WaveError::Convergence { iterations, residual } = &e {
                report.iterations = *iterations;
                report.residual_inf = *residual;
            }
            report.message = Some(e.to_string());
        }
    }
    Ok(report)
}

//! Physical-variable fields recovered from a height function, sampled on a
//! Cartesian grid for checks in `(x, y)`.
//!
//! Cartesian nodes share the `x = q` columns of the strip grid; along each
//! column `y = h(q, p)` is inverted with six-point Lagrange interpolation in `p`.

use std::sync::Arc;

use crate::background::ShearFlow;
use crate::error::Result;
use crate::field::{BoundaryCondition, StripGrid, WaveField};

/// Physical quantities at the `(q, p)` nodes. `P_atm = 0`.
#[derive(Debug, Clone)]
pub struct PhysicalField {
    pub grid: StripGrid,
    pub flow: Arc<ShearFlow>,
    pub x: Vec<f64>,
    /// `y = h(q, p)`.
    pub y: Vec<f64>,
    /// `u - c = 1/h_p`.
    pub rel_u: Vec<f64>,
    /// `v = h_q / h_p`.
    pub v: Vec<f64>,
    pub pressure: Vec<f64>,
    /// `ψ = p`.
    pub psi: Vec<f64>,
}

pub fn reconstruct(field: &WaveField) -> Result<PhysicalField> {
    field.check_unidirectional()?;
    let flow = &field.flow;
    let n_p = field.grid.n_p();
    let total = flow.vorticity.total();
    let y = field.height();
    let n = y.len();
    let (mut rel_u, mut v, mut pressure, mut psi) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let j = k % n_p;
        let (hp, hq) = (field.h_p[k], field.w_q[k]);
        rel_u[k] = 1.0 / hp;
        v[k] = hq / hp;
        pressure[k] = flow.bernoulli - 0.5 * (1.0 + hq * hq) / (hp * hp) - y[k]
            - flow.vorticity.primitive[j]
            + total;
        psi[k] = field.grid.p[j];
    }
    Ok(PhysicalField {
        grid: field.grid.clone(),
        flow: flow.clone(),
        x: field.grid.q.clone(),
        y,
        rel_u,
        v,
        pressure,
        psi,
    })
}

impl PhysicalField {
    fn row(&self, values: &[f64], j: usize) -> Vec<f64> {
        let n_p = self.grid.n_p();
        values.chunks(n_p).map(|c| c[j]).collect()
    }

    /// Pressure on the free surface.
    pub fn surface_pressure(&self) -> Vec<f64> {
        self.row(&self.pressure, self.grid.n_p() - 1)
    }

    /// Vertical velocity on the bed.
    pub fn bed_velocity(&self) -> Vec<f64> {
        self.row(&self.v, 0)
    }

    pub fn min_rel_u(&self) -> f64 {
        self.rel_u.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Value and first derivative of the six-point Lagrange interpolant of the
/// uniformly spaced `col` (spacing `h`, first node at 0) at `t`.
fn lagrange(col: &[f64], h: f64, t: f64) -> (f64, f64) {
    let n = col.len();
    let m = 6.min(n);
    let s = t / h;
    let start = ((s.floor() as isize) - (m as isize / 2 - 1)).clamp(0, (n - m) as isize) as usize;
    let (mut val, mut der) = (0.0, 0.0);
    for a in 0..m {
        let xa = (start + a) as f64;
        let mut basis = 1.0;
        let mut dbasis = 0.0;
        for b in 0..m {
            if b == a {
                continue;
            }
            let xb = (start + b) as f64;
            let factor = (s - xb) / (xa - xb);
            dbasis = dbasis * factor + basis / (xa - xb);
            basis *= factor;
        }
        val += col[start + a] * basis;
        der += col[start + a] * dbasis / h;
    }
    (val, der)
}

/// `p` with `h(p) = y` on one column (`h` increasing).
fn invert_column(h: &[f64], dp: f64, y: f64) -> f64 {
    let n = h.len();
    let j = match h.iter().position(|v| *v > y) {
        Some(0) => return 0.0,
        Some(j) => j - 1,
        None => return 1.0,
    };
    let (mut lo, mut hi) = (j as f64 * dp, ((j + 1).min(n - 1)) as f64 * dp);
    let mut p = lo + (hi - lo) * (y - h[j]) / (h[j + 1] - h[j]);
    for _ in 0..60 {
        let (f, fp) = lagrange(h, dp, p);
        let r = f - y;
        if r > 0.0 {
            hi = p;
        } else {
            lo = p;
        }
        let mut next = p - r / fp;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - p).abs() < 1e-15 {
            return next;
        }
        p = next;
    }
    p
}

/// Cartesian nodes `(x_i, k Δy)` below the surface, `Δy = d / (n_p - 1)`.
#[derive(Debug, Clone)]
pub struct CartesianGrid {
    pub x: Vec<f64>,
    pub dy: f64,
    /// Number of nodes `k Δy ≤ h(q_i, 1)` per column.
    pub heights: Vec<usize>,
    /// Surface elevation `h(q_i, 1)` per column.
    pub top: Vec<f64>,
    /// `ψ` at each node, column-major with `n_y` rows; NaN above the surface.
    pub psi: Vec<f64>,
    pub n_y: usize,
    bc: BoundaryCondition,
}

impl CartesianGrid {
    pub fn new(phys: &PhysicalField) -> Self {
        let grid = &phys.grid;
        let (n_q, n_p) = (grid.n_q(), grid.n_p());
        let dy = phys.flow.depth / (n_p - 1) as f64;
        let top: Vec<f64> = phys.y.chunks(n_p).map(|c| c[n_p - 1]).collect();
        let heights: Vec<usize> = top.iter().map(|t| (t / dy * (1.0 + 1e-14)).floor() as usize + 1).collect();
        let n_y = *heights.iter().max().unwrap();
        let mut psi = vec![f64::NAN; n_q * n_y];
        for i in 0..n_q {
            let col = &phys.y[i * n_p..(i + 1) * n_p];
            for k in 0..heights[i] {
                psi[i * n_y + k] = invert_column(col, grid.dp(), k as f64 * dy);
            }
        }
        CartesianGrid {
            x: grid.q.clone(),
            dy,
            heights,
            top,
            psi,
            n_y,
            bc: grid.bc,
        }
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn dx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn inside(&self, i: usize, k: usize) -> bool {
        k < self.heights[i]
    }

    /// Interpolate a `(q, p)` grid quantity to the Cartesian nodes.
    pub fn sample(&self, phys: &PhysicalField, values: &[f64]) -> Vec<f64> {
        let n_p = phys.grid.n_p();
        let dp = phys.grid.dp();
        let mut out = vec![f64::NAN; self.psi.len()];
        for i in 0..self.n_x() {
            let col = &values[i * n_p..(i + 1) * n_p];
            for k in 0..self.heights[i] {
                out[i * self.n_y + k] = lagrange(col, dp, self.psi[i * self.n_y + k]).0;
            }
        }
        out
    }

    fn neighbors(&self, i: usize) -> Option<(usize, usize)> {
        let n = self.n_x();
        match self.bc {
            BoundaryCondition::Periodic => Some((if i == 0 { n - 2 } else { i - 1 }, if i == n - 1 { 1 } else { i + 1 })),
            _ => (i > 0 && i + 1 < n).then(|| (i - 1, i + 1)),
        }
    }

    /// Nodes whose five-point stencil lies `collar` nodes inside the fluid.
    fn stencil_nodes(&self, collar: usize) -> Vec<(usize, usize, usize, usize)> {
        let n = self.n_x();
        let mut out = Vec::new();
        for i in 0..n {
            let Some((im, ip)) = self.neighbors(i) else { continue };
            if self.bc != BoundaryCondition::Periodic && (i < collar || i + collar >= n) {
                continue;
            }
            let kmax = self.heights[i].min(self.heights[im]).min(self.heights[ip]);
            for k in collar.max(1)..kmax.saturating_sub(collar.max(1)) {
                out.push((i, k, im, ip));
            }
        }
        out
    }

    /// `∫_0^{h(q_i,1)} f dy` per column by the trapezoid rule on the nodes,
    /// closing the last partial cell with the surface value `f_top`.
    pub fn column_integrals(&self, sampled: &[f64], f_top: &[f64]) -> Vec<f64> {
        (0..self.n_x())
            .map(|i| {
                let m = self.heights[i];
                let col = &sampled[i * self.n_y..i * self.n_y + m];
                let mut s = 0.0;
                for k in 0..m - 1 {
                    s += 0.5 * self.dy * (col[k] + col[k + 1]);
                }
                let rest = self.top[i] - (m - 1) as f64 * self.dy;
                s + 0.5 * rest * (col[m - 1] + f_top[i])
            })
            .collect()
    }
}

/// A Cartesian field with NaN where it is not evaluated.
#[derive(Debug, Clone)]
pub struct CartesianValues {
    pub values: Vec<f64>,
    pub n_y: usize,
}

impl CartesianValues {
    pub fn sup(&self) -> f64 {
        self.sup_on(1)
    }

    /// Sup over nodes `(s·i, s·k)`.
    pub fn sup_on(&self, stride: usize) -> f64 {
        let mut m: f64 = 0.0;
        for (idx, v) in self.values.iter().enumerate() {
            let (i, k) = (idx / self.n_y, idx % self.n_y);
            if i % stride == 0 && k % stride == 0 && v.is_finite() {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Residual grids in physical variables.
#[derive(Debug, Clone)]
pub struct EulerResiduals {
    /// `(P + (u-c)²)_x + ((u-c)v)_y`.
    pub x_momentum: CartesianValues,
    /// `((u-c)v)_x + (P + v² + y)_y`.
    pub y_momentum: CartesianValues,
    /// `v_x - u_y - ω(ψ)`.
    pub vorticity: CartesianValues,
    /// `max |∫(u - c) dy - 1|` over columns.
    pub mass_flux_defect: f64,
}

pub const COLLAR: usize = 2;

pub fn euler_residuals(phys: &PhysicalField) -> EulerResiduals {
    euler_residuals_with(phys, COLLAR)
}

/// As [`euler_residuals`] with `collar` nodes dropped next to the bed, the
/// surface and open ends.
pub fn euler_residuals_with(phys: &PhysicalField, collar: usize) -> EulerResiduals {
    let cart = CartesianGrid::new(phys);
    let n = phys.y.len();
    let mut u1 = vec![0.0; n];
    let mut u2 = vec![0.0; n];
    let mut u3 = vec![0.0; n];
    for k in 0..n {
        let (u, v, p) = (phys.rel_u[k], phys.v[k], phys.pressure[k]);
        u1[k] = p + u * u;
        u2[k] = u * v;
        u3[k] = p + v * v + phys.y[k];
    }
    let (s1, s2, s3) = (cart.sample(phys, &u1), cart.sample(phys, &u2), cart.sample(phys, &u3));
    let su = cart.sample(phys, &phys.rel_u);
    let sv = cart.sample(phys, &phys.v);
    let (dx, dy, ny) = (cart.dx(), cart.dy, cart.n_y);
    let mut rx = vec![f64::NAN; cart.psi.len()];
    let mut ry = rx.clone();
    let mut rw = rx.clone();
    for (i, k, im, ip) in cart.stencil_nodes(collar) {
        let at = |f: &[f64], a: usize, b: usize| f[a * ny + b];
        let ddx = |f: &[f64]| (at(f, ip, k) - at(f, im, k)) / (2.0 * dx);
        let ddy = |f: &[f64]| (at(f, i, k + 1) - at(f, i, k - 1)) / (2.0 * dy);
        let idx = i * ny + k;
        rx[idx] = ddx(&s1) + ddy(&s2);
        ry[idx] = ddx(&s2) + ddy(&s3);
        rw[idx] = ddx(&sv) - ddy(&su) - phys.flow.vorticity.function.eval(cart.psi[idx]);
    }
    let u_top = phys.row(&phys.rel_u, phys.grid.n_p() - 1);
    let flux = cart.column_integrals(&su, &u_top);
    EulerResiduals {
        x_momentum: CartesianValues { values: rx, n_y: ny },
        y_momentum: CartesianValues { values: ry, n_y: ny },
        vorticity: CartesianValues { values: rw, n_y: ny },
        mass_flux_defect: flux.iter().fold(0.0, |m, f| m.max((f - 1.0).abs())),
    }
}

/// `∫_0^{d+η} (P + (u - c)²) dy` per column.
pub fn physical_flow_force(phys: &PhysicalField) -> Vec<f64> {
    let cart = CartesianGrid::new(phys);
    let integrand: Vec<f64> = phys
        .pressure
        .iter()
        .zip(&phys.rel_u)
        .map(|(p, u)| p + u * u)
        .collect();
    let sampled = cart.sample(phys, &integrand);
    let top = phys.row(&integrand, phys.grid.n_p() - 1);
    cart.column_integrals(&sampled, &top)
}

/// Five-point Laplacian in `(x, y)` of a `(q, p)` grid quantity.
pub fn physical_laplacian(phys: &PhysicalField, values: &[f64]) -> CartesianValues {
    physical_laplacian_with(phys, values, COLLAR)
}

pub fn physical_laplacian_with(phys: &PhysicalField, values: &[f64], collar: usize) -> CartesianValues {
    let cart = CartesianGrid::new(phys);
    let s = cart.sample(phys, values);
    let (dx, dy, ny) = (cart.dx(), cart.dy, cart.n_y);
    let mut out = vec![f64::NAN; s.len()];
    for (i, k, im, ip) in cart.stencil_nodes(collar) {
        let c = s[i * ny + k];
        out[i * ny + k] = (s[ip * ny + k] - 2.0 * c + s[im * ny + k]) / (dx * dx)
            + (s[i * ny + k + 1] - 2.0 * c + s[i * ny + k - 1]) / (dy * dy);
    }
    CartesianValues { values: out, n_y: ny }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{solve_background, Vorticity};

    #[test]
    fn lagrange_is_exact_for_quintics() {
        let h = 0.1;
        let col: Vec<f64> = (0..11).map(|j| (j as f64 * h).powi(5) - 2.0 * (j as f64 * h)).collect();
        for t in [0.0, 0.033, 0.5, 0.97, 1.0] {
            let (v, d) = lagrange(&col, h, t);
            assert!((v - (t.powi(5) - 2.0 * t)).abs() < 1e-12);
            assert!((d - (5.0 * t.powi(4) - 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn trivial_irrotational_state_is_hydrostatic() {
        let flow = Arc::new(solve_background(&Vorticity::zero(), 0.5, 21).unwrap());
        let grid = StripGrid::new(3.0, 13, 21, BoundaryCondition::Decay).unwrap();
        let field = WaveField::zero(grid, flow).unwrap();
        let phys = reconstruct(&field).unwrap();
        for k in 0..phys.y.len() {
            assert!((phys.rel_u[k] - 1.0).abs() < 1e-14);
            assert_eq!(phys.v[k], 0.0);
            assert!((phys.pressure[k] - (1.0 - phys.y[k])).abs() < 1e-14);
        }
        let e = euler_residuals(&phys);
        assert!(e.x_momentum.sup() < 1e-12 && e.y_momentum.sup() < 1e-12);
        assert!(e.vorticity.sup() < 1e-12);
        assert!(e.mass_flux_defect < 1e-13);
        for s in physical_flow_force(&phys) {
            assert!((s - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sheared_background_vorticity_is_recovered() {
        let flow = Arc::new(solve_background(&Vorticity::constant(0.4), 0.6, 41).unwrap());
        let grid = StripGrid::new(3.0, 13, 41, BoundaryCondition::Decay).unwrap();
        let phys = reconstruct(&WaveField::zero(grid, flow).unwrap()).unwrap();
        let e = euler_residuals(&phys);
        assert!(e.vorticity.sup() < 1e-4, "{}", e.vorticity.sup());
        assert!(e.mass_flux_defect < 1e-3);
    }
}

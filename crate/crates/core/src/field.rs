//! Tensor grids on the truncated strip and wave fields `w(q, p)` on them.

use std::sync::Arc;

use crate::background::{uniform_grid, ShearFlow};
use crate::error::{Result, WaveError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    None,
    EvenInQ,
}

/// Lateral closure of the truncated strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// `w = 0` at `q = ±L`.
    Decay,
    /// Period `2L`; the nodes at `q = ±L` coincide.
    Periodic,
    /// Even about `q = 0`, `w = 0` at `q = ±L`.
    EvenSymmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripGrid {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub half_length: f64,
    pub symmetry: Symmetry,
    pub bc: BoundaryCondition,
}

impl StripGrid {
    pub fn new(half_length: f64, n_q: usize, n_p: usize, bc: BoundaryCondition) -> Result<Self> {
        let symmetry = match bc {
            BoundaryCondition::Decay => Symmetry::None,
            _ => Symmetry::EvenInQ,
        };
        Self::with_symmetry(half_length, n_q, n_p, bc, symmetry)
    }

    pub fn with_symmetry(
        half_length: f64,
        n_q: usize,
        n_p: usize,
        bc: BoundaryCondition,
        symmetry: Symmetry,
    ) -> Result<Self> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(WaveError::Input(format!("half-length L = {half_length} must be positive")));
        }
        if n_q < 5 || n_p < 5 {
            return Err(WaveError::Input(format!("grid {n_q}x{n_p} too small (need 5x5)")));
        }
        if symmetry == Symmetry::EvenInQ && n_q % 2 == 0 {
            return Err(WaveError::Input(format!("even symmetry needs odd n_q, got {n_q}")));
        }
        if bc == BoundaryCondition::EvenSymmetric && symmetry != Symmetry::EvenInQ {
            return Err(WaveError::Input("even-symmetric closure needs an even grid".into()));
        }
        let dq = 2.0 * half_length / (n_q - 1) as f64;
        let q = (0..n_q)
            .map(|i| {
                if symmetry == Symmetry::EvenInQ {
                    (i as f64 - ((n_q - 1) / 2) as f64) * dq
                } else {
                    -half_length + i as f64 * dq
                }
            })
            .collect();
        Ok(StripGrid {
            q,
            p: uniform_grid(n_p),
            half_length,
            symmetry,
            bc,
        })
    }

    pub fn n_q(&self) -> usize {
        self.q.len()
    }

    pub fn n_p(&self) -> usize {
        self.p.len()
    }

    pub fn len(&self) -> usize {
        self.n_q() * self.n_p()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dq(&self) -> f64 {
        2.0 * self.half_length / (self.n_q() - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        1.0 / (self.n_p() - 1) as f64
    }

    /// Index of the `q = 0` column (grids with even symmetry).
    pub fn center(&self) -> usize {
        (self.n_q() - 1) / 2
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_p() + j
    }

    /// Neighbours of column `i` for centered stencils; `None` at an open end.
    pub fn q_neighbors(&self, i: usize) -> (Option<usize>, Option<usize>) {
        let n = self.n_q();
        match self.bc {
            BoundaryCondition::Periodic => {
                let prev = if i == 0 { n - 2 } else { i - 1 };
                let next = if i == n - 1 { 1 } else { i + 1 };
                (Some(prev), Some(next))
            }
            _ => ((i > 0).then(|| i - 1), (i + 1 < n).then(|| i + 1)),
        }
    }

    /// Same grid with both spacings halved.
    pub fn refined(&self) -> Result<Self> {
        Self::with_symmetry(
            self.half_length,
            2 * self.n_q() - 1,
            2 * self.n_p() - 1,
            self.bc,
            self.symmetry,
        )
    }

    pub fn with_half_length(&self, half_length: f64) -> Result<Self> {
        Self::with_symmetry(half_length, self.n_q(), self.n_p(), self.bc, self.symmetry)
    }

    pub fn d_q(&self, f: &[f64]) -> Vec<f64> {
        let (n_q, n_p, h) = (self.n_q(), self.n_p(), self.dq());
        let mut out = vec![0.0; f.len()];
        for i in 0..n_q {
            let at = |k: usize, j: usize| f[k * n_p + j];
            for j in 0..n_p {
                out[i * n_p + j] = match self.q_neighbors(i) {
                    (Some(a), Some(b)) => (at(b, j) - at(a, j)) / (2.0 * h),
                    (None, _) => (-3.0 * at(i, j) + 4.0 * at(i + 1, j) - at(i + 2, j)) / (2.0 * h),
                    (_, None) => (3.0 * at(i, j) - 4.0 * at(i - 1, j) + at(i - 2, j)) / (2.0 * h),
                };
            }
        }
        out
    }

    pub fn d_qq(&self, f: &[f64]) -> Vec<f64> {
        let (n_q, n_p, h) = (self.n_q(), self.n_p(), self.dq());
        let h2 = h * h;
        let mut out = vec![0.0; f.len()];
        for i in 0..n_q {
            let at = |k: usize, j: usize| f[k * n_p + j];
            for j in 0..n_p {
                out[i * n_p + j] = match self.q_neighbors(i) {
                    (Some(a), Some(b)) => (at(b, j) - 2.0 * at(i, j) + at(a, j)) / h2,
                    (None, _) => {
                        (2.0 * at(i, j) - 5.0 * at(i + 1, j) + 4.0 * at(i + 2, j) - at(i + 3, j)) / h2
                    }
                    (_, None) => {
                        (2.0 * at(i, j) - 5.0 * at(i - 1, j) + 4.0 * at(i - 2, j) - at(i - 3, j)) / h2
                    }
                };
            }
        }
        out
    }

    pub fn d_p(&self, f: &[f64]) -> Vec<f64> {
        let n_p = self.n_p();
        let mut out = Vec::with_capacity(f.len());
        for col in f.chunks(n_p) {
            out.extend(crate::stencil::derivative(col, self.dp()));
        }
        out
    }

    pub fn d_pp(&self, f: &[f64]) -> Vec<f64> {
        let n_p = self.n_p();
        let mut out = Vec::with_capacity(f.len());
        for col in f.chunks(n_p) {
            out.extend(crate::stencil::second_derivative(col, self.dp()));
        }
        out
    }
}

/// A discretized perturbation `w = h - H` with its difference quotients.
#[derive(Debug, Clone)]
pub struct WaveField {
    pub grid: StripGrid,
    pub flow: Arc<ShearFlow>,
    pub w: Vec<f64>,
    pub w_q: Vec<f64>,
    pub w_p: Vec<f64>,
    pub w_qq: Vec<f64>,
    pub w_qp: Vec<f64>,
    pub w_pp: Vec<f64>,
    /// `h_p = H_p + w_p`.
    pub h_p: Vec<f64>,
}

impl WaveField {
    pub fn new(grid: StripGrid, flow: Arc<ShearFlow>, w: Vec<f64>) -> Result<Self> {
        let field = Self::build(grid, flow, w)?;
        field.check_unidirectional()?;
        Ok(field)
    }

    /// Like [`WaveField::new`] without the `inf h_p > 0` check.
    pub fn unchecked(grid: StripGrid, flow: Arc<ShearFlow>, w: Vec<f64>) -> Result<Self> {
        Self::build(grid, flow, w)
    }

    fn build(grid: StripGrid, flow: Arc<ShearFlow>, w: Vec<f64>) -> Result<Self> {
        let n_p = grid.n_p();
        if flow.n_p() != n_p {
            return Err(WaveError::Input(format!(
                "background has {} p-nodes, grid has {n_p}",
                flow.n_p()
            )));
        }
        if w.len() != grid.len() {
            return Err(WaveError::Input(format!(
                "field has {} values, grid needs {}",
                w.len(),
                grid.len()
            )));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(WaveError::Input(format!("non-finite field value at index {i}")));
        }
        if let Some(i) = (0..grid.n_q()).find(|&i| w[i * n_p] != 0.0) {
            return Err(WaveError::Input(format!("w(q, 0) must vanish; column {i} does not")));
        }
        let w_q = grid.d_q(&w);
        let w_p = grid.d_p(&w);
        let w_qq = grid.d_qq(&w);
        let w_pp = grid.d_pp(&w);
        let w_qp = grid.d_q(&w_p);
        let h_p = w_p
            .iter()
            .enumerate()
            .map(|(k, v)| flow.h_p[k % n_p] + v)
            .collect();
        Ok(WaveField {
            grid,
            flow,
            w,
            w_q,
            w_p,
            w_qq,
            w_qp,
            w_pp,
            h_p,
        })
    }

    pub fn zero(grid: StripGrid, flow: Arc<ShearFlow>) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, flow, vec![0.0; n])
    }

    /// Field from a closure `w(q, p)`; the bed row is forced to zero.
    pub fn from_fn(
        grid: StripGrid,
        flow: Arc<ShearFlow>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut w = Vec::with_capacity(grid.len());
        for &q in &grid.q {
            for (j, &p) in grid.p.iter().enumerate() {
                w.push(if j == 0 { 0.0 } else { f(q, p) });
            }
        }
        Self::new(grid, flow, w)
    }

    pub fn check_unidirectional(&self) -> Result<()> {
        let n_p = self.grid.n_p();
        if let Some((k, v)) = self
            .h_p
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0))
        {
            return Err(WaveError::UnidirectionalityViolation {
                location: format!("h_p at (q, p) = ({:.4}, {:.4})", self.grid.q[k / n_p], self.grid.p[k % n_p]),
                value: *v,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.w[self.grid.idx(i, j)]
    }

    /// Surface elevation `η(q) = w(q, 1)`.
    pub fn surface(&self) -> Vec<f64> {
        let n_p = self.grid.n_p();
        self.w.chunks(n_p).map(|c| c[n_p - 1]).collect()
    }

    /// `w` at `(q = 0, p = 1)`, or at the middle column without symmetry.
    pub fn amplitude(&self) -> f64 {
        self.at(self.grid.center(), self.grid.n_p() - 1)
    }

    pub fn sup_norm(&self) -> f64 {
        self.w.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `h = H + w`.
    pub fn height(&self) -> Vec<f64> {
        let n_p = self.grid.n_p();
        self.w
            .iter()
            .enumerate()
            .map(|(k, v)| self.flow.h[k % n_p] + v)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{solve_background, Vorticity};

    fn flow(n_p: usize) -> Arc<ShearFlow> {
        Arc::new(solve_background(&Vorticity::zero(), 0.5, n_p).unwrap())
    }

    #[test]
    fn even_grid_needs_odd_columns() {
        assert!(StripGrid::new(1.0, 10, 9, BoundaryCondition::EvenSymmetric).is_err());
        let g = StripGrid::new(1.0, 11, 9, BoundaryCondition::EvenSymmetric).unwrap();
        assert_eq!(g.q[g.center()], 0.0);
        assert!(StripGrid::new(-1.0, 11, 9, BoundaryCondition::Decay).is_err());
    }

    #[test]
    fn bed_values_must_vanish() {
        let g = StripGrid::new(1.0, 9, 9, BoundaryCondition::Decay).unwrap();
        let w = vec![1e-3; g.len()];
        assert!(WaveField::new(g, flow(9), w).is_err());
    }

    #[test]
    fn periodic_derivatives_wrap() {
        let l = std::f64::consts::PI;
        let g = StripGrid::new(l, 129, 9, BoundaryCondition::Periodic).unwrap();
        let f = WaveField::from_fn(g, flow(9), |q, p| 1e-3 * q.cos() * p).unwrap();
        let n_p = 9;
        for i in [0usize, 64, 128] {
            let q = f.grid.q[i];
            let exact = -1e-3 * q.sin() * 1.0;
            assert!((f.w_q[i * n_p + n_p - 1] - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn reversing_field_rejected() {
        let g = StripGrid::new(1.0, 9, 9, BoundaryCondition::Decay).unwrap();
        let err = WaveField::from_fn(g, flow(9), |_, p| -2.0 * p).unwrap_err();
        assert!(matches!(err, WaveError::UnidirectionalityViolation { .. }));
    }
}

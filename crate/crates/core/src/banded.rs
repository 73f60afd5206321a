//! Banded matrices and LU factorization with partial pivoting.

use crate::error::{Result, WaveError};

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
///
/// Each row keeps `kl` extra slots on the right for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + j + self.kl - i
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Accumulates `value` into entry `(i, j)`; panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let mut pivots = vec![0usize; n];
        let mut lower = vec![0.0; n * kl.max(1)];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || best <= f64::EPSILON * 1e-6 * scale {
                return Err(WaveError::Solver(format!(
                    "singular banded matrix: zero pivot in column {k} of {n}"
                )));
            }
            pivots[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            let row_k = self.slot(k, k);
            for r in 1..=(last - k) {
                let i = k + r;
                let sik = self.slot(i, k);
                let m = self.data[sik] / pivot;
                lower[k * kl + r - 1] = m;
                self.data[sik] = 0.0;
                if m == 0.0 {
                    continue;
                }
                let row_i = self.slot(i, k);
                let len = jmax - k;
                let (head, tail) = self.data.split_at_mut(row_i);
                let src = &head[row_k + 1..row_k + 1 + len];
                for (dst, s) in tail[1..1 + len].iter_mut().zip(src) {
                    *dst -= m * s;
                }
            }
        }
        let _ = w;
        Ok(BandedLu {
            matrix: self,
            pivots,
            lower,
        })
    }
}

/// Factorization produced by [`BandedMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandedLu {
    matrix: BandedMatrix,
    pivots: Vec<usize>,
    lower: Vec<f64>,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.matrix;
        let (n, kl) = (a.n, a.kl);
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                let last = (k + kl).min(n - 1);
                for r in 1..=(last - k) {
                    b[k + r] -= self.lower[k * kl + r - 1] * bk;
                }
            }
        }
        let reach = a.ku + a.kl;
        for k in (0..n).rev() {
            let jmax = (k + reach).min(n - 1);
            let base = a.slot(k, k);
            let mut acc = b[k];
            for (off, j) in (k + 1..=jmax).enumerate() {
                acc -= a.data[base + 1 + off] * b[j];
            }
            b[k] = acc / a.data[base];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> (BandedMatrix, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = BandedMatrix::zeros(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m.add(i, j, v);
                dense[i][j] = v;
            }
        }
        (m, dense)
    }

    #[test]
    fn solves_random_nonsymmetric_system() {
        for (kl, ku) in [(1, 1), (3, 2), (5, 7)] {
            let n = 60;
            let (m, dense) = random_banded(n, kl, ku, 7 + kl as u64);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = dense
                .iter()
                .map(|row| row.iter().zip(&x).map(|(a, v)| a * v).sum())
                .collect();
            assert_eq!(m.mul_vec(&x).len(), n);
            let lu = m.factor().unwrap();
            let y = lu.solve(&b);
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "kl={kl} ku={ku} err={err}");
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut m = BandedMatrix::zeros(2, 1, 1);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 2.0);
        let x = m.factor().unwrap().solve(&[3.0, 5.0]);
        assert!((x[0] + 1.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_reported() {
        let m = BandedMatrix::zeros(3, 1, 1);
        assert!(matches!(m.factor(), Err(WaveError::Solver(_))));
    }
}

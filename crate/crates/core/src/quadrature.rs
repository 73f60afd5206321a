//! Composite quadrature on uniform grids.

/// Composite rule used for running integrals and column integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    Simpson,
}

/// Running integral `F[i] = ∫_{x_0}^{x_i} f` with `F[0] = 0`.
///
/// Simpson accumulates pairs of intervals; an odd trailing interval is closed
/// with the three-point rule `(5 f_{i-1} + 8 f_i - f_{i+1}) h / 12` (or its
/// mirror at the right end).
pub fn cumulative(values: &[f64], h: f64, rule: Quadrature) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    match rule {
        Quadrature::Trapezoid => {
            for i in 1..n {
                out[i] = out[i - 1] + 0.5 * h * (values[i - 1] + values[i]);
            }
        }
        Quadrature::Simpson => {
            if n == 2 {
                out[1] = 0.5 * h * (values[0] + values[1]);
                return out;
            }
            let mut i = 2;
            while i < n {
                out[i] = out[i - 2] + h / 3.0 * (values[i - 2] + 4.0 * values[i - 1] + values[i]);
                i += 2;
            }
            let mut i = 1;
            while i < n {
                let step = if i + 1 < n {
                    h / 12.0 * (5.0 * values[i - 1] + 8.0 * values[i] - values[i + 1])
                } else {
                    h / 12.0 * (-values[i - 2] + 8.0 * values[i - 1] + 5.0 * values[i])
                };
                out[i] = out[i - 1] + step;
                i += 2;
            }
        }
    }
    out
}

/// Weights `w` with `∫ f ≈ Σ w_i f_i` over the whole grid.
pub fn weights(n: usize, h: f64, rule: Quadrature) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    match rule {
        Quadrature::Simpson if n % 2 == 1 && n >= 3 => {
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = if i == 0 || i == n - 1 {
                    h / 3.0
                } else if i % 2 == 1 {
                    4.0 * h / 3.0
                } else {
                    2.0 * h / 3.0
                };
            }
        }
        _ => {
            w.iter_mut().for_each(|wi| *wi = h);
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
        }
    }
    w
}

pub fn integrate(values: &[f64], h: f64, rule: Quadrature) -> f64 {
    weights(values.len(), h, rule)
        .iter()
        .zip(values)
        .map(|(w, f)| w * f)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> (Vec<f64>, f64) {
        let h = 1.0 / (n - 1) as f64;
        ((0..n).map(|i| i as f64 * h).collect(), h)
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let (x, h) = grid(11);
        let f: Vec<f64> = x.iter().map(|p| 3.0 * p - 1.0).collect();
        let c = cumulative(&f, h, Quadrature::Trapezoid);
        for (xi, ci) in x.iter().zip(&c) {
            assert!((ci - (1.5 * xi * xi - xi)).abs() < 1e-14);
        }
    }

    #[test]
    fn simpson_exact_for_quadratic_at_every_node() {
        let (x, h) = grid(12);
        let f: Vec<f64> = x.iter().map(|p| p * p).collect();
        let c = cumulative(&f, h, Quadrature::Simpson);
        for (xi, ci) in x.iter().zip(&c) {
            assert!((ci - xi.powi(3) / 3.0).abs() < 1e-14, "{xi} {ci}");
        }
    }

    #[test]
    fn trapezoid_second_order() {
        let err = |n: usize| {
            let (x, h) = grid(n);
            let f: Vec<f64> = x.iter().map(|p| p.exp()).collect();
            (integrate(&f, h, Quadrature::Trapezoid) - (1f64.exp() - 1.0)).abs()
        };
        let ratio = err(101) / err(201);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }
}

//! Laminar background flows `H(p)` in Keady–Norbury units (unit mass flux,
//! unit gravity).
//!
//! A background is determined by the vorticity function and the flow
//! parameter `s = R - d`, through `1/(2 H_p^2) + Ω(p) = s + Ω(1)`.

use crate::error::{Result, WaveError};
use crate::quadrature::{self, Quadrature};

/// The vorticity function `ω(p)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Vorticity {
    /// `ω(p) = Σ_k c_k p^k`.
    Polynomial(Vec<f64>),
    /// Samples on a uniform grid of `[0, 1]`, interpolated linearly.
    Sampled(Vec<f64>),
}

impl Vorticity {
    pub fn zero() -> Self {
        Vorticity::Polynomial(vec![0.0])
    }

    pub fn constant(value: f64) -> Self {
        Vorticity::Polynomial(vec![value])
    }

    pub fn is_irrotational(&self) -> bool {
        match self {
            Vorticity::Polynomial(c) | Vorticity::Sampled(c) => c.iter().all(|v| *v == 0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, values) = match self {
            Vorticity::Polynomial(c) => ("polynomial coefficient", c),
            Vorticity::Sampled(s) => ("vorticity sample", s),
        };
        if values.is_empty() {
            return Err(WaveError::Input(format!("no {name}s given")));
        }
        if let Vorticity::Sampled(s) = self {
            if s.len() < 2 {
                return Err(WaveError::Input("sampled vorticity needs at least 2 values".into()));
            }
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(WaveError::Input(format!("{name} {i} is not finite ({v})")));
        }
        Ok(())
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            Vorticity::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * p + ck),
            Vorticity::Sampled(s) => {
                let m = s.len() - 1;
                let x = (p.clamp(0.0, 1.0)) * m as f64;
                let k = (x.floor() as usize).min(m - 1);
                let t = x - k as f64;
                (1.0 - t) * s[k] + t * s[k + 1]
            }
        }
    }
}

/// Vorticity samples on the p-grid together with their running primitive `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct VorticityProfile {
    pub function: Vorticity,
    pub rule: Quadrature,
    pub dp: f64,
    pub omega: Vec<f64>,
    pub primitive: Vec<f64>,
}

impl VorticityProfile {
    pub fn n_p(&self) -> usize {
        self.omega.len()
    }

    /// `Ω(1)`.
    pub fn total(&self) -> f64 {
        *self.primitive.last().expect("nonempty grid")
    }
}

pub fn uniform_grid(n: usize) -> Vec<f64> {
    let h = 1.0 / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { 1.0 } else { i as f64 * h }).collect()
}

/// Samples `ω` on a uniform grid of `n_p` points and integrates it.
pub fn build_primitive(
    vorticity: &Vorticity,
    n_p: usize,
    rule: Quadrature,
) -> Result<VorticityProfile> {
    vorticity.validate()?;
    if n_p < 3 {
        return Err(WaveError::Input(format!("n_p must be at least 3, got {n_p}")));
    }
    let dp = 1.0 / (n_p - 1) as f64;
    let omega: Vec<f64> = uniform_grid(n_p).iter().map(|&p| vorticity.eval(p)).collect();
    let primitive = quadrature::cumulative(&omega, dp, rule);
    Ok(VorticityProfile {
        function: vorticity.clone(),
        rule,
        dp,
        omega,
        primitive,
    })
}

/// A laminar background flow on a uniform p-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShearFlow {
    pub p: Vec<f64>,
    pub h: Vec<f64>,
    pub h_p: Vec<f64>,
    pub h_pp: Vec<f64>,
    pub depth: f64,
    pub bernoulli: f64,
    pub s: f64,
    pub froude: f64,
    pub vorticity: VorticityProfile,
}

impl ShearFlow {
    pub fn n_p(&self) -> usize {
        self.p.len()
    }

    pub fn dp(&self) -> f64 {
        self.vorticity.dp
    }

    pub fn rule(&self) -> Quadrature {
        self.vorticity.rule
    }

    pub fn is_irrotational(&self) -> bool {
        self.vorticity.function.is_irrotational()
    }

    /// `max_p |1/(2 H_p^2) + Ω(p) - (s + Ω(1))|`.
    pub fn bernoulli_defect(&self) -> f64 {
        let c = self.s + self.vorticity.total();
        self.h_p
            .iter()
            .zip(&self.vorticity.primitive)
            .map(|(hp, om)| (0.5 / (hp * hp) + om - c).abs())
            .fold(0.0, f64::max)
    }
}

pub fn solve_background(vorticity: &Vorticity, s: f64, n_p: usize) -> Result<ShearFlow> {
    solve_background_with(vorticity, s, n_p, Quadrature::Trapezoid)
}

pub fn solve_background_with(
    vorticity: &Vorticity,
    s: f64,
    n_p: usize,
    rule: Quadrature,
) -> Result<ShearFlow> {
    if !s.is_finite() {
        return Err(WaveError::Input(format!("flow parameter s = {s} is not finite")));
    }
    let profile = build_primitive(vorticity, n_p, rule)?;
    from_profile(profile, s)
}

/// Background for an already-integrated vorticity profile.
pub fn from_profile(profile: VorticityProfile, s: f64) -> Result<ShearFlow> {
    let total = profile.total();
    let p = uniform_grid(profile.n_p());
    let mut h_p = Vec::with_capacity(p.len());
    for (i, om) in profile.primitive.iter().enumerate() {
        let radicand = 2.0 * (s + total - om);
        if radicand <= 0.0 {
            return Err(WaveError::UnidirectionalityViolation {
                location: format!("background at p = {:.6}", p[i]),
                value: radicand,
            });
        }
        h_p.push(radicand.powf(-0.5));
    }
    let h = quadrature::cumulative(&h_p, profile.dp, profile.rule);
    let h_pp = h_p
        .iter()
        .zip(&profile.omega)
        .map(|(hp, om)| om * hp.powi(3))
        .collect();
    let depth = *h.last().unwrap();
    let mut flow = ShearFlow {
        p,
        h,
        h_p,
        h_pp,
        depth,
        bernoulli: s + depth,
        s,
        froude: f64::NAN,
        vorticity: profile,
    };
    flow.froude = froude(&flow);
    Ok(flow)
}

/// `F = (∫_0^1 H_p^3 dp)^{-1/2}`.
pub fn froude(flow: &ShearFlow) -> f64 {
    let cubes: Vec<f64> = flow.h_p.iter().map(|v| v.powi(3)).collect();
    quadrature::integrate(&cubes, flow.dp(), flow.rule()).powf(-0.5)
}

/// Smallest admissible flow parameter: the radicand must stay positive.
pub fn min_parameter(profile: &VorticityProfile) -> f64 {
    let total = profile.total();
    profile
        .primitive
        .iter()
        .map(|om| om - total)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `s` such that the background has Froude number `target`, by bisection.
pub fn parameter_for_froude(
    vorticity: &Vorticity,
    n_p: usize,
    rule: Quadrature,
    target: f64,
) -> Result<f64> {
    if !(target.is_finite() && target > 0.0) {
        return Err(WaveError::Input(format!("target Froude number {target} must be positive")));
    }
    let profile = build_primitive(vorticity, n_p, rule)?;
    let s_min = min_parameter(&profile);
    let f_at = |s: f64| from_profile(profile.clone(), s).map(|flow| flow.froude);

    let mut lo = s_min + 1e-9 * s_min.abs().max(1.0);
    let mut hi = s_min.abs().max(1.0);
    let f_lo = f_at(lo)?;
    let mut f_hi = f_at(hi)?;
    let mut grow = 0;
    while f_hi <= target {
        hi = s_min + 2.0 * (hi - s_min);
        f_hi = f_at(hi)?;
        grow += 1;
        if grow > 200 {
            return Err(WaveError::Bracket(format!(
                "F stays below {target} up to s = {hi:e}"
            )));
        }
    }
    if f_lo >= target {
        return Err(WaveError::Bracket(format!(
            "F({lo:e}) = {f_lo} already exceeds {target} at the admissibility limit"
        )));
    }

    // F(s) is only observed to be increasing; check before trusting bisection.
    let samples = 17;
    let mut prev = f_lo;
    for k in 1..samples {
        let s = lo + (hi - lo) * k as f64 / (samples - 1) as f64;
        let f = f_at(s)?;
        if f <= prev {
            return Err(WaveError::Bracket(format!(
                "F is not monotone in s on [{lo:e}, {hi:e}] (F = {prev} then {f} at s = {s:e})"
            )));
        }
        prev = f;
    }

    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let f = f_at(mid)?;
        if (f - target).abs() < 1e-13 || mid == lo || mid == hi {
            return Ok(mid);
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Flow parameter at which the background is critical (`F = 1`).
pub fn critical_parameter(vorticity: &Vorticity, n_p: usize) -> Result<f64> {
    parameter_for_froude(vorticity, n_p, Quadrature::Trapezoid, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_of_zero_and_constant() {
        let z = build_primitive(&Vorticity::zero(), 101, Quadrature::Trapezoid).unwrap();
        assert!(z.primitive.iter().all(|v| *v == 0.0));
        assert_eq!(z.primitive[0], 0.0);

        let b = build_primitive(&Vorticity::constant(-0.7), 101, Quadrature::Trapezoid).unwrap();
        for (i, v) in b.primitive.iter().enumerate() {
            assert!((v + 0.7 * i as f64 / 100.0).abs() < 1e-14);
        }
    }

    #[test]
    fn primitive_of_identity() {
        let prof = build_primitive(&Vorticity::Polynomial(vec![0.0, 1.0]), 2001, Quadrature::Trapezoid)
            .unwrap();
        assert!((prof.total() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn non_finite_samples_rejected() {
        let bad = Vorticity::Sampled(vec![0.0, f64::NAN, 1.0]);
        assert!(matches!(
            build_primitive(&bad, 11, Quadrature::Trapezoid),
            Err(WaveError::Input(_))
        ));
    }

    #[test]
    fn sampled_vorticity_is_linear_interpolation() {
        let v = Vorticity::Sampled(vec![0.0, 1.0, 0.0]);
        assert!((v.eval(0.25) - 0.5).abs() < 1e-15);
        assert!((v.eval(0.75) - 0.5).abs() < 1e-15);
        assert_eq!(v.eval(1.0), 0.0);
    }

    #[test]
    fn irrotational_closed_forms() {
        let f = solve_background(&Vorticity::zero(), 0.5, 2001).unwrap();
        assert!((f.depth - 1.0).abs() < 1e-12);
        assert!((f.bernoulli - 1.5).abs() < 1e-12);
        assert!((f.froude - 1.0).abs() < 1e-12);
        assert!(f.h_p.iter().all(|v| (v - 1.0).abs() < 1e-14));

        let f = solve_background(&Vorticity::zero(), 0.125, 2001).unwrap();
        assert!((f.depth - 2.0).abs() < 1e-12);
        assert!((f.froude - 2f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn reversing_background_rejected() {
        let err = solve_background(&Vorticity::constant(-5.0), 1.0, 101).unwrap_err();
        assert!(matches!(err, WaveError::UnidirectionalityViolation { .. }));
    }

    #[test]
    fn constant_vorticity_background_invariants() {
        let f = solve_background(&Vorticity::constant(0.3), 0.4, 2001).unwrap();
        assert_eq!(f.h[0], 0.0);
        assert!(f.h_p.iter().all(|v| *v > 0.0));
        assert!(f.bernoulli_defect() < 1e-12);
        let hp1 = *f.h_p.last().unwrap();
        assert!((0.5 / (hp1 * hp1) + f.depth - f.bernoulli).abs() < 1e-12);
        // H_pp = ω H_p^3 against a centered difference of H_p
        let i = 1000;
        let fd = (f.h_p[i + 1] - f.h_p[i - 1]) / (2.0 * f.dp());
        assert!((fd - f.h_pp[i]).abs() < 1e-6);
    }

    #[test]
    fn critical_parameter_irrotational() {
        let s = critical_parameter(&Vorticity::zero(), 2001).unwrap();
        assert!((s - 0.5).abs() < 1e-10);
        let flow = solve_background(&Vorticity::zero(), s, 2001).unwrap();
        assert!((flow.bernoulli - 1.5).abs() < 1e-10);
    }

    #[test]
    fn critical_parameter_constant_vorticity() {
        let s = critical_parameter(&Vorticity::constant(0.3), 2001).unwrap();
        let flow = solve_background(&Vorticity::constant(0.3), s, 2001).unwrap();
        assert!((flow.froude - 1.0).abs() < 1e-10);
    }

    #[test]
    fn froude_decreasing_in_depth_irrotational() {
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let d = 0.3 + 0.1 * k as f64;
            let flow = solve_background(&Vorticity::zero(), 0.5 / (d * d), 501).unwrap();
            assert!((flow.froude - d.powf(-1.5)).abs() < 1e-12);
            assert!(flow.froude < last);
            last = flow.froude;
        }
    }

    #[test]
    fn simpson_option_integrates_background() {
        let v = Vorticity::Polynomial(vec![0.2, -0.4, 0.9]);
        let t = solve_background_with(&v, 0.6, 201, Quadrature::Trapezoid).unwrap();
        let s = solve_background_with(&v, 0.6, 201, Quadrature::Simpson).unwrap();
        let fine = solve_background_with(&v, 0.6, 6401, Quadrature::Simpson).unwrap();
        assert!((s.depth - fine.depth).abs() < (t.depth - fine.depth).abs());
        assert!(s.bernoulli_defect() < 1e-12);
    }
}

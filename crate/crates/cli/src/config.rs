//! Run configuration (TOML).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use waveforce::background::Vorticity;
use waveforce::field::BoundaryCondition;
use waveforce::solver::NewtonOptions;

/// Invalid or unreadable configuration; maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub background: BackgroundConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub vorticity: VorticityConfig,
    /// Flow parameter; exactly one of `s` and `froude` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub froude: Option<f64>,
    pub n_p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VorticityKind {
    Zero,
    Constant,
    Polynomial,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VorticityConfig {
    pub kind: VorticityKind,
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Highest mode index `J`; modes `0..=J` are computed.
    pub modes: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { modes: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcKind {
    Decay,
    Periodic,
    EvenSymmetric,
}

impl From<BcKind> for BoundaryCondition {
    fn from(b: BcKind) -> Self {
        match b {
            BcKind::Decay => BoundaryCondition::Decay,
            BcKind::Periodic => BoundaryCondition::Periodic,
            BcKind::EvenSymmetric => BoundaryCondition::EvenSymmetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Truncation half-length; default `max(30/τ, 40 d)` for solitary waves.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub half_length: Option<f64>,
    pub n_q: usize,
    /// Must match `background.n_p` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_p: Option<usize>,
    pub bc: BcKind,
    #[serde(default = "default_tol")]
    pub tol_newton: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Crest amplitude for periodic waves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

fn default_tol() -> f64 {
    1e-11
}

fn default_max_iter() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub subcritical: bool,
    #[serde(default = "default_a0")]
    pub a0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_q: Option<usize>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub half_length: Option<f64>,
}

fn default_a0() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "yes")]
    pub flow_force: bool,
    #[serde(default = "yes")]
    pub asymptotics: bool,
    #[serde(default = "yes")]
    pub physical: bool,
    /// Evaluate the flow-force spread of a seeded random field.
    #[serde(default)]
    pub negative_control: bool,
    /// Fail the flow-force stage when the relative S-variation exceeds this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_tolerance: Option<f64>,
    /// Fail the flow-force stage when `min Φ` falls below `-min_phi_tolerance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_phi_tolerance: Option<f64>,
}

fn yes() -> bool {
    true
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            flow_force: true,
            asymptotics: true,
            physical: true,
            negative_control: false,
            s_tolerance: None,
            min_phi_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "yes")]
    pub plots: bool,
}

fn default_dir() -> String {
    "waveforce-out".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            plots: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.background;
        match (b.s, b.froude) {
            (None, None) => return err("missing key `s` in [background]"),
            (Some(_), Some(_)) => return err("give only one of `s` and `froude` in [background]"),
            (Some(s), None) if !s.is_finite() => return err("`background.s` must be finite"),
            (None, Some(f)) if !(f.is_finite() && f > 0.0) => {
                return err("`background.froude` must be positive")
            }
            _ => {}
        }
        if b.n_p < 5 {
            return err(format!("`background.n_p` = {} must be at least 5", b.n_p));
        }
        let v = &b.vorticity;
        match v.kind {
            VorticityKind::Zero if !v.values.is_empty() => {
                return err("`vorticity.values` must be empty for kind = \"zero\"")
            }
            VorticityKind::Constant if v.values.len() != 1 => {
                return err("`vorticity.values` needs exactly one value for kind = \"constant\"")
            }
            VorticityKind::Polynomial if v.values.is_empty() => {
                return err("`vorticity.values` needs coefficients for kind = \"polynomial\"")
            }
            VorticityKind::Sampled if v.values.len() < 2 => {
                return err("`vorticity.values` needs at least two samples for kind = \"sampled\"")
            }
            _ => {}
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return err("`vorticity.values` must be finite");
        }
        if let Some(sp) = &self.spectrum {
            if sp.modes + 2 > b.n_p {
                return err(format!("`spectrum.modes` must be at most {}", b.n_p.saturating_sub(2)));
            }
        }
        if let Some(s) = &self.solver {
            if let Some(np) = s.n_p {
                if np != b.n_p {
                    return err(format!("`solver.n_p` = {np} differs from `background.n_p` = {}", b.n_p));
                }
            }
            if s.n_q < 5 {
                return err("`solver.n_q` must be at least 5");
            }
            if s.bc != BcKind::Decay && s.n_q % 2 == 0 {
                return err("`solver.n_q` must be odd for symmetric closures");
            }
            if !(s.tol_newton > 0.0 && s.tol_newton < 1.0) {
                return err("`solver.tol_newton` must lie in (0, 1)");
            }
            if s.max_iter == 0 {
                return err("`solver.max_iter` must be positive");
            }
            if let Some(l) = s.half_length {
                if !(l.is_finite() && l > 0.0) {
                    return err("`solver.L` must be positive");
                }
            }
            match (s.bc, s.amplitude) {
                (BcKind::Periodic, None) => return err("missing key `amplitude` in [solver] for bc = \"periodic\""),
                (BcKind::Periodic, Some(a)) if !a.is_finite() => return err("`solver.amplitude` must be finite"),
                (BcKind::Decay, _) => {
                    return err("bc = \"decay\" is used by [probe]; [solver] takes \"even-symmetric\" or \"periodic\"")
                }
                _ => {}
            }
        }
        if let Some(p) = &self.probe {
            if !p.a0.is_finite() {
                return err("`probe.a0` must be finite");
            }
            if let Some(n) = p.n_q {
                if n < 5 {
                    return err("`probe.n_q` must be at least 5");
                }
            }
            if let Some(l) = p.half_length {
                if !(l.is_finite() && l > 0.0) {
                    return err("`probe.L` must be positive");
                }
            }
        }
        if let Some(t) = self.diagnostics.s_tolerance {
            if !(t > 0.0) {
                return err("`diagnostics.s_tolerance` must be positive");
            }
        }
        Ok(())
    }

    pub fn vorticity(&self) -> Vorticity {
        let v = &self.background.vorticity;
        match v.kind {
            VorticityKind::Zero => Vorticity::zero(),
            VorticityKind::Constant => Vorticity::constant(v.values[0]),
            VorticityKind::Polynomial => Vorticity::Polynomial(v.values.clone()),
            VorticityKind::Sampled => Vorticity::Sampled(v.values.clone()),
        }
    }

    /// Highest mode index `J`.
    pub fn modes(&self) -> usize {
        self.spectrum.clone().unwrap_or_default().modes.min(self.background.n_p - 2)
    }

    pub fn newton(&self) -> NewtonOptions {
        let mut o = NewtonOptions::default();
        if let Some(s) = &self.solver {
            o.tol = s.tol_newton;
            o.max_iter = s.max_iter;
        }
        o
    }

    /// Set a value by dotted path (`background.s`) or short name (`s`,
    /// `froude`, `n_p`, `amplitude`, `a0`, `n_q`, `L`), then re-validate.
    pub fn with_override(&self, param: &str, value: f64) -> Result<Self, ConfigError> {
        let path: Vec<&str> = match param {
            "s" => vec!["background", "s"],
            "froude" => vec!["background", "froude"],
            "n_p" => vec!["background", "n_p"],
            "amplitude" => vec!["solver", "amplitude"],
            "n_q" => vec!["solver", "n_q"],
            "L" => vec!["solver", "L"],
            "a0" => vec!["probe", "a0"],
            other => other.split('.').collect(),
        };
        let mut doc: toml::Value = toml::Value::try_from(self).map_err(|e| ConfigError(e.to_string()))?;
        let (last, parents) = path.split_last().ok_or_else(|| ConfigError("empty parameter name".into()))?;
        let mut table = doc.as_table_mut().expect("config is a table");
        for key in parents {
            table = table
                .get_mut(*key)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| ConfigError(format!("unknown section `{key}` in parameter `{param}`")))?;
        }
        let integer = matches!(*last, "n_p" | "n_q" | "max_iter" | "modes" | "seed");
        let new = if integer {
            if value.fract() != 0.0 || value < 0.0 {
                return err(format!("parameter `{param}` needs a non-negative integer, got {value}"));
            }
            toml::Value::Integer(value as i64)
        } else {
            toml::Value::Float(value)
        };
        table.insert(last.to_string(), new);
        if *last == "s" {
            table.remove("froude");
        } else if *last == "froude" {
            table.remove("s");
        }
        if *last == "n_p" {
            if let Some(solver) = doc.get_mut("solver").and_then(|v| v.as_table_mut()) {
                solver.remove("n_p");
            }
        }
        let text = toml::to_string(&doc).map_err(|e| ConfigError(e.to_string()))?;
        Self::from_toml(&text)
    }
}

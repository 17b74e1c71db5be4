//! Run configuration: a TOML document with fixed sections. Unknown keys
//! are rejected at parse time and every physical value must be finite.
//!
//! ```toml
//! experiment = "forward"        # optional; must match the subcommand
//!
//! [model]
//! name = "mathieu"              # mathieu | lattice | polynomial | pendulum
//! params = { q = 0.7, alpha_ac_4 = -0.2 }
//! controls = ["alpha_dc_4"]     # optional; the model default otherwise
//!
//! [basis]
//! m = 7
//! k = 8
//! k0 = false
//! oversampling = 2              # or an explicit grid = [m_xi, m_zeta]
//! paper_parity = false
//!
//! [initial]
//! a01 = 0.2
//! blocks = [1e-5, 1e-4]         # inverse collocation amplitudes
//! theta = 0.0
//!
//! [target]
//! c4 = 0.4                      # anharmonicities c4/c6/c8 or eps2/eps4/eps6
//! verify_amplitudes = [3e-3]
//!
//! [sweep]
//! param = "q"
//! start = 0.05
//! stop = 0.7
//! steps = 14
//!
//! [reference]
//! window = 200.0
//! samples = 4000
//!
//! [output]
//! dir = "out"
//! prefix = ""
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{HarmonicIndexSet, SamplingGrid};
use crate::hb::DEFAULT_OVERSAMPLING;
use crate::inverse::{eps_from_anharmonicity, AmplitudeFrequencyTarget, DEFAULT_BLOCKS};
use crate::models::{DriveModel, MathieuModel, OpticalLatticeModel, PendulumModel, PolynomialModel, TargetPotential};
use crate::oracles::{DEFAULT_SAMPLES, DEFAULT_WINDOW};

/// Grid of the reduced-resolution reproduction mode.
pub const PAPER_PARITY_GRID: (usize, usize) = (15, 15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Forward,
    Engineer,
    Sweep,
    CompareMagnus,
    Verify,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Forward => "forward",
            Experiment::Engineer => "engineer",
            Experiment::Sweep => "sweep",
            Experiment::CompareMagnus => "compare-magnus",
            Experiment::Verify => "verify",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub model: ModelConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub m: u32,
    pub k: u32,
    #[serde(default)]
    pub k0: bool,
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default)]
    pub paper_parity: bool,
}

fn default_oversampling() -> usize {
    DEFAULT_OVERSAMPLING
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            m: 7,
            k: 8,
            k0: false,
            oversampling: DEFAULT_OVERSAMPLING,
            grid: None,
            paper_parity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default = "default_a01")]
    pub a01: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<f64>>,
    #[serde(default)]
    pub theta: f64,
}

fn default_a01() -> f64 {
    0.2
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            a01: default_a01(),
            blocks: None,
            theta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c6: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c8: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps6: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_amplitudes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: String,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    /// Secular amplitude of the deviation check; `initial.a01` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation_a01: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_window() -> f64 {
    DEFAULT_WINDOW
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

fn finite(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be finite")))
    }
}

/// Log-spaced verification amplitudes: 1, 2, 3 and 5 per decade from
/// `1e-5` to `1e-2`.
pub fn default_verify_amplitudes() -> Vec<f64> {
    let mut out = Vec::new();
    for e in -5..-2 {
        for m in [1.0, 2.0, 3.0, 5.0] {
            out.push(format!("{m}e{e}").parse().unwrap());
        }
    }
    out.push(1e-2);
    out
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (k, &v) in &self.model.params {
            finite(&format!("model.params.{k}"), v)?;
        }
        self.build_model()?;
        let b = &self.basis;
        if b.k == 0 {
            return Err(bad("basis.k must be at least 1"));
        }
        if b.oversampling == 0 {
            return Err(bad("basis.oversampling must be at least 1"));
        }
        if let Some([x, z]) = b.grid {
            if x == 0 || z == 0 {
                return Err(bad("basis.grid sizes must be positive"));
            }
            if b.paper_parity {
                return Err(bad("basis.grid and basis.paper_parity are exclusive"));
            }
        }
        let i = &self.initial;
        finite("initial.a01", i.a01)?;
        finite("initial.theta", i.theta)?;
        if !(i.a01 > 0.0) {
            return Err(bad("initial.a01 must be positive"));
        }
        if let Some(bl) = &i.blocks {
            for &a in bl {
                finite("initial.blocks", a)?;
            }
            if bl.iter().any(|&a| !(a > 0.0)) || bl.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad("initial.blocks must be positive and strictly increasing"));
            }
        }
        if let Some(t) = &self.target {
            let fields = [t.c4, t.c6, t.c8, t.eps2, t.eps4, t.eps6];
            for v in fields.iter().flatten() {
                finite("target coefficient", *v)?;
            }
            let has_c = t.c4.is_some() || t.c6.is_some() || t.c8.is_some();
            let has_eps = t.eps2.is_some() || t.eps4.is_some() || t.eps6.is_some();
            if has_c && has_eps {
                return Err(bad("target takes either anharmonicities or eps coefficients, not both"));
            }
            if let Some(va) = &t.verify_amplitudes {
                if va.is_empty() || va.iter().any(|&a| !a.is_finite() || !(a > 0.0)) {
                    return Err(bad("target.verify_amplitudes must be positive and finite"));
                }
            }
        }
        if let Some(s) = &self.sweep {
            finite("sweep.start", s.start)?;
            finite("sweep.stop", s.stop)?;
            if s.steps == 0 {
                return Err(bad("sweep.steps must be at least 1"));
            }
            if s.steps > 1 && s.start == s.stop {
                return Err(bad("sweep range is empty"));
            }
            if let Some(a) = s.deviation_a01 {
                finite("sweep.deviation_a01", a)?;
                if !(a > 0.0) {
                    return Err(bad("sweep.deviation_a01 must be positive"));
                }
            }
            let m = self.build_model()?;
            if m.param_index(&s.param).is_none() {
                return Err(bad(format!("sweep.param `{}` is not a parameter of {}", s.param, m.name())));
            }
        }
        finite("reference.window", self.reference.window)?;
        if !(self.reference.window > 0.0) || self.reference.samples == 0 {
            return Err(bad("reference window and samples must be positive"));
        }
        if self.output.prefix.contains(['/', '\\']) {
            return Err(bad("output.prefix must not contain path separators"));
        }
        Ok(())
    }

    /// Model with the configured parameters and controls.
    pub fn build_model(&self) -> Result<Box<dyn DriveModel>, ConfigError> {
        let p = &self.model.params;
        let mut model: Box<dyn DriveModel> = match self.model.name.as_str() {
            "mathieu" => Box::new(MathieuModel::new(0.0, 0.0)),
            "lattice" => Box::new(OpticalLatticeModel::new(0.0, 0.0)),
            "pendulum" => Box::new(PendulumModel { w2: 1.0 }),
            "polynomial" => Box::new(self.polynomial_model()?),
            other => return Err(bad(format!("unknown model `{other}`"))),
        };
        for (k, &v) in p {
            model.set_param_by_name(k, v).map_err(|e| bad(e.to_string()))?;
        }
        if let Some(c) = &self.model.controls {
            model.set_controls(c.clone()).map_err(|e| bad(e.to_string()))?;
        }
        Ok(model)
    }

    /// The polynomial model, whose parameters are named `c<power>`.
    pub fn polynomial_model(&self) -> Result<PolynomialModel, ConfigError> {
        let mut terms = Vec::new();
        for (k, &v) in &self.model.params {
            let j: u32 = k
                .strip_prefix('c')
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("polynomial parameter `{k}` must be named c<power>")))?;
            terms.push((j, v));
        }
        if terms.is_empty() {
            return Err(bad("polynomial model needs at least one coefficient"));
        }
        Ok(PolynomialModel::new(terms))
    }

    /// Index set of the NEFS basis, reduced to the non-aliased harmonics in
    /// paper-parity mode.
    pub fn index_set(&self) -> Result<HarmonicIndexSet, ConfigError> {
        let b = &self.basis;
        let set = HarmonicIndexSet::build(b.m, b.k, b.k0, self.initial.theta).map_err(|e| bad(e.to_string()))?;
        if b.paper_parity {
            set.without_aliased(&self.grid_for(&set)).map_err(|e| bad(e.to_string()))
        } else {
            Ok(set)
        }
    }

    /// Ordinary Floquet basis (`k = 1` only) with the same `M`.
    pub fn ofs_index_set(&self) -> Result<HarmonicIndexSet, ConfigError> {
        HarmonicIndexSet::ordinary_floquet(self.basis.m, self.basis.k0, self.initial.theta).map_err(|e| bad(e.to_string()))
    }

    pub fn grid_for(&self, set: &HarmonicIndexSet) -> SamplingGrid {
        let b = &self.basis;
        if b.paper_parity {
            let (x, z) = PAPER_PARITY_GRID;
            SamplingGrid {
                m_xi: x,
                m_zeta: z,
                allow_undersampled: true,
            }
        } else if let Some([x, z]) = b.grid {
            SamplingGrid {
                m_xi: x,
                m_zeta: z,
                allow_undersampled: false,
            }
        } else {
            SamplingGrid::for_index_set(set, b.oversampling)
        }
    }

    pub fn target(&self) -> Result<Option<AmplitudeFrequencyTarget>, ConfigError> {
        let Some(t) = &self.target else { return Ok(None) };
        let c: Vec<(u32, f64)> = [(4, t.c4), (6, t.c6), (8, t.c8)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect();
        let eps: Vec<(u32, f64)> = [(2, t.eps2), (4, t.eps4), (6, t.eps6)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect();
        let potential = if eps.is_empty() {
            TargetPotential::from_anharmonicities(c)
        } else {
            TargetPotential::from_eps(eps)
        };
        eps_from_anharmonicity(&potential).map(Some).map_err(|e| bad(e.to_string()))
    }

    /// Collocation amplitudes for `n_controls` controls.
    pub fn blocks(&self, n_controls: usize) -> Vec<f64> {
        self.initial
            .blocks
            .clone()
            .unwrap_or_else(|| DEFAULT_BLOCKS.iter().copied().take(n_controls + 1).collect())
    }

    pub fn verify_amplitudes(&self) -> Vec<f64> {
        self.target
            .as_ref()
            .and_then(|t| t.verify_amplitudes.clone())
            .unwrap_or_else(default_verify_amplitudes)
    }

    /// Uniform sweep grid, `start` and `stop` included, each value rounded
    /// to 12 significant digits.
    pub fn sweep_values(&self) -> Vec<f64> {
        let Some(s) = &self.sweep else { return Vec::new() };
        if s.steps == 1 {
            return vec![s.start];
        }
        let n = (s.steps - 1) as f64;
        (0..s.steps)
            .map(|i| {
                let t = i as f64;
                let v = (s.start * (n - t) + s.stop * t) / n;
                format!("{v:.12e}").parse().unwrap_or(v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nname = \"mathieu\"\nparams = { q = 0.3 }\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.basis, BasisConfig::default());
        assert_eq!(cfg.initial.a01, 0.2);
        assert_eq!(cfg.reference.samples, 4000);
        let m = cfg.build_model().unwrap();
        assert_eq!(m.param_by_name("q").unwrap(), 0.3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["bogus = 1\n", "[basis]\nm = 1\nk = 1\nmystery = true\n", "[output]\nfolder = \"x\"\n"] {
            let text = format!("{MINIMAL}{extra}");
            assert!(RunConfig::from_toml_str(&text).is_err(), "{extra}");
        }
    }

    #[test]
    fn unknown_model_parameter_is_rejected() {
        let text = "[model]\nname = \"lattice\"\nparams = { depth = 0.2 }\n";
        assert!(RunConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let text = "[model]\nname = \"mathieu\"\nparams = { q = nan }\n";
        assert!(RunConfig::from_toml_str(text).is_err());
        let text = format!("{MINIMAL}[initial]\na01 = inf\n");
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn mixed_target_forms_are_rejected() {
        let text = format!("{MINIMAL}[target]\nc4 = 0.4\neps2 = 0.3\n");
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn sweep_grid_hits_both_ends() {
        let text = format!("{MINIMAL}[sweep]\nparam = \"q\"\nstart = 0.05\nstop = 0.7\nsteps = 14\n");
        let v = RunConfig::from_toml_str(&text).unwrap().sweep_values();
        assert_eq!(v.len(), 14);
        assert_eq!(v[0], 0.05);
        assert_eq!(v[13], 0.7);
        assert_eq!(v[3], 0.2);
        assert_eq!(v[6], 0.35);
    }

    #[test]
    fn polynomial_coefficients_parse_by_power() {
        let text = "[model]\nname = \"polynomial\"\nparams = { c1 = -1.0, c3 = -0.01 }\n";
        let m = RunConfig::from_toml_str(text).unwrap().build_model().unwrap();
        assert_eq!(m.accel(2.0, 0.0), -2.0 - 0.08);
    }

    #[test]
    fn paper_parity_drops_aliased_columns() {
        let text = format!("{MINIMAL}[basis]\nm = 7\nk = 8\npaper_parity = true\n");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let set = cfg.index_set().unwrap();
        assert_eq!(set.max_k(), 7);
        let g = cfg.grid_for(&set);
        assert_eq!((g.m_xi, g.m_zeta), (15, 15));
    }

    #[test]
    fn round_trips_through_toml() {
        let text = format!("{MINIMAL}[target]\nc4 = 0.4\n[sweep]\nparam = \"q\"\nstart = 0.1\nstop = 0.2\nsteps = 3\n");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn default_verification_grid_covers_three_decades() {
        let a = default_verify_amplitudes();
        assert_eq!(a.first(), Some(&1e-5));
        assert_eq!(a.last(), Some(&1e-2));
        assert!(a.contains(&3e-3) && a.contains(&5e-5));
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }
}

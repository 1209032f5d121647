//! TOML experiment files.
//!
//! A file names either a `preset` or gives the inline sections `model`,
//! `pair`, `design` and `run`; the two forms are mutually exclusive.
//! `integrator`, `analysis` and `output` are accepted with both.
//!
//! ```toml
//! [model]
//! kind = "power"
//! m = 4
//! x_star = 1.0
//!
//! [pair]
//! kind = "default"
//! sigma = 1.0
//!
//! [design]
//! kappa = [1]
//! epsilon = 1e-3
//!
//! [run]
//! x0 = [4.0]
//! horizon = 8.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::FitOptions;
use crate::cost::{default_pair, gradient_pair, CostModel, FieldFn, VectorFieldPair};
use crate::error::{Error, Result};
use crate::signal::{check_nonresonance, design_dithers, DitherSpec, SplitRule};
use crate::sim::{ESConfig, Preset, DEFAULT_STEPS_PER_PERIOD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairSpec {
    /// `g1 = 1`, `g2 = -sigma z`.
    Default { sigma: f64 },
    /// `g1 = z`, `g2 = 1`.
    Gradient,
    /// `g_i(z) = constant_i + slope_i z`.
    Affine {
        g1_constant: f64,
        g1_slope: f64,
        g2_constant: f64,
        g2_slope: f64,
        sigma: f64,
    },
}

impl PairSpec {
    pub fn build(&self) -> Result<VectorFieldPair> {
        match *self {
            PairSpec::Default { sigma } => default_pair(sigma),
            PairSpec::Gradient => Ok(gradient_pair()),
            PairSpec::Affine {
                g1_constant,
                g1_slope,
                g2_constant,
                g2_slope,
                sigma,
            } => Ok(VectorFieldPair {
                g1: FieldFn::Affine {
                    constant: g1_constant,
                    slope: g1_slope,
                },
                g2: FieldFn::Affine {
                    constant: g2_constant,
                    slope: g2_slope,
                },
                sigma,
            }),
        }
    }
}

fn default_kappa() -> Vec<u32> {
    vec![1]
}

fn default_true() -> bool {
    true
}

fn default_split() -> SplitRule {
    SplitRule::EqualMagnitude
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// Bracket order `N`; defaults to `m - 1` of the cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    /// One frequency multiplier per coordinate.
    #[serde(default = "default_kappa")]
    pub kappa: Vec<u32>,
    pub epsilon: f64,
    #[serde(default = "default_split")]
    pub split: SplitRule,
    /// Run the non-resonance check for multi-coordinate designs.
    #[serde(default = "default_true")]
    pub check_resonance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_spp")]
    pub steps_per_period: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
}

fn default_spp() -> usize {
    DEFAULT_STEPS_PER_PERIOD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// Further initial states run with the same settings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also_from: Vec<Vec<f64>>,
    #[serde(default)]
    pub divergence_expected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Envelope window in seconds; at least one dither period.
    pub envelope_window: f64,
    pub floor_quantile: f64,
    pub tail_fraction: f64,
    pub skip_initial: usize,
    pub floor_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<(f64, f64)>,
    /// Extra power-law fit window, e.g. the late phase of a slow baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub late_window: Option<(f64, f64)>,
    /// Convergence tolerance on `max_i |x_i - x*_i|` reported in the summary.
    pub tolerance: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let f = FitOptions::default();
        AnalysisSection {
            envelope_window: 0.1,
            floor_quantile: f.floor_quantile,
            tail_fraction: f.tail_fraction,
            skip_initial: f.skip_initial,
            floor_margin: f.floor_margin,
            fit_window: None,
            late_window: None,
            tolerance: 0.05,
        }
    }
}

impl AnalysisSection {
    pub fn for_preset(p: Preset) -> Self {
        match p {
            Preset::GradientM4 | Preset::GradientM6 => AnalysisSection {
                late_window: Some((10.0, 60.0)),
                ..Self::default()
            },
            Preset::M8 => AnalysisSection {
                tolerance: 0.1,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            floor_quantile: self.floor_quantile,
            tail_fraction: self.tail_fraction,
            skip_initial: self.skip_initial,
            floor_margin: self.floor_margin,
            window: self.fit_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Write `plot.dat` with one two-column block per panel.
    pub plot_data: bool,
    /// Write a static `plot.svg` of `|x - x*|` on a log scale.
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".to_string(),
            plot_data: true,
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CostModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

/// Everything needed to run an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub preset: Option<Preset>,
    pub config: ESConfig,
    /// `config.x0` first.
    pub initial_states: Vec<Vec<f64>>,
    pub analysis: AnalysisSection,
    pub output: OutputSection,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_preset(p: Preset) -> Self {
        ExperimentConfig {
            preset: Some(p),
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => config_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Builds the runnable experiment, enforcing preset/inline exclusivity.
    pub fn resolve(&self) -> Result<Experiment> {
        let inline = [
            ("model", self.model.is_some()),
            ("pair", self.pair.is_some()),
            ("design", self.design.is_some()),
            ("run", self.run.is_some()),
        ];
        let (mut config, initial_states, analysis) = match self.preset {
            Some(p) => {
                if let Some((name, _)) = inline.iter().find(|(_, present)| *present) {
                    return Err(config_err(format!(
                        "section [{name}] cannot be combined with preset = \"{p}\""
                    )));
                }
                (
                    p.config(),
                    p.initial_states(),
                    AnalysisSection::for_preset(p),
                )
            }
            None => {
                let missing: Vec<&str> = inline
                    .iter()
                    .filter(|(_, present)| !present)
                    .map(|(n, _)| *n)
                    .collect();
                if !missing.is_empty() {
                    return Err(config_err(format!(
                        "either set `preset` or give the sections [{}]",
                        missing.join("], [")
                    )));
                }
                let (cfg, states) = self.inline_config()?;
                (cfg, states, AnalysisSection::default())
            }
        };
        if let Some(ig) = &self.integrator {
            config.steps_per_period = ig.steps_per_period;
            config.record_stride = ig.record_stride;
        }
        let analysis = self.analysis.clone().unwrap_or(analysis);
        if analysis.envelope_window < config.epsilon() {
            return Err(config_err(
                "analysis.envelope_window is shorter than one dither period",
            ));
        }
        analysis
            .fit_options()
            .validate()
            .map_err(|e| config_err(format!("[analysis]: {e}")))?;
        config.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(Experiment {
            preset: self.preset,
            config,
            initial_states,
            analysis,
            output: self.output.clone().unwrap_or_default(),
        })
    }

    fn inline_config(&self) -> Result<(ESConfig, Vec<Vec<f64>>)> {
        let model = self.model.clone().expect("checked");
        let pair = self
            .pair
            .as_ref()
            .expect("checked")
            .build()
            .map_err(|e| config_err(format!("[pair]: {e}")))?;
        let design = self.design.as_ref().expect("checked");
        let run = self.run.as_ref().expect("checked");
        let spec = build_design(&model, design)?;
        let mut states = vec![run.x0.clone()];
        states.extend(run.also_from.iter().cloned());
        let n = model.dimension();
        if states.iter().any(|s| s.len() != n) {
            return Err(config_err(format!(
                "[run]: initial states must have {n} entries"
            )));
        }
        let cfg = ESConfig {
            label: "custom".to_string(),
            model,
            pair,
            spec,
            x0: run.x0.clone(),
            horizon: run.horizon,
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
            record_stride: None,
            divergence_expected: run.divergence_expected,
        };
        Ok((cfg, states))
    }
}

/// Degree `m` of a built-in cost.
pub fn model_degree(model: &CostModel) -> Option<u32> {
    match model {
        CostModel::Power(p) => Some(p.m),
        CostModel::Quartic2d => Some(4),
        CostModel::Separable { terms } => terms.iter().map(|t| t.m).max(),
        CostModel::Custom(_) => None,
    }
}

fn build_design(model: &CostModel, d: &DesignSection) -> Result<DitherSpec> {
    let n = model.dimension();
    if d.kappa.len() != n {
        return Err(config_err(format!(
            "[design]: kappa needs {n} entries, one per coordinate"
        )));
    }
    let order = match d.order {
        Some(o) => o,
        None => model_degree(model)
            .map(|m| m - 1)
            .ok_or_else(|| config_err("[design]: order is required for this model"))?,
    };
    if n > 1 && d.check_resonance {
        let report = check_nonresonance(&d.kappa, order)?;
        if let Some(witness) = report.witness {
            return Err(Error::Resonant { witness });
        }
    }
    let mut pairs = Vec::with_capacity(n);
    for &k in &d.kappa {
        let spec = design_dithers(order, k, d.epsilon, d.split)
            .map_err(|e| config_err(format!("[design]: {e}")))?;
        pairs.extend(spec.pairs);
    }
    Ok(DitherSpec {
        order,
        epsilon: d.epsilon,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const INLINE: &str = r#"
[model]
kind = "power"
m = 4
x_star = 1.0

[pair]
kind = "default"
sigma = 1.0

[design]
kappa = [1]
epsilon = 1e-3

[run]
x0 = [4.0]
horizon = 8.0
"#;

    #[test]
    fn inline_matches_preset() {
        let exp = ExperimentConfig::parse(INLINE).unwrap().resolve().unwrap();
        let preset = Preset::M4.config();
        assert_eq!(exp.config.spec, preset.spec);
        assert_eq!(exp.config.model, preset.model);
        assert_eq!(exp.config.pair, preset.pair);
        assert_eq!(exp.config.x0, preset.x0);
        assert_eq!(exp.output, OutputSection::default());
    }

    #[test]
    fn preset_excludes_inline_sections() {
        let text = format!("preset = \"m4\"\n{INLINE}");
        let err = ExperimentConfig::parse(&text)
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.to_string().contains("cannot be combined"), "{err}");
        let ok = ExperimentConfig::parse("preset = \"mv4\"\n[integrator]\nsteps_per_period = 32\n")
            .unwrap();
        let exp = ok.resolve().unwrap();
        assert_eq!(exp.config.steps_per_period, 32);
        assert_eq!(exp.config.dimension(), 2);
    }

    #[test]
    fn missing_sections_are_reported() {
        let err = ExperimentConfig::parse("[run]\nx0 = [1.0]\nhorizon = 1.0\n")
            .unwrap()
            .resolve()
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[model]") && msg.contains("[design]"), "{msg}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = ExperimentConfig::parse("[design]\nepsilon = \"small\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let err = ExperimentConfig::parse("presett = \"m4\"\n").unwrap_err();
        assert!(err.to_string().contains("presett"));
        assert!(ExperimentConfig::parse("preset = \"m5\"\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::parse(INLINE).unwrap();
        cfg.analysis = Some(AnalysisSection {
            late_window: Some((10.0, 60.0)),
            ..AnalysisSection::default()
        });
        cfg.integrator = Some(IntegratorSection {
            steps_per_period: 48,
            record_stride: Some(7),
        });
        cfg.output = Some(OutputSection {
            dir: "results/m4".into(),
            plot_data: false,
            svg: true,
        });
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);

        for p in Preset::ALL {
            let c = ExperimentConfig::from_preset(p);
            assert_eq!(ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn multivariable_inline_checks_resonance() {
        let text = r#"
[model]
kind = "quartic2d"

[pair]
kind = "default"
sigma = 1.0

[design]
kappa = [1, 1]
epsilon = 1e-3

[run]
x0 = [0.0, 0.0]
horizon = 1.0
"#;
        match ExperimentConfig::parse(text).unwrap().resolve() {
            Err(Error::Resonant { witness }) => assert_eq!(witness, vec![(1, 0), (-1, 0)]),
            other => panic!("expected resonance error, got {other:?}"),
        }
        let unchecked = text.replace("epsilon = 1e-3", "epsilon = 1e-3\ncheck_resonance = false");
        assert!(ExperimentConfig::parse(&unchecked)
            .unwrap()
            .resolve()
            .is_ok());
    }

    #[test]
    fn limitation_runs_both_signs() {
        let exp = ExperimentConfig::from_preset(Preset::Limitation)
            .resolve()
            .unwrap();
        assert_eq!(exp.initial_states, vec![vec![5.0], vec![-5.0]]);
        assert!(exp.config.divergence_expected);
    }
}

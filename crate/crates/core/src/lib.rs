//! High-order Lie-bracket extremum seeking.
//!
//! Sinusoidal dithers of order `N` drive `x' = g1(J(x)) u1 + g2(J(x)) u2`
//! so that, averaged over one period, the state follows the iterated
//! bracket `ad_{g1}^N g2 = -sigma J^(N)`. With `N = m - 1` this gives
//! exponential convergence on costs that grow like `|x - x*|^m`.
//!
//! Modules, bottom up:
//! - [`signal`]: dither design and the non-resonance check
//! - [`cost`]: cost models, generating vector fields, growth-constant checks
//! - [`bracket`]: iterated Lie derivatives and `ad_{g1}^N g2`
//! - [`integrals`]: quadrature oracle certifying a design
//! - [`sim`]: fixed-step RK4 closed-loop simulation and presets
//! - [`analysis`]: envelopes, decay fits, residual order
//! - [`config`]: TOML experiment files

pub mod analysis;
pub mod bracket;
pub mod config;
pub mod cost;
pub mod error;
pub mod fd;
pub mod integrals;
pub mod signal;
pub mod sim;

pub use analysis::{
    compare_models, envelope, fit_exponential, fit_exponential_with, fit_polynomial,
    residual_order, DecayFit, DecayKind, FitOptions, ModelComparison, ResidualReport,
};
pub use bracket::{ad_bracket, ad_bracket_recursive, lie_derivative_word, LieWord};
pub use config::{Experiment, ExperimentConfig};
pub use cost::{
    default_pair, gradient_pair, make_power_cost, make_power_cost_with, make_quartic_2d,
    verify_assumption, AssumptionReport, BoxDomain, CostModel, FieldFn, VectorFieldPair,
};
pub use error::{Error, Result};
pub use integrals::{
    certify_excitation, certify_multivariable, closed_form_i, iterated_integral, Certification,
    IntegralRequest,
};
pub use signal::{
    bracket_coefficient, check_nonresonance, design_dithers, design_multivariable, DitherChannel,
    DitherPair, DitherSpec, ResonanceReport, SplitRule, Waveform,
};
pub use sim::{initial_speed, one_period_map, simulate, ESConfig, Preset, Trajectory};

//! Fixed-step RK4 integration of the closed loop
//! `x_i' = g1(J(x)) u1_i(t) + g2(J(x)) u2_i(t)`.
//!
//! The step is `h = eps / (N kappa_max steps_per_period)`, so one dither
//! period is a whole number `P` of steps. Dither values at every RK
//! substage (multiples of `h/2`) are tabulated once per period with exact
//! integer phase reduction and reused, which keeps long runs periodic to
//! the last bit and avoids trigonometric calls in the inner loop.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::{
    default_pair, gradient_pair, make_power_cost, make_quartic_2d, CostModel, VectorFieldPair,
};
use crate::error::{invalid, Error, Result};
use crate::signal::{design_dithers, design_multivariable_unchecked, DitherSpec, SplitRule};

pub const DEFAULT_STEPS_PER_PERIOD: usize = 64;
pub const MIN_STEPS_PER_PERIOD: usize = 16;
/// Upper bound on recorded samples when the stride is chosen automatically.
pub const MAX_SAMPLES: usize = 1_000_000;
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// One closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ESConfig {
    pub label: String,
    pub model: CostModel,
    pub pair: VectorFieldPair,
    pub spec: DitherSpec,
    pub x0: Vec<f64>,
    /// Seconds.
    pub horizon: f64,
    /// RK4 steps per period of the fastest dither channel.
    pub steps_per_period: usize,
    /// `None` records at whole dither periods, thinned to at most
    /// [`MAX_SAMPLES`] samples.
    pub record_stride: Option<usize>,
    /// Divergence is part of the experiment rather than a failure.
    pub divergence_expected: bool,
}

impl ESConfig {
    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    pub fn order(&self) -> u32 {
        self.spec.order
    }

    pub fn dimension(&self) -> usize {
        self.model.dimension()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dimension();
        if self.spec.pairs.len() != n {
            return Err(invalid(format!(
                "design has {} channel pairs for a {n}-dimensional cost",
                self.spec.pairs.len()
            )));
        }
        if self.x0.len() != n {
            return Err(invalid("initial state dimension differs from the model"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("initial state must be finite"));
        }
        if self.spec.order == 0
            || self
                .spec
                .pairs
                .iter()
                .any(|p| p.first.kappa == 0 || p.second.kappa == 0)
        {
            return Err(invalid("design order and kappa must be >= 1"));
        }
        let eps = self.epsilon();
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid("epsilon must be positive and finite"));
        }
        if self.steps_per_period < MIN_STEPS_PER_PERIOD {
            return Err(invalid(format!(
                "steps_per_period must be >= {MIN_STEPS_PER_PERIOD}"
            )));
        }
        if !(self.horizon >= eps && self.horizon.is_finite()) {
            return Err(invalid(
                "horizon must be finite and at least one dither period",
            ));
        }
        if self.record_stride == Some(0) {
            return Err(invalid("record_stride must be >= 1"));
        }
        Ok(())
    }

    /// RK4 steps per dither period `eps`: `N kappa_max steps_per_period`.
    pub fn steps_per_dither_period(&self) -> usize {
        let kmax = self.spec.pairs.iter().map(|p| p.kappa()).max().unwrap_or(1) as usize;
        self.spec.order as usize * kmax * self.steps_per_period
    }

    pub fn step_size(&self) -> f64 {
        self.epsilon() / self.steps_per_dither_period() as f64
    }

    pub fn total_steps(&self) -> usize {
        let steps = self.horizon / self.step_size();
        let nearest = steps.round();
        if (steps - nearest).abs() < 1e-6 {
            nearest as usize
        } else {
            steps.ceil() as usize
        }
    }

    pub fn effective_record_stride(&self) -> usize {
        if let Some(s) = self.record_stride {
            return s;
        }
        let p = self.steps_per_dither_period();
        let periods = self.total_steps().div_ceil(p);
        p * periods.div_ceil(MAX_SAMPLES - 1).max(1)
    }
}

/// Recorded samples of one run. States are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dimension: usize,
    pub epsilon: f64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub costs: Vec<f64>,
    /// Time of the first non-finite or out-of-bound state.
    pub diverged_at: Option<f64>,
    /// Largest `||x||` seen at any step before divergence.
    pub max_state_norm: f64,
    pub label: String,
}

impl Trajectory {
    /// Trajectory from externally produced samples.
    pub fn from_samples(
        epsilon: f64,
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        if times.len() != states.len() || times.len() != costs.len() {
            return Err(invalid("times, states and costs differ in length"));
        }
        let dimension = states.first().map_or(0, Vec::len);
        if states.iter().any(|s| s.len() != dimension) {
            return Err(invalid("states have inconsistent dimension"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("times must be strictly increasing"));
        }
        let max_state_norm = states.iter().map(|s| norm(s)).fold(0.0, f64::max);
        Ok(Trajectory {
            dimension,
            epsilon,
            times,
            states: states.concat(),
            costs,
            diverged_at: None,
            max_state_norm,
            label: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn distance(&self, i: usize, x_star: &[f64]) -> f64 {
        dist(self.state(i), x_star)
    }

    /// `max_i |x_i - x*_i|` at the last sample.
    pub fn final_max_error(&self, x_star: &[f64]) -> f64 {
        self.final_state()
            .iter()
            .zip(x_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// First recorded time from which every later sample stays within `tol`
    /// of `x_star` in the max norm.
    pub fn settling_time(&self, x_star: &[f64], tol: f64) -> Option<f64> {
        let mut settled = None;
        for i in (0..self.len()).rev() {
            let e = self
                .state(i)
                .iter()
                .zip(x_star)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if e >= tol {
                break;
            }
            settled = Some(self.times[i]);
        }
        settled
    }

    /// CSV with header `t,x_1,..,x_n,J` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.dimension {
            header.push_str(&format!(",x_{i}"));
        }
        header.push_str(",J");
        writeln!(w, "{header}")?;
        for i in 0..self.len() {
            write!(w, "{:.16e}", self.times[i])?;
            for v in self.state(i) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w, ",{:.16e}", self.costs[i])?;
        }
        w.flush()
    }

    /// Parses the format written by [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(reader: R, epsilon: f64) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| invalid("empty trajectory file"))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 3 || cols[0] != "t" || cols[cols.len() - 1] != "J" {
            return Err(invalid("trajectory header must be t,x_1,..,x_n,J"));
        }
        let n = cols.len() - 2;
        let (mut times, mut states, mut costs) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| invalid(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != n + 2 {
                return Err(invalid(format!(
                    "line {}: expected {} fields",
                    lineno + 2,
                    n + 2
                )));
            }
            times.push(vals[0]);
            states.push(vals[1..=n].to_vec());
            costs.push(vals[n + 1]);
        }
        Trajectory::from_samples(epsilon, times, states, costs)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Tabulated dithers and step bookkeeping shared by the integrators.
struct Loop<'a> {
    cfg: &'a ESConfig,
    n: usize,
    period_steps: usize,
    h: f64,
    /// `u1[j * n + i]`: coordinate `i` at time `j h / 2`, `j < 2P`.
    u1: Vec<f64>,
    u2: Vec<f64>,
    scalar: Option<ScalarLaw>,
}

/// Closed form of a one-dimensional power cost under an affine pair:
/// `x' = (a1 + b1 J) u1 + (a2 + b2 J) u2`, `J = scale (x - x*)^m`.
#[derive(Clone, Copy)]
struct ScalarLaw {
    m: i32,
    x_star: f64,
    scale: f64,
    g1: (f64, f64),
    g2: (f64, f64),
}

impl ScalarLaw {
    fn detect(cfg: &ESConfig) -> Option<Self> {
        let CostModel::Power(p) = &cfg.model else {
            return None;
        };
        let g1 = cfg.pair.g1.as_affine()?;
        let g2 = cfg.pair.g2.as_affine()?;
        let scale = if p.normalized {
            1.0 / (1..=p.m).map(f64::from).product::<f64>()
        } else {
            1.0
        };
        Some(ScalarLaw {
            m: p.m as i32,
            x_star: p.x_star,
            scale,
            g1,
            g2,
        })
    }

    #[inline(always)]
    fn rhs(&self, x: f64, u1: f64, u2: f64) -> f64 {
        let j = self.scale * (x - self.x_star).powi(self.m);
        (self.g1.0 + self.g1.1 * j) * u1 + (self.g2.0 + self.g2.1 * j) * u2
    }
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a ESConfig) -> Self {
        let n = cfg.dimension();
        let period_steps = cfg.steps_per_dither_period();
        let slots = 2 * period_steps;
        let eps = cfg.epsilon();
        let mut u1 = vec![0.0; slots * n];
        let mut u2 = vec![0.0; slots * n];
        for (i, pair) in cfg.spec.pairs.iter().enumerate() {
            for (table, ch) in [(&mut u1, &pair.first), (&mut u2, &pair.second)] {
                let amp = ch.amplitude(eps);
                let cycles = ch.cycles() as u128;
                for j in 0..slots {
                    let phase = ((j as u128 * cycles) % slots as u128) as f64 / slots as f64;
                    table[j * n + i] = amp * ch.waveform.eval(TAU * phase);
                }
            }
        }
        Loop {
            cfg,
            n,
            period_steps,
            h: eps / period_steps as f64,
            u1,
            u2,
            scalar: ScalarLaw::detect(cfg),
        }
    }

    #[inline]
    fn rhs(&self, x: &[f64], slot: usize, out: &mut [f64]) {
        let j = self.cfg.model.value(x);
        let a = self.cfg.pair.g1.eval(j);
        let b = self.cfg.pair.g2.eval(j);
        let base = slot * self.n;
        for i in 0..self.n {
            out[i] = a * self.u1[base + i] + b * self.u2[base + i];
        }
    }

    /// Advances `x` by one step starting at step index `s`.
    #[inline]
    fn step(&self, x: &mut [f64], s: usize, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
        let slots = 2 * self.period_steps;
        let base = 2 * (s % self.period_steps);
        let mid = base + 1;
        let end = (base + 2) % slots;
        let h = self.h;
        if let Some(law) = &self.scalar {
            let y = x[0];
            let k1 = law.rhs(y, self.u1[base], self.u2[base]);
            let k2 = law.rhs(y + 0.5 * h * k1, self.u1[mid], self.u2[mid]);
            let k3 = law.rhs(y + 0.5 * h * k2, self.u1[mid], self.u2[mid]);
            let k4 = law.rhs(y + h * k3, self.u1[end], self.u2[end]);
            x[0] = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            return;
        }
        let n = self.n;
        self.rhs(x, base, &mut k[0]);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k[0][i];
        }
        self.rhs(tmp, mid, &mut k[1]);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k[1][i];
        }
        self.rhs(tmp, mid, &mut k[2]);
        for i in 0..n {
            tmp[i] = x[i] + h * k[2][i];
        }
        self.rhs(tmp, end, &mut k[3]);
        for i in 0..n {
            x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }

    fn buffers(&self) -> ([Vec<f64>; 4], Vec<f64>) {
        let z = vec![0.0; self.n];
        ([z.clone(), z.clone(), z.clone(), z.clone()], z)
    }
}

fn out_of_bounds(x: &[f64]) -> bool {
    x.iter()
        .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
}

/// Integrates `cfg` over `[0, horizon]`, recording every stride-th step and
/// the final step. Divergence truncates the run and sets `diverged_at`.
pub fn simulate(cfg: &ESConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let lp = Loop::new(cfg);
    let n = lp.n;
    let total = cfg.total_steps();
    let stride = cfg.effective_record_stride();
    let capacity = total / stride + 2;

    let mut traj = Trajectory {
        dimension: n,
        epsilon: cfg.epsilon(),
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity * n),
        costs: Vec::with_capacity(capacity),
        diverged_at: None,
        max_state_norm: norm(&cfg.x0),
        label: cfg.label.clone(),
    };
    let mut x = cfg.x0.clone();
    let record = |traj: &mut Trajectory, t: f64, x: &[f64]| {
        traj.times.push(t);
        traj.states.extend_from_slice(x);
        traj.costs.push(cfg.model.value(x));
    };
    record(&mut traj, 0.0, &x);

    let (mut k, mut tmp) = lp.buffers();
    for s in 0..total {
        lp.step(&mut x, s, &mut k, &mut tmp);
        let done = s + 1;
        if out_of_bounds(&x) {
            traj.diverged_at = Some(done as f64 * lp.h);
            break;
        }
        let r = norm(&x);
        if r > traj.max_state_norm {
            traj.max_state_norm = r;
        }
        if done % stride == 0 || done == total {
            record(&mut traj, done as f64 * lp.h, &x);
        }
    }
    Ok(traj)
}

/// `x(eps)` from `x0` over exactly one dither period.
pub fn one_period_map(cfg: &ESConfig, x0: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x0.len() != cfg.dimension() {
        return Err(invalid("initial state dimension differs from the model"));
    }
    let lp = Loop::new(cfg);
    let (mut k, mut tmp) = lp.buffers();
    let mut x = x0.to_vec();
    for s in 0..lp.period_steps {
        lp.step(&mut x, s, &mut k, &mut tmp);
        if out_of_bounds(&x) {
            return Err(Error::Diverged {
                time: (s + 1) as f64 * lp.h,
            });
        }
    }
    Ok(x)
}

/// Largest within-period excursion `max_t ||x(t) - x0||` over `[0, eps]`,
/// sampled at every step.
pub fn period_excursion(cfg: &ESConfig, x0: &[f64]) -> Result<f64> {
    cfg.validate()?;
    let lp = Loop::new(cfg);
    let (mut k, mut tmp) = lp.buffers();
    let mut x = x0.to_vec();
    let mut worst: f64 = 0.0;
    for s in 0..lp.period_steps {
        lp.step(&mut x, s, &mut k, &mut tmp);
        if out_of_bounds(&x) {
            return Err(Error::Diverged {
                time: (s + 1) as f64 * lp.h,
            });
        }
        worst = worst.max(dist(&x, x0));
    }
    Ok(worst)
}

/// `||x'(0)||` at the configured initial state.
pub fn initial_speed(cfg: &ESConfig) -> Result<f64> {
    cfg.validate()?;
    let lp = Loop::new(cfg);
    let mut out = vec![0.0; lp.n];
    lp.rhs(&cfg.x0, 0, &mut out);
    Ok(norm(&out))
}

/// Named reproductions of the published experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    M4,
    M6,
    M8,
    GradientM4,
    GradientM6,
    Mv4,
    Limitation,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::M4,
        Preset::M6,
        Preset::M8,
        Preset::GradientM4,
        Preset::GradientM6,
        Preset::Mv4,
        Preset::Limitation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::M4 => "m4",
            Preset::M6 => "m6",
            Preset::M8 => "m8",
            Preset::GradientM4 => "gradient_m4",
            Preset::GradientM6 => "gradient_m6",
            Preset::Mv4 => "mv4",
            Preset::Limitation => "limitation",
        }
    }

    /// Cost degree `m`.
    pub fn degree(self) -> u32 {
        match self {
            Preset::M4 | Preset::GradientM4 | Preset::Mv4 | Preset::Limitation => 4,
            Preset::M6 | Preset::GradientM6 => 6,
            Preset::M8 => 8,
        }
    }

    pub fn config(self) -> ESConfig {
        let eps = match self {
            Preset::M4 | Preset::GradientM4 | Preset::Mv4 => 1e-3,
            Preset::M6 | Preset::GradientM6 | Preset::Limitation => 1e-4,
            Preset::M8 => 1e-6,
        };
        let m = self.degree();
        let (model, pair, spec, x0, horizon) = match self {
            Preset::M4 | Preset::M6 | Preset::M8 | Preset::Limitation => {
                // x' = C_m (cos(2 pi t/eps) + (-1)^(m/2) J sin(2 (m-1) pi t/eps))
                // is the order m-1 design with g2 = -J.
                let spec =
                    design_dithers(m - 1, 1, eps, SplitRule::EqualMagnitude).expect("valid preset");
                let horizon = match self {
                    Preset::M8 => 5.0,
                    Preset::Limitation => 1.0,
                    _ => 8.0,
                };
                let x0 = if self == Preset::Limitation { 5.0 } else { 4.0 };
                (
                    make_power_cost(m, 1.0).expect("valid preset"),
                    default_pair(1.0).expect("valid preset"),
                    spec,
                    vec![x0],
                    horizon,
                )
            }
            Preset::GradientM4 | Preset::GradientM6 => {
                // x' = 2 sqrt(pi/eps) (J cos(2 pi t/eps) + sin(2 pi t/eps))
                let spec =
                    design_dithers(1, 1, eps, SplitRule::EqualMagnitude).expect("valid preset");
                (
                    make_power_cost(m, 1.0).expect("valid preset"),
                    gradient_pair(),
                    spec,
                    vec![4.0],
                    60.0,
                )
            }
            Preset::Mv4 => {
                // x_i' = C_i (cos(2 pi kappa_i t/eps) + J sin(6 pi kappa_i t/eps))
                let spec = design_multivariable_unchecked(4, &[1, 4], eps).expect("valid preset");
                (
                    make_quartic_2d(),
                    default_pair(1.0).expect("valid preset"),
                    spec,
                    vec![0.0, 0.0],
                    10.0,
                )
            }
        };
        ESConfig {
            label: self.name().to_string(),
            model,
            pair,
            spec,
            x0,
            horizon,
            steps_per_period: if self == Preset::M8 {
                32
            } else {
                DEFAULT_STEPS_PER_PERIOD
            },
            record_stride: None,
            divergence_expected: self == Preset::Limitation,
        }
    }

    /// Every initial state the experiment is run from.
    pub fn initial_states(self) -> Vec<Vec<f64>> {
        match self {
            Preset::Limitation => vec![vec![5.0], vec![-5.0]],
            _ => vec![self.config().x0],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                invalid(format!(
                    "unknown preset '{s}' (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

//! Dither design for exciting the left-iterated bracket `ad_{g1}^N g2`.
//!
//! A design of order `N` uses two sinusoidal channels per state coordinate:
//!
//! ```text
//! u1(t) = c1 * eps^(-N/(N+1)) * cos(2 pi kappa t / eps)
//! u2(t) = c2 * eps^(-N/(N+1)) * w(2 pi N kappa t / eps)      w = sin (N odd), cos (N even)
//! ```
//!
//! with `c1^N c2 = (4 pi kappa)^N N! (-1)^floor(N/2)`. Over one period `eps`
//! every iterated input integral of length `<= N` vanishes and the length
//! `N+1` integrals collapse onto `eps * ad_{g1}^N g2`.
//!
//! The multi-variable design assigns one pair per coordinate with its own
//! `kappa_i`. Its parity rule follows the single-variable one applied to
//! `N = m-1` (the multi-variable statement this derives from reads "if i is
//! even", which is taken to mean "if m-1 is even").

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance for the coefficient product invariant.
pub const COEFFICIENT_RTOL: f64 = 1e-12;

/// Default cap on the number of tuples visited by [`check_nonresonance`].
pub const DEFAULT_RESONANCE_CAP: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Cosine,
    Sine,
}

impl Waveform {
    #[inline]
    pub fn eval(self, angle: f64) -> f64 {
        match self {
            Waveform::Cosine => angle.cos(),
            Waveform::Sine => angle.sin(),
        }
    }
}

/// How the coefficient product is split between the two channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `|c1| = |c2|`, sign carried by `c2`.
    EqualMagnitude,
    /// `c1 = 1`, `c2` takes the whole product.
    UnitC1,
}

/// One sinusoidal excitation channel.
///
/// The amplitude is `coefficient * eps^(-exponent)`; the base coefficient and
/// the exponent are stored separately so that tiny `eps` never overflows
/// intermediate products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherChannel {
    pub coefficient: f64,
    pub exponent: f64,
    pub frequency_multiple: u32,
    pub waveform: Waveform,
    pub kappa: u32,
}

impl DitherChannel {
    /// Full oscillation cycles per dither period `eps`.
    pub fn cycles(&self) -> u64 {
        u64::from(self.frequency_multiple) * u64::from(self.kappa)
    }

    pub fn amplitude(&self, epsilon: f64) -> f64 {
        self.coefficient * epsilon.powf(-self.exponent)
    }

    /// Unit-amplitude waveform at time `t`.
    pub fn unit(&self, epsilon: f64, t: f64) -> f64 {
        self.waveform
            .eval(TAU * reduced_phase(t, epsilon, self.cycles()))
    }

    /// Full channel value `c * eps^(-p) * w(2 pi q kappa t / eps)`.
    pub fn eval(&self, epsilon: f64, t: f64) -> f64 {
        self.amplitude(epsilon) * self.unit(epsilon, t)
    }
}

/// Phase in cycles, reduced to `[0, 1)`.
///
/// `t` is first reduced modulo `eps` so large `t / eps` does not eat the
/// mantissa before the trigonometric call.
pub fn reduced_phase(t: f64, epsilon: f64, cycles: u64) -> f64 {
    let within = (t / epsilon).rem_euclid(1.0);
    (within * cycles as f64).rem_euclid(1.0)
}

/// The two channels driving one state coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherPair {
    pub first: DitherChannel,
    pub second: DitherChannel,
}

impl DitherPair {
    pub fn kappa(&self) -> u32 {
        self.first.kappa
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherSpec {
    pub order: u32,
    pub epsilon: f64,
    pub pairs: Vec<DitherPair>,
}

impl DitherSpec {
    pub fn dimension(&self) -> usize {
        self.pairs.len()
    }

    pub fn max_cycles(&self) -> u64 {
        self.pairs
            .iter()
            .flat_map(|p| [p.first.cycles(), p.second.cycles()])
            .max()
            .unwrap_or(1)
    }

    /// Checks the design invariants: exponent, frequency multiples, parity
    /// rule and the coefficient product.
    pub fn validate(&self) -> Result<()> {
        let n = self.order;
        if n == 0 {
            return Err(invalid("design order must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon must be positive and finite"));
        }
        if self.pairs.is_empty() {
            return Err(invalid("design has no channel pairs"));
        }
        let p = amplitude_exponent(n);
        let parity = second_waveform(n);
        for (i, pair) in self.pairs.iter().enumerate() {
            for ch in [&pair.first, &pair.second] {
                if (ch.exponent - p).abs() > 1e-15 {
                    return Err(invalid(format!(
                        "pair {i}: exponent {} differs from N/(N+1) = {p}",
                        ch.exponent
                    )));
                }
                if ch.kappa == 0 {
                    return Err(invalid(format!("pair {i}: kappa must be >= 1")));
                }
            }
            if pair.first.kappa != pair.second.kappa {
                return Err(invalid(format!("pair {i}: channels disagree on kappa")));
            }
            if pair.first.frequency_multiple != 1 || pair.second.frequency_multiple != n {
                return Err(invalid(format!(
                    "pair {i}: frequency multiples must be (1, {n})"
                )));
            }
            if pair.first.waveform != Waveform::Cosine || pair.second.waveform != parity {
                return Err(invalid(format!(
                    "pair {i}: waveforms must be (cosine, {parity:?}) for N = {n}"
                )));
            }
            let target = bracket_coefficient(n, pair.kappa());
            let product = pair.first.coefficient.powi(n as i32) * pair.second.coefficient;
            if ((product - target) / target).abs() > COEFFICIENT_RTOL {
                return Err(invalid(format!(
                    "pair {i}: c1^N c2 = {product} but {target} is required"
                )));
            }
        }
        Ok(())
    }
}

/// `N / (N + 1)`.
pub fn amplitude_exponent(order: u32) -> f64 {
    f64::from(order) / f64::from(order + 1)
}

/// Waveform of the second channel: sine for odd `N`, cosine for even `N`.
pub fn second_waveform(order: u32) -> Waveform {
    if order % 2 == 1 {
        Waveform::Sine
    } else {
        Waveform::Cosine
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Required coefficient product `c1^N c2 = (4 pi kappa)^N N! (-1)^floor(N/2)`.
pub fn bracket_coefficient(order: u32, kappa: u32) -> f64 {
    let sign = if (order / 2) % 2 == 0 { 1.0 } else { -1.0 };
    (4.0 * PI * f64::from(kappa)).powi(order as i32) * factorial(order) * sign
}

/// Single-pair design of order `N`. `c1` is always positive.
pub fn design_dithers(
    order: u32,
    kappa: u32,
    epsilon: f64,
    split: SplitRule,
) -> Result<DitherSpec> {
    if order == 0 || kappa == 0 {
        return Err(invalid("order and kappa must be >= 1"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon must be positive and finite"));
    }
    let pair = design_pair(order, kappa, split);
    Ok(DitherSpec {
        order,
        epsilon,
        pairs: vec![pair],
    })
}

fn design_pair(order: u32, kappa: u32, split: SplitRule) -> DitherPair {
    let product = bracket_coefficient(order, kappa);
    let (c1, c2) = match split {
        SplitRule::EqualMagnitude => {
            let c = product.abs().powf(1.0 / f64::from(order + 1));
            (c, c.copysign(product))
        }
        SplitRule::UnitC1 => (1.0, product),
    };
    let exponent = amplitude_exponent(order);
    DitherPair {
        first: DitherChannel {
            coefficient: c1,
            exponent,
            frequency_multiple: 1,
            waveform: Waveform::Cosine,
            kappa,
        },
        second: DitherChannel {
            coefficient: c2,
            exponent,
            frequency_multiple: order,
            waveform: second_waveform(order),
            kappa,
        },
    }
}

/// Outcome of the non-resonance check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResonanceReport {
    pub passes: bool,
    /// One violating tuple as per-coordinate `(mu_i, nu_i)`; present iff `!passes`.
    pub witness: Option<Vec<(i64, i64)>>,
    /// Number of tuples enumerated.
    pub visited: u128,
}

/// Number of integer vectors in `dims` dimensions with L1 norm `<= radius`.
pub fn lattice_ball_size(dims: usize, radius: u32) -> u128 {
    let mut total: u128 = 0;
    let radius = radius as usize;
    for j in 0..=dims.min(radius) {
        let term = binom_u128(dims, j)
            .saturating_mul(binom_u128(radius, j))
            .saturating_mul(1u128 << j.min(127));
        total = total.saturating_add(term);
    }
    total
}

fn binom_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Exhaustive check of the non-resonance condition with the default cap.
pub fn check_nonresonance(kappas: &[u32], order: u32) -> Result<ResonanceReport> {
    check_nonresonance_with_cap(kappas, order, DEFAULT_RESONANCE_CAP)
}

/// Enumerates every `(mu, nu)` with entries in `{0, ±1, .., ±N}` and
/// `sum |mu_i| + |nu_i| <= N`. The check passes iff every tuple with
/// `sum (mu_i + N nu_i) kappa_i = 0` has `mu_i = -N nu_i` for all `i`.
///
/// When it fails, the reported witness is the violating tuple of smallest
/// L1 norm, ties broken towards the lexicographically largest
/// `(mu_1..mu_n, nu_1..nu_n)`.
pub fn check_nonresonance_with_cap(
    kappas: &[u32],
    order: u32,
    cap: u128,
) -> Result<ResonanceReport> {
    if kappas.is_empty() {
        return Err(invalid("kappa list is empty"));
    }
    if order == 0 || kappas.contains(&0) {
        return Err(invalid("order and every kappa must be >= 1"));
    }
    let n = kappas.len();
    let tuples = lattice_ball_size(2 * n, order);
    if tuples > cap {
        return Err(Error::Infeasible { tuples, cap });
    }

    let mut search = ResonanceSearch {
        kappas,
        order: i64::from(order),
        current: vec![0; 2 * n],
        best: None,
        visited: 0,
    };
    search.descend(0, i64::from(order));

    let witness = search
        .best
        .map(|(_, t)| (0..n).map(|i| (t[i], t[n + i])).collect());
    Ok(ResonanceReport {
        passes: witness.is_none(),
        witness,
        visited: search.visited,
    })
}

struct ResonanceSearch<'a> {
    kappas: &'a [u32],
    order: i64,
    current: Vec<i64>,
    best: Option<(i64, Vec<i64>)>,
    visited: u128,
}

impl ResonanceSearch<'_> {
    fn descend(&mut self, slot: usize, budget: i64) {
        if slot == self.current.len() {
            self.visited += 1;
            self.inspect();
            return;
        }
        for v in -budget..=budget {
            self.current[slot] = v;
            self.descend(slot + 1, budget - v.abs());
        }
        self.current[slot] = 0;
    }

    fn inspect(&mut self) {
        let n = self.kappas.len();
        let (mu, nu) = self.current.split_at(n);
        let sum: i64 = (0..n)
            .map(|i| (mu[i] + self.order * nu[i]) * i64::from(self.kappas[i]))
            .sum();
        if sum != 0 || (0..n).all(|i| mu[i] == -self.order * nu[i]) {
            return;
        }
        let norm: i64 = self.current.iter().map(|v| v.abs()).sum();
        let better = match &self.best {
            None => true,
            Some((bn, bt)) => norm < *bn || (norm == *bn && self.current > *bt),
        };
        if better {
            self.best = Some((norm, self.current.clone()));
        }
    }
}

/// Multi-variable design for a cost of degree `m`: one order `m-1` pair per
/// coordinate. Each pair gets its own coefficients from
/// [`design_dithers`] with its `kappa_i`, so every pair meets the product
/// constraint for its own frequency.
pub fn design_multivariable(m: u32, kappas: &[u32], epsilon: f64) -> Result<DitherSpec> {
    if m < 2 {
        return Err(invalid("m must be >= 2"));
    }
    let report = check_nonresonance(kappas, m - 1)?;
    if let Some(witness) = report.witness {
        return Err(Error::Resonant { witness });
    }
    design_multivariable_unchecked(m, kappas, epsilon)
}

/// [`design_multivariable`] without the non-resonance precondition. Used by
/// presets that reproduce a published configuration verbatim.
pub fn design_multivariable_unchecked(m: u32, kappas: &[u32], epsilon: f64) -> Result<DitherSpec> {
    if m < 2 {
        return Err(invalid("m must be >= 2"));
    }
    if kappas.is_empty() {
        return Err(invalid("kappa list is empty"));
    }
    let order = m - 1;
    let mut pairs = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let spec = design_dithers(order, kappa, epsilon, SplitRule::EqualMagnitude)?;
        pairs.extend(spec.pairs);
    }
    Ok(DitherSpec {
        order,
        epsilon,
        pairs,
    })
}

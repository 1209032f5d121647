//! Quadrature oracle for iterated dither integrals over one period.
//!
//! Channel sequences in an [`IntegralRequest`] are listed innermost first:
//! `[a, b]` is `int_0^eps b(s1) int_0^s1 a(s2) ds2 ds1`. Word labels in a
//! [`Certification`] follow the Lie-word order instead (outermost variable
//! first, matching [`crate::bracket::LieWord`]), so the word with channel 2
//! at 0-based position `k` pairs with `I_{k,N+1}`.
//!
//! Waveforms are sampled with exact integer phase reduction, so a grid of
//! `n` intervals sees identical samples for every `eps`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fd::binomial;
use crate::signal::{DitherChannel, DitherSpec, Waveform};

pub const MIN_GRID: usize = 1_000;
pub const DEFAULT_GRID: usize = 200_000;
/// Normalized bound `|I| / eps^len` for words that must vanish.
pub const VANISH_TOL: f64 = 1e-6;
/// Relative tolerance of the collapse identity.
pub const COLLAPSE_RTOL: f64 = 1e-5;
pub const MAX_WORD_LEN: usize = 6;

/// Unit-amplitude waveform with `cycles` oscillations per period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnitWave {
    pub waveform: Waveform,
    pub cycles: u64,
}

impl From<&DitherChannel> for UnitWave {
    fn from(ch: &DitherChannel) -> Self {
        UnitWave {
            waveform: ch.waveform,
            cycles: ch.cycles(),
        }
    }
}

impl UnitWave {
    /// Samples at `s_i = i eps / n`, `i = 0..=n`.
    fn samples(&self, n: usize) -> Vec<f64> {
        let n64 = n as u64;
        let c = self.cycles % n64;
        (0..=n64)
            .map(|i| {
                let phase = ((u128::from(i) * u128::from(c)) % u128::from(n64)) as f64 / n as f64;
                self.waveform.eval(TAU * phase)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralRequest {
    /// Innermost integrand first.
    pub channels: Vec<UnitWave>,
    pub epsilon: f64,
    /// Number of uniform subintervals of `[0, eps]`.
    pub grid_points: usize,
}

impl IntegralRequest {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(invalid("channel sequence is empty"));
        }
        if self.grid_points < MIN_GRID {
            return Err(invalid(format!("grid needs at least {MIN_GRID} points")));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon must be positive and finite"));
        }
        Ok(())
    }
}

/// One cumulative trapezoid pass of `v * f`, in place.
fn cumulative_pass(v: &[f64], f: &[f64], h: f64, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(f.len());
    out.push(0.0);
    let mut acc = 0.0;
    let mut prev = v[0] * f[0];
    for i in 1..f.len() {
        let cur = v[i] * f[i];
        acc += 0.5 * h * (prev + cur);
        out.push(acc);
        prev = cur;
    }
}

/// Iterated integral over `[0, eps]` by successive cumulative trapezoid passes.
pub fn iterated_integral(req: &IntegralRequest) -> Result<f64> {
    req.validate()?;
    let n = req.grid_points;
    let h = req.epsilon / n as f64;
    let mut f = vec![1.0; n + 1];
    let mut next = Vec::new();
    for wave in &req.channels {
        let v = wave.samples(n);
        cumulative_pass(&v, &f, h, &mut next);
        std::mem::swap(&mut f, &mut next);
    }
    Ok(f[n])
}

/// `I_{k,N+1}(eps) = eps^{N+1} (-1)^{floor(N/2)+k} / ((4 pi kappa)^N k! (N-k)!)`.
pub fn closed_form_i(k: usize, order: usize, kappa: u32, epsilon: f64) -> Result<f64> {
    if order == 0 || kappa == 0 {
        return Err(invalid("order and kappa must be >= 1"));
    }
    if k > order {
        return Err(invalid(format!("k = {k} exceeds N = {order}")));
    }
    let sign = if (order / 2 + k) % 2 == 0 { 1.0 } else { -1.0 };
    let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
    let denom = (4.0 * PI * f64::from(kappa)).powi(order as i32) * fact(k) * fact(order - k);
    Ok(sign * epsilon.powi(order as i32 + 1) / denom)
}

/// Request for `I_{k,N+1}` under the order-`N` design with frequency `kappa`:
/// channel 2 at the `(k+1)`-th variable counted from the outermost.
pub fn i_kn_request(
    k: usize,
    order: u32,
    kappa: u32,
    epsilon: f64,
    grid_points: usize,
) -> IntegralRequest {
    let first = UnitWave {
        waveform: Waveform::Cosine,
        cycles: u64::from(kappa),
    };
    let second = UnitWave {
        waveform: crate::signal::second_waveform(order),
        cycles: u64::from(order) * u64::from(kappa),
    };
    let len = order as usize + 1;
    let mut channels = vec![first; len];
    // innermost-first index of outermost position k
    channels[len - 1 - k] = second;
    IntegralRequest {
        channels,
        epsilon,
        grid_points,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Word of length `<= N`, or a cross-coordinate word, must vanish.
    Vanish,
    /// `c1^N c2 I_{k,N+1} = eps^{N+1} (-1)^k C(N, k)`.
    Collapse,
    /// Reported only.
    Info,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertRow {
    pub word: String,
    pub length: usize,
    pub check: CheckKind,
    /// Unit-amplitude iterated integral.
    pub value: f64,
    pub target: f64,
    /// Normalized magnitude (vanish) or relative error (collapse).
    pub error: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CertRow {
    fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.error / self.bound
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certification {
    pub order: u32,
    pub epsilon: f64,
    pub grid_points: usize,
    pub rows: Vec<CertRow>,
    pub passes: bool,
    /// Checked row with the largest error-to-bound ratio.
    pub worst: Option<CertRow>,
}

impl Certification {
    fn from_rows(order: u32, epsilon: f64, grid_points: usize, rows: Vec<CertRow>) -> Self {
        let passes = rows.iter().all(|r| r.pass);
        let worst = rows
            .iter()
            .filter(|r| r.check != CheckKind::Info)
            .max_by(|a, b| a.ratio().total_cmp(&b.ratio()))
            .cloned();
        Certification {
            order,
            epsilon,
            grid_points,
            rows,
            passes,
            worst,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("word,length,check,value,target,error,bound,pass\n");
        for r in &self.rows {
            let check = match r.check {
                CheckKind::Vanish => "vanish",
                CheckKind::Collapse => "collapse",
                CheckKind::Info => "info",
            };
            let _ = writeln!(
                s,
                "\"{}\",{},{},{:.16e},{:.16e},{:.6e},{:.1e},{}",
                r.word, r.length, check, r.value, r.target, r.error, r.bound, r.pass
            );
        }
        s
    }
}

/// Depth-first walk over innermost-first channel sequences of length
/// `1..=max_len`, sharing the cumulative passes of common prefixes.
/// `visit` receives the sequence (innermost first) and the integral.
fn walk_words(
    waves: &[Vec<f64>],
    n: usize,
    h: f64,
    max_len: usize,
    visit: &mut dyn FnMut(&[usize], f64),
) {
    let mut stack: Vec<Vec<f64>> = vec![vec![1.0; n + 1]];
    let mut seq: Vec<usize> = Vec::with_capacity(max_len);
    fn rec(
        waves: &[Vec<f64>],
        h: f64,
        max_len: usize,
        stack: &mut Vec<Vec<f64>>,
        seq: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize], f64),
    ) {
        if seq.len() == max_len {
            return;
        }
        for (c, v) in waves.iter().enumerate() {
            let mut next = Vec::new();
            cumulative_pass(v, stack.last().unwrap(), h, &mut next);
            seq.push(c);
            visit(seq, *next.last().unwrap());
            stack.push(next);
            rec(waves, h, max_len, stack, seq, visit);
            stack.pop();
            seq.pop();
        }
    }
    rec(waves, h, max_len, &mut stack, &mut seq, visit);
}

fn check_grid(grid_points: usize) -> Result<()> {
    if grid_points < MIN_GRID {
        return Err(invalid(format!("grid needs at least {MIN_GRID} points")));
    }
    Ok(())
}

fn vanish_row(word: String, length: usize, value: f64, epsilon: f64) -> CertRow {
    let error = value.abs() / epsilon.powi(length as i32);
    CertRow {
        word,
        length,
        check: CheckKind::Vanish,
        value,
        target: 0.0,
        error,
        bound: VANISH_TOL,
        pass: error <= VANISH_TOL,
    }
}

fn collapse_row(
    word: String,
    order: u32,
    k: usize,
    value: f64,
    product: f64,
    epsilon: f64,
) -> CertRow {
    let n = order as usize;
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let target = epsilon.powi(order as i32 + 1) * sign * binomial(n, k);
    let error = ((product * value - target) / target).abs();
    CertRow {
        word,
        length: n + 1,
        check: CheckKind::Collapse,
        value,
        target,
        error,
        bound: COLLAPSE_RTOL,
        pass: error <= COLLAPSE_RTOL,
    }
}

/// [`certify_excitation_with`] on the default grid.
pub fn certify_excitation(spec: &DitherSpec, max_len: usize) -> Result<Certification> {
    certify_excitation_with(spec, max_len, DEFAULT_GRID)
}

/// Checks a single-pair design: every word of length `<= N` vanishes and
/// each word with one channel-2 entry at position `k` of `N + 1` satisfies
/// the collapse identity. Longer or other words up to `max_len` are
/// reported without a check.
pub fn certify_excitation_with(
    spec: &DitherSpec,
    max_len: usize,
    grid_points: usize,
) -> Result<Certification> {
    if spec.pairs.len() != 1 {
        return Err(invalid("single-pair certification needs exactly one pair"));
    }
    let order = spec.order;
    let n_ord = order as usize;
    if max_len < n_ord + 1 {
        return Err(invalid(format!("max_len must be >= N + 1 = {}", n_ord + 1)));
    }
    if max_len > MAX_WORD_LEN {
        return Err(invalid(format!("max_len is capped at {MAX_WORD_LEN}")));
    }
    check_grid(grid_points)?;
    let eps = spec.epsilon;
    let pair = &spec.pairs[0];
    let product = pair.first.coefficient.powi(order as i32) * pair.second.coefficient;
    let waves: Vec<Vec<f64>> = [&pair.first, &pair.second]
        .iter()
        .map(|ch| UnitWave::from(*ch).samples(grid_points))
        .collect();
    let h = eps / grid_points as f64;

    let mut rows = Vec::new();
    walk_words(&waves, grid_points, h, max_len, &mut |seq, value| {
        // outermost first
        let word: Vec<usize> = seq.iter().rev().map(|c| c + 1).collect();
        let label = format!(
            "({})",
            word.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let len = word.len();
        let twos: Vec<usize> = (0..len).filter(|&i| word[i] == 2).collect();
        let row = if len <= n_ord {
            vanish_row(label, len, value, eps)
        } else if len == n_ord + 1 && twos.len() == 1 {
            collapse_row(label, order, twos[0], value, product, eps)
        } else {
            CertRow {
                word: label,
                length: len,
                check: CheckKind::Info,
                value,
                target: f64::NAN,
                error: f64::NAN,
                bound: f64::NAN,
                pass: true,
            }
        };
        rows.push(row);
    });
    rows.sort_by(|a, b| a.length.cmp(&b.length).then_with(|| a.word.cmp(&b.word)));
    Ok(Certification::from_rows(order, eps, grid_points, rows))
}

/// Checks an `n`-pair design over all `2n` channels: every word of length
/// `<= N` vanishes, every length `N + 1` word touching more than one
/// coordinate vanishes, and each coordinate's own channel-2-at-`k` words
/// satisfy the collapse identity with that pair's coefficients.
pub fn certify_multivariable(spec: &DitherSpec, grid_points: usize) -> Result<Certification> {
    let order = spec.order;
    let n_ord = order as usize;
    if n_ord + 1 > MAX_WORD_LEN {
        return Err(invalid(format!("word length is capped at {MAX_WORD_LEN}")));
    }
    if spec.pairs.is_empty() {
        return Err(invalid("design has no channel pairs"));
    }
    check_grid(grid_points)?;
    let eps = spec.epsilon;
    // channel index 2 i + 0/1 -> (coordinate i, channel 1/2)
    let mut waves = Vec::new();
    for pair in &spec.pairs {
        waves.push(UnitWave::from(&pair.first).samples(grid_points));
        waves.push(UnitWave::from(&pair.second).samples(grid_points));
    }
    let products: Vec<f64> = spec
        .pairs
        .iter()
        .map(|p| p.first.coefficient.powi(order as i32) * p.second.coefficient)
        .collect();
    let h = eps / grid_points as f64;

    let mut rows = Vec::new();
    walk_words(&waves, grid_points, h, n_ord + 1, &mut |seq, value| {
        let word: Vec<(usize, usize)> = seq.iter().rev().map(|c| (c % 2 + 1, c / 2)).collect();
        let label = format!(
            "({})",
            word.iter()
                .map(|(ch, i)| format!("{ch}@{}", i + 1))
                .collect::<Vec<_>>()
                .join(",")
        );
        let len = word.len();
        let coord = word[0].1;
        let single = word.iter().all(|&(_, i)| i == coord);
        let twos: Vec<usize> = (0..len).filter(|&p| word[p].0 == 2).collect();
        let row = if len <= n_ord || !single {
            vanish_row(label, len, value, eps)
        } else if twos.len() == 1 {
            collapse_row(label, order, twos[0], value, products[coord], eps)
        } else {
            CertRow {
                word: label,
                length: len,
                check: CheckKind::Info,
                value,
                target: f64::NAN,
                error: f64::NAN,
                bound: f64::NAN,
                pass: true,
            }
        };
        rows.push(row);
    });
    rows.sort_by(|a, b| a.length.cmp(&b.length).then_with(|| a.word.cmp(&b.word)));
    Ok(Certification::from_rows(order, eps, grid_points, rows))
}

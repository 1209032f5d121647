//! Decay envelopes, exponential and power-law fits, and the one-period
//! residual order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bracket::ad_bracket_partial;
use crate::error::{invalid, Error, Result};
use crate::sim::{one_period_map, ESConfig, Trajectory};

/// Minimum number of envelope points a fit accepts.
pub const MIN_FIT_POINTS: usize = 10;

/// `(t, e)` pairs: window midpoint and max distance inside the window.
pub type Envelope = Vec<(f64, f64)>;

/// Per-window max of `||x(t) - x*||` over consecutive windows of
/// `window_width`, emitted at each window's midpoint (the last window is
/// clipped to the final sample). Empty windows are skipped.
pub fn envelope(traj: &Trajectory, x_star: &[f64], window_width: f64) -> Result<Envelope> {
    if traj.is_empty() {
        return Err(invalid("trajectory is empty"));
    }
    if x_star.len() != traj.dimension {
        return Err(invalid("x_star dimension differs from the trajectory"));
    }
    if !(window_width >= traj.epsilon) {
        return Err(invalid(format!(
            "window width {window_width} is shorter than the dither period {}",
            traj.epsilon
        )));
    }
    let errors: Vec<f64> = (0..traj.len()).map(|i| traj.distance(i, x_star)).collect();
    envelope_of(&traj.times, &errors, window_width)
}

/// [`envelope`] on raw `(t, e)` samples.
pub fn envelope_of(times: &[f64], errors: &[f64], window_width: f64) -> Result<Envelope> {
    if times.is_empty() || times.len() != errors.len() {
        return Err(invalid(
            "need equally many, and at least one, time and error samples",
        ));
    }
    if !(window_width > 0.0 && window_width.is_finite()) {
        return Err(invalid("window width must be positive"));
    }
    let t0 = times[0];
    let t_last = times[times.len() - 1];
    let mut out = Vec::new();
    let mut current: Option<(i64, f64)> = None;
    let emit = |k: i64, e: f64, out: &mut Envelope| {
        let start = t0 + k as f64 * window_width;
        let end = (start + window_width).min(t_last);
        out.push((0.5 * (start + end.max(start)), e));
    };
    for (&t, &e) in times.iter().zip(errors) {
        let k = ((t - t0) / window_width + 1e-9).floor() as i64;
        current = match current {
            Some((ck, ce)) if ck == k => Some((k, ce.max(e))),
            Some((ck, ce)) => {
                emit(ck, ce, &mut out);
                Some((k, e))
            }
            None => Some((k, e)),
        };
    }
    if let Some((k, e)) = current {
        emit(k, e, &mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Exponential,
    Polynomial,
}

/// Fitted decay model.
///
/// Exponential: `e(t) ~ prefactor exp(-rate t) + floor`.
/// Polynomial: `e(t) ~ prefactor t^rate` (rate is the log-log slope).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kind: DecayKind,
    pub rate: f64,
    pub prefactor: f64,
    pub floor: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

impl DecayFit {
    pub const CSV_HEADER: &'static str = "kind,rate,prefactor,floor,r_squared,t_start,t_end,points";

    pub fn csv_row(&self) -> String {
        let kind = match self.kind {
            DecayKind::Exponential => "exponential",
            DecayKind::Polynomial => "polynomial",
        };
        format!(
            "{kind},{:.10e},{:.10e},{:.10e},{:.10},{:.10e},{:.10e},{}",
            self.rate,
            self.prefactor,
            self.floor,
            self.r_squared,
            self.window.0,
            self.window.1,
            self.points
        )
    }
}

/// Window selection for [`fit_exponential_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Quantile of the tail taken as the floor `rho`.
    pub floor_quantile: f64,
    /// Trailing fraction of the envelope the floor is estimated from.
    pub tail_fraction: f64,
    /// Leading envelope points dropped as the initial transient.
    pub skip_initial: usize,
    /// Points with `e <= floor_margin * rho` are dropped.
    pub floor_margin: f64,
    /// Explicit `(t_start, t_end)` overriding the automatic window.
    pub window: Option<(f64, f64)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            floor_quantile: 0.1,
            tail_fraction: 0.2,
            skip_initial: 5,
            floor_margin: 3.0,
            window: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor_quantile > 0.0 && self.floor_quantile < 1.0) {
            return Err(invalid("floor quantile must lie in (0, 1)"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(invalid("tail fraction must lie in (0, 1]"));
        }
        if let Some((a, b)) = self.window {
            if !(a < b) {
                return Err(invalid("fit window needs t_start < t_end"));
            }
        }
        Ok(())
    }
}

/// Linear-interpolated sample quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.len() == 1 {
        return v[0];
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r^2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - a - b * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (a, b, r2)
}

fn in_window(t: f64, window: Option<(f64, f64)>) -> bool {
    window.is_none_or(|(a, b)| t >= a && t <= b)
}

/// [`fit_exponential_with`] using the default window rules.
pub fn fit_exponential(env: &[(f64, f64)], floor_quantile: f64) -> Result<DecayFit> {
    fit_exponential_with(
        env,
        &FitOptions {
            floor_quantile,
            ..FitOptions::default()
        },
    )
}

/// Estimates `rho` as a low quantile of the envelope tail, then fits
/// `log(e - rho) = log(lambda') - gamma t` over the usable points.
pub fn fit_exponential_with(env: &[(f64, f64)], opts: &FitOptions) -> Result<DecayFit> {
    opts.validate()?;
    if env.is_empty() {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: 0,
        });
    }
    let tail_len = ((env.len() as f64 * opts.tail_fraction).ceil() as usize).clamp(1, env.len());
    let tail: Vec<f64> = env[env.len() - tail_len..].iter().map(|p| p.1).collect();
    let rho = quantile(&tail, opts.floor_quantile).max(0.0);

    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    for (i, &(t, e)) in env.iter().enumerate() {
        if opts.window.is_none() && i < opts.skip_initial {
            continue;
        }
        if !in_window(t, opts.window) || e <= opts.floor_margin * rho || e - rho <= 0.0 {
            continue;
        }
        ts.push(t);
        ys.push((e - rho).ln());
    }
    if ts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: ts.len(),
        });
    }
    let (a, b, r2) = linear_fit(&ts, &ys);
    Ok(DecayFit {
        kind: DecayKind::Exponential,
        rate: -b,
        prefactor: a.exp(),
        floor: rho,
        r_squared: r2,
        window: (ts[0], ts[ts.len() - 1]),
        points: ts.len(),
    })
}

/// Fits `log e = a + slope log t` over points with `t > 0`, `e > 0`
/// inside `window` (all points when `None`).
pub fn fit_polynomial(env: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<DecayFit> {
    if let Some((a, b)) = window {
        if !(a < b) {
            return Err(invalid("fit window needs t_start < t_end"));
        }
    }
    let (mut xs, mut ys, mut ts) = (Vec::new(), Vec::new(), Vec::new());
    for &(t, e) in env {
        if t > 0.0 && e > 0.0 && in_window(t, window) {
            xs.push(t.ln());
            ys.push(e.ln());
            ts.push(t);
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: xs.len(),
        });
    }
    let (a, b, r2) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        kind: DecayKind::Polynomial,
        rate: b,
        prefactor: a.exp(),
        floor: 0.0,
        r_squared: r2,
        window: (ts[0], ts[ts.len() - 1]),
        points: xs.len(),
    })
}

/// Both models fitted on the exponential fit's window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub exponential: DecayFit,
    pub polynomial: DecayFit,
    pub preferred: DecayKind,
}

pub fn compare_models(env: &[(f64, f64)], opts: &FitOptions) -> Result<ModelComparison> {
    let exponential = fit_exponential_with(env, opts)?;
    let polynomial = fit_polynomial(env, Some(exponential.window))?;
    let preferred = if exponential.r_squared >= polynomial.r_squared {
        DecayKind::Exponential
    } else {
        DecayKind::Polynomial
    };
    Ok(ModelComparison {
        exponential,
        polynomial,
        preferred,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualPoint {
    pub epsilon: f64,
    /// `||x(eps) - x0 - eps ad_{g1}^N g2||`.
    pub delta: f64,
    /// `||x(eps)|_{P} - x(eps)|_{2P}||` with doubled steps per period.
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub x0: Vec<f64>,
    pub points: Vec<ResidualPoint>,
    /// Least-squares slope of `log delta` against `log eps`.
    pub order: f64,
}

impl ResidualReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,delta,floor\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.6e},{:.16e},{:.6e}", p.epsilon, p.delta, p.floor);
        }
        s
    }
}

/// One-period residual of the averaged drift at each configuration's `eps`,
/// and the log-log slope across them. Configurations must share the model,
/// pair and design order; their `eps` values must be at least 4x apart.
pub fn residual_order(configs: &[ESConfig], x0: &[f64]) -> Result<ResidualReport> {
    if configs.len() < 2 {
        return Err(invalid("need at least two epsilon values"));
    }
    let mut sorted: Vec<&ESConfig> = configs.iter().collect();
    sorted.sort_by(|a, b| a.epsilon().total_cmp(&b.epsilon()));
    for w in sorted.windows(2) {
        if w[1].epsilon() < 4.0 * w[0].epsilon() * (1.0 - 1e-12) {
            return Err(invalid("epsilon values must be separated by at least 4x"));
        }
        if w[0].order() != w[1].order() || w[0].model != w[1].model || w[0].pair != w[1].pair {
            return Err(invalid("configurations differ in more than epsilon"));
        }
    }
    let mut points = Vec::with_capacity(sorted.len());
    for cfg in &sorted {
        let n = cfg.dimension();
        let eps = cfg.epsilon();
        let order = cfg.order() as usize;
        let x1 = one_period_map(cfg, x0)?;
        let mut fine = (*cfg).clone();
        fine.steps_per_period *= 2;
        let x1_fine = one_period_map(&fine, x0)?;
        let mut d2 = 0.0;
        let mut f2 = 0.0;
        for i in 0..n {
            let drift = ad_bracket_partial(order, &cfg.pair, &cfg.model, i, x0)?;
            d2 += (x1[i] - x0[i] - eps * drift).powi(2);
            f2 += (x1[i] - x1_fine[i]).powi(2);
        }
        let (delta, floor) = (d2.sqrt(), f2.sqrt());
        if delta < 10.0 * floor {
            return Err(Error::NotMeasurable {
                residual: delta,
                floor,
            });
        }
        points.push(ResidualPoint {
            epsilon: eps,
            delta,
            floor,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.epsilon.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.delta.ln()).collect();
    let (_, slope, _) = linear_fit(&xs, &ys);
    Ok(ResidualReport {
        x0: x0.to_vec(),
        points,
        order: slope,
    })
}

/// Human-readable block summarizing a model comparison.
pub fn fit_summary(cmp: &ModelComparison) -> String {
    let e = &cmp.exponential;
    let p = &cmp.polynomial;
    format!(
        "exponential: gamma = {:.6}, lambda' = {:.6e}, rho = {:.6e}, R^2 = {:.6}, window = [{:.4}, {:.4}] ({} points)\n\
         polynomial:  slope = {:.6}, prefactor = {:.6e}, R^2 = {:.6} on the same window\n\
         preferred:   {:?}\n",
        e.rate,
        e.prefactor,
        e.floor,
        e.r_squared,
        e.window.0,
        e.window.1,
        e.points,
        p.rate,
        p.prefactor,
        p.r_squared,
        cmp.preferred
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> Envelope {
        (0..n)
            .map(|i| {
                let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn constant_envelope() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let states: Vec<Vec<f64>> = times.iter().map(|_| vec![2.0]).collect();
        let tr = Trajectory::from_samples(0.01, times, states, vec![0.0; 100]).unwrap();
        let env = envelope(&tr, &[1.0], 0.1).unwrap();
        assert_eq!(env.len(), 10);
        assert!(env.iter().all(|p| p.1 == 1.0));
        assert!((env[0].0 - 0.05).abs() < 1e-12);
    }

    #[test]
    fn exponential_envelope_at_midpoints() {
        let dt = 1e-3;
        let times: Vec<f64> = (0..=5000).map(|i| i as f64 * dt).collect();
        let errors: Vec<f64> = times.iter().map(|t| (-2.0 * t).exp()).collect();
        let env = envelope_of(&times, &errors, 0.1).unwrap();
        for &(t, e) in &env[..env.len() - 1] {
            // max of a decreasing function is at the window start
            let expected = (-2.0 * (t - 0.05)).exp();
            assert!((e - expected).abs() < 1e-9 * expected.max(1.0), "t = {t}");
            let at_mid = (-2.0 * t).exp();
            assert!((e / at_mid - 1.0).abs() < 0.11);
        }
    }

    #[test]
    fn envelope_rejects_bad_input() {
        assert!(envelope_of(&[], &[], 1.0).is_err());
        let tr = Trajectory::from_samples(
            0.5,
            vec![0.0, 1.0],
            vec![vec![0.0], vec![1.0]],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert!(envelope(&tr, &[0.0], 0.1).is_err());
        assert!(envelope(&tr, &[0.0], 0.5).is_ok());
    }

    #[test]
    fn exponential_fit_recovers_planted_decay() {
        let env = synth(|t| 3.0 * (-2.0 * t).exp() + 0.01, 0.0, 10.0, 1000);
        let fit = fit_exponential(&env, 0.1).unwrap();
        assert!((1.9..=2.1).contains(&fit.rate), "{}", fit.rate);
        assert!((fit.floor - 0.01).abs() < 1e-4);
        assert!(fit.r_squared > 0.99);
        assert!(fit.window.0 < fit.window.1);
    }

    #[test]
    fn power_law_prefers_polynomial() {
        let env = synth(|t| t.powf(-0.5), 0.1, 60.0, 600);
        let poly = fit_polynomial(&env, None).unwrap();
        assert!((-0.55..=-0.45).contains(&poly.rate));
        assert!(poly.r_squared > 0.9999);
        let cmp = compare_models(&env, &FitOptions::default()).unwrap();
        assert_eq!(cmp.preferred, DecayKind::Polynomial);
        assert!(cmp.exponential.r_squared < cmp.polynomial.r_squared - 0.05);
    }

    #[test]
    fn fits_need_ten_points() {
        let env = synth(|t| (-t).exp(), 0.0, 1.0, 9);
        assert!(matches!(
            fit_polynomial(&env, None),
            Err(Error::InsufficientData { needed: 10, .. })
        ));
        assert!(fit_exponential(&env, 0.1).is_err());
        assert!(fit_exponential(&synth(|t| (-t).exp(), 0.0, 1.0, 50), 1.5).is_err());
    }

    #[test]
    fn explicit_window() {
        let env = synth(|t| 2.0 * (-0.5 * t).exp(), 0.0, 20.0, 201);
        let opts = FitOptions {
            window: Some((2.0, 8.0)),
            ..FitOptions::default()
        };
        let fit = fit_exponential_with(&env, &opts).unwrap();
        assert_eq!(fit.window, (2.0, 8.0));
        assert_eq!(fit.points, 61);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert!((quantile(&[0.0, 10.0], 0.1) - 1.0).abs() < 1e-15);
    }
}

//! Central finite differences for higher-order derivatives.

/// Binomial coefficient as `f64`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `k`-th central difference with step `h`:
/// `h^-k * sum_j (-1)^j C(k, j) f(x + (k/2 - j) h)`.
///
/// Its truncation error expands in even powers of `h`.
pub fn central_difference<F: Fn(f64) -> f64>(f: &F, x: f64, order: usize, h: f64) -> f64 {
    if order == 0 {
        return f(x);
    }
    let half = order as f64 / 2.0;
    let mut acc = 0.0;
    for j in 0..=order {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binomial(order, j) * f(x + (half - j as f64) * h);
    }
    acc / h.powi(order as i32)
}

const RIDDERS_SHRINK: f64 = 1.4;
const RIDDERS_LEVELS: usize = 10;
const RIDDERS_STARTS: [f64; 3] = [0.5, 0.05, 0.005];

/// `order`-th derivative by Ridders' extrapolation of central differences.
///
/// Extrapolates towards `h -> 0` in powers of `h^2` from starting steps
/// `{0.5, 0.05, 0.005} * max(1, |x|)`, each run stopping once rounding noise
/// makes the tableau diverge. Returns the estimate with the smallest error
/// estimate, and that estimate.
pub fn ridders<F: Fn(f64) -> f64>(f: &F, x: f64, order: usize) -> (f64, f64) {
    if order == 0 {
        return (f(x), 0.0);
    }
    // flat regions need a finer start than the coarse default
    let scale = x.abs().max(1.0);
    RIDDERS_STARTS
        .iter()
        .map(|&s| ridders_from(f, x, order, s * scale))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

fn ridders_from<F: Fn(f64) -> f64>(f: &F, x: f64, order: usize, h0: f64) -> (f64, f64) {
    let con2 = RIDDERS_SHRINK * RIDDERS_SHRINK;
    let mut h = h0;
    let mut prev: Vec<f64> = vec![central_difference(f, x, order, h)];
    let mut best = prev[0];
    let mut err = f64::INFINITY;
    for i in 1..RIDDERS_LEVELS {
        h /= RIDDERS_SHRINK;
        let mut row = Vec::with_capacity(i + 1);
        row.push(central_difference(f, x, order, h));
        let mut fac = con2;
        for j in 1..=i {
            let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= con2;
            let e = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = v;
            }
            row.push(v);
        }
        if (row[i] - prev[i - 1]).abs() >= 2.0 * err {
            break;
        }
        prev = row;
    }
    (best, err)
}

/// Convenience wrapper returning only the Ridders estimate.
pub fn derivative<F: Fn(f64) -> f64>(f: &F, x: f64, order: usize) -> f64 {
    ridders(f, x, order).0
}

/// Step for the `depth`-th nested central first difference (1 = innermost).
///
/// Each level differentiates a value that already carries the noise of the
/// levels inside it, so the step widens as `eps^((2/3)^(depth-1) / 3)`.
pub fn nested_step(depth: usize, x: f64) -> f64 {
    let exponent = (2.0f64 / 3.0).powi(depth.saturating_sub(1) as i32) / 3.0;
    f64::EPSILON.powf(exponent) * x.abs().max(1.0)
}

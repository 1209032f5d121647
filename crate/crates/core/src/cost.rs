//! Cost functions, generating vector fields and numeric assumption checks.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fd;

/// Scalar power cost `(x - x*)^m`, optionally divided by `m!`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCost {
    pub m: u32,
    pub x_star: f64,
    #[serde(default = "default_true")]
    pub normalized: bool,
}

fn default_true() -> bool {
    true
}

impl PowerCost {
    pub fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// Exact `J^(k)(x)`.
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        let m = self.m as usize;
        if k > m {
            return 0.0;
        }
        let u = x - self.x_star;
        let falling: f64 = ((m - k + 1)..=m).map(|i| i as f64).product();
        let scale = if self.normalized {
            falling / factorial(m)
        } else {
            falling
        };
        scale * u.powi((m - k) as i32)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Falling factorial derivative of `u^4`: `d^k/du^k u^4`.
fn quartic_derivative(k: usize, u: f64) -> f64 {
    match k {
        0 => u.powi(4),
        1 => 4.0 * u.powi(3),
        2 => 12.0 * u * u,
        3 => 24.0 * u,
        4 => 24.0,
        _ => 0.0,
    }
}

pub type CostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// User-supplied cost differentiated by finite differences.
#[derive(Clone)]
pub struct CustomCost {
    pub dimension: usize,
    pub f: CostFn,
    pub x_star: Vec<f64>,
    pub j_star: f64,
    /// Highest derivative order the function is declared smooth to.
    pub smoothness: usize,
}

impl fmt::Debug for CustomCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCost")
            .field("dimension", &self.dimension)
            .field("x_star", &self.x_star)
            .field("j_star", &self.j_star)
            .field("smoothness", &self.smoothness)
            .finish_non_exhaustive()
    }
}

/// An evaluatable cost with exact pure partial derivatives for the built-in
/// polynomials and a finite-difference fallback for custom functions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    /// `J(x) = (x - x*)^m [/ m!]`.
    Power(PowerCost),
    /// `J(x) = (x1 - 1)^4 + (x1 - x2)^4`.
    Quartic2d,
    /// `J(x) = sum_i J_i(x_i)` with power terms.
    Separable { terms: Vec<PowerCost> },
    #[serde(skip)]
    Custom(CustomCost),
}

impl PartialEq for CostModel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (CostModel::Power(a), CostModel::Power(b)) => a == b,
            (CostModel::Quartic2d, CostModel::Quartic2d) => true,
            (CostModel::Separable { terms: a }, CostModel::Separable { terms: b }) => a == b,
            (CostModel::Custom(a), CostModel::Custom(b)) => Arc::ptr_eq(&a.f, &b.f),
            _ => false,
        }
    }
}

/// `J_m(x) = (x - x*)^m / m!`.
pub fn make_power_cost(m: u32, x_star: f64) -> Result<CostModel> {
    make_power_cost_with(m, x_star, true)
}

/// Power cost with an explicit normalization flag; `normalized = false`
/// gives `(x - x*)^m`.
pub fn make_power_cost_with(m: u32, x_star: f64, normalized: bool) -> Result<CostModel> {
    if m < 2 {
        return Err(invalid("power cost needs m >= 2"));
    }
    Ok(CostModel::Power(PowerCost {
        m,
        x_star,
        normalized,
    }))
}

pub fn make_quartic_2d() -> CostModel {
    CostModel::Quartic2d
}

impl CostModel {
    pub fn dimension(&self) -> usize {
        match self {
            CostModel::Power(_) => 1,
            CostModel::Quartic2d => 2,
            CostModel::Separable { terms } => terms.len(),
            CostModel::Custom(c) => c.dimension,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CostModel::Power(p) if p.normalized => format!("(x-{})^{}/{}!", p.x_star, p.m, p.m),
            CostModel::Power(p) => format!("(x-{})^{}", p.x_star, p.m),
            CostModel::Quartic2d => "(x1-1)^4+(x1-x2)^4".to_string(),
            CostModel::Separable { terms } => format!("separable[{}]", terms.len()),
            CostModel::Custom(_) => "custom".to_string(),
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            CostModel::Power(p) => p.value(x[0]),
            CostModel::Quartic2d => {
                let a = x[0] - 1.0;
                let b = x[0] - x[1];
                a * a * a * a + b * b * b * b
            }
            CostModel::Separable { terms } => terms.iter().zip(x).map(|(t, &xi)| t.value(xi)).sum(),
            CostModel::Custom(c) => (c.f)(x),
        }
    }

    /// Pure partial derivative `d^k J / dx_i^k` at `x`.
    pub fn partial(&self, i: usize, k: usize, x: &[f64]) -> f64 {
        if k == 0 {
            return self.value(x);
        }
        match self {
            CostModel::Power(p) => p.derivative(k, x[0]),
            CostModel::Quartic2d => {
                let a = x[0] - 1.0;
                let b = x[0] - x[1];
                if i == 0 {
                    quartic_derivative(k, a) + quartic_derivative(k, b)
                } else {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * quartic_derivative(k, b)
                }
            }
            CostModel::Separable { terms } => terms[i].derivative(k, x[i]),
            CostModel::Custom(_) => self.partial_fd(i, k, x),
        }
    }

    /// Finite-difference estimate of `d^k J / dx_i^k`, available for every model.
    pub fn partial_fd(&self, i: usize, k: usize, x: &[f64]) -> f64 {
        let mut probe = x.to_vec();
        let line = |s: f64| {
            let mut p = probe.clone();
            p[i] = s;
            self.value(&p)
        };
        let d = fd::derivative(&line, x[i], k);
        probe[i] = x[i];
        d
    }

    /// Scalar derivative for one-dimensional models.
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        self.partial(0, k, &[x])
    }

    pub fn minimizer(&self) -> Vec<f64> {
        match self {
            CostModel::Power(p) => vec![p.x_star],
            CostModel::Quartic2d => vec![1.0, 1.0],
            CostModel::Separable { terms } => terms.iter().map(|t| t.x_star).collect(),
            CostModel::Custom(c) => c.x_star.clone(),
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            CostModel::Custom(c) => c.j_star,
            _ => 0.0,
        }
    }

    /// Highest usable derivative order; `None` when exact derivatives of
    /// every order are available.
    pub fn smoothness(&self) -> Option<usize> {
        match self {
            CostModel::Custom(c) => Some(c.smoothness),
            _ => None,
        }
    }
}

pub type FieldClosure = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar generating function `g: R -> R` applied to the cost value.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldFn {
    /// `g(z) = constant + slope * z`.
    Affine { constant: f64, slope: f64 },
    #[serde(skip)]
    Custom(FieldClosure),
}

impl fmt::Debug for FieldFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldFn::Affine { constant, slope } => write!(f, "Affine({constant} + {slope} z)"),
            FieldFn::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for FieldFn {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                FieldFn::Affine {
                    constant: a,
                    slope: b,
                },
                FieldFn::Affine {
                    constant: c,
                    slope: d,
                },
            ) => a == c && b == d,
            (FieldFn::Custom(a), FieldFn::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl FieldFn {
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            FieldFn::Affine { constant, slope } => constant + slope * z,
            FieldFn::Custom(g) => g(z),
        }
    }

    pub fn as_affine(&self) -> Option<(f64, f64)> {
        match self {
            FieldFn::Affine { constant, slope } => Some((*constant, *slope)),
            FieldFn::Custom(_) => None,
        }
    }
}

/// The two generating functions and the gain `sigma` of
/// `ad_{g1}^N g2 (J) = -sigma J^(N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldPair {
    pub g1: FieldFn,
    pub g2: FieldFn,
    pub sigma: f64,
}

/// `g1(z) = 1`, `g2(z) = -sigma z`.
pub fn default_pair(sigma: f64) -> Result<VectorFieldPair> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma must be positive"));
    }
    Ok(VectorFieldPair {
        g1: FieldFn::Affine {
            constant: 1.0,
            slope: 0.0,
        },
        g2: FieldFn::Affine {
            constant: 0.0,
            slope: -sigma,
        },
        sigma,
    })
}

/// `g1(z) = z`, `g2(z) = 1`: the classic first-order gradient law, whose
/// bracket `[J, 1] = -J'`.
pub fn gradient_pair() -> VectorFieldPair {
    VectorFieldPair {
        g1: FieldFn::Affine {
            constant: 0.0,
            slope: 1.0,
        },
        g2: FieldFn::Affine {
            constant: 1.0,
            slope: 0.0,
        },
        sigma: 1.0,
    }
}

impl VectorFieldPair {
    pub fn is_affine(&self) -> bool {
        self.g1.as_affine().is_some() && self.g2.as_affine().is_some()
    }

    pub fn swapped(&self) -> VectorFieldPair {
        VectorFieldPair {
            g1: self.g2.clone(),
            g2: self.g1.clone(),
            sigma: self.sigma,
        }
    }
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("box bounds must have equal, non-zero length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) {
            return Err(invalid("box has zero volume"));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn cube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn strictly_contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l < v && v < u)
    }
}

/// Sampled constants of the polynomial-like growth assumptions.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub m: u32,
    pub domain: BoxDomain,
    pub grid: usize,
    pub samples: usize,
    /// min (J - J*) / |x - x*|^m
    pub alpha1: f64,
    /// max (J - J*) / |x - x*|^m
    pub alpha2: f64,
    /// min sum_i d^{m-1}J/dx_i^{m-1} (x_i - x_i*) / |x - x*|^2
    pub beta1: f64,
    /// max sum_i |d^{m-1}J/dx_i^{m-1}| / |x - x*|
    pub beta2: f64,
    /// Points where `J <= J*` or the beta1 numerator is `<= 0`.
    pub violations: Vec<Vec<f64>>,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    /// Human-readable one-paragraph summary.
    pub fn summary(&self) -> String {
        format!(
            "m = {}, {} samples on a {}^{} grid over {:?}..{:?}\n\
             alpha1 = {:.6}, alpha2 = {:.6}, beta1 = {:.6}, beta2 = {:.6}, violations = {}",
            self.m,
            self.samples,
            self.grid,
            self.domain.dimension(),
            self.domain.lower,
            self.domain.upper,
            self.alpha1,
            self.alpha2,
            self.beta1,
            self.beta2,
            self.violations.len()
        )
    }
}

/// Visits every point of a uniform `grid^n` lattice over the box.
fn for_each_grid_point(domain: &BoxDomain, grid: usize, mut visit: impl FnMut(&[f64])) {
    let n = domain.dimension();
    let mut index = vec![0usize; n];
    let mut point = vec![0.0; n];
    loop {
        for d in 0..n {
            let (l, u) = (domain.lower[d], domain.upper[d]);
            point[d] = l + (u - l) * index[d] as f64 / (grid - 1) as f64;
        }
        visit(&point);
        let mut d = 0;
        loop {
            if d == n {
                return;
            }
            index[d] += 1;
            if index[d] < grid {
                break;
            }
            index[d] = 0;
            d += 1;
        }
    }
}

/// Grid estimate of the growth constants for a degree-`m` cost.
pub fn verify_assumption(
    model: &CostModel,
    m: u32,
    domain: &BoxDomain,
    grid: usize,
) -> Result<AssumptionReport> {
    let n = model.dimension();
    if domain.dimension() != n {
        return Err(invalid("box dimension differs from the model"));
    }
    if m < 2 {
        return Err(invalid("m must be >= 2"));
    }
    if grid < 3 {
        return Err(invalid("grid needs at least 3 points per axis"));
    }
    let x_star = model.minimizer();
    if !domain.strictly_contains(&x_star) {
        return Err(invalid("minimizer must lie strictly inside the box"));
    }
    let j_star = model.min_value();
    let order = (m - 1) as usize;
    let scale = domain
        .lower
        .iter()
        .zip(&domain.upper)
        .map(|(l, u)| u - l)
        .fold(0.0, f64::max);

    let mut report = AssumptionReport {
        m,
        domain: domain.clone(),
        grid,
        samples: 0,
        alpha1: f64::INFINITY,
        alpha2: f64::NEG_INFINITY,
        beta1: f64::INFINITY,
        beta2: f64::NEG_INFINITY,
        violations: Vec::new(),
    };

    for_each_grid_point(domain, grid, |x| {
        let r2: f64 = x.iter().zip(&x_star).map(|(a, b)| (a - b) * (a - b)).sum();
        let r = r2.sqrt();
        if r <= 1e-12 * scale {
            return;
        }
        report.samples += 1;
        let excess = model.value(x) - j_star;
        let ratio = excess / r.powi(m as i32);
        report.alpha1 = report.alpha1.min(ratio);
        report.alpha2 = report.alpha2.max(ratio);

        let mut inner = 0.0;
        let mut abs_sum = 0.0;
        for i in 0..n {
            let d = model.partial(i, order, x);
            inner += d * (x[i] - x_star[i]);
            abs_sum += d.abs();
        }
        report.beta1 = report.beta1.min(inner / r2);
        report.beta2 = report.beta2.max(abs_sum / r);
        if excess <= 0.0 || inner <= 0.0 {
            report.violations.push(x.to_vec());
        }
    });
    Ok(report)
}

/// Random spot check of `J(x) > J*` for `x != x*`; returns the failing samples.
pub fn spot_check_minimum(
    model: &CostModel,
    domain: &BoxDomain,
    samples: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_star = model.minimizer();
    let j_star = model.min_value();
    let mut failures = Vec::new();
    for _ in 0..samples {
        let x: Vec<f64> = domain
            .lower
            .iter()
            .zip(&domain.upper)
            .map(|(&l, &u)| rng.gen_range(l..u))
            .collect();
        if x == x_star {
            continue;
        }
        if model.value(&x) <= j_star {
            failures.push(x);
        }
    }
    failures
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_cost_examples() {
        let j4 = make_power_cost(4, 1.0).unwrap();
        assert!((j4.derivative(3, 4.0) - 3.0).abs() < 1e-14);
        assert_eq!(j4.value(&[1.0]), 0.0);
        for k in 0..4 {
            assert_eq!(j4.derivative(k, 1.0), 0.0);
        }
        assert!((j4.derivative(4, 2.5) - 1.0).abs() < 1e-15);
        assert_eq!(j4.derivative(5, 2.5), 0.0);

        let x6 = make_power_cost_with(6, 0.0, false).unwrap();
        for &x in &[-1.3, 0.2, 2.0] {
            assert!((x6.derivative(5, x) - 720.0 * x).abs() < 1e-10);
        }
        assert!(make_power_cost(1, 0.0).is_err());
    }

    #[test]
    fn quartic_examples() {
        let q = make_quartic_2d();
        assert_eq!(q.value(&[1.0, 1.0]), 0.0);
        for i in 0..2 {
            for k in 1..=4 {
                let v = q.partial(i, k, &[1.0, 1.0]);
                if k < 4 {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert_eq!(q.value(&[0.0, 0.0]), 1.0);
        assert_eq!(q.partial(0, 3, &[2.0, 0.0]), 72.0);
        assert_eq!(q.partial(1, 3, &[2.0, 0.0]), -48.0);
        // Finite-difference cross-check of the stated partials.
        assert!((q.partial_fd(0, 3, &[2.0, 0.0]) - 72.0).abs() < 1e-6);
        assert!((q.partial_fd(1, 3, &[2.0, 0.0]) + 48.0).abs() < 1e-6);
    }

    #[test]
    fn default_pair_examples() {
        let p = default_pair(1.0).unwrap();
        assert_eq!(p.g1.eval(5.0), 1.0);
        assert_eq!(p.g2.eval(5.0), -5.0);
        let p2 = default_pair(2.0).unwrap();
        assert_eq!(p2.g2.eval(5.0), -10.0);
        assert!(default_pair(0.0).is_err());
        assert!(default_pair(-1.0).is_err());
    }

    #[test]
    fn power_assumption_constants_are_exact() {
        let j4 = make_power_cost(4, 1.0).unwrap();
        let dom = BoxDomain::new(vec![-4.0], vec![6.0]).unwrap();
        let r = verify_assumption(&j4, 4, &dom, 101).unwrap();
        assert!(r.holds());
        assert!((r.alpha1 - 1.0 / 24.0).abs() < 1e-15);
        assert!((r.alpha2 - 1.0 / 24.0).abs() < 1e-15);
        // J''' = x - 1 gives beta1 = beta2 = 1.
        assert!((r.beta1 - 1.0).abs() < 1e-12);
        assert!((r.beta2 - 1.0).abs() < 1e-12);
        assert_eq!(r.samples, 100);
    }

    #[test]
    fn quartic_assumption_constants() {
        let q = make_quartic_2d();
        let dom = BoxDomain::cube(2, -1.0, 3.0).unwrap();
        let r = verify_assumption(&q, 4, &dom, 41).unwrap();
        assert!(r.holds());
        assert!(r.beta1 >= 8.0);
        assert!(r.alpha2 <= 5.0);
        // Grid extremes from an independent numpy evaluation.
        let close = |a: f64, b: f64| ((a - b) / b).abs() < 1e-9;
        assert!(close(r.alpha1, 0.077788819578310), "{}", r.alpha1);
        assert!(close(r.alpha2, 4.28561029658069), "{}", r.alpha2);
        assert!(close(r.beta1, 9.167381974248926), "{}", r.beta1);
        assert!(close(r.beta2, 86.53323061113575), "{}", r.beta2);
        assert_eq!(r.samples, 41 * 41 - 1);
    }

    #[test]
    fn assumption_rejects_bad_domains() {
        let j4 = make_power_cost(4, 1.0).unwrap();
        assert!(BoxDomain::new(vec![1.0], vec![1.0]).is_err());
        let off = BoxDomain::new(vec![2.0], vec![3.0]).unwrap();
        assert!(verify_assumption(&j4, 4, &off, 11).is_err());
        let ok = BoxDomain::new(vec![0.0], vec![3.0]).unwrap();
        assert!(verify_assumption(&j4, 4, &ok, 2).is_err());
    }

    #[test]
    fn assumption_flags_wrong_degree() {
        // J = x^4/24 paired with m = 3 has J'' = x^2 / 2, so the beta1
        // numerator x^3/2 is negative left of the minimizer.
        let j4 = make_power_cost(4, 0.0).unwrap();
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let r = verify_assumption(&j4, 3, &dom, 11).unwrap();
        assert!(!r.holds());
        assert!(r.violations.iter().all(|p| p[0] < 0.0));
    }

    #[test]
    fn custom_cost_uses_finite_differences() {
        let c = CostModel::Custom(CustomCost {
            dimension: 1,
            f: Arc::new(|x: &[f64]| (x[0] - 0.5).powi(2) + (x[0] - 0.5).powi(4)),
            x_star: vec![0.5],
            j_star: 0.0,
            smoothness: 4,
        });
        assert!((c.derivative(1, 1.5) - 6.0).abs() < 1e-7);
        assert!((c.derivative(2, 1.5) - 14.0).abs() < 1e-6);
        assert_eq!(c.smoothness(), Some(4));
        let dom = BoxDomain::new(vec![-2.0], vec![2.0]).unwrap();
        assert!(spot_check_minimum(&c, &dom, 200, 7).is_empty());
    }

    #[test]
    fn spot_check_is_seeded() {
        let q = make_quartic_2d();
        let dom = BoxDomain::cube(2, -1.0, 3.0).unwrap();
        assert!(spot_check_minimum(&q, &dom, 500, 42).is_empty());
        // A "cost" with a wrong declared minimum value is caught.
        let bad = CostModel::Custom(CustomCost {
            dimension: 1,
            f: Arc::new(|x: &[f64]| x[0] * x[0]),
            x_star: vec![0.0],
            j_star: 0.5,
            smoothness: 4,
        });
        let d1 = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let a = spot_check_minimum(&bad, &d1, 100, 3);
        let b = spot_check_minimum(&bad, &d1, 100, 3);
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }
}

//! Iterated Lie derivatives of the scalar composed fields `G_i = g_i o J`.
//!
//! In one dimension a vector field is a scalar function, the Lie derivative
//! is `L_A h = A h'` and the bracket is `[f, g] = g' f - f' g`.
//!
//! Affine generating functions `g(z) = a + b z` are handled exactly with
//! truncated Taylor jets built from the cost's exact derivatives. Any other
//! pair falls back to nested central differences, which is only trusted for
//! words of length `<= 4` (brackets of order `N <= 3`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, FieldFn, VectorFieldPair};
use crate::error::{invalid, Error, Result};
use crate::fd::{self, binomial};

/// Longest word the finite-difference path accepts.
pub const GENERIC_MAX_WORD: usize = 4;

/// Channel sequence `(k_1, .., k_{l+1})` standing for
/// `L_{G_{k_{l+1}}} .. L_{G_{k_2}} G_{k_1}`. Entries are 1 or 2.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LieWord(Vec<u8>);

impl LieWord {
    pub fn new(channels: Vec<u8>) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid("a word needs at least one channel"));
        }
        if channels.iter().any(|&c| c != 1 && c != 2) {
            return Err(invalid("word channels must be 1 or 2"));
        }
        Ok(LieWord(channels))
    }

    /// The word with channel 2 at 0-based position `k` of `N + 1` slots:
    /// `k = 0` gives `L_{G1}^N G2`, `k >= 1` gives
    /// `L_{G1}^{N-k} L_{G2} L_{G1}^{k-1} G1`.
    pub fn binomial_term(order: usize, k: usize) -> Self {
        let mut w = vec![1u8; order + 1];
        w[k] = 2;
        LieWord(w)
    }

    pub fn channels(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for LieWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

/// Truncated Taylor jet: entry `i` is the `i`-th derivative at the base point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet(pub Vec<f64>);

impl Jet {
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    pub fn derivative(&self) -> Jet {
        Jet(self.0[1..].to_vec())
    }

    /// Leibniz product truncated to the shorter jet.
    pub fn mul(&self, other: &Jet) -> Jet {
        let n = self.0.len().min(other.0.len());
        let mut out = vec![0.0; n];
        for (d, slot) in out.iter_mut().enumerate() {
            *slot = (0..=d)
                .map(|i| binomial(d, i) * self.0[i] * other.0[d - i])
                .sum();
        }
        Jet(out)
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        let n = self.0.len().min(other.0.len());
        Jet((0..n).map(|i| self.0[i] - other.0[i]).collect())
    }

    fn truncate(mut self, len: usize) -> Jet {
        self.0.truncate(len);
        self
    }
}

/// Scalar Lie bracket of two jets: `g' f - f' g`.
pub fn jet_bracket(f: &Jet, g: &Jet) -> Jet {
    g.derivative().mul(f).sub(&f.derivative().mul(g))
}

/// Jet of `t -> J(x + t e_i)` at `t = 0`, orders `0..=order`.
fn cost_jet(model: &CostModel, coord: usize, x: &[f64], order: usize) -> Jet {
    Jet((0..=order).map(|k| model.partial(coord, k, x)).collect())
}

/// Jet of `g o J` for affine `g`.
fn affine_jet(g: (f64, f64), j: &Jet) -> Jet {
    let (a, b) = g;
    let mut out: Vec<f64> = j.0.iter().map(|v| b * v).collect();
    out[0] += a;
    Jet(out)
}

fn check_smoothness(model: &CostModel, required: usize) -> Result<()> {
    match model.smoothness() {
        Some(available) if available < required => Err(Error::InsufficientSmoothness {
            required,
            available,
        }),
        _ => Ok(()),
    }
}

fn check_point(model: &CostModel, coord: usize, x: &[f64]) -> Result<()> {
    if x.len() != model.dimension() {
        return Err(invalid("point dimension differs from the model"));
    }
    if coord >= x.len() {
        return Err(invalid("coordinate index out of range"));
    }
    Ok(())
}

fn field(pair: &VectorFieldPair, channel: u8) -> &FieldFn {
    if channel == 1 {
        &pair.g1
    } else {
        &pair.g2
    }
}

/// Value of the iterated Lie derivative `word` of the composed fields at the
/// scalar point `x` (one-dimensional models).
pub fn lie_derivative_word(
    word: &LieWord,
    pair: &VectorFieldPair,
    model: &CostModel,
    x: f64,
) -> Result<f64> {
    lie_derivative_word_partial(word, pair, model, 0, &[x])
}

/// Same as [`lie_derivative_word`], differentiating along coordinate `coord`
/// of an `n`-dimensional model.
pub fn lie_derivative_word_partial(
    word: &LieWord,
    pair: &VectorFieldPair,
    model: &CostModel,
    coord: usize,
    x: &[f64],
) -> Result<f64> {
    check_point(model, coord, x)?;
    check_smoothness(model, word.len())?;
    let ch = word.channels();
    let depth = ch.len() - 1;

    if let (Some(a1), Some(a2)) = (pair.g1.as_affine(), pair.g2.as_affine()) {
        let j = cost_jet(model, coord, x, depth);
        let jets = [affine_jet(a1, &j), affine_jet(a2, &j)];
        let mut h = jets[usize::from(ch[0] - 1)].clone();
        for &c in &ch[1..] {
            h = h.derivative().mul(&jets[usize::from(c - 1)]);
        }
        return Ok(h.value());
    }

    if word.len() > GENERIC_MAX_WORD {
        return Err(Error::Unsupported(format!(
            "words longer than {GENERIC_MAX_WORD} need an affine pair"
        )));
    }
    let line = line_fn(model, coord, x);
    Ok(nested_word(ch, pair, &line, x[coord]))
}

fn line_fn<'a>(model: &'a CostModel, coord: usize, x: &'a [f64]) -> impl Fn(f64) -> f64 + 'a {
    move |s: f64| {
        let mut p = x.to_vec();
        p[coord] = s;
        model.value(&p)
    }
}

/// `h_0 = G_{k_1}`, `h_j = G_{k_{j+1}} h_{j-1}'` with central first
/// differences whose step widens with the nesting depth.
fn nested_word(ch: &[u8], pair: &VectorFieldPair, line: &dyn Fn(f64) -> f64, y: f64) -> f64 {
    let last = ch.len() - 1;
    let g = field(pair, ch[last]);
    if last == 0 {
        return g.eval(line(y));
    }
    let s = fd::nested_step(last, y);
    let inner = &ch[..last];
    let d =
        (nested_word(inner, pair, line, y + s) - nested_word(inner, pair, line, y - s)) / (2.0 * s);
    g.eval(line(y)) * d
}

/// `ad_{G1}^N G2` at `x` by the alternating binomial sum
/// `sum_k (-1)^k C(N, k) W_k` over [`LieWord::binomial_term`].
pub fn ad_bracket(order: usize, pair: &VectorFieldPair, model: &CostModel, x: f64) -> Result<f64> {
    ad_bracket_partial(order, pair, model, 0, &[x])
}

pub fn ad_bracket_partial(
    order: usize,
    pair: &VectorFieldPair,
    model: &CostModel,
    coord: usize,
    x: &[f64],
) -> Result<f64> {
    if order == 0 {
        return Err(invalid("bracket order must be >= 1"));
    }
    let mut sum = 0.0;
    for k in 0..=order {
        let w = LieWord::binomial_term(order, k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binomial(order, k) * lie_derivative_word_partial(&w, pair, model, coord, x)?;
    }
    Ok(sum)
}

/// `ad_{G1}^N G2` by expanding `[G1, ad^{j-1}]` one level at a time.
pub fn ad_bracket_recursive(
    order: usize,
    pair: &VectorFieldPair,
    model: &CostModel,
    x: f64,
) -> Result<f64> {
    ad_bracket_recursive_partial(order, pair, model, 0, &[x])
}

pub fn ad_bracket_recursive_partial(
    order: usize,
    pair: &VectorFieldPair,
    model: &CostModel,
    coord: usize,
    x: &[f64],
) -> Result<f64> {
    if order == 0 {
        return Err(invalid("bracket order must be >= 1"));
    }
    check_point(model, coord, x)?;
    check_smoothness(model, order + 1)?;

    if let (Some(a1), Some(a2)) = (pair.g1.as_affine(), pair.g2.as_affine()) {
        let j = cost_jet(model, coord, x, order);
        let g1 = affine_jet(a1, &j);
        let mut ad = affine_jet(a2, &j);
        for level in 1..=order {
            ad = jet_bracket(&g1, &ad).truncate(order + 1 - level);
        }
        return Ok(ad.value());
    }

    if order + 1 > GENERIC_MAX_WORD {
        return Err(Error::Unsupported(format!(
            "generic pairs support brackets of order <= {}",
            GENERIC_MAX_WORD - 1
        )));
    }
    let line = line_fn(model, coord, x);
    Ok(nested_ad(order, pair, &line, x[coord]))
}

fn nested_ad(level: usize, pair: &VectorFieldPair, line: &dyn Fn(f64) -> f64, y: f64) -> f64 {
    if level == 0 {
        return pair.g2.eval(line(y));
    }
    let s = fd::nested_step(level, y);
    let d_ad = (nested_ad(level - 1, pair, line, y + s) - nested_ad(level - 1, pair, line, y - s))
        / (2.0 * s);
    let g1 = |t: f64| pair.g1.eval(line(t));
    let d_g1 = (g1(y + s) - g1(y - s)) / (2.0 * s);
    d_ad * g1(y) - d_g1 * nested_ad(level - 1, pair, line, y)
}

/// First bracket `[G1, G2] = G2' G1 - G1' G2` at `x`.
pub fn first_bracket(pair: &VectorFieldPair, model: &CostModel, x: f64) -> Result<f64> {
    ad_bracket_recursive(1, pair, model, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{default_pair, gradient_pair, make_power_cost, make_power_cost_with};
    use std::sync::Arc;

    fn word(ch: &[u8]) -> LieWord {
        LieWord::new(ch.to_vec()).unwrap()
    }

    #[test]
    fn word_examples() {
        let pair = default_pair(1.0).unwrap();
        let j4 = make_power_cost(4, 1.0).unwrap();
        let v = lie_derivative_word(&word(&[2, 1]), &pair, &j4, 4.0).unwrap();
        assert!((v + 4.5).abs() < 1e-14);
        assert_eq!(
            lie_derivative_word(&word(&[1, 2]), &pair, &j4, 4.0).unwrap(),
            0.0
        );
        for &x in &[-2.0, 0.5, 4.0] {
            let v = lie_derivative_word(&word(&[2, 1, 1, 1]), &pair, &j4, x).unwrap();
            assert!((v + (x - 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn ad_examples() {
        let pair = default_pair(1.0).unwrap();
        let j4 = make_power_cost(4, 1.0).unwrap();
        assert!((ad_bracket(3, &pair, &j4, 4.0).unwrap() + 3.0).abs() < 1e-13);
        let p2 = default_pair(2.0).unwrap();
        assert!((ad_bracket(3, &p2, &j4, 4.0).unwrap() + 6.0).abs() < 1e-12);
        for &x in &[-1.0, 0.3, 2.2] {
            let v = ad_bracket(1, &pair, &j4, x).unwrap();
            assert!((v + j4.derivative(1, x)).abs() < 1e-14);
        }
        let x6 = make_power_cost_with(6, 0.0, false).unwrap();
        assert!((ad_bracket(2, &pair, &x6, 1.0).unwrap() + 30.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_pair_first_bracket_is_minus_gradient() {
        let j4 = make_power_cost(4, 1.0).unwrap();
        let pair = gradient_pair();
        let v = ad_bracket(1, &pair, &j4, 4.0).unwrap();
        assert!((v + 4.5).abs() < 1e-13);
        assert!((first_bracket(&pair, &j4, 4.0).unwrap() - v).abs() < 1e-13);
    }

    #[test]
    fn binomial_sum_matches_recursion_on_nonlinear_cost() {
        // g1 = 1 + z/2, g2 = 2 - z exercises every Leibniz term.
        let pair = VectorFieldPair {
            g1: FieldFn::Affine {
                constant: 1.0,
                slope: 0.5,
            },
            g2: FieldFn::Affine {
                constant: 2.0,
                slope: -1.0,
            },
            sigma: 1.0,
        };
        let j6 = make_power_cost(6, -0.5).unwrap();
        for n in 1..=5 {
            for &x in &[-2.0, 0.1, 1.7] {
                let a = ad_bracket(n, &pair, &j6, x).unwrap();
                let b = ad_bracket_recursive(n, &pair, &j6, x).unwrap();
                assert!(
                    (a - b).abs() <= 1e-10 * (1.0 + b.abs()),
                    "N = {n}, x = {x}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn generic_pair_agrees_with_jets() {
        let affine = VectorFieldPair {
            g1: FieldFn::Affine {
                constant: 1.0,
                slope: 0.5,
            },
            g2: FieldFn::Affine {
                constant: 2.0,
                slope: -1.0,
            },
            sigma: 1.0,
        };
        let generic = VectorFieldPair {
            g1: FieldFn::Custom(Arc::new(|z| 1.0 + 0.5 * z)),
            g2: FieldFn::Custom(Arc::new(|z| 2.0 - z)),
            sigma: 1.0,
        };
        let j4 = make_power_cost(4, 1.0).unwrap();
        let x = 1.8;
        for n in 1..=3 {
            let exact = ad_bracket(n, &affine, &j4, x).unwrap();
            let a = ad_bracket(n, &generic, &j4, x).unwrap();
            let b = ad_bracket_recursive(n, &generic, &j4, x).unwrap();
            let tol = 1e-3 * (1.0 + exact.abs());
            assert!((a - exact).abs() < tol, "N = {n}: {a} vs {exact}");
            assert!((b - exact).abs() < tol, "N = {n}: {b} vs {exact}");
        }
        assert!(matches!(
            ad_bracket(4, &generic, &j4, x),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn antisymmetry() {
        let pair = default_pair(1.5).unwrap();
        let j4 = make_power_cost(4, 1.0).unwrap();
        for &x in &[-3.0, 0.0, 2.5] {
            let a = first_bracket(&pair, &j4, x).unwrap();
            let b = first_bracket(&pair.swapped(), &j4, x).unwrap();
            assert!((a + b).abs() < 1e-13);
        }
    }

    #[test]
    fn smoothness_is_enforced() {
        let c = CostModel::Custom(crate::cost::CustomCost {
            dimension: 1,
            f: Arc::new(|x: &[f64]| x[0].powi(4)),
            x_star: vec![0.0],
            j_star: 0.0,
            smoothness: 3,
        });
        let pair = default_pair(1.0).unwrap();
        assert!(ad_bracket(2, &pair, &c, 1.0).is_ok());
        match ad_bracket(3, &pair, &c, 1.0) {
            Err(Error::InsufficientSmoothness {
                required,
                available,
            }) => {
                assert_eq!((required, available), (4, 3));
            }
            other => panic!("expected smoothness error, got {other:?}"),
        }
    }

    #[test]
    fn partial_bracket_on_quartic() {
        let q = crate::cost::make_quartic_2d();
        let pair = default_pair(1.0).unwrap();
        let x = [2.0, 0.0];
        assert!((ad_bracket_partial(3, &pair, &q, 0, &x).unwrap() + 72.0).abs() < 1e-12);
        assert!((ad_bracket_partial(3, &pair, &q, 1, &x).unwrap() - 48.0).abs() < 1e-12);
    }

    #[test]
    fn word_rejects_bad_channels() {
        assert!(LieWord::new(vec![]).is_err());
        assert!(LieWord::new(vec![1, 3]).is_err());
        assert_eq!(LieWord::binomial_term(3, 0).channels(), &[2, 1, 1, 1]);
        assert_eq!(LieWord::binomial_term(3, 2).channels(), &[1, 1, 2, 1]);
        assert_eq!(word(&[2, 1]).to_string(), "(2,1)");
    }
}

//! Product correlation kernel over quantitative, branch and nested inputs.
//!
//! `k(x, x') = k_quant(w, w') · k_branch(z, z') · k_nested(v, v')` where the
//! quantitative factor is a product of one-dimensional Matérn correlations, the
//! branch factor penalizes each differing branch by `exp(-γ_k)`, and the
//! nested factor only compares nested values when both points sit on the same
//! level of the parent branch. Nested parameters `φ` are per nested variable,
//! which identifies the `(branch, level, index)` triple uniquely.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::space::SearchSpace;

/// Smoothness of the quantitative Matérn factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[default]
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternNu {
    /// Matérn correlation profile at scaled distance `r ≥ 0`.
    #[inline]
    pub fn profile<T: Scalar>(self, r: T) -> T {
        match self {
            MaternNu::Half => (-r).exp(),
            MaternNu::ThreeHalves => {
                let s = T::of(3f64.sqrt()) * r;
                (T::one() + s) * (-s).exp()
            }
            MaternNu::FiveHalves => {
                let s = T::of(5f64.sqrt()) * r;
                (T::one() + s + s * s / T::of(3.0)) * (-s).exp()
            }
        }
    }
}

/// Correlation hyperparameters. `theta` has one entry per shared
/// quantitative variable, `gamma` one per branch variable and `phi` one per
/// nested variable (in declaration order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KernelParams<T: Scalar> {
    pub theta: Vec<T>,
    pub gamma: Vec<T>,
    pub phi: Vec<T>,
    #[serde(default)]
    pub nu: MaternNu,
}

impl<T: Scalar> KernelParams<T> {
    /// All-equal parameters sized for `space`.
    pub fn uniform(space: &SearchSpace, theta: T, gamma: T, phi: T, nu: MaternNu) -> Self {
        Self {
            theta: vec![theta; space.quant().len()],
            gamma: vec![gamma; space.branch().len()],
            phi: vec![phi; space.nested().len()],
            nu,
        }
    }
}

/// Model-scale value of one nested variable inside an [`EncodedPoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NestedCoord<T> {
    Inactive,
    Real(T),
    Level(usize),
}

/// A configuration in model coordinates: shared quantitative values on the
/// unit interval, branch level indices, and per-nested-variable coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPoint<T> {
    pub quant: Vec<T>,
    pub combo: usize,
    pub branch: Vec<usize>,
    pub nested: Vec<NestedCoord<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("dimension mismatch: {left} vs {right}")]
pub struct DimensionMismatch {
    pub left: usize,
    pub right: usize,
}

/// `Π_i M_ν(θ_i |w_i − w'_i|)`, a product of one-dimensional Matérn
/// correlations. For `ν = 1/2` this is `exp(−Σ θ_i |w_i − w'_i|)`.
///
/// The Matérn profile of the summed ℓ1 distance is only positive definite
/// for `ν = 1/2` once there are two or more dimensions; the product form is
/// valid for every `ν`.
pub fn k_quant<T: Scalar>(w: &[T], w2: &[T], theta: &[T], nu: MaternNu) -> Result<T, DimensionMismatch> {
    if w.len() != w2.len() || w.len() != theta.len() {
        return Err(DimensionMismatch {
            left: w.len(),
            right: if w.len() != w2.len() { w2.len() } else { theta.len() },
        });
    }
    Ok(w.iter()
        .zip(w2)
        .zip(theta)
        .map(|((&a, &b), &t)| nu.profile(t * (a - b).abs()))
        .fold(T::one(), |acc, f| acc * f))
}

/// `Π_k exp(−γ_k · 1{z_k ≠ z'_k})`.
pub fn k_branch<T: Scalar>(z: &[usize], z2: &[usize], gamma: &[T]) -> T {
    debug_assert_eq!(z.len(), z2.len());
    let s: T = z
        .iter()
        .zip(z2)
        .zip(gamma)
        .filter(|((a, b), _)| a != b)
        .map(|(_, &g)| g)
        .sum();
    (-s).exp()
}

/// Nested factor: a nested variable contributes `φ_j · d(v_j, v'_j)` only
/// when it is active in both points, i.e. both points share the enabling
/// level of its parent branch.
pub fn k_nested<T: Scalar>(v: &[NestedCoord<T>], v2: &[NestedCoord<T>], phi: &[T]) -> T {
    debug_assert_eq!(v.len(), v2.len());
    let mut s = T::zero();
    for ((a, b), &p) in v.iter().zip(v2).zip(phi) {
        match (a, b) {
            (NestedCoord::Real(x), NestedCoord::Real(y)) => s += p * (*x - *y).abs(),
            (NestedCoord::Level(x), NestedCoord::Level(y)) if x != y => s += p,
            _ => {}
        }
    }
    (-s).exp()
}

/// Full product kernel. Panics if the points were encoded for different spaces.
pub fn k_full<T: Scalar>(x: &EncodedPoint<T>, x2: &EncodedPoint<T>, params: &KernelParams<T>) -> T {
    let q = k_quant(&x.quant, &x2.quant, &params.theta, params.nu)
        .expect("points and parameters share the quantitative dimension");
    q * k_branch(&x.branch, &x2.branch, &params.gamma) * k_nested(&x.nested, &x2.nested, &params.phi)
}

/// `K[i][j] = k_full(x_i, x_j) + nugget · 1{i = j}`.
pub fn gram_matrix<T: Scalar>(points: &[EncodedPoint<T>], params: &KernelParams<T>, nugget: T) -> Matrix<T> {
    let n = points.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.set(i, i, T::one() + nugget);
        for j in 0..i {
            let k = k_full(&points[i], &points[j], params);
            m.set(i, j, k);
            m.set(j, i, k);
        }
    }
    m
}

/// Correlations between `x` and each of `points`.
pub fn cross_correlations<T: Scalar>(
    x: &EncodedPoint<T>,
    points: &[EncodedPoint<T>],
    params: &KernelParams<T>,
) -> Vec<T> {
    points.iter().map(|p| k_full(x, p, params)).collect()
}

/// One failed validity condition.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidityViolation {
    /// Parameter vector has the wrong length for the space.
    Shape {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    /// Entry not strictly positive and finite.
    NonPositive {
        field: &'static str,
        index: usize,
        value: f64,
    },
    /// The within-level average correlation of branch `branch` at level
    /// `level` drops below the between-level correlation `exp(-γ_k)`;
    /// reported for nested variable `nested`.
    Bound {
        branch: usize,
        nested: usize,
        level: usize,
        within: f64,
        between: f64,
    },
}

/// Relative slack for the bound comparison, so parameters placed exactly on
/// the boundary by the fitter are not rejected over one ulp.
const BOUND_SLACK: f64 = 1e-12;

/// Smallest within-level correlation factor a nested variable can produce
/// with parameter `phi`: the level-averaged value `e^{-φ} + (1 − e^{-φ})/g`
/// for a qualitative variable with `g` levels, and `e^{-φ}` (maximal unit
/// distance) for a quantitative one.
pub fn nested_factor(phi: f64, levels: Option<usize>) -> f64 {
    let e = (-phi).exp();
    match levels {
        Some(g) => e + (1.0 - e) / g as f64,
        None => e,
    }
}

/// Checks positivity and the sufficient positive-definiteness conditions.
///
/// For each branch `k` and level `b`, the product of [`nested_factor`] over
/// the nested variables enabled by `(k, b)` must be at least `exp(-γ_k)`.
/// With one nested variable per level this is exactly the per-variable
/// condition for qualitative nested variables and `φ ≤ γ_k` for quantitative
/// ones.
pub fn check_validity<T: Scalar>(params: &KernelParams<T>, space: &SearchSpace) -> Vec<ValidityViolation> {
    let mut out = Vec::new();
    let shapes = [
        ("theta", space.quant().len(), params.theta.len()),
        ("gamma", space.branch().len(), params.gamma.len()),
        ("phi", space.nested().len(), params.phi.len()),
    ];
    for (field, expected, got) in shapes {
        if expected != got {
            out.push(ValidityViolation::Shape { field, expected, got });
        }
    }
    if !out.is_empty() {
        return out;
    }
    for (field, values) in [("theta", &params.theta), ("gamma", &params.gamma), ("phi", &params.phi)] {
        for (index, v) in values.iter().enumerate() {
            let v = v.as_f64();
            if !(v > 0.0 && v.is_finite()) {
                out.push(ValidityViolation::NonPositive { field, index, value: v });
            }
        }
    }
    for (k, branch) in space.branch().iter().enumerate() {
        let between = (-params.gamma[k].as_f64()).exp();
        for b in 0..branch.levels.len() {
            let members: Vec<usize> = (0..space.nested().len())
                .filter(|&j| space.parent_of(j) == (k, b))
                .collect();
            if members.is_empty() {
                continue;
            }
            let within: f64 = members
                .iter()
                .map(|&j| nested_factor(params.phi[j].as_f64(), space.nested()[j].levels().map(<[_]>::len)))
                .product();
            if within < between * (1.0 - BOUND_SLACK) {
                out.extend(members.iter().map(|&j| ValidityViolation::Bound {
                    branch: k,
                    nested: j,
                    level: b,
                    within,
                    between,
                }));
            }
        }
    }
    out
}

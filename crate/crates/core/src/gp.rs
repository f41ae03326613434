//! Ordinary-kriging Gaussian process: constant mean, product kernel,
//! profile likelihood fitted by constrained multistart pattern search.
//!
//! The covariance is `σ² (R + (η + nugget) I)` where `R` is the kernel
//! correlation matrix and `η` the noise-to-signal variance ratio. `β` and `σ²`
//! are profiled out in closed form, leaving the correlation parameters (and
//! optionally `η`) to the optimizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::{
    check_validity, cross_correlations, gram_matrix, EncodedPoint, KernelParams, MaternNu, ValidityViolation,
};
use crate::linalg::{dot, Cholesky};
use crate::optim::PatternSearch;
use crate::rng;
use crate::scalar::Scalar;
use crate::space::{latin_hypercube, Configuration, SearchSpace, Violation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpError {
    #[error("dataset has {points} points but {responses} responses")]
    LengthMismatch { points: usize, responses: usize },
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("non-finite response at index {index}")]
    NonFiniteResponse { index: usize },
    #[error("correlation matrix not positive definite at nugget {nugget:e} (pivot {pivot}, value {value:e})")]
    Factorization { nugget: f64, pivot: usize, value: f64 },
    #[error("kernel parameters violate validity conditions: {0:?}")]
    InvalidParams(Vec<ValidityViolation>),
    #[error("configuration does not belong to the space: {0:?}")]
    InvalidConfiguration(Vec<Violation>),
    #[error("all {starts} likelihood starts failed; last error: {last}")]
    FitFailed { starts: usize, last: String },
}

/// Training inputs in model coordinates and their responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub points: Vec<EncodedPoint<T>>,
    pub responses: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(points: Vec<EncodedPoint<T>>, responses: Vec<T>) -> Result<Self, GpError> {
        if points.len() != responses.len() {
            return Err(GpError::LengthMismatch {
                points: points.len(),
                responses: responses.len(),
            });
        }
        if let Some(index) = responses.iter().position(|y| !y.is_finite()) {
            return Err(GpError::NonFiniteResponse { index });
        }
        Ok(Self { points, responses })
    }

    /// Encodes `(configuration, response)` pairs.
    pub fn from_observations<'a>(
        space: &SearchSpace,
        obs: impl IntoIterator<Item = (&'a Configuration, f64)>,
    ) -> Result<Self, GpError> {
        let mut points = Vec::new();
        let mut responses = Vec::new();
        for (cfg, y) in obs {
            points.push(space.encode(cfg).map_err(GpError::InvalidConfiguration)?);
            responses.push(T::of(y));
        }
        Self::new(points, responses)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma2Mode {
    /// `(1/n) (y − 1β)ᵀ K⁻¹ (y − 1β)`.
    #[default]
    Mle,
    /// The un-normalized quadratic form, without the `1/n`.
    Conservative,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceForm {
    /// `σ² (1 − kᵀ K⁻¹ k)`.
    #[default]
    Simple,
    /// Adds the inflation for the estimated constant mean,
    /// `σ² (1 − 1ᵀK⁻¹k)² / (1ᵀK⁻¹1)`.
    BetaCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn is_valid(&self) -> bool {
        self.lower > 0.0 && self.lower < self.upper && self.upper.is_finite()
    }

    /// Log-linear map from `[0, 1]` onto the box.
    #[inline]
    fn at(&self, u: f64) -> f64 {
        log_interp(self.lower, self.upper, u)
    }
}

#[inline]
fn log_interp(lo: f64, hi: f64, u: f64) -> f64 {
    if hi <= lo {
        return hi;
    }
    (lo.ln() + u.clamp(0.0, 1.0) * (hi.ln() - lo.ln())).exp()
}

#[inline]
fn log_unit(lo: f64, hi: f64, x: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    ((x.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub theta_bounds: Bounds,
    pub gamma_bounds: Bounds,
    pub phi_bounds: Bounds,
    /// Bounds of the noise-to-signal variance ratio when `learn_noise` is on.
    pub noise_bounds: Bounds,
    pub restarts: usize,
    pub learn_noise: bool,
    pub sigma2_mode: Sigma2Mode,
    pub variance_form: VarianceForm,
    pub nugget: f64,
    pub nu: MaternNu,
    /// Let a lone qualitative nested parameter go up to the exact level-count
    /// bound instead of the simpler `φ ≤ γ` box.
    pub widen_qualitative: bool,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            theta_bounds: Bounds::new(1e-3, 1e3),
            gamma_bounds: Bounds::new(1e-3, 10.0),
            phi_bounds: Bounds::new(1e-3, 10.0),
            noise_bounds: Bounds::new(1e-10, 1.0),
            restarts: 10,
            learn_noise: true,
            sigma2_mode: Sigma2Mode::Mle,
            variance_form: VarianceForm::Simple,
            nugget: 1e-8,
            nu: MaternNu::FiveHalves,
            widen_qualitative: false,
            max_evals: 400,
        }
    }
}

impl FitOptions {
    /// Names of malformed fields, empty when usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, b) in [
            ("theta_bounds", self.theta_bounds),
            ("gamma_bounds", self.gamma_bounds),
            ("phi_bounds", self.phi_bounds),
            ("noise_bounds", self.noise_bounds),
        ] {
            if !b.is_valid() {
                out.push(format!(
                    "{name}: need 0 < lower < upper < inf (got [{}, {}])",
                    b.lower, b.upper
                ));
            }
        }
        if self.restarts == 0 {
            out.push("restarts: must be at least 1".into());
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            out.push(format!("nugget: must be finite and >= 0 (got {})", self.nugget));
        }
        if self.max_evals == 0 {
            out.push("max_evals: must be at least 1".into());
        }
        out
    }
}

/// Closed-form estimates for fixed correlation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile<T> {
    pub beta: T,
    /// Maximum-likelihood `σ̂²`, always with the `1/n` normalization.
    pub sigma2: T,
    /// `(n/2) log σ̂² + (1/2) log |K|`, the negated profile log-likelihood
    /// (up to constants).
    pub neg_log_likelihood: T,
}

struct Factored<T> {
    chol: Cholesky<T>,
    kinv_one: Vec<T>,
    one_kinv_one: T,
}

fn factor<T: Scalar>(points: &[EncodedPoint<T>], params: &KernelParams<T>, diag: T) -> Result<Factored<T>, GpError> {
    let k = gram_matrix(points, params, diag);
    let chol = k.cholesky().map_err(|e| GpError::Factorization {
        nugget: diag.as_f64(),
        pivot: e.pivot,
        value: e.value,
    })?;
    let ones = vec![T::one(); points.len()];
    let kinv_one = chol.solve(&ones);
    let one_kinv_one = kinv_one.iter().copied().sum();
    Ok(Factored {
        chol,
        kinv_one,
        one_kinv_one,
    })
}

fn profile_from<T: Scalar>(f: &Factored<T>, y: &[T]) -> Profile<T> {
    let n = T::of(y.len() as f64);
    let beta = dot(&f.kinv_one, y) / f.one_kinv_one;
    let resid: Vec<T> = y.iter().map(|&v| v - beta).collect();
    let white = f.chol.solve_lower(&resid);
    let quad = dot(&white, &white);
    let sigma2 = (quad / n).max(T::zero());
    let log_s2 = sigma2.max(T::min_positive_value()).ln();
    Profile {
        beta,
        sigma2,
        neg_log_likelihood: n / T::of(2.0) * log_s2 + f.chol.log_det() / T::of(2.0),
    }
}

/// `β̂`, `σ̂²` and the negated profile log-likelihood at fixed parameters.
/// `noise` is the noise-to-signal ratio added to the diagonal together with
/// `nugget`.
pub fn profile_estimates<T: Scalar>(
    dataset: &Dataset<T>,
    params: &KernelParams<T>,
    noise: T,
    nugget: T,
) -> Result<Profile<T>, GpError> {
    if dataset.is_empty() {
        return Err(GpError::TooFewObservations { need: 1, got: 0 });
    }
    let f = factor(&dataset.points, params, noise + nugget)?;
    Ok(profile_from(&f, &dataset.responses))
}

/// Fitted model, immutable. Fantasy updates return a new value.
#[derive(Debug, Clone)]
pub struct TrainedGp<T: Scalar> {
    dataset: Dataset<T>,
    params: KernelParams<T>,
    beta: T,
    sigma2: T,
    noise: T,
    nugget: T,
    sigma2_mode: Sigma2Mode,
    variance_form: VarianceForm,
    neg_log_likelihood: T,
    chol: Cholesky<T>,
    alpha: Vec<T>,
    kinv_one: Vec<T>,
    one_kinv_one: T,
}

/// Serializable summary of a [`TrainedGp`]; the factorization is rebuilt
/// from the dataset on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GpSnapshot<T: Scalar> {
    pub params: KernelParams<T>,
    pub beta: T,
    pub sigma2: T,
    pub noise: T,
    pub nugget: T,
    pub sigma2_mode: Sigma2Mode,
    pub variance_form: VarianceForm,
    pub neg_log_likelihood: T,
}

impl<T: Scalar> TrainedGp<T> {
    /// Builds the model at fixed parameters, estimating `β` and `σ²`.
    pub fn with_params(
        dataset: Dataset<T>,
        params: KernelParams<T>,
        noise: T,
        nugget: T,
        sigma2_mode: Sigma2Mode,
        variance_form: VarianceForm,
    ) -> Result<Self, GpError> {
        if dataset.is_empty() {
            return Err(GpError::TooFewObservations { need: 1, got: 0 });
        }
        let f = factor(&dataset.points, &params, noise + nugget)?;
        let p = profile_from(&f, &dataset.responses);
        let sigma2 = match sigma2_mode {
            Sigma2Mode::Mle => p.sigma2,
            Sigma2Mode::Conservative => p.sigma2 * T::of(dataset.len() as f64),
        };
        Ok(Self::assemble(
            dataset,
            params,
            p.beta,
            sigma2,
            noise,
            nugget,
            sigma2_mode,
            variance_form,
            p.neg_log_likelihood,
            f,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dataset: Dataset<T>,
        params: KernelParams<T>,
        beta: T,
        sigma2: T,
        noise: T,
        nugget: T,
        sigma2_mode: Sigma2Mode,
        variance_form: VarianceForm,
        neg_log_likelihood: T,
        f: Factored<T>,
    ) -> Self {
        let resid: Vec<T> = dataset.responses.iter().map(|&v| v - beta).collect();
        let alpha = f.chol.solve(&resid);
        Self {
            dataset,
            params,
            beta,
            sigma2,
            noise,
            nugget,
            sigma2_mode,
            variance_form,
            neg_log_likelihood,
            chol: f.chol,
            alpha,
            kinv_one: f.kinv_one,
            one_kinv_one: f.one_kinv_one,
        }
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.dataset
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    /// Noise-to-signal variance ratio `η`.
    pub fn noise_ratio(&self) -> T {
        self.noise
    }

    /// Observation noise variance `η σ̂²`.
    pub fn noise_var(&self) -> T {
        self.noise * self.sigma2
    }

    pub fn nugget(&self) -> T {
        self.nugget
    }

    pub fn neg_log_likelihood(&self) -> T {
        self.neg_log_likelihood
    }

    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    /// Posterior mean and variance of the latent function at `x`, variance
    /// clamped at zero.
    pub fn posterior(&self, x: &EncodedPoint<T>) -> (T, T) {
        let (m, v) = self.posterior_raw(x);
        (m, v.max(T::zero()))
    }

    /// Like [`Self::posterior`] without the clamp.
    pub fn posterior_raw(&self, x: &EncodedPoint<T>) -> (T, T) {
        let k = cross_correlations(x, &self.dataset.points, &self.params);
        let mean = self.beta + dot(&k, &self.alpha);
        let w = self.chol.solve_lower(&k);
        let mut reduction = T::one() - dot(&w, &w);
        if self.variance_form == VarianceForm::BetaCorrected {
            let u = T::one() - dot(&self.kinv_one, &k);
            reduction += u * u / self.one_kinv_one;
        }
        (mean, self.sigma2 * reduction)
    }

    /// Posterior mean only; `O(n)` per call.
    pub fn mean(&self, x: &EncodedPoint<T>) -> T {
        let k = cross_correlations(x, &self.dataset.points, &self.params);
        self.beta + dot(&k, &self.alpha)
    }

    /// Conditions on one extra observation with all estimates (`β`, `σ²`,
    /// kernel parameters) held fixed. Extends the Cholesky factor by one row.
    pub fn condition_on(&self, x: EncodedPoint<T>, y: T) -> Result<Self, GpError> {
        let mut row = cross_correlations(&x, &self.dataset.points, &self.params);
        row.push(T::one() + self.noise + self.nugget);
        let mut chol = self.chol.clone();
        chol.push_row(&row).map_err(|e| GpError::Factorization {
            nugget: (self.noise + self.nugget).as_f64(),
            pivot: e.pivot,
            value: e.value,
        })?;
        let mut dataset = self.dataset.clone();
        dataset.points.push(x);
        dataset.responses.push(y);
        let ones = vec![T::one(); dataset.len()];
        let kinv_one = chol.solve(&ones);
        let one_kinv_one = kinv_one.iter().copied().sum();
        Ok(Self::assemble(
            dataset,
            self.params.clone(),
            self.beta,
            self.sigma2,
            self.noise,
            self.nugget,
            self.sigma2_mode,
            self.variance_form,
            self.neg_log_likelihood,
            Factored {
                chol,
                kinv_one,
                one_kinv_one,
            },
        ))
    }

    pub fn snapshot(&self) -> GpSnapshot<T> {
        GpSnapshot {
            params: self.params.clone(),
            beta: self.beta,
            sigma2: self.sigma2,
            noise: self.noise,
            nugget: self.nugget,
            sigma2_mode: self.sigma2_mode,
            variance_form: self.variance_form,
            neg_log_likelihood: self.neg_log_likelihood,
        }
    }

    /// Rebuilds a model from a snapshot and the dataset it was trained on.
    pub fn restore(snapshot: GpSnapshot<T>, dataset: Dataset<T>) -> Result<Self, GpError> {
        let f = factor(&dataset.points, &snapshot.params, snapshot.noise + snapshot.nugget)?;
        Ok(Self::assemble(
            dataset,
            snapshot.params,
            snapshot.beta,
            snapshot.sigma2,
            snapshot.noise,
            snapshot.nugget,
            snapshot.sigma2_mode,
            snapshot.variance_form,
            snapshot.neg_log_likelihood,
            f,
        ))
    }
}

/// Maps the optimizer's unit box onto feasible kernel parameters.
///
/// Layout: `θ` (one per shared variable), `γ` (one per branch), `φ` (one per
/// nested variable), then the noise ratio if learned. Each `φ_j` lives in
/// `[min(φ_lo, cap), cap]` with `cap = min(φ_hi, bound(γ_k))`, so every point
/// of the box satisfies [`check_validity`].
#[derive(Debug, Clone)]
pub struct ParamMap<'a> {
    space: &'a SearchSpace,
    opts: &'a FitOptions,
}

impl<'a> ParamMap<'a> {
    pub fn new(space: &'a SearchSpace, opts: &'a FitOptions) -> Self {
        Self { space, opts }
    }

    pub fn len(&self) -> usize {
        self.space.quant().len()
            + self.space.branch().len()
            + self.space.nested().len()
            + usize::from(self.opts.learn_noise)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest `φ_j` compatible with `γ_k` of its parent.
    pub fn phi_cap(&self, j: usize, gamma: f64) -> f64 {
        let (k, b) = self.space.parent_of(j);
        let siblings = self.space.nested_count(k, b);
        let cap = match self.space.nested()[j].levels() {
            Some(levels) if siblings == 1 && self.opts.widen_qualitative => {
                let g = levels.len() as f64;
                let between = (-gamma).exp();
                if between <= 1.0 / g {
                    f64::INFINITY
                } else {
                    -((between - 1.0 / g) / (1.0 - 1.0 / g)).ln()
                }
            }
            // Σ_j φ_j ≤ γ_k keeps the product of within-level factors above
            // exp(-γ_k); a single sibling gives φ ≤ γ.
            _ => gamma / siblings as f64,
        };
        cap.min(self.opts.phi_bounds.upper)
    }

    pub fn decode<T: Scalar>(&self, u: &[f64]) -> (KernelParams<T>, T) {
        debug_assert_eq!(u.len(), self.len());
        let d = self.space.quant().len();
        let q = self.space.branch().len();
        let m = self.space.nested().len();
        let o = self.opts;
        let theta: Vec<f64> = u[..d].iter().map(|&x| o.theta_bounds.at(x)).collect();
        let gamma: Vec<f64> = u[d..d + q].iter().map(|&x| o.gamma_bounds.at(x)).collect();
        let phi: Vec<f64> = (0..m)
            .map(|j| {
                let (k, _) = self.space.parent_of(j);
                let cap = self.phi_cap(j, gamma[k]);
                let lo = o.phi_bounds.lower.min(cap);
                log_interp(lo, cap, u[d + q + j])
            })
            .collect();
        let noise = if o.learn_noise {
            o.noise_bounds.at(u[d + q + m])
        } else {
            0.0
        };
        (
            KernelParams {
                theta: theta.into_iter().map(T::of).collect(),
                gamma: gamma.into_iter().map(T::of).collect(),
                phi: phi.into_iter().map(T::of).collect(),
                nu: o.nu,
            },
            T::of(noise),
        )
    }

    /// Unit-box coordinates of given parameters, clamped into the box.
    pub fn encode<T: Scalar>(&self, params: &KernelParams<T>, noise: T) -> Vec<f64> {
        let o = self.opts;
        let mut u: Vec<f64> = params
            .theta
            .iter()
            .map(|t| log_unit(o.theta_bounds.lower, o.theta_bounds.upper, t.as_f64()))
            .collect();
        let gamma: Vec<f64> = params
            .gamma
            .iter()
            .map(|g| g.as_f64().clamp(o.gamma_bounds.lower, o.gamma_bounds.upper))
            .collect();
        u.extend(
            gamma
                .iter()
                .map(|&g| log_unit(o.gamma_bounds.lower, o.gamma_bounds.upper, g)),
        );
        for (j, p) in params.phi.iter().enumerate() {
            let (k, _) = self.space.parent_of(j);
            let cap = self.phi_cap(j, gamma[k]);
            let lo = o.phi_bounds.lower.min(cap);
            u.push(log_unit(lo, cap, p.as_f64()));
        }
        if o.learn_noise {
            u.push(log_unit(
                o.noise_bounds.lower,
                o.noise_bounds.upper,
                noise.as_f64().max(o.noise_bounds.lower),
            ));
        }
        u
    }
}

const SCREEN_FACTOR: usize = 10;

/// Diagnostics of a likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Objective at each start point before local search (`+∞` if it failed).
    pub start_objectives: Vec<f64>,
    /// Objective after local search, per start.
    pub final_objectives: Vec<f64>,
    pub chosen_start: usize,
}

/// Maximum-likelihood fit over the feasible parameter region from
/// the `opts.restarts` best points of a Latin hypercube screen in
/// log-parameter space (plus
/// `warm_start`, if given, as start 0). Deterministic given `seed`.
pub fn fit<T: Scalar>(
    dataset: &Dataset<T>,
    space: &SearchSpace,
    opts: &FitOptions,
    seed: u64,
    warm_start: Option<(&KernelParams<T>, T)>,
) -> Result<(TrainedGp<T>, FitReport), GpError> {
    if dataset.len() < 2 {
        return Err(GpError::TooFewObservations {
            need: 2,
            got: dataset.len(),
        });
    }
    let map = ParamMap::new(space, opts);
    let nugget = T::of(opts.nugget);
    let objective = |u: &[f64]| -> f64 {
        let (params, noise) = map.decode::<T>(u);
        match profile_estimates(dataset, &params, noise, nugget) {
            Ok(p) => p.neg_log_likelihood.as_f64(),
            Err(_) => f64::INFINITY,
        }
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some((p, noise)) = warm_start {
        starts.push(map.encode(p, noise));
    }
    // Local searches start from the best points of a wider screening design.
    let mut rng = rng::seeded(seed);
    let mut screen: Vec<(f64, Vec<f64>)> = latin_hypercube(SCREEN_FACTOR * opts.restarts, map.len(), &mut rng)
        .into_par_iter()
        .map(|u| (objective(&u), u))
        .collect();
    screen.sort_by(|a, b| a.0.total_cmp(&b.0));
    starts.extend(screen.into_iter().take(opts.restarts).map(|(_, u)| u));
    let search = PatternSearch {
        initial_step: 0.2,
        min_step: 1e-3,
        max_evals: opts.max_evals,
    };
    let runs: Vec<(f64, Vec<f64>, f64)> = starts
        .par_iter()
        .map(|x0| {
            let initial = objective(x0);
            let m = search.minimize(objective, x0);
            (initial, m.x, m.value)
        })
        .collect();
    let chosen = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.2.is_finite())
        .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    let Some(chosen) = chosen else {
        let last = match profile_estimates(dataset, &map.decode::<T>(&starts[0]).0, T::zero(), nugget) {
            Err(e) => e.to_string(),
            Ok(_) => "non-finite objective".into(),
        };
        return Err(GpError::FitFailed {
            starts: starts.len(),
            last,
        });
    };
    let (params, noise) = map.decode::<T>(&runs[chosen].1);
    let violations = check_validity(&params, space);
    if !violations.is_empty() {
        return Err(GpError::InvalidParams(violations));
    }
    let gp = TrainedGp::with_params(
        dataset.clone(),
        params,
        noise,
        nugget,
        opts.sigma2_mode,
        opts.variance_form,
    )?;
    let report = FitReport {
        start_objectives: runs.iter().map(|r| r.0).collect(),
        final_objectives: runs.iter().map(|r| r.2).collect(),
        chosen_start: chosen,
    };
    Ok((gp, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::k_full;
    use crate::space::{BranchVar, NestedVar, QuantVar};

    fn line() -> SearchSpace {
        SearchSpace::new(vec![QuantVar::new("x", 0.0, 1.0)], vec![], vec![]).unwrap()
    }

    fn data(space: &SearchSpace, xs: &[f64], ys: &[f64]) -> Dataset<f64> {
        Dataset::new(
            xs.iter().map(|&x| space.point_from_unit(0, &[x])).collect(),
            ys.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn constant_response_has_zero_variance() {
        let s = line();
        let d = data(&s, &[0.1, 0.5, 0.9], &[2.5, 2.5, 2.5]);
        let p = KernelParams::uniform(&s, 3.0, 1.0, 1.0, MaternNu::FiveHalves);
        let pr = profile_estimates(&d, &p, 0.0, 1e-8).unwrap();
        assert!((pr.beta - 2.5).abs() < 1e-9);
        assert!(pr.sigma2 < 1e-6);
        assert!(pr.neg_log_likelihood.is_finite());
    }

    #[test]
    fn duplicated_points_with_nugget_are_finite() {
        let s = line();
        let d = data(&s, &[0.3, 0.3], &[1.0, 1.0]);
        let p = KernelParams::uniform(&s, 1.0, 1.0, 1.0, MaternNu::FiveHalves);
        assert!(profile_estimates(&d, &p, 0.0, 1e-8)
            .unwrap()
            .neg_log_likelihood
            .is_finite());
        let e = profile_estimates(&d, &p, 0.0, 0.0).unwrap_err();
        assert!(matches!(e, GpError::Factorization { nugget, .. } if nugget == 0.0));
    }

    #[test]
    fn interpolates_and_reverts_to_prior() {
        let s = line();
        let d = data(&s, &[0.0, 0.4, 1.0], &[1.0, 3.0, 2.0]);
        let p = KernelParams::uniform(&s, 4.0, 1.0, 1.0, MaternNu::FiveHalves);
        let gp = TrainedGp::with_params(d.clone(), p, 0.0, 1e-10, Sigma2Mode::Mle, VarianceForm::Simple).unwrap();
        for (x, y) in d.points.iter().zip(&d.responses) {
            let (m, v) = gp.posterior(x);
            assert!((m - y).abs() < 1e-6);
            assert!(v < 1e-6);
        }
        // huge θ makes every correlation vanish away from the data
        let mut far = gp.params().clone();
        far.theta[0] = 1e6;
        let gp2 = TrainedGp::with_params(d, far, 0.0, 1e-10, Sigma2Mode::Mle, VarianceForm::Simple).unwrap();
        let (m, v) = gp2.posterior(&s.point_from_unit(0, &[0.7]));
        assert!((m - gp2.beta()).abs() < 1e-12);
        assert!((v - gp2.sigma2()).abs() < 1e-12);
    }

    #[test]
    fn conservative_mode_scales_sigma2() {
        let s = line();
        let d = data(&s, &[0.0, 0.3, 0.6, 1.0], &[1.0, 0.0, 2.0, 1.5]);
        let p = KernelParams::uniform(&s, 2.0, 1.0, 1.0, MaternNu::FiveHalves);
        let a = TrainedGp::with_params(d.clone(), p.clone(), 0.0, 1e-8, Sigma2Mode::Mle, VarianceForm::Simple).unwrap();
        let b = TrainedGp::with_params(d, p, 0.0, 1e-8, Sigma2Mode::Conservative, VarianceForm::Simple).unwrap();
        assert!((b.sigma2() - 4.0 * a.sigma2()).abs() < 1e-12);
    }

    #[test]
    fn fantasy_update_matches_refactorization() {
        let s = line();
        let d = data(&s, &[0.0, 0.5, 1.0], &[1.0, 2.0, 0.5]);
        let p = KernelParams::uniform(&s, 2.0, 1.0, 1.0, MaternNu::FiveHalves);
        let gp =
            TrainedGp::with_params(d.clone(), p.clone(), 0.01, 1e-8, Sigma2Mode::Mle, VarianceForm::Simple).unwrap();
        let x = s.point_from_unit(0, &[0.2]);
        let updated = gp.condition_on(x.clone(), 1.7).unwrap();
        let mut d2 = d;
        d2.points.push(x);
        d2.responses.push(1.7);
        let snap = GpSnapshot { ..gp.snapshot() };
        let direct = TrainedGp::restore(snap, d2).unwrap();
        let q = s.point_from_unit(0, &[0.77]);
        let (m1, v1) = updated.posterior(&q);
        let (m2, v2) = direct.posterior(&q);
        assert!((m1 - m2).abs() < 1e-12 && (v1 - v2).abs() < 1e-12);
        // the original is untouched
        assert_eq!(gp.dataset().len(), 3);
    }

    #[test]
    fn snapshot_round_trip() {
        let s = line();
        let d = data(&s, &[0.0, 0.5, 1.0], &[1.0, 2.0, 0.5]);
        let p = KernelParams::uniform(&s, 2.0, 1.0, 1.0, MaternNu::ThreeHalves);
        let gp = TrainedGp::with_params(d.clone(), p, 0.0, 1e-8, Sigma2Mode::Mle, VarianceForm::BetaCorrected).unwrap();
        let json = serde_json::to_string(&gp.snapshot()).unwrap();
        let back: GpSnapshot<f64> = serde_json::from_str(&json).unwrap();
        let gp2 = TrainedGp::restore(back, d).unwrap();
        let q = s.point_from_unit(0, &[0.33]);
        assert_eq!(gp.posterior(&q), gp2.posterior(&q));
    }

    fn nested_space() -> SearchSpace {
        SearchSpace::new(
            vec![QuantVar::new("x", 0.0, 1.0)],
            vec![BranchVar::new("z", ["a", "b"])],
            vec![
                NestedVar::qualitative("u", "z", "a", ["1", "2", "3"]),
                NestedVar::quantitative("r", "z", "b", 0.0, 1.0),
                NestedVar::quantitative("s", "z", "b", 0.0, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn parameter_map_is_always_feasible() {
        let space = nested_space();
        for widen in [false, true] {
            let opts = FitOptions {
                widen_qualitative: widen,
                ..FitOptions::default()
            };
            let map = ParamMap::new(&space, &opts);
            let mut r = rng::seeded(1);
            for u in latin_hypercube(500, map.len(), &mut r) {
                let (p, _) = map.decode::<f64>(&u);
                assert!(check_validity(&p, &space).is_empty(), "{p:?}");
            }
            for corner in [0.0, 1.0] {
                let (p, _) = map.decode::<f64>(&vec![corner; map.len()]);
                assert!(check_validity(&p, &space).is_empty());
            }
        }
    }

    #[test]
    fn widening_allows_larger_phi() {
        let space = nested_space();
        let narrow = FitOptions::default();
        let wide = FitOptions {
            widen_qualitative: true,
            ..FitOptions::default()
        };
        let a = ParamMap::new(&space, &narrow).phi_cap(0, 0.5);
        let b = ParamMap::new(&space, &wide).phi_cap(0, 0.5);
        assert_eq!(a, 0.5);
        assert!(b > 0.5);
        // two quantitative siblings share the budget
        assert_eq!(ParamMap::new(&space, &narrow).phi_cap(1, 0.5), 0.25);
    }

    #[test]
    fn encode_inverts_decode() {
        let space = nested_space();
        let opts = FitOptions::default();
        let map = ParamMap::new(&space, &opts);
        let u = vec![0.2, 0.7, 0.5, 0.9, 0.1, 0.6];
        let (p, n) = map.decode::<f64>(&u);
        let back = map.encode(&p, n);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9, "{u:?} vs {back:?}");
        }
    }

    #[test]
    fn fit_is_deterministic_and_valid() {
        let space = nested_space();
        let design = space.sample_initial_design(12, 5);
        let obs: Vec<(Configuration, f64)> = design
            .into_iter()
            .map(|c| {
                let y = c.real("x").unwrap().sin() + if c.level("z") == Some("a") { 1.0 } else { 0.0 };
                (c, y)
            })
            .collect();
        let d = Dataset::<f64>::from_observations(&space, obs.iter().map(|(c, y)| (c, *y))).unwrap();
        let opts = FitOptions {
            restarts: 3,
            ..FitOptions::default()
        };
        let (a, ra) = fit(&d, &space, &opts, 9, None).unwrap();
        let (b, _) = fit(&d, &space, &opts, 9, None).unwrap();
        assert_eq!(a.snapshot(), b.snapshot());
        assert!(check_validity(a.params(), &space).is_empty());
        let best_start = ra.start_objectives.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(a.neg_log_likelihood() <= best_start);
        assert_eq!(a.neg_log_likelihood(), ra.final_objectives[ra.chosen_start]);
    }

    #[test]
    fn too_few_points() {
        let s = line();
        let d = data(&s, &[0.5], &[1.0]);
        assert!(matches!(
            fit(&d, &s, &FitOptions::default(), 0, None),
            Err(GpError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn single_precision_posterior() {
        let s = line();
        let pts: Vec<EncodedPoint<f32>> = [0.0, 0.5, 1.0].iter().map(|&x| s.point_from_unit(0, &[x])).collect();
        let d = Dataset::new(pts, vec![1.0f32, 2.0, 0.5]).unwrap();
        let p = KernelParams::uniform(&s, 2.0f32, 1.0, 1.0, MaternNu::FiveHalves);
        let gp = TrainedGp::with_params(d, p, 0.0, 1e-5, Sigma2Mode::Mle, VarianceForm::Simple).unwrap();
        let (m, _) = gp.posterior(&s.point_from_unit(0, &[0.5]));
        assert!((m - 2.0).abs() < 1e-3);
        let _ = k_full(
            &s.point_from_unit::<f32>(0, &[0.1]),
            &s.point_from_unit(0, &[0.2]),
            gp.params(),
        );
    }
}

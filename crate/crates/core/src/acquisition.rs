//! Expected improvement, its ε-greedy mixture, and batch proposals by
//! fantasized observations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gp::TrainedGp;
use crate::optim::PatternSearch;
use crate::rng;
use crate::scalar::Scalar;
use crate::space::{latin_hypercube, Configuration, SearchSpace};

/// `E[(Y − y_max)+]` for `Y ~ N(mean, var)`.
pub fn expected_improvement<T: Scalar>(mean: T, var: T, y_max: T) -> T {
    let diff = mean - y_max;
    if var.is_nan() || var <= T::zero() {
        return diff.max(T::zero());
    }
    let s = var.sqrt();
    let z = diff / s;
    (s * z.norm_pdf() + diff * z.norm_cdf()).max(T::zero())
}

/// Outcome assumed for a pending batch member.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fantasy {
    /// The posterior mean at the pending point.
    #[default]
    Believer,
    /// The current incumbent value.
    ConstantLiarMax,
}

/// How the loop picks `y_max`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Incumbent {
    /// Largest observed response.
    #[default]
    ObservedMax,
    /// Largest posterior mean over the observed configurations.
    PosteriorMeanMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcqOptions {
    pub epsilon: f64,
    /// Latin hypercube candidates per categorical combo.
    pub n_raw: usize,
    /// Best candidates per combo handed to local refinement.
    pub n_refine: usize,
    pub batch_size: usize,
    pub fantasy: Fantasy,
    pub incumbent: Incumbent,
    /// EI evaluations per local refinement.
    pub refine_evals: usize,
}

impl Default for AcqOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            n_raw: 256,
            n_refine: 3,
            batch_size: 1,
            fantasy: Fantasy::Believer,
            incumbent: Incumbent::ObservedMax,
            refine_evals: 200,
        }
    }
}

impl AcqOptions {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.epsilon) {
            out.push(format!("epsilon: must lie in [0, 1] (got {})", self.epsilon));
        }
        for (name, v) in [
            ("n_raw", self.n_raw),
            ("n_refine", self.n_refine),
            ("batch_size", self.batch_size),
            ("refine_evals", self.refine_evals),
        ] {
            if v == 0 {
                out.push(format!("{name}: must be at least 1"));
            }
        }
        out
    }
}

/// Why a configuration was proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    InitialDesign,
    Ei,
    EpsilonRandom,
    /// EI maximizer chosen after `k` fantasized batch members.
    FantasyStep(usize),
    /// Random draw used when the model could not be fitted or a proposal
    /// had to be replaced.
    RandomFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub config: Configuration,
    pub acq_value: f64,
    pub source: Source,
}

fn ei_at<T: Scalar>(gp: &TrainedGp<T>, space: &SearchSpace, combo: usize, unit: &[f64], y_max: T) -> f64 {
    let (m, v) = gp.posterior(&space.point_from_unit(combo, unit));
    expected_improvement(m, v, y_max).as_f64()
}

/// EI at a configuration of the space.
pub fn ei_of<T: Scalar>(gp: &TrainedGp<T>, space: &SearchSpace, cfg: &Configuration, y_max: T) -> f64 {
    match space.encode::<T>(cfg) {
        Ok(p) => {
            let (m, v) = gp.posterior(&p);
            expected_improvement(m, v, y_max).as_f64()
        }
        Err(_) => 0.0,
    }
}

/// Exhaustive over categorical combos: Latin hypercube screening of the
/// active quantitative coordinates, then compass search from the best
/// `n_refine` candidates. Ties resolve to the lower combo, then the lower
/// candidate index.
pub fn maximize_ei<T: Scalar>(
    gp: &TrainedGp<T>,
    space: &SearchSpace,
    y_max: T,
    opts: &AcqOptions,
    seed: u64,
) -> Proposal {
    let search = PatternSearch {
        initial_step: 0.1,
        min_step: 1e-4,
        max_evals: opts.refine_evals,
    };
    let per_combo: Vec<(f64, Vec<f64>)> = (0..space.combo_count())
        .into_par_iter()
        .map(|combo| {
            let dims = space.quant_dims(combo).len();
            if dims == 0 {
                return (ei_at(gp, space, combo, &[], y_max), Vec::new());
            }
            let mut r = rng::seeded(rng::derive(seed, combo as u64));
            let cands = latin_hypercube(opts.n_raw, dims, &mut r);
            let mut scored: Vec<(f64, usize)> = cands
                .iter()
                .enumerate()
                .map(|(i, u)| (ei_at(gp, space, combo, u, y_max), i))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut best = (scored[0].0, cands[scored[0].1].clone());
            for &(v0, i) in scored.iter().take(opts.n_refine) {
                if v0 <= 0.0 {
                    // flat zero region: nothing for a local search to climb
                    continue;
                }
                let m = search.minimize(|u| -ei_at(gp, space, combo, u, y_max), &cands[i]);
                if -m.value > best.0 {
                    best = (-m.value, m.x);
                }
            }
            best
        })
        .collect();
    let (combo, (value, unit)) = per_combo
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1 .0 > a.1 .0 { b } else { a })
        .expect("at least one combo");
    Proposal {
        config: space.assemble(combo, &unit),
        acq_value: value,
        source: Source::Ei,
    }
}

/// Whether the ε-greedy coin lands on "random" for this seed.
pub fn epsilon_draw(seed: u64, epsilon: f64) -> bool {
    rng::seeded(rng::derive(seed, 0xE95)).random::<f64>() < epsilon
}

/// ε-greedy EI: a uniformly random configuration with probability
/// `epsilon`, otherwise the EI maximizer.
pub fn propose<T: Scalar>(gp: &TrainedGp<T>, space: &SearchSpace, y_max: T, opts: &AcqOptions, seed: u64) -> Proposal {
    if epsilon_draw(seed, opts.epsilon) {
        let mut r = rng::seeded(rng::derive(seed, 0x5A3));
        let config = space.sample_uniform(&mut r);
        let acq_value = ei_of(gp, space, &config, y_max);
        Proposal {
            config,
            acq_value,
            source: Source::EpsilonRandom,
        }
    } else {
        maximize_ei(gp, space, y_max, opts, rng::derive(seed, 0xA11))
    }
}

/// `opts.batch_size` pairwise distinct proposals. After each member the
/// model is conditioned on a fantasized outcome (a private copy; `gp` is not
/// touched) and the incumbent is raised to the fantasy if it exceeds it.
pub fn propose_batch<T: Scalar>(
    gp: &TrainedGp<T>,
    space: &SearchSpace,
    y_max: T,
    opts: &AcqOptions,
    seed: u64,
) -> Vec<Proposal> {
    let mut model = gp.clone();
    let mut incumbent = y_max;
    let mut out: Vec<Proposal> = Vec::with_capacity(opts.batch_size);
    for k in 0..opts.batch_size {
        let member_seed = if k == 0 { seed } else { rng::derive(seed, k as u64) };
        let mut p = propose(&model, space, incumbent, opts, member_seed);
        let mut attempt = 0u64;
        while out.iter().any(|q| q.config == p.config) && attempt < 64 {
            let mut r = rng::seeded(rng::derive2(member_seed, 0xD0B, attempt));
            let config = space.sample_uniform(&mut r);
            p = Proposal {
                acq_value: ei_of(&model, space, &config, incumbent),
                config,
                source: Source::RandomFallback,
            };
            attempt += 1;
        }
        if k > 0 && p.source == Source::Ei {
            p.source = Source::FantasyStep(k);
        }
        if k + 1 < opts.batch_size {
            let x = space.encode::<T>(&p.config).expect("proposals are valid");
            let y = match opts.fantasy {
                Fantasy::Believer => model.mean(&x),
                Fantasy::ConstantLiarMax => incumbent,
            };
            // a fantasy that cannot be factored (exact repeat, no noise) adds nothing
            if let Ok(m) = model.condition_on(x, y) {
                model = m;
            }
            incumbent = incumbent.max(y);
        }
        out.push(p);
    }
    out
}

//! The optimization loop: initial design, fit, propose, evaluate, record.
//!
//! A [`Study`] is driven either by an in-process [`Objective`] ([`Study::step`],
//! [`Study::run`]) or externally through ask-tell ([`Study::suggest`],
//! [`Study::tell`]). Both paths go through the same generation bookkeeping:
//! a generation is a set of pending configurations with opaque tokens, and it
//! is committed to the history only once every token has a result, in
//! suggestion order regardless of the order results arrive.
//!
//! All randomness is derived from the study seed and the generation or
//! evaluation index, so a study saved to JSON and reloaded continues exactly
//! as an uninterrupted run would.

use serde::{Deserialize, Serialize};

use crate::acquisition::{propose_batch, AcqOptions, Incumbent, Source};
use crate::gp::{fit, Dataset, FitOptions, FitReport, GpError, TrainedGp};
use crate::kernel::KernelParams;
use crate::rng;
use crate::space::{Configuration, SearchSpace};

pub const SCHEMA_VERSION: u32 = 1;

/// Upper end of the nugget escalation after a failed fit.
pub const MAX_NUGGET: f64 = 1e-2;

const STREAM_GENERATION: u64 = 0x6E4;
const STREAM_EVAL: u64 = 0xE7A;
const STREAM_TOKEN: u64 = 0x70C;
const STREAM_FALLBACK: u64 = 0xFA1;

/// Something that can be evaluated at a configuration. A non-finite return
/// value marks a failed evaluation. `seed` drives any internal randomness
/// (e.g. simulated noise).
pub trait Objective {
    fn evaluate(&mut self, cfg: &Configuration, seed: u64) -> f64;
}

impl<F: FnMut(&Configuration, u64) -> f64> Objective for F {
    fn evaluate(&mut self, cfg: &Configuration, seed: u64) -> f64 {
        self(cfg, seed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    #[default]
    Sequential,
    Batch {
        size: usize,
    },
}

impl Mode {
    pub fn batch_size(self) -> usize {
        match self {
            Mode::Sequential => 1,
            Mode::Batch { size } => size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    pub n_init: usize,
    /// Adaptive evaluations after the initial design.
    pub n_adaptive: usize,
    pub mode: Mode,
    pub fit: FitOptions,
    /// `batch_size` here is ignored; the batch size comes from `mode`.
    pub acq: AcqOptions,
    /// Fall back to random proposals when the model cannot be fitted even
    /// after nugget escalation. When off, such a step is an error.
    pub random_fallback: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            n_init: 10,
            n_adaptive: 50,
            mode: Mode::Sequential,
            fit: FitOptions::default(),
            acq: AcqOptions::default(),
            random_fallback: true,
        }
    }
}

impl StudyOptions {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_init < 2 {
            out.push(format!("n_init: must be at least 2 (got {})", self.n_init));
        }
        if self.mode.batch_size() == 0 {
            out.push("batch_size: must be at least 1".into());
        }
        out.extend(self.fit.problems().into_iter().map(|p| format!("fit.{p}")));
        out.extend(
            self.acq
                .problems()
                .into_iter()
                .filter(|p| !p.starts_with("batch_size"))
                .map(|p| format!("acquisition.{p}")),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StudyError {
    #[error("invalid study options: {}", .0.join("; "))]
    Options(Vec<String>),
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("token '{0}' already has a result")]
    AlreadyTold(String),
    #[error("model fit failed after nugget escalation to {nugget:e}: {source}")]
    FitFailure { nugget: f64, source: GpError },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("no successful observations")]
    NoObservations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Value(f64),
    Failed,
}

impl Outcome {
    pub fn from_value(y: f64) -> Self {
        if y.is_finite() {
            Outcome::Value(y)
        } else {
            Outcome::Failed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub token: String,
    pub config: Configuration,
    /// `None` for a failed evaluation.
    pub y: Option<f64>,
    pub generation: u64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub token: String,
    pub config: Configuration,
    pub source: Source,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub params: KernelParams<f64>,
    pub noise: f64,
}

/// Result of [`Study::tell`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TellStatus {
    /// Other tokens of this generation are still open.
    Recorded,
    /// That was the last token; the generation was committed.
    GenerationComplete,
}

/// Full persisted state of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub schema_version: u32,
    pub space: SearchSpace,
    pub options: StudyOptions,
    pub seed: u64,
    /// Index of the generation currently pending (or next to be generated).
    pub generation: u64,
    pub observations: Vec<Observation>,
    /// Best successful response after each observation (`None` until the
    /// first success).
    pub best_so_far: Vec<Option<f64>>,
    pub pending: Vec<Pending>,
    pub warm_start: Option<WarmStart>,
    /// Generations whose proposals fell back to random draws because the
    /// model could not be fitted.
    pub fit_failures: u64,
}

impl Study {
    /// New study with the initial Latin hypercube design queued as
    /// generation 0.
    pub fn new(space: SearchSpace, options: StudyOptions, seed: u64) -> Result<Self, StudyError> {
        let problems = options.problems();
        if !problems.is_empty() {
            return Err(StudyError::Options(problems));
        }
        let design = space.sample_initial_design(options.n_init, rng::derive(seed, 0));
        let mut study = Self {
            schema_version: SCHEMA_VERSION,
            space,
            options,
            seed,
            generation: 0,
            observations: Vec::new(),
            best_so_far: Vec::new(),
            pending: Vec::new(),
            warm_start: None,
            fit_failures: 0,
        };
        study.queue(design.into_iter().map(|c| (c, Source::InitialDesign)).collect());
        Ok(study)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn check_schema(&self) -> Result<(), StudyError> {
        if self.schema_version == SCHEMA_VERSION {
            Ok(())
        } else {
            Err(StudyError::Schema(self.schema_version))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serializes")
    }

    fn token(&self, index: usize) -> String {
        format!(
            "{:016x}",
            rng::derive2(rng::derive(self.seed, STREAM_TOKEN), self.generation, index as u64)
        )
    }

    fn queue(&mut self, configs: Vec<(Configuration, Source)>) {
        self.pending = configs
            .into_iter()
            .enumerate()
            .map(|(i, (config, source))| Pending {
                token: self.token(i),
                config,
                source,
                outcome: None,
            })
            .collect();
    }

    pub fn budget(&self) -> usize {
        self.options.n_init + self.options.n_adaptive
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_empty() && self.observations.len() >= self.budget()
    }

    fn successes(&self) -> impl Iterator<Item = (&Configuration, f64)> {
        self.observations.iter().filter_map(|o| o.y.map(|y| (&o.config, y)))
    }

    pub fn n_successes(&self) -> usize {
        self.successes().count()
    }

    /// Fits the GP to all successful observations, escalating the nugget by
    /// ×10 up to [`MAX_NUGGET`] when the fit fails.
    pub fn fit_model(&self, seed: u64) -> Result<(TrainedGp<f64>, FitReport), StudyError> {
        let data = Dataset::<f64>::from_observations(&self.space, self.successes())
            .map_err(|source| StudyError::FitFailure { nugget: 0.0, source })?;
        let warm = self.warm_start.as_ref().map(|w| (&w.params, w.noise));
        let mut opts = self.options.fit.clone();
        loop {
            match fit(&data, &self.space, &opts, seed, warm) {
                Ok(r) => return Ok(r),
                Err(source) => {
                    if opts.nugget >= MAX_NUGGET || matches!(source, GpError::TooFewObservations { .. }) {
                        return Err(StudyError::FitFailure {
                            nugget: opts.nugget,
                            source,
                        });
                    }
                    opts.nugget = (opts.nugget * 10.0).clamp(1e-10, MAX_NUGGET);
                }
            }
        }
    }

    fn random_configs(&self, n: usize, stream: u64) -> Vec<(Configuration, Source)> {
        let mut r = rng::seeded(rng::derive2(self.seed, STREAM_FALLBACK, stream));
        (0..n)
            .map(|_| (self.space.sample_uniform(&mut r), Source::RandomFallback))
            .collect()
    }

    fn propose_generation(&mut self, size: usize) -> Result<Vec<(Configuration, Source)>, StudyError> {
        let gen_seed = rng::derive2(self.seed, STREAM_GENERATION, self.generation);
        let fitted = if self.n_successes() >= 2 {
            match self.fit_model(gen_seed) {
                Ok((gp, _)) => Some(gp),
                Err(e) if self.options.random_fallback => {
                    let _ = e;
                    self.fit_failures += 1;
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let Some(gp) = fitted else {
            return Ok(self.random_configs(size, self.generation));
        };
        self.warm_start = Some(WarmStart {
            params: gp.params().clone(),
            noise: gp.noise_ratio(),
        });
        let y_max = match self.options.acq.incumbent {
            Incumbent::ObservedMax => self.successes().map(|(_, y)| y).fold(f64::NEG_INFINITY, f64::max),
            Incumbent::PosteriorMeanMax => gp
                .dataset()
                .points
                .iter()
                .map(|p| gp.mean(p))
                .fold(f64::NEG_INFINITY, f64::max),
        };
        let acq = AcqOptions {
            batch_size: size,
            ..self.options.acq.clone()
        };
        let proposals = propose_batch(&gp, &self.space, y_max, &acq, gen_seed);
        let noise_free = !self.options.fit.learn_noise;
        let mut out = Vec::with_capacity(size);
        for (i, p) in proposals.into_iter().enumerate() {
            let repeat = |c: &Configuration| self.observations.iter().any(|o| &o.config == c);
            if noise_free && repeat(&p.config) {
                // an exact noiseless repeat makes the Gram matrix singular; redraw once
                let mut r = rng::seeded(rng::derive2(gen_seed, STREAM_FALLBACK, i as u64));
                out.push((self.space.sample_uniform(&mut r), Source::RandomFallback));
            } else {
                out.push((p.config, p.source));
            }
        }
        Ok(out)
    }

    /// Open tokens of the current generation, generating the next generation
    /// first if nothing is pending. Empty once the budget is used up.
    pub fn suggest(&mut self) -> Result<Vec<Pending>, StudyError> {
        if self.pending.is_empty() {
            let remaining = self.budget().saturating_sub(self.observations.len());
            if remaining == 0 {
                return Ok(Vec::new());
            }
            let size = self.options.mode.batch_size().min(remaining);
            let configs = self.propose_generation(size)?;
            self.queue(configs);
        }
        Ok(self.pending.iter().filter(|p| p.outcome.is_none()).cloned().collect())
    }

    /// Binds a result to a pending token. Non-finite `y` records a failed
    /// evaluation.
    pub fn tell(&mut self, token: &str, y: f64) -> Result<TellStatus, StudyError> {
        let slot = self.pending.iter_mut().find(|p| p.token == token).ok_or_else(|| {
            if self.observations.iter().any(|o| o.token == token) {
                StudyError::AlreadyTold(token.into())
            } else {
                StudyError::UnknownToken(token.into())
            }
        })?;
        if slot.outcome.is_some() {
            return Err(StudyError::AlreadyTold(token.into()));
        }
        slot.outcome = Some(Outcome::from_value(y));
        if self.pending.iter().all(|p| p.outcome.is_some()) {
            self.commit();
            Ok(TellStatus::GenerationComplete)
        } else {
            Ok(TellStatus::Recorded)
        }
    }

    fn commit(&mut self) {
        for p in std::mem::take(&mut self.pending) {
            let y = match p.outcome.expect("all resolved") {
                Outcome::Value(y) => Some(y),
                Outcome::Failed => None,
            };
            let prev = self.best_so_far.last().copied().flatten();
            let best = match (prev, y) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            self.best_so_far.push(best);
            self.observations.push(Observation {
                token: p.token,
                config: p.config,
                y,
                generation: self.generation,
                source: p.source,
            });
        }
        self.generation += 1;
    }

    /// Evaluates every open token of the current (or next) generation.
    pub fn step(&mut self, objective: &mut dyn Objective) -> Result<(), StudyError> {
        let open = self.suggest()?;
        for p in open {
            let index = self.observations.len() + self.pending.iter().position(|q| q.token == p.token).unwrap_or(0);
            let y = objective.evaluate(&p.config, rng::derive2(self.seed, STREAM_EVAL, index as u64));
            self.tell(&p.token, y)?;
        }
        Ok(())
    }

    /// Runs until the evaluation budget is exhausted.
    pub fn run(&mut self, objective: &mut dyn Objective) -> Result<(), StudyError> {
        while !self.is_complete() {
            self.step(objective)?;
        }
        Ok(())
    }

    /// The successful observation with the largest response; earliest wins ties.
    pub fn recommend(&self) -> Option<(&Configuration, f64)> {
        self.successes()
            .fold(None, |best: Option<(&Configuration, f64)>, (c, y)| match best {
                Some((_, b)) if b >= y => best,
                _ => Some((c, y)),
            })
    }
}

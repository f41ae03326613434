//! Built-in synthetic objectives and the replicate benchmark harness.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::space::{BranchVar, Configuration, NestedVar, QuantVar, SearchSpace};
use crate::study::{Mode, Objective, Study, StudyError, StudyOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("(z={z}, v={v}) is not a legal branch/nested combination")]
    InvalidCombo { z: u32, v: u32 },
    #[error("unknown builtin objective '{0}'")]
    UnknownObjective(String),
    #[error("configuration is not in the objective's space")]
    InvalidConfiguration,
    #[error(transparent)]
    Study(#[from] StudyError),
}

/// Centers `(c1, c2)` of the two bumps for a legal `(z, v)`.
pub fn bn2d_centers(z: u32, v: u32) -> Result<(f64, f64), BenchError> {
    let vf = v as f64;
    match (z, v) {
        (1, 1..=3) => Ok((3.0 - 0.5 * vf, 5.0 - vf)),
        (2, 1..=2) => Ok((-1.0 + vf, 7.0 - vf)),
        _ => Err(BenchError::InvalidCombo { z, v }),
    }
}

/// The noise-free two-bump synthetic surface.
pub fn bn2d_true(x1: f64, x2: f64, z: u32, v: u32) -> Result<f64, BenchError> {
    let (c1, c2) = bn2d_centers(z, v)?;
    let vf = v as f64;
    Ok(vf / 2.0 * (-(x1 - c1).powi(2)).exp()
        + 2.0 / vf * (-(x1 - c2).powi(2) / 10.0).exp()
        + 1.0 / (x2 * x2 + 1.0)
        + z as f64)
}

/// Synthetic surface plus `N(0, noise_sd²)` noise drawn from `seed`.
pub fn eval_bn2d(x1: f64, x2: f64, z: u32, v: u32, noise_sd: f64, seed: u64) -> Result<f64, BenchError> {
    let f = bn2d_true(x1, x2, z, v)?;
    if noise_sd > 0.0 {
        let normal = Normal::new(0.0, noise_sd).expect("finite sd");
        Ok(f + normal.sample(&mut rng::seeded(seed)))
    } else {
        Ok(f)
    }
}

/// `x1 ∈ [−10, 10]`, `x2 ∈ [−5, 5]`, branch `z ∈ {1, 2}`, nested `v_z1 ∈
/// {1, 2, 3}` under `z = 1` and `v_z2 ∈ {1, 2}` under `z = 2`.
pub fn bn2d_space() -> SearchSpace {
    SearchSpace::new(
        vec![QuantVar::new("x1", -10.0, 10.0), QuantVar::new("x2", -5.0, 5.0)],
        vec![BranchVar::new("z", ["1", "2"])],
        vec![
            NestedVar::qualitative("v_z1", "z", "1", ["1", "2", "3"]),
            NestedVar::qualitative("v_z2", "z", "2", ["1", "2"]),
        ],
    )
    .expect("static space is valid")
}

/// The CNN tuning space: five shared variables, network type as branch, and
/// one qualitative nested setting per network.
pub fn cnn_space() -> SearchSpace {
    SearchSpace::new(
        vec![
            QuantVar::log10("learning_rate", 1e-3, 1.0),
            QuantVar::new("epoch", 50.0, 200.0),
            QuantVar::new("batch", 64.0, 360.0),
            QuantVar::new("momentum", 0.0, 0.999),
            QuantVar::log10("weight_decay", 1e-6, 0.999),
        ],
        vec![BranchVar::new("network", ["resnet", "mobilenet"])],
        vec![
            NestedVar::qualitative("depth", "network", "resnet", ["18", "34", "50", "101"]),
            NestedVar::qualitative("multiplier", "network", "mobilenet", ["0.25", "0.5", "1.0"]),
        ],
    )
    .expect("static space is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Bn2d,
    /// Fixed random smooth surface over [`cnn_space`]. Not a model of real
    /// network accuracy; it only exercises the code paths.
    MockCnn,
}

#[derive(Debug, Clone)]
pub struct SyntheticObjective {
    pub name: String,
    pub kind: Builtin,
    pub space: SearchSpace,
    pub noise_sd: f64,
    pub true_optimum: Option<(Configuration, f64)>,
    bumps: Vec<MockBump>,
}

#[derive(Debug, Clone)]
struct MockBump {
    combo: usize,
    center: Vec<f64>,
    width: f64,
    height: f64,
}

impl SyntheticObjective {
    pub fn bn2d(noise_sd: f64) -> Self {
        let optimum = Configuration::new()
            .with_real("x1", 6.0)
            .with_real("x2", 0.0)
            .with_level("z", "2")
            .with_level("v_z2", "1");
        Self {
            name: "bn2d".into(),
            kind: Builtin::Bn2d,
            space: bn2d_space(),
            noise_sd,
            true_optimum: Some((optimum, bn2d_true(6.0, 0.0, 2, 1).expect("legal"))),
            bumps: Vec::new(),
        }
    }

    pub fn mock_cnn(noise_sd: f64) -> Self {
        let space = cnn_space();
        let mut r = rng::seeded(0xC1FA);
        let dims = space.quant().len();
        let bumps = (0..space.combo_count())
            .flat_map(|combo| (0..3).map(move |_| combo))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|combo| MockBump {
                combo,
                center: (0..dims).map(|_| r.random::<f64>()).collect(),
                width: 0.2 + 0.3 * r.random::<f64>(),
                height: 0.1 + 0.2 * r.random::<f64>(),
            })
            .collect();
        Self {
            name: "mock_cnn".into(),
            kind: Builtin::MockCnn,
            space,
            noise_sd,
            true_optimum: None,
            bumps,
        }
    }

    pub fn by_name(name: &str, noise_sd: f64) -> Result<Self, BenchError> {
        match name {
            "bn2d" => Ok(Self::bn2d(noise_sd)),
            "mock_cnn" => Ok(Self::mock_cnn(noise_sd)),
            other => Err(BenchError::UnknownObjective(other.into())),
        }
    }

    /// Noise-free value.
    pub fn true_value(&self, cfg: &Configuration) -> Result<f64, BenchError> {
        match self.kind {
            Builtin::Bn2d => {
                let x1 = cfg.real("x1").ok_or(BenchError::InvalidConfiguration)?;
                let x2 = cfg.real("x2").ok_or(BenchError::InvalidConfiguration)?;
                let z: u32 = cfg
                    .level("z")
                    .and_then(|z| z.parse().ok())
                    .ok_or(BenchError::InvalidConfiguration)?;
                let v: u32 = cfg
                    .level(if z == 1 { "v_z1" } else { "v_z2" })
                    .and_then(|v| v.parse().ok())
                    .ok_or(BenchError::InvalidConfiguration)?;
                bn2d_true(x1, x2, z, v)
            }
            Builtin::MockCnn => {
                let p = self
                    .space
                    .encode::<f64>(cfg)
                    .map_err(|_| BenchError::InvalidConfiguration)?;
                let base = 0.6 + 0.02 * p.combo as f64;
                let bump: f64 = self
                    .bumps
                    .iter()
                    .filter(|b| b.combo == p.combo)
                    .map(|b| {
                        let d2: f64 = b.center.iter().zip(&p.quant).map(|(c, x)| (c - x).powi(2)).sum();
                        b.height * (-d2 / (2.0 * b.width * b.width)).exp()
                    })
                    .sum();
                Ok(base + bump)
            }
        }
    }

    /// One noisy evaluation; `NaN` for configurations outside the space.
    pub fn sample(&self, cfg: &Configuration, seed: u64) -> f64 {
        let Ok(f) = self.true_value(cfg) else {
            return f64::NAN;
        };
        if self.noise_sd > 0.0 {
            let normal = Normal::new(0.0, self.noise_sd).expect("finite sd");
            f + normal.sample(&mut rng::seeded(seed))
        } else {
            f
        }
    }
}

impl Objective for SyntheticObjective {
    fn evaluate(&mut self, cfg: &Configuration, seed: u64) -> f64 {
        self.sample(cfg, seed)
    }
}

impl Objective for &SyntheticObjective {
    fn evaluate(&mut self, cfg: &Configuration, seed: u64) -> f64 {
        self.sample(cfg, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    BnSequential,
    BnBatch { size: usize },
    RandomSearch,
}

impl Method {
    pub fn tag(&self) -> String {
        match self {
            Method::BnSequential => "bn_sequential".into(),
            Method::BnBatch { size } => format!("bn_batch{size}"),
            Method::RandomSearch => "random_search".into(),
        }
    }
}

/// One replicate's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateTrace {
    pub replicate: usize,
    pub seed: u64,
    /// Best noisy observed response after each evaluation.
    pub best_observed: Vec<f64>,
    /// Noise-free value at the current recommendation after each evaluation.
    pub best_true: Vec<f64>,
    pub recommendation: Option<Configuration>,
}

impl ReplicateTrace {
    pub fn final_observed(&self) -> f64 {
        self.best_observed.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_true(&self) -> f64 {
        self.best_true.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                q1: f64::NAN,
                q3: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub objective: String,
    pub noise_sd: f64,
    pub n_init: usize,
    pub n_adaptive: usize,
    pub traces: Vec<ReplicateTrace>,
}

/// JSON summary of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub method: String,
    pub objective: String,
    pub replicates: usize,
    pub evaluations: usize,
    pub replicate_seeds: Vec<u64>,
    pub final_best_observed: Summary,
    pub final_true_at_recommendation: Summary,
    pub mean_final_best: f64,
    /// Share of replicates whose recommendation lies in the categorical combo
    /// of the known optimum (absent when the optimum is unknown).
    pub optimum_combo_rate: Option<f64>,
}

impl BenchReport {
    pub fn final_observed(&self) -> Vec<f64> {
        self.traces.iter().map(ReplicateTrace::final_observed).collect()
    }

    pub fn final_true(&self) -> Vec<f64> {
        self.traces.iter().map(ReplicateTrace::final_true).collect()
    }

    pub fn optimum_combo_rate(&self, objective: &SyntheticObjective) -> Option<f64> {
        let (opt, _) = objective.true_optimum.as_ref()?;
        let target = objective.space.combo_of(opt)?;
        let hits = self
            .traces
            .iter()
            .filter(|t| t.recommendation.as_ref().and_then(|c| objective.space.combo_of(c)) == Some(target))
            .count();
        Some(hits as f64 / self.traces.len().max(1) as f64)
    }

    pub fn summary(&self, objective: &SyntheticObjective) -> ReportSummary {
        let observed = Summary::of(&self.final_observed());
        ReportSummary {
            method: self.method.clone(),
            objective: self.objective.clone(),
            replicates: self.traces.len(),
            evaluations: self.n_init + self.n_adaptive,
            replicate_seeds: self.traces.iter().map(|t| t.seed).collect(),
            final_best_observed: observed,
            final_true_at_recommendation: Summary::of(&self.final_true()),
            mean_final_best: observed.mean,
            optimum_combo_rate: self.optimum_combo_rate(objective),
        }
    }

    /// Rows `method,replicate,eval_index,best_observed,best_true`.
    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for t in &self.traces {
            for (i, (o, b)) in t.best_observed.iter().zip(&t.best_true).enumerate() {
                w.write_record([
                    self.method.clone(),
                    t.replicate.to_string(),
                    i.to_string(),
                    o.to_string(),
                    b.to_string(),
                ])?;
            }
        }
        Ok(())
    }
}

pub const TRACE_HEADER: [&str; 5] = ["method", "replicate", "eval_index", "best_observed", "best_true"];

/// Best-observed and true-at-recommendation traces of a finished history.
fn traces_of(
    objective: &SyntheticObjective,
    history: &[(Configuration, f64)],
) -> (Vec<f64>, Vec<f64>, Option<Configuration>) {
    let mut best_obs = Vec::with_capacity(history.len());
    let mut best_true = Vec::with_capacity(history.len());
    let mut rec: Option<(usize, f64)> = None;
    for (i, (_, y)) in history.iter().enumerate() {
        if y.is_finite() && rec.is_none_or(|(_, b)| *y > b) {
            rec = Some((i, *y));
        }
        match rec {
            Some((j, b)) => {
                best_obs.push(b);
                best_true.push(objective.true_value(&history[j].0).unwrap_or(f64::NAN));
            }
            None => {
                best_obs.push(f64::NAN);
                best_true.push(f64::NAN);
            }
        }
    }
    (best_obs, best_true, rec.map(|(j, _)| history[j].0.clone()))
}

/// Seed of replicate `index` under master seed `seed`. Shared across methods
/// so comparisons are paired.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, index as u64)
}

pub fn run_replicate(
    method: Method,
    objective: &SyntheticObjective,
    n_init: usize,
    n_adaptive: usize,
    options: &StudyOptions,
    replicate: usize,
    seed: u64,
) -> Result<ReplicateTrace, BenchError> {
    let history: Vec<(Configuration, f64)> = match method {
        Method::RandomSearch => {
            let mut r = rng::seeded(rng::derive(seed, 0x4A4D));
            (0..n_init + n_adaptive)
                .map(|i| {
                    let c = objective.space.sample_uniform(&mut r);
                    let y = objective.sample(&c, rng::derive2(seed, 0xE7A, i as u64));
                    (c, y)
                })
                .collect()
        }
        Method::BnSequential | Method::BnBatch { .. } => {
            let mode = match method {
                Method::BnBatch { size } => Mode::Batch { size },
                _ => Mode::Sequential,
            };
            let opts = StudyOptions {
                n_init,
                n_adaptive,
                mode,
                ..options.clone()
            };
            let mut study = Study::new(objective.space.clone(), opts, seed)?;
            let mut obj = objective;
            study.run(&mut obj)?;
            study
                .observations
                .iter()
                .map(|o| (o.config.clone(), o.y.unwrap_or(f64::NAN)))
                .collect()
        }
    };
    let (best_observed, best_true, recommendation) = traces_of(objective, &history);
    Ok(ReplicateTrace {
        replicate,
        seed,
        best_observed,
        best_true,
        recommendation,
    })
}

/// Runs `replicates` independent studies (in parallel) of one method.
pub fn run_benchmark(
    method: Method,
    objective: &SyntheticObjective,
    n_init: usize,
    n_adaptive: usize,
    replicates: usize,
    seed: u64,
    options: &StudyOptions,
) -> Result<BenchReport, BenchError> {
    let traces = (0..replicates)
        .into_par_iter()
        .map(|i| {
            run_replicate(
                method,
                objective,
                n_init,
                n_adaptive,
                options,
                i,
                replicate_seed(seed, i),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BenchReport {
        method: method.tag(),
        objective: objective.name.clone(),
        noise_sd: objective.noise_sd,
        n_init,
        n_adaptive,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((bn2d_true(6.0, 0.0, 2, 1).unwrap() - 5.0).abs() < 1e-6);
        let expected = 1.0 + (-0.1f64).exp() + 1.0 + 1.0;
        assert!((bn2d_true(2.0, 0.0, 1, 2).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 3.904_837_418_035_96).abs() < 1e-12);
        let a = bn2d_true(0.0, 5.0, 1, 1).unwrap() - bn2d_true(0.0, 0.0, 1, 1).unwrap();
        assert!((a - (1.0 / 26.0 - 1.0)).abs() < 1e-12);
        assert!(matches!(
            bn2d_true(0.0, 0.0, 2, 3),
            Err(BenchError::InvalidCombo { z: 2, v: 3 })
        ));
        assert!(matches!(
            eval_bn2d(0.0, 0.0, 3, 1, 0.0, 0),
            Err(BenchError::InvalidCombo { .. })
        ));
    }

    #[test]
    fn noise_is_seeded() {
        let a = eval_bn2d(1.0, 1.0, 1, 1, 0.2, 11).unwrap();
        let b = eval_bn2d(1.0, 1.0, 1, 1, 0.2, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, eval_bn2d(1.0, 1.0, 1, 1, 0.2, 12).unwrap());
        assert_eq!(
            eval_bn2d(1.0, 1.0, 1, 1, 0.0, 12).unwrap(),
            bn2d_true(1.0, 1.0, 1, 1).unwrap()
        );
    }

    #[test]
    fn objective_reads_configurations() {
        let o = SyntheticObjective::bn2d(0.0);
        let (opt, f) = o.true_optimum.clone().unwrap();
        assert!(o.space.validate(&opt).is_empty());
        assert_eq!(o.true_value(&opt).unwrap(), f);
        assert!(o.sample(&Configuration::new(), 0).is_nan());
        assert!(SyntheticObjective::by_name("nope", 0.0).is_err());
    }

    #[test]
    fn mock_cnn_is_fixed_and_bounded() {
        let a = SyntheticObjective::mock_cnn(0.0);
        let b = SyntheticObjective::mock_cnn(0.0);
        let mut r = rng::seeded(1);
        for _ in 0..50 {
            let c = a.space.sample_uniform(&mut r);
            let v = a.true_value(&c).unwrap();
            assert_eq!(v, b.true_value(&c).unwrap());
            assert!(v > 0.5 && v < 1.5);
        }
        assert_eq!(a.space.combo_count(), 7);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
    }

    #[test]
    fn random_search_single_replicate() {
        let o = SyntheticObjective::bn2d(0.2);
        let r = run_benchmark(Method::RandomSearch, &o, 5, 5, 1, 3, &StudyOptions::default()).unwrap();
        assert_eq!(r.traces.len(), 1);
        let t = &r.traces[0];
        assert_eq!(t.best_observed.len(), 10);
        assert!(t.best_observed.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(t.seed, replicate_seed(3, 0));
    }
}

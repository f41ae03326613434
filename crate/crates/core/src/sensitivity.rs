//! Monte Carlo main effects and two-factor interaction curves of a response
//! surface, normally the posterior mean of a fitted model.
//!
//! The reference measure is uniform: shared quantitative variables uniform in
//! model scale (log-uniform for log10 variables), branch levels uniform, and
//! nested variables drawn uniformly among the ones active under the drawn
//! branch levels. Every grid point reuses the same Monte Carlo draws, so
//! curves are smooth in the grid variable and differences between grid
//! points are estimated with common random numbers.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gp::TrainedGp;
use crate::rng;
use crate::scalar::Scalar;
use crate::space::{Configuration, NestedKind, SearchSpace, Value};

/// Label written into outputs describing the averaging measure.
pub const MEASURE: &str = "uniform";

/// A deterministic response surface over valid configurations.
pub trait Surface {
    fn value(&self, cfg: &Configuration) -> f64;
}

impl<F: Fn(&Configuration) -> f64> Surface for F {
    fn value(&self, cfg: &Configuration) -> f64 {
        self(cfg)
    }
}

/// Posterior mean `y^μ` of a fitted model.
pub struct PosteriorMean<'a, T: Scalar> {
    pub gp: &'a TrainedGp<T>,
    pub space: &'a SearchSpace,
}

impl<T: Scalar> Surface for PosteriorMean<'_, T> {
    fn value(&self, cfg: &Configuration) -> f64 {
        let p = self.space.encode::<T>(cfg).expect("draws respect the activity rule");
        self.gp.mean(&p).as_f64()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SensitivityError {
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("'{name}' is nested under '{parent}'; use a conditional or interaction effect with '{parent}' fixed to '{level}'")]
    NestedNeedsParent {
        name: String,
        parent: String,
        level: String,
    },
    #[error(
        "'{var1}' and '{var2}' are nested under different levels of branch '{parent}' and are never active together"
    )]
    IncompatibleNesting { var1: String, var2: String, parent: String },
    #[error("'{name}': grid value {value} is not in the variable's range or levels")]
    BadGridValue { name: String, value: String },
    #[error("empty grid for '{0}'")]
    EmptyGrid(String),
    #[error("interaction needs two different variables (got '{0}' twice)")]
    SameVariable(String),
    #[error("n_mc must be at least 2")]
    TooFewSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub variable: String,
    /// Fixed `(variable, value)` for interaction / conditional curves.
    pub conditioning: Option<(String, Value)>,
    pub grid: Vec<Value>,
    pub values: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n_mc: usize,
    pub measure: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarRef {
    Shared(usize),
    Branch(usize),
    Nested(usize),
}

fn resolve(space: &SearchSpace, name: &str) -> Result<VarRef, SensitivityError> {
    space
        .quant_index(name)
        .map(VarRef::Shared)
        .or_else(|| space.branch_index(name).map(VarRef::Branch))
        .or_else(|| space.nested_index(name).map(VarRef::Nested))
        .ok_or_else(|| SensitivityError::UnknownVariable(name.into()))
}

fn check_value(space: &SearchSpace, var: VarRef, name: &str, v: &Value) -> Result<(), SensitivityError> {
    let ok = match (var, v) {
        (VarRef::Shared(i), Value::Real(x)) => space.quant()[i].interval().contains(*x),
        (VarRef::Branch(k), Value::Level(l)) => space.branch()[k].level_index(l).is_some(),
        (VarRef::Nested(j), v) => match (&space.nested()[j].kind, v) {
            (NestedKind::Qualitative { levels }, Value::Level(l)) => levels.contains(l),
            (NestedKind::Quantitative { .. }, Value::Real(x)) => {
                space.nested()[j].interval().expect("quantitative").contains(*x)
            }
            _ => false,
        },
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(SensitivityError::BadGridValue {
            name: name.into(),
            value: v.to_string(),
        })
    }
}

/// Evenly spaced grid over a quantitative variable (in model scale), or all
/// levels of a categorical one.
pub fn default_grid(space: &SearchSpace, name: &str, points: usize) -> Result<Vec<Value>, SensitivityError> {
    let points = points.max(2);
    Ok(match resolve(space, name)? {
        VarRef::Shared(i) => {
            let iv = space.quant()[i].interval();
            (0..points)
                .map(|p| Value::Real(iv.from_unit(p as f64 / (points - 1) as f64)))
                .collect()
        }
        VarRef::Branch(k) => space.branch()[k].levels.iter().cloned().map(Value::Level).collect(),
        VarRef::Nested(j) => match &space.nested()[j].kind {
            NestedKind::Qualitative { levels } => levels.iter().cloned().map(Value::Level).collect(),
            NestedKind::Quantitative { .. } => {
                let iv = space.nested()[j].interval().expect("quantitative");
                (0..points)
                    .map(|p| Value::Real(iv.from_unit(p as f64 / (points - 1) as f64)))
                    .collect()
            }
        },
    })
}

/// Conditioning values: `count` quantiles `(i + ½)/count` of the uniform
/// measure for quantitative variables, every level for categorical ones.
pub fn default_levels(space: &SearchSpace, name: &str, count: usize) -> Result<Vec<Value>, SensitivityError> {
    let count = count.max(1);
    let quantiles = |iv: crate::space::Interval| -> Vec<Value> {
        (0..count)
            .map(|i| Value::Real(iv.from_unit((i as f64 + 0.5) / count as f64)))
            .collect()
    };
    Ok(match resolve(space, name)? {
        VarRef::Shared(i) => quantiles(space.quant()[i].interval()),
        VarRef::Nested(j) if !space.nested()[j].is_qualitative() => {
            quantiles(space.nested()[j].interval().expect("quantitative"))
        }
        _ => default_grid(space, name, 2)?,
    })
}

/// One draw of the reference measure with some variables held fixed. Always
/// consumes the same number of random values regardless of `fixed`, so draws
/// line up across grid points.
fn draw<R: Rng + ?Sized>(space: &SearchSpace, fixed: &[(VarRef, &Value)], rng: &mut R) -> Configuration {
    let u_quant: Vec<f64> = (0..space.quant().len()).map(|_| rng.random()).collect();
    let u_branch: Vec<f64> = (0..space.branch().len()).map(|_| rng.random()).collect();
    let u_nested: Vec<f64> = (0..space.nested().len()).map(|_| rng.random()).collect();
    let fixed_of = |r: VarRef| fixed.iter().find(|(v, _)| *v == r).map(|(_, x)| *x);

    let mut cfg = Configuration::new();
    for (i, q) in space.quant().iter().enumerate() {
        let v = fixed_of(VarRef::Shared(i))
            .cloned()
            .unwrap_or_else(|| Value::Real(q.interval().from_unit(u_quant[i])));
        cfg.set(&q.name, v);
    }
    let mut branch = Vec::with_capacity(space.branch().len());
    for (k, b) in space.branch().iter().enumerate() {
        let forced = fixed_of(VarRef::Branch(k))
            .and_then(|v| match v {
                Value::Level(l) => b.level_index(l),
                _ => None,
            })
            .or_else(|| {
                // a fixed nested variable pins its parent to the enabling level
                fixed.iter().find_map(|(r, _)| match *r {
                    VarRef::Nested(j) if space.parent_of(j).0 == k => Some(space.parent_of(j).1),
                    _ => None,
                })
            });
        let level = forced.unwrap_or_else(|| ((u_branch[k] * b.levels.len() as f64) as usize).min(b.levels.len() - 1));
        branch.push(level);
        cfg.set(&b.name, Value::Level(b.levels[level].clone()));
    }
    for (j, v) in space.nested().iter().enumerate() {
        if !space.is_active(j, &branch) {
            continue;
        }
        let value = fixed_of(VarRef::Nested(j)).cloned().unwrap_or_else(|| match &v.kind {
            NestedKind::Qualitative { levels } => {
                let l = ((u_nested[j] * levels.len() as f64) as usize).min(levels.len() - 1);
                Value::Level(levels[l].clone())
            }
            NestedKind::Quantitative { .. } => Value::Real(v.interval().expect("quantitative").from_unit(u_nested[j])),
        });
        cfg.set(&v.name, value);
    }
    cfg
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mc_average<S: Surface + ?Sized>(
    surface: &S,
    space: &SearchSpace,
    fixed: &[(VarRef, &Value)],
    n_mc: usize,
    seed: u64,
) -> (f64, f64) {
    let mut r = rng::seeded(seed);
    let values: Vec<f64> = (0..n_mc).map(|_| surface.value(&draw(space, fixed, &mut r))).collect();
    mean_and_se(&values)
}

/// Monte Carlo estimate of `E[f(x)]` under the reference measure, with its
/// standard error.
pub fn grand_mean<S: Surface + ?Sized>(
    surface: &S,
    space: &SearchSpace,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64), SensitivityError> {
    if n_mc < 2 {
        return Err(SensitivityError::TooFewSamples);
    }
    Ok(mc_average(surface, space, &[], n_mc, seed))
}

/// `E[f | var = g, conditions]` for each grid value. Nested variables
/// (either `var` or among `conditions`) pin their parent branch to the
/// enabling level.
pub fn conditional_effect<S: Surface + ?Sized>(
    surface: &S,
    space: &SearchSpace,
    var: &str,
    grid: &[Value],
    conditions: &[(String, Value)],
    n_mc: usize,
    seed: u64,
) -> Result<EffectCurve, SensitivityError> {
    if n_mc < 2 {
        return Err(SensitivityError::TooFewSamples);
    }
    if grid.is_empty() {
        return Err(SensitivityError::EmptyGrid(var.into()));
    }
    let target = resolve(space, var)?;
    for g in grid {
        check_value(space, target, var, g)?;
    }
    let mut cond = Vec::with_capacity(conditions.len());
    for (name, v) in conditions {
        if name == var {
            return Err(SensitivityError::SameVariable(name.clone()));
        }
        let r = resolve(space, name)?;
        check_value(space, r, name, v)?;
        cond.push((r, v));
    }
    // every pinned branch level must agree
    let mut pins: Vec<(usize, usize, &str)> = Vec::new();
    let mut all: Vec<(VarRef, &str, Option<&Value>)> = vec![(target, var, None)];
    all.extend(
        cond.iter()
            .zip(conditions)
            .map(|((r, v), (n, _))| (*r, n.as_str(), Some(*v))),
    );
    for (r, name, v) in &all {
        let pin = match (r, v) {
            (VarRef::Nested(j), _) => Some(space.parent_of(*j)),
            (VarRef::Branch(k), Some(Value::Level(l))) => space.branch()[*k].level_index(l).map(|b| (*k, b)),
            _ => None,
        };
        if let Some((k, b)) = pin {
            if let Some(&(_, b0, other)) = pins.iter().find(|p| p.0 == k) {
                if b0 != b {
                    return Err(SensitivityError::IncompatibleNesting {
                        var1: other.into(),
                        var2: (*name).into(),
                        parent: space.branch()[k].name.clone(),
                    });
                }
            } else {
                pins.push((k, b, name));
            }
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut std_err = Vec::with_capacity(grid.len());
    for g in grid {
        let mut fixed = cond.clone();
        fixed.push((target, g));
        let (m, se) = mc_average(surface, space, &fixed, n_mc, seed);
        values.push(m);
        std_err.push(se);
    }
    Ok(EffectCurve {
        variable: var.into(),
        conditioning: conditions.first().cloned(),
        grid: grid.to_vec(),
        values,
        std_err,
        n_mc,
        measure: MEASURE.into(),
    })
}

/// Main effect of a shared quantitative or branch variable.
pub fn main_effect<S: Surface + ?Sized>(
    surface: &S,
    space: &SearchSpace,
    var: &str,
    grid: &[Value],
    n_mc: usize,
    seed: u64,
) -> Result<EffectCurve, SensitivityError> {
    if let VarRef::Nested(j) = resolve(space, var)? {
        let (k, b) = space.parent_of(j);
        return Err(SensitivityError::NestedNeedsParent {
            name: var.into(),
            parent: space.branch()[k].name.clone(),
            level: space.branch()[k].levels[b].clone(),
        });
    }
    conditional_effect(surface, space, var, grid, &[], n_mc, seed)
}

/// One curve over `grid1` for each fixed value of `var2`.
#[allow(clippy::too_many_arguments)]
pub fn interaction_effect<S: Surface + ?Sized>(
    surface: &S,
    space: &SearchSpace,
    var1: &str,
    var2: &str,
    grid1: &[Value],
    levels2: &[Value],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<EffectCurve>, SensitivityError> {
    if var1 == var2 {
        return Err(SensitivityError::SameVariable(var1.into()));
    }
    if levels2.is_empty() {
        return Err(SensitivityError::EmptyGrid(var2.into()));
    }
    let (r1, r2) = (resolve(space, var1)?, resolve(space, var2)?);
    if let (VarRef::Nested(a), VarRef::Nested(b)) = (r1, r2) {
        let (pa, pb) = (space.parent_of(a), space.parent_of(b));
        if pa.0 == pb.0 && pa.1 != pb.1 {
            return Err(SensitivityError::IncompatibleNesting {
                var1: var1.into(),
                var2: var2.into(),
                parent: space.branch()[pa.0].name.clone(),
            });
        }
    }
    levels2
        .iter()
        .map(|l| {
            conditional_effect(
                surface,
                space,
                var1,
                grid1,
                &[(var2.to_string(), l.clone())],
                n_mc,
                seed,
            )
        })
        .collect()
}

pub const EFFECTS_HEADER: [&str; 6] = [
    "variable",
    "grid_value",
    "conditioning_level",
    "mean",
    "std_err",
    "n_mc",
];

/// Rows `variable,grid_value,conditioning_level,mean,std_err,n_mc`; the
/// conditioning column reads `name=value` or is empty.
pub fn write_csv<W: Write>(curves: &[EffectCurve], w: &mut csv::Writer<W>) -> csv::Result<()> {
    w.write_record(EFFECTS_HEADER)?;
    for c in curves {
        let cond = c
            .conditioning
            .as_ref()
            .map(|(n, v)| format!("{n}={v}"))
            .unwrap_or_default();
        for ((g, m), se) in c.grid.iter().zip(&c.values).zip(&c.std_err) {
            w.write_record([
                c.variable.clone(),
                g.to_string(),
                cond.clone(),
                m.to_string(),
                se.to_string(),
                c.n_mc.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Dataset, Sigma2Mode, VarianceForm};
    use crate::kernel::{KernelParams, MaternNu};
    use crate::space::{BranchVar, NestedVar, QuantVar};

    fn space() -> SearchSpace {
        SearchSpace::new(
            vec![QuantVar::new("x", 0.0, 1.0)],
            vec![BranchVar::new("z", ["a", "b"])],
            vec![
                NestedVar::quantitative("r", "z", "a", 0.0, 2.0),
                NestedVar::qualitative("q", "z", "b", ["1", "2"]),
                NestedVar::qualitative("s", "z", "a", ["1", "2"]),
            ],
        )
        .unwrap()
    }

    fn constant_gp(space: &SearchSpace, c: f64) -> TrainedGp<f64> {
        let design = space.sample_initial_design(6, 1);
        let d = Dataset::from_observations(space, design.iter().map(|cfg| (cfg, c))).unwrap();
        let p = KernelParams::uniform(space, 1.0, 0.5, 0.2, MaternNu::FiveHalves);
        TrainedGp::with_params(d, p, 0.0, 1e-8, Sigma2Mode::Mle, VarianceForm::Simple).unwrap()
    }

    #[test]
    fn constant_surface_is_flat() {
        let s = space();
        let model = constant_gp(&s, 2.5);
        let gp = PosteriorMean { gp: &model, space: &s };
        let grid = default_grid(&s, "x", 5).unwrap();
        let c = main_effect(&gp, &s, "x", &grid, 50, 0).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-6));
        let c = main_effect(&gp, &s, "z", &default_grid(&s, "z", 0).unwrap(), 50, 0).unwrap();
        assert_eq!(c.grid.len(), 2);
    }

    #[test]
    fn errors() {
        let s = space();
        let model = constant_gp(&s, 1.0);
        let gp = PosteriorMean { gp: &model, space: &s };
        let e = main_effect(&gp, &s, "r", &[Value::Real(1.0)], 10, 0).unwrap_err();
        assert!(matches!(e, SensitivityError::NestedNeedsParent { .. }));
        assert!(e.to_string().contains("'z' fixed to 'a'"));
        assert!(matches!(
            main_effect(&gp, &s, "nope", &[Value::Real(1.0)], 10, 0),
            Err(SensitivityError::UnknownVariable(_))
        ));
        assert!(matches!(
            main_effect(&gp, &s, "x", &[Value::Real(3.0)], 10, 0),
            Err(SensitivityError::BadGridValue { .. })
        ));
        let e = interaction_effect(
            &gp,
            &s,
            "r",
            "q",
            &[Value::Real(1.0)],
            &[Value::Level("1".into())],
            10,
            0,
        )
        .unwrap_err();
        assert!(matches!(e, SensitivityError::IncompatibleNesting { .. }));
        // nested under 'a' while the branch itself is fixed to 'b'
        let e = interaction_effect(
            &gp,
            &s,
            "r",
            "z",
            &[Value::Real(1.0)],
            &[Value::Level("b".into())],
            10,
            0,
        )
        .unwrap_err();
        assert!(matches!(e, SensitivityError::IncompatibleNesting { .. }));
    }

    #[test]
    fn nested_conditioning_respects_activity() {
        let s = space();
        let fixed_r = Value::Real(1.5);
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let cfg = draw(&s, &[(VarRef::Nested(0), &fixed_r)], &mut r);
            assert!(s.validate(&cfg).is_empty());
            assert_eq!(cfg.level("z"), Some("a"));
            assert_eq!(cfg.real("r"), Some(1.5));
        }
        let model = constant_gp(&s, 1.0);
        let gp = PosteriorMean { gp: &model, space: &s };
        let curves = interaction_effect(
            &gp,
            &s,
            "r",
            "s",
            &[Value::Real(0.0), Value::Real(2.0)],
            &[Value::Level("1".into()), Value::Level("2".into())],
            20,
            0,
        )
        .unwrap();
        assert_eq!(curves.len(), 2);
    }

    #[test]
    fn seeded_and_csv() {
        let s = space();
        let model = constant_gp(&s, 1.0);
        let gp = PosteriorMean { gp: &model, space: &s };
        let grid = default_grid(&s, "x", 3).unwrap();
        let a = main_effect(&gp, &s, "x", &grid, 20, 9).unwrap();
        assert_eq!(a, main_effect(&gp, &s, "x", &grid, 20, 9).unwrap());
        let mut w = csv::Writer::from_writer(Vec::new());
        write_csv(&[a], &mut w).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert!(text.starts_with("variable,grid_value,conditioning_level,mean,std_err,n_mc\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn default_levels_are_quantiles() {
        let s = space();
        let l = default_levels(&s, "x", 5).unwrap();
        assert_eq!(l.len(), 5);
        assert_eq!(l[2], Value::Real(0.5));
        assert_eq!(default_levels(&s, "q", 5).unwrap().len(), 2);
    }
}

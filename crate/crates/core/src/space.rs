//! Mixed search spaces with branching (categorical) variables and variables
//! nested under one level of a branch.
//!
//! A [`SearchSpace`] owns three lists: shared quantitative variables that are
//! active everywhere, branch variables, and nested variables that exist only
//! when their parent branch takes `parent_level`. Nested variables may be
//! quantitative or qualitative. Qualitative nested variables together with
//! the branch variables span a finite set of *categorical combos*; the GP
//! kernel and the acquisition optimizer both work combo by combo.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{EncodedPoint, NestedCoord};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log10,
}

/// A real interval with an optional log10 transform. Model coordinates are
/// the transformed value mapped affinely onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl Interval {
    fn transformed(&self) -> (f64, f64) {
        match self.scale {
            Scale::Linear => (self.lower, self.upper),
            Scale::Log10 => (self.lower.log10(), self.upper.log10()),
        }
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        let (lo, hi) = self.transformed();
        let t = match self.scale {
            Scale::Linear => x,
            Scale::Log10 => x.log10(),
        };
        (t - lo) / (hi - lo)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        let (lo, hi) = self.transformed();
        let t = lo + u * (hi - lo);
        let x = match self.scale {
            Scale::Linear => t,
            Scale::Log10 => 10f64.powf(t),
        };
        x.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl QuantVar {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Linear,
        }
    }

    pub fn log10(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            scale: Scale::Log10,
            ..Self::new(name, lower, upper)
        }
    }

    pub fn interval(&self) -> Interval {
        Interval {
            lower: self.lower,
            upper: self.upper,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchVar {
    pub name: String,
    pub levels: Vec<String>,
}

impl BranchVar {
    pub fn new<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum NestedKind {
    Qualitative {
        levels: Vec<String>,
    },
    Quantitative {
        lower: f64,
        upper: f64,
        #[serde(default)]
        scale: Scale,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedVar {
    pub name: String,
    pub parent: String,
    pub parent_level: String,
    #[serde(flatten)]
    pub kind: NestedKind,
}

impl NestedVar {
    pub fn qualitative<S: Into<String>>(
        name: impl Into<String>,
        parent: impl Into<String>,
        parent_level: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            parent: parent.into(),
            parent_level: parent_level.into(),
            kind: NestedKind::Qualitative {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn quantitative(
        name: impl Into<String>,
        parent: impl Into<String>,
        parent_level: impl Into<String>,
        lower: f64,
        upper: f64,
    ) -> Self {
        Self {
            name: name.into(),
            parent: parent.into(),
            parent_level: parent_level.into(),
            kind: NestedKind::Quantitative {
                lower,
                upper,
                scale: Scale::Linear,
            },
        }
    }

    pub fn is_qualitative(&self) -> bool {
        matches!(self.kind, NestedKind::Qualitative { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            NestedKind::Qualitative { levels } => Some(levels),
            NestedKind::Quantitative { .. } => None,
        }
    }

    pub fn interval(&self) -> Option<Interval> {
        match self.kind {
            NestedKind::Quantitative { lower, upper, scale } => Some(Interval { lower, upper, scale }),
            NestedKind::Qualitative { .. } => None,
        }
    }
}

/// Plain declaration as written in configuration files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDecl {
    #[serde(default)]
    pub quant: Vec<QuantVar>,
    #[serde(default)]
    pub branch: Vec<BranchVar>,
    #[serde(default)]
    pub nested: Vec<NestedVar>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("{field}: variable name must not be empty")]
    EmptyName { field: String },
    #[error("{field}: duplicate variable name '{name}'")]
    DuplicateName { field: String, name: String },
    #[error("{field} '{name}': lower ({lower}) must be < upper ({upper})")]
    Bounds {
        field: String,
        name: String,
        lower: f64,
        upper: f64,
    },
    #[error("{field} '{name}': bounds must be finite")]
    NonFinite { field: String, name: String },
    #[error("{field} '{name}': log10 scale requires lower > 0 (got {lower})")]
    LogNonPositive { field: String, name: String, lower: f64 },
    #[error("{field} '{name}': needs at least 2 levels (got {count})")]
    TooFewLevels { field: String, name: String, count: usize },
    #[error("{field} '{name}': duplicate level '{level}'")]
    DuplicateLevel { field: String, name: String, level: String },
    #[error("{field} '{name}': parent '{parent}' is not a branch variable")]
    UnknownParent {
        field: String,
        name: String,
        parent: String,
    },
    #[error("{field} '{name}': '{level}' is not a level of branch '{parent}'")]
    UnknownParentLevel {
        field: String,
        name: String,
        parent: String,
        level: String,
    },
}

/// One full assignment of the branch levels plus the active qualitative
/// nested levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combo {
    /// Level index per branch variable.
    pub branch: Vec<usize>,
    /// Level index per nested variable; `Some` only for active qualitative ones.
    pub nested: Vec<Option<usize>>,
}

/// Which variable a model-scale quantitative coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantDim {
    Shared(usize),
    Nested(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceDecl", into = "SpaceDecl")]
pub struct SearchSpace {
    quant: Vec<QuantVar>,
    branch: Vec<BranchVar>,
    nested: Vec<NestedVar>,
    /// (branch index, level index) enabling each nested variable.
    parents: Vec<(usize, usize)>,
    combos: Vec<Combo>,
}

impl From<SearchSpace> for SpaceDecl {
    fn from(s: SearchSpace) -> Self {
        SpaceDecl {
            quant: s.quant,
            branch: s.branch,
            nested: s.nested,
        }
    }
}

impl TryFrom<SpaceDecl> for SearchSpace {
    type Error = SpaceError;

    fn try_from(d: SpaceDecl) -> Result<Self, SpaceError> {
        SearchSpace::new(d.quant, d.branch, d.nested)
    }
}

fn check_levels(field: &str, name: &str, levels: &[String]) -> Result<(), SpaceError> {
    if levels.len() < 2 {
        return Err(SpaceError::TooFewLevels {
            field: field.into(),
            name: name.into(),
            count: levels.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for l in levels {
        if !seen.insert(l.as_str()) {
            return Err(SpaceError::DuplicateLevel {
                field: field.into(),
                name: name.into(),
                level: l.clone(),
            });
        }
    }
    Ok(())
}

fn check_interval(field: &str, name: &str, iv: Interval) -> Result<(), SpaceError> {
    if !iv.lower.is_finite() || !iv.upper.is_finite() {
        return Err(SpaceError::NonFinite {
            field: field.into(),
            name: name.into(),
        });
    }
    if iv.lower >= iv.upper {
        return Err(SpaceError::Bounds {
            field: field.into(),
            name: name.into(),
            lower: iv.lower,
            upper: iv.upper,
        });
    }
    if iv.scale == Scale::Log10 && iv.lower <= 0.0 {
        return Err(SpaceError::LogNonPositive {
            field: field.into(),
            name: name.into(),
            lower: iv.lower,
        });
    }
    Ok(())
}

impl SearchSpace {
    pub fn new(quant: Vec<QuantVar>, branch: Vec<BranchVar>, nested: Vec<NestedVar>) -> Result<Self, SpaceError> {
        let mut names = BTreeSet::new();
        let mut claim = |field: String, name: &str| {
            if name.is_empty() {
                Err(SpaceError::EmptyName { field })
            } else if !names.insert(name.to_string()) {
                Err(SpaceError::DuplicateName {
                    field,
                    name: name.into(),
                })
            } else {
                Ok(())
            }
        };
        for (i, q) in quant.iter().enumerate() {
            let field = format!("quant[{i}]");
            claim(field.clone(), &q.name)?;
            check_interval(&field, &q.name, q.interval())?;
        }
        for (i, b) in branch.iter().enumerate() {
            let field = format!("branch[{i}]");
            claim(field.clone(), &b.name)?;
            check_levels(&field, &b.name, &b.levels)?;
        }
        let mut parents = Vec::with_capacity(nested.len());
        for (i, v) in nested.iter().enumerate() {
            let field = format!("nested[{i}]");
            claim(field.clone(), &v.name)?;
            match &v.kind {
                NestedKind::Qualitative { levels } => check_levels(&field, &v.name, levels)?,
                NestedKind::Quantitative { .. } => {
                    check_interval(&field, &v.name, v.interval().expect("quantitative"))?
                }
            }
            let k = branch
                .iter()
                .position(|b| b.name == v.parent)
                .ok_or_else(|| SpaceError::UnknownParent {
                    field: field.clone(),
                    name: v.name.clone(),
                    parent: v.parent.clone(),
                })?;
            let b = branch[k]
                .level_index(&v.parent_level)
                .ok_or_else(|| SpaceError::UnknownParentLevel {
                    field: field.clone(),
                    name: v.name.clone(),
                    parent: v.parent.clone(),
                    level: v.parent_level.clone(),
                })?;
            parents.push((k, b));
        }
        let mut space = Self {
            quant,
            branch,
            nested,
            parents,
            combos: Vec::new(),
        };
        space.combos = space.build_combos();
        Ok(space)
    }

    pub fn from_decl(decl: SpaceDecl) -> Result<Self, SpaceError> {
        decl.try_into()
    }

    pub fn quant(&self) -> &[QuantVar] {
        &self.quant
    }

    pub fn branch(&self) -> &[BranchVar] {
        &self.branch
    }

    pub fn nested(&self) -> &[NestedVar] {
        &self.nested
    }

    /// `(branch index, level index)` that enables nested variable `j`.
    pub fn parent_of(&self, j: usize) -> (usize, usize) {
        self.parents[j]
    }

    /// Total number of declared variables, `d + q + Σ m_k`.
    pub fn dimension(&self) -> usize {
        self.quant.len() + self.branch.len() + self.nested.len()
    }

    /// Number of nested variables under `(branch k, level b)`.
    pub fn nested_count(&self, k: usize, b: usize) -> usize {
        self.parents.iter().filter(|&&p| p == (k, b)).count()
    }

    pub fn nested_index(&self, name: &str) -> Option<usize> {
        self.nested.iter().position(|v| v.name == name)
    }

    pub fn quant_index(&self, name: &str) -> Option<usize> {
        self.quant.iter().position(|v| v.name == name)
    }

    pub fn branch_index(&self, name: &str) -> Option<usize> {
        self.branch.iter().position(|v| v.name == name)
    }

    /// Whether nested variable `j` is active under the branch assignment.
    #[inline]
    pub fn is_active(&self, j: usize, branch_levels: &[usize]) -> bool {
        let (k, b) = self.parents[j];
        branch_levels[k] == b
    }

    fn build_combos(&self) -> Vec<Combo> {
        let mut out = Vec::new();
        let mut branch = vec![0usize; self.branch.len()];
        loop {
            // qualitative nested variables active under this branch assignment
            let active: Vec<(usize, usize)> = self
                .nested
                .iter()
                .enumerate()
                .filter(|&(j, _)| self.is_active(j, &branch))
                .filter_map(|(j, v)| v.levels().map(|l| (j, l.len())))
                .collect();
            let mut digits = vec![0usize; active.len()];
            loop {
                let mut nested = vec![None; self.nested.len()];
                for (&(j, _), &d) in active.iter().zip(&digits) {
                    nested[j] = Some(d);
                }
                out.push(Combo {
                    branch: branch.clone(),
                    nested,
                });
                if !increment(&mut digits, |i| active[i].1) {
                    break;
                }
            }
            if !increment(&mut branch, |k| self.branch[k].levels.len()) {
                break;
            }
        }
        out
    }

    /// All categorical combos, in lexicographic order of branch levels then
    /// nested levels. Its length is the combo count `L`.
    pub fn combos(&self) -> &[Combo] {
        &self.combos
    }

    pub fn combo_count(&self) -> usize {
        self.combos.len()
    }

    pub fn combo_index(&self, combo: &Combo) -> Option<usize> {
        self.combos.binary_search(combo).ok()
    }

    /// The model-scale quantitative coordinates that are active in a combo:
    /// all shared variables, then active quantitative nested variables.
    pub fn quant_dims(&self, combo: usize) -> Vec<QuantDim> {
        let branch = &self.combos[combo].branch;
        (0..self.quant.len())
            .map(QuantDim::Shared)
            .chain(
                self.nested
                    .iter()
                    .enumerate()
                    .filter(|&(j, v)| !v.is_qualitative() && self.is_active(j, branch))
                    .map(|(j, _)| QuantDim::Nested(j)),
            )
            .collect()
    }

    fn dim_interval(&self, dim: QuantDim) -> Interval {
        match dim {
            QuantDim::Shared(i) => self.quant[i].interval(),
            QuantDim::Nested(j) => self.nested[j].interval().expect("quantitative nested"),
        }
    }

    fn dim_name(&self, dim: QuantDim) -> &str {
        match dim {
            QuantDim::Shared(i) => &self.quant[i].name,
            QuantDim::Nested(j) => &self.nested[j].name,
        }
    }

    /// Builds the configuration for `combo` with the active quantitative
    /// coordinates given in unit model scale (ordered as [`Self::quant_dims`]).
    pub fn assemble(&self, combo: usize, unit: &[f64]) -> Configuration {
        let dims = self.quant_dims(combo);
        assert_eq!(dims.len(), unit.len(), "unit coordinate count mismatch");
        let c = &self.combos[combo];
        let mut cfg = Configuration::new();
        for (dim, &u) in dims.iter().zip(unit) {
            let iv = self.dim_interval(*dim);
            cfg.set(self.dim_name(*dim), Value::Real(iv.from_unit(u.clamp(0.0, 1.0))));
        }
        for (k, b) in self.branch.iter().enumerate() {
            cfg.set(&b.name, Value::Level(b.levels[c.branch[k]].clone()));
        }
        for (j, v) in self.nested.iter().enumerate() {
            if let (Some(l), Some(levels)) = (c.nested[j], v.levels()) {
                cfg.set(&v.name, Value::Level(levels[l].clone()));
            }
        }
        cfg
    }

    /// Encoded point for `combo` with unit model-scale coordinates, without
    /// the detour through a [`Configuration`].
    pub fn point_from_unit<T: Scalar>(&self, combo: usize, unit: &[f64]) -> EncodedPoint<T> {
        let dims = self.quant_dims(combo);
        let c = &self.combos[combo];
        let mut quant = vec![T::zero(); self.quant.len()];
        let mut nested: Vec<NestedCoord<T>> = c
            .nested
            .iter()
            .map(|l| match l {
                Some(l) => NestedCoord::Level(*l),
                None => NestedCoord::Inactive,
            })
            .collect();
        for (dim, &u) in dims.iter().zip(unit) {
            let u = T::of(u.clamp(0.0, 1.0));
            match *dim {
                QuantDim::Shared(i) => quant[i] = u,
                QuantDim::Nested(j) => nested[j] = NestedCoord::Real(u),
            }
        }
        EncodedPoint {
            quant,
            combo,
            branch: c.branch.clone(),
            nested,
        }
    }

    /// Model-scale coordinates of a valid configuration. Fails with the
    /// validation report when the configuration is not valid.
    pub fn encode<T: Scalar>(&self, cfg: &Configuration) -> Result<EncodedPoint<T>, Vec<Violation>> {
        let violations = self.validate(cfg);
        if !violations.is_empty() {
            return Err(violations);
        }
        let combo = self.combo_of(cfg).expect("valid configuration has a combo");
        let unit: Vec<f64> = self
            .quant_dims(combo)
            .into_iter()
            .map(|dim| {
                let x = cfg.real(self.dim_name(dim)).expect("validated");
                self.dim_interval(dim).to_unit(x)
            })
            .collect();
        Ok(self.point_from_unit(combo, &unit))
    }

    /// Inverse of [`Self::encode`] up to floating-point rounding of the
    /// scale transform.
    pub fn decode<T: Scalar>(&self, p: &EncodedPoint<T>) -> Configuration {
        let unit: Vec<f64> = self
            .quant_dims(p.combo)
            .into_iter()
            .map(|dim| match dim {
                QuantDim::Shared(i) => p.quant[i].as_f64(),
                QuantDim::Nested(j) => match p.nested[j] {
                    NestedCoord::Real(u) => u.as_f64(),
                    _ => unreachable!("active quantitative nested coordinate"),
                },
            })
            .collect();
        self.assemble(p.combo, &unit)
    }

    /// Combo index of a configuration whose categorical part is valid.
    pub fn combo_of(&self, cfg: &Configuration) -> Option<usize> {
        let branch: Vec<usize> = self
            .branch
            .iter()
            .map(|b| cfg.level(&b.name).and_then(|l| b.level_index(l)))
            .collect::<Option<_>>()?;
        let nested: Vec<Option<usize>> = self
            .nested
            .iter()
            .enumerate()
            .map(|(j, v)| match v.levels() {
                Some(levels) if self.is_active(j, &branch) => {
                    cfg.level(&v.name).and_then(|l| levels.iter().position(|x| x == l))
                }
                _ => None,
            })
            .collect();
        self.combo_index(&Combo { branch, nested })
    }

    /// Every violated invariant of `cfg`; empty means valid.
    pub fn validate(&self, cfg: &Configuration) -> Vec<Violation> {
        let mut out = Vec::new();
        let known: BTreeSet<&str> = self
            .quant
            .iter()
            .map(|v| v.name.as_str())
            .chain(self.branch.iter().map(|v| v.name.as_str()))
            .chain(self.nested.iter().map(|v| v.name.as_str()))
            .collect();
        for name in cfg.values.keys() {
            if !known.contains(name.as_str()) {
                out.push(Violation::UnknownName { name: name.clone() });
            }
        }
        let check_real = |out: &mut Vec<Violation>, name: &str, iv: Interval| match cfg.get(name) {
            None => out.push(Violation::Missing { name: name.into() }),
            Some(Value::Level(_)) => out.push(Violation::WrongType {
                name: name.into(),
                expected: "number",
            }),
            Some(&Value::Real(x)) => {
                if !x.is_finite() || !iv.contains(x) {
                    out.push(Violation::OutOfBounds {
                        name: name.into(),
                        value: x,
                        lower: iv.lower,
                        upper: iv.upper,
                    })
                }
            }
        };
        let check_level = |out: &mut Vec<Violation>, name: &str, levels: &[String]| -> Option<usize> {
            match cfg.get(name) {
                None => {
                    out.push(Violation::Missing { name: name.into() });
                    None
                }
                Some(Value::Real(_)) => {
                    out.push(Violation::WrongType {
                        name: name.into(),
                        expected: "level label",
                    });
                    None
                }
                Some(Value::Level(l)) => {
                    let idx = levels.iter().position(|x| x == l);
                    if idx.is_none() {
                        out.push(Violation::UnknownLevel {
                            name: name.into(),
                            level: l.clone(),
                        });
                    }
                    idx
                }
            }
        };
        for q in &self.quant {
            check_real(&mut out, &q.name, q.interval());
        }
        let branch: Vec<Option<usize>> = self
            .branch
            .iter()
            .map(|b| check_level(&mut out, &b.name, &b.levels))
            .collect();
        for (j, v) in self.nested.iter().enumerate() {
            let (k, b) = self.parents[j];
            let Some(chosen) = branch[k] else {
                // parent invalid: activity is undefined, already reported
                continue;
            };
            let present = cfg.get(&v.name).is_some();
            if chosen != b {
                if present {
                    out.push(Violation::InactiveNested {
                        name: v.name.clone(),
                        parent: v.parent.clone(),
                    });
                }
                continue;
            }
            match &v.kind {
                NestedKind::Qualitative { levels } => {
                    check_level(&mut out, &v.name, levels);
                }
                NestedKind::Quantitative { .. } => check_real(&mut out, &v.name, v.interval().expect("quantitative")),
            }
        }
        out
    }

    /// Randomized Latin hypercube over every quantitative coordinate (shared
    /// and nested) with categorical combos assigned by cycling through a
    /// random permutation of the combos.
    pub fn sample_initial_design(&self, n: usize, seed: u64) -> Vec<Configuration> {
        assert!(n >= 1, "design size must be positive");
        let mut rng = rng::seeded(seed);
        let nested_quant: Vec<usize> = (0..self.nested.len())
            .filter(|&j| !self.nested[j].is_qualitative())
            .collect();
        let columns = self.quant.len() + nested_quant.len();
        let lhd = latin_hypercube(n, columns, &mut rng);
        let mut order: Vec<usize> = (0..self.combo_count()).collect();
        order.shuffle(&mut rng);
        (0..n)
            .map(|i| {
                let combo = order[i % order.len()];
                let unit: Vec<f64> = self
                    .quant_dims(combo)
                    .into_iter()
                    .map(|dim| match dim {
                        QuantDim::Shared(s) => lhd[i][s],
                        QuantDim::Nested(j) => {
                            let col = nested_quant.iter().position(|&x| x == j).expect("nested");
                            lhd[i][self.quant.len() + col]
                        }
                    })
                    .collect();
                self.assemble(combo, &unit)
            })
            .collect()
    }

    /// A configuration with the combo uniform over all `L` combos and
    /// quantitative coordinates uniform in model scale.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let combo = rng.random_range(0..self.combo_count());
        let unit: Vec<f64> = (0..self.quant_dims(combo).len()).map(|_| rng.random::<f64>()).collect();
        self.assemble(combo, &unit)
    }
}

/// Odometer increment; returns false after wrapping the last digit.
fn increment(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radix(i) {
            return true;
        }
        digits[i] = 0;
    }
    false
}

/// `n × dims` randomized Latin hypercube on the unit cube: every column has
/// exactly one point in each stratum `[i/n, (i+1)/n)`.
#[allow(clippy::needless_range_loop)]
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (i, &stratum) in perm.iter().enumerate() {
            out[i][d] = (stratum as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

/// A configuration value: a real for quantitative variables, a level label
/// for categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Real(f64),
    Level(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(x) => write!(f, "{x}"),
            Value::Level(l) => f.write_str(l),
        }
    }
}

/// One point of the search space as a flat `name → value` record. Inactive
/// nested variables are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    values: BTreeMap<String, Value>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: Value) {
        self.values.insert(name.to_string(), value);
    }

    pub fn with_real(mut self, name: &str, x: f64) -> Self {
        self.set(name, Value::Real(x));
        self
    }

    pub fn with_level(mut self, name: &str, level: impl Into<String>) -> Self {
        self.set(name, Value::Level(level.into()));
        self
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        self.values.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn real(&self, name: &str) -> Option<f64> {
        match self.values.get(name) {
            Some(Value::Real(x)) => Some(*x),
            _ => None,
        }
    }

    pub fn level(&self, name: &str) -> Option<&str> {
        match self.values.get(name) {
            Some(Value::Level(l)) => Some(l),
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Violation {
    #[error("unknown variable '{name}'")]
    UnknownName { name: String },
    #[error("missing value for '{name}'")]
    Missing { name: String },
    #[error("'{name}' expects a {expected}")]
    WrongType { name: String, expected: &'static str },
    #[error("'{name}' = {value} outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("'{name}' has unknown level '{level}'")]
    UnknownLevel { name: String, level: String },
    #[error("inactive nested value '{name}' (parent '{parent}' is on another level)")]
    InactiveNested { name: String, parent: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The two-variable synthetic space with `z ∈ {1,2}` and a nested
    /// qualitative `v` whose level set depends on `z`.
    fn bn2d() -> SearchSpace {
        SearchSpace::new(
            vec![QuantVar::new("x1", -10.0, 10.0), QuantVar::new("x2", -5.0, 5.0)],
            vec![BranchVar::new("z", ["1", "2"])],
            vec![
                NestedVar::qualitative("v_z1", "z", "1", ["1", "2", "3"]),
                NestedVar::qualitative("v_z2", "z", "2", ["1", "2"]),
            ],
        )
        .unwrap()
    }

    fn optimum() -> Configuration {
        Configuration::new()
            .with_real("x1", 6.0)
            .with_real("x2", 0.0)
            .with_level("z", "2")
            .with_level("v_z2", "1")
    }

    #[test]
    fn table_two_optimum_is_valid() {
        assert!(bn2d().validate(&optimum()).is_empty());
    }

    #[test]
    fn inactive_nested_value_is_flagged() {
        let cfg = optimum().with_level("v_z1", "1");
        let v = bn2d().validate(&cfg);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::InactiveNested { name, .. } if name == "v_z1"));
    }

    #[test]
    fn closed_interval_bounds() {
        let s = bn2d();
        assert!(s.validate(&optimum().with_real("x1", -10.0)).is_empty());
        assert!(s.validate(&optimum().with_real("x1", 10.0)).is_empty());
        let v = s.validate(&optimum().with_real("x1", 10.000001));
        assert!(matches!(v[0], Violation::OutOfBounds { .. }));
    }

    #[test]
    fn reports_every_problem() {
        let cfg = Configuration::new()
            .with_real("x1", 50.0)
            .with_level("z", "3")
            .with_real("w", 1.0);
        let v = bn2d().validate(&cfg);
        // unknown w, x1 bounds, x2 missing, z unknown level
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn combo_counts() {
        assert_eq!(bn2d().combo_count(), 5);
        let quant_only = SearchSpace::new(vec![QuantVar::new("a", 0.0, 1.0)], vec![], vec![]).unwrap();
        assert_eq!(quant_only.combo_count(), 1);
        assert!(quant_only.combos()[0].branch.is_empty());
        let two = SearchSpace::new(
            vec![],
            vec![BranchVar::new("a", ["x", "y"]), BranchVar::new("b", ["p", "q", "r"])],
            vec![],
        )
        .unwrap();
        assert_eq!(two.combo_count(), 6);
    }

    #[test]
    fn quantitative_nested_does_not_multiply_combos() {
        let s = SearchSpace::new(
            vec![],
            vec![BranchVar::new("net", ["resnet", "mobilenet"])],
            vec![
                NestedVar::qualitative("depth", "net", "resnet", ["18", "34", "50", "101"]),
                NestedVar::quantitative("mult", "net", "mobilenet", 0.0, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(s.combo_count(), 5);
        assert_eq!(s.dimension(), 3);
    }

    #[test]
    fn construction_errors() {
        let e = SearchSpace::new(vec![QuantVar::new("a", 1.0, 1.0)], vec![], vec![]).unwrap_err();
        assert!(matches!(e, SpaceError::Bounds { .. }));
        assert!(e.to_string().contains("quant[0]"));
        let e = SearchSpace::new(vec![QuantVar::log10("lr", 0.0, 1.0)], vec![], vec![]).unwrap_err();
        assert!(matches!(e, SpaceError::LogNonPositive { .. }));
        let e = SearchSpace::new(
            vec![QuantVar::new("a", 0.0, 1.0)],
            vec![BranchVar::new("a", ["x", "y"])],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(e, SpaceError::DuplicateName { .. }));
        let e = SearchSpace::new(vec![], vec![BranchVar::new("a", ["x"])], vec![]).unwrap_err();
        assert!(matches!(e, SpaceError::TooFewLevels { .. }));
        let e = SearchSpace::new(
            vec![],
            vec![BranchVar::new("a", ["x", "y"])],
            vec![NestedVar::qualitative("n", "a", "zz", ["1", "2"])],
        )
        .unwrap_err();
        assert!(matches!(e, SpaceError::UnknownParentLevel { .. }));
        let e = SearchSpace::new(
            vec![],
            vec![BranchVar::new("a", ["x", "y"])],
            vec![NestedVar::qualitative("n", "b", "x", ["1", "2"])],
        )
        .unwrap_err();
        assert!(matches!(e, SpaceError::UnknownParent { .. }));
    }

    #[test]
    fn design_balances_combos() {
        let s = bn2d();
        let design = s.sample_initial_design(10, 3);
        let mut counts = vec![0; s.combo_count()];
        for cfg in &design {
            assert!(s.validate(cfg).is_empty());
            counts[s.combo_of(cfg).unwrap()] += 1;
        }
        assert_eq!(counts, vec![2; 5]);
        assert_eq!(design, s.sample_initial_design(10, 3));
        assert_ne!(design, s.sample_initial_design(10, 4));
    }

    #[test]
    fn single_point_design() {
        let s = bn2d();
        let d = s.sample_initial_design(1, 0);
        assert_eq!(d.len(), 1);
        assert!(s.validate(&d[0]).is_empty());
    }

    #[test]
    fn log_scale_round_trip() {
        let iv = QuantVar::log10("lr", 1e-3, 1.0).interval();
        assert!((iv.to_unit(1e-2) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iv.from_unit(2.0 / 3.0) - 0.1).abs() < 1e-12);
        assert_eq!(iv.from_unit(0.0), 1e-3);
        assert_eq!(iv.from_unit(1.0), 1.0);
    }

    #[test]
    fn encode_decode() {
        let s = bn2d();
        let p: EncodedPoint<f64> = s.encode(&optimum()).unwrap();
        assert_eq!(p.quant, vec![0.8, 0.5]);
        assert_eq!(p.branch, vec![1]);
        assert_eq!(p.nested, vec![NestedCoord::Inactive, NestedCoord::Level(0)]);
        assert_eq!(s.decode(&p), optimum());
        assert!(s.encode::<f64>(&optimum().with_real("x1", 11.0)).is_err());
    }

    #[test]
    fn configuration_json_is_flat() {
        let json = serde_json::to_string(&optimum()).unwrap();
        assert_eq!(json, r#"{"v_z2":"1","x1":6.0,"x2":0.0,"z":"2"}"#);
        let back: Configuration = serde_json::from_str(&json).unwrap();
        assert_eq!(back, optimum());
    }

    #[test]
    fn space_decl_round_trip() {
        let s = bn2d();
        let json = serde_json::to_string(&s).unwrap();
        let back: SearchSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"quant":[{"name":"a","lower":2,"upper":1}]}"#;
        assert!(serde_json::from_str::<SearchSpace>(bad).is_err());
    }
}

//! Independent reference computations shared by the integration tests.
//!
//! Nothing in here calls into the crate's kernel, linear algebra or EI code:
//! kernels are evaluated straight from configurations and all matrix work
//! goes through nalgebra.

#![allow(dead_code)]

use bnopt::kernel::{KernelParams, MaternNu};
use bnopt::space::{BranchVar, Configuration, NestedKind, NestedVar, QuantVar, Scale, SearchSpace, Value};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Random space with `q ≤ 2` branches of `≤ 3` levels, qualitative nested
/// variables with `≤ 4` levels, optional quantitative nested variables and
/// up to two shared quantitative variables.
pub fn random_space<R: Rng + ?Sized>(rng: &mut R, allow_quant_nested: bool) -> SearchSpace {
    let d = rng.random_range(0..=2);
    let quant: Vec<QuantVar> = (0..d)
        .map(|i| {
            if rng.random_bool(0.3) {
                QuantVar::log10(format!("w{i}"), 1e-3, 1.0)
            } else {
                QuantVar::new(format!("w{i}"), -2.0, 3.0)
            }
        })
        .collect();
    let q = rng.random_range(1..=2);
    let mut branch = Vec::new();
    let mut nested = Vec::new();
    for k in 0..q {
        let l = rng.random_range(2..=3);
        let levels: Vec<String> = (0..l).map(|b| format!("b{b}")).collect();
        for (b, level) in levels.iter().enumerate() {
            let m = rng.random_range(0..=2);
            for j in 0..m {
                let name = format!("v{k}_{b}_{j}");
                if allow_quant_nested && rng.random_bool(0.3) {
                    nested.push(NestedVar::quantitative(name, format!("z{k}"), level.clone(), 0.0, 4.0));
                } else {
                    let g = rng.random_range(2..=4);
                    nested.push(NestedVar::qualitative(
                        name,
                        format!("z{k}"),
                        level.clone(),
                        (0..g).map(|i| i.to_string()),
                    ));
                }
            }
        }
        branch.push(BranchVar::new(format!("z{k}"), levels));
    }
    SearchSpace::new(quant, branch, nested).expect("generated space is valid")
}

fn group_factor(space: &SearchSpace, phi: &[f64], members: &[usize], scale: f64) -> f64 {
    members
        .iter()
        .map(|&j| {
            let e = (-phi[j] * scale).exp();
            match space.nested()[j].levels() {
                Some(l) => e + (1.0 - e) / l.len() as f64,
                None => e,
            }
        })
        .product()
}

/// Random parameters inside the validity region. About a quarter of the
/// branch-level groups are pushed onto the boundary of the region.
pub fn random_valid_params<R: Rng + ?Sized>(rng: &mut R, space: &SearchSpace, nu: MaternNu) -> KernelParams<f64> {
    let theta: Vec<f64> = space.quant().iter().map(|_| log_uniform(rng, 1e-2, 1e2)).collect();
    let gamma: Vec<f64> = space.branch().iter().map(|_| log_uniform(rng, 1e-3, 10.0)).collect();
    let mut phi: Vec<f64> = space.nested().iter().map(|_| log_uniform(rng, 1e-3, 10.0)).collect();
    for (k, b) in space.branch().iter().enumerate() {
        let between = (-gamma[k]).exp();
        for level in 0..b.levels.len() {
            let members: Vec<usize> = (0..space.nested().len())
                .filter(|&j| space.parent_of(j) == (k, level))
                .collect();
            if members.is_empty() {
                continue;
            }
            let boundary = rng.random_bool(0.25);
            if group_factor(space, &phi, &members, 1.0) >= between && !boundary {
                continue;
            }
            if group_factor(space, &phi, &members, 1e6) >= between {
                // even huge φ cannot violate the bound here; leave it
                continue;
            }
            // largest common scale t keeping the group valid, by bisection
            let (mut lo, mut hi) = (0.0, 1e6);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if group_factor(space, &phi, &members, mid) >= between {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            for &j in &members {
                phi[j] *= lo;
            }
        }
    }
    KernelParams { theta, gamma, phi, nu }
}

/// Matérn profile written out from its closed form.
pub fn matern(nu: MaternNu, r: f64) -> f64 {
    match nu {
        MaternNu::Half => (-r).exp(),
        MaternNu::ThreeHalves => (1.0 + 3f64.sqrt() * r) * (-3f64.sqrt() * r).exp(),
        MaternNu::FiveHalves => (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-5f64.sqrt() * r).exp(),
    }
}

fn unit(lower: f64, upper: f64, scale: Scale, x: f64) -> f64 {
    match scale {
        Scale::Linear => (x - lower) / (upper - lower),
        Scale::Log10 => (x.log10() - lower.log10()) / (upper.log10() - lower.log10()),
    }
}

/// Kernel evaluated directly from two configurations.
pub fn oracle_kernel(space: &SearchSpace, a: &Configuration, b: &Configuration, p: &KernelParams<f64>) -> f64 {
    let mut quant = 1.0;
    for (i, q) in space.quant().iter().enumerate() {
        let ua = unit(q.lower, q.upper, q.scale, a.real(&q.name).unwrap());
        let ub = unit(q.lower, q.upper, q.scale, b.real(&q.name).unwrap());
        quant *= matern(p.nu, p.theta[i] * (ua - ub).abs());
    }
    let mut log_cat = 0.0;
    for (k, z) in space.branch().iter().enumerate() {
        if a.level(&z.name) != b.level(&z.name) {
            log_cat -= p.gamma[k];
        }
    }
    for (j, v) in space.nested().iter().enumerate() {
        let same_parent =
            a.level(&v.parent) == Some(v.parent_level.as_str()) && b.level(&v.parent) == Some(v.parent_level.as_str());
        if !same_parent {
            continue;
        }
        let d = match &v.kind {
            NestedKind::Qualitative { .. } => f64::from(a.level(&v.name) != b.level(&v.name)),
            NestedKind::Quantitative { lower, upper, scale } => {
                (unit(*lower, *upper, *scale, a.real(&v.name).unwrap())
                    - unit(*lower, *upper, *scale, b.real(&v.name).unwrap()))
                .abs()
            }
        };
        log_cat -= p.phi[j] * d;
    }
    quant * log_cat.exp()
}

pub fn oracle_gram(space: &SearchSpace, cfgs: &[Configuration], p: &KernelParams<f64>, diag: f64) -> DMatrix<f64> {
    let n = cfgs.len();
    DMatrix::from_fn(n, n, |i, j| {
        oracle_kernel(space, &cfgs[i], &cfgs[j], p) + if i == j { diag } else { 0.0 }
    })
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let e = m.symmetric_eigenvalues();
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Ordinary kriging quantities from explicit dense solves.
pub struct DenseGp {
    pub beta: f64,
    pub sigma2: f64,
    pub nll: f64,
    k: DMatrix<f64>,
    k_inv: DMatrix<f64>,
    resid: DVector<f64>,
    one_kinv_one: f64,
    kinv_one: DVector<f64>,
}

/// `K⁻¹ b` from the explicit inverse, polished by a few rounds of
/// iterative refinement against `K` itself.
fn refined_solve(k: &DMatrix<f64>, k_inv: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = k_inv * b;
    for _ in 0..3 {
        let r = b - k * &x;
        x += k_inv * r;
    }
    x
}

impl DenseGp {
    pub fn new(k: DMatrix<f64>, y: &[f64]) -> Self {
        let n = y.len();
        let k_inv = k.clone().try_inverse().expect("invertible");
        let ones = DVector::from_element(n, 1.0);
        let yv = DVector::from_column_slice(y);
        let kinv_one = refined_solve(&k, &k_inv, &ones);
        let one_kinv_one = ones.dot(&kinv_one);
        let beta = kinv_one.dot(&yv) / one_kinv_one;
        let resid = &yv - &ones * beta;
        let sigma2 = resid.dot(&refined_solve(&k, &k_inv, &resid)) / n as f64;
        let nll = n as f64 / 2.0 * sigma2.ln() + 0.5 * k.determinant().ln();
        Self {
            beta,
            sigma2,
            nll,
            k,
            k_inv,
            resid,
            one_kinv_one,
            kinv_one,
        }
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        refined_solve(&self.k, &self.k_inv, b)
    }

    /// Mean and the simple and β-corrected variances.
    pub fn predict(&self, k: &[f64]) -> (f64, f64, f64) {
        let kv = DVector::from_column_slice(k);
        let mean = self.beta + kv.dot(&self.solve(&self.resid));
        let simple = self.sigma2 * (1.0 - kv.dot(&self.solve(&kv)));
        let u = 1.0 - self.kinv_one.dot(&kv);
        (mean, simple, simple + self.sigma2 * u * u / self.one_kinv_one)
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// One configuration per categorical combo, all sharing the quantitative
/// values of `base`.
pub fn one_per_combo(space: &SearchSpace, unit_quant: &[f64]) -> Vec<Configuration> {
    (0..space.combo_count())
        .map(|c| {
            let dims = space.quant_dims(c);
            let u: Vec<f64> = (0..dims.len())
                .map(|i| unit_quant.get(i).copied().unwrap_or(0.5))
                .collect();
            space.assemble(c, &u)
        })
        .collect()
}

pub fn level(cfg: &Configuration, name: &str) -> String {
    match cfg.get(name) {
        Some(Value::Level(l)) => l.clone(),
        other => panic!("{name}: {other:?}"),
    }
}

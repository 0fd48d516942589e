//! Laws of the coefficient vector `(N, C, A_1, ..., A_N)`.

use rand::Rng;
use rand_distr::{Distribution, Open01, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::real::Real;

/// Law of the shift `C` when it is drawn independently of the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CLaw<T> {
    /// `C = value` almost surely.
    Constant { value: T },
    /// A constant minus its own mean, i.e. `C = 0`; keeps `E[C] = 0` exact.
    Centered,
    /// `N(mean, sigma^2)`.
    Gaussian { mean: T, sigma: T },
    /// `+value` or `-value` with probability one half each.
    TwoPoint { value: T },
}

impl<T: Real> CLaw<T> {
    pub fn constant(value: T) -> Self {
        CLaw::Constant { value }
    }

    pub fn centered_gaussian(sigma: T) -> Self {
        CLaw::Gaussian { mean: T::zero(), sigma }
    }

    pub fn two_point(value: T) -> Self {
        CLaw::TwoPoint { value }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self {
            CLaw::Constant { value } => *value,
            CLaw::Centered => T::zero(),
            CLaw::Gaussian { mean, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                *mean + *sigma * T::of(z)
            }
            CLaw::TwoPoint { value } => {
                if rng.random::<bool>() {
                    *value
                } else {
                    -*value
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CLaw::Constant { value } => value.f64(),
            CLaw::Centered | CLaw::TwoPoint { .. } => 0.0,
            CLaw::Gaussian { mean, .. } => mean.f64(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            CLaw::Constant { value } | CLaw::TwoPoint { value } => value.f64().powi(2),
            CLaw::Centered => 0.0,
            CLaw::Gaussian { mean, sigma } => mean.f64().powi(2) + sigma.f64().powi(2),
        }
    }

    /// `E|C|^p` for `p > 0`.
    pub fn abs_moment(&self, p: f64) -> f64 {
        match self {
            CLaw::Constant { value } | CLaw::TwoPoint { value } => value.f64().abs().powf(p),
            CLaw::Centered => 0.0,
            CLaw::Gaussian { mean, sigma } => gaussian_abs_moment(mean.f64(), sigma.f64(), p),
        }
    }

    /// Characteristic function `E[exp(i xi C)]` as `(re, im)`.
    pub fn cf(&self, xi: f64) -> (f64, f64) {
        match self {
            CLaw::Constant { value } => (xi * value.f64()).sin_cos().swap(),
            CLaw::Centered => (1.0, 0.0),
            CLaw::Gaussian { mean, sigma } => {
                let m = (-0.5 * (sigma.f64() * xi).powi(2)).exp();
                let (s, c) = (xi * mean.f64()).sin_cos();
                (m * c, m * s)
            }
            CLaw::TwoPoint { value } => ((xi * value.f64()).cos(), 0.0),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let finite = |x: &T| x.is_finite();
        match self {
            CLaw::Constant { value } | CLaw::TwoPoint { value } if !finite(value) => {
                Err("C value must be finite".into())
            }
            CLaw::Gaussian { mean, sigma } if !finite(mean) || !finite(sigma) || *sigma < T::zero() => {
                Err("Gaussian C needs finite mean and sigma >= 0".into())
            }
            _ => Ok(()),
        }
    }
}

trait Swap {
    fn swap(self) -> Self;
}

impl Swap for (f64, f64) {
    fn swap(self) -> Self {
        (self.1, self.0)
    }
}

/// `E|m + sigma Z|^p` by Simpson's rule on `m +- 12 sigma`; closed form when `m = 0`.
fn gaussian_abs_moment(m: f64, sigma: f64, p: f64) -> f64 {
    if sigma == 0.0 {
        return m.abs().powf(p);
    }
    if m == 0.0 {
        let ln = p * sigma.ln() + 0.5 * p * std::f64::consts::LN_2 + ln_gamma(0.5 * (p + 1.0))
            - 0.5 * std::f64::consts::PI.ln();
        return ln.exp();
    }
    let steps = 8000usize;
    let (lo, hi) = (-12.0f64, 12.0f64);
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| (m + sigma * z).abs().powf(p) * (-0.5 * z * z).exp();
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Law of the weights of a Poisson family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightLaw<T> {
    Constant { value: T },
    Uniform { lo: T, hi: T },
}

impl<T: Real> WeightLaw<T> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self {
            WeightLaw::Constant { value } => *value,
            WeightLaw::Uniform { lo, hi } => {
                let u: f64 = rng.sample(Open01);
                *lo + (*hi - *lo) * T::of(u)
            }
        }
    }

    /// `E[A^s]`.
    fn moment(&self, s: f64) -> f64 {
        match self {
            WeightLaw::Constant { value } => value.f64().powf(s),
            WeightLaw::Uniform { lo, hi } => {
                let (lo, hi) = (lo.f64(), hi.f64());
                if hi == lo {
                    return lo.powf(s);
                }
                (hi.powf(s + 1.0) - lo.powf(s + 1.0)) / ((s + 1.0) * (hi - lo))
            }
        }
    }

    /// `E[A^s log A]`.
    fn moment_log(&self, s: f64) -> f64 {
        match self {
            WeightLaw::Constant { value } => {
                let a = value.f64();
                a.powf(s) * a.ln()
            }
            WeightLaw::Uniform { lo, hi } => {
                let (lo, hi) = (lo.f64(), hi.f64());
                if hi == lo {
                    return lo.powf(s) * lo.ln();
                }
                let g = |x: f64| x.powf(s + 1.0) * (x.ln() / (s + 1.0) - 1.0 / (s + 1.0).powi(2));
                (g(hi) - g(lo)) / (hi - lo)
            }
        }
    }

    fn bounds(&self) -> (T, T) {
        match self {
            WeightLaw::Constant { value } => (*value, *value),
            WeightLaw::Uniform { lo, hi } => (*lo, *hi),
        }
    }
}

/// One branch of the wealth-redistribution family: `N = rows.len()` with probability `prob`.
///
/// Given the branch, one row `k` is chosen uniformly and `(C, A_1..A_n) = (c_k, p_k1..p_kn)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WealthBranch<T> {
    pub prob: T,
    pub rows: Vec<WealthRow<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WealthRow<T> {
    pub c: T,
    pub p: Vec<T>,
}

/// Atom of a tabulated family: `(A_1..A_n) = weights` with probability `prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom<T> {
    pub prob: T,
    pub weights: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family<T> {
    /// `N = n` and every weight equals `a`.
    Diag { n: usize, a: T },
    /// `(A_1, A_2) = (sin t, cos t)` with `t` uniform on `(0, pi/2)`.
    Kac,
    /// `N = 1 + Poisson(lambda)` with i.i.d. weights.
    PoissonPlusOne { lambda: T, a_law: WeightLaw<T> },
    Wealth { branches: Vec<WealthBranch<T>> },
    Tabulated { atoms: Vec<Atom<T>> },
}

/// Plain description of a model; turned into a [`CollisionModel`] by validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<T> {
    #[serde(flatten)]
    pub family: Family<T>,
    pub c: CLaw<T>,
}

/// One draw of the coefficient vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollisionSample<T> {
    pub c: T,
    pub weights: Vec<T>,
}

impl<T> CollisionSample<T> {
    pub fn n(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMethod {
    Analytic,
    Sampled,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub method: CheckMethod,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub mean_n: f64,
    pub checks: Vec<Check>,
}

impl Diagnostics {
    pub fn accepted(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn into_result(self) -> Result<Self> {
        match self.checks.iter().find(|c| !c.passed) {
            None => Ok(self),
            Some(c) => Err(Error::InvalidModel(format!("{}: {}", c.name, c.detail))),
        }
    }

    fn push(&mut self, name: &'static str, passed: bool, method: CheckMethod, detail: String) {
        self.checks.push(Check { name, passed, method, detail });
    }
}

impl<T: Real> ModelSpec<T> {
    pub fn new(family: Family<T>, c: CLaw<T>) -> Self {
        Self { family, c }
    }

    pub fn mean_n(&self) -> f64 {
        match &self.family {
            Family::Diag { n, .. } => *n as f64,
            Family::Kac => 2.0,
            Family::PoissonPlusOne { lambda, .. } => 1.0 + lambda.f64(),
            Family::Wealth { branches } => branches.iter().map(|b| b.prob.f64() * b.rows.len() as f64).sum(),
            Family::Tabulated { atoms } => atoms.iter().map(|a| a.prob.f64() * a.weights.len() as f64).sum(),
        }
    }

    /// Every weight the family can produce, for finite families; `None` otherwise.
    fn finite_weight_sets(&self) -> Option<Vec<Vec<T>>> {
        match &self.family {
            Family::Diag { n, a } => Some(vec![vec![*a; *n]]),
            Family::Wealth { branches } => Some(
                branches
                    .iter()
                    .filter(|b| b.prob > T::zero())
                    .flat_map(|b| b.rows.iter().map(|r| r.p.clone()))
                    .collect(),
            ),
            Family::Tabulated { atoms } => {
                Some(atoms.iter().filter(|a| a.prob > T::zero()).map(|a| a.weights.clone()).collect())
            }
            _ => None,
        }
    }
}

/// Runs the analytic admissibility checks.
pub fn validate_model<T: Real>(spec: &ModelSpec<T>) -> Diagnostics {
    use CheckMethod::Analytic;
    let mean_n = spec.mean_n();
    let mut d = Diagnostics { mean_n, checks: Vec::new() };

    let structure = match &spec.family {
        Family::Diag { n, a } if !a.is_finite() => Err(format!("weight a = {a} is not finite (n = {n})")),
        Family::PoissonPlusOne { lambda, .. } if !(lambda.is_finite() && *lambda >= T::zero()) => {
            Err(format!("lambda = {lambda} must be finite and >= 0"))
        }
        Family::Wealth { branches } if branches.iter().any(|b| b.rows.iter().any(|r| r.p.len() != b.rows.len())) => {
            Err("each wealth row needs exactly one coefficient per agent".into())
        }
        Family::Wealth { branches } if branches.is_empty() => Err("no wealth branches".into()),
        Family::Tabulated { atoms } if atoms.is_empty() => Err("no atoms".into()),
        _ => Ok(()),
    };
    let probs: Option<Vec<f64>> = match &spec.family {
        Family::Wealth { branches } => Some(branches.iter().map(|b| b.prob.f64()).collect()),
        Family::Tabulated { atoms } => Some(atoms.iter().map(|a| a.prob.f64()).collect()),
        _ => None,
    };
    let structure = structure.and_then(|_| match probs {
        Some(p) if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 => {
            Err(format!("probabilities {p:?} must be nonnegative and sum to 1"))
        }
        _ => Ok(()),
    });
    let structure = structure.and_then(|_| spec.c.validate());
    d.push("structure", structure.is_ok(), Analytic, structure.err().unwrap_or_default());

    d.push(
        "supercritical",
        mean_n > 1.0 && mean_n.is_finite(),
        Analytic,
        format!("E[N] = {mean_n} must lie in (1, inf)"),
    );

    let positive = match (&spec.family, spec.finite_weight_sets()) {
        (_, Some(sets)) => sets.iter().flatten().all(|w| *w > T::zero() && w.is_finite()),
        (Family::Kac, None) => true,
        (Family::PoissonPlusOne { a_law, .. }, None) => {
            let (lo, hi) = a_law.bounds();
            lo > T::zero() && hi >= lo && hi.is_finite()
        }
        _ => unreachable!("finite families handled above"),
    };
    d.push("positive_weights", positive, Analytic, "every weight must be strictly positive".into());

    let degenerate = match (&spec.family, spec.finite_weight_sets()) {
        (_, Some(sets)) => !sets.is_empty() && sets.iter().all(|s| s.iter().all(|w| *w == T::one())),
        (Family::Kac, None) => false,
        (Family::PoissonPlusOne { a_law, .. }, None) => a_law.bounds() == (T::one(), T::one()),
        _ => unreachable!(),
    };
    d.push(
        "non_degenerate",
        !degenerate,
        Analytic,
        "weights must not all equal one almost surely".into(),
    );
    d
}

/// Adds sampled checks over `draws` samples to analytic diagnostics.
pub fn validate_model_sampled<T: Real, R: Rng + ?Sized>(
    model: &CollisionModel<T>,
    draws: usize,
    rng: &mut R,
) -> Diagnostics {
    let mut d = validate_model(&model.spec);
    let mut sample = CollisionSample::default();
    let mut total_n = 0usize;
    let mut all_positive = true;
    for _ in 0..draws {
        model.sample_into(rng, &mut sample);
        total_n += sample.n();
        all_positive &= sample.weights.iter().all(|w| *w > T::zero());
    }
    let mean = total_n as f64 / draws as f64;
    d.push("sampled_positive_weights", all_positive, CheckMethod::Sampled, format!("{draws} draws"));
    d.push(
        "sampled_supercritical",
        mean > 1.0,
        CheckMethod::Sampled,
        format!("empirical E[N] = {mean} over {draws} draws"),
    );
    d
}

/// A validated model; immutable and shareable across threads.
#[derive(Clone, Debug)]
pub struct CollisionModel<T> {
    spec: ModelSpec<T>,
    poisson: Option<Poisson<f64>>,
    diagnostics: Diagnostics,
}

impl<T: Real> CollisionModel<T> {
    pub fn new(spec: ModelSpec<T>) -> Result<Self> {
        let diagnostics = validate_model(&spec).into_result()?;
        let poisson = match &spec.family {
            Family::PoissonPlusOne { lambda, .. } if *lambda > T::zero() => {
                Some(Poisson::new(lambda.f64()).map_err(|e| Error::InvalidModel(e.to_string()))?)
            }
            _ => None,
        };
        Ok(Self { spec, poisson, diagnostics })
    }

    pub fn diag(n: usize, a: T, c: CLaw<T>) -> Result<Self> {
        Self::new(ModelSpec::new(Family::Diag { n, a }, c))
    }

    pub fn kac(c: CLaw<T>) -> Result<Self> {
        Self::new(ModelSpec::new(Family::Kac, c))
    }

    pub fn poisson_plus_one(lambda: T, a_law: WeightLaw<T>, c: CLaw<T>) -> Result<Self> {
        Self::new(ModelSpec::new(Family::PoissonPlusOne { lambda, a_law }, c))
    }

    pub fn wealth(branches: Vec<WealthBranch<T>>) -> Result<Self> {
        Self::new(ModelSpec::new(Family::Wealth { branches }, CLaw::Centered))
    }

    pub fn tabulated(atoms: Vec<Atom<T>>, c: CLaw<T>) -> Result<Self> {
        Self::new(ModelSpec::new(Family::Tabulated { atoms }, c))
    }

    pub fn spec(&self) -> &ModelSpec<T> {
        &self.spec
    }

    pub fn family(&self) -> &Family<T> {
        &self.spec.family
    }

    pub fn c_law(&self) -> &CLaw<T> {
        &self.spec.c
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// Same family with a different shift law (the wealth family ignores it).
    pub fn with_c(&self, c: CLaw<T>) -> Result<Self> {
        Self::new(ModelSpec::new(self.spec.family.clone(), c))
    }

    pub fn mean_n(&self) -> f64 {
        self.spec.mean_n()
    }

    /// Largest weight the family can produce.
    pub fn max_weight(&self) -> T {
        match &self.spec.family {
            Family::Kac => T::one(),
            Family::PoissonPlusOne { a_law, .. } => a_law.bounds().1,
            _ => self
                .spec
                .finite_weight_sets()
                .unwrap_or_default()
                .into_iter()
                .flatten()
                .fold(T::zero(), T::max),
        }
    }

    pub fn sample_collision<R: Rng + ?Sized>(&self, rng: &mut R) -> CollisionSample<T> {
        let mut s = CollisionSample::default();
        self.sample_into(rng, &mut s);
        s
    }

    /// Draws into `out`, reusing its allocation.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut CollisionSample<T>) {
        out.weights.clear();
        match &self.spec.family {
            Family::Diag { n, a } => {
                out.weights.resize(*n, *a);
                out.c = self.spec.c.sample(rng);
            }
            Family::Kac => {
                let u: f64 = rng.sample(Open01);
                let h = std::f64::consts::FRAC_PI_2;
                out.weights.push(T::of((h * u).sin()));
                out.weights.push(T::of((h * (1.0 - u)).sin()));
                out.c = self.spec.c.sample(rng);
            }
            Family::PoissonPlusOne { a_law, .. } => {
                let extra = self.poisson.as_ref().map_or(0, |p| p.sample(rng) as usize);
                for _ in 0..=extra {
                    out.weights.push(a_law.sample(rng));
                }
                out.c = self.spec.c.sample(rng);
            }
            Family::Wealth { branches } => {
                let b = pick(rng, branches.iter().map(|b| b.prob.f64()));
                let rows = &branches[b].rows;
                if rows.is_empty() {
                    out.c = T::zero();
                    return;
                }
                let row = &rows[rng.random_range(0..rows.len())];
                out.weights.extend_from_slice(&row.p);
                out.c = row.c;
            }
            Family::Tabulated { atoms } => {
                let k = pick(rng, atoms.iter().map(|a| a.prob.f64()));
                out.weights.extend_from_slice(&atoms[k].weights);
                out.c = self.spec.c.sample(rng);
            }
        }
    }

    /// `E[sum_k A_k^s]`, always closed form for the built-in families.
    fn weight_moment(&self, s: f64) -> f64 {
        let finite = |sets: &mut dyn Iterator<Item = (f64, &Vec<T>)>| -> f64 {
            sets.map(|(p, w)| p * w.iter().map(|a| a.f64().powf(s)).sum::<f64>()).sum()
        };
        match &self.spec.family {
            Family::Diag { n, a } => *n as f64 * a.f64().powf(s),
            Family::Kac => kac_moment(s),
            Family::PoissonPlusOne { lambda, a_law } => (1.0 + lambda.f64()) * a_law.moment(s),
            Family::Wealth { branches } => finite(&mut branches.iter().flat_map(|b| {
                let share = b.prob.f64() / b.rows.len().max(1) as f64;
                b.rows.iter().map(move |r| (share, &r.p))
            })),
            Family::Tabulated { atoms } => finite(&mut atoms.iter().map(|a| (a.prob.f64(), &a.weights))),
        }
    }

    /// `E[sum_k A_k^s log A_k]`.
    fn weight_moment_log(&self, s: f64) -> f64 {
        let term = |w: &Vec<T>| w.iter().map(|a| a.f64().powf(s) * a.f64().ln()).sum::<f64>();
        match &self.spec.family {
            Family::Diag { n, a } => *n as f64 * a.f64().powf(s) * a.f64().ln(),
            Family::Kac => 0.5 * kac_moment(s) * (digamma(0.5 * (s + 1.0)) - digamma(0.5 * s + 1.0)),
            Family::PoissonPlusOne { lambda, a_law } => (1.0 + lambda.f64()) * a_law.moment_log(s),
            Family::Wealth { branches } => branches
                .iter()
                .map(|b| b.prob.f64() / b.rows.len().max(1) as f64 * b.rows.iter().map(|r| term(&r.p)).sum::<f64>())
                .sum(),
            Family::Tabulated { atoms } => atoms.iter().map(|a| a.prob.f64() * term(&a.weights)).sum(),
        }
    }

    /// Closed-form `Phi(s) = E[sum A_k^s] - 1`; `None` when the family has none.
    pub fn phi_exact(&self, s: f64) -> Result<Option<f64>> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::OutOfDomain { s });
        }
        Ok(Some(self.weight_moment(s) - 1.0))
    }

    /// Closed-form `Phi'(s)`.
    pub fn phi_prime_exact(&self, s: f64) -> Result<Option<f64>> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::OutOfDomain { s });
        }
        Ok(Some(self.weight_moment_log(s)))
    }

    pub fn c_mean(&self) -> f64 {
        self.c_mix(|c| c, |l| l.mean())
    }

    pub fn c_second_moment(&self) -> f64 {
        self.c_mix(|c| c * c, |l| l.second_moment())
    }

    pub fn c_abs_moment(&self, p: f64) -> f64 {
        self.c_mix(|c| c.abs().powf(p), |l| l.abs_moment(p))
    }

    fn c_mix(&self, row: impl Fn(f64) -> f64, law: impl Fn(&CLaw<T>) -> f64) -> f64 {
        match &self.spec.family {
            Family::Wealth { branches } => branches
                .iter()
                .filter(|b| !b.rows.is_empty())
                .map(|b| b.prob.f64() * b.rows.iter().map(|r| row(r.c.f64())).sum::<f64>() / b.rows.len() as f64)
                .sum(),
            _ => law(&self.spec.c),
        }
    }

    /// Generating function `E[q^N]`.
    pub fn n_pgf(&self, q: f64) -> f64 {
        match &self.spec.family {
            Family::Diag { n, .. } => q.powi(*n as i32),
            Family::Kac => q * q,
            Family::PoissonPlusOne { lambda, .. } => q * (lambda.f64() * (q - 1.0)).exp(),
            Family::Wealth { branches } => branches.iter().map(|b| b.prob.f64() * q.powi(b.rows.len() as i32)).sum(),
            Family::Tabulated { atoms } => atoms.iter().map(|a| a.prob.f64() * q.powi(a.weights.len() as i32)).sum(),
        }
    }

    /// Smallest root of `q = E[q^N]` on `[0, 1]`, by fixed-point iteration from zero.
    pub fn extinction_probability(&self) -> f64 {
        let mut q = 0.0;
        for _ in 0..100_000 {
            let next = self.n_pgf(q);
            if (next - q).abs() < 1e-15 {
                return next;
            }
            q = next;
        }
        q
    }
}

fn kac_moment(s: f64) -> f64 {
    2.0 / std::f64::consts::PI.sqrt() * (ln_gamma(0.5 * (s + 1.0)) - ln_gamma(0.5 * s + 1.0)).exp()
}

fn pick<R: Rng + ?Sized>(rng: &mut R, probs: impl Iterator<Item = f64> + Clone) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use std::f64::consts::PI;

    #[test]
    fn diag_is_deterministic() {
        let m = CollisionModel::diag(2, 0.5, CLaw::constant(1.0)).unwrap();
        let mut rng = replicate_rng(1, 0);
        for _ in 0..10 {
            let s = m.sample_collision(&mut rng);
            assert_eq!(s, CollisionSample { c: 1.0, weights: vec![0.5, 0.5] });
        }
    }

    #[test]
    fn kac_weights_lie_on_the_positive_quarter_circle() {
        let m = CollisionModel::<f64>::kac(CLaw::Centered).unwrap();
        let mut rng = replicate_rng(2, 0);
        for _ in 0..10_000 {
            let s = m.sample_collision(&mut rng);
            assert_eq!(s.n(), 2);
            assert_eq!(s.c, 0.0);
            assert!(s.weights.iter().all(|w| *w > 0.0 && *w < 1.0));
            assert!((s.weights[0].powi(2) + s.weights[1].powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_closed_forms() {
        let d = CollisionModel::diag(2, 0.5, CLaw::Centered).unwrap();
        assert_eq!(d.phi_exact(1.0).unwrap(), Some(0.0));
        assert_eq!(d.phi_exact(0.0).unwrap(), Some(1.0));
        let k = CollisionModel::<f64>::kac(CLaw::Centered).unwrap();
        assert!((k.phi_exact(0.0).unwrap().unwrap() - 1.0).abs() < 1e-13);
        assert!((k.phi_exact(1.0).unwrap().unwrap() - (4.0 / PI - 1.0)).abs() < 1e-13);
        assert!(k.phi_exact(2.0).unwrap().unwrap().abs() < 1e-13);
        assert!(matches!(k.phi_exact(-0.5), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn phi_prime_matches_finite_difference() {
        let models = [
            CollisionModel::diag(3, 0.4, CLaw::Centered).unwrap(),
            CollisionModel::<f64>::kac(CLaw::Centered).unwrap(),
            CollisionModel::poisson_plus_one(1.5, WeightLaw::Uniform { lo: 0.1, hi: 0.9 }, CLaw::Centered)
                .unwrap(),
            CollisionModel::tabulated(
                vec![Atom { prob: 0.3, weights: vec![0.2, 0.7] }, Atom { prob: 0.7, weights: vec![0.5, 0.1, 0.9] }],
                CLaw::Centered,
            )
            .unwrap(),
        ];
        for m in &models {
            for s in [0.3, 1.0, 2.5] {
                let h = 1e-5;
                let fd = (m.phi_exact(s + h).unwrap().unwrap() - m.phi_exact(s - h).unwrap().unwrap()) / (2.0 * h);
                let exact = m.phi_prime_exact(s).unwrap().unwrap();
                assert!((fd - exact).abs() < 1e-7, "{:?} s={s}: {fd} vs {exact}", m.family());
            }
        }
    }

    #[test]
    fn validation_rejects_inadmissible_models() {
        assert!(CollisionModel::diag(2, 1.0, CLaw::Centered).is_err());
        assert!(CollisionModel::diag(1, 0.5, CLaw::Centered).is_err());
        assert!(CollisionModel::diag(2, 0.0, CLaw::Centered).is_err());
        assert!(CollisionModel::diag(2, 0.9, CLaw::Centered).is_ok());
        assert!(CollisionModel::tabulated(vec![Atom { prob: 1.0, weights: vec![] }], CLaw::Centered).is_err());
        assert!(CollisionModel::poisson_plus_one(0.0, WeightLaw::Constant { value: 0.5 }, CLaw::Centered).is_err());
        let d = validate_model(&ModelSpec::new(Family::Diag { n: 2, a: 1.0 }, CLaw::<f64>::Centered));
        assert!(!d.accepted());
        assert!(d.checks.iter().any(|c| c.name == "non_degenerate" && !c.passed));
    }

    #[test]
    fn extinction_probability_of_zero_or_three() {
        let m = CollisionModel::tabulated(
            vec![Atom { prob: 0.2, weights: vec![] }, Atom { prob: 0.8, weights: vec![0.5; 3] }],
            CLaw::Centered,
        )
        .unwrap();
        let q = m.extinction_probability();
        assert!((q - 0.2 - 0.8 * q.powi(3)).abs() < 1e-12);
        assert!((q - (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-9);
        assert_eq!(CollisionModel::diag(2, 0.5, CLaw::Centered).unwrap().extinction_probability(), 0.0);
    }

    #[test]
    fn gaussian_abs_moment_quadrature() {
        // E|Z|^2 = 1, E|1+Z|^2 = 2, E|Z| = sqrt(2/pi)
        assert!((gaussian_abs_moment(0.0, 1.0, 2.0) - 1.0).abs() < 1e-12);
        assert!((gaussian_abs_moment(1.0, 1.0, 2.0) - 2.0).abs() < 1e-9);
        assert!((gaussian_abs_moment(0.0, 1.0, 1.0) - (2.0 / PI).sqrt()).abs() < 1e-12);
        assert!((gaussian_abs_moment(1e-9, 1.0, 1.0) - (2.0 / PI).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn wealth_moments_mix_rows() {
        let m = CollisionModel::wealth(vec![WealthBranch {
            prob: 1.0,
            rows: vec![WealthRow { c: 1.0, p: vec![0.6, 0.3] }, WealthRow { c: -3.0, p: vec![0.2, 0.5] }],
        }])
        .unwrap();
        assert_eq!(m.c_mean(), -1.0);
        assert_eq!(m.c_second_moment(), 5.0);
        let phi1 = m.phi_exact(1.0).unwrap().unwrap();
        assert!((phi1 - (0.5 * 0.9 + 0.5 * 0.7 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn f32_models_sample() {
        let m = CollisionModel::<f32>::kac(CLaw::two_point(1.0)).unwrap();
        let mut rng = replicate_rng(3, 0);
        let s = m.sample_collision(&mut rng);
        assert!(s.weights.iter().all(|w| *w > 0.0));
        assert!(s.c == 1.0 || s.c == -1.0);
    }
}

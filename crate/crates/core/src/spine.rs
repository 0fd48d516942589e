//! Single-path estimators of the many-to-one formulas.
//!
//! The tilted walk is simulated by size-biased child choice: at each step a collision
//! is drawn, child `k` is chosen with probability `A_k^alpha / sum_j A_j^alpha` and the
//! path weight is multiplied by `(sum_j A_j^alpha) e^{-lambda(alpha)}`. Weighted path
//! functionals are then unbiased for expectations under the tilted law.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::collision::CollisionSample;
use crate::engine::{simulate_ensemble_observed, Observer, Particle, SimulationPlan};
use crate::error::{Error, Result};
use crate::initial::InitialCondition;
use crate::real::Real;
use crate::rng::{parallel_map, replicate_rng, sub_seed};
use crate::spectral::SpectralProfile;
use crate::stats::{self, MeanEstimate};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

/// Relative standard error above which a spine estimate is flagged.
pub const RHS_REL_SE_WARNING: f64 = 0.2;

/// Universal constant used in the moment ceiling.
pub const C_P: f64 = 2.0;

#[derive(Clone, Debug, Serialize)]
pub struct SpinePath {
    pub alpha: f64,
    pub horizon: f64,
    /// `S_0 = 0, S_1, ..., S_eta`.
    pub positions: Vec<f64>,
    /// Event times `T_1 < T_2 < ... <= horizon`.
    pub times: Vec<f64>,
    /// Importance weight after `k` steps, `k = 0..=eta`.
    pub weights: Vec<f64>,
}

impl SpinePath {
    /// `eta_t`, the number of events up to the horizon.
    pub fn eta(&self) -> usize {
        self.times.len()
    }

    pub fn final_weight(&self) -> f64 {
        *self.weights.last().expect("weights start at 1")
    }

    pub fn final_position(&self) -> f64 {
        *self.positions.last().expect("positions start at 0")
    }
}

/// Draws one size-biased spine path up to time `t`.
///
/// Once a step draws `N = 0` the weight is zero and the walk stops moving, but its
/// event clock keeps running so that `eta_t` keeps its Poisson law.
pub fn spine_walk<T: Real, R: Rng + ?Sized>(
    profile: &SpectralProfile<T>,
    alpha: f64,
    t: f64,
    rng: &mut R,
) -> Result<SpinePath> {
    let lambda = profile.lambda(alpha)?;
    if !lambda.is_finite() {
        return Err(Error::OutOfDomain { s: alpha });
    }
    Ok(walk(profile, alpha, lambda, t, rng, &mut CollisionSample::default()))
}

fn walk<T: Real, R: Rng + ?Sized>(
    profile: &SpectralProfile<T>,
    alpha: f64,
    lambda: f64,
    t: f64,
    rng: &mut R,
    sample: &mut CollisionSample<T>,
) -> SpinePath {
    let model = profile.model();
    let damp = (-lambda).exp();
    let mut path = SpinePath { alpha, horizon: t, positions: vec![0.0], times: Vec::new(), weights: vec![1.0] };
    let mut now = 0.0;
    let mut tilt = Vec::new();
    loop {
        let e: f64 = rng.sample(Exp1);
        now += e;
        if now > t {
            break;
        }
        path.times.push(now);
        let (s, w) = (path.final_position(), path.final_weight());
        if w == 0.0 {
            path.positions.push(s);
            path.weights.push(0.0);
            continue;
        }
        model.sample_into(rng, sample);
        if sample.n() == 0 {
            path.positions.push(s);
            path.weights.push(0.0);
            continue;
        }
        tilt.clear();
        tilt.extend(sample.weights.iter().map(|a| a.f64().powf(alpha)));
        let total: f64 = tilt.iter().sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut k = tilt.len() - 1;
        for (i, x) in tilt.iter().enumerate() {
            acc += x;
            if u < acc {
                k = i;
                break;
            }
        }
        path.positions.push(s + sample.weights[k].f64().ln());
        path.weights.push(w * total * damp);
    }
    path
}

/// Whitelisted test functions `g(v, mark)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "g", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFn {
    One,
    /// `e^{gamma v}`
    ExpGamma { gamma: f64 },
    /// `v e^{gamma v}`
    VExpGamma { gamma: f64 },
    /// `e^{gamma v} |mark|^p`
    ExpGammaAbsMarkP { gamma: f64, p: f64 },
}

impl TestFn {
    #[inline]
    pub fn eval(&self, v: f64, mark: f64) -> f64 {
        match *self {
            TestFn::One => 1.0,
            TestFn::ExpGamma { gamma } => (gamma * v).exp(),
            TestFn::VExpGamma { gamma } => v * (gamma * v).exp(),
            TestFn::ExpGammaAbsMarkP { gamma, p } => (gamma * v).exp() * mark.abs().powf(p),
        }
    }

    pub fn uses_mark(&self) -> bool {
        matches!(self, TestFn::ExpGammaAbsMarkP { .. })
    }

    /// The `gamma` to which `alpha` should be matched.
    pub fn natural_alpha(&self) -> f64 {
        match *self {
            TestFn::One => 0.0,
            TestFn::ExpGamma { gamma } | TestFn::VExpGamma { gamma } | TestFn::ExpGammaAbsMarkP { gamma, .. } => gamma,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ManyToOneReport {
    pub g: TestFn,
    pub alpha: f64,
    pub t: f64,
    pub lhs: MeanEstimate,
    pub rhs: MeanEstimate,
    pub se_lhs: f64,
    pub se_rhs: f64,
    /// 99% confidence intervals of the two routes overlap.
    pub overlap: bool,
    /// Spine estimate has relative standard error above 20%; consider `alpha = gamma`.
    pub rhs_warning: bool,
    pub capped_fraction: f64,
}

impl ManyToOneReport {
    fn new(g: TestFn, alpha: f64, t: f64, lhs: MeanEstimate, rhs: MeanEstimate, capped_fraction: f64) -> Self {
        Self {
            g,
            alpha,
            t,
            lhs,
            rhs,
            se_lhs: lhs.se,
            se_rhs: rhs.se,
            overlap: lhs.overlaps(&rhs, Z99),
            rhs_warning: rhs.se > RHS_REL_SE_WARNING * rhs.mean.abs(),
            capped_fraction,
        }
    }
}

/// Sizes and seed shared by both many-to-one estimators.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ManyToOneRun {
    pub t: f64,
    pub n_trees: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

struct AliveSum<'a, T> {
    g: TestFn,
    mark: &'a InitialCondition<T>,
    acc: f64,
}

impl<T: Real> Observer<T> for AliveSum<'_, T> {
    fn on_checkpoint<R: Rng + ?Sized>(&mut self, _k: usize, _t: f64, alive: &[Particle<T>], rng: &mut R) {
        for p in alive {
            let u = if self.g.uses_mark() { self.mark.sample(rng).f64() } else { 0.0 };
            self.acc += self.g.eval(p.v.f64(), u);
        }
    }
}

struct DeadSum {
    g: TestFn,
    acc: f64,
}

impl<T: Real> Observer<T> for DeadSum {
    fn on_death(&mut self, v: T, sample: &CollisionSample<T>) {
        self.acc += self.g.eval(v.f64(), sample.c.f64());
    }
}

fn tree_plan<T: Real>(profile: &SpectralProfile<T>, mark: &InitialCondition<T>, run: &ManyToOneRun) -> Result<SimulationPlan<T>> {
    SimulationPlan::new(profile.model().clone(), mark.clone(), vec![run.t], vec![], sub_seed(run.seed, 0))
}

/// Both sides of `E[sum over alive g(V, U)] = E[e^{-alpha S_eta + lambda eta} g(S_eta, U)]`.
pub fn many_to_one_i<T: Real>(
    profile: &SpectralProfile<T>,
    mark: &InitialCondition<T>,
    g: TestFn,
    alpha: f64,
    run: &ManyToOneRun,
) -> Result<ManyToOneReport> {
    let lambda = profile.lambda(alpha)?;
    let plan = tree_plan(profile, mark, run)?;
    let (ens, obs) = simulate_ensemble_observed(&plan, run.n_trees, run.threads, |_| AliveSum { g, mark, acc: 0.0 });
    let lhs: Vec<f64> = ens.records.iter().zip(&obs).filter(|(r, _)| !r.is_capped()).map(|(_, o)| o.acc).collect();
    let seed = sub_seed(run.seed, 1);
    let rhs = parallel_map(run.n_paths, run.threads, |i| {
        let mut rng = replicate_rng(seed, i as u64);
        let path = walk(profile, alpha, lambda, run.t, &mut rng, &mut CollisionSample::default());
        let w = path.final_weight();
        if w == 0.0 {
            return 0.0;
        }
        let s = path.final_position();
        let u = if g.uses_mark() { mark.sample(&mut rng).f64() } else { 0.0 };
        w * (-alpha * s + lambda * path.eta() as f64).exp() * g.eval(s, u)
    });
    Ok(ManyToOneReport::new(g, alpha, run.t, stats::mean_se(&lhs), stats::mean_se(&rhs), ens.capped_fraction()))
}

/// Both sides of `E[sum over dead g(V, C)] = E[sum_{k < eta} e^{-alpha S_k + lambda k} g(S_k, C)]`.
pub fn many_to_one_ii<T: Real>(
    profile: &SpectralProfile<T>,
    g: TestFn,
    alpha: f64,
    run: &ManyToOneRun,
) -> Result<ManyToOneReport> {
    let lambda = profile.lambda(alpha)?;
    let mark = InitialCondition::Point { r: T::zero() };
    let plan = tree_plan(profile, &mark, run)?;
    let (ens, obs) = simulate_ensemble_observed(&plan, run.n_trees, run.threads, |_| DeadSum { g, acc: 0.0 });
    let lhs: Vec<f64> = ens.records.iter().zip(&obs).filter(|(r, _)| !r.is_capped()).map(|(_, o)| o.acc).collect();
    let seed = sub_seed(run.seed, 2);
    let model = profile.model();
    let rhs = parallel_map(run.n_paths, run.threads, |i| {
        let mut rng = replicate_rng(seed, i as u64);
        let mut sample = CollisionSample::default();
        let path = walk(profile, alpha, lambda, run.t, &mut rng, &mut sample);
        let mut acc = 0.0;
        for k in 0..path.eta() {
            let w = path.weights[k];
            if w == 0.0 {
                break;
            }
            model.sample_into(&mut rng, &mut sample);
            let s = path.positions[k];
            acc += w * (-alpha * s + lambda * k as f64).exp() * g.eval(s, sample.c.f64());
        }
        acc
    });
    Ok(ManyToOneReport::new(g, alpha, run.t, stats::mean_se(&lhs), stats::mean_se(&rhs), ens.capped_fraction()))
}

/// Ceiling `c_p e^{t Phi(p gamma)} E|U|^p` on `E|X_{U,t}|^p` for a centred mark law, `p` in `[1, 2]`.
pub fn mz_budget<T: Real>(profile: &SpectralProfile<T>, gamma: f64, p: f64, t: f64, mark_abs_moment_p: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::InvalidPlan(format!("moment order p = {p} outside [1, 2]")));
    }
    let phi = profile.phi(p * gamma)?.value;
    if !phi.is_finite() {
        return Err(Error::OutOfDomain { s: p * gamma });
    }
    Ok(C_P * (t * phi).exp() * mark_abs_moment_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{Atom, CLaw, CollisionModel};

    fn profile(m: &CollisionModel<f64>) -> SpectralProfile<f64> {
        SpectralProfile::exact(m).unwrap()
    }

    #[test]
    fn diag_spine_has_unit_multipliers() {
        let m = CollisionModel::diag(2, 0.9, CLaw::constant(1.0)).unwrap();
        let p = profile(&m);
        let mut rng = replicate_rng(1, 0);
        for _ in 0..100 {
            let path = spine_walk(&p, 1.3, 3.0, &mut rng).unwrap();
            assert!(path.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
            for (k, s) in path.positions.iter().enumerate() {
                assert!((s - k as f64 * 0.9f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alpha_zero_multiplier_is_n_over_mean_n() {
        let m = CollisionModel::tabulated(
            vec![Atom { prob: 0.5, weights: vec![0.3, 0.6] }, Atom { prob: 0.5, weights: vec![0.2, 0.4, 0.5] }],
            CLaw::Centered,
        )
        .unwrap();
        let p = profile(&m);
        let mut rng = replicate_rng(2, 0);
        let mut firsts = Vec::new();
        for _ in 0..20_000 {
            let path = spine_walk(&p, 0.0, 50.0, &mut rng).unwrap();
            let w1 = path.weights[1];
            assert!((w1 - 2.0 / 2.5).abs() < 1e-12 || (w1 - 3.0 / 2.5).abs() < 1e-12);
            firsts.push(w1);
        }
        let m = stats::mean_se(&firsts);
        assert!(m.within(1.0, 4.0));
    }

    #[test]
    fn extinction_zeroes_the_weight() {
        let m = CollisionModel::tabulated(
            vec![Atom { prob: 0.3, weights: vec![] }, Atom { prob: 0.7, weights: vec![0.5; 3] }],
            CLaw::Centered,
        )
        .unwrap();
        let p = profile(&m);
        let mut rng = replicate_rng(3, 0);
        let n = 20_000;
        let zero_after_one = (0..n)
            .filter(|_| {
                let path = spine_walk(&p, 1.0, 100.0, &mut rng).unwrap();
                path.weights[1] == 0.0
            })
            .count() as f64
            / n as f64;
        assert!((zero_after_one - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / n as f64).sqrt());
    }

    #[test]
    fn mz_budget_at_time_zero() {
        let m = CollisionModel::diag(2, 0.25, CLaw::Centered).unwrap();
        let b = mz_budget(&profile(&m), 1.0, 1.5, 0.0, 1.0).unwrap();
        assert_eq!(b, 2.0);
        assert!(mz_budget(&profile(&m), 1.0, 2.5, 1.0, 1.0).is_err());
        // Phi(1.5) < 0 so the ceiling decreases in t
        let b1 = mz_budget(&profile(&m), 1.0, 1.5, 1.0, 1.0).unwrap();
        let b2 = mz_budget(&profile(&m), 1.0, 1.5, 2.0, 1.0).unwrap();
        assert!(b2 < b1 && b1 < 2.0);
    }

    #[test]
    fn small_horizon_sums_vanish() {
        let m = CollisionModel::diag(2, 0.9, CLaw::constant(1.0)).unwrap();
        let run = ManyToOneRun { t: 1e-6, n_trees: 500, n_paths: 500, seed: 1, threads: None };
        let r = many_to_one_ii(&profile(&m), TestFn::ExpGammaAbsMarkP { gamma: 1.0, p: 1.0 }, 1.0, &run).unwrap();
        assert!(r.lhs.mean < 0.01 && r.rhs.mean < 0.01);
    }
}

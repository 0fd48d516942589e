//! Finite-horizon checks of the rescaled limits of `C_t` and `W_t`.
//!
//! Every check simulates one model (the "simulated" side) and builds its prediction from
//! another (the "oracle" side). Normally both are the same model; a perturbed simulation
//! with nominal oracle constants is how the checks demonstrate that they can fail.

use std::any::Any;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex;
use rand::Rng;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::collision::{CLaw, CollisionModel, CollisionSample, Family};
use crate::engine::{simulate_ensemble, Caps, Ensemble, SimulationPlan};
use crate::error::{Error, Result};
use crate::initial::{HLabel, InitialCondition, LimitCf};
use crate::real::Real;
use crate::rng::{replicate_rng, sub_seed};
use crate::spectral::{classify_regime, Regime, SpectralProfile, P_PROBE};
use crate::stats::{self, EmpiricalCf, MeanEstimate, XiGrid};

/// Band for coupled-ratio medians.
pub const RATIO_BAND: (f64, f64) = (0.9, 1.1);

/// Cauchy gap `|C_{t2} - C_{t1}|` must have median at most this fraction of `median |C_{t2}|`.
pub const CAUCHY_FRACTION: f64 = 0.05;

/// Zero tolerance for `Phi(gamma) = 0` in the fixed-point cases.
const PHI_ZERO: f64 = 1e-10;

/// Collision draws used for the empirical `x log x` functional.
const XLOGX_DRAWS: usize = 10_000;

/// Simulated model plus the model that supplies every predicted constant and limit sample.
#[derive(Clone, Debug)]
pub struct Scenario<T> {
    pub simulated: CollisionModel<T>,
    pub oracle: CollisionModel<T>,
}

impl<T: Real> Scenario<T> {
    pub fn nominal(model: CollisionModel<T>) -> Self {
        Self { simulated: model.clone(), oracle: model }
    }

    pub fn perturbed(simulated: CollisionModel<T>, oracle: CollisionModel<T>) -> Self {
        Self { simulated, oracle }
    }

    pub fn is_perturbed(&self) -> bool {
        self.simulated.spec() != self.oracle.spec()
    }

    fn phi(&self, s: f64) -> Result<f64> {
        self.oracle.phi_exact(s)?.ok_or(Error::NoClosedForm("Phi"))
    }

    fn regime(&self) -> Result<Regime> {
        let profile = SpectralProfile::exact(&self.oracle)?;
        Ok(classify_regime(&self.oracle, &profile, &P_PROBE)?.label)
    }

    fn require(&self, requested: &str, allowed: &[Regime]) -> Result<()> {
        let actual = self.regime()?;
        if allowed.contains(&actual) {
            Ok(())
        } else {
            Err(Error::MismatchedCase {
                requested: requested.into(),
                required: allowed.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("|"),
                actual: actual.to_string(),
            })
        }
    }
}

/// Memo of simulated ensembles keyed by their full plan; lets a guard run reuse the nominal oracle side.
#[derive(Clone, Default)]
pub struct EnsembleCache(Arc<Mutex<HashMap<String, Arc<dyn Any + Send + Sync>>>>);

impl std::fmt::Debug for EnsembleCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.0.lock().map(|m| m.len()).unwrap_or(0);
        write!(f, "EnsembleCache({n} entries)")
    }
}

/// Ensemble size, seed and worker count shared by every check.
#[derive(Clone, Debug, Serialize)]
pub struct LimitRun {
    pub n: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub caps: Caps,
    #[serde(skip)]
    pub cache: Option<EnsembleCache>,
}

impl LimitRun {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, threads: None, caps: Caps::default(), cache: None }
    }

    pub fn threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    pub fn cached(mut self, cache: &EnsembleCache) -> Self {
        self.cache = Some(cache.clone());
        self
    }

    fn ensemble<T: Real>(
        &self,
        model: &CollisionModel<T>,
        ic: InitialCondition<T>,
        checkpoints: Vec<f64>,
        gammas: Vec<f64>,
        tag: u64,
    ) -> Result<Arc<Ensemble<T>>> {
        let plan = SimulationPlan::new(model.clone(), ic, checkpoints, gammas, sub_seed(self.seed, tag))?
            .with_caps(self.caps)?;
        let key = match &self.cache {
            Some(_) => format!(
                "{}|{:?}|{:?}|{:?}|{:?}|{}|{}|{:?}",
                std::any::type_name::<T>(),
                model.spec(),
                plan.ic,
                plan.checkpoints,
                plan.gammas,
                plan.seed,
                self.n,
                self.caps
            ),
            None => String::new(),
        };
        if let Some(cache) = &self.cache {
            let hit = cache.0.lock().expect("cache lock").get(&key).cloned();
            if let Some(ens) = hit.and_then(|e| e.downcast::<Ensemble<T>>().ok()) {
                return Ok(ens);
            }
        }
        let ens = Arc::new(simulate_ensemble(&plan, self.n, self.threads));
        ens.check_invariants()?;
        if let Some(cache) = &self.cache {
            cache.0.lock().expect("cache lock").insert(key, ens.clone());
        }
        Ok(ens)
    }
}

/// Which joint law the limit side was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Both sides come from the same replicate.
    Coupled,
    /// The limit variables come from an independent ensemble.
    Independent,
}

#[derive(Clone, Debug, Serialize)]
pub struct Plateau {
    pub t_early: f64,
    pub t_late: f64,
    pub variance_early: f64,
    pub variance_late: f64,
    pub combined_se: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleLimitSample {
    pub gamma: f64,
    pub horizon: f64,
    pub values: Vec<f64>,
    pub survived: Vec<bool>,
    pub mean: MeanEstimate,
    /// Empirical mean of `S log+ S` with `S = sum A_k^gamma`.
    pub xlogx: MeanEstimate,
    pub plateau: Plateau,
    pub capped_fraction: f64,
    pub warnings: Vec<String>,
}

impl MartingaleLimitSample {
    /// Fraction of replicates extinct by the horizon (their value is exactly zero).
    pub fn extinct_fraction(&self) -> f64 {
        self.survived.iter().filter(|s| !**s).count() as f64 / self.survived.len().max(1) as f64
    }
}

fn xlogx<T: Real>(model: &CollisionModel<T>, gamma: f64, seed: u64) -> MeanEstimate {
    let mut rng = replicate_rng(seed, 0);
    let mut sample = CollisionSample::default();
    let vals: Vec<f64> = (0..XLOGX_DRAWS)
        .map(|_| {
            model.sample_into(&mut rng, &mut sample);
            let s: f64 = sample.weights.iter().map(|a| a.f64().powf(gamma)).sum();
            if s > 1.0 { s * s.ln() } else { 0.0 }
        })
        .collect();
    stats::mean_se(&vals)
}

fn plateau_of<T: Real>(ens: &Ensemble<T>, gamma: f64) -> Result<Plateau> {
    let series = ens.martingale_series(gamma)?;
    let (a, b) = (&series[0], &series[series.len() - 1]);
    let combined_se = a.variance_se.hypot(b.variance_se);
    Ok(Plateau {
        t_early: a.t,
        t_late: b.t,
        variance_early: a.variance,
        variance_late: b.variance,
        combined_se,
        passed: (a.variance - b.variance).abs() <= 3.0 * combined_se + 1e-12,
    })
}

/// `M_T(gamma)` per replicate as a proxy for `M_inf(gamma)`, with a plateau test between `T - 2` and `T`.
pub fn sample_m_infinity<T: Real>(
    model: &CollisionModel<T>,
    gamma: f64,
    horizon: f64,
    run: &LimitRun,
) -> Result<MartingaleLimitSample> {
    let profile = SpectralProfile::exact(model)?;
    if profile.mu_prime(gamma)? >= 0.0 {
        return Err(Error::InvalidPlan(format!("mu'({gamma}) >= 0: the martingale limit is degenerate")));
    }
    let early = if horizon > 2.0 { horizon - 2.0 } else { horizon / 2.0 };
    let ens = run.ensemble(model, InitialCondition::Point { r: T::zero() }, vec![early, horizon], vec![gamma], 0)?;
    let k = ens.plan.checkpoints.len() - 1;
    let values = ens.martingale(k, gamma)?;
    let survived = ens.at(k).map(|c| c.alive > 0).collect();
    let plateau = plateau_of(&ens, gamma)?;
    let xlogx = xlogx(model, gamma, sub_seed(run.seed, 1));
    let mut warnings = Vec::new();
    if !plateau.passed {
        warnings.push(format!("variance has not settled by T = {horizon}; the proxy is biased"));
    }
    if !xlogx.mean.is_finite() {
        warnings.push("x log x functional is not finite".into());
    }
    if ens.biased() {
        warnings.push(format!("{:.2}% of replicates capped", 100.0 * ens.capped_fraction()));
    }
    Ok(MartingaleLimitSample {
        gamma,
        horizon,
        mean: stats::mean_se(&values),
        values,
        survived,
        xlogx,
        plateau,
        capped_fraction: ens.capped_fraction(),
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Thm2Case {
    A,
    B,
    C,
}

impl Thm2Case {
    fn regime(self) -> Regime {
        match self {
            Thm2Case::A => Regime::A,
            Thm2Case::B => Regime::B,
            Thm2Case::C => Regime::C,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioPoint {
    pub t: f64,
    pub n: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub passed: bool,
}

impl RatioPoint {
    fn of(t: f64, ratios: &[f64]) -> Self {
        let q = stats::quartiles(ratios);
        Self {
            t,
            n: ratios.len(),
            q25: q.q25,
            median: q.median,
            q75: q.q75,
            passed: (RATIO_BAND.0..=RATIO_BAND.1).contains(&q.median),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyReport {
    pub t1: f64,
    pub t2: f64,
    pub median_gap: f64,
    pub median_abs: f64,
    pub passed: bool,
}

fn cauchy<T: Real>(ens: &Ensemble<T>, k1: usize, k2: usize) -> CauchyReport {
    let rows: Vec<(f64, f64)> = ens
        .records
        .iter()
        .filter(|r| !r.is_capped())
        .filter_map(|r| Some((r.checkpoints[k1].as_ref()?.c.f64(), r.checkpoints[k2].as_ref()?.c.f64())))
        .collect();
    let gaps: Vec<f64> = rows.iter().map(|(a, b)| (b - a).abs()).collect();
    let abs: Vec<f64> = rows.iter().map(|(_, b)| b.abs()).collect();
    let (median_gap, median_abs) = (stats::median(&gaps), stats::median(&abs));
    CauchyReport {
        t1: ens.plan.checkpoints[k1],
        t2: ens.plan.checkpoints[k2],
        median_gap,
        median_abs,
        passed: median_gap <= CAUCHY_FRACTION * median_abs,
    }
}

/// `E[C_inf]` from `E[C_T] / (1 - E[Z_T(1)])`: each alive subtree adds an independent copy of `C_inf` scaled by `e^V`.
fn tail_corrected_mean<T: Real>(ens: &Ensemble<T>, k: usize, j1: usize) -> MeanEstimate {
    let rows: Vec<(f64, f64)> = ens.at(k).map(|c| (c.c.f64(), c.z[j1].f64())).collect();
    let n = rows.len();
    let a = rows.iter().map(|r| r.0).sum::<f64>() / n as f64;
    let b = rows.iter().map(|r| r.1).sum::<f64>() / n as f64;
    let f = a / (1.0 - b);
    let influence: Vec<f64> = rows.iter().map(|(c, z)| ((c - a) + f * (z - b)) / (1.0 - b)).collect();
    MeanEstimate { mean: f, se: stats::mean_se(&influence).se, n }
}

#[derive(Clone, Debug, Serialize)]
pub struct Thm2Report {
    pub case: Thm2Case,
    pub mode: Mode,
    pub perturbed: bool,
    pub ratios: Vec<RatioPoint>,
    pub cauchy: Option<CauchyReport>,
    pub c_infinity_mean: Option<MeanEstimate>,
    pub c_infinity_predicted: Option<f64>,
    pub capped_fraction: f64,
}

impl Thm2Report {
    pub fn passed(&self) -> bool {
        let ratios = self.ratios.iter().all(|r| r.passed);
        let cauchy = self.cauchy.as_ref().is_none_or(|c| c.passed);
        let mean = match (self.c_infinity_mean, self.c_infinity_predicted) {
            (Some(m), Some(p)) => m.within(p, 3.0),
            _ => true,
        };
        ratios && cauchy && mean
    }
}

/// Rescaled `C_t` against its predicted limit.
///
/// Cases A and B report coupled ratios at the last checkpoint: `e^{-mu(1)t} C_t / (E[C]/Phi(1) M_t(1))`
/// and `C_t / (t E[C] M_t(1))`. Case C reports a trajectory Cauchy test between the first and last
/// checkpoints and a tail-corrected estimate of `E[C_inf]` against `E[C]/(-Phi(1))`.
pub fn verify_thm2<T: Real>(scenario: &Scenario<T>, case: Thm2Case, t_grid: &[f64], run: &LimitRun) -> Result<Thm2Report> {
    scenario.require(&format!("{case:?}"), &[case.regime()])?;
    let phi1 = scenario.phi(1.0)?;
    let ec = scenario.oracle.c_mean();
    let ens = run.ensemble(&scenario.simulated, InitialCondition::Point { r: T::zero() }, t_grid.to_vec(), vec![1.0], 0)?;
    let last = t_grid.len() - 1;
    let mut report = Thm2Report {
        case,
        mode: Mode::Coupled,
        perturbed: scenario.is_perturbed(),
        ratios: Vec::new(),
        cauchy: None,
        c_infinity_mean: None,
        c_infinity_predicted: None,
        capped_fraction: ens.capped_fraction(),
    };
    match case {
        Thm2Case::A | Thm2Case::B => {
            for (k, &t) in t_grid.iter().enumerate() {
                let m = ens.martingale(k, 1.0)?;
                let ratios: Vec<f64> = ens
                    .at(k)
                    .zip(&m)
                    .map(|(c, m)| match case {
                        Thm2Case::A => (-phi1 * t).exp() * c.c.f64() / (ec / phi1 * m),
                        _ => c.c.f64() / (t * ec * m),
                    })
                    .collect();
                let mut p = RatioPoint::of(t, &ratios);
                if k != last {
                    p.passed = true;
                }
                report.ratios.push(p);
            }
        }
        Thm2Case::C => {
            report.cauchy = Some(cauchy(&ens, 0, last));
            report.c_infinity_mean = Some(tail_corrected_mean(&ens, last, 0));
            report.c_infinity_predicted = Some(ec / -phi1);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct FixpointReport {
    pub n: usize,
    pub ks: f64,
    pub ks_noise_floor: f64,
    pub cf_sup_distance: f64,
    pub transformed_mean: MeanEstimate,
    pub cauchy: Option<CauchyReport>,
    pub warnings: Vec<String>,
}

impl FixpointReport {
    pub fn passed(&self, band: f64) -> bool {
        self.ks <= band + self.ks_noise_floor
    }
}

/// One application of the inhomogeneous smoothing transform to the empirical law of `samples`.
pub fn smoothing_transform<T: Real, R: Rng + ?Sized>(model: &CollisionModel<T>, samples: &[T], rng: &mut R) -> Vec<T> {
    let mut sample = CollisionSample::default();
    (0..samples.len())
        .map(|_| {
            model.sample_into(rng, &mut sample);
            let mut acc = sample.c;
            for a in &sample.weights {
                acc = acc + *a * samples[rng.random_range(0..samples.len())];
            }
            acc
        })
        .collect()
}

/// Compares `samples` with their image under the smoothing transform by two-sample KS and empirical CF.
pub fn fixpoint_residual_c<T: Real>(model: &CollisionModel<T>, samples: &[T], seed: u64, grid: &XiGrid<T>) -> FixpointReport {
    let mut rng = replicate_rng(seed, 0);
    let out = smoothing_transform(model, samples, &mut rng);
    let n = samples.len();
    let a = EmpiricalCf::from_samples(samples, grid.clone());
    let b = EmpiricalCf::from_samples(&out, grid.clone());
    FixpointReport {
        n,
        ks: stats::ks_two_sample(samples, &out),
        ks_noise_floor: stats::ks_noise_floor(1.63, n, n),
        cf_sup_distance: stats::sup_distance(&a.values, &b.values),
        transformed_mean: stats::mean_se(&out),
        cauchy: None,
        warnings: Vec::new(),
    }
}

/// Simulates `C_T` and runs [`fixpoint_residual_c`], with a Cauchy test between `0.6 T` and `T`.
pub fn verify_fixpoint<T: Real>(scenario: &Scenario<T>, horizon: f64, run: &LimitRun) -> Result<FixpointReport> {
    scenario.require("fixpoint", &[Regime::C, Regime::D])?;
    let ens = run.ensemble(
        &scenario.simulated,
        InitialCondition::Point { r: T::zero() },
        vec![0.6 * horizon, horizon],
        vec![],
        0,
    )?;
    let c_t = ens.column(1, |c| c.c);
    let grid = XiGrid::new(T::of(5.0), 251);
    let mut report = fixpoint_residual_c(&scenario.oracle, &c_t, sub_seed(run.seed, 1), &grid);
    let cauchy = cauchy(&ens, 0, 1);
    if !cauchy.passed {
        report.warnings.push("C_t has not settled; the sample may not be stationary".into());
    }
    report.cauchy = Some(cauchy);
    Ok(report)
}

/// Limit laws of rescaled `W_t` given by mixtures over martingale limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum MixtureCase {
    /// Regime A with an (H1) initial law: `g_1(xi M(1)) exp(i xi E[C]/Phi(1) M(1))`, rescaled by `e^{-mu(1)t}`.
    RegimeA,
    /// Regimes C/D with `Phi(gamma) = 0`: `g_gamma(xi M(gamma)^{1/gamma}) exp(i xi C_inf)`, no rescaling.
    FixedPoint { gamma: f64 },
    /// Regime E with `gamma < 2`: `g_gamma(xi M(gamma)^{1/gamma})`, rescaled by `e^{-mu(gamma)t}`.
    RegimeE { gamma: f64 },
    /// Regime E with (H2): `exp(-xi^2 M(2) (sigma0^2 + E[C^2]/Phi(2)) / 2)`, rescaled by `e^{-mu(2)t}`.
    Gaussian,
}

impl MixtureCase {
    pub fn gamma(&self) -> f64 {
        match *self {
            MixtureCase::RegimeA => 1.0,
            MixtureCase::FixedPoint { gamma } | MixtureCase::RegimeE { gamma } => gamma,
            MixtureCase::Gaussian => 2.0,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            MixtureCase::RegimeA | MixtureCase::FixedPoint { .. } => Mode::Coupled,
            _ => Mode::Independent,
        }
    }

    fn regimes(&self) -> &'static [Regime] {
        match self {
            MixtureCase::RegimeA => &[Regime::A],
            MixtureCase::FixedPoint { .. } => &[Regime::C, Regime::D],
            _ => &[Regime::E],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CfComparison {
    pub case: MixtureCase,
    pub mode: Mode,
    pub perturbed: bool,
    pub t: f64,
    pub rescale: f64,
    pub xi_cap: f64,
    pub n_lhs: usize,
    pub n_mixture: usize,
    pub sup_distance: f64,
    pub band: f64,
    pub passed: bool,
    pub capped_fraction: f64,
    /// `(xi, |phi_hat - phi_limit|)` per node with `|xi| <= xi_cap`.
    #[serde(skip)]
    pub profile: Vec<(f64, f64)>,
}

impl CfComparison {
    pub fn write_profile_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["xi", "abs_diff"])?;
        for (x, d) in &self.profile {
            w.write_record([x.to_string(), format!("{d:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(M, shift)` pairs feeding a mixture characteristic function.
#[derive(Clone, Debug)]
pub struct MixtureSample {
    pub gamma: f64,
    pub m: Vec<f64>,
    pub shift: Vec<f64>,
}

impl MixtureSample {
    /// `(1/m) sum_j g(xi M_j^{1/gamma}) e^{i xi shift_j} e^{-xi^2 M_j extra / 2}`.
    pub fn cf(&self, g: &LimitCf, extra_variance: f64, xi: f64) -> Complex<f64> {
        let mut acc = Complex::new(0.0, 0.0);
        for (m, s) in self.m.iter().zip(&self.shift) {
            let base = if *m > 0.0 { g.eval(xi * m.powf(1.0 / self.gamma)) } else { Complex::new(1.0, 0.0) };
            let gauss = (-0.5 * xi * xi * m * extra_variance).exp();
            acc += base * Complex::new(0.0, xi * s).exp() * gauss;
        }
        acc / self.m.len() as f64
    }
}

fn limit_constants<T: Real>(ic: &InitialCondition<T>, gamma: f64) -> Result<LimitCf> {
    ic.h_label(gamma).map(|h: HLabel| h.limit()).ok_or_else(|| {
        Error::InvalidInitialCondition(format!("initial law is not in the domain of attraction of a {gamma}-stable law"))
    })
}

/// Empirical CF of rescaled `W_t` from the simulated model against the mixture limit built from the oracle.
///
/// Coupled cases take `M_t(gamma)` and `C_t` from the same oracle replicate; independent
/// cases take `M_t(gamma)` alone. The oracle ensemble is independent of the simulated one.
pub fn verify_mixture<T: Real>(
    scenario: &Scenario<T>,
    ic: &InitialCondition<T>,
    case: MixtureCase,
    t: f64,
    xi_cap: f64,
    band: f64,
    run: &LimitRun,
) -> Result<CfComparison> {
    scenario.require(&format!("{case:?}"), case.regimes())?;
    let gamma = case.gamma();
    let g = limit_constants(ic, gamma)?;
    let phi_g = scenario.phi(gamma)?;
    let rescale = match case {
        MixtureCase::FixedPoint { .. } => {
            if phi_g.abs() > PHI_ZERO {
                return Err(Error::InvalidPlan(format!("Phi({gamma}) = {phi_g} is not zero")));
            }
            0.0
        }
        _ => phi_g / gamma,
    };
    if matches!(case, MixtureCase::RegimeE { gamma } if gamma >= 2.0) {
        return Err(Error::InvalidPlan("regime E with gamma >= 2 is the Gaussian case".into()));
    }
    let lhs_ens = run.ensemble(&scenario.simulated, ic.clone(), vec![t], vec![], 0)?;
    let scale = (-rescale * t).exp();
    let lhs: Vec<f64> = lhs_ens.at(0).map(|c| scale * c.w.f64()).collect();

    let rhs_ens = run.ensemble(&scenario.oracle, InitialCondition::Point { r: T::zero() }, vec![t], vec![gamma], 1)?;
    let m = rhs_ens.martingale(0, gamma)?;
    let shift: Vec<f64> = match case {
        MixtureCase::RegimeA => {
            let ec = scenario.oracle.c_mean();
            m.iter().map(|m| ec / phi_g * m).collect()
        }
        MixtureCase::FixedPoint { .. } => rhs_ens.at(0).map(|c| c.c.f64()).collect(),
        _ => vec![0.0; m.len()],
    };
    let extra = if case == MixtureCase::Gaussian { scenario.oracle.c_second_moment() / phi_g } else { 0.0 };
    let mixture = MixtureSample { gamma, m, shift };

    let n_half = (xi_cap / 0.02).round() as usize;
    let grid = XiGrid::new(xi_cap, 2 * n_half.max(1) + 1);
    let ecf = EmpiricalCf::from_samples(&lhs, grid.clone());
    let profile: Vec<(f64, f64)> = (0..grid.n_points)
        .map(|i| {
            let xi = grid.node(i);
            (xi, (ecf.values[i] - mixture.cf(&g, extra, xi)).norm())
        })
        .collect();
    let sup_distance = profile.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(CfComparison {
        case,
        mode: case.mode(),
        perturbed: scenario.is_perturbed(),
        t,
        rescale,
        xi_cap,
        n_lhs: lhs.len(),
        n_mixture: mixture.m.len(),
        sup_distance,
        band,
        passed: sup_distance <= band,
        capped_fraction: lhs_ens.capped_fraction().max(rhs_ens.capped_fraction()),
        profile,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "case")]
pub enum Thm6Case {
    A,
    B,
    /// Regimes C/D with an initial law whose `gamma`-th absolute moment is finite and `Phi(gamma) < 0`.
    C { gamma: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub band: f64,
    pub reference: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Thm6Report {
    pub case: Thm6Case,
    pub mode: Mode,
    pub perturbed: bool,
    pub ratio: Option<RatioPoint>,
    pub cauchy: Option<CauchyReport>,
    /// Median of `|X_t|`, the initial-law contribution that must vanish.
    pub median_abs_x: Option<f64>,
    pub ks: Option<KsReport>,
    pub capped_fraction: f64,
}

impl Thm6Report {
    pub fn passed(&self) -> bool {
        self.ratio.as_ref().is_none_or(|r| r.passed)
            && self.cauchy.as_ref().is_none_or(|c| c.passed)
            && self.ks.as_ref().is_none_or(|k| k.passed)
    }
}

/// Normal law of `C_inf` when it is available in closed form: `diag(n, a)` with Gaussian or constant `C`.
pub fn c_infinity_normal<T: Real>(model: &CollisionModel<T>) -> Option<(f64, f64)> {
    let (n, a) = match model.family() {
        Family::Diag { n, a } => (*n as f64, a.f64()),
        _ => return None,
    };
    let (m, s2) = match model.c_law() {
        CLaw::Constant { value } => (value.f64(), 0.0),
        CLaw::Gaussian { mean, sigma } => (mean.f64(), sigma.f64().powi(2)),
        CLaw::Centered => (0.0, 0.0),
        CLaw::TwoPoint { .. } => return None,
    };
    let (d1, d2) = (1.0 - n * a, 1.0 - n * a * a);
    (d1 > 0.0 && d2 > 0.0).then(|| (m / d1, s2 / d2))
}

fn normal_cdf(mean: f64, var: f64, x: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (2.0 * var).sqrt())
}

/// `W_t` limits with a general initial law.
///
/// Cases A and B use the same coupled ratios as [`verify_thm2`] on `W_t` at the last checkpoint.
/// Case C runs a Cauchy test on `C_t`, reports `median |X_t|`, and compares `W_t` with the law of
/// `C_inf` by one-sample KS when it is Gaussian and by two-sample KS against the oracle's `C_t` otherwise.
pub fn verify_thm6<T: Real>(
    scenario: &Scenario<T>,
    ic: &InitialCondition<T>,
    case: Thm6Case,
    t_grid: &[f64],
    ks_band: f64,
    run: &LimitRun,
) -> Result<Thm6Report> {
    let requested = format!("{case:?}");
    match case {
        Thm6Case::A => {
            scenario.require(&requested, &[Regime::A])?;
            let mean = ic.mean().unwrap_or(f64::NAN);
            if !(mean.abs() < 1e-12 && ic.abs_moment(1.5).is_finite()) {
                return Err(Error::InvalidInitialCondition("case A needs E[R] = 0 and E|R|^{1+d} finite".into()));
            }
        }
        Thm6Case::B => {
            scenario.require(&requested, &[Regime::B])?;
            if ic.h_label(1.0).is_none() {
                return Err(Error::InvalidInitialCondition("case B needs an (H1) initial law".into()));
            }
        }
        Thm6Case::C { gamma } => {
            scenario.require(&requested, &[Regime::C, Regime::D])?;
            if !(scenario.phi(gamma)? < 0.0 && ic.abs_moment(gamma).is_finite()) {
                return Err(Error::InvalidInitialCondition(format!("case C needs Phi({gamma}) < 0 and E|R|^{gamma} finite")));
            }
        }
    }
    let phi1 = scenario.phi(1.0)?;
    let ec = scenario.oracle.c_mean();
    let ens = run.ensemble(&scenario.simulated, ic.clone(), t_grid.to_vec(), vec![1.0], 0)?;
    let last = t_grid.len() - 1;
    let t = t_grid[last];
    let mut report = Thm6Report {
        case,
        mode: Mode::Coupled,
        perturbed: scenario.is_perturbed(),
        ratio: None,
        cauchy: None,
        median_abs_x: None,
        ks: None,
        capped_fraction: ens.capped_fraction(),
    };
    match case {
        Thm6Case::A | Thm6Case::B => {
            let m = ens.martingale(last, 1.0)?;
            let ratios: Vec<f64> = ens
                .at(last)
                .zip(&m)
                .map(|(c, m)| match case {
                    Thm6Case::A => (-phi1 * t).exp() * c.w.f64() / (ec / phi1 * m),
                    _ => c.w.f64() / (t * ec * m),
                })
                .collect();
            report.ratio = Some(RatioPoint::of(t, &ratios));
        }
        Thm6Case::C { .. } => {
            report.mode = Mode::Independent;
            report.cauchy = Some(cauchy(&ens, 0, last));
            let x: Vec<f64> = ens.at(last).map(|c| c.x.f64().abs()).collect();
            report.median_abs_x = Some(stats::median(&x));
            let w = ens.column(last, |c| c.w);
            let (statistic, reference) = match c_infinity_normal(&scenario.oracle) {
                Some((m, v)) if v > 0.0 => {
                    (stats::ks_one_sample(&w, |x| normal_cdf(m, v, x)), format!("normal(mean {m}, variance {v})"))
                }
                _ => {
                    let reference = run.ensemble(&scenario.oracle, InitialCondition::Point { r: T::zero() }, vec![t], vec![], 1)?;
                    (stats::ks_two_sample(&w, &reference.column(0, |c| c.c)), format!("oracle C_{t}"))
                }
            };
            report.ks = Some(KsReport { statistic, band: ks_band, reference, passed: statistic <= ks_band });
        }
    }
    Ok(report)
}

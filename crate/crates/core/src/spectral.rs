//! The spectral function `Phi`, its derived quantities and the regime classifier.

use rand::Rng;
use serde::Serialize;

use crate::collision::{CollisionModel, CollisionSample};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::stats;

/// Default search set for the `p` of the zero-mean regime.
pub const P_PROBE: [f64; 4] = [1.1, 1.25, 1.5, 2.0];

/// Tolerance separating `Phi(1) = 0` from its neighbours for closed forms.
pub const EXACT_ZERO_TOL: f64 = 1e-10;

/// Excess kurtosis of `sum A_k^s` above which an estimate is flagged as heavy tailed.
pub const KURTOSIS_WARNING: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhiEstimate {
    pub value: f64,
    pub se: f64,
    pub excess_kurtosis: f64,
    pub heavy_tail: bool,
}

/// Monte Carlo `E[sum A_k^s] - 1` over `n_samples` fresh draws.
pub fn phi_estimate<T: Real, R: Rng + ?Sized>(
    model: &CollisionModel<T>,
    s: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<PhiEstimate> {
    if !(s >= 0.0) {
        return Err(Error::OutOfDomain { s });
    }
    if n_samples < 100 {
        return Err(Error::InvalidPlan(format!("phi_estimate needs at least 100 samples, got {n_samples}")));
    }
    let mut sample = CollisionSample::default();
    let sums: Vec<f64> = (0..n_samples)
        .map(|_| {
            model.sample_into(rng, &mut sample);
            sample.weights.iter().map(|a| a.f64().powf(s)).sum::<f64>()
        })
        .collect();
    let m = stats::mean_se(&sums);
    let excess_kurtosis = stats::excess_kurtosis(&sums);
    Ok(PhiEstimate {
        value: m.mean - 1.0,
        se: m.se,
        excess_kurtosis,
        heavy_tail: excess_kurtosis > KURTOSIS_WARNING,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Estimated { n_samples: usize },
}

#[derive(Clone, Debug)]
enum Source {
    Exact,
    /// Log-weights of a fixed panel; every `s` reuses the same draws, so the
    /// estimated `Phi` is itself a convex function of `s`.
    Panel(Vec<Vec<f64>>),
}

/// `Phi` and everything derived from it for one model.
#[derive(Clone, Debug)]
pub struct SpectralProfile<T> {
    model: CollisionModel<T>,
    source: Source,
}

impl<T: Real> SpectralProfile<T> {
    pub fn exact(model: &CollisionModel<T>) -> Result<Self> {
        model.phi_exact(1.0)?.ok_or(Error::NoClosedForm("Phi"))?;
        Ok(Self { model: model.clone(), source: Source::Exact })
    }

    /// Profile backed by a panel of `n_samples` draws.
    pub fn estimated<R: Rng + ?Sized>(model: &CollisionModel<T>, n_samples: usize, rng: &mut R) -> Result<Self> {
        if n_samples < 100 {
            return Err(Error::InvalidPlan(format!("estimated profile needs at least 100 samples, got {n_samples}")));
        }
        let mut sample = CollisionSample::default();
        let panel = (0..n_samples)
            .map(|_| {
                model.sample_into(rng, &mut sample);
                sample.weights.iter().map(|a| a.f64().ln()).collect()
            })
            .collect();
        Ok(Self { model: model.clone(), source: Source::Panel(panel) })
    }

    /// Closed form when available, otherwise a panel of `n_samples` draws.
    pub fn best<R: Rng + ?Sized>(model: &CollisionModel<T>, n_samples: usize, rng: &mut R) -> Result<Self> {
        match Self::exact(model) {
            Err(Error::NoClosedForm(_)) => Self::estimated(model, n_samples, rng),
            other => other,
        }
    }

    pub fn model(&self) -> &CollisionModel<T> {
        &self.model
    }

    pub fn provenance(&self) -> Provenance {
        match &self.source {
            Source::Exact => Provenance::ClosedForm,
            Source::Panel(p) => Provenance::Estimated { n_samples: p.len() },
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.source, Source::Exact)
    }

    pub fn phi(&self, s: f64) -> Result<Estimate> {
        match &self.source {
            Source::Exact => {
                let value = self.model.phi_exact(s)?.ok_or(Error::NoClosedForm("Phi"))?;
                Ok(Estimate { value, se: 0.0 })
            }
            Source::Panel(panel) => {
                if !(s >= 0.0) {
                    return Err(Error::OutOfDomain { s });
                }
                let sums: Vec<f64> = panel.iter().map(|w| w.iter().map(|l| (s * l).exp()).sum()).collect();
                let m = stats::mean_se(&sums);
                if !m.mean.is_finite() {
                    return Err(Error::OutOfDomain { s });
                }
                Ok(Estimate { value: m.mean - 1.0, se: m.se })
            }
        }
    }

    fn phi_value(&self, s: f64) -> Result<f64> {
        Ok(self.phi(s)?.value)
    }

    /// `Phi'(s)`: closed form, or a central difference with step `1e-5 max(1, s)`
    /// cross-checked in sign against half that step.
    pub fn phi_prime(&self, s: f64) -> Result<f64> {
        if let Source::Exact = self.source {
            if let Some(d) = self.model.phi_prime_exact(s)? {
                return Ok(d);
            }
        }
        let h = 1e-5 * s.max(1.0);
        let central = |h: f64| -> Result<f64> {
            let lo = (s - h).max(0.0);
            Ok((self.phi_value(s + h)? - self.phi_value(lo)?) / (s + h - lo))
        };
        let (d1, d2) = (central(h)?, central(0.5 * h)?);
        if d1.signum() != d2.signum() && d1 != 0.0 && d2 != 0.0 {
            return Err(Error::IllConditioned { s });
        }
        Ok(d1)
    }

    /// `lambda(alpha) = log(Phi(alpha) + 1)`.
    pub fn lambda(&self, alpha: f64) -> Result<f64> {
        Ok(self.phi_value(alpha)?.ln_1p())
    }

    pub fn mu(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::OutOfDomain { s });
        }
        Ok(self.phi_value(s)? / s)
    }

    /// `mu'(s) = (s Phi'(s) - Phi(s)) / s^2`.
    pub fn mu_prime(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::OutOfDomain { s });
        }
        Ok((s * self.phi_prime(s)? - self.phi_value(s)?) / (s * s))
    }

    /// Threshold below which `|Phi(s)|` counts as zero.
    pub fn zero_tolerance(&self, s: f64) -> Result<f64> {
        Ok(match self.source {
            Source::Exact => EXACT_ZERO_TOL,
            Source::Panel(_) => 3.0 * self.phi(s)?.se,
        })
    }

    /// Bisection for `Phi(gamma) = 0` on `[lo, hi]`.
    pub fn find_phi_zero(&self, lo: f64, hi: f64) -> Result<f64> {
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (self.phi(a)?, self.phi(b)?);
        let accept = |e: Estimate| match self.source {
            Source::Exact => e.value.abs() < EXACT_ZERO_TOL,
            Source::Panel(_) => e.value.abs() < e.se,
        };
        if accept(fa) {
            return Ok(a);
        }
        if accept(fb) {
            return Ok(b);
        }
        if fa.value.signum() == fb.value.signum() {
            return Err(Error::NoZeroInBracket { lo, hi });
        }
        let sa = fa.value.signum();
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = self.phi(m)?;
            if accept(fm) || b - a < 1e-15 * m.abs().max(1.0) {
                return Ok(m);
            }
            if fm.value.signum() == sa {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Root of `s Phi'(s) = Phi(s)` on `(0, s_max]`; `None` when `mu` is monotone there.
    ///
    /// `s Phi' - Phi` is nondecreasing by convexity, so the first sign change is the root.
    pub fn gamma_star(&self, s_max: f64) -> Result<Option<f64>> {
        let g = |s: f64| -> Result<f64> { Ok(s * self.phi_prime(s)? - self.phi_value(s)?) };
        let mut prev = 1e-3;
        let mut g_prev = g(prev)?;
        if g_prev == 0.0 {
            return Ok(Some(prev));
        }
        let mut s = prev;
        while s < s_max {
            s = (s * 1.25).min(s_max);
            let gs = g(s)?;
            if gs == 0.0 {
                return Ok(Some(s));
            }
            if gs.signum() != g_prev.signum() {
                let (mut a, mut b) = (prev, s);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    let gm = g(m)?;
                    if gm.signum() == g_prev.signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a < 1e-13 {
                        break;
                    }
                }
                return Ok(Some(0.5 * (a + b)));
            }
            prev = s;
            g_prev = gs;
        }
        Ok(None)
    }

    /// Probe points where `Phi` evaluated to a finite value.
    pub fn probe_domain(&self, points: &[f64]) -> Vec<f64> {
        points
            .iter()
            .copied()
            .filter(|s| self.phi(*s).map(|e| e.value.is_finite()).unwrap_or(false))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    A,
    B,
    C,
    D,
    E,
    #[serde(rename = "none")]
    None,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::A => "A",
            Regime::B => "B",
            Regime::C => "C",
            Regime::D => "D",
            Regime::E => "E",
            Regime::None => "none",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeWitness {
    pub p: f64,
    pub phi: f64,
    pub phi_se: f64,
    pub c_abs_moment: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Witnesses {
    pub phi1: f64,
    pub phi1_se: f64,
    pub mu_prime1: f64,
    pub phi2: f64,
    pub phi2_se: f64,
    pub mu_prime2: f64,
    pub c_mean: f64,
    pub c_second_moment: f64,
    pub probes: Vec<ProbeWitness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    pub phi_zero: f64,
    pub c_mean_zero: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeReport {
    pub label: Regime,
    /// Probe `p` that certified the zero-mean regime D.
    pub p: Option<f64>,
    pub witnesses: Witnesses,
    pub tolerances: Tolerances,
    pub provenance: Provenance,
    pub gamma_star: Option<f64>,
    /// Probed points at which `Phi` is finite; the domain contains this set.
    pub domain_contains: Vec<f64>,
}

/// Classifies a model into regimes A to E.
///
/// A, B and C need `E[C] != 0`, a finite `E|C|^p` for some probed `p > 1` and `mu'(1) < 0`,
/// and split on the sign of `Phi(1)`. D is tried before E; the two are disjoint.
pub fn classify_regime<T: Real>(
    model: &CollisionModel<T>,
    profile: &SpectralProfile<T>,
    p_probe: &[f64],
) -> Result<RegimeReport> {
    let f1 = profile.phi(1.0)?;
    let f2 = profile.phi(2.0)?;
    let mu1 = profile.mu_prime(1.0)?;
    let mu2 = profile.mu_prime(2.0)?;
    let c_mean = model.c_mean();
    let c_second_moment = model.c_second_moment();
    let probes = p_probe
        .iter()
        .map(|&p| {
            let e = profile.phi(p)?;
            Ok(ProbeWitness { p, phi: e.value, phi_se: e.se, c_abs_moment: model.c_abs_moment(p) })
        })
        .collect::<Result<Vec<_>>>()?;
    let tol = profile.zero_tolerance(1.0)?;
    let c_tol = 1e-14;
    let margin = |se: f64| if profile.is_exact() { 0.0 } else { 3.0 * se };

    let mut p_used = None;
    let label = if c_mean.abs() > c_tol {
        let moment_ok = probes.iter().any(|w| w.p > 1.0 && w.c_abs_moment.is_finite());
        if !(moment_ok && mu1 < 0.0) {
            Regime::None
        } else if f1.value.abs() <= tol {
            if profile.is_exact() {
                Regime::B
            } else {
                return Err(Error::AmbiguousRegime { phi1: f1.value, tolerance: tol });
            }
        } else if f1.value > 0.0 {
            Regime::A
        } else {
            Regime::C
        }
    } else {
        let d = probes
            .iter()
            .find(|w| w.p > 1.0 && w.p <= 2.0 && w.c_abs_moment.is_finite() && w.phi + margin(w.phi_se) < 0.0);
        if let (Some(w), true) = (d, mu1 < 0.0) {
            p_used = Some(w.p);
            Regime::D
        } else if f2.value - margin(f2.se) > 0.0 && mu2 < 0.0 && c_second_moment > 0.0 && c_second_moment.is_finite() {
            Regime::E
        } else {
            Regime::None
        }
    };

    let mut grid: Vec<f64> = (0..=40).map(|k| k as f64 * 0.25).collect();
    grid.extend_from_slice(p_probe);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(RegimeReport {
        label,
        p: p_used,
        witnesses: Witnesses {
            phi1: f1.value,
            phi1_se: f1.se,
            mu_prime1: mu1,
            phi2: f2.value,
            phi2_se: f2.se,
            mu_prime2: mu2,
            c_mean,
            c_second_moment,
            probes,
        },
        tolerances: Tolerances { phi_zero: tol, c_mean_zero: c_tol },
        provenance: profile.provenance(),
        gamma_star: profile.gamma_star(20.0)?,
        domain_contains: profile.probe_domain(&grid),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::CLaw;
    use crate::rng::replicate_rng;

    fn diag(a: f64, c: CLaw<f64>) -> CollisionModel<f64> {
        CollisionModel::diag(2, a, c).unwrap()
    }

    #[test]
    fn diag_phi_estimate_has_zero_se() {
        let m = diag(0.9, CLaw::Centered);
        let e = phi_estimate(&m, 1.0, 100_000, &mut replicate_rng(1, 0)).unwrap();
        assert!((e.value - 0.8).abs() < 1e-12);
        assert_eq!(e.se, 0.0);
        assert!(!e.heavy_tail);
    }

    #[test]
    fn phi_estimate_rejects_tiny_samples() {
        let m = diag(0.9, CLaw::Centered);
        assert!(phi_estimate(&m, 1.0, 10, &mut replicate_rng(1, 0)).is_err());
    }

    #[test]
    fn mu_prime_closed_form_and_finite_difference_agree() {
        let m = diag(0.5, CLaw::Centered);
        let exact = SpectralProfile::exact(&m).unwrap();
        assert!((exact.mu_prime(1.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-12);
        let est = SpectralProfile::estimated(&m, 100, &mut replicate_rng(1, 0)).unwrap();
        assert!((est.mu_prime(1.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-6);
        let m9 = diag(0.9, CLaw::Centered);
        let p9 = SpectralProfile::exact(&m9).unwrap();
        let oracle = (2.0 * 1.62 * 0.9f64.ln() - 0.62) / 4.0;
        assert!((p9.mu_prime(2.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn zeros_of_phi() {
        let p = SpectralProfile::exact(&diag(0.25, CLaw::Centered)).unwrap();
        assert!((p.find_phi_zero(0.1, 2.0).unwrap() - 0.5).abs() < 1e-9);
        let p = SpectralProfile::exact(&diag(0.5, CLaw::Centered)).unwrap();
        assert!((p.find_phi_zero(0.5, 2.0).unwrap() - 1.0).abs() < 1e-9);
        let p = SpectralProfile::exact(&diag(0.9, CLaw::Centered)).unwrap();
        assert!(matches!(p.find_phi_zero(0.1, 5.0), Err(Error::NoZeroInBracket { .. })));
    }

    #[test]
    fn gamma_star_solves_the_tangency_condition() {
        for m in [diag(0.9, CLaw::Centered), diag(0.25, CLaw::Centered), CollisionModel::kac(CLaw::Centered).unwrap()]
        {
            let p = SpectralProfile::exact(&m).unwrap();
            let g = p.gamma_star(20.0).unwrap().expect("gamma* exists");
            assert!(p.mu_prime(g).unwrap().abs() < 1e-9, "mu'({g}) = {}", p.mu_prime(g).unwrap());
        }
    }

    #[test]
    fn regime_labels() {
        let cases = [
            (diag(0.9, CLaw::constant(1.0)), Regime::A),
            (diag(0.5, CLaw::constant(1.0)), Regime::B),
            (diag(0.25, CLaw::constant(1.0)), Regime::C),
            (diag(0.25, CLaw::two_point(1.0)), Regime::D),
            (diag(0.9, CLaw::centered_gaussian(1.0)), Regime::E),
            (diag(0.9, CLaw::two_point(1.0)), Regime::E),
        ];
        for (m, want) in cases {
            let p = SpectralProfile::exact(&m).unwrap();
            let r = classify_regime(&m, &p, &P_PROBE).unwrap();
            assert_eq!(r.label, want, "{:?}", m.spec());
        }
    }

    #[test]
    fn estimated_profile_cannot_separate_regime_b() {
        let m = CollisionModel::kac(CLaw::constant(1.0)).unwrap();
        let exact = SpectralProfile::exact(&m).unwrap();
        assert_eq!(classify_regime(&m, &exact, &P_PROBE).unwrap().label, Regime::A);
        let b = diag(0.5, CLaw::constant(1.0));
        let est = SpectralProfile::estimated(&b, 1000, &mut replicate_rng(3, 0)).unwrap();
        assert!(matches!(classify_regime(&b, &est, &P_PROBE), Err(Error::AmbiguousRegime { .. })));
    }

    #[test]
    fn report_serializes_label() {
        let m = diag(0.9, CLaw::constant(1.0));
        let r = classify_regime(&m, &SpectralProfile::exact(&m).unwrap(), &P_PROBE).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["label"], "A");
        assert_eq!(json["provenance"]["kind"], "closed_form");
    }
}

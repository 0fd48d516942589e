//! Initial laws `nu_0`, their characteristic functions and the stable limit CFs `g_gamma`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition<T> {
    /// `R = r`.
    Point { r: T },
    /// `R = m0 + scale (E - 1)` with `E` unit exponential, so `E[R] = m0`.
    ShiftedMean { m0: T, scale: T },
    /// `N(0, sigma0^2)`.
    Gaussian { sigma0: T },
    /// Cauchy with location `m0` and scale `pi c0`, so `x P[R > x] -> c0`.
    Cauchy { m0: T, c0: T },
    /// Two-sided Pareto tail `P[R > x] = c_plus x^-gamma`, `P[R < -x] = c_minus x^-gamma`.
    Pareto2 {
        gamma: T,
        c_plus: T,
        c_minus: T,
        #[serde(default)]
        centered: bool,
    },
    /// `+value` or `-value` with probability one half each.
    TwoPoint { value: T },
}

/// Which `(H_gamma)` condition a law satisfies, with its constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum HLabel {
    /// `gamma = 1`, integrable, mean `m0`.
    H1a { m0: f64 },
    /// `gamma = 1`, symmetric Cauchy-type tails with constant `c0` and principal-value mean `m0`.
    H1b { m0: f64, c0: f64 },
    /// `gamma = 2`, centred with variance `sigma0^2`.
    H2 { sigma0: f64 },
    /// `gamma` in `(0,1) u (1,2)` with tail constants.
    Stable { gamma: f64, c_plus: f64, c_minus: f64 },
}

impl HLabel {
    pub fn gamma(&self) -> f64 {
        match self {
            HLabel::H1a { .. } | HLabel::H1b { .. } => 1.0,
            HLabel::H2 { .. } => 2.0,
            HLabel::Stable { gamma, .. } => *gamma,
        }
    }

    pub fn limit(&self) -> LimitCf {
        match *self {
            HLabel::H1a { m0 } => LimitCf::Degenerate { m0 },
            HLabel::H1b { m0, c0 } => LimitCf::Cauchy { m0, c0 },
            HLabel::H2 { sigma0 } => LimitCf::Gaussian { sigma0 },
            HLabel::Stable { gamma, c_plus, c_minus } => LimitCf::stable(gamma, c_plus, c_minus),
        }
    }
}

impl<T: Real> InitialCondition<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInitialCondition(m.to_string()));
        let fin = |x: &T| x.is_finite();
        match self {
            InitialCondition::Point { r } if !fin(r) => bad("point mass must be finite"),
            InitialCondition::ShiftedMean { m0, scale } if !fin(m0) || !(*scale > T::zero()) => {
                bad("shifted_mean needs a finite mean and scale > 0")
            }
            InitialCondition::Gaussian { sigma0 } if !(*sigma0 >= T::zero()) || !fin(sigma0) => {
                bad("gaussian needs sigma0 >= 0")
            }
            InitialCondition::Cauchy { m0, c0 } if !fin(m0) || !(*c0 > T::zero()) => bad("cauchy needs c0 > 0"),
            InitialCondition::Pareto2 { gamma, c_plus, c_minus, centered } => {
                let g = gamma.f64();
                if !(g > 0.0 && g < 2.0) || g == 1.0 {
                    return bad("pareto2 needs gamma in (0,1) or (1,2)");
                }
                if *c_plus < T::zero() || *c_minus < T::zero() || !(*c_plus + *c_minus > T::zero()) {
                    return bad("pareto2 needs c_plus, c_minus >= 0 with positive sum");
                }
                if *centered && g < 1.0 {
                    return bad("pareto2 with gamma < 1 has no mean to centre");
                }
                Ok(())
            }
            InitialCondition::TwoPoint { value } if !fin(value) => bad("two_point value must be finite"),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        T::of(match self {
            InitialCondition::Point { r } => r.f64(),
            InitialCondition::ShiftedMean { m0, scale } => {
                let e: f64 = rng.sample(Exp1);
                m0.f64() + scale.f64() * (e - 1.0)
            }
            InitialCondition::Gaussian { sigma0 } => sigma0.f64() * rng.sample::<f64, _>(StandardNormal),
            InitialCondition::Cauchy { m0, c0 } => {
                let u: f64 = rng.sample(Open01);
                m0.f64() + std::f64::consts::PI * c0.f64() * (std::f64::consts::PI * (u - 0.5)).tan()
            }
            InitialCondition::Pareto2 { gamma, c_plus, c_minus, centered } => {
                let (cp, cm) = (c_plus.f64(), c_minus.f64());
                let c = cp + cm;
                let u: f64 = rng.sample(Open01);
                let magnitude = (c / u).powf(1.0 / gamma.f64());
                let v: f64 = rng.random();
                let x = if v * c < cp { magnitude } else { -magnitude };
                if *centered {
                    x - self.pareto_mean()
                } else {
                    x
                }
            }
            InitialCondition::TwoPoint { value } => {
                if rng.random::<bool>() {
                    value.f64()
                } else {
                    -value.f64()
                }
            }
        })
    }

    /// Uncentred mean of the Pareto construction, for `gamma > 1`.
    fn pareto_mean(&self) -> f64 {
        match self {
            InitialCondition::Pareto2 { gamma, c_plus, c_minus, .. } => {
                let (g, cp, cm) = (gamma.f64(), c_plus.f64(), c_minus.f64());
                let c = cp + cm;
                (cp - cm) / c * c.powf(1.0 / g) * g / (g - 1.0)
            }
            _ => 0.0,
        }
    }

    /// `E[R]` when it exists.
    pub fn mean(&self) -> Option<f64> {
        match self {
            InitialCondition::Point { r } => Some(r.f64()),
            InitialCondition::ShiftedMean { m0, .. } => Some(m0.f64()),
            InitialCondition::Gaussian { .. } | InitialCondition::TwoPoint { .. } => Some(0.0),
            InitialCondition::Cauchy { .. } => None,
            InitialCondition::Pareto2 { gamma, centered, .. } => {
                (gamma.f64() > 1.0).then(|| if *centered { 0.0 } else { self.pareto_mean() })
            }
        }
    }

    /// `E|R|^p`; infinite when the moment does not exist. For a centred Pareto law only finiteness is meaningful.
    pub fn abs_moment(&self, p: f64) -> f64 {
        match self {
            InitialCondition::Point { r } => r.f64().abs().powf(p),
            InitialCondition::TwoPoint { value } => value.f64().abs().powf(p),
            InitialCondition::Gaussian { sigma0 } => {
                let s = sigma0.f64();
                s.powf(p) * 2f64.powf(0.5 * p) * gamma_fn(0.5 * (p + 1.0)) / std::f64::consts::PI.sqrt()
            }
            InitialCondition::ShiftedMean { .. } => self.shifted_abs_moment(p),
            InitialCondition::Cauchy { .. } => {
                if p < 1.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            InitialCondition::Pareto2 { gamma, c_plus, c_minus, .. } => {
                let g = gamma.f64();
                if p >= g {
                    return f64::INFINITY;
                }
                let xm = (c_plus.f64() + c_minus.f64()).powf(1.0 / g);
                xm.powf(p) * g / (g - p)
            }
        }
    }

    fn shifted_abs_moment(&self, p: f64) -> f64 {
        let InitialCondition::ShiftedMean { m0, scale } = self else { return f64::NAN };
        let (m, s) = (m0.f64(), scale.f64());
        let steps = 20_000;
        let h = 60.0 / steps as f64;
        (0..steps)
            .map(|i| {
                let e = (i as f64 + 0.5) * h;
                (m + s * (e - 1.0)).abs().powf(p) * (-e).exp() * h
            })
            .sum()
    }

    pub fn variance(&self) -> Option<f64> {
        match self {
            InitialCondition::Point { .. } => Some(0.0),
            InitialCondition::ShiftedMean { scale, .. } => Some(scale.f64().powi(2)),
            InitialCondition::Gaussian { sigma0 } => Some(sigma0.f64().powi(2)),
            InitialCondition::TwoPoint { value } => Some(value.f64().powi(2)),
            InitialCondition::Cauchy { .. } | InitialCondition::Pareto2 { .. } => None,
        }
    }

    /// Every `(H_gamma)` condition the law certifies.
    pub fn h_labels(&self) -> Vec<HLabel> {
        let mut out = Vec::new();
        if let Some(m0) = self.mean() {
            if !matches!(self, InitialCondition::Pareto2 { .. }) {
                out.push(HLabel::H1a { m0 });
            }
            if m0 == 0.0 {
                if let Some(v) = self.variance() {
                    out.push(HLabel::H2 { sigma0: v.sqrt() });
                }
            }
        }
        match self {
            InitialCondition::Cauchy { m0, c0 } => out.push(HLabel::H1b { m0: m0.f64(), c0: c0.f64() }),
            InitialCondition::Pareto2 { gamma, c_plus, c_minus, .. } => out.push(HLabel::Stable {
                gamma: gamma.f64(),
                c_plus: c_plus.f64(),
                c_minus: c_minus.f64(),
            }),
            _ => {}
        }
        out
    }

    /// The `(H_gamma)` label for a given `gamma`, if the law certifies one.
    pub fn h_label(&self, gamma: f64) -> Option<HLabel> {
        self.h_labels().into_iter().find(|h| (h.gamma() - gamma).abs() < 1e-12)
    }

    /// Closed-form characteristic function.
    pub fn cf(&self, xi: T) -> Result<Complex<T>> {
        let x = xi.f64();
        let z = match self {
            InitialCondition::Point { r } => Complex::new(0.0, x * r.f64()).exp(),
            InitialCondition::ShiftedMean { m0, scale } => {
                let s = scale.f64();
                Complex::new(0.0, x * (m0.f64() - s)).exp() / Complex::new(1.0, -x * s)
            }
            InitialCondition::Gaussian { sigma0 } => Complex::new((-0.5 * (sigma0.f64() * x).powi(2)).exp(), 0.0),
            InitialCondition::Cauchy { m0, c0 } => {
                Complex::new(-std::f64::consts::PI * c0.f64() * x.abs(), x * m0.f64()).exp()
            }
            InitialCondition::TwoPoint { value } => Complex::new((x * value.f64()).cos(), 0.0),
            InitialCondition::Pareto2 { .. } => return Err(Error::NoClosedForm("pareto2 characteristic function")),
        };
        Ok(Complex::new(T::of(z.re), T::of(z.im)))
    }
}

pub fn sample_initial<T: Real, R: Rng + ?Sized>(ic: &InitialCondition<T>, rng: &mut R) -> T {
    ic.sample(rng)
}

pub fn cf_initial<T: Real>(ic: &InitialCondition<T>, xi: T) -> Result<Complex<T>> {
    ic.cf(xi)
}

/// Limit characteristic function `g_gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitCf {
    Degenerate { m0: f64 },
    Cauchy { m0: f64, c0: f64 },
    Gaussian { sigma0: f64 },
    Stable { gamma: f64, k0: f64, b0: f64 },
}

impl LimitCf {
    /// Stable row from tail constants: `k0 = (c+ + c-) pi / (2 Gamma(gamma) sin(pi gamma / 2))`.
    pub fn stable(gamma: f64, c_plus: f64, c_minus: f64) -> Self {
        let c = c_plus + c_minus;
        let k0 = c * std::f64::consts::PI / (2.0 * gamma_fn(gamma) * (std::f64::consts::FRAC_PI_2 * gamma).sin());
        LimitCf::Stable { gamma, k0, b0: (c_plus - c_minus) / c }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            LimitCf::Degenerate { .. } | LimitCf::Cauchy { .. } => 1.0,
            LimitCf::Gaussian { .. } => 2.0,
            LimitCf::Stable { gamma, .. } => *gamma,
        }
    }

    pub fn eval(&self, xi: f64) -> Complex<f64> {
        match *self {
            LimitCf::Degenerate { m0 } => Complex::new(0.0, m0 * xi).exp(),
            LimitCf::Cauchy { m0, c0 } => Complex::new(-std::f64::consts::PI * c0 * xi.abs(), m0 * xi).exp(),
            LimitCf::Gaussian { sigma0 } => Complex::new((-0.5 * (sigma0 * xi).powi(2)).exp(), 0.0),
            LimitCf::Stable { gamma, k0, b0 } => {
                if xi == 0.0 {
                    return Complex::new(1.0, 0.0);
                }
                let scale = k0 * xi.abs().powf(gamma);
                let skew = b0 * (std::f64::consts::FRAC_PI_2 * gamma).tan() * xi.signum();
                Complex::new(-scale, scale * skew).exp()
            }
        }
    }
}

/// Evaluates `g_gamma(xi)` after checking `gamma` against the constants.
pub fn limit_cf(gamma: f64, constants: &LimitCf, xi: f64) -> Result<Complex<f64>> {
    if !(gamma > 0.0 && gamma <= 2.0) {
        return Err(Error::InvalidInitialCondition(format!("limit index gamma = {gamma} outside (0, 2]")));
    }
    if (constants.gamma() - gamma).abs() > 1e-12 {
        return Err(Error::InvalidInitialCondition(format!(
            "constants are for gamma = {}, requested {gamma}",
            constants.gamma()
        )));
    }
    Ok(constants.eval(xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use crate::stats;
    use proptest::prelude::*;

    fn pareto(gamma: f64, c_plus: f64, c_minus: f64, centered: bool) -> InitialCondition<f64> {
        InitialCondition::Pareto2 { gamma, c_plus, c_minus, centered }
    }

    #[test]
    fn point_and_gaussian() {
        let mut rng = replicate_rng(1, 0);
        let p = InitialCondition::Point { r: 0.0 };
        assert!((0..100).all(|_| p.sample(&mut rng) == 0.0));
        let g = InitialCondition::Gaussian { sigma0: 1.0 };
        let xs: Vec<f64> = (0..1_000_000).map(|_| g.sample(&mut rng)).collect();
        let v = stats::variance_se(&xs);
        assert!((v.variance - 1.0).abs() < 4.0 * v.se);
    }

    #[test]
    fn pareto_tail_constant() {
        let ic = pareto(0.5, 1.0, 1.0, false);
        let mut rng = replicate_rng(2, 0);
        let n = 4_000_000;
        let xs: Vec<f64> = (0..n).map(|_| ic.sample(&mut rng)).collect();
        for x in [1e3f64, 1e4] {
            let tail = xs.iter().filter(|v| v.abs() > x).count() as f64 / n as f64;
            let scaled = x.sqrt() * tail;
            assert!((scaled - 2.0).abs() < 0.2, "x = {x}: {scaled}");
        }
    }

    #[test]
    fn centered_pareto_has_zero_mean() {
        let ic = pareto(1.5, 2.0, 0.5, true);
        let mut rng = replicate_rng(3, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| ic.sample(&mut rng)).collect();
        let m = stats::mean_se(&xs);
        assert!(m.mean.abs() < 4.0 * m.se, "{m:?}");
        assert_eq!(ic.mean(), Some(0.0));
    }

    #[test]
    fn pareto_small_xi_shape() {
        let gamma = 0.5;
        let ic = pareto(gamma, 1.0, 1.0, false);
        let mut rng = replicate_rng(4, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| ic.sample(&mut rng)).collect();
        let dev = |xi: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for x in &xs {
                let (s, c) = (xi * x).sin_cos();
                re += c;
                im += s;
            }
            let n = xs.len() as f64;
            (Complex::new(1.0, 0.0) - Complex::new(re / n, im / n)).norm()
        };
        let xi0 = 0.01;
        let k = dev(xi0) / xi0.powf(gamma);
        for xi in [0.02, 0.05, 0.1, -0.05, -0.1] {
            let bound = 1.5 * k * f64::abs(xi).powf(gamma);
            assert!(dev(xi) <= bound, "xi = {xi}: {} > {bound}", dev(xi));
        }
    }

    #[test]
    fn closed_form_cfs() {
        let p = InitialCondition::Point { r: 3.0 };
        assert!((p.cf(2.0).unwrap() - Complex::new(0.0, 6.0).exp()).norm() < 1e-15);
        let g = InitialCondition::Gaussian { sigma0: 1.0 };
        assert!((g.cf(1.0).unwrap().re - (-0.5f64).exp()).abs() < 1e-15);
        let c = InitialCondition::Cauchy { m0: 1.0, c0: 0.5 };
        let want = Complex::new(-std::f64::consts::PI * 0.5 * 2.0, 2.0).exp();
        assert!((c.cf(-2.0).unwrap() - want.conj()).norm() < 1e-15);
        assert!(matches!(pareto(0.5, 1.0, 1.0, false).cf(1.0), Err(Error::NoClosedForm(_))));
    }

    #[test]
    fn shifted_mean_cf_matches_samples() {
        let ic = InitialCondition::ShiftedMean { m0: 0.7, scale: 1.3 };
        let mut rng = replicate_rng(5, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| ic.sample(&mut rng)).collect();
        let m = stats::mean_se(&xs);
        assert!((m.mean - 0.7).abs() < 4.0 * m.se);
        let grid = stats::XiGrid::new(3.0, 31);
        let emp = stats::EmpiricalCf::from_samples(&xs, grid);
        assert!(emp.sup_distance_to(3.0, |x| ic.cf(x).unwrap()) < 0.01);
    }

    #[test]
    fn cauchy_tail_constant() {
        let ic = InitialCondition::Cauchy { m0: 0.0, c0: 1.0 };
        let mut rng = replicate_rng(6, 0);
        let n = 1_000_000;
        let x = 1e3;
        let tail = (0..n).filter(|_| ic.sample(&mut rng) > x).count() as f64 / n as f64;
        assert!((x * tail - 1.0).abs() < 0.15);
    }

    #[test]
    fn limit_table_rows() {
        let g = limit_cf(2.0, &LimitCf::Gaussian { sigma0: 1.0 }, 1.0).unwrap();
        assert!((g.re - (-0.5f64).exp()).abs() < 1e-15);
        let d = limit_cf(1.0, &LimitCf::Degenerate { m0: 3.0 }, 2.0).unwrap();
        assert!((d - Complex::new(0.0, 6.0).exp()).norm() < 1e-15);
        let s = LimitCf::stable(0.5, 1.0, 1.0);
        let LimitCf::Stable { k0, b0, .. } = s else { unreachable!() };
        assert!((k0 - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert_eq!(b0, 0.0);
        let v = limit_cf(0.5, &s, 1.0).unwrap();
        assert!((v.re - (-(2.0 * std::f64::consts::PI).sqrt()).exp()).abs() < 1e-14);
        assert!(limit_cf(2.5, &s, 1.0).is_err());
        assert!(limit_cf(0.0, &s, 1.0).is_err());
    }

    #[test]
    fn labels() {
        assert!(InitialCondition::Gaussian { sigma0: 2.0 }.h_label(2.0) == Some(HLabel::H2 { sigma0: 2.0 }));
        assert!(InitialCondition::Point { r: 0.0 }.h_label(2.0) == Some(HLabel::H2 { sigma0: 0.0 }));
        assert!(InitialCondition::Point { r: 1.0 }.h_label(2.0).is_none());
        assert_eq!(InitialCondition::Cauchy { m0: 0.0, c0: 1.0 }.h_label(1.0), Some(HLabel::H1b { m0: 0.0, c0: 1.0 }));
        assert!(pareto(0.5, 1.0, 1.0, false).h_label(0.5).is_some());
        assert!(pareto(1.0, 1.0, 1.0, false).validate().is_err());
        assert!(pareto(0.5, 1.0, 1.0, true).validate().is_err());
    }

    proptest! {
        #[test]
        fn limit_cf_node_constraints(gamma in 0.05f64..1.95, cp in 0.0f64..3.0, cm in 0.01f64..3.0, xi in -30.0f64..30.0) {
            prop_assume!((gamma - 1.0).abs() > 1e-3);
            let l = LimitCf::stable(gamma, cp, cm);
            let v = l.eval(xi);
            prop_assert!(v.norm() <= 1.0 + 1e-12);
            prop_assert!((l.eval(-xi) - v.conj()).norm() < 1e-12);
            prop_assert_eq!(l.eval(0.0), Complex::new(1.0, 0.0));
        }

        #[test]
        fn closed_cf_node_constraints(m0 in -5.0f64..5.0, c0 in 0.01f64..3.0, xi in -30.0f64..30.0) {
            for ic in [
                InitialCondition::Cauchy { m0, c0 },
                InitialCondition::Point { r: m0 },
                InitialCondition::ShiftedMean { m0, scale: c0 },
                InitialCondition::Gaussian { sigma0: c0 },
            ] {
                let v = ic.cf(xi).unwrap();
                prop_assert!(v.norm() <= 1.0 + 1e-12);
                prop_assert!((ic.cf(-xi).unwrap() - v.conj()).norm() < 1e-12);
                prop_assert!((ic.cf(0.0).unwrap() - Complex::new(1.0, 0.0)).norm() < 1e-15);
            }
        }
    }
}

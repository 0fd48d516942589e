//! Summary statistics, Kolmogorov-Smirnov distances and empirical characteristic functions.

use num_complex::Complex;
use serde::Serialize;

use crate::real::{KahanSum, Real};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Whether `target` lies within `k` standard errors of the mean.
    ///
    /// A zero standard error degrades to an absolute tolerance of `1e-9` relative to the target.
    pub fn within(&self, target: f64, k: f64) -> bool {
        let slack = (k * self.se).max(1e-9 * target.abs().max(1.0));
        (self.mean - target).abs() <= slack
    }

    /// Whether the `level` two-sided normal intervals of `self` and `other` overlap.
    pub fn overlaps(&self, other: &MeanEstimate, z: f64) -> bool {
        (self.mean - other.mean).abs() <= z * (self.se + other.se) + 1e-12
    }
}

pub fn mean_se<T: Real>(xs: &[T]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, se: f64::NAN, n };
    }
    let mean = xs.iter().map(|x| x.f64()).collect::<KahanSum<f64>>().value() / n as f64;
    if n == 1 {
        return MeanEstimate { mean, se: f64::NAN, n };
    }
    let ss = xs
        .iter()
        .map(|x| (x.f64() - mean).powi(2))
        .collect::<KahanSum<f64>>()
        .value();
    let var = ss / (n - 1) as f64;
    MeanEstimate { mean, se: (var / n as f64).sqrt(), n }
}

/// Sample variance with a large-sample standard error `sqrt((m4 - s^4)/n)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct VarianceEstimate {
    pub variance: f64,
    pub se: f64,
    pub n: usize,
}

pub fn variance_se<T: Real>(xs: &[T]) -> VarianceEstimate {
    let n = xs.len();
    if n < 2 {
        return VarianceEstimate { variance: f64::NAN, se: f64::NAN, n };
    }
    let mean = mean_se(xs).mean;
    let m2 = xs.iter().map(|x| (x.f64() - mean).powi(2)).sum::<f64>() / n as f64;
    let m4 = xs.iter().map(|x| (x.f64() - mean).powi(4)).sum::<f64>() / n as f64;
    let variance = m2 * n as f64 / (n - 1) as f64;
    VarianceEstimate { variance, se: ((m4 - m2 * m2).max(0.0) / n as f64).sqrt(), n }
}

/// Sample excess kurtosis; `NaN` for fewer than four points or zero variance.
pub fn excess_kurtosis<T: Real>(xs: &[T]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return f64::NAN;
    }
    let mean = mean_se(xs).mean;
    let m2 = xs.iter().map(|x| (x.f64() - mean).powi(2)).sum::<f64>() / n as f64;
    let m4 = xs.iter().map(|x| (x.f64() - mean).powi(4)).sum::<f64>() / n as f64;
    if m2 == 0.0 {
        return f64::NAN;
    }
    m4 / (m2 * m2) - 3.0
}

fn sorted_f64<T: Real>(xs: &[T]) -> Vec<f64> {
    let mut v: Vec<f64> = xs.iter().map(|x| x.f64()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile (type 7) of an unsorted sample.
pub fn quantile<T: Real>(xs: &[T], q: f64) -> f64 {
    quantile_sorted(&sorted_f64(xs), q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if sorted[lo] == sorted[hi] || sorted[lo] == f64::NEG_INFINITY {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median<T: Real>(xs: &[T]) -> f64 {
    quantile(xs, 0.5)
}

/// Median with the inter-quartile range endpoints.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

pub fn quartiles<T: Real>(xs: &[T]) -> Quartiles {
    let s = sorted_f64(xs);
    Quartiles {
        q25: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q75: quantile_sorted(&s, 0.75),
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample<T: Real>(xs: &[T], ys: &[T]) -> f64 {
    let a = sorted_f64(xs);
    let b = sorted_f64(ys);
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_one_sample<T: Real, F: Fn(f64) -> f64>(xs: &[T], cdf: F) -> f64 {
    let s = sorted_f64(xs);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Asymptotic two-sample KS critical value at `coefficient` (1.36 for 95%, 1.63 for 99%).
pub fn ks_noise_floor(coefficient: f64, n: usize, m: usize) -> f64 {
    coefficient * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Uniform symmetric frequency grid `[-xi_max, xi_max]` with an odd number of nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XiGrid<T> {
    pub xi_max: T,
    pub n_points: usize,
}

impl<T: Real> XiGrid<T> {
    pub fn new(xi_max: T, n_points: usize) -> Self {
        assert!(n_points % 2 == 1 && n_points >= 3, "grid needs an odd node count >= 3");
        assert!(xi_max > T::zero(), "grid half-width must be positive");
        Self { xi_max, n_points }
    }

    pub fn center(&self) -> usize {
        (self.n_points - 1) / 2
    }

    pub fn step(&self) -> T {
        self.xi_max / T::of_usize(self.center())
    }

    pub fn node(&self, index: usize) -> T {
        T::of(index as f64 - self.center() as f64) * self.step()
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }
}

/// Empirical characteristic function `(1/n) sum exp(i xi x_j)` on a symmetric grid.
///
/// Only the non-negative half is computed; the other half is its conjugate mirror,
/// so Hermitian symmetry and the unit value at zero hold exactly.
#[derive(Clone, Debug)]
pub struct EmpiricalCf<T> {
    pub n: usize,
    pub grid: XiGrid<T>,
    pub values: Vec<Complex<T>>,
}

impl<T: Real> EmpiricalCf<T> {
    pub fn from_samples(samples: &[T], grid: XiGrid<T>) -> Self {
        let c = grid.center();
        let n = samples.len();
        let mut values = vec![Complex::new(T::one(), T::zero()); grid.n_points];
        let inv_n = 1.0 / n as f64;
        for k in 1..=c {
            let xi = grid.node(c + k).f64();
            let (mut re, mut im) = (KahanSum::<f64>::new(), KahanSum::<f64>::new());
            for x in samples {
                let (s, co) = (xi * x.f64()).sin_cos();
                re.add(co);
                im.add(s);
            }
            let z = Complex::new(T::of(re.value() * inv_n), T::of(im.value() * inv_n));
            values[c + k] = z;
            values[c - k] = z.conj();
        }
        Self { n, grid, values }
    }

    /// Per-node standard-error envelope `sqrt((1 - |phi|^2)/n)`.
    pub fn se(&self) -> Vec<T> {
        let n = T::of_usize(self.n);
        self.values
            .iter()
            .map(|z| ((T::one() - z.norm_sqr()).max(T::zero()) / n).sqrt())
            .collect()
    }

    /// Largest modulus difference against `other` evaluated at the same nodes, restricted to `|xi| <= xi_cap`.
    pub fn sup_distance_to<F: Fn(T) -> Complex<T>>(&self, xi_cap: T, other: F) -> f64 {
        sup_distance_on(&self.grid, &self.values, xi_cap, other)
    }
}

/// `max |values[i] - f(xi_i)|` over nodes with `|xi_i| <= xi_cap`.
pub fn sup_distance_on<T: Real, F: Fn(T) -> Complex<T>>(
    grid: &XiGrid<T>,
    values: &[Complex<T>],
    xi_cap: T,
    f: F,
) -> f64 {
    let eps = grid.step() * T::of(1e-6);
    values
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.node(*i).abs() <= xi_cap + eps)
        .map(|(i, v)| (*v - f(grid.node(i))).norm().f64())
        .fold(0.0, f64::max)
}

/// Largest node-wise modulus difference between two value vectors on a shared grid.
pub fn sup_distance<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (*x - *y).norm().f64()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_of_small_sample() {
        let m = mean_se(&[1.0f64, 2.0, 3.0, 4.0]);
        assert!((m.mean - 2.5).abs() < 1e-15);
        assert!((m.se - (1.666_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!(m.within(2.5, 0.0));
    }

    #[test]
    fn zero_se_degrades_to_tight_absolute_check() {
        let m = mean_se(&[0.8f64; 10]);
        assert_eq!(m.se, 0.0);
        assert!(m.within(0.8, 3.0));
        assert!(!m.within(0.81, 3.0));
    }

    #[test]
    fn quantiles_type7() {
        let xs = [4.0f64, 1.0, 3.0, 2.0];
        assert_eq!(median(&xs), 2.5);
        let q = quartiles(&xs);
        assert_eq!(q.q25, 1.75);
        assert_eq!(q.q75, 3.25);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [1.0f64, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&a, &[10.0, 11.0]), 1.0);
        // constant sample against itself after a map that keeps it constant
        assert_eq!(ks_two_sample(&[2.0f64; 5], &[2.0f64; 7]), 0.0);
    }

    #[test]
    fn ks_one_sample_uniform_grid() {
        let xs: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        let d = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn empirical_cf_node_constraints() {
        let xs = [0.3f64, -1.2, 2.0, 0.7];
        let cf = EmpiricalCf::from_samples(&xs, XiGrid::new(4.0, 41));
        let c = cf.grid.center();
        assert_eq!(cf.values[c], Complex::new(1.0, 0.0));
        for k in 1..=c {
            assert_eq!(cf.values[c - k], cf.values[c + k].conj());
            assert!(cf.values[c + k].norm() <= 1.0 + 1e-12);
        }
        let xi = cf.grid.node(c + 5);
        let direct: Complex<f64> =
            xs.iter().map(|x| Complex::new(0.0, xi * x).exp()).sum::<Complex<f64>>() / 4.0;
        assert!((direct - cf.values[c + 5]).norm() < 1e-14);
    }

    #[test]
    fn grid_geometry() {
        let g = XiGrid::new(20.0f64, 2001);
        assert_eq!(g.center(), 1000);
        assert!((g.step() - 0.02).abs() < 1e-15);
        assert_eq!(g.node(1000), 0.0);
        assert!((g.node(2000) - 20.0).abs() < 1e-12);
    }
}

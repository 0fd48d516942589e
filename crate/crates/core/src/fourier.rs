//! Deterministic time stepping of `d/dt phi_t = Q phi_t - phi_t` on a frequency grid.
//!
//! `Q psi(xi) = E[e^{i xi s C} prod_k psi(A_k xi)]` is evaluated against a fixed panel of
//! collisions drawn once per run, with piecewise-linear interpolation between nodes.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::collision::{CollisionModel, CollisionSample};
use crate::engine::{simulate_ensemble, SimulationPlan};
use crate::error::{Error, Result};
use crate::initial::InitialCondition;
use crate::real::Real;
use crate::rng::{replicate_rng, sub_seed};
use crate::stats::{sup_distance, EmpiricalCf, XiGrid};

/// Smallest admissible panel.
pub const MIN_PANEL: usize = 1000;

/// Pre-projection modulus above which the solver aborts.
pub const INSTABILITY_THRESHOLD: f64 = 1.0 + 1e-3;

/// Characteristic function sampled on a symmetric grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CfGrid<T> {
    pub grid: XiGrid<T>,
    pub values: Vec<Complex<T>>,
    pub time: f64,
}

impl<T: Real> CfGrid<T> {
    /// Evaluates `f` on the non-negative half and mirrors it; the centre is set to one.
    pub fn from_fn<F: Fn(T) -> Complex<T> + Sync>(grid: XiGrid<T>, f: F) -> Self {
        let c = grid.center();
        let half: Vec<Complex<T>> = (1..=c).into_par_iter().map(|k| f(grid.node(c + k))).collect();
        let mut values = vec![Complex::new(T::one(), T::zero()); grid.n_points];
        for (k, v) in half.into_iter().enumerate() {
            values[c + 1 + k] = v;
            values[c - 1 - k] = v.conj();
        }
        Self { grid, values, time: 0.0 }
    }

    pub fn ones(grid: XiGrid<T>) -> Self {
        Self::from_fn(grid, |_| Complex::new(T::one(), T::zero()))
    }

    pub fn xi(&self, index: usize) -> T {
        self.grid.node(index)
    }

    /// Piecewise-linear value at `x`; off-grid points take the boundary node and report `true`.
    #[inline]
    pub fn interp(&self, x: T) -> (Complex<T>, bool) {
        let n = self.values.len();
        let pos = (x + self.grid.xi_max) / self.grid.step();
        if pos <= T::zero() {
            return (self.values[0], pos < T::zero());
        }
        let last = T::of_usize(n - 1);
        if pos >= last {
            return (self.values[n - 1], pos > last);
        }
        let i = pos.floor();
        let f = pos - i;
        let i = i.to_usize().expect("in range");
        (self.values[i] * (T::one() - f) + self.values[i + 1] * f, false)
    }

    /// Re-imposes `phi(0) = 1`, Hermitian symmetry and `|phi| <= 1`; returns the largest modulus seen before clipping.
    pub fn project(&mut self) -> f64 {
        let c = self.grid.center();
        let mut max_mod = 0.0f64;
        self.values[c] = Complex::new(T::one(), T::zero());
        for k in 1..=c {
            let mut v = self.values[c + k];
            let m = v.norm();
            max_mod = max_mod.max(m.f64());
            if m > T::one() {
                v = v / m;
            }
            self.values[c + k] = v;
            self.values[c - k] = v.conj();
        }
        max_mod
    }

    /// Largest node-wise modulus difference, restricted to `|xi| <= xi_cap`.
    pub fn sup_distance(&self, other: &[Complex<T>], xi_cap: T) -> f64 {
        crate::stats::sup_distance_on(&self.grid, &self.values, xi_cap, |x| {
            let i = ((x + self.grid.xi_max) / self.grid.step()).round().to_usize().expect("node");
            other[i]
        })
    }

    /// Rows `t,xi,re,im`.
    pub fn write_csv<W: Write>(grids: &[CfGrid<T>], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "xi", "re", "im"])?;
        for g in grids {
            for (i, v) in g.values.iter().enumerate() {
                w.write_record([
                    format!("{}", g.time),
                    format!("{}", g.xi(i)),
                    format!("{:e}", v.re.f64()),
                    format!("{:e}", v.im.f64()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    count: usize,
    c_index: usize,
    weights: Vec<T>,
}

/// Fixed empirical collision law; identical draws are stored once with a multiplicity.
#[derive(Clone, Debug)]
pub struct QuadraturePanel<T> {
    pub size: usize,
    pub seed: u64,
    entries: Vec<Entry<T>>,
    distinct_c: Vec<T>,
    /// Entry of every draw in order, so per-draw auxiliaries can be attached.
    entry_of: Vec<u32>,
}

impl<T: Real> QuadraturePanel<T> {
    pub fn draw(model: &CollisionModel<T>, size: usize, seed: u64) -> Result<Self> {
        let mut rng = replicate_rng(seed, 0);
        let mut sample = CollisionSample::default();
        let samples = (0..size).map(|_| {
            model.sample_into(&mut rng, &mut sample);
            sample.clone()
        });
        Self::from_samples(samples, seed)
    }

    pub fn from_samples<I: IntoIterator<Item = CollisionSample<T>>>(samples: I, seed: u64) -> Result<Self> {
        let mut entries: Vec<Entry<T>> = Vec::new();
        let mut distinct_c: Vec<T> = Vec::new();
        let mut by_key: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut by_c: HashMap<u64, usize> = HashMap::new();
        let mut entry_of = Vec::new();
        for s in samples {
            let cbits = s.c.f64().to_bits();
            let mut key = vec![cbits];
            key.extend(s.weights.iter().map(|w| w.f64().to_bits()));
            let idx = *by_key.entry(key).or_insert_with(|| {
                let c_index = *by_c.entry(cbits).or_insert_with(|| {
                    distinct_c.push(s.c);
                    distinct_c.len() - 1
                });
                entries.push(Entry { count: 0, c_index, weights: s.weights.clone() });
                entries.len() - 1
            });
            entries[idx].count += 1;
            entry_of.push(idx as u32);
        }
        let size = entry_of.len();
        if size < MIN_PANEL {
            return Err(Error::InvalidPlan(format!("quadrature panel needs at least {MIN_PANEL} draws, got {size}")));
        }
        Ok(Self { size, seed, entries, distinct_c, entry_of })
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    /// A panel of the same size resampled with replacement from this one.
    pub fn bootstrap(&self, seed: u64) -> Self {
        let mut rng = replicate_rng(seed, 0);
        let draws = (0..self.size).map(|_| {
            let e = &self.entries[self.entry_of[rng.random_range(0..self.size)] as usize];
            CollisionSample { c: self.distinct_c[e.c_index], weights: e.weights.clone() }
        });
        Self::from_samples(draws.collect::<Vec<_>>(), seed).expect("same size as a valid panel")
    }

    pub fn max_weight(&self) -> T {
        self.entries.iter().flat_map(|e| e.weights.iter().copied()).fold(T::zero(), T::max)
    }
}

#[derive(Clone, Debug)]
pub struct Applied<T> {
    pub grid: CfGrid<T>,
    pub clamped: u64,
    pub evaluations: u64,
}

impl<T> Applied<T> {
    pub fn clamp_fraction(&self) -> f64 {
        if self.evaluations == 0 {
            0.0
        } else {
            self.clamped as f64 / self.evaluations as f64
        }
    }
}

/// `Q_s psi` at every node, averaged over the panel.
pub fn apply_q<T: Real>(psi: &CfGrid<T>, panel: &QuadraturePanel<T>, s_scale: T) -> Applied<T> {
    let grid = psi.grid.clone();
    let c = grid.center();
    let inv = T::one() / T::of_usize(panel.size);
    let per_node: Vec<(Complex<T>, u64, u64)> = (1..=c)
        .into_par_iter()
        .map(|k| {
            let xi = grid.node(c + k);
            let phases: Vec<Complex<T>> = panel
                .distinct_c
                .iter()
                .map(|cv| {
                    let (s, co) = (xi * s_scale * *cv).sin_cos();
                    Complex::new(co, s)
                })
                .collect();
            let mut acc = Complex::new(T::zero(), T::zero());
            let (mut clamped, mut evals) = (0u64, 0u64);
            for e in &panel.entries {
                let mut prod = phases[e.c_index];
                let mut offs = 0u64;
                for a in &e.weights {
                    let (v, off) = psi.interp(*a * xi);
                    offs += off as u64;
                    prod = prod * v;
                }
                clamped += offs * e.count as u64;
                evals += e.weights.len() as u64 * e.count as u64;
                acc = acc + prod * T::of_usize(e.count);
            }
            (acc * inv, clamped, evals)
        })
        .collect();
    let mut values = vec![Complex::new(T::one(), T::zero()); grid.n_points];
    let (mut clamped, mut evaluations) = (0, 0);
    for (k, (v, cl, ev)) in per_node.into_iter().enumerate() {
        values[c + 1 + k] = v;
        values[c - 1 - k] = v.conj();
        clamped += cl;
        evaluations += ev;
    }
    Applied { grid: CfGrid { grid, values, time: psi.time }, clamped, evaluations }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolveMeta {
    pub panel_seed: u64,
    pub panel_size: usize,
    pub panel_distinct: usize,
    pub dt: f64,
    pub t_end: f64,
    pub xi_max: f64,
    pub n_points: usize,
    pub steps: usize,
    pub clamped: u64,
    pub max_modulus_before_projection: f64,
}

#[derive(Clone, Debug)]
pub struct Evolution<T> {
    pub final_grid: CfGrid<T>,
    pub checkpoints: Vec<CfGrid<T>>,
    pub meta: EvolveMeta,
}

/// Heun steps of `phi' = Q phi - phi` from `phi0` to `t_end`, projecting after every step.
///
/// `checkpoints` must be multiples of `dt` up to rounding; each is emitted as a grid.
pub fn evolve<T: Real>(
    phi0: &CfGrid<T>,
    panel: &QuadraturePanel<T>,
    t_end: f64,
    dt: f64,
    checkpoints: &[f64],
) -> Result<Evolution<T>> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(Error::InvalidPlan(format!("time step {dt} outside (0, 0.05]")));
    }
    if !(0.0..=10.0).contains(&t_end) {
        return Err(Error::InvalidPlan(format!("horizon {t_end} outside [0, 10]")));
    }
    let steps = (t_end / dt).round() as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let wanted: Vec<usize> = checkpoints.iter().map(|t| (t / h.max(f64::MIN_POSITIVE)).round() as usize).collect();
    let mut phi = phi0.clone();
    phi.time = 0.0;
    let ht = T::of(h);
    let half = T::of(0.5 * h);
    let mut out = Vec::new();
    let mut clamped = 0u64;
    let mut max_mod = 0.0f64;
    if wanted.contains(&0) {
        out.push(phi.clone());
    }
    for step in 1..=steps {
        let q1 = apply_q(&phi, panel, T::one());
        clamped += q1.clamped;
        let k1: Vec<Complex<T>> = q1.grid.values.iter().zip(&phi.values).map(|(q, p)| *q - *p).collect();
        let mut mid = phi.clone();
        for (m, k) in mid.values.iter_mut().zip(&k1) {
            *m = *m + *k * ht;
        }
        let q2 = apply_q(&mid, panel, T::one());
        clamped += q2.clamped;
        for ((p, k), (q, m)) in phi.values.iter_mut().zip(&k1).zip(q2.grid.values.iter().zip(&mid.values)) {
            *p = *p + (*k + (*q - *m)) * half;
        }
        phi.time = step as f64 * h;
        let m = phi.project();
        max_mod = max_mod.max(m);
        if m > INSTABILITY_THRESHOLD {
            return Err(Error::Unstable { t: phi.time, modulus: m });
        }
        if wanted.contains(&step) {
            out.push(phi.clone());
        }
    }
    let meta = EvolveMeta {
        panel_seed: panel.seed,
        panel_size: panel.size,
        panel_distinct: panel.distinct(),
        dt: h,
        t_end,
        xi_max: phi.grid.xi_max.f64(),
        n_points: phi.grid.n_points,
        steps,
        clamped,
        max_modulus_before_projection: max_mod,
    };
    Ok(Evolution { final_grid: phi, checkpoints: out, meta })
}

impl EvolveMeta {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Residual {
    pub residual: f64,
    pub clamp_fraction: f64,
}

/// `sup |w(xi) - E[prod_k w(L^{-alpha} A_k xi)]|` with `L` uniform on `(0,1)`, one `L` per panel draw.
pub fn stationary_residual<T: Real>(w: &CfGrid<T>, panel: &QuadraturePanel<T>, alpha: f64, l_seed: u64) -> Residual {
    let mut rng = replicate_rng(l_seed, 0);
    let scales: Vec<T> = (0..panel.size)
        .map(|_| {
            let l: f64 = rng.sample(rand_distr::Open01);
            T::of(l.powf(-alpha))
        })
        .collect();
    let grid = &w.grid;
    let c = grid.center();
    let inv = T::one() / T::of_usize(panel.size);
    let per_node: Vec<(f64, u64, u64)> = (1..=c)
        .into_par_iter()
        .map(|k| {
            let xi = grid.node(c + k);
            let mut acc = Complex::new(T::zero(), T::zero());
            let (mut clamped, mut evals) = (0u64, 0u64);
            for (j, s) in scales.iter().enumerate() {
                let e = &panel.entries[panel.entry_of[j] as usize];
                let mut prod = Complex::new(T::one(), T::zero());
                for a in &e.weights {
                    let (v, off) = w.interp(*s * *a * xi);
                    clamped += off as u64;
                    evals += 1;
                    prod = prod * v;
                }
                acc = acc + prod;
            }
            ((w.values[c + k] - acc * inv).norm().f64(), clamped, evals)
        })
        .collect();
    let residual = per_node.iter().map(|r| r.0).fold(0.0, f64::max);
    let clamped: u64 = per_node.iter().map(|r| r.1).sum();
    let evals: u64 = per_node.iter().map(|r| r.2).sum();
    Residual { residual, clamp_fraction: if evals == 0 { 0.0 } else { clamped as f64 / evals as f64 } }
}

/// Per-node standard deviation of the solution across `n_boot` bootstrap panels.
pub fn panel_bootstrap_se<T: Real>(
    phi0: &CfGrid<T>,
    panel: &QuadraturePanel<T>,
    t_end: f64,
    dt: f64,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let runs = (0..n_boot)
        .map(|b| Ok(evolve(phi0, &panel.bootstrap(sub_seed(seed, b as u64)), t_end, dt, &[])?.final_grid))
        .collect::<Result<Vec<_>>>()?;
    let n = phi0.values.len();
    Ok((0..n)
        .map(|i| {
            let mean = runs.iter().map(|r| r.values[i]).fold(Complex::new(T::zero(), T::zero()), |a, b| a + b)
                / T::of_usize(n_boot);
            let var = runs.iter().map(|r| (r.values[i] - mean).norm_sqr().f64()).sum::<f64>() / (n_boot - 1) as f64;
            var.sqrt()
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct CrosscheckReport {
    pub t: f64,
    pub n_replicates: usize,
    pub sup_distance: f64,
    pub capped_fraction: f64,
    pub solver: EvolveMeta,
}

/// Sup-distance on the grid between the solver's `phi_t` and the empirical CF of Monte Carlo `W_t`.
pub fn crosscheck<T: Real>(
    model: &CollisionModel<T>,
    ic: &InitialCondition<T>,
    t: f64,
    n_replicates: usize,
    panel_size: usize,
    dt: f64,
    grid: XiGrid<T>,
    seed: u64,
    threads: Option<usize>,
) -> Result<(CrosscheckReport, CfGrid<T>, EmpiricalCf<T>)> {
    let phi0 = initial_grid(ic, grid.clone())?;
    let panel = QuadraturePanel::draw(model, panel_size, sub_seed(seed, 1))?;
    let ev = evolve(&phi0, &panel, t, dt, &[])?;
    let plan = SimulationPlan::new(model.clone(), ic.clone(), vec![t], vec![], sub_seed(seed, 0))?;
    let ens = simulate_ensemble(&plan, n_replicates, threads);
    ens.check_invariants()?;
    let w = ens.column(0, |c| c.w);
    let ecf = EmpiricalCf::from_samples(&w, grid);
    let report = CrosscheckReport {
        t,
        n_replicates: w.len(),
        sup_distance: sup_distance(&ev.final_grid.values, &ecf.values),
        capped_fraction: ens.capped_fraction(),
        solver: ev.meta,
    };
    Ok((report, ev.final_grid, ecf))
}

/// Closed-form initial characteristic function on the grid.
pub fn initial_grid<T: Real>(ic: &InitialCondition<T>, grid: XiGrid<T>) -> Result<CfGrid<T>> {
    ic.cf(T::one())?;
    Ok(CfGrid::from_fn(grid, |x| ic.cf(x).expect("closed form checked above")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::CLaw;
    use crate::initial::LimitCf;

    fn diag_panel(a: f64, c: CLaw<f64>) -> QuadraturePanel<f64> {
        QuadraturePanel::draw(&CollisionModel::diag(2, a, c).unwrap(), 1000, 3).unwrap()
    }

    #[test]
    fn q_of_one_without_shift_is_one() {
        let p = QuadraturePanel::draw(&CollisionModel::kac(CLaw::constant(1.0)).unwrap(), 2000, 1).unwrap();
        let g = CfGrid::ones(XiGrid::new(5.0, 101));
        let q = apply_q(&g, &p, 0.0);
        assert!(q.grid.values.iter().all(|v| (v - Complex::new(1.0, 0.0)).norm() < 1e-14));
        assert_eq!(q.clamped, 0);
    }

    #[test]
    fn q_of_point_mass_on_diag_half() {
        let p = diag_panel(0.5, CLaw::constant(0.7));
        assert_eq!(p.distinct(), 1);
        let r = 1.3;
        let g = CfGrid::from_fn(XiGrid::new(4.0, 401), |x| Complex::new(0.0, x * r).exp());
        let q = apply_q(&g, &p, 1.0);
        for i in 0..g.values.len() {
            let xi = g.xi(i);
            let want = Complex::new(0.0, xi * (0.7 + r)).exp();
            // each of the two factors carries interpolation error up to (r h)^2 / 8
            assert!((q.grid.values[i] - want).norm() < 4e-4, "xi = {xi}");
        }
        assert_eq!(q.grid.values[200], Complex::new(1.0, 0.0));
    }

    #[test]
    fn panel_minimum_size() {
        let m = CollisionModel::diag(2, 0.5, CLaw::constant(1.0)).unwrap();
        assert!(QuadraturePanel::draw(&m, 999, 0).is_err());
    }

    #[test]
    fn evolve_keeps_node_constraints() {
        let p = QuadraturePanel::draw(&CollisionModel::kac(CLaw::two_point(1.0)).unwrap(), 1000, 2).unwrap();
        let g0 = CfGrid::from_fn(XiGrid::new(10.0, 201), |x| Complex::new(0.0, x).exp());
        let ev = evolve(&g0, &p, 0.5, 0.05, &[0.25, 0.5]).unwrap();
        assert_eq!(ev.checkpoints.len(), 2);
        for g in ev.checkpoints.iter().chain([&ev.final_grid]) {
            let c = g.grid.center();
            assert_eq!(g.values[c], Complex::new(1.0, 0.0));
            for k in 1..=c {
                assert_eq!(g.values[c - k], g.values[c + k].conj());
                assert!(g.values[c + k].norm() <= 1.0 + 1e-9);
            }
        }
        assert_eq!(ev.meta.clamped, 0);
        assert!(evolve(&g0, &p, 1.0, 0.1, &[]).is_err());
        assert!(evolve(&g0, &p, 11.0, 0.05, &[]).is_err());
    }

    #[test]
    fn evolve_matches_closed_form_for_deterministic_shift() {
        // diag(2, 1/2) with C = c and a point mass at r: the mean is preserved
        // (E W_t = r + c t since Phi(1) = 0) and W_t stays the point r when c = 0.
        let p = diag_panel(0.5, CLaw::Centered);
        let r = 0.8;
        let g0 = CfGrid::from_fn(XiGrid::new(6.0, 601), |x| Complex::new(0.0, x * r).exp());
        let ev = evolve(&g0, &p, 1.0, 0.02, &[]).unwrap();
        let d = ev.final_grid.sup_distance(&g0.values, 6.0);
        assert!(d < 1e-3, "{d}");
    }

    #[test]
    fn stationary_residual_of_constant_and_stable() {
        let p = diag_panel(0.25, CLaw::Centered);
        let ones = CfGrid::ones(XiGrid::new(5.0, 201));
        let r = stationary_residual(&ones, &p, 0.7, 1);
        assert_eq!(r.residual, 0.0);
        let p2 = diag_panel(std::f64::consts::FRAC_1_SQRT_2, CLaw::Centered);
        let gauss = LimitCf::Gaussian { sigma0: 1.0 };
        let w = CfGrid::from_fn(XiGrid::new(5.0, 2001), |x| gauss.eval(x));
        let r = stationary_residual(&w, &p2, 0.0, 1);
        assert!(r.residual < 1e-3, "{}", r.residual);
        assert_eq!(r.clamp_fraction, 0.0);
    }

    #[test]
    fn interpolation_clamps_off_grid() {
        let g = CfGrid::from_fn(XiGrid::new(1.0, 21), |x: f64| Complex::new(x.cos(), x.sin()));
        let (v, off) = g.interp(2.0);
        assert!(off);
        assert_eq!(v, g.values[20]);
        let (v, off) = g.interp(0.05);
        assert!(!off);
        let want = (g.values[10] + g.values[11]) * 0.5;
        assert!((v - want).norm() < 1e-15);
    }

    #[test]
    fn f32_grid_evolves() {
        let m = CollisionModel::<f32>::diag(2, 0.5, CLaw::constant(1.0)).unwrap();
        let p = QuadraturePanel::draw(&m, 1000, 1).unwrap();
        let g0 = CfGrid::ones(XiGrid::new(4.0f32, 81));
        let ev = evolve(&g0, &p, 0.2, 0.05, &[]).unwrap();
        assert_eq!(ev.final_grid.values[40], Complex::new(1.0f32, 0.0));
    }
}

//! Integration against the Lebesgue–Poisson measure `λ_z` on a bounded window.
//!
//! Everything reduces to one primitive, [`LPIntegrator::sector`], which
//! integrates a function of `n_free + n_sym` points over `Λ^{n_free+n_sym}`,
//! the last `n_sym` arguments being interchangeable. Sector sums weighted by
//! `zⁿ/n!` then give `λ_z` integrals.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{partitions, FiniteConfig, Point, Window, DEFAULT_SUBSET_CAP, MAX_DIM};
use crate::error::{Error, Result};
use crate::harmonic::{star_at, ConfigFn, Structure};
use crate::numeric::{factorial, CompensatedSum, Moments};
use crate::rng::{mix, mix3, stream_rng};

/// Tensor grids cover at most this many scalar dimensions.
pub const MAX_TENSOR_DIMS: usize = 6;
const MC_BLOCK: usize = 512;

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IntegrationMode {
    MonteCarlo {
        samples_per_sector: usize,
        seed: u64,
        /// Samples used by nested integrals evaluated inside an outer sample.
        #[serde(default = "one")]
        inner_samples: usize,
    },
    TensorGrid { points_per_axis: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
    pub sectors_used: usize,
    pub truncation_bound: f64,
}

impl EstimateWithError {
    pub fn exact(value: f64) -> Self {
        EstimateWithError { value, std_error: 0.0, sectors_used: 0, truncation_bound: 0.0 }
    }

    pub fn combined_sigma(&self, other: &EstimateWithError) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// `|a − b|` in combined standard errors (0 if equal, ∞ if errors vanish).
    pub fn sigma_distance(&self, other: &EstimateWithError) -> f64 {
        let diff = (self.value - other.value).abs();
        let s = self.combined_sigma(other);
        if diff == 0.0 {
            0.0
        } else if s == 0.0 {
            f64::INFINITY
        } else {
            diff / s
        }
    }

    pub fn relative_difference(&self, other: &EstimateWithError) -> f64 {
        let diff = (self.value - other.value).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.value.abs().max(other.value.abs())
        }
    }

    /// `a·self + b·other`, errors added in quadrature.
    pub fn combine(&self, a: f64, other: &EstimateWithError, b: f64) -> Self {
        EstimateWithError {
            value: a * self.value + b * other.value,
            std_error: (a * self.std_error).hypot(b * other.std_error),
            sectors_used: self.sectors_used.max(other.sectors_used),
            truncation_bound: a.abs() * self.truncation_bound + b.abs() * other.truncation_bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LPIntegrator {
    window: Window,
    z: f64,
    order_cap: usize,
    mode: IntegrationMode,
}

/// Uniform grid on the window used by tensor mode and the hierarchy solver.
#[derive(Clone, Debug)]
pub(crate) struct Grid {
    pub lower: [f64; MAX_DIM],
    pub h: [f64; MAX_DIM],
    pub p: usize,
    pub dim: usize,
    pub cells: usize,
    pub cell_volume: f64,
}

/// Relative offset that keeps nodes of different slots distinct.
pub(crate) fn microshift(slot: usize, salt: u64) -> f64 {
    (1.0 + slot as f64 + 40.0 * (salt % 16) as f64) * 2f64.powi(-30)
}

impl Grid {
    pub fn new(window: &Window, p: usize) -> Self {
        let dim = window.dim();
        let mut lower = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM];
        for i in 0..dim {
            lower[i] = window.lower().coord(i);
            h[i] = window.side(i) / p as f64;
        }
        let cells = p.pow(dim as u32);
        Grid { lower, h, p, dim, cells, cell_volume: window.volume() / cells as f64 }
    }

    pub fn cell_index(&self, cell: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut c = cell;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = c % self.p;
            c /= self.p;
        }
        idx
    }

    pub fn node(&self, cell: usize, slot: usize, salt: u64) -> Point {
        let idx = self.cell_index(cell);
        let eps = microshift(slot, salt);
        let mut c = [0.0; MAX_DIM];
        for i in 0..self.dim {
            c[i] = self.lower[i] + (idx[i] as f64 + 0.5 + eps) * self.h[i];
        }
        Point::raw(&c[..self.dim])
    }

    /// Cell containing `x` (clamped to the grid).
    pub fn locate(&self, x: &Point) -> usize {
        let mut cell = 0;
        for i in (0..self.dim).rev() {
            let j = ((x.coord(i) - self.lower[i]) / self.h[i]).floor();
            let j = (j.max(0.0) as usize).min(self.p - 1);
            cell = cell * self.p + j;
        }
        cell
    }
}

/// Advance a non-decreasing tuple with entries `< cells`, keeping `t[0]` fixed.
fn next_multiset(t: &mut [usize], cells: usize) -> bool {
    let n = t.len();
    let mut i = n;
    while i > 1 {
        i -= 1;
        if t[i] + 1 < cells {
            let v = t[i] + 1;
            for x in t.iter_mut().skip(i) {
                *x = v;
            }
            return true;
        }
    }
    false
}

fn next_tuple(t: &mut [usize], cells: usize) -> bool {
    for x in t.iter_mut() {
        *x += 1;
        if *x < cells {
            return true;
        }
        *x = 0;
    }
    false
}

fn multiset_weight(t: &[usize]) -> f64 {
    let mut w = factorial(t.len());
    let mut i = 0;
    while i < t.len() {
        let mut j = i;
        while j < t.len() && t[j] == t[i] {
            j += 1;
        }
        w /= factorial(j - i);
        i = j;
    }
    w
}

fn nonfinite(v: f64) -> Error {
    Error::NonFiniteValue(format!("integrand value {v}"))
}

/// Unordered `n`-ary function of configurations, e.g. `H(η₁,…,η_n)`.
pub type TupleFn = Arc<dyn Fn(&[FiniteConfig]) -> Result<f64> + Send + Sync>;

impl LPIntegrator {
    pub fn new(window: Window, z: f64, order_cap: usize, mode: IntegrationMode) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidInput(format!("intensity z = {z} must be positive and finite")));
        }
        match mode {
            IntegrationMode::MonteCarlo { samples_per_sector, inner_samples, .. } => {
                if samples_per_sector < 100 {
                    return Err(Error::InvalidInput(format!(
                        "samples_per_sector = {samples_per_sector} below the minimum of 100"
                    )));
                }
                if inner_samples == 0 {
                    return Err(Error::InvalidInput("inner_samples must be at least 1".into()));
                }
            }
            IntegrationMode::TensorGrid { points_per_axis } => {
                if points_per_axis == 0 {
                    return Err(Error::InvalidInput("points_per_axis must be at least 1".into()));
                }
            }
        }
        let w = z * window.volume();
        for n in 0..=order_cap {
            if !(w.powi(n as i32) / factorial(n)).is_finite() {
                return Err(Error::InvalidInput(format!("sector weight at order {n} overflows")));
            }
        }
        Ok(LPIntegrator { window, z, order_cap, mode })
    }

    pub fn monte_carlo(window: Window, z: f64, order_cap: usize, samples: usize, seed: u64) -> Result<Self> {
        Self::new(window, z, order_cap, IntegrationMode::MonteCarlo { samples_per_sector: samples, seed, inner_samples: 1 })
    }

    pub fn tensor(window: Window, z: f64, order_cap: usize, points_per_axis: usize) -> Result<Self> {
        Self::new(window, z, order_cap, IntegrationMode::TensorGrid { points_per_axis })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn order_cap(&self) -> usize {
        self.order_cap
    }

    pub fn mode(&self) -> &IntegrationMode {
        &self.mode
    }

    pub fn is_tensor(&self) -> bool {
        matches!(self.mode, IntegrationMode::TensorGrid { .. })
    }

    pub fn with_order_cap(&self, order_cap: usize) -> Self {
        LPIntegrator { order_cap, ..self.clone() }
    }

    pub fn with_z(&self, z: f64) -> Result<Self> {
        Self::new(self.window.clone(), z, self.order_cap, self.mode.clone())
    }

    pub fn with_inner_samples(&self, inner: usize) -> Self {
        let mut out = self.clone();
        if let IntegrationMode::MonteCarlo { inner_samples, .. } = &mut out.mode {
            *inner_samples = inner.max(1);
        }
        out
    }

    /// Integrator for an integral nested inside one outer sample with key `key`.
    pub fn child(&self, key: u64) -> Self {
        match self.mode {
            IntegrationMode::TensorGrid { .. } => self.clone(),
            IntegrationMode::MonteCarlo { inner_samples, .. } => LPIntegrator {
                mode: IntegrationMode::MonteCarlo { samples_per_sector: inner_samples, seed: key, inner_samples },
                ..self.clone()
            },
        }
    }

    pub fn sector_weight(&self, n: usize) -> f64 {
        self.z.powi(n as i32) / factorial(n)
    }

    /// `∫_{Λ^{n_free+n_sym}} f(x₁,…) dx`, where `f` is symmetric in its last
    /// `n_sym` arguments. `f` also receives a per-sample key for nested integrals.
    pub fn sector<F>(&self, n_free: usize, n_sym: usize, salt: u64, f: F) -> Result<SectorEstimate>
    where
        F: Fn(&[Point], u64) -> Result<f64> + Sync,
    {
        match self.mode {
            IntegrationMode::TensorGrid { points_per_axis } => {
                let v = self.tensor_sector(points_per_axis, n_free, n_sym, salt, &f)?;
                Ok(SectorEstimate { value: v, std_error: 0.0 })
            }
            IntegrationMode::MonteCarlo { samples_per_sector, seed, .. } => {
                self.mc_sector(samples_per_sector, seed, n_free + n_sym, salt, &f)
            }
        }
    }

    fn tensor_sector<F>(&self, p: usize, n_free: usize, n_sym: usize, salt: u64, f: &F) -> Result<f64>
    where
        F: Fn(&[Point], u64) -> Result<f64> + Sync,
    {
        let total = n_free + n_sym;
        let dims = total * self.window.dim();
        if dims > MAX_TENSOR_DIMS {
            return Err(Error::TensorDimension { requested: dims, max: MAX_TENSOR_DIMS });
        }
        if total == 0 {
            let v = f(&[], 0)?;
            return if v.is_finite() { Ok(v) } else { Err(nonfinite(v)) };
        }
        let grid = Grid::new(&self.window, p);
        let cells = grid.cells;
        let nodes: Vec<Vec<Point>> = (0..total).map(|s| (0..cells).map(|c| grid.node(c, s, salt)).collect()).collect();

        let partials: Vec<Result<f64>> = (0..cells)
            .into_par_iter()
            .map(|first| {
                let mut acc = CompensatedSum::new();
                let mut pts = vec![nodes[0][0]; total];
                let mut free = vec![0usize; n_free];
                let mut sym = vec![0usize; n_sym];
                if n_free > 0 {
                    free[0] = first;
                } else {
                    sym.iter_mut().for_each(|s| *s = first);
                }
                // Free slots 1.. are enumerated as a full tuple, sym slots as a multiset
                // (the first sym slot fixed when there are no free slots).
                let mut free_rest_done = false;
                while !free_rest_done {
                    for (s, &c) in free.iter().enumerate() {
                        pts[s] = nodes[s][c];
                    }
                    if n_sym == 0 {
                        let v = f(&pts, 0)?;
                        if !v.is_finite() {
                            return Err(nonfinite(v));
                        }
                        acc.add(v);
                    } else {
                        if n_free > 0 {
                            sym.iter_mut().for_each(|s| *s = 0);
                        }
                        loop {
                            for (j, &c) in sym.iter().enumerate() {
                                pts[n_free + j] = nodes[n_free + j][c];
                            }
                            let v = f(&pts, 0)?;
                            if !v.is_finite() {
                                return Err(nonfinite(v));
                            }
                            if v != 0.0 {
                                acc.add(multiset_weight(&sym) * v);
                            }
                            let advanced = if n_free > 0 {
                                next_multiset_full(&mut sym, cells)
                            } else {
                                next_multiset(&mut sym, cells)
                            };
                            if !advanced {
                                break;
                            }
                        }
                    }
                    free_rest_done = n_free <= 1 || !next_tuple(&mut free[1..], cells);
                }
                Ok(acc.value())
            })
            .collect();
        let mut acc = CompensatedSum::new();
        for p in partials {
            acc.add(p?);
        }
        Ok(acc.value() * grid.cell_volume.powi(total as i32))
    }

    fn mc_sector<F>(&self, m: usize, seed: u64, total: usize, salt: u64, f: &F) -> Result<SectorEstimate>
    where
        F: Fn(&[Point], u64) -> Result<f64> + Sync,
    {
        // The stream depends only on the salt and the number of points, so two
        // integrals with the same salt and sector size see the same samples.
        let stream = mix(salt, total as u64);
        let blocks = m.div_ceil(MC_BLOCK);
        let run_block = |b: usize| -> Result<Moments> {
            let mut rng = stream_rng(mix(seed, b as u64), stream);
            let mut mo = Moments::default();
            let mut pts = Vec::with_capacity(total);
            for i in b * MC_BLOCK..m.min((b + 1) * MC_BLOCK) {
                pts.clear();
                for _ in 0..total {
                    pts.push(self.window.sample_uniform(&mut rng));
                }
                let v = f(&pts, mix3(seed, stream, i as u64))?;
                if !v.is_finite() {
                    return Err(nonfinite(v));
                }
                mo.push(v);
            }
            Ok(mo)
        };
        let parts: Vec<Result<Moments>> = if blocks == 1 {
            vec![run_block(0)]
        } else {
            (0..blocks).into_par_iter().map(run_block).collect()
        };
        let mut all = Moments::default();
        for p in parts {
            all.merge(&p?);
        }
        let vol = self.window.volume().powi(total as i32);
        Ok(SectorEstimate { value: vol * all.mean, std_error: vol * all.std_error() })
    }

    /// `Σ_{n≤top} zⁿ/n! · sector(n)` with a geometric tail estimate.
    pub fn sum_sectors<S>(&self, max_order: Option<usize>, sector: S) -> Result<EstimateWithError>
    where
        S: Fn(usize) -> Result<SectorEstimate>,
    {
        let top = max_order.map_or(self.order_cap, |m| m.min(self.order_cap));
        let truncated = max_order.is_none_or(|m| m > self.order_cap);
        let mut acc = CompensatedSum::new();
        let mut var = 0.0;
        let mut mags = Vec::with_capacity(top + 1);
        for n in 0..=top {
            let s = sector(n)?;
            let w = self.sector_weight(n);
            acc.add(w * s.value);
            var += (w * s.std_error).powi(2);
            mags.push((w * s.value).abs());
        }
        let truncation_bound = if truncated { geometric_tail(&mags) } else { 0.0 };
        Ok(EstimateWithError { value: acc.value(), std_error: var.sqrt(), sectors_used: top + 1, truncation_bound })
    }

    /// `∫ f(η) dλ_z(η)` with `|η| ≤ min(max_order, order_cap)`.
    pub fn integrate<F>(&self, max_order: Option<usize>, salt: u64, f: F) -> Result<EstimateWithError>
    where
        F: Fn(&FiniteConfig, u64) -> Result<f64> + Sync,
    {
        self.sum_sectors(max_order, |n| {
            self.sector(0, n, salt, |pts, key| f(&FiniteConfig::new(pts.to_vec())?, key))
        })
    }

    /// `∫_{Λ^k} dx ∫ dλ_z(ξ) f(x, ξ)` for `k = n_free` extra Lebesgue variables.
    pub fn integrate_with_free<F>(&self, n_free: usize, max_order: Option<usize>, salt: u64, f: F) -> Result<EstimateWithError>
    where
        F: Fn(&[Point], &FiniteConfig, u64) -> Result<f64> + Sync,
    {
        self.sum_sectors(max_order, |n| {
            self.sector(n_free, n, salt, |pts, key| {
                let xi = FiniteConfig::new(pts[n_free..].to_vec())?;
                f(&pts[..n_free], &xi, key)
            })
        })
    }

    /// `∫_Λ f(x) dx`.
    pub fn line_integral<F>(&self, salt: u64, f: F) -> Result<SectorEstimate>
    where
        F: Fn(&Point, u64) -> Result<f64> + Sync,
    {
        self.sector(1, 0, salt, |pts, key| f(&pts[0], key))
    }

    /// `∫ G dλ_z` truncated at the order cap.
    pub fn lp_integral(&self, g: &ConfigFn) -> Result<EstimateWithError> {
        if let (Structure::Coherent { amplitude, f }, None) = (g.structure(), g.support_order()) {
            return self.coherent_integral(*amplitude, |x| f(x));
        }
        self.integrate(g.support_order(), 0, |eta, _| g.eval(eta))
    }

    /// `amplitude · ∫ e_λ(f) dλ_z`, truncated at the order cap. On a tensor
    /// grid each sector is a product of one-dimensional sums.
    pub fn coherent_integral<F>(&self, amplitude: f64, f: F) -> Result<EstimateWithError>
    where
        F: Fn(&Point) -> f64 + Sync,
    {
        if let IntegrationMode::TensorGrid { points_per_axis } = self.mode {
            let grid = Grid::new(&self.window, points_per_axis);
            let mut factors = Vec::with_capacity(self.order_cap);
            for s in 0..self.order_cap {
                let mut acc = CompensatedSum::new();
                for c in 0..grid.cells {
                    let v = f(&grid.node(c, s, 0));
                    if !v.is_finite() {
                        return Err(nonfinite(v));
                    }
                    acc.add(v);
                }
                factors.push(acc.value() * grid.cell_volume);
            }
            return self.sum_sectors(None, |n| {
                Ok(SectorEstimate { value: amplitude * factors[..n].iter().product::<f64>(), std_error: 0.0 })
            });
        }
        self.integrate(None, 0, |eta, _| Ok(amplitude * eta.iter().map(&f).product::<f64>()))
    }

    /// `∫…∫ G(η₁∪…∪η_n) H(η₁,…,η_n) dλ(η₁)…dλ(η_n)`, truncated at total order.
    pub fn iterated_integral(&self, g: &ConfigFn, h: &TupleFn, n: usize, salt: u64) -> Result<EstimateWithError> {
        self.sum_sectors(g.support_order(), |m| {
            let comps = compositions(m, n);
            self.sector(m, 0, salt, |pts, _| {
                let gv = g.eval(&FiniteConfig::new(pts.to_vec())?)?;
                if gv == 0.0 {
                    return Ok(0.0);
                }
                let mut acc = CompensatedSum::new();
                for k in &comps {
                    let mut parts = Vec::with_capacity(n);
                    let mut off = 0;
                    for &ki in k {
                        parts.push(FiniteConfig::new(pts[off..off + ki].to_vec())?);
                        off += ki;
                    }
                    let coef = factorial(m) / k.iter().map(|&ki| factorial(ki)).product::<f64>();
                    acc.add(coef * h(&parts)?);
                }
                Ok(gv * acc.value())
            })
        })
    }

    /// Both sides of the partition lemma: the iterated integral and
    /// `∫ G(η) Σ_{(η₁,…,η_n)} H(η₁,…,η_n) dλ(η)`, on common samples.
    pub fn verify_partition_lemma(&self, g: &ConfigFn, h: &TupleFn, n: usize) -> Result<(EstimateWithError, EstimateWithError)> {
        if n < 2 {
            return Err(Error::InvalidInput("partition lemma needs n >= 2".into()));
        }
        let salt = 0x5a17;
        let lhs = self.iterated_integral(g, h, n, salt)?;
        let rhs = self.integrate(g.support_order(), salt, |eta, _| {
            let gv = g.eval(eta)?;
            if gv == 0.0 {
                return Ok(0.0);
            }
            let mut acc = CompensatedSum::new();
            for parts in partitions(eta, n, DEFAULT_SUBSET_CAP)? {
                acc.add(h(&parts)?);
            }
            Ok(gv * acc.value())
        })?;
        Ok((lhs, rhs))
    }

    /// `∫ H·(G1⋆G2) dλ` against `∫∫∫ H(η₁∪η₂∪η₃)G1(η₁∪η₂)G2(η₂∪η₃) dλdλdλ`.
    pub fn verify_star_integral(&self, h: &ConfigFn, g1: &ConfigFn, g2: &ConfigFn) -> Result<(EstimateWithError, EstimateWithError)> {
        let salt = 0x5a17;
        let lhs = self.integrate(h.support_order(), salt, |eta, _| {
            let hv = h.eval(eta)?;
            if hv == 0.0 {
                return Ok(0.0);
            }
            Ok(hv * star_at(g1, g2, eta)?)
        })?;
        let (a, b) = (g1.clone(), g2.clone());
        let tuple: TupleFn = Arc::new(move |p: &[FiniteConfig]| {
            let x = a.eval(&p[0].union(&p[1])?)?;
            if x == 0.0 {
                return Ok(0.0);
            }
            Ok(x * b.eval(&p[1].union(&p[2])?)?)
        });
        let rhs = self.iterated_integral(h, &tuple, 3, salt)?;
        Ok((lhs, rhs))
    }
}

fn next_multiset_full(t: &mut [usize], cells: usize) -> bool {
    let n = t.len();
    let mut i = n;
    while i > 0 {
        i -= 1;
        if t[i] + 1 < cells {
            let v = t[i] + 1;
            for x in t.iter_mut().skip(i) {
                *x = v;
            }
            return true;
        }
    }
    false
}

/// All `n`-tuples of non-negative integers summing to `m`.
pub fn compositions(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; n];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur[i] = k;
            rec(i + 1, left - k, cur, out);
        }
    }
    rec(0, m, &mut cur, &mut out);
    out
}

fn geometric_tail(mags: &[f64]) -> f64 {
    let n = mags.len();
    let last = mags[n - 1];
    if last == 0.0 {
        return 0.0;
    }
    if n < 2 || mags[n - 2] == 0.0 {
        return f64::INFINITY;
    }
    let r = last / mags[n - 2];
    if r >= 1.0 {
        f64::INFINITY
    } else {
        last * r / (1.0 - r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{random_config, random_table, Trig};
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn w1(l: f64) -> Window {
        Window::periodic(&[0.0], &[l]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(LPIntegrator::monte_carlo(w1(1.0), 1.0, 3, 99, 0).is_err());
        assert!(LPIntegrator::tensor(w1(1.0), 0.0, 3, 4).is_err());
        assert!(LPIntegrator::tensor(w1(1.0), 1.0, 3, 0).is_err());
        assert!(LPIntegrator::tensor(w1(1e300), 1.0, 3, 4).is_err());
    }

    #[test]
    fn multiset_enumeration_counts_full_product() {
        let integ = LPIntegrator::tensor(w1(1.0), 1.0, 4, 5).unwrap();
        for (nf, ns) in [(0, 1), (0, 3), (1, 2), (2, 2), (3, 0)] {
            let v = integ.sector(nf, ns, 0, |_, _| Ok(1.0)).unwrap().value;
            assert!((v - 1.0).abs() < 1e-12, "{nf} {ns} {v}");
        }
        let v = integ.sector(0, 2, 0, |p, _| Ok(p[0].coord(0) * p[1].coord(0))).unwrap().value;
        assert!((v - 0.25).abs() < 1e-8);
        let w2 = Window::periodic(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let integ2 = LPIntegrator::tensor(w2, 1.0, 4, 3).unwrap();
        assert!(matches!(integ2.sector(1, 3, 0, |_, _| Ok(1.0)), Err(Error::TensorDimension { requested: 8, .. })));
    }

    #[test]
    fn lp_examples() {
        let w = w1(2.0);
        let integ = LPIntegrator::tensor(w.clone(), 0.7, 6, 8).unwrap();
        assert_eq!(integ.lp_integral(&ConfigFn::unit()).unwrap().value, 1.0);
        for n in 0..=4usize {
            let ind = ConfigFn::new(Some(n), move |eta| if eta.len() == n { 1.0 } else { 0.0 });
            let v = integ.lp_integral(&ind).unwrap();
            let exact = (0.7f64 * 2.0).powi(n as i32) / factorial(n);
            assert!((v.value - exact).abs() < 1e-9 * exact);
            assert_eq!(v.truncation_bound, 0.0);
        }
    }

    #[test]
    fn coherent_tensor_factorized() {
        let w = w1(3.0);
        let trig = Trig::random(&mut stream_rng(5, 0), &w, 0.2, 0.15, 3);
        let z = 1.0;
        let integ = LPIntegrator::tensor(w.clone(), z, 20, 64).unwrap();
        let g = ConfigFn::coherent(trig.to_fn());
        let v = integ.lp_integral(&g).unwrap();
        let exact = (z * trig.integral(3.0)).exp();
        assert!((v.value - exact).abs() < 1e-6 * exact, "{} {}", v.value, exact);
        assert!(v.truncation_bound < 1e-6);
    }

    #[test]
    fn coherent_mc_within_three_sigma() {
        let w = w1(2.0);
        let integ = LPIntegrator::monte_carlo(w.clone(), 0.8, 10, 20000, 7).unwrap();
        let f = |p: &Point| 0.4 + 0.2 * (p.coord(0) * std::f64::consts::PI).cos();
        let g = ConfigFn::coherent(Arc::new(f));
        let v = integ.lp_integral(&g).unwrap();
        let exact = (0.8f64 * 0.8).exp();
        assert!((v.value - exact).abs() < 3.0 * v.std_error + 1e-3, "{v:?} {exact}");
        let again = integ.lp_integral(&g).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn mc_independent_of_thread_count() {
        let integ = LPIntegrator::monte_carlo(w1(1.0), 1.0, 3, 5000, 99).unwrap();
        let g = ConfigFn::new(Some(3), |e| e.iter().map(|p| p.coord(0)).sum::<f64>());
        let a = integ.lp_integral(&g).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| integ.lp_integral(&g).unwrap());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn partition_lemma_examples() {
        let w = w1(1.0);
        let integ = LPIntegrator::tensor(w.clone(), 0.5, 6, 6).unwrap();
        let one = ConfigFn::new(Some(6), |_| 1.0);
        let h: TupleFn = Arc::new(|_| Ok(1.0));
        let (l, r) = integ.verify_partition_lemma(&one, &h, 2).unwrap();
        let exact: f64 = (0..=6).map(|n| 1f64.powi(n) / factorial(n as usize)).sum();
        assert!((l.value - exact).abs() < 1e-9, "{} {}", l.value, exact);
        assert!((r.value - exact).abs() < 1e-9);

        let h0: TupleFn = Arc::new(|p| Ok(if p.iter().all(|x| x.is_empty()) { 3.5 } else { 0.0 }));
        let (l, r) = integ.verify_partition_lemma(&ConfigFn::unit(), &h0, 3).unwrap();
        assert_eq!((l.value, r.value), (3.5, 3.5));
    }

    #[test]
    fn star_integral_examples() {
        let w = w1(1.0);
        let integ = LPIntegrator::tensor(w.clone(), 0.6, 6, 6).unwrap();
        let mut rng = stream_rng(4, 0);
        let eta = random_config(&mut rng, &w, 2);
        let g1 = random_table(&mut rng, &eta, 1.0);
        let h = ConfigFn::new(Some(6), |e| 1.0 + e.len() as f64);
        let (l, r) = integ.verify_star_integral(&h, &g1, &ConfigFn::unit()).unwrap();
        let direct = integ.integrate(Some(6), 1, |e, _| Ok(h.eval(e)? * g1.eval(e)?)).unwrap();
        assert!((l.value - direct.value).abs() < 1e-12);
        assert!((r.value - direct.value).abs() < 1e-6);

        let mc = LPIntegrator::monte_carlo(w.clone(), 0.6, 4, 4000, 3).unwrap();
        let a = ConfigFn::new(Some(2), |e| e.iter().map(|p| p.coord(0)).sum::<f64>() - 0.3);
        let b = ConfigFn::new(Some(1), |e| if e.len() == 1 { 0.5 } else { 1.0 });
        let hh = ConfigFn::new(Some(4), |_| 1.0);
        let (l, r) = mc.verify_star_integral(&hh, &a, &b).unwrap();
        assert!(l.sigma_distance(&r) < 3.0, "{l:?} {r:?}");
    }

    #[test]
    fn geometric_tail_cases() {
        assert_eq!(geometric_tail(&[1.0, 0.0]), 0.0);
        assert_eq!(geometric_tail(&[1.0, 2.0]), f64::INFINITY);
        assert!((geometric_tail(&[1.0, 0.5]) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn tensor_linear_and_monotone(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let w = w1(1.5);
            let integ = LPIntegrator::tensor(w.clone(), 0.9, 3, 5).unwrap();
            let mut rng = stream_rng(seed, 0);
            let g1 = crate::families::random_smooth_observable(&mut rng, &w, 3, 1.0);
            let g2 = crate::families::random_smooth_observable(&mut rng, &w, 3, 1.0);
            let lin = integ.lp_integral(&g1.linear_combination(a, &g2, b)).unwrap().value;
            let sep = a * integ.lp_integral(&g1).unwrap().value + b * integ.lp_integral(&g2).unwrap().value;
            prop_assert!((lin - sep).abs() < 1e-12 * (1.0 + lin.abs()));
            let lo = g1.product(&g1);
            let hi = lo.linear_combination(1.0, &ConfigFn::new(Some(3), |_| 0.1), 1.0);
            prop_assert!(integ.lp_integral(&lo).unwrap().value <= integ.lp_integral(&hi).unwrap().value);
        }
    }
}

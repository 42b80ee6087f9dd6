//! Truncated correlation hierarchy `∂ₜk⁽ⁿ⁾ = (L̂*k)⁽ⁿ⁾`, `n ≤ N`, integrated
//! with classical RK4.
//!
//! Two storage layouts exist. `Grid` keeps `k⁽ⁿ⁾` on the symmetrized tensor
//! grid `Λ_hⁿ` (one value per sorted multi-index of cells, read back as a
//! piecewise constant function). `TranslationInvariant` keeps a scalar
//! density `k⁽¹⁾` and a radial profile for `k⁽²⁾`, so `N ≤ 2` there.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{FiniteConfig, Point, Window, MAX_DIM};
use crate::error::{Error, Result};
use crate::generators::{Dynamics, EvalPath};
use crate::harmonic::ConfigFn;
use crate::lp::{Grid, LPIntegrator};
use crate::numeric::fmt17;
use crate::simulator::CorrelationEstimate;

/// Slot salt for representative points; keeps them off the integrator nodes.
const SALT_REPR: u64 = 0x7b;

/// How `k` is read at orders above `N`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// `k(η) = (1/|η|) Σ_{x∈η} k(η\x) k⁽¹⁾(x)`, applied recursively.
    #[default]
    Decorrelation,
    Zero,
    /// Any read above `N` is an error.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    TranslationInvariant { radial_bins: usize },
    Grid { points_per_axis: usize },
}

#[derive(Debug)]
struct Indexing {
    grid: Option<Grid>,
    /// Sorted multi-indices per order (grid layout).
    tuples: Vec<Vec<Vec<usize>>>,
    lookup: Vec<HashMap<Vec<usize>, usize>>,
    /// Radial bin width (translation-invariant layout).
    dr: f64,
}

/// Values of `k⁽⁰⁾, …, k⁽ᴺ⁾` at one time.
#[derive(Clone, Debug)]
pub struct HierarchyState {
    window: Window,
    order_n: usize,
    layout: Layout,
    time: f64,
    values: Vec<Vec<f64>>,
    index: Arc<Indexing>,
}

fn multisets(cells: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; n];
    if n == 0 {
        return vec![vec![]];
    }
    loop {
        out.push(cur.clone());
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 < cells {
                let v = cur[i] + 1;
                for c in cur.iter_mut().skip(i) {
                    *c = v;
                }
                break;
            }
        }
    }
}

impl HierarchyState {
    /// State with `k⁽ⁿ⁾ = 0` for `1 ≤ n ≤ N`.
    pub fn zeros(window: &Window, order_n: usize, layout: Layout) -> Result<Self> {
        if order_n == 0 {
            return Err(Error::InvalidInput("hierarchy order N must be >= 1".into()));
        }
        let index = match layout {
            Layout::TranslationInvariant { radial_bins } => {
                if order_n > 2 {
                    return Err(Error::InvalidInput("translation-invariant layout supports N <= 2".into()));
                }
                if radial_bins == 0 {
                    return Err(Error::InvalidInput("radial_bins must be positive".into()));
                }
                let r_max = (0..window.dim()).map(|i| window.side(i)).fold(f64::INFINITY, f64::min) / 2.0;
                Indexing { grid: None, tuples: vec![], lookup: vec![], dr: r_max / radial_bins as f64 }
            }
            Layout::Grid { points_per_axis } => {
                if points_per_axis == 0 {
                    return Err(Error::InvalidInput("points_per_axis must be positive".into()));
                }
                let grid = Grid::new(window, points_per_axis);
                let tuples: Vec<Vec<Vec<usize>>> = (0..=order_n).map(|n| multisets(grid.cells, n)).collect();
                let lookup = tuples
                    .iter()
                    .map(|ts| ts.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect())
                    .collect();
                Indexing { grid: Some(grid), tuples, lookup, dr: 0.0 }
            }
        };
        let mut state = HierarchyState {
            window: window.clone(),
            order_n,
            layout,
            time: 0.0,
            values: vec![],
            index: Arc::new(index),
        };
        state.values = (0..=order_n).map(|n| vec![0.0; state.len_of(n)]).collect();
        state.values[0][0] = 1.0;
        Ok(state)
    }

    /// State with `k⁽ⁿ⁾(η) = f(η)` at the representative configurations.
    pub fn from_fn<F>(window: &Window, order_n: usize, layout: Layout, f: F) -> Result<Self>
    where
        F: Fn(&FiniteConfig) -> f64,
    {
        let mut s = Self::zeros(window, order_n, layout)?;
        for n in 1..=order_n {
            let reps = s.representatives(n)?;
            for (v, eta) in s.values[n].iter_mut().zip(&reps) {
                *v = f(eta);
            }
        }
        Ok(s)
    }

    /// Poisson correlation function `k = e_λ(ρ)`.
    pub fn poisson(window: &Window, order_n: usize, layout: Layout, rho: f64) -> Result<Self> {
        Self::from_fn(window, order_n, layout, |eta| rho.powi(eta.len() as i32))
    }

    fn len_of(&self, n: usize) -> usize {
        match self.layout {
            Layout::TranslationInvariant { radial_bins } => match n {
                0 | 1 => 1,
                _ => radial_bins,
            },
            Layout::Grid { .. } => self.index.tuples[n].len(),
        }
    }

    pub fn order_n(&self) -> usize {
        self.order_n
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn translation_invariant(&self) -> bool {
        matches!(self.layout, Layout::TranslationInvariant { .. })
    }

    /// Stored values of `k⁽ⁿ⁾`.
    pub fn values(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn values_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.values[n]
    }

    /// Radial bin centers of the `k⁽²⁾` profile (translation-invariant layout).
    pub fn radial_centers(&self) -> Vec<f64> {
        match self.layout {
            Layout::TranslationInvariant { radial_bins } => (0..radial_bins).map(|j| (j as f64 + 0.5) * self.index.dr).collect(),
            Layout::Grid { .. } => vec![],
        }
    }

    /// Configurations at which the stored values of order `n` are collocated.
    pub fn representatives(&self, n: usize) -> Result<Vec<FiniteConfig>> {
        match (&self.layout, &self.index.grid) {
            (Layout::Grid { .. }, Some(grid)) => self.index.tuples[n]
                .iter()
                .map(|t| FiniteConfig::new(t.iter().enumerate().map(|(slot, &c)| grid.node(c, slot, SALT_REPR)).collect()))
                .collect(),
            _ => {
                let x0 = *self.window.lower();
                match n {
                    0 => Ok(vec![FiniteConfig::empty()]),
                    1 => Ok(vec![FiniteConfig::singleton(x0)]),
                    _ => self
                        .radial_centers()
                        .iter()
                        .map(|&r| {
                            let mut c = [0.0; MAX_DIM];
                            c[0] = r;
                            FiniteConfig::new(vec![x0, x0.add(&Point::raw(&c[..self.window.dim()]))])
                        })
                        .collect(),
                }
            }
        }
    }

    /// Spatial mean of `k⁽¹⁾`.
    pub fn mean_density(&self) -> f64 {
        let v = &self.values[1];
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// `k⁽¹⁾` averaged over `bins` equal slabs along the first axis.
    pub fn density_slabs(&self, bins: usize) -> Result<Vec<f64>> {
        match (&self.layout, &self.index.grid) {
            (Layout::Grid { points_per_axis }, Some(grid)) => {
                if bins == 0 || points_per_axis % bins != 0 {
                    return Err(Error::GridMismatch(format!("{bins} bins do not divide {points_per_axis} grid points per axis")));
                }
                let per = points_per_axis / bins;
                let mut sums = vec![0.0; bins];
                let mut counts = vec![0usize; bins];
                for (c, v) in self.values[1].iter().enumerate() {
                    let b = grid.cell_index(c)[0] / per;
                    sums[b] += v;
                    counts[b] += 1;
                }
                Ok(sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect())
            }
            _ => Ok(vec![self.values[1][0]; bins]),
        }
    }

    /// Stored value of order `n ≤ N` at `eta`.
    fn lookup(&self, eta: &FiniteConfig) -> f64 {
        let n = eta.len();
        if n == 0 {
            return 1.0;
        }
        match &self.index.grid {
            Some(grid) => {
                let mut t: Vec<usize> = eta.iter().map(|x| grid.locate(x)).collect();
                t.sort_unstable();
                self.values[n][self.index.lookup[n][&t]]
            }
            None => {
                if n == 1 {
                    return self.values[1][0];
                }
                let p = eta.points();
                let r = self.window.distance(&p[0], &p[1]);
                interpolate(&self.values[2], self.index.dr, r)
            }
        }
    }

    /// `k` as a function on all finite configurations, closed above order `N`.
    fn as_config_fn(&self, closure: Closure, clamps: Arc<AtomicU64>) -> ConfigFn {
        let state = self.clone();
        ConfigFn::fallible(None, move |eta| state.eval_closed(eta, closure, &clamps))
    }

    fn eval_closed(&self, eta: &FiniteConfig, closure: Closure, clamps: &AtomicU64) -> Result<f64> {
        let n = eta.len();
        if n <= self.order_n {
            return Ok(self.lookup(eta));
        }
        match closure {
            Closure::Zero => Ok(0.0),
            Closure::None => Err(Error::ClosureRequired { order: n, max: self.order_n }),
            Closure::Decorrelation => {
                let mut acc = 0.0;
                for (i, x) in eta.iter().enumerate() {
                    let rest = self.eval_closed(&eta.without_index(i), closure, clamps)?;
                    let one = self.lookup(&FiniteConfig::singleton(*x));
                    if rest < 0.0 {
                        clamps.fetch_add(1, Ordering::Relaxed);
                    }
                    if one < 0.0 {
                        clamps.fetch_add(1, Ordering::Relaxed);
                    }
                    acc += rest.max(0.0) * one.max(0.0);
                }
                Ok(acc / n as f64)
            }
        }
    }

    fn axpy(&self, a: f64, inc: &[Vec<f64>]) -> HierarchyState {
        let mut out = self.clone();
        for n in 1..=self.order_n {
            for (v, d) in out.values[n].iter_mut().zip(&inc[n]) {
                *v += a * d;
            }
        }
        out
    }

    fn negative_count(&self) -> usize {
        self.values[1..].iter().flatten().filter(|v| **v < 0.0).count()
    }

    fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// Appends rows `time,order,grid_index_1..grid_index_N,value` for orders `1..=N`.
    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for n in 1..=self.order_n {
            for (i, v) in self.values[n].iter().enumerate() {
                let mut idx: Vec<String> = match &self.index.grid {
                    Some(_) => self.index.tuples[n][i].iter().map(|c| c.to_string()).collect(),
                    None => vec![i.to_string()],
                };
                idx.resize(self.order_n, String::new());
                writeln!(out, "{},{},{},{}", fmt17(self.time), n, idx.join(","), fmt17(*v))?;
            }
        }
        Ok(())
    }
}

/// Linear interpolation on bin centers `(j + ½)·dr`, constant beyond the ends.
fn interpolate(profile: &[f64], dr: f64, r: f64) -> f64 {
    let u = r / dr - 0.5;
    if u <= 0.0 {
        return profile[0];
    }
    let j = u.floor() as usize;
    if j + 1 >= profile.len() {
        return profile[profile.len() - 1];
    }
    let w = u - j as f64;
    (1.0 - w) * profile[j] + w * profile[j + 1]
}

/// Header for [`HierarchyState::write_csv_rows`].
pub fn write_csv_header<W: Write>(out: &mut W, order_n: usize) -> std::io::Result<()> {
    let idx: Vec<String> = (1..=order_n).map(|i| format!("grid_index_{i}")).collect();
    writeln!(out, "time,order,{},value", idx.join(","))
}

/// Increment `(L̂*k)(η)` at every stored `η`, indexed like the state values.
#[derive(Clone, Debug)]
pub struct Increment {
    pub values: Vec<Vec<f64>>,
    /// Negative factors clamped inside closure products.
    pub clamps: u64,
}

pub fn hierarchy_rhs(state: &HierarchyState, dynamics: &Dynamics, integ: &LPIntegrator, closure: Closure) -> Result<Increment> {
    if let Some(o) = dynamics.kernel_order() {
        if o > integ.order_cap() {
            return Err(Error::OrderCapExceeded { order: o, cap: integ.order_cap() });
        }
    }
    let clamps = Arc::new(AtomicU64::new(0));
    let k = state.as_config_fn(closure, clamps.clone());
    let mut values = vec![vec![0.0]];
    for n in 1..=state.order_n {
        let reps = state.representatives(n)?;
        let col: Vec<f64> = reps
            .par_iter()
            .map(|eta| dynamics.apply_lhat_star(&k, eta, integ, EvalPath::Product).map(|e| e.value))
            .collect::<Result<_>>()?;
        values.push(col);
    }
    Ok(Increment { values, clamps: clamps.load(Ordering::Relaxed) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Times at which a copy of the state is kept; steps land on them exactly.
    #[serde(default)]
    pub output_times: Vec<f64>,
    #[serde(default)]
    pub closure: Closure,
}

#[derive(Clone, Debug)]
pub struct HierarchyRun {
    /// Last valid state.
    pub state: HierarchyState,
    pub outputs: Vec<HierarchyState>,
    pub steps: usize,
    pub warnings: Vec<String>,
    pub closure_clamps: u64,
    /// Steps after which some stored value was negative.
    pub negative_steps: usize,
    /// Set when the run stopped early on a non-finite value.
    pub abort: Option<Error>,
}

fn rk4_step(s: &HierarchyState, dynamics: &Dynamics, integ: &LPIntegrator, closure: Closure, h: f64) -> Result<(HierarchyState, u64)> {
    let k1 = hierarchy_rhs(s, dynamics, integ, closure)?;
    let k2 = hierarchy_rhs(&s.axpy(h / 2.0, &k1.values), dynamics, integ, closure)?;
    let k3 = hierarchy_rhs(&s.axpy(h / 2.0, &k2.values), dynamics, integ, closure)?;
    let k4 = hierarchy_rhs(&s.axpy(h, &k3.values), dynamics, integ, closure)?;
    let mut out = s.clone();
    for n in 1..=s.order_n {
        for (i, v) in out.values[n].iter_mut().enumerate() {
            *v += h / 6.0 * (k1.values[n][i] + 2.0 * k2.values[n][i] + 2.0 * k3.values[n][i] + k4.values[n][i]);
        }
    }
    // sorted-index storage keeps every k⁽ⁿ⁾ symmetric; only k⁽⁰⁾ needs pinning
    out.values[0][0] = 1.0;
    out.time = s.time + h;
    Ok((out, k1.clamps + k2.clamps + k3.clamps + k4.clamps))
}

/// RK4 from `state.time` to `opts.t_end` with steps of at most `opts.dt`.
pub fn integrate(state: &HierarchyState, dynamics: &Dynamics, integ: &LPIntegrator, opts: &IntegrateOptions) -> Result<HierarchyRun> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt = {} must be positive", opts.dt)));
    }
    if !(opts.t_end >= state.time) {
        return Err(Error::InvalidInput(format!("t_end = {} precedes the start time {}", opts.t_end, state.time)));
    }
    let mut stops: Vec<f64> = opts.output_times.iter().copied().filter(|t| *t > state.time && *t < opts.t_end).collect();
    stops.push(opts.t_end);
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut run = HierarchyRun {
        state: state.clone(),
        outputs: vec![],
        steps: 0,
        warnings: vec![],
        closure_clamps: 0,
        negative_steps: 0,
        abort: None,
    };
    if opts.output_times.contains(&state.time) {
        run.outputs.push(state.clone());
    }

    let first = hierarchy_rhs(state, dynamics, integ, opts.closure)?;
    let rate = stiffness(state, &first.values);
    if opts.dt * rate >= 0.5 {
        run.warnings.push(format!("dt·rate = {:.3} >= 0.5; RK4 may be unstable", opts.dt * rate));
    }

    let mut start = state.time;
    for stop in stops {
        let span = stop - start;
        let nsteps = ((span / opts.dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / nsteps as f64;
        for i in 0..nsteps {
            let (mut next, clamps) = match rk4_step(&run.state, dynamics, integ, opts.closure, h) {
                Ok(v) => v,
                Err(e @ Error::NonFiniteValue(_)) => {
                    run.abort = Some(e);
                    return Ok(run);
                }
                Err(e) => return Err(e),
            };
            if !next.all_finite() {
                run.abort = Some(Error::NonFiniteValue(format!("hierarchy blew up near t = {}", next.time)));
                return Ok(run);
            }
            if i + 1 == nsteps {
                next.time = stop;
            }
            run.closure_clamps += clamps;
            if next.negative_count() > 0 {
                run.negative_steps += 1;
            }
            run.steps += 1;
            run.state = next;
        }
        if opts.output_times.contains(&stop) {
            run.outputs.push(run.state.clone());
        }
        start = stop;
    }
    if run.negative_steps > 0 {
        run.warnings.push(format!("negative correlation values after {} steps", run.negative_steps));
    }
    Ok(run)
}

/// Rough diagonal rate `max |f_i| / |k_i|` used for the step-size warning.
fn stiffness(state: &HierarchyState, inc: &[Vec<f64>]) -> f64 {
    let mut rate: f64 = 0.0;
    for n in 1..=state.order_n {
        for (v, d) in state.values[n].iter().zip(&inc[n]) {
            if v.abs() > 1e-12 {
                rate = rate.max((d / v).abs());
            }
        }
    }
    rate
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub time: f64,
    pub z_scores: Vec<f64>,
    pub max_abs_z: f64,
    pub mean_abs_z: f64,
    pub hierarchy_mean: f64,
    pub simulated_mean: f64,
}

/// Per-bin `(hierarchy k⁽¹⁾ − simulated k⁽¹⁾)/std_err`.
pub fn compare_to_simulation(hier: &HierarchyState, corr: &CorrelationEstimate) -> Result<ComparisonReport> {
    if (hier.time - corr.time).abs() > 1e-9 * corr.time.abs().max(1.0) {
        return Err(Error::GridMismatch(format!("hierarchy time {} vs simulation time {}", hier.time, corr.time)));
    }
    let bins = corr.k1_grid.len();
    let h = hier.density_slabs(bins)?;
    let z_scores: Vec<f64> = h
        .iter()
        .zip(&corr.k1_grid)
        .map(|(hv, b)| {
            let d = hv - b.value;
            if b.std_err > 0.0 {
                d / b.std_err
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY * d.signum()
            }
        })
        .collect();
    let max_abs_z = z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let mean_abs_z = z_scores.iter().map(|z| z.abs()).sum::<f64>() / bins.max(1) as f64;
    Ok(ComparisonReport {
        time: corr.time,
        z_scores,
        max_abs_z,
        mean_abs_z,
        hierarchy_mean: hier.mean_density(),
        simulated_mean: corr.mean_density.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Kernel;
    use crate::models::{build_spec, ModelParams};
    use crate::simulator::Bin;

    fn torus() -> Window {
        Window::periodic(&[0.0], &[20.0]).unwrap()
    }

    fn ti() -> Layout {
        Layout::TranslationInvariant { radial_bins: 20 }
    }

    fn contact(lambda: f64) -> ModelParams {
        ModelParams::Contact { a: Kernel::normalized_tophat(1.0, 1.0, 1), lambda }
    }

    fn glauber0() -> ModelParams {
        ModelParams::Glauber { phi: Kernel::Zero, birth_majorant: None }
    }

    #[test]
    fn solvable_rhs() {
        let w = torus();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 1, 200).unwrap();
        let s = HierarchyState::poisson(&w, 1, ti(), 0.7).unwrap();
        let c = build_spec(&contact(1.3), &w).unwrap();
        let r = hierarchy_rhs(&s, &c, &integ, Closure::None).unwrap();
        assert!((r.values[1][0] - 0.3 * 0.7).abs() < 1e-13, "{:?}", r.values);
        let g = build_spec(&glauber0(), &w).unwrap();
        let r = hierarchy_rhs(&s, &g, &integ, Closure::Decorrelation).unwrap();
        assert!((r.values[1][0] - 0.3).abs() < 1e-13);
    }

    #[test]
    fn glauber_relaxation_and_rk4_order() {
        let w = torus();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 1, 20).unwrap();
        let g = build_spec(&glauber0(), &w).unwrap();
        let s = HierarchyState::poisson(&w, 1, ti(), 3.0).unwrap();
        let exact = |t: f64| 1.0 + 2.0 * (-t).exp();
        let opts = IntegrateOptions { t_end: 5.0, dt: 1e-3, output_times: vec![1.0, 2.5], closure: Closure::Decorrelation };
        let run = integrate(&s, &g, &integ, &opts).unwrap();
        for o in run.outputs.iter().chain([&run.state]) {
            assert!((o.values(1)[0] - exact(o.time())).abs() < 1e-10);
            assert_eq!(o.values(0)[0], 1.0);
        }
        let err = |dt: f64| {
            let o = IntegrateOptions { t_end: 5.0, dt, output_times: vec![], closure: Closure::Decorrelation };
            (integrate(&s, &g, &integ, &o).unwrap().state.values(1)[0] - exact(5.0)).abs()
        };
        let ratio = err(0.25) / err(0.125);
        assert!((ratio - 16.0).abs() < 2.0, "{ratio}");
    }

    #[test]
    fn missing_closure_is_reported() {
        let w = torus();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 2, 10).unwrap();
        let kaw = ModelParams::Kawasaki { phi: Kernel::normalized_tophat(0.3, 1.0, 1), a: Kernel::normalized_gaussian(1.0, 0.5, 1), s: 0.0 };
        let d = build_spec(&kaw, &w).unwrap();
        let s = HierarchyState::poisson(&w, 1, ti(), 0.5).unwrap();
        assert!(matches!(hierarchy_rhs(&s, &d, &integ, Closure::None), Err(Error::ClosureRequired { order: 2, max: 1 })));
        assert!(hierarchy_rhs(&s, &d, &integ, Closure::Zero).is_ok());
    }

    #[test]
    fn truncation_consistency_for_contact() {
        let w = torus();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 1, 200).unwrap();
        let c = build_spec(&contact(0.8), &w).unwrap();
        let opts = IntegrateOptions { t_end: 1.0, dt: 0.01, output_times: vec![], closure: Closure::Decorrelation };
        let r1 = integrate(&HierarchyState::poisson(&w, 1, ti(), 0.5).unwrap(), &c, &integ, &opts).unwrap();
        let r2 = integrate(&HierarchyState::poisson(&w, 2, ti(), 0.5).unwrap(), &c, &integ, &opts).unwrap();
        assert!((r1.state.values(1)[0] - r2.state.values(1)[0]).abs() < 1e-6);
        assert!((r1.state.values(1)[0] - 0.5 * (-0.2f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_rates_leave_state_unchanged() {
        let w = torus();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 1, 8).unwrap();
        let c = build_spec(&ModelParams::Contact { a: Kernel::Zero, lambda: 0.0 }, &w).unwrap();
        // contact with λ = 0 still has unit deaths; the free hop with a = 0 has no rates at all
        let idle = build_spec(&ModelParams::FreeHop { a: Kernel::Zero }, &w).unwrap();
        let s = HierarchyState::from_fn(&w, 2, Layout::Grid { points_per_axis: 8 }, |eta| 0.3 + eta.iter().map(|x| x.coord(0)).sum::<f64>()).unwrap();
        let opts = IntegrateOptions { t_end: 0.5, dt: 0.1, output_times: vec![], closure: Closure::Decorrelation };
        let run = integrate(&s, &idle, &integ, &opts).unwrap();
        for n in 0..=2 {
            assert_eq!(run.state.values(n), s.values(n));
        }
        let run = integrate(&s, &c, &integ, &opts).unwrap();
        let want = s.values(1)[3] * (-0.5f64).exp();
        assert!((run.state.values(1)[3] - want).abs() < 1e-6 * want);
    }

    #[test]
    fn grid_layout_free_hop_keeps_poisson() {
        let w = torus();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 1, 40).unwrap();
        let d = build_spec(&ModelParams::FreeHop { a: Kernel::normalized_gaussian(1.0, 0.7, 1) }, &w).unwrap();
        let s = HierarchyState::poisson(&w, 2, Layout::Grid { points_per_axis: 10 }, 0.4).unwrap();
        let r = hierarchy_rhs(&s, &d, &integ, Closure::Decorrelation).unwrap();
        assert!(r.values.iter().flatten().all(|v| v.abs() < 1e-10), "{:?}", r.values);
        assert_eq!(s.values(2).len(), 55);
    }

    #[test]
    fn comparison_and_csv() {
        let w = torus();
        let s = HierarchyState::poisson(&w, 2, ti(), 0.5).unwrap();
        let bins: Vec<Bin> = (0..4).map(|i| Bin { center: i as f64, value: 0.5, std_err: 0.1 }).collect();
        let corr = CorrelationEstimate {
            time: 0.0,
            k1_grid: bins.clone(),
            k2_radial: bins,
            mean_density: Bin { center: 0.0, value: 0.5, std_err: 0.01 },
            n_replicas: 10,
        };
        let rep = compare_to_simulation(&s, &corr).unwrap();
        assert!(rep.z_scores.iter().all(|z| *z == 0.0));
        let g = HierarchyState::poisson(&w, 1, Layout::Grid { points_per_axis: 6 }, 0.5).unwrap();
        assert!(matches!(compare_to_simulation(&g, &corr), Err(Error::GridMismatch(_))));
        let mut late = s.clone();
        late.set_time(1.0);
        assert!(matches!(compare_to_simulation(&late, &corr), Err(Error::GridMismatch(_))));

        let mut out = Vec::new();
        write_csv_header(&mut out, 2).unwrap();
        s.write_csv_rows(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,order,grid_index_1,grid_index_2,value"));
        assert_eq!(lines.next(), Some("0.0000000000000000e0,1,0,,5.0000000000000000e-1"));
        assert_eq!(text.lines().count(), 1 + 1 + 20);
    }

    #[test]
    fn interpolation_is_piecewise_linear() {
        let p = [1.0, 3.0, 2.0];
        assert_eq!(interpolate(&p, 1.0, 0.2), 1.0);
        assert!((interpolate(&p, 1.0, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(interpolate(&p, 1.0, 9.0), 2.0);
    }
}

//! Event-driven simulation of the finite-volume jump processes, and empirical
//! estimators of their first two correlation functions.
//!
//! Deaths use exact per-particle rates, cached and refreshed for particles
//! within kernel range of each change. Births and hops are proposed from
//! count-based majorants and thinned.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{Boundary, FiniteConfig, Point, Window};
use crate::error::{Error, Result};
use crate::generators::{BirthDeathSpec, Dynamics, GroupHopSpec, HopSpec};
use crate::kernels::Kernel;
use crate::models::{build_spec, require_simulable, ModelParams};
use crate::numeric::{fmt17, Moments};
use crate::rng::{stream_rng, StreamRng};

const RATIO_SLACK: f64 = 1e-12;
const CACHE_TOLERANCE: f64 = 1e-9;

fn default_check_every() -> usize {
    1000
}

fn default_replicas() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initial {
    Poisson { z: f64 },
    FixedCount { n: usize },
    Explicit { points: Vec<Point> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub window: Window,
    pub model: ModelParams,
    pub initial: Initial,
    pub t_end: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    pub particle_cap: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Recompute every cached rate from scratch after this many events.
    #[serde(default = "default_check_every")]
    pub check_every: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {}", self.t_end));
        }
        if self.snapshot_times.windows(2).any(|w| w[0] > w[1]) {
            return bad("snapshot times must be sorted".into());
        }
        if self.snapshot_times.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return bad("snapshot times must lie in [0, t_end]".into());
        }
        if self.replicas == 0 || self.check_every == 0 {
            return bad("replicas and check_every must be positive".into());
        }
        let expected = match &self.initial {
            Initial::Poisson { z } => {
                if !(*z >= 0.0 && z.is_finite()) {
                    return bad(format!("initial intensity {z}"));
                }
                z * self.window.volume()
            }
            Initial::FixedCount { n } => *n as f64,
            Initial::Explicit { points } => {
                let c = FiniteConfig::new(points.clone())?;
                if !c.inside(&self.window) {
                    return bad("initial points must lie in the window".into());
                }
                c.len() as f64
            }
        };
        if (self.particle_cap as f64) < expected {
            return bad(format!("particle cap {} below the expected initial count {expected}", self.particle_cap));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub births: u64,
    pub deaths: u64,
    pub hops: u64,
    pub rejected_thinning: u64,
    pub cap_saturations: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub replica: usize,
    pub snapshots: Vec<(f64, FiniteConfig)>,
    pub event_counts: EventCounts,
    pub initial_count: usize,
    pub final_config: FiniteConfig,
    /// `∫₀^{t_end} |γ_t| dt`.
    pub count_time_integral: f64,
}

impl Trajectory {
    pub fn snapshot_at(&self, t: f64) -> Option<&FiniteConfig> {
        self.snapshots.iter().find(|(s, _)| (s - t).abs() <= 1e-12 * t.abs().max(1.0)).map(|(_, c)| c)
    }

    /// `|final| = |initial| + births − deaths`.
    pub fn bookkeeping_holds(&self) -> bool {
        self.final_config.len() as i64 == self.initial_count as i64 + self.event_counts.births as i64 - self.event_counts.deaths as i64
    }
}

/// Density at `y` of `x + S` mapped into the window, `S` drawn from `jump`.
fn proposal_density(window: &Window, jump: &Kernel, x: &Point, y: &Point) -> f64 {
    let d = window.displacement(y, x);
    if window.boundary() == Boundary::Open {
        return jump.eval(&d);
    }
    let dim = window.dim();
    let reach: Vec<i64> = (0..dim).map(|i| (jump.range() / window.side(i)).ceil() as i64 + 1).collect();
    let mut total = 0.0;
    let mut idx = vec![0i64; dim];
    for (i, r) in reach.iter().enumerate() {
        idx[i] = -r;
    }
    loop {
        let coords: Vec<f64> = (0..dim).map(|i| d.coord(i) + idx[i] as f64 * window.side(i)).collect();
        total += jump.eval(&Point::new(&coords).expect("finite image"));
        let mut i = 0;
        loop {
            if i == dim {
                return total;
            }
            idx[i] += 1;
            if idx[i] <= reach[i] {
                break;
            }
            idx[i] = -reach[i];
            i += 1;
        }
    }
}

struct State<'a> {
    window: &'a Window,
    points: Vec<Point>,
    death_rates: Vec<f64>,
    death_total: f64,
    counts: EventCounts,
}

impl State<'_> {
    fn config(&self) -> Result<FiniteConfig> {
        FiniteConfig::new(self.points.clone())
    }

    fn rest(&self, skip: &[usize]) -> Result<FiniteConfig> {
        let pts = self.points.iter().enumerate().filter(|(i, _)| !skip.contains(i)).map(|(_, p)| *p).collect();
        FiniteConfig::new(pts)
    }
}

fn accept(what: &'static str, rate: f64, bound: f64, rng: &mut StreamRng) -> Result<bool> {
    if rate.is_nan() {
        return Err(Error::NonFiniteValue(format!("{what} rate")));
    }
    if rate < 0.0 {
        return Err(Error::NegativeRate { what, rate });
    }
    if rate == 0.0 {
        return Ok(false);
    }
    let ratio = rate / bound;
    if !(ratio <= 1.0 + RATIO_SLACK) {
        return Err(Error::MajorantViolated { what, ratio });
    }
    Ok(rng.random::<f64>() < ratio)
}

fn death_rate_of(spec: &BirthDeathSpec, state: &State<'_>, i: usize) -> Result<f64> {
    let d = spec.death_rate(&state.points[i], &state.rest(&[i])?)?;
    if d < 0.0 {
        return Err(Error::NegativeRate { what: "death", rate: d });
    }
    Ok(d)
}

/// Refresh cached death rates of particles within range of `site`.
fn refresh_neighbours(spec: &BirthDeathSpec, state: &mut State<'_>, site: &Point) -> Result<()> {
    if spec.death_order == Some(0) {
        return Ok(());
    }
    for j in 0..state.points.len() {
        if state.window.distance(&state.points[j], site) <= spec.range {
            let fresh = death_rate_of(spec, state, j)?;
            state.death_total += fresh - state.death_rates[j];
            state.death_rates[j] = fresh;
        }
    }
    Ok(())
}

/// Recompute every death rate from scratch; returns the fresh total.
fn recompute_all(spec: &BirthDeathSpec, state: &mut State<'_>) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..state.points.len() {
        let fresh = death_rate_of(spec, state, i)?;
        total += fresh;
        state.death_rates[i] = fresh;
    }
    Ok(total)
}

fn verify_cache(spec: &BirthDeathSpec, state: &mut State<'_>) -> Result<()> {
    let cached = state.death_total;
    let fresh_total = recompute_all(spec, state)?;
    if (cached - fresh_total).abs() > CACHE_TOLERANCE * fresh_total.abs().max(1.0) {
        return Err(Error::CacheDrift { cached, fresh: fresh_total });
    }
    state.death_total = fresh_total;
    Ok(())
}

fn initial_points(sim: &SimConfig, rng: &mut StreamRng, counts: &mut EventCounts) -> Result<Vec<Point>> {
    let n = match &sim.initial {
        Initial::Explicit { points } => return Ok(FiniteConfig::new(points.clone())?.points().to_vec()),
        Initial::FixedCount { n } => *n,
        Initial::Poisson { z } => {
            let mean = z * sim.window.volume();
            if mean == 0.0 {
                0
            } else {
                Poisson::new(mean).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(rng) as usize
            }
        }
    };
    if n > sim.particle_cap {
        counts.cap_saturations += (n - sim.particle_cap) as u64;
    }
    Ok((0..n.min(sim.particle_cap)).map(|_| sim.window.sample_uniform(rng)).collect())
}

/// Proposal intensities as functions of the current particle count.
fn birth_intensity(spec: &BirthDeathSpec, window: &Window, n: usize) -> f64 {
    spec.birth_majorant.as_ref().map_or(0.0, |m| m.at(n) * window.volume())
}

fn hop_intensity(spec: &HopSpec, dim: usize, n: usize) -> f64 {
    spec.majorant.as_ref().map_or(0.0, |m| n as f64 * m.factor.at(n) * m.jump.mass(dim))
}

fn group_intensity(spec: &GroupHopSpec, dim: usize, n: usize) -> f64 {
    if n < spec.n {
        return 0.0;
    }
    let pairs = crate::numeric::binomial(n, spec.n) as f64;
    spec.majorant.as_ref().map_or(0.0, |m| pairs * m.factor.at(n) * m.jump.mass(dim).powi(spec.n as i32))
}

/// One trajectory of the process described by `dynamics`, using stream `replica`.
pub fn run_replica(sim: &SimConfig, dynamics: &Dynamics, replica: usize) -> Result<Trajectory> {
    let mut rng = stream_rng(sim.seed, replica as u64);
    let window = &sim.window;
    let dim = window.dim();
    let mut counts = EventCounts::default();
    let points = initial_points(sim, &mut rng, &mut counts)?;
    let initial_count = points.len();
    let mut state = State { window, death_rates: vec![0.0; points.len()], points, death_total: 0.0, counts };
    if let Dynamics::BirthDeath(spec) = dynamics {
        state.death_total = recompute_all(spec, &mut state)?;
    }

    let mut snapshots = Vec::with_capacity(sim.snapshot_times.len());
    let mut next_snap = 0;
    let mut t = 0.0;
    let mut events = 0usize;
    let mut occupation = 0.0;
    loop {
        let n = state.points.len();
        let (death, birth, hop, group) = match dynamics {
            Dynamics::BirthDeath(s) => (state.death_total.max(0.0), birth_intensity(s, window, n), 0.0, 0.0),
            Dynamics::Hop(s) => (0.0, 0.0, hop_intensity(s, dim, n), 0.0),
            Dynamics::Group(s) => (0.0, 0.0, 0.0, group_intensity(s, dim, n)),
        };
        let total = death + birth + hop + group;
        let dt = if total > 0.0 { -(1.0 - rng.random::<f64>()).ln() / total } else { f64::INFINITY };
        let t_next = t + dt;
        while next_snap < sim.snapshot_times.len() && sim.snapshot_times[next_snap] < t_next {
            snapshots.push((sim.snapshot_times[next_snap], state.config()?));
            next_snap += 1;
        }
        if t_next > sim.t_end {
            occupation += n as f64 * (sim.t_end - t);
            break;
        }
        occupation += n as f64 * dt;
        t = t_next;

        let u = rng.random::<f64>() * total;
        match dynamics {
            Dynamics::BirthDeath(spec) => {
                if u < death {
                    let mut target = u;
                    let mut i = n - 1;
                    for (j, r) in state.death_rates.iter().enumerate() {
                        if target < *r {
                            i = j;
                            break;
                        }
                        target -= r;
                    }
                    let x = state.points.swap_remove(i);
                    state.death_total -= state.death_rates.swap_remove(i);
                    state.counts.deaths += 1;
                    refresh_neighbours(spec, &mut state, &x)?;
                } else {
                    let x = window.sample_uniform(&mut rng);
                    let b = spec.birth_rate(&x, &state.config()?)?;
                    let bound = spec.birth_majorant.as_ref().expect("simulable").at(n);
                    if accept("birth", b, bound, &mut rng)? {
                        if n >= sim.particle_cap {
                            state.counts.cap_saturations += 1;
                        } else {
                            state.points.push(x);
                            state.death_rates.push(0.0);
                            state.counts.births += 1;
                            let last = state.points.len() - 1;
                            let d = death_rate_of(spec, &state, last)?;
                            state.death_rates[last] = d;
                            state.death_total += d;
                            refresh_neighbours(spec, &mut state, &x)?;
                        }
                    } else {
                        state.counts.rejected_thinning += 1;
                    }
                }
            }
            Dynamics::Hop(spec) => {
                let m = spec.majorant.as_ref().expect("simulable");
                let i = rng.random_range(0..n);
                let x = state.points[i];
                let proposal = x.add(&m.jump.sample(dim, &mut rng));
                match window.wrap(&proposal) {
                    None => state.counts.rejected_thinning += 1,
                    Some(y) => {
                        let c = spec.hop_rate(&x, &y, &state.rest(&[i])?)?;
                        let bound = m.factor.at(n) * proposal_density(window, &m.jump, &x, &y);
                        if accept("hop", c, bound, &mut rng)? {
                            state.points[i] = y;
                            state.counts.hops += 1;
                        } else {
                            state.counts.rejected_thinning += 1;
                        }
                    }
                }
            }
            Dynamics::Group(spec) => {
                let m = spec.majorant.as_ref().expect("simulable");
                let chosen = rand::seq::index::sample(&mut rng, n, spec.n).into_vec();
                let mut idx = chosen.clone();
                idx.sort_unstable();
                let mut to = Vec::with_capacity(spec.n);
                let mut density = m.factor.at(n);
                for &i in &idx {
                    let x = state.points[i];
                    match window.wrap(&x.add(&m.jump.sample(dim, &mut rng))) {
                        Some(y) => {
                            density *= proposal_density(window, &m.jump, &x, &y);
                            to.push(y);
                        }
                        None => break,
                    }
                }
                if to.len() < spec.n {
                    state.counts.rejected_thinning += 1;
                } else {
                    let from = FiniteConfig::new(idx.iter().map(|&i| state.points[i]).collect())?;
                    let to_cfg = FiniteConfig::new(to.clone())?;
                    let c = spec.group_rate(&from, &to_cfg, &state.rest(&idx)?)?;
                    if accept("group hop", c, density, &mut rng)? {
                        for (k, &i) in idx.iter().enumerate() {
                            state.points[i] = to[k];
                        }
                        state.counts.hops += 1;
                    } else {
                        state.counts.rejected_thinning += 1;
                    }
                }
            }
        }
        events += 1;
        if events % sim.check_every == 0 {
            if let Dynamics::BirthDeath(spec) = dynamics {
                verify_cache(spec, &mut state)?;
            }
        }
    }
    while next_snap < sim.snapshot_times.len() {
        snapshots.push((sim.snapshot_times[next_snap], state.config()?));
        next_snap += 1;
    }
    Ok(Trajectory {
        replica,
        snapshots,
        event_counts: state.counts,
        initial_count,
        final_config: state.config()?,
        count_time_integral: occupation,
    })
}

/// All replicas of `sim`, each on its own random stream, in replica order.
pub fn run(sim: &SimConfig) -> Result<Vec<Trajectory>> {
    sim.validate()?;
    let dynamics = build_spec(&sim.model, &sim.window)?;
    require_simulable(&dynamics)?;
    (0..sim.replicas).into_par_iter().map(|r| run_replica(sim, &dynamics, r)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub center: f64,
    pub value: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub time: f64,
    /// `k⁽¹⁾` averaged over slabs along the first axis.
    pub k1_grid: Vec<Bin>,
    /// `k⁽²⁾` as a function of the minimum-image distance.
    pub k2_radial: Vec<Bin>,
    /// Spatial mean of `k⁽¹⁾`, i.e. mean count over volume.
    pub mean_density: Bin,
    pub n_replicas: usize,
}

fn shell_volume(dim: usize, r0: f64, r1: f64) -> f64 {
    match dim {
        1 => 2.0 * (r1 - r0),
        2 => std::f64::consts::PI * (r1 * r1 - r0 * r0),
        _ => 4.0 / 3.0 * std::f64::consts::PI * (r1.powi(3) - r0.powi(3)),
    }
}

fn summarize(centers: &[f64], per_replica: &[Vec<f64>]) -> Vec<Bin> {
    centers
        .iter()
        .enumerate()
        .map(|(b, &center)| {
            let mut m = Moments::default();
            for rep in per_replica {
                m.push(rep[b]);
            }
            Bin { center, value: m.mean, std_err: m.std_error() }
        })
        .collect()
}

/// Empirical `k⁽¹⁾` and radial `k⁽²⁾` at a snapshot time, with errors from
/// the spread across replicas.
pub fn estimate_correlations(trajs: &[Trajectory], window: &Window, at_time: f64, bins: usize) -> Result<CorrelationEstimate> {
    if trajs.len() < 2 {
        return Err(Error::InsufficientReplicas(trajs.len()));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("bins must be positive".into()));
    }
    let configs: Vec<&FiniteConfig> = trajs
        .iter()
        .map(|t| t.snapshot_at(at_time).ok_or(Error::MissingSnapshot(at_time)))
        .collect::<Result<_>>()?;
    let dim = window.dim();
    let vol = window.volume();
    let side = window.side(0);
    let lo = window.lower().coord(0);
    let slab = vol / bins as f64;
    let r_max = (0..dim).map(|i| window.side(i)).fold(f64::INFINITY, f64::min) / 2.0;
    let dr = r_max / bins as f64;

    let mut k1 = Vec::with_capacity(configs.len());
    let mut k2 = Vec::with_capacity(configs.len());
    let mut density = Moments::default();
    for c in &configs {
        let mut h1 = vec![0.0; bins];
        for p in c.iter() {
            let b = (((p.coord(0) - lo) / side * bins as f64) as usize).min(bins - 1);
            h1[b] += 1.0 / slab;
        }
        let mut h2 = vec![0.0; bins];
        let pts = c.points();
        for i in 0..pts.len() {
            for j in 0..i {
                let r = window.distance(&pts[i], &pts[j]);
                if r < r_max {
                    let b = ((r / dr) as usize).min(bins - 1);
                    h2[b] += 2.0;
                }
            }
        }
        for (b, v) in h2.iter_mut().enumerate() {
            *v /= vol * shell_volume(dim, b as f64 * dr, (b + 1) as f64 * dr);
        }
        density.push(c.len() as f64 / vol);
        k1.push(h1);
        k2.push(h2);
    }
    let c1: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * side / bins as f64).collect();
    let c2: Vec<f64> = (0..bins).map(|b| (b as f64 + 0.5) * dr).collect();
    Ok(CorrelationEstimate {
        time: at_time,
        k1_grid: summarize(&c1, &k1),
        k2_radial: summarize(&c2, &k2),
        mean_density: Bin { center: at_time, value: density.mean, std_err: density.std_error() },
        n_replicas: configs.len(),
    })
}

/// `time,replica,x1..xd`, one row per particle.
pub fn write_snapshots_csv<W: Write>(out: &mut W, trajs: &[Trajectory], dim: usize) -> std::io::Result<()> {
    let coords: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "time,replica,{}", coords.join(","))?;
    for t in trajs {
        for (time, c) in &t.snapshots {
            for p in c.iter() {
                let xs: Vec<String> = p.coords().iter().map(|&v| fmt17(v)).collect();
                writeln!(out, "{},{},{}", fmt17(*time), t.replica, xs.join(","))?;
            }
        }
    }
    Ok(())
}

/// `bin_center,value,std_err`.
pub fn write_bins_csv<W: Write>(out: &mut W, bins: &[Bin]) -> std::io::Result<()> {
    writeln!(out, "bin_center,value,std_err")?;
    for b in bins {
        writeln!(out, "{},{},{}", fmt17(b.center), fmt17(b.value), fmt17(b.std_err))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(l: f64) -> Window {
        Window::periodic(&[0.0], &[l]).unwrap()
    }

    fn sim(model: ModelParams, initial: Initial, t_end: f64, replicas: usize) -> SimConfig {
        SimConfig {
            window: torus(10.0),
            model,
            initial,
            t_end,
            snapshot_times: vec![0.0, t_end / 2.0, t_end],
            seed: 17,
            particle_cap: 10_000,
            replicas,
            check_every: 1000,
        }
    }

    fn contact(lambda: f64) -> ModelParams {
        ModelParams::Contact { a: Kernel::Tophat { height: 0.5, radius: 1.0 }, lambda }
    }

    #[test]
    fn pure_death_mean_count() {
        let cfg = sim(contact(0.0), Initial::FixedCount { n: 20 }, 1.0, 1000);
        let trajs = run(&cfg).unwrap();
        let mut m = Moments::default();
        for t in &trajs {
            assert!(t.bookkeeping_holds());
            m.push(t.snapshot_at(1.0).unwrap().len() as f64);
        }
        let expected = 20.0 * (-1.0f64).exp();
        assert!((m.mean - expected).abs() < 3.0 * m.std_error(), "{} vs {expected}", m.mean);
    }

    #[test]
    fn free_hop_conserves_count_and_is_reproducible() {
        let model = ModelParams::FreeHop { a: Kernel::Gaussian { amplitude: 1.0, sigma: 0.5 } };
        let cfg = sim(model, Initial::Poisson { z: 1.5 }, 2.0, 8);
        let a = run(&cfg).unwrap();
        for t in &a {
            assert_eq!(t.final_config.len(), t.initial_count);
            assert!(t.snapshots.iter().all(|(_, c)| c.len() == t.initial_count));
            assert!(t.event_counts.hops > 0);
        }
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cached_rates_survive_many_events() {
        let model = ModelParams::LinearVoter {
            a_plus: Kernel::Tophat { height: 0.6, radius: 1.0 },
            a_minus: Kernel::Gaussian { amplitude: 0.5, sigma: 0.4 },
        };
        let mut cfg = sim(model, Initial::Poisson { z: 2.0 }, 3.0, 2);
        cfg.check_every = 50;
        for t in run(&cfg).unwrap() {
            assert!(t.bookkeeping_holds());
        }
    }

    #[test]
    fn glauber_needs_majorant_and_respects_cap() {
        let attractive = ModelParams::Glauber { phi: Kernel::Gaussian { amplitude: -0.5, sigma: 0.5 }, birth_majorant: None };
        let cfg = sim(attractive, Initial::Poisson { z: 1.0 }, 1.0, 2);
        assert!(matches!(run(&cfg), Err(Error::UnsupportedMajorant(_))));
        let mut cfg = sim(contact(3.0), Initial::FixedCount { n: 5 }, 3.0, 1);
        cfg.particle_cap = 8;
        let t = &run(&cfg).unwrap()[0];
        assert!(t.final_config.len() <= 8);
        assert!(t.event_counts.cap_saturations > 0);
        assert!(t.bookkeeping_holds());
    }

    #[test]
    fn too_small_majorant_is_reported() {
        let attractive = ModelParams::Glauber { phi: Kernel::Tophat { height: -2.0, radius: 1.0 }, birth_majorant: Some(1.0) };
        let cfg = sim(attractive, Initial::FixedCount { n: 30 }, 1.0, 1);
        assert!(matches!(run(&cfg), Err(Error::MajorantViolated { .. })));
    }

    #[test]
    fn poisson_correlations() {
        let w = torus(10.0);
        let trajs: Vec<Trajectory> = (0..400)
            .map(|r| {
                let mut rng = stream_rng(3, r);
                let n = Poisson::new(20.0).unwrap().sample(&mut rng) as usize;
                let c = FiniteConfig::new((0..n).map(|_| w.sample_uniform(&mut rng)).collect()).unwrap();
                Trajectory {
                    replica: r as usize,
                    snapshots: vec![(0.0, c.clone())],
                    event_counts: EventCounts::default(),
                    initial_count: n,
                    final_config: c,
                    count_time_integral: 0.0,
                }
            })
            .collect();
        let est = estimate_correlations(&trajs, &w, 0.0, 5).unwrap();
        for b in &est.k1_grid {
            assert!((b.value - 2.0).abs() < 4.0 * b.std_err, "{b:?}");
        }
        for b in &est.k2_radial {
            assert!((b.value - 4.0).abs() < 4.0 * b.std_err, "{b:?}");
        }
        assert!(matches!(estimate_correlations(&trajs[..1], &w, 0.0, 5), Err(Error::InsufficientReplicas(1))));
        assert!(matches!(estimate_correlations(&trajs, &w, 1.0, 5), Err(Error::MissingSnapshot(_))));
        let same = vec![trajs[0].clone(), trajs[0].clone()];
        let est = estimate_correlations(&same, &w, 0.0, 5).unwrap();
        assert!(est.k1_grid.iter().all(|b| b.std_err == 0.0));
    }

    #[test]
    fn periodic_proposal_density_sums_images() {
        let w = torus(1.0);
        let k = Kernel::Gaussian { amplitude: 1.0, sigma: 0.4 };
        let x = Point::new(&[0.1]).unwrap();
        let y = Point::new(&[0.7]).unwrap();
        let direct: f64 = (-20..=20).map(|m| k.eval(&Point::new(&[0.6 + m as f64]).unwrap())).sum();
        assert!((proposal_density(&w, &k, &x, &y) - direct).abs() < 1e-12);
    }
}

//! Random test objects: configurations, tabulated quasi-observables, smooth
//! test functions. Used by the test suites and the CLI validation commands.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::configuration::{FiniteConfig, Point, PointFn, Window};
use crate::harmonic::ConfigFn;

/// `n` uniform points in `w`.
pub fn random_config<R: Rng + ?Sized>(rng: &mut R, w: &Window, n: usize) -> FiniteConfig {
    loop {
        let pts: Vec<Point> = (0..n).map(|_| w.sample_uniform(rng)).collect();
        if let Ok(c) = FiniteConfig::new(pts) {
            return c;
        }
    }
}

/// Table with values uniform in `[−scale, scale]` on every subset of `eta`.
pub fn random_table<R: Rng + ?Sized>(rng: &mut R, eta: &FiniteConfig, scale: f64) -> ConfigFn {
    let n = eta.len();
    let mut values = HashMap::with_capacity(1 << n);
    for m in 0..(1u64 << n) {
        values.insert(eta.subset_mask(m), scale * (2.0 * rng.random::<f64>() - 1.0));
    }
    ConfigFn::table(values)
}

/// Smooth periodic function on `w`: `c0 + Σ_k a_k cos(2π k·(x−lower)/L + φ_k)`.
#[derive(Clone, Debug)]
pub struct Trig {
    pub offset: f64,
    pub terms: Vec<(Vec<f64>, f64, f64)>,
    lower: Vec<f64>,
    sides: Vec<f64>,
}

impl Trig {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, w: &Window, offset: f64, amplitude: f64, modes: usize) -> Self {
        let d = w.dim();
        let terms = (0..modes)
            .map(|_| {
                let k: Vec<f64> = (0..d).map(|_| rng.random_range(0..=2) as f64).collect();
                (k, amplitude * (2.0 * rng.random::<f64>() - 1.0), 2.0 * PI * rng.random::<f64>())
            })
            .collect();
        Trig {
            offset,
            terms,
            lower: w.lower().coords().to_vec(),
            sides: (0..d).map(|i| w.side(i)).collect(),
        }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let mut v = self.offset;
        for (k, a, ph) in &self.terms {
            let mut arg = *ph;
            for (i, ki) in k.iter().enumerate() {
                arg += 2.0 * PI * ki * (x.coord(i) - self.lower[i]) / self.sides[i];
            }
            v += a * arg.cos();
        }
        v
    }

    /// `∫_w f`, exact for integer wave numbers on the full periodic cell.
    pub fn integral(&self, volume: f64) -> f64 {
        let mut v = self.offset;
        for (k, a, ph) in &self.terms {
            if k.iter().all(|&ki| ki == 0.0) {
                v += a * ph.cos();
            }
        }
        v * volume
    }

    pub fn sup_bound(&self) -> f64 {
        self.offset.abs() + self.terms.iter().map(|t| t.1.abs()).sum::<f64>()
    }

    pub fn to_fn(&self) -> PointFn {
        let t = self.clone();
        Arc::new(move |x| t.eval(x))
    }
}

/// Random quasi-observable of order `≤ order`: `Σ_n c_n 1{Γ⁽ⁿ⁾} e_λ(f_n)`
/// with smooth `f_n`, evaluable anywhere in the window.
pub fn random_smooth_observable<R: Rng + ?Sized>(rng: &mut R, w: &Window, order: usize, scale: f64) -> ConfigFn {
    let layers: Vec<(f64, Trig)> = (0..=order)
        .map(|_| (scale * (2.0 * rng.random::<f64>() - 1.0), Trig::random(rng, w, 0.6, 0.4, 2)))
        .collect();
    ConfigFn::new(Some(order), move |eta| {
        let (c, f) = &layers[eta.len()];
        c * eta.iter().map(|p| f.eval(p)).product::<f64>()
    })
    .with_tag("smooth")
}

/// Random correlation-like function `k = e_λ(ρ(·)) · (1 + Σ_{pairs} u(x−y))`
/// truncated at `order`; positive for small `pair_amp`.
pub fn random_correlation<R: Rng + ?Sized>(rng: &mut R, w: &Window, order: usize, pair_amp: f64) -> ConfigFn {
    let offset = 0.5 + rng.random::<f64>();
    let rho = Trig::random(rng, w, offset, 0.2, 2);
    let amp = pair_amp * (2.0 * rng.random::<f64>() - 1.0);
    let width = 0.5 + rng.random::<f64>();
    let win = w.clone();
    ConfigFn::new(Some(order), move |eta| {
        let base: f64 = eta.iter().map(|p| rho.eval(p)).product();
        let pts = eta.points();
        let mut corr = 1.0;
        for i in 0..pts.len() {
            for j in 0..i {
                let r = win.distance(&pts[i], &pts[j]);
                corr += amp * (-(r / width).powi(2)).exp();
            }
        }
        base * corr
    })
    .with_tag("correlation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn trig_integral_matches_midpoint() {
        let w = Window::periodic(&[0.0], &[3.0]).unwrap();
        let t = Trig::random(&mut stream_rng(1, 0), &w, 0.3, 0.5, 3);
        let n = 64;
        let h = 3.0 / n as f64;
        let s: f64 = (0..n).map(|i| t.eval(&Point::new(&[(i as f64 + 0.5) * h]).unwrap()) * h).sum();
        assert!((s - t.integral(3.0)).abs() < 1e-12);
    }

    #[test]
    fn table_covers_subsets() {
        let w = Window::periodic(&[0.0], &[1.0]).unwrap();
        let mut rng = stream_rng(2, 0);
        let eta = random_config(&mut rng, &w, 4);
        let t = random_table(&mut rng, &eta, 1.0);
        assert_eq!(t.support_order(), Some(4));
        assert!(t.eval(&eta.subset_mask(5)).unwrap() != 0.0);
    }
}

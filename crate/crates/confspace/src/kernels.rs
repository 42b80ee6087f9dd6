//! Named radial kernels used to build model rates from configuration files.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::configuration::{PairPotential, Point, PointFn, MAX_DIM};
use crate::error::{Error, Result};

/// Gaussian tails are treated as zero beyond this many standard deviations
/// when deciding which cached rates an event can change.
const GAUSSIAN_RANGE_SIGMAS: f64 = 8.0;
const EXPONENTIAL_RANGE_SCALES: f64 = 36.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `amplitude · exp(−|u|²/(2σ²))`.
    Gaussian { amplitude: f64, sigma: f64 },
    /// `height · 1{|u| ≤ radius}`; `height` may be `inf` for a hard core.
    Tophat { height: f64, radius: f64 },
    /// `amplitude · exp(−|u|/scale)`.
    Exponential { amplitude: f64, scale: f64 },
    Zero,
}

fn ball_volume(d: usize, r: f64) -> f64 {
    match d {
        1 => 2.0 * r,
        2 => PI * r * r,
        _ => 4.0 / 3.0 * PI * r.powi(3),
    }
}

impl Kernel {
    /// Gaussian with total mass `mass` over ℝᵈ.
    pub fn normalized_gaussian(mass: f64, sigma: f64, dim: usize) -> Self {
        Kernel::Gaussian { amplitude: mass / (2.0 * PI * sigma * sigma).powf(dim as f64 / 2.0), sigma }
    }

    /// Tophat with total mass `mass` over ℝᵈ.
    pub fn normalized_tophat(mass: f64, radius: f64, dim: usize) -> Self {
        Kernel::Tophat { height: mass / ball_volume(dim, radius), radius }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("kernel {self:?}: {msg}")));
        match *self {
            Kernel::Gaussian { amplitude, sigma } => {
                if !amplitude.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
                    return bad("needs finite amplitude and sigma > 0");
                }
            }
            Kernel::Tophat { height, radius } => {
                if height.is_nan() || height == f64::NEG_INFINITY || !(radius >= 0.0 && radius.is_finite()) {
                    return bad("needs height in (-inf, inf] and radius >= 0");
                }
            }
            Kernel::Exponential { amplitude, scale } => {
                if !amplitude.is_finite() || !(scale > 0.0 && scale.is_finite()) {
                    return bad("needs finite amplitude and scale > 0");
                }
            }
            Kernel::Zero => {}
        }
        Ok(())
    }

    pub fn eval(&self, u: &Point) -> f64 {
        match *self {
            Kernel::Gaussian { amplitude, sigma } => {
                let r2: f64 = u.coords().iter().map(|v| v * v).sum();
                amplitude * (-r2 / (2.0 * sigma * sigma)).exp()
            }
            Kernel::Tophat { height, radius } => {
                if u.norm() <= radius {
                    height
                } else {
                    0.0
                }
            }
            Kernel::Exponential { amplitude, scale } => amplitude * (-u.norm() / scale).exp(),
            Kernel::Zero => 0.0,
        }
    }

    /// `∫_{ℝᵈ} a(u) du`.
    pub fn mass(&self, dim: usize) -> f64 {
        match *self {
            Kernel::Gaussian { amplitude, sigma } => amplitude * (2.0 * PI * sigma * sigma).powf(dim as f64 / 2.0),
            Kernel::Tophat { height, radius } => {
                if radius == 0.0 {
                    0.0
                } else {
                    height * ball_volume(dim, radius)
                }
            }
            Kernel::Exponential { amplitude, scale } => {
                let surface_gamma = match dim {
                    1 => 2.0,
                    2 => 2.0 * PI,
                    _ => 8.0 * PI,
                };
                amplitude * surface_gamma * scale.powi(dim as i32)
            }
            Kernel::Zero => 0.0,
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Kernel::Gaussian { amplitude, .. } | Kernel::Exponential { amplitude, .. } => amplitude.max(0.0),
            Kernel::Tophat { height, .. } => height.max(0.0),
            Kernel::Zero => 0.0,
        }
    }

    pub fn inf(&self) -> f64 {
        match *self {
            Kernel::Gaussian { amplitude, .. } | Kernel::Exponential { amplitude, .. } => amplitude.min(0.0),
            Kernel::Tophat { height, .. } => height.min(0.0),
            Kernel::Zero => 0.0,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.inf() >= 0.0
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Kernel::Gaussian { amplitude, .. } | Kernel::Exponential { amplitude, .. } => amplitude == 0.0,
            Kernel::Tophat { height, radius } => height == 0.0 || radius == 0.0,
            Kernel::Zero => true,
        }
    }

    /// Distance beyond which the kernel is zero, or negligible for smooth tails.
    pub fn range(&self) -> f64 {
        match *self {
            Kernel::Gaussian { sigma, .. } => GAUSSIAN_RANGE_SIGMAS * sigma,
            Kernel::Tophat { radius, .. } => radius,
            Kernel::Exponential { scale, .. } => EXPONENTIAL_RANGE_SCALES * scale,
            Kernel::Zero => 0.0,
        }
    }

    /// Displacement drawn from the density `a/‖a‖₁` on ℝᵈ (requires `a ≥ 0`).
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Point {
        let mut c = [0.0; MAX_DIM];
        match *self {
            Kernel::Gaussian { sigma, .. } => {
                let n = Normal::new(0.0, sigma).expect("validated sigma");
                for v in c.iter_mut().take(dim) {
                    *v = n.sample(rng);
                }
            }
            Kernel::Tophat { radius, .. } => loop {
                for v in c.iter_mut().take(dim) {
                    *v = radius * (2.0 * rng.random::<f64>() - 1.0);
                }
                if c[..dim].iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                    break;
                }
            },
            Kernel::Exponential { scale, .. } => {
                let r = Gamma::new(dim as f64, scale).expect("validated scale").sample(rng);
                let mut norm = 0.0;
                for v in c.iter_mut().take(dim) {
                    *v = StandardNormal.sample(rng);
                    norm += *v * *v;
                }
                let norm = norm.sqrt();
                for v in c.iter_mut().take(dim) {
                    *v *= r / norm;
                }
            }
            Kernel::Zero => {}
        }
        Point::raw(&c[..dim])
    }

    pub fn to_fn(&self) -> PointFn {
        let k = self.clone();
        Arc::new(move |u| k.eval(u))
    }

    /// The kernel read as a pair potential.
    pub fn to_potential(&self) -> Result<PairPotential> {
        self.validate()?;
        let lower = (-self.inf() / 2.0).max(0.0);
        PairPotential::new(self.to_fn(), lower, Some(self.range()))
    }
}

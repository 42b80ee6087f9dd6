//! Markov generators of birth-and-death, hopping and group-hopping dynamics,
//! their images `L̂ = K⁻¹LK` on quasi-observables and the duals `L̂*` acting on
//! correlation functions.
//!
//! Rates are given in K-form: the realized birth rate is `b(x,γ) = (KB_x)(γ)`,
//! the death rate of `x ∈ γ` is `(KD_x)(γ\x)`, and a hop `x → y` happens at
//! rate `(KC_{x,y})(γ\x)`. Integrals over ℝᵈ are taken over the integrator's
//! window; `λ` integrals use the integrator's intensity `z`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::configuration::{FiniteConfig, Point, PointFn, Window, DEFAULT_SUBSET_CAP};
use crate::error::{finite, Error, Result};
use crate::families::random_config;
use crate::harmonic::{for_each_small_subset, star_eval, star_with_coherent_eval, ConfigFn, DEFAULT_STAR_CAP};
use crate::kernels::Kernel;
use crate::lp::{EstimateWithError, LPIntegrator, SectorEstimate};
use crate::numeric::{binomial, factorial, CompensatedSum};

// Salts for nested integrals. Distinct residues mod 16 keep tensor nodes of
// different nesting levels apart.
pub(crate) const SALT_OUTER: u64 = 0x40;
pub(crate) const SALT_FREE: u64 = 0x51;
pub(crate) const SALT_INNER: u64 = 0x62;

/// `(x, η) ↦ B_x(η)`.
pub type SiteKernel = Arc<dyn Fn(&Point, &FiniteConfig) -> f64 + Send + Sync>;
pub type PairFn = Arc<dyn Fn(&Point, &Point) -> f64 + Send + Sync>;
/// `(x, y, η) ↦ C_{x,y}(η)`.
pub type HopKernel = Arc<dyn Fn(&Point, &Point, &FiniteConfig) -> f64 + Send + Sync>;
/// `(x, y, u) ↦ c(x, y, u)`.
pub type HopFactor = Arc<dyn Fn(&Point, &Point, &Point) -> f64 + Send + Sync>;
/// `(ξ, ζ, η) ↦ C_{ξ,ζ}(η)` for `|ξ| = |ζ| = n`.
pub type GroupKernel = Arc<dyn Fn(&FiniteConfig, &FiniteConfig, &FiniteConfig) -> f64 + Send + Sync>;
/// Bound as a function of the current particle count.
pub type CountBound = Arc<dyn Fn(usize) -> f64 + Send + Sync>;
/// A function on finite configurations, e.g. an observable `F`.
pub type Observable<'a> = &'a (dyn Fn(&FiniteConfig) -> Result<f64> + Sync);

/// Which formula to use when a kernel has a product form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalPath {
    /// ⋆-convolutions and subset sums only.
    Generic,
    /// Expanded coherent-state sums wherever a product form is declared.
    Product,
}

/// `α(x) · e_λ(f(x,·))`.
#[derive(Clone)]
pub struct CoherentSite {
    pub amplitude: PointFn,
    pub factor: PairFn,
}

impl CoherentSite {
    pub fn new(amplitude: PointFn, factor: PairFn) -> Self {
        CoherentSite { amplitude, factor }
    }

    /// `e_λ(0) = 1{∅}`.
    pub fn unit() -> Self {
        CoherentSite { amplitude: Arc::new(|_| 1.0), factor: Arc::new(|_, _| 0.0) }
    }

    pub fn eval(&self, x: &Point, eta: &FiniteConfig) -> f64 {
        (self.amplitude)(x) * eta.iter().map(|y| (self.factor)(x, y)).product::<f64>()
    }

    /// `(K α e_λ(f(x,·)))(γ) = α(x) Π_{y∈γ} (1 + f(x,y))`.
    pub fn realized(&self, x: &Point, gamma: &FiniteConfig) -> f64 {
        (self.amplitude)(x) * gamma.iter().map(|y| 1.0 + (self.factor)(x, y)).product::<f64>()
    }

    fn kernel(&self) -> SiteKernel {
        let s = self.clone();
        Arc::new(move |x, eta| s.eval(x, eta))
    }
}

/// `A(x,y) · e_λ(c(x,y,·))`.
#[derive(Clone)]
pub struct CoherentHop {
    pub amplitude: PairFn,
    pub factor: HopFactor,
}

impl CoherentHop {
    pub fn new(amplitude: PairFn, factor: HopFactor) -> Self {
        CoherentHop { amplitude, factor }
    }

    pub fn eval(&self, x: &Point, y: &Point, eta: &FiniteConfig) -> f64 {
        (self.amplitude)(x, y) * eta.iter().map(|u| (self.factor)(x, y, u)).product::<f64>()
    }

    pub fn realized(&self, x: &Point, y: &Point, rest: &FiniteConfig) -> f64 {
        (self.amplitude)(x, y) * rest.iter().map(|u| 1.0 + (self.factor)(x, y, u)).product::<f64>()
    }

    fn kernel(&self) -> HopKernel {
        let s = self.clone();
        Arc::new(move |x, y, eta| s.eval(x, y, eta))
    }
}

/// Hop proposals: `c(x,y,γ) ≤ factor(|γ|) · jump(y − x)`.
#[derive(Clone, Debug)]
pub struct HopMajorant {
    pub jump: Kernel,
    pub factor: CountBoundBox,
}

/// Debug-printable wrapper around a [`CountBound`].
#[derive(Clone)]
pub struct CountBoundBox(pub CountBound);

impl fmt::Debug for CountBoundBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CountBound")
    }
}

impl CountBoundBox {
    pub fn constant(c: f64) -> Self {
        CountBoundBox(Arc::new(move |_| c))
    }

    pub fn at(&self, n: usize) -> f64 {
        (self.0)(n)
    }
}

fn check_rate(what: &'static str, rate: f64) -> Result<f64> {
    if rate.is_nan() || rate == f64::INFINITY {
        return Err(Error::NonFiniteValue(format!("{what} rate {rate}")));
    }
    if rate < 0.0 {
        return Err(Error::NegativeRate { what, rate });
    }
    Ok(rate)
}

/// `Σ_{ξ⊂γ, |ξ| ≤ order} f(ξ)`, refusing enumerations larger than `2^cap`.
fn subset_sum(gamma: &FiniteConfig, order: Option<usize>, mut f: impl FnMut(&FiniteConfig) -> Result<f64>) -> Result<f64> {
    let n = gamma.len();
    let max_k = order.map_or(n, |o| o.min(n));
    let count: u64 = (0..=max_k).map(|k| binomial(n, k)).sum();
    if n >= 64 || count > 1u64 << DEFAULT_SUBSET_CAP {
        return Err(match order {
            Some(_) => Error::OrderCapExceeded { order: n, cap: DEFAULT_SUBSET_CAP },
            None => Error::UnboundedSupport { order: n },
        });
    }
    let mut acc = CompensatedSum::new();
    for_each_small_subset(n, max_k, |m| {
        acc.add(f(&gamma.subset_mask(m))?);
        Ok(())
    })?;
    Ok(acc.value())
}

/// Masks of the `k`-subsets of an `n`-set.
fn masks_of_size(n: usize, k: usize) -> Vec<u64> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let _ = for_each_small_subset(n, k, |m| {
        if m.count_ones() as usize == k {
            out.push(m);
        }
        Ok(())
    });
    out
}

fn complement(eta: &FiniteConfig, mask: u64) -> FiniteConfig {
    let full = if eta.len() == 64 { u64::MAX } else { (1u64 << eta.len()) - 1 };
    eta.subset_mask(full ^ mask)
}

fn order_minus(order: Option<usize>, k: usize) -> Option<usize> {
    order.map(|o| o.saturating_sub(k))
}

fn add_orders(a: Option<usize>, b: Option<usize>) -> Option<usize> {
    Some(a? + b?)
}

fn sector_estimate(s: SectorEstimate) -> EstimateWithError {
    EstimateWithError { value: s.value, std_error: s.std_error, sectors_used: 1, truncation_bound: 0.0 }
}

fn shift(est: EstimateWithError, offset: f64) -> EstimateWithError {
    EstimateWithError { value: est.value + offset, ..est }
}

// ---------------------------------------------------------------------------
// Birth and death
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct BirthDeathSpec {
    pub name: String,
    pub birth: SiteKernel,
    pub death: SiteKernel,
    /// `B_x(η) = 0` for `|η|` above this.
    pub birth_order: Option<usize>,
    pub death_order: Option<usize>,
    pub birth_product: Option<CoherentSite>,
    pub death_product: Option<CoherentSite>,
    /// `b(x,γ) ≤ birth_majorant(|γ|)` for every `x` in the window.
    pub birth_majorant: Option<CountBoundBox>,
    /// `d(x,γ) ≤ death_majorant(|γ|)`.
    pub death_majorant: Option<CountBoundBox>,
    /// Distance beyond which a point does not affect another point's rates.
    pub range: f64,
}

impl fmt::Debug for BirthDeathSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BirthDeathSpec")
            .field("name", &self.name)
            .field("birth_order", &self.birth_order)
            .field("death_order", &self.death_order)
            .field("product", &(self.birth_product.is_some(), self.death_product.is_some()))
            .finish()
    }
}

impl BirthDeathSpec {
    pub fn new(
        name: impl Into<String>,
        birth: SiteKernel,
        birth_order: Option<usize>,
        death: SiteKernel,
        death_order: Option<usize>,
    ) -> Self {
        BirthDeathSpec {
            name: name.into(),
            birth,
            death,
            birth_order,
            death_order,
            birth_product: None,
            death_product: None,
            birth_majorant: None,
            death_majorant: None,
            range: f64::INFINITY,
        }
    }

    /// Kernels derived from product forms; `order` declares their support
    /// (`Some(0)` for `e_λ(0)`, `None` otherwise).
    pub fn from_products(
        name: impl Into<String>,
        birth: CoherentSite,
        birth_order: Option<usize>,
        death: CoherentSite,
        death_order: Option<usize>,
    ) -> Self {
        let mut s = Self::new(name, birth.kernel(), birth_order, death.kernel(), death_order);
        s.birth_product = Some(birth);
        s.death_product = Some(death);
        s
    }

    pub fn with_birth_product(mut self, p: CoherentSite) -> Self {
        self.birth = p.kernel();
        self.birth_product = Some(p);
        self
    }

    pub fn with_death_product(mut self, p: CoherentSite) -> Self {
        self.death = p.kernel();
        self.death_product = Some(p);
        self
    }

    pub fn with_majorants(mut self, birth: Option<CountBoundBox>, death: Option<CountBoundBox>) -> Self {
        self.birth_majorant = birth;
        self.death_majorant = death;
        self
    }

    pub fn with_range(mut self, range: f64) -> Self {
        self.range = range;
        self
    }

    pub fn kernel_order(&self) -> Option<usize> {
        Some(self.birth_order?.max(self.death_order?))
    }

    pub fn birth_kernel(&self, x: &Point, eta: &FiniteConfig) -> f64 {
        if self.birth_order.is_some_and(|n| eta.len() > n) {
            return 0.0;
        }
        (self.birth)(x, eta)
    }

    pub fn death_kernel(&self, x: &Point, eta: &FiniteConfig) -> f64 {
        if self.death_order.is_some_and(|n| eta.len() > n) {
            return 0.0;
        }
        (self.death)(x, eta)
    }

    /// `b(x, γ) = (KB_x)(γ)`, unchecked sign.
    pub fn birth_rate(&self, x: &Point, gamma: &FiniteConfig) -> Result<f64> {
        let v = match &self.birth_product {
            Some(p) => p.realized(x, gamma),
            None => subset_sum(gamma, self.birth_order, |xi| Ok(self.birth_kernel(x, xi)))?,
        };
        finite(v, "birth rate")
    }

    /// `d(x, γ) = (KD_x)(γ \ x)` given `rest = γ \ x`, unchecked sign.
    pub fn death_rate(&self, x: &Point, rest: &FiniteConfig) -> Result<f64> {
        let v = match &self.death_product {
            Some(p) => p.realized(x, rest),
            None => subset_sum(rest, self.death_order, |xi| Ok(self.death_kernel(x, xi)))?,
        };
        finite(v, "death rate")
    }

    /// Sample nonnegativity of realized rates, agreement of product forms with
    /// the kernels, and domination by the majorants, on random configurations
    /// of up to `max_count` points.
    pub fn check<R: Rng + ?Sized>(&self, window: &Window, samples: usize, max_count: usize, rng: &mut R) -> Result<()> {
        for _ in 0..samples {
            let n = rng.random_range(0..=max_count);
            let gamma = random_config(rng, window, n);
            let x = window.sample_uniform(rng);
            let b = check_rate("birth", self.birth_rate(&x, &gamma)?)?;
            if let Some(m) = &self.birth_majorant {
                let bound = m.at(gamma.len());
                if b > bound * (1.0 + 1e-12) {
                    return Err(Error::MajorantViolated { what: "birth", ratio: b / bound });
                }
            }
            for (i, y) in gamma.iter().enumerate() {
                let d = check_rate("death", self.death_rate(y, &gamma.without_index(i))?)?;
                if let Some(m) = &self.death_majorant {
                    let bound = m.at(gamma.len());
                    if d > bound * (1.0 + 1e-12) {
                        return Err(Error::MajorantViolated { what: "death", ratio: d / bound });
                    }
                }
            }
            let small = gamma.subset_mask(rng.random::<u64>() & 0b111);
            for (prod, kern, what) in [
                (&self.birth_product, &self.birth, "birth"),
                (&self.death_product, &self.death, "death"),
            ] {
                if let Some(p) = prod {
                    let (a, b) = (p.eval(&x, &small), kern(&x, &small));
                    if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                        return Err(Error::InvalidInput(format!("{what} product form disagrees with kernel: {a} vs {b}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `(LF)(γ) = Σ_{x∈γ} d(x,γ\x)[F(γ\x) − F(γ)] + ∫ b(x,γ)[F(γ∪x) − F(γ)] dx`.
pub fn apply_l_bd(spec: &BirthDeathSpec, f: Observable<'_>, gamma: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let f0 = f(gamma)?;
    let mut deaths = CompensatedSum::new();
    for (i, x) in gamma.iter().enumerate() {
        let rest = gamma.without_index(i);
        let d = check_rate("death", spec.death_rate(x, &rest)?)?;
        if d != 0.0 {
            deaths.add(d * (f(&rest)? - f0));
        }
    }
    let births = integ.line_integral(SALT_FREE, |x, _| {
        let b = check_rate("birth", spec.birth_rate(x, gamma)?)?;
        if b == 0.0 {
            return Ok(0.0);
        }
        Ok(b * (f(&gamma.with(*x)?)? - f0))
    })?;
    Ok(shift(sector_estimate(births), finite(deaths.value(), "death sum")?))
}

/// `Σ_{x∈η} (D_x ⋆ G(·∪x))(η\x)`.
fn lhat_bd_death(spec: &BirthDeathSpec, g: &ConfigFn, eta: &FiniteConfig, path: EvalPath) -> Result<f64> {
    if g.support_order() == Some(0) {
        return Ok(0.0);
    }
    let gorder = order_minus(g.support_order(), 1);
    let mut acc = CompensatedSum::new();
    for (i, x) in eta.iter().enumerate() {
        let rest = eta.without_index(i);
        let shifted = |xi: &FiniteConfig| g.eval(&xi.with(*x)?);
        let v = match (&spec.death_product, path) {
            (Some(p), EvalPath::Product) => {
                (p.amplitude)(x) * star_with_coherent_eval(shifted, gorder, &|y: &Point| (p.factor)(x, y), &rest, DEFAULT_SUBSET_CAP)?
            }
            _ => star_eval(|xi| Ok(spec.death_kernel(x, xi)), spec.death_order, shifted, gorder, &rest, DEFAULT_STAR_CAP)?,
        };
        acc.add(v);
    }
    Ok(acc.value())
}

/// `(B_x ⋆ G(·∪x))(η)`.
fn lhat_bd_birth_density(spec: &BirthDeathSpec, g: &ConfigFn, x: &Point, eta: &FiniteConfig, path: EvalPath) -> Result<f64> {
    if g.support_order() == Some(0) {
        return Ok(0.0);
    }
    let gorder = order_minus(g.support_order(), 1);
    let shifted = |xi: &FiniteConfig| g.eval(&xi.with(*x)?);
    match (&spec.birth_product, path) {
        (Some(p), EvalPath::Product) => Ok((p.amplitude)(x)
            * star_with_coherent_eval(shifted, gorder, &|y: &Point| (p.factor)(x, y), eta, DEFAULT_SUBSET_CAP)?),
        _ => star_eval(|xi| Ok(spec.birth_kernel(x, xi)), spec.birth_order, shifted, gorder, eta, DEFAULT_STAR_CAP),
    }
}

pub fn apply_lhat_bd(spec: &BirthDeathSpec, g: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    apply_lhat_bd_with(spec, g, eta, integ, EvalPath::Product)
}

/// `(L̂G)(η) = −Σ_{x∈η}(D_x ⋆ G(·∪x))(η\x) + ∫ (B_x ⋆ G(·∪x))(η) dx`.
pub fn apply_lhat_bd_with(
    spec: &BirthDeathSpec,
    g: &ConfigFn,
    eta: &FiniteConfig,
    integ: &LPIntegrator,
    path: EvalPath,
) -> Result<EstimateWithError> {
    let death = lhat_bd_death(spec, g, eta, path)?;
    let birth = integ.line_integral(SALT_FREE, |x, _| lhat_bd_birth_density(spec, g, x, eta, path))?;
    Ok(shift(sector_estimate(birth), -death))
}

/// Integrand of `L̂*k` at `η` for one `ζ`.
fn lhat_star_bd_integrand(
    spec: &BirthDeathSpec,
    k: &ConfigFn,
    zeta: &FiniteConfig,
    eta: &FiniteConfig,
    path: EvalPath,
) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    let zn = zeta.len();
    // −k(ζ∪η) Σ_{x∈η} Σ_{ξ⊂η\x} D_x(ζ∪ξ)
    if spec.death_order.is_none_or(|o| zn <= o) {
        let mut inner = CompensatedSum::new();
        for (i, x) in eta.iter().enumerate() {
            let rest = eta.without_index(i);
            match (&spec.death_product, path) {
                (Some(p), EvalPath::Product) => {
                    inner.add(p.eval(x, zeta) * rest.iter().map(|y| 1.0 + (p.factor)(x, y)).product::<f64>());
                }
                _ => inner.add(subset_sum(&rest, order_minus(spec.death_order, zn), |xi| {
                    Ok(spec.death_kernel(x, &zeta.union(xi)?))
                })?),
            }
        }
        let s = inner.value();
        if s != 0.0 {
            acc.add(-k.eval(&zeta.union(eta)?)? * s);
        }
    }
    // Σ_{x∈η} k(ζ∪(η\x)) Σ_{ξ⊂η\x} B_x(ζ∪ξ)
    if spec.birth_order.is_none_or(|o| zn <= o) {
        for (i, x) in eta.iter().enumerate() {
            let rest = eta.without_index(i);
            let s = match (&spec.birth_product, path) {
                (Some(p), EvalPath::Product) => p.eval(x, zeta) * rest.iter().map(|y| 1.0 + (p.factor)(x, y)).product::<f64>(),
                _ => subset_sum(&rest, order_minus(spec.birth_order, zn), |xi| Ok(spec.birth_kernel(x, &zeta.union(xi)?)))?,
            };
            if s != 0.0 {
                acc.add(k.eval(&zeta.union(&rest)?)? * s);
            }
        }
    }
    Ok(acc.value())
}

pub fn apply_lhat_star_bd(spec: &BirthDeathSpec, k: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    apply_lhat_star_bd_with(spec, k, eta, integ, EvalPath::Product)
}

/// `(L̂*k)(η) = −∫dλ(ζ) k(ζ∪η) Σ_{x∈η} Σ_{ξ⊂η\x} D_x(ζ∪ξ)
///           + ∫dλ(ζ) Σ_{x∈η} k(ζ∪(η\x)) Σ_{ξ⊂η\x} B_x(ζ∪ξ)`.
pub fn apply_lhat_star_bd_with(
    spec: &BirthDeathSpec,
    k: &ConfigFn,
    eta: &FiniteConfig,
    integ: &LPIntegrator,
    path: EvalPath,
) -> Result<EstimateWithError> {
    if eta.is_empty() {
        return Ok(EstimateWithError::exact(0.0));
    }
    integ.integrate(spec.kernel_order(), SALT_INNER, |zeta, _| lhat_star_bd_integrand(spec, k, zeta, eta, path))
}

// ---------------------------------------------------------------------------
// Single-particle hops
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct HopSpec {
    pub name: String,
    pub kernel: HopKernel,
    pub order: Option<usize>,
    pub product: Option<CoherentHop>,
    pub majorant: Option<HopMajorant>,
    pub range: f64,
}

impl fmt::Debug for HopSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HopSpec")
            .field("name", &self.name)
            .field("order", &self.order)
            .field("product", &self.product.is_some())
            .field("majorant", &self.majorant)
            .finish()
    }
}

impl HopSpec {
    pub fn new(name: impl Into<String>, kernel: HopKernel, order: Option<usize>) -> Self {
        HopSpec { name: name.into(), kernel, order, product: None, majorant: None, range: f64::INFINITY }
    }

    pub fn from_product(name: impl Into<String>, product: CoherentHop, order: Option<usize>) -> Self {
        let mut s = Self::new(name, product.kernel(), order);
        s.product = Some(product);
        s
    }

    pub fn with_majorant(mut self, m: HopMajorant) -> Self {
        self.majorant = Some(m);
        self
    }

    pub fn with_range(mut self, range: f64) -> Self {
        self.range = range;
        self
    }

    pub fn kernel_at(&self, x: &Point, y: &Point, eta: &FiniteConfig) -> f64 {
        if self.order.is_some_and(|n| eta.len() > n) {
            return 0.0;
        }
        (self.kernel)(x, y, eta)
    }

    /// `c(x, y, γ) = (KC_{x,y})(γ\x)` given `rest = γ \ x`.
    pub fn hop_rate(&self, x: &Point, y: &Point, rest: &FiniteConfig) -> Result<f64> {
        let v = match &self.product {
            Some(p) => p.realized(x, y, rest),
            None => subset_sum(rest, self.order, |xi| Ok(self.kernel_at(x, y, xi)))?,
        };
        finite(v, "hop rate")
    }

    pub fn check<R: Rng + ?Sized>(&self, window: &Window, samples: usize, max_count: usize, rng: &mut R) -> Result<()> {
        for _ in 0..samples {
            let n = rng.random_range(1..=max_count.max(1));
            let gamma = random_config(rng, window, n);
            let i = rng.random_range(0..gamma.len());
            let x = gamma.points()[i];
            let rest = gamma.without_index(i);
            let y = window.sample_uniform(rng);
            let c = check_rate("hop", self.hop_rate(&x, &y, &rest)?)?;
            if let Some(m) = &self.majorant {
                let bound = m.factor.at(gamma.len()) * m.jump.eval(&window.displacement(&y, &x));
                if c > bound * (1.0 + 1e-12) && c > 1e-300 {
                    return Err(Error::MajorantViolated { what: "hop", ratio: c / bound });
                }
            }
            if let Some(p) = &self.product {
                let small = rest.subset_mask(rng.random::<u64>() & 0b11);
                let (a, b) = (p.eval(&x, &y, &small), (self.kernel)(&x, &y, &small));
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidInput(format!("hop product form disagrees with kernel: {a} vs {b}")));
                }
            }
        }
        Ok(())
    }
}

/// `(LF)(γ) = Σ_{x∈γ} ∫ c(x,y,γ)[F(γ\x∪y) − F(γ)] dy`.
pub fn apply_l_hop(spec: &HopSpec, f: Observable<'_>, gamma: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let f0 = f(gamma)?;
    let est = integ.line_integral(SALT_FREE, |y, _| {
        let mut acc = CompensatedSum::new();
        for (i, x) in gamma.iter().enumerate() {
            let rest = gamma.without_index(i);
            let c = check_rate("hop", spec.hop_rate(x, y, &rest)?)?;
            if c != 0.0 {
                acc.add(c * (f(&rest.with(*y)?)? - f0));
            }
        }
        Ok(acc.value())
    })?;
    Ok(sector_estimate(est))
}

/// `Σ_{x∈η} (C_{x,y} ⋆ [G(·∪y) − G(·∪x)])(η\x)` at a fixed `y`.
fn lhat_hop_density(spec: &HopSpec, g: &ConfigFn, y: &Point, eta: &FiniteConfig, path: EvalPath) -> Result<f64> {
    if g.support_order() == Some(0) {
        return Ok(0.0);
    }
    let gorder = order_minus(g.support_order(), 1);
    let mut acc = CompensatedSum::new();
    for (i, x) in eta.iter().enumerate() {
        let rest = eta.without_index(i);
        let diff = |xi: &FiniteConfig| Ok(g.eval(&xi.with(*y)?)? - g.eval(&xi.with(*x)?)?);
        let v = match (&spec.product, path) {
            (Some(p), EvalPath::Product) => {
                (p.amplitude)(x, y) * star_with_coherent_eval(diff, gorder, &|u: &Point| (p.factor)(x, y, u), &rest, DEFAULT_SUBSET_CAP)?
            }
            _ => star_eval(|xi| Ok(spec.kernel_at(x, y, xi)), spec.order, diff, gorder, &rest, DEFAULT_STAR_CAP)?,
        };
        acc.add(v);
    }
    Ok(acc.value())
}

pub fn apply_lhat_hop(spec: &HopSpec, g: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    apply_lhat_hop_with(spec, g, eta, integ, EvalPath::Product)
}

/// `(L̂G)(η) = Σ_{x∈η} ∫ dy (C_{x,y} ⋆ [G(·∪y) − G(·∪x)])(η\x)`.
pub fn apply_lhat_hop_with(
    spec: &HopSpec,
    g: &ConfigFn,
    eta: &FiniteConfig,
    integ: &LPIntegrator,
    path: EvalPath,
) -> Result<EstimateWithError> {
    let est = integ.line_integral(SALT_FREE, |y, _| lhat_hop_density(spec, g, y, eta, path))?;
    Ok(sector_estimate(est))
}

/// Integrand of `L̂*k` at `η` for a free point `u` and `ξ`.
fn lhat_star_hop_integrand(
    spec: &HopSpec,
    k: &ConfigFn,
    u: &Point,
    xi: &FiniteConfig,
    eta: &FiniteConfig,
    path: EvalPath,
) -> Result<f64> {
    let xn = xi.len();
    if spec.order.is_some_and(|o| xn > o) {
        return Ok(0.0);
    }
    let mut acc = CompensatedSum::new();
    // gain: y ∈ η is the arrival site, u = x the departure site
    for (i, y) in eta.iter().enumerate() {
        let rest = eta.without_index(i);
        let s = match (&spec.product, path) {
            (Some(p), EvalPath::Product) => p.eval(u, y, xi) * rest.iter().map(|w| 1.0 + (p.factor)(u, y, w)).product::<f64>(),
            _ => subset_sum(&rest, order_minus(spec.order, xn), |zeta| Ok(spec.kernel_at(u, y, &xi.union(zeta)?)))?,
        };
        if s != 0.0 {
            acc.add(k.eval(&xi.union(&rest)?.with(*u)?)? * s);
        }
    }
    // loss: x ∈ η departs to u = y
    let mut loss = CompensatedSum::new();
    for (i, x) in eta.iter().enumerate() {
        let rest = eta.without_index(i);
        loss.add(match (&spec.product, path) {
            (Some(p), EvalPath::Product) => p.eval(x, u, xi) * rest.iter().map(|w| 1.0 + (p.factor)(x, u, w)).product::<f64>(),
            _ => subset_sum(&rest, order_minus(spec.order, xn), |zeta| Ok(spec.kernel_at(x, u, &xi.union(zeta)?)))?,
        });
    }
    let l = loss.value();
    if l != 0.0 {
        acc.add(-k.eval(&xi.union(eta)?)? * l);
    }
    Ok(acc.value())
}

pub fn apply_lhat_star_hop(spec: &HopSpec, k: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    apply_lhat_star_hop_with(spec, k, eta, integ, EvalPath::Product)
}

/// `(L̂*k)(η) = Σ_{y∈η} ∫dx ∫dλ(ξ) k(ξ∪(η\y)∪x) Σ_{ζ⊂η\y} C_{x,y}(ξ∪ζ)
///           − ∫dλ(ξ) k(ξ∪η) Σ_{x∈η} Σ_{ζ⊂η\x} ∫dy C_{x,y}(ξ∪ζ)`.
pub fn apply_lhat_star_hop_with(
    spec: &HopSpec,
    k: &ConfigFn,
    eta: &FiniteConfig,
    integ: &LPIntegrator,
    path: EvalPath,
) -> Result<EstimateWithError> {
    if eta.is_empty() {
        return Ok(EstimateWithError::exact(0.0));
    }
    integ.integrate_with_free(1, spec.order, SALT_INNER, |u, xi, _| lhat_star_hop_integrand(spec, k, &u[0], xi, eta, path))
}

// ---------------------------------------------------------------------------
// Group hops
// ---------------------------------------------------------------------------

/// Proposals for group hops: `c(ξ, ζ, γ) ≤ factor(|γ|) Π_i jump(ζ_i − ξ_i)`
/// for every pairing of the points of `ξ` and `ζ`.
#[derive(Clone, Debug)]
pub struct GroupMajorant {
    pub jump: Kernel,
    pub factor: CountBoundBox,
}

#[derive(Clone)]
pub struct GroupHopSpec {
    pub name: String,
    pub n: usize,
    pub kernel: GroupKernel,
    pub order: Option<usize>,
    pub majorant: Option<GroupMajorant>,
    pub range: f64,
}

impl fmt::Debug for GroupHopSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupHopSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("order", &self.order)
            .finish()
    }
}

impl GroupHopSpec {
    pub fn new(name: impl Into<String>, n: usize, kernel: GroupKernel, order: Option<usize>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("group size {n} must be at least 2")));
        }
        Ok(GroupHopSpec { name: name.into(), n, kernel, order, majorant: None, range: f64::INFINITY })
    }

    pub fn with_majorant(mut self, m: GroupMajorant) -> Self {
        self.majorant = Some(m);
        self
    }

    pub fn with_range(mut self, range: f64) -> Self {
        self.range = range;
        self
    }

    /// `C_{ξ,ζ}(η)`, enforcing `|ξ| = |ζ| = n`.
    pub fn kernel_at(&self, from: &FiniteConfig, to: &FiniteConfig, eta: &FiniteConfig) -> Result<f64> {
        for s in [from, to] {
            if s.len() != self.n {
                return Err(Error::GroupSizeMismatch { expected: self.n, got: s.len() });
            }
        }
        if self.order.is_some_and(|o| eta.len() > o) {
            return Ok(0.0);
        }
        Ok((self.kernel)(from, to, eta))
    }

    /// `c(ξ, ζ, γ) = (KC_{ξ,ζ})(γ\ξ)` given `rest = γ \ ξ`.
    pub fn group_rate(&self, from: &FiniteConfig, to: &FiniteConfig, rest: &FiniteConfig) -> Result<f64> {
        let v = subset_sum(rest, self.order, |w| self.kernel_at(from, to, w))?;
        finite(v, "group hop rate")
    }
}

fn tuple_config(pts: &[Point]) -> Result<FiniteConfig> {
    FiniteConfig::new(pts.to_vec())
}

/// `(LF)(γ) = Σ_{ξ⊂γ, |ξ|=n} ∫dζ c(ξ,ζ,γ)[F(γ\ξ∪ζ) − F(γ)]`, `ζ` over `Λⁿ`.
pub fn apply_l_group(spec: &GroupHopSpec, f: Observable<'_>, gamma: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let masks = masks_of_size(gamma.len(), spec.n);
    if masks.is_empty() {
        return Ok(EstimateWithError::exact(0.0));
    }
    let f0 = f(gamma)?;
    let est = integ.sector(spec.n, 0, SALT_FREE, |ys, _| {
        let to = tuple_config(ys)?;
        let mut acc = CompensatedSum::new();
        for &m in &masks {
            let from = gamma.subset_mask(m);
            let rest = complement(gamma, m);
            let c = check_rate("group hop", spec.group_rate(&from, &to, &rest)?)?;
            if c != 0.0 {
                acc.add(c * (f(&rest.union(&to)?)? - f0));
            }
        }
        Ok(acc.value())
    })?;
    Ok(sector_estimate(est))
}

/// `Σ_{ξ⊂η,|ξ|=n} (C_{ξ,ζ} ⋆ H_{ξ,ζ})(η\ξ)` at a fixed destination `ζ`, where
/// `H(ω) = Σ_{∅≠τ⊂ζ} G(ω∪τ) − Σ_{∅≠τ⊂ξ} G(ω∪τ)`.
fn lhat_group_density(spec: &GroupHopSpec, g: &ConfigFn, to: &FiniteConfig, eta: &FiniteConfig) -> Result<f64> {
    let n = spec.n;
    let gorder = order_minus(g.support_order(), 1);
    let mut acc = CompensatedSum::new();
    for m in masks_of_size(eta.len(), n) {
        let from = eta.subset_mask(m);
        let rest = complement(eta, m);
        let h = |w: &FiniteConfig| -> Result<f64> {
            let mut s = CompensatedSum::new();
            for t in 1..(1u64 << n) {
                s.add(g.eval(&w.union(&to.subset_mask(t))?)?);
                s.add(-g.eval(&w.union(&from.subset_mask(t))?)?);
            }
            Ok(s.value())
        };
        acc.add(star_eval(|w| spec.kernel_at(&from, to, w), spec.order, h, gorder, &rest, DEFAULT_STAR_CAP)?);
    }
    Ok(acc.value())
}

/// `(L̂G)(η) = 1{|η|≥n} Σ_{ξ⊂η,|ξ|=n} ∫dζ Σ_{τ⊂ζ}(C_{ξ,ζ} ⋆ G(·∪τ))(η\ξ) − Σ_{τ⊂ξ}(…)`.
pub fn apply_lhat_group(spec: &GroupHopSpec, g: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    if eta.len() < spec.n || g.support_order() == Some(0) {
        return Ok(EstimateWithError::exact(0.0));
    }
    let est = integ.sector(spec.n, 0, SALT_FREE, |ys, _| lhat_group_density(spec, g, &tuple_config(ys)?, eta))?;
    Ok(sector_estimate(est))
}

/// `L̂*k` for group hops as the sum of a gain part (origin integrated over
/// `Λⁿ`, destination `η₁ ∪ τ`) and a loss part (origin `η₁ ∪ ξ`, destination
/// integrated over `Λⁿ`).
pub fn apply_lhat_star_group(spec: &GroupHopSpec, k: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    if eta.is_empty() {
        return Ok(EstimateWithError::exact(0.0));
    }
    let n = spec.n;
    let len = eta.len();
    let z = integ.z();
    let mut total = EstimateWithError::exact(0.0);
    for m in 0..=n {
        // gain with |τ| = m, |η₁| = n − m ≥ 1 (η₁ = ∅ terms cancel against the loss part)
        let j = n - m;
        if j == 0 || j > len {
            continue;
        }
        let masks = masks_of_size(len, j);
        let est = integ.sum_sectors(spec.order, |s| {
            integ.sector(n + m, s, SALT_INNER + 16 * m as u64, |pts, _| {
                let from = tuple_config(&pts[..n])?;
                let tau = &pts[n..n + m];
                let zeta = tuple_config(&pts[n + m..])?;
                let zn = zeta.len();
                let mut acc = CompensatedSum::new();
                for &mask in &masks {
                    let eta1 = eta.subset_mask(mask);
                    let rest = complement(eta, mask);
                    let to = eta1.union(&tuple_config(tau)?)?;
                    let c = subset_sum(&rest, order_minus(spec.order, zn), |eta2| spec.kernel_at(&from, &to, &zeta.union(eta2)?))?;
                    if c != 0.0 {
                        acc.add(k.eval(&zeta.union(&rest)?.union(&from)?)? * c);
                    }
                }
                Ok(acc.value())
            })
        })?;
        total = total.combine(1.0, &est, z.powi(m as i32) / factorial(m));
    }
    for j in 0..=n {
        // loss with |ξ| = j, |η₁| = n − j ≥ 1
        let i = n - j;
        if i == 0 || i > len {
            continue;
        }
        let masks = masks_of_size(len, i);
        let est = integ.sum_sectors(spec.order, |s| {
            integ.sector(n + j, s, SALT_INNER + 16 * (n + 1 + j) as u64, |pts, _| {
                let to = tuple_config(&pts[..n])?;
                let xi = tuple_config(&pts[n..n + j])?;
                let zeta = tuple_config(&pts[n + j..])?;
                let zn = zeta.len();
                let mut acc = CompensatedSum::new();
                for &mask in &masks {
                    let from = eta.subset_mask(mask).union(&xi)?;
                    let rest = complement(eta, mask);
                    acc.add(subset_sum(&rest, order_minus(spec.order, zn), |eta2| spec.kernel_at(&from, &to, &zeta.union(eta2)?))?);
                }
                let c = acc.value();
                if c == 0.0 {
                    return Ok(0.0);
                }
                Ok(k.eval(&zeta.union(eta)?.union(&xi)?)? * c)
            })
        })?;
        total = total.combine(1.0, &est, -z.powi(j as i32) / factorial(j));
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Uniform interface and duality
// ---------------------------------------------------------------------------

/// Any of the supported dynamics.
#[derive(Clone, Debug)]
pub enum Dynamics {
    BirthDeath(BirthDeathSpec),
    Hop(HopSpec),
    Group(GroupHopSpec),
}

impl From<BirthDeathSpec> for Dynamics {
    fn from(s: BirthDeathSpec) -> Self {
        Dynamics::BirthDeath(s)
    }
}

impl From<HopSpec> for Dynamics {
    fn from(s: HopSpec) -> Self {
        Dynamics::Hop(s)
    }
}

impl From<GroupHopSpec> for Dynamics {
    fn from(s: GroupHopSpec) -> Self {
        Dynamics::Group(s)
    }
}

impl Dynamics {
    pub fn name(&self) -> &str {
        match self {
            Dynamics::BirthDeath(s) => &s.name,
            Dynamics::Hop(s) => &s.name,
            Dynamics::Group(s) => &s.name,
        }
    }

    pub fn kernel_order(&self) -> Option<usize> {
        match self {
            Dynamics::BirthDeath(s) => s.kernel_order(),
            Dynamics::Hop(s) => s.order,
            Dynamics::Group(s) => s.order,
        }
    }

    /// Number of Lebesgue variables in the free integral of `L̂`.
    fn free_dims(&self) -> usize {
        match self {
            Dynamics::Group(s) => s.n,
            _ => 1,
        }
    }

    /// Largest order of `η` at which `L̂G` can be nonzero.
    pub fn lhat_support(&self, g_order: Option<usize>) -> Option<usize> {
        match self {
            Dynamics::BirthDeath(s) => add_orders(g_order, s.kernel_order()),
            Dynamics::Hop(s) => add_orders(g_order, s.order),
            Dynamics::Group(s) => add_orders(g_order.map(|o| o.max(1) + s.n - 1), s.order),
        }
    }

    pub fn apply_l(&self, f: Observable<'_>, gamma: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
        match self {
            Dynamics::BirthDeath(s) => apply_l_bd(s, f, gamma, integ),
            Dynamics::Hop(s) => apply_l_hop(s, f, gamma, integ),
            Dynamics::Group(s) => apply_l_group(s, f, gamma, integ),
        }
    }

    pub fn apply_lhat(&self, g: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator, path: EvalPath) -> Result<EstimateWithError> {
        match self {
            Dynamics::BirthDeath(s) => apply_lhat_bd_with(s, g, eta, integ, path),
            Dynamics::Hop(s) => apply_lhat_hop_with(s, g, eta, integ, path),
            Dynamics::Group(s) => apply_lhat_group(s, g, eta, integ),
        }
    }

    pub fn apply_lhat_star(&self, k: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator, path: EvalPath) -> Result<EstimateWithError> {
        match self {
            Dynamics::BirthDeath(s) => apply_lhat_star_bd_with(s, k, eta, integ, path),
            Dynamics::Hop(s) => apply_lhat_star_hop_with(s, k, eta, integ, path),
            Dynamics::Group(s) => apply_lhat_star_group(s, k, eta, integ),
        }
    }

    /// `(L̂G)(η)` written as `∫_{Λ^m} dx h(x, η)`; returns `h`.
    fn lhat_density(&self, g: &ConfigFn, free: &[Point], eta: &FiniteConfig, volume: f64, path: EvalPath) -> Result<f64> {
        match self {
            Dynamics::BirthDeath(s) => {
                Ok(lhat_bd_birth_density(s, g, &free[0], eta, path)? - lhat_bd_death(s, g, eta, path)? / volume)
            }
            Dynamics::Hop(s) => lhat_hop_density(s, g, &free[0], eta, path),
            Dynamics::Group(s) => {
                if eta.len() < s.n {
                    return Ok(0.0);
                }
                lhat_group_density(s, g, &tuple_config(free)?, eta)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct DualityReport {
    /// `∫ (L̂G) k dλ`.
    pub lhs: EstimateWithError,
    /// `∫ G (L̂*k) dλ`.
    pub rhs: EstimateWithError,
    pub sigma_distance: f64,
    pub relative_difference: f64,
}

/// Both sides of `⟨L̂G, k⟩ = ⟨G, L̂*k⟩`, the inner `L̂*` integrals drawn from
/// per-sample child streams.
pub fn check_duality(dynamics: &Dynamics, g: &ConfigFn, k: &ConfigFn, integ: &LPIntegrator, path: EvalPath) -> Result<DualityReport> {
    let volume = integ.window().volume();
    let lhs = integ.integrate_with_free(dynamics.free_dims(), dynamics.lhat_support(g.support_order()), SALT_OUTER, |free, eta, _| {
        let kv = k.eval(eta)?;
        if kv == 0.0 {
            return Ok(0.0);
        }
        Ok(kv * dynamics.lhat_density(g, free, eta, volume, path)?)
    })?;
    let rhs = integ.integrate(g.support_order(), SALT_OUTER, |eta, key| {
        let gv = g.eval(eta)?;
        if gv == 0.0 || eta.is_empty() {
            return Ok(0.0);
        }
        Ok(gv * dynamics.apply_lhat_star(k, eta, &integ.child(key), path)?.value)
    })?;
    Ok(DualityReport {
        sigma_distance: lhs.sigma_distance(&rhs),
        relative_difference: lhs.relative_difference(&rhs),
        lhs,
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{random_smooth_observable, random_table};
    use crate::harmonic::{k_inverse, k_transform};
    use crate::rng::stream_rng;

    fn window() -> Window {
        Window::periodic(&[0.0], &[2.0]).unwrap()
    }

    fn tensor(p: usize) -> LPIntegrator {
        LPIntegrator::tensor(window(), 1.0, 3, p).unwrap()
    }

    fn gauss(w: &Window, amp: f64, sigma: f64) -> PairFn {
        let w = w.clone();
        Arc::new(move |x, y| {
            let r = w.distance(x, y);
            amp * (-r * r / (2.0 * sigma * sigma)).exp()
        })
    }

    fn pure_death() -> BirthDeathSpec {
        BirthDeathSpec::from_products(
            "pure_death",
            CoherentSite::new(Arc::new(|_| 0.0), Arc::new(|_, _| 0.0)),
            Some(0),
            CoherentSite::unit(),
            Some(0),
        )
    }

    fn contact(lambda: f64) -> BirthDeathSpec {
        let a = gauss(&window(), 1.0, 0.3);
        let birth: SiteKernel = Arc::new(move |x, eta| if eta.len() == 1 { lambda * a(x, &eta.points()[0]) } else { 0.0 });
        BirthDeathSpec::new("contact", birth, Some(1), CoherentSite::unit().kernel(), Some(0)).with_death_product(CoherentSite::unit())
    }

    fn glauber(amp: f64) -> BirthDeathSpec {
        let phi = gauss(&window(), amp, 0.3);
        BirthDeathSpec::from_products(
            "glauber",
            CoherentSite::new(Arc::new(|_| 1.0), Arc::new(move |x, y| (-phi(x, y)).exp() - 1.0)),
            None,
            CoherentSite::unit(),
            Some(0),
        )
    }

    fn voter() -> BirthDeathSpec {
        let (ap, am) = (gauss(&window(), 0.8, 0.3), gauss(&window(), 0.5, 0.4));
        let b: SiteKernel = Arc::new(move |x, eta| if eta.len() == 1 { ap(x, &eta.points()[0]) } else { 0.0 });
        let d: SiteKernel = Arc::new(move |x, eta| if eta.len() == 1 { am(x, &eta.points()[0]) } else { 0.0 });
        BirthDeathSpec::new("voter", b, Some(1), d, Some(1))
    }

    fn kawasaki(amp: f64) -> HopSpec {
        let a = gauss(&window(), 1.0, 0.4);
        let phi = gauss(&window(), amp, 0.3);
        let p2 = phi.clone();
        HopSpec::from_product(
            "kawasaki",
            CoherentHop::new(Arc::new(move |x, y| a(x, y) * (-phi(x, y)).exp()), Arc::new(move |_, y, u| (-p2(y, u)).exp() - 1.0)),
            None,
        )
    }

    fn free_hop() -> HopSpec {
        let a = gauss(&window(), 1.0, 0.4);
        HopSpec::from_product("free_hop", CoherentHop::new(a, Arc::new(|_, _, _| 0.0)), Some(0))
    }

    fn pair_hop() -> GroupHopSpec {
        let p = gauss(&window(), 1.0, 0.5);
        let kernel: GroupKernel = Arc::new(move |from, to, eta| {
            if !eta.is_empty() {
                return 0.0;
            }
            let (x, y) = (from.points(), to.points());
            p(&x[0], &y[0]) * p(&x[0], &y[1]) * p(&x[1], &y[0]) * p(&x[1], &y[1])
        });
        GroupHopSpec::new("pair_hop", 2, kernel, Some(0)).unwrap()
    }

    fn cfg(xs: &[f64]) -> FiniteConfig {
        FiniteConfig::new(xs.iter().map(|&x| Point::new(&[x]).unwrap()).collect()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn probability_is_conserved() {
        let integ = tensor(16);
        let one = |_: &FiniteConfig| Ok(1.0);
        let gamma = cfg(&[0.13, 0.71, 1.02, 1.55]);
        for d in [Dynamics::from(glauber(0.7)), contact(1.3).into(), voter().into(), kawasaki(0.5).into(), pair_hop().into()] {
            assert_eq!(d.apply_l(&one, &gamma, &integ).unwrap().value, 0.0, "{}", d.name());
        }
        let count = |g: &FiniteConfig| Ok(g.len() as f64);
        for d in [Dynamics::from(kawasaki(0.5)), pair_hop().into()] {
            assert_eq!(d.apply_l(&count, &gamma, &integ).unwrap().value, 0.0);
        }
    }

    #[test]
    fn pure_death_examples() {
        let integ = tensor(8);
        let spec = pure_death();
        let gamma = cfg(&[0.2, 0.9, 1.4]);
        let count = |g: &FiniteConfig| Ok(g.len() as f64);
        assert_eq!(apply_l_bd(&spec, &count, &gamma, &integ).unwrap().value, -3.0);
        let mut rng = stream_rng(4, 0);
        let g = random_table(&mut rng, &gamma, 1.0);
        let lhat = apply_lhat_bd(&spec, &g, &gamma, &integ).unwrap().value;
        assert!(rel(lhat, -3.0 * g.eval(&gamma).unwrap()) < 1e-14);
        let k = random_smooth_observable(&mut rng, &window(), 3, 1.0);
        let ls = apply_lhat_star_bd(&spec, &k, &gamma, &integ).unwrap().value;
        assert!(rel(ls, -3.0 * k.eval(&gamma).unwrap()) < 1e-14);
    }

    #[test]
    fn lhat_commutes_with_k() {
        let integ = tensor(12);
        let mut rng = stream_rng(5, 0);
        let specs: Vec<Dynamics> = vec![glauber(0.6).into(), contact(1.2).into(), voter().into(), kawasaki(0.4).into(), pair_hop().into()];
        for d in &specs {
            for n in 0..=3 {
                let eta = random_config(&mut rng, &window(), n);
                let g = random_smooth_observable(&mut rng, &window(), 2, 1.0);
                let direct = d.apply_lhat(&g, &eta, &integ, EvalPath::Generic).unwrap().value;
                let kg = |gamma: &FiniteConfig| k_transform(&g, gamma);
                let via_k = k_inverse(|gamma| Ok(d.apply_l(&kg, gamma, &integ)?.value), &eta).unwrap();
                assert!((direct - via_k).abs() < 1e-10 * (1.0 + direct.abs()), "{} n={n}: {direct} vs {via_k}", d.name());
            }
        }
    }

    #[test]
    fn product_paths_match_generic() {
        let integ = tensor(10);
        let mut rng = stream_rng(6, 0);
        let specs: Vec<Dynamics> = vec![glauber(0.8).into(), contact(0.7).into(), kawasaki(0.6).into(), free_hop().into()];
        for d in &specs {
            for n in 0..=4 {
                let eta = random_config(&mut rng, &window(), n);
                let g = random_smooth_observable(&mut rng, &window(), 3, 1.0);
                let a = d.apply_lhat(&g, &eta, &integ, EvalPath::Generic).unwrap().value;
                let b = d.apply_lhat(&g, &eta, &integ, EvalPath::Product).unwrap().value;
                assert!(rel(a, b) < 1e-9 || (a - b).abs() < 1e-12, "{} L̂ n={n}: {a} vs {b}", d.name());
                if n <= 3 {
                    let k = random_smooth_observable(&mut rng, &window(), 5, 1.0);
                    let a = d.apply_lhat_star(&k, &eta, &integ, EvalPath::Generic).unwrap().value;
                    let b = d.apply_lhat_star(&k, &eta, &integ, EvalPath::Product).unwrap().value;
                    assert!(rel(a, b) < 1e-9 || (a - b).abs() < 1e-12, "{} L̂* n={n}: {a} vs {b}", d.name());
                }
            }
        }
    }

    #[test]
    fn stationarity_oracles() {
        let integ = tensor(24);
        let e1 = ConfigFn::coherent_const(1.0);
        let glauber0 = glauber(0.0);
        for n in 0..=3 {
            let eta = random_config(&mut stream_rng(7, n as u64), &window(), n);
            let v = apply_lhat_star_bd(&glauber0, &e1, &eta, &integ).unwrap();
            assert!(v.value.abs() < 1e-12, "glauber n={n}: {v:?}");
            let v = apply_lhat_star_hop(&free_hop(), &e1, &eta, &integ).unwrap();
            assert!(v.value.abs() < 1e-12, "free hop n={n}: {v:?}");
            let v = apply_lhat_star_group(&pair_hop(), &e1, &eta, &integ).unwrap();
            assert!(v.value.abs() < 1e-12, "pair hop n={n}: {v:?}");
        }
        // contact at a singleton with constant k
        let spec = contact(1.4);
        let rho = 0.7;
        let k = ConfigFn::new(None, move |_| rho);
        let v = apply_lhat_star_bd(&spec, &k, &cfg(&[0.3]), &integ).unwrap().value;
        let mass = integ.line_integral(0, |y, _| Ok(gauss(&window(), 1.0, 0.3)(&Point::new(&[0.3]).unwrap(), y))).unwrap().value;
        assert!(rel(v, (1.4 * mass - 1.0) * rho) < 1e-8);
    }

    #[test]
    fn group_hop_small_configurations() {
        let integ = tensor(8);
        let g = ConfigFn::new(Some(2), |_| 1.0);
        let v = apply_lhat_group(&pair_hop(), &g, &cfg(&[0.4]), &integ).unwrap();
        assert_eq!(v.value, 0.0);
        let spec = pair_hop();
        let e = spec.kernel_at(&cfg(&[0.1]), &cfg(&[0.2, 0.3]), &FiniteConfig::empty());
        assert!(matches!(e, Err(Error::GroupSizeMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn duality_in_tensor_mode() {
        let integ = tensor(10);
        let mut rng = stream_rng(8, 0);
        let specs: Vec<Dynamics> = vec![contact(1.1).into(), voter().into(), kawasaki(0.3).into(), pair_hop().into(), glauber(0.0).into()];
        for d in &specs {
            let g = random_smooth_observable(&mut rng, &window(), 2, 1.0);
            let k = random_smooth_observable(&mut rng, &window(), 3, 1.0);
            let r = check_duality(d, &g, &k, &integ, EvalPath::Product).unwrap();
            assert!(r.relative_difference < 1e-6, "{}: {r:?}", d.name());
        }
    }
}

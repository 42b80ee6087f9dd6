//! Concrete models: parameters from the kernel registry, the generator specs
//! they induce, and each model's expanded formulas for `L̂` and `L̂*`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::configuration::{FiniteConfig, Point, Window};
use crate::error::{Error, Result};
use crate::generators::{
    BirthDeathSpec, CoherentHop, CoherentSite, CountBoundBox, Dynamics, GroupHopSpec, GroupKernel, GroupMajorant, HopMajorant,
    HopSpec, PairFn, SiteKernel, SALT_FREE, SALT_INNER,
};
use crate::harmonic::{for_each_small_subset, ConfigFn};
use crate::kernels::Kernel;
use crate::lp::{EstimateWithError, LPIntegrator, SectorEstimate};
use crate::numeric::{binomial, CompensatedSum};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    #[default]
    Even,
    Odd,
}

/// Model parameters. Kernels are functions of the displacement between the
/// two points involved (minimum image on a periodic window).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    /// Birth density `e^{−E(x,γ)}`, unit death rate.
    Glauber {
        phi: Kernel,
        /// Constant bound on the birth density, needed when `φ` has an attractive part.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        birth_majorant: Option<f64>,
    },
    /// Birth density `λ Σ_{y∈γ} a(x−y)`, unit death rate.
    Contact { a: Kernel, lambda: f64 },
    /// Birth density `Σ_{y∈γ} a₊(x−y)`, death rate `Σ_{y∈γ\x} a₋(x−y)`.
    LinearVoter { a_plus: Kernel, a_minus: Kernel },
    /// Rates summed over `p`- and `q`-subsets with weights `Π_i a(x−x_i)`.
    PolynomialVoter { p: usize, q: usize, a_p: Kernel, a_q: Kernel },
    Kawasaki {
        phi: Kernel,
        a: Kernel,
        #[serde(default)]
        s: f64,
    },
    FreeHop { a: Kernel },
    /// `c(x,y,γ) = jump(y−x) Σ_{ξ⊂γ\x, |ξ|=p} Π_{u∈ξ} g(x−u)`.
    PolynomialHop { p: usize, jump: Kernel, g: Kernel },
    /// `c(x,y,γ) = jump(y−x) (base + Σ_{u∈γ\x} g(x−u))`.
    AffineHop { jump: Kernel, base: f64, g: Kernel },
    /// Pairs `{x₁,x₂} → {y₁,y₂}` at rate `Π_{i,j} p(x_i−y_j)`.
    PairHop {
        p: Kernel,
        #[serde(default)]
        parity: Parity,
    },
}

impl ModelParams {
    pub fn model_id(&self) -> &'static str {
        match self {
            ModelParams::Glauber { .. } => "glauber",
            ModelParams::Contact { .. } => "contact",
            ModelParams::LinearVoter { .. } => "linear_voter",
            ModelParams::PolynomialVoter { .. } => "polynomial_voter",
            ModelParams::Kawasaki { s, .. } if *s == 0.0 => "kawasaki_s0",
            ModelParams::Kawasaki { .. } => "kawasaki",
            ModelParams::FreeHop { .. } => "free_hop",
            ModelParams::PolynomialHop { .. } => "polynomial_hop",
            ModelParams::AffineHop { .. } => "affine_hop",
            ModelParams::PairHop { .. } => "pair_hop",
        }
    }

    fn kernels(&self) -> Vec<&Kernel> {
        match self {
            ModelParams::Glauber { phi, .. } => vec![phi],
            ModelParams::Contact { a, .. } | ModelParams::FreeHop { a } => vec![a],
            ModelParams::LinearVoter { a_plus, a_minus } => vec![a_plus, a_minus],
            ModelParams::PolynomialVoter { a_p, a_q, .. } => vec![a_p, a_q],
            ModelParams::Kawasaki { phi, a, .. } => vec![phi, a],
            ModelParams::PolynomialHop { jump, g, .. } | ModelParams::AffineHop { jump, g, .. } => vec![jump, g],
            ModelParams::PairHop { p, .. } => vec![p],
        }
    }

    /// Largest kernel range, used to decide which cached rates an event touches.
    pub fn range(&self) -> f64 {
        self.kernels().iter().map(|k| k.range()).fold(0.0, f64::max)
    }

    pub fn validate(&self, window: &Window) -> Result<()> {
        for k in self.kernels() {
            k.validate()?;
        }
        let bad = |msg: String| Err(Error::InvalidInput(format!("{}: {msg}", self.model_id())));
        let rate_kernel = |k: &Kernel, name: &str| -> Result<()> {
            if !k.is_nonnegative() {
                return bad(format!("kernel {name} must be nonnegative"));
            }
            if !k.mass(window.dim()).is_finite() {
                return bad(format!("kernel {name} must be integrable"));
            }
            Ok(())
        };
        match self {
            ModelParams::Glauber { phi, birth_majorant } => {
                if let Kernel::Tophat { height, .. } = phi {
                    if *height == f64::INFINITY && window.dim() > 3 {
                        return bad("hard core needs dimension <= 3".into());
                    }
                }
                if let Some(m) = birth_majorant {
                    if !(*m > 0.0 && m.is_finite()) {
                        return bad(format!("birth majorant {m} must be positive"));
                    }
                }
            }
            ModelParams::Contact { a, lambda } => {
                rate_kernel(a, "a")?;
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return bad(format!("lambda = {lambda} must be >= 0"));
                }
            }
            ModelParams::LinearVoter { a_plus, a_minus } => {
                rate_kernel(a_plus, "a_plus")?;
                rate_kernel(a_minus, "a_minus")?;
            }
            ModelParams::PolynomialVoter { p, q, a_p, a_q } => {
                if *p == 0 || *q == 0 {
                    return bad("p and q must be >= 1".into());
                }
                rate_kernel(a_p, "a_p")?;
                rate_kernel(a_q, "a_q")?;
            }
            ModelParams::Kawasaki { phi, a, s } => {
                rate_kernel(a, "a")?;
                if !(0.0..=1.0).contains(s) {
                    return bad(format!("s = {s} must lie in [0, 1]"));
                }
                if *s > 0.0 && phi.sup() == f64::INFINITY {
                    return bad("a hard-core potential needs s = 0".into());
                }
            }
            ModelParams::FreeHop { a } => rate_kernel(a, "a")?,
            ModelParams::PolynomialHop { p, jump, g } => {
                if *p == 0 {
                    return bad("p must be >= 1".into());
                }
                rate_kernel(jump, "jump")?;
                rate_kernel(g, "g")?;
            }
            ModelParams::AffineHop { jump, base, g } => {
                rate_kernel(jump, "jump")?;
                rate_kernel(g, "g")?;
                if !(*base >= 0.0 && base.is_finite()) {
                    return bad(format!("base = {base} must be >= 0"));
                }
            }
            ModelParams::PairHop { p, parity } => {
                rate_kernel(p, "p")?;
                if *parity == Parity::Odd && !p.is_zero() {
                    return bad("registry kernels are even; an odd p must vanish".into());
                }
            }
        }
        Ok(())
    }
}

/// `(x, y) ↦ k(x − y)` with window displacements.
fn radial(window: &Window, k: &Kernel) -> PairFn {
    let (w, k) = (window.clone(), k.clone());
    Arc::new(move |x, y| k.eval(&w.displacement(x, y)))
}

fn boltzmann(phi: f64, s: f64) -> f64 {
    if phi == f64::INFINITY {
        if s > 0.0 {
            f64::INFINITY
        } else if s < 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        (s * phi).exp()
    }
}

fn product_kernel(a: PairFn, order: usize) -> SiteKernel {
    Arc::new(move |x, eta| if eta.len() == order { eta.iter().map(|u| a(x, u)).product() } else { 0.0 })
}

fn binom(n: usize, k: usize) -> f64 {
    binomial(n, k) as f64
}

/// The generator spec of a model on `window`. Specs without an automatic
/// majorant are still returned; [`require_simulable`] rejects them.
pub fn build_spec(params: &ModelParams, window: &Window) -> Result<Dynamics> {
    params.validate(window)?;
    let range = params.range();
    let spec: Dynamics = match params {
        ModelParams::Glauber { phi, birth_majorant } => {
            let f = radial(window, phi);
            let birth = CoherentSite::new(Arc::new(|_| 1.0), Arc::new(move |x, y| boltzmann(f(x, y), -1.0) - 1.0));
            let majorant = match birth_majorant {
                Some(m) => Some(CountBoundBox::constant(*m)),
                None if phi.is_nonnegative() => Some(CountBoundBox::constant(1.0)),
                None => None,
            };
            BirthDeathSpec::from_products("glauber", birth, None, CoherentSite::unit(), Some(0))
                .with_majorants(majorant, Some(CountBoundBox::constant(1.0)))
                .with_range(range)
                .into()
        }
        ModelParams::Contact { a, lambda } => {
            let af = radial(window, a);
            let l = *lambda;
            let birth: SiteKernel = Arc::new(move |x, eta| if eta.len() == 1 { l * af(x, &eta.points()[0]) } else { 0.0 });
            let sup = l * a.sup();
            let death: SiteKernel = Arc::new(|_, eta| if eta.is_empty() { 1.0 } else { 0.0 });
            BirthDeathSpec::new("contact", birth, Some(1), death, Some(0))
                .with_death_product(CoherentSite::unit())
                .with_majorants(Some(CountBoundBox(Arc::new(move |n| sup * n as f64))), Some(CountBoundBox::constant(1.0)))
                .with_range(range)
                .into()
        }
        ModelParams::LinearVoter { a_plus, a_minus } => {
            let (sp, sm) = (a_plus.sup(), a_minus.sup());
            BirthDeathSpec::new(
                "linear_voter",
                product_kernel(radial(window, a_plus), 1),
                Some(1),
                product_kernel(radial(window, a_minus), 1),
                Some(1),
            )
            .with_majorants(
                Some(CountBoundBox(Arc::new(move |n| sp * n as f64))),
                Some(CountBoundBox(Arc::new(move |n| sm * n.saturating_sub(1) as f64))),
            )
            .with_range(range)
            .into()
        }
        ModelParams::PolynomialVoter { p, q, a_p, a_q } => {
            let (p, q) = (*p, *q);
            let (sp, sq) = (a_p.sup().powi(p as i32), a_q.sup().powi(q as i32));
            BirthDeathSpec::new(
                "polynomial_voter",
                product_kernel(radial(window, a_p), p),
                Some(p),
                product_kernel(radial(window, a_q), q),
                Some(q),
            )
            .with_majorants(
                Some(CountBoundBox(Arc::new(move |n| sp * binom(n, p)))),
                Some(CountBoundBox(Arc::new(move |n| sq * binom(n.saturating_sub(1), q)))),
            )
            .with_range(range)
            .into()
        }
        ModelParams::Kawasaki { phi, a, s } => {
            let s = *s;
            let (af, pf) = (radial(window, a), radial(window, phi));
            let pf2 = pf.clone();
            let product = CoherentHop::new(
                Arc::new(move |x, y| af(x, y) * boltzmann(pf(x, y), s - 1.0)),
                Arc::new(move |x, y, u| boltzmann(pf2(x, u), s) * boltzmann(pf2(y, u), s - 1.0) - 1.0),
            );
            let up = phi.sup().max(0.0);
            let down = (-phi.inf()).max(0.0);
            let factor = if s == 0.0 && down == 0.0 {
                CountBoundBox::constant(1.0)
            } else {
                CountBoundBox(Arc::new(move |n| {
                    let e = if s > 0.0 { s * up * n.saturating_sub(1) as f64 } else { 0.0 };
                    (e + (1.0 - s) * down * n as f64).exp()
                }))
            };
            HopSpec::from_product("kawasaki", product, None)
                .with_majorant(HopMajorant { jump: a.clone(), factor })
                .with_range(range)
                .into()
        }
        ModelParams::FreeHop { a } => HopSpec::from_product("free_hop", CoherentHop::new(radial(window, a), Arc::new(|_, _, _| 0.0)), Some(0))
            .with_majorant(HopMajorant { jump: a.clone(), factor: CountBoundBox::constant(1.0) })
            .with_range(range)
            .into(),
        ModelParams::PolynomialHop { p, jump, g } => {
            let p = *p;
            let (jf, gf) = (radial(window, jump), radial(window, g));
            let kernel = Arc::new(move |x: &Point, y: &Point, eta: &FiniteConfig| {
                if eta.len() == p {
                    jf(x, y) * eta.iter().map(|u| gf(x, u)).product::<f64>()
                } else {
                    0.0
                }
            });
            let sg = g.sup().powi(p as i32);
            HopSpec::new("polynomial_hop", kernel, Some(p))
                .with_majorant(HopMajorant { jump: jump.clone(), factor: CountBoundBox(Arc::new(move |n| sg * binom(n.saturating_sub(1), p))) })
                .with_range(range)
                .into()
        }
        ModelParams::AffineHop { jump, base, g } => {
            let b = *base;
            let (jf, gf) = (radial(window, jump), radial(window, g));
            let kernel = Arc::new(move |x: &Point, y: &Point, eta: &FiniteConfig| match eta.len() {
                0 => b * jf(x, y),
                1 => jf(x, y) * gf(x, &eta.points()[0]),
                _ => 0.0,
            });
            let sg = g.sup();
            HopSpec::new("affine_hop", kernel, Some(1))
                .with_majorant(HopMajorant { jump: jump.clone(), factor: CountBoundBox(Arc::new(move |n| b + sg * n.saturating_sub(1) as f64)) })
                .with_range(range)
                .into()
        }
        ModelParams::PairHop { p, .. } => {
            let pf = radial(window, p);
            let kernel: GroupKernel = Arc::new(move |from, to, eta| {
                if !eta.is_empty() {
                    return 0.0;
                }
                pair_rate(&pf, from.points(), to.points())
            });
            let s2 = p.sup() * p.sup();
            GroupHopSpec::new("pair_hop", 2, kernel, Some(0))?
                .with_majorant(GroupMajorant { jump: p.clone(), factor: CountBoundBox::constant(s2) })
                .with_range(2.0 * range)
                .into()
        }
    };
    Ok(spec)
}

fn pair_rate(p: &PairFn, x: &[Point], y: &[Point]) -> f64 {
    p(&x[0], &y[0]) * p(&x[0], &y[1]) * p(&x[1], &y[0]) * p(&x[1], &y[1])
}

/// Fails with `UnsupportedMajorant` unless every rate of the spec has a majorant.
pub fn require_simulable(dynamics: &Dynamics) -> Result<()> {
    let ok = match dynamics {
        Dynamics::BirthDeath(s) => s.birth_majorant.is_some(),
        Dynamics::Hop(s) => s.majorant.is_some(),
        Dynamics::Group(s) => s.majorant.is_some(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::UnsupportedMajorant(format!(
            "{}: no automatic majorant; supply one to simulate",
            dynamics.name()
        )))
    }
}

// ---------------------------------------------------------------------------
// Expanded per-model formulas
// ---------------------------------------------------------------------------

fn est(s: SectorEstimate) -> EstimateWithError {
    EstimateWithError { value: s.value, std_error: s.std_error, sectors_used: 1, truncation_bound: 0.0 }
}

fn plus(e: EstimateWithError, v: f64) -> EstimateWithError {
    EstimateWithError { value: e.value + v, ..e }
}

fn energy(w: &Window, phi: &Kernel, x: &Point, eta: &FiniteConfig) -> f64 {
    eta.iter().map(|u| phi.eval(&w.displacement(x, u))).sum()
}

/// Visit `(mask, complement)` pairs of sub-configurations of `eta` with exactly `k` points.
fn for_each_k_subset(eta: &FiniteConfig, k: usize, mut f: impl FnMut(&FiniteConfig, &FiniteConfig) -> Result<()>) -> Result<()> {
    let n = eta.len();
    if k > n {
        return Ok(());
    }
    let full = (1u64 << n) - 1;
    for_each_small_subset(n, k, |m| {
        if m.count_ones() as usize == k {
            f(&eta.subset_mask(m), &eta.subset_mask(full ^ m))?;
        }
        Ok(())
    })
}

fn for_each_subset(eta: &FiniteConfig, max_k: Option<usize>, mut f: impl FnMut(&FiniteConfig, &FiniteConfig) -> Result<()>) -> Result<()> {
    let n = eta.len();
    let full = (1u64 << n) - 1;
    for_each_small_subset(n, max_k.map_or(n, |k| k.min(n)), |m| f(&eta.subset_mask(m), &eta.subset_mask(full ^ m)))
}

fn g_at(g: &ConfigFn, a: &FiniteConfig, b: &FiniteConfig) -> Result<f64> {
    g.eval(&a.union(b)?)
}

/// `(L̂G)(η)` from the model's own expanded formula.
pub fn model_lhat_fast(params: &ModelParams, g: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let w = integ.window().clone();
    let d = |u: &Point, v: &Point| w.displacement(u, v);
    let n = eta.len();
    let g_eta = g.eval(eta)?;
    match params {
        ModelParams::Glauber { phi, .. } => {
            // −|η|G(η) + Σ_{ξ⊂η} ∫dx e^{−E(x,ξ)} G(ξ∪x) e_λ(e^{−φ(x−·)}−1, η\ξ)
            let gorder = g.support_order().map(|o| o.saturating_sub(1));
            let birth = integ.line_integral(SALT_FREE, |x, _| {
                let mut acc = CompensatedSum::new();
                for_each_subset(eta, gorder, |xi, rest| {
                    let c: f64 = rest.iter().map(|u| boltzmann(phi.eval(&d(x, u)), -1.0) - 1.0).product();
                    if c != 0.0 {
                        acc.add(boltzmann(energy(&w, phi, x, xi), -1.0) * c * g.eval(&xi.with(*x)?)?);
                    }
                    Ok(())
                })?;
                Ok(acc.value())
            })?;
            Ok(plus(est(birth), -(n as f64) * g_eta))
        }
        ModelParams::Contact { a, lambda } => {
            // −|η|G(η) + λ Σ_{y∈η} ∫dx a(x−y)(G(η∪x) + G((η\y)∪x))
            let birth = integ.line_integral(SALT_FREE, |x, _| {
                let with_x = eta.with(*x)?;
                let gx = g.eval(&with_x)?;
                let mut acc = CompensatedSum::new();
                for (i, y) in eta.iter().enumerate() {
                    acc.add(a.eval(&d(x, y)) * (gx + g.eval(&eta.without_index(i).with(*x)?)?));
                }
                Ok(lambda * acc.value())
            })?;
            Ok(plus(est(birth), -(n as f64) * g_eta))
        }
        ModelParams::LinearVoter { a_plus, a_minus } => {
            // −Σ_x Σ_{y∈η\x} a₋(x,y)(G(η\y)+G(η)) + Σ_{y∈η} ∫dx a₊(x,y)(G(η∪x)+G((η\y)∪x))
            let mut death = CompensatedSum::new();
            for (i, x) in eta.iter().enumerate() {
                for (j, y) in eta.iter().enumerate() {
                    if i != j {
                        death.add(a_minus.eval(&d(x, y)) * (g.eval(&eta.without_index(j))? + g_eta));
                    }
                }
            }
            let birth = integ.line_integral(SALT_FREE, |x, _| {
                let gx = g.eval(&eta.with(*x)?)?;
                let mut acc = CompensatedSum::new();
                for (i, y) in eta.iter().enumerate() {
                    acc.add(a_plus.eval(&d(x, y)) * (gx + g.eval(&eta.without_index(i).with(*x)?)?));
                }
                Ok(acc.value())
            })?;
            Ok(plus(est(birth), -death.value()))
        }
        ModelParams::PolynomialVoter { p, q, a_p, a_q } => {
            // −Σ_x Σ_{ξ⊂η\x,|ξ|=q} ã_x(ξ) Σ_{ζ⊂ξ} G(ζ∪((η\x)\ξ)∪x)
            // + Σ_{ξ⊂η,|ξ|=p} Σ_{ζ⊂ξ} ∫dx ã_x(ξ) G(ζ∪(η\ξ)∪x)
            let mut death = CompensatedSum::new();
            for (i, x) in eta.iter().enumerate() {
                let rest = eta.without_index(i);
                for_each_k_subset(&rest, *q, |xi, others| {
                    let w8: f64 = xi.iter().map(|u| a_q.eval(&d(x, u))).product();
                    if w8 != 0.0 {
                        let base = others.with(*x)?;
                        for_each_subset(xi, None, |zeta, _| {
                            death.add(w8 * g_at(g, zeta, &base)?);
                            Ok(())
                        })?;
                    }
                    Ok(())
                })?;
            }
            let birth = integ.line_integral(SALT_FREE, |x, _| {
                let mut acc = CompensatedSum::new();
                for_each_k_subset(eta, *p, |xi, others| {
                    let w8: f64 = xi.iter().map(|u| a_p.eval(&d(x, u))).product();
                    if w8 != 0.0 {
                        let base = others.with(*x)?;
                        for_each_subset(xi, None, |zeta, _| {
                            acc.add(w8 * g_at(g, zeta, &base)?);
                            Ok(())
                        })?;
                    }
                    Ok(())
                })?;
                Ok(acc.value())
            })?;
            Ok(plus(est(birth), -death.value()))
        }
        ModelParams::Kawasaki { phi, a, s } => {
            // Σ_x Σ_{ξ⊂η\x} e^{sE(x,ξ)} ∫dy a(x−y) e^{(s−1)E(y,ξ∪x)}
            //   · e_λ(e^{sφ(x−·)−(1−s)φ(y−·)}−1, (η\x)\ξ) (G(ξ∪y) − G(ξ∪x))
            let s = *s;
            let gorder = g.support_order().map(|o| o.saturating_sub(1));
            let v = integ.line_integral(SALT_FREE, |y, _| {
                let mut acc = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    let ax = a.eval(&d(x, y));
                    if ax == 0.0 {
                        continue;
                    }
                    let rest = eta.without_index(i);
                    for_each_subset(&rest, gorder, |xi, others| {
                        let c: f64 = others
                            .iter()
                            .map(|u| boltzmann(phi.eval(&d(x, u)), s) * boltzmann(phi.eval(&d(y, u)), s - 1.0) - 1.0)
                            .product();
                        if c == 0.0 {
                            return Ok(());
                        }
                        let e = boltzmann(energy(&w, phi, x, xi), s)
                            * boltzmann(energy(&w, phi, y, xi) + phi.eval(&d(y, x)), s - 1.0);
                        acc.add(ax * e * c * (g.eval(&xi.with(*y)?)? - g.eval(&xi.with(*x)?)?));
                        Ok(())
                    })?;
                }
                Ok(acc.value())
            })?;
            Ok(est(v))
        }
        ModelParams::FreeHop { a } => {
            // Σ_x ∫dy a(x−y)(G((η\x)∪y) − G(η))
            let v = integ.line_integral(SALT_FREE, |y, _| {
                let mut acc = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    acc.add(a.eval(&d(x, y)) * (g.eval(&eta.without_index(i).with(*y)?)? - g_eta));
                }
                Ok(acc.value())
            })?;
            Ok(est(v))
        }
        ModelParams::PolynomialHop { p, jump, g: gk } => {
            // Σ_x Σ_{ξ⊂η\x,|ξ|=p} Σ_{ζ⊂ξ} ∫dy c̃_{x,y}(ξ)[G(ζ∪((η\x)\ξ)∪y) − G(ζ∪((η\x)\ξ)∪x)]
            let v = integ.line_integral(SALT_FREE, |y, _| {
                let mut acc = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    let j = jump.eval(&d(y, x));
                    if j == 0.0 {
                        continue;
                    }
                    let rest = eta.without_index(i);
                    for_each_k_subset(&rest, *p, |xi, others| {
                        let c = j * xi.iter().map(|u| gk.eval(&d(x, u))).product::<f64>();
                        if c == 0.0 {
                            return Ok(());
                        }
                        let (by, bx) = (others.with(*y)?, others.with(*x)?);
                        for_each_subset(xi, None, |zeta, _| {
                            acc.add(c * (g_at(g, zeta, &by)? - g_at(g, zeta, &bx)?));
                            Ok(())
                        })
                    })?;
                }
                Ok(acc.value())
            })?;
            Ok(est(v))
        }
        ModelParams::AffineHop { jump, base, g: gk } => {
            // Σ_x ∫dy b(x,y)(G((η\x)∪y) − G(η))
            // + Σ_x Σ_{x₁∈η\x} ∫dy c₁(x₁)(G((η\{x,x₁})∪y) − G(η\x₁))
            // + Σ_x ∫dy (G((η\x)∪y) − G(η)) Σ_{x₁∈η\x} c₁(x₁)
            let v = integ.line_integral(SALT_FREE, |y, _| {
                let mut acc = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    let j = jump.eval(&d(y, x));
                    if j == 0.0 {
                        continue;
                    }
                    let rest = eta.without_index(i);
                    let moved = g.eval(&rest.with(*y)?)? - g_eta;
                    acc.add(j * base * moved);
                    for (l, x1) in rest.iter().enumerate() {
                        let c1 = j * gk.eval(&d(x, x1));
                        let without_x1 = eta.without(x1);
                        acc.add(c1 * (g.eval(&rest.without_index(l).with(*y)?)? - g.eval(&without_x1)?));
                        acc.add(c1 * moved);
                    }
                }
                Ok(acc.value())
            })?;
            Ok(est(v))
        }
        ModelParams::PairHop { p, .. } => {
            // Σ_{{x,y}⊂η} ∫∫ c [G(η∪{x',y'}\{x,y}) − G(η)] + 2 Σ ∫dx' G(η∪x'\{x,y}) ∫dy' c
            // − Σ (G(η\x) + G(η\y)) ∫∫ c
            if n < 2 {
                return Ok(EstimateWithError::exact(0.0));
            }
            let pf = radial(&w, p);
            let v = integ.sector(2, 0, SALT_FREE, |ys, _| {
                let mut acc = CompensatedSum::new();
                for i in 0..n {
                    for j in i + 1..n {
                        let (x, y) = (eta.points()[i], eta.points()[j]);
                        let c = pair_rate(&pf, &[x, y], ys);
                        if c == 0.0 {
                            continue;
                        }
                        let rest = eta.without_index(j).without_index(i);
                        let to = FiniteConfig::new(ys.to_vec())?;
                        acc.add(c * (g.eval(&rest.union(&to)?)? - g_eta));
                        acc.add(2.0 * c * g.eval(&rest.with(ys[0])?)?);
                        acc.add(-c * (g.eval(&eta.without_index(i))? + g.eval(&eta.without_index(j))?));
                    }
                }
                Ok(acc.value())
            })?;
            Ok(est(v))
        }
    }
}

/// `∫ f(u, ζ) dλ(ζ)` over `|ζ| ≤ order` with one free Lebesgue variable `u`,
/// drawing the same samples as the generic path.
fn free_and_zeta<F>(integ: &LPIntegrator, order: Option<usize>, f: F) -> Result<EstimateWithError>
where
    F: Fn(&Point, &FiniteConfig) -> Result<f64> + Sync,
{
    integ.integrate_with_free(1, order, SALT_INNER, |u, zeta, _| f(&u[0], zeta))
}

fn zeta_only<F>(integ: &LPIntegrator, order: Option<usize>, f: F) -> Result<EstimateWithError>
where
    F: Fn(&FiniteConfig) -> Result<f64> + Sync,
{
    integ.integrate(order, SALT_INNER, |zeta, _| f(zeta))
}

/// `(L̂*k)(η)` from the model's own expanded formula.
pub fn model_lhat_star_fast(params: &ModelParams, k: &ConfigFn, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let w = integ.window().clone();
    let d = |u: &Point, v: &Point| w.displacement(u, v);
    let n = eta.len();
    if n == 0 {
        return Ok(EstimateWithError::exact(0.0));
    }
    let z = integ.z();
    let k_eta = k.eval(eta)?;
    match params {
        ModelParams::Glauber { phi, .. } => {
            // −|η|k(η) + Σ_x e^{−E(x,η\x)} ∫dλ(ζ) e_λ(e^{−φ(x−·)}−1, ζ) k((η\x)∪ζ)
            let pre: Vec<f64> = eta
                .iter()
                .enumerate()
                .map(|(i, x)| boltzmann(energy(&w, phi, x, &eta.without_index(i)), -1.0))
                .collect();
            let v = zeta_only(integ, None, |zeta| {
                let mut acc = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    let c: f64 = zeta.iter().map(|u| boltzmann(phi.eval(&d(x, u)), -1.0) - 1.0).product();
                    if c != 0.0 && pre[i] != 0.0 {
                        acc.add(pre[i] * c * k.eval(&eta.without_index(i).union(zeta)?)?);
                    }
                }
                let death = if zeta.is_empty() { -(n as f64) * k_eta } else { 0.0 };
                Ok(acc.value() + death)
            })?;
            Ok(v)
        }
        ModelParams::Contact { a, lambda } => {
            // −|η|k(η) + λ z∫dy Σ_x k((η\x)∪y) a(x−y) + λ Σ_x k(η\x) Σ_{y∈η\x} a(x−y)
            let mut local = CompensatedSum::new();
            for (i, x) in eta.iter().enumerate() {
                let rest = eta.without_index(i);
                let s: f64 = rest.iter().map(|y| a.eval(&d(x, y))).sum();
                if s != 0.0 {
                    local.add(k.eval(&rest)? * s);
                }
            }
            let v = integ.sector(0, 1, SALT_INNER, |ys, _| {
                let y = ys[0];
                let mut acc = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    let ax = a.eval(&d(x, &y));
                    if ax != 0.0 {
                        acc.add(ax * k.eval(&eta.without_index(i).with(y)?)?);
                    }
                }
                Ok(acc.value())
            })?;
            Ok(plus(est(SectorEstimate { value: lambda * z * v.value, std_error: lambda * z * v.std_error }), lambda * local.value() - n as f64 * k_eta))
        }
        ModelParams::LinearVoter { a_plus, a_minus } => {
            // −z∫dy k(η∪y) Σ_x a₋(x,y) − k(η) Σ_x Σ_{y∈η\x} a₋(x,y)
            // + z∫dy Σ_x k((η\x)∪y) a₊(x,y) + Σ_x k(η\x) Σ_{y∈η\x} a₊(x,y)
            let mut local = CompensatedSum::new();
            for (i, x) in eta.iter().enumerate() {
                let rest = eta.without_index(i);
                let sm: f64 = rest.iter().map(|y| a_minus.eval(&d(x, y))).sum();
                let sp: f64 = rest.iter().map(|y| a_plus.eval(&d(x, y))).sum();
                local.add(-k_eta * sm);
                if sp != 0.0 {
                    local.add(k.eval(&rest)? * sp);
                }
            }
            let v = integ.sector(0, 1, SALT_INNER, |ys, _| {
                let y = ys[0];
                let mut acc = CompensatedSum::new();
                let sm: f64 = eta.iter().map(|x| a_minus.eval(&d(x, &y))).sum();
                if sm != 0.0 {
                    acc.add(-k.eval(&eta.with(y)?)? * sm);
                }
                for (i, x) in eta.iter().enumerate() {
                    let ap = a_plus.eval(&d(x, &y));
                    if ap != 0.0 {
                        acc.add(ap * k.eval(&eta.without_index(i).with(y)?)?);
                    }
                }
                Ok(acc.value())
            })?;
            Ok(plus(est(SectorEstimate { value: z * v.value, std_error: z * v.std_error }), local.value()))
        }
        ModelParams::PolynomialVoter { p, q, a_p, a_q } => {
            // −Σ_{i≤q} zⁱ/i! ∫dm⁽ⁱ⁾(ζ) k(ζ∪η) Σ_x Σ_{ξ⊂η\x,|ξ|=q−i} ã⁽q⁾_x(ζ∪ξ)
            // + Σ_{i≤p} zⁱ/i! ∫dm⁽ⁱ⁾(ζ) Σ_x k(ζ∪(η\x)) Σ_{ξ⊂η\x,|ξ|=p−i} ã⁽p⁾_x(ζ∪ξ)
            let (p, q) = (*p, *q);
            let top = p.max(q);
            let weight = |x: &Point, a: &Kernel, zeta: &FiniteConfig, xi: &FiniteConfig| -> f64 {
                zeta.iter().chain(xi.iter()).map(|u| a.eval(&d(x, u))).product()
            };
            integ.sum_sectors(Some(top), |i| {
                integ.sector(0, i, SALT_INNER, |pts, _| {
                    let zeta = FiniteConfig::new(pts.to_vec())?;
                    let mut acc = CompensatedSum::new();
                    for (j, x) in eta.iter().enumerate() {
                        let rest = eta.without_index(j);
                        if i <= q {
                            let mut s = 0.0;
                            for_each_k_subset(&rest, q - i, |xi, _| {
                                s += weight(x, a_q, &zeta, xi);
                                Ok(())
                            })?;
                            if s != 0.0 {
                                acc.add(-k.eval(&zeta.union(eta)?)? * s);
                            }
                        }
                        if i <= p {
                            let mut s = 0.0;
                            for_each_k_subset(&rest, p - i, |xi, _| {
                                s += weight(x, a_p, &zeta, xi);
                                Ok(())
                            })?;
                            if s != 0.0 {
                                acc.add(k.eval(&zeta.union(&rest)?)? * s);
                            }
                        }
                    }
                    Ok(acc.value())
                })
            })
        }
        ModelParams::Kawasaki { phi, a, s } => {
            // Σ_{y∈η} ∫dx a(x−y) e^{sE(x,η\y)−(1−s)E(y,(η\y)∪x)} ∫dλ(ξ) k(ξ∪(η\y)∪x) e_λ(c_{x,y}, ξ)
            // − ∫dλ(ξ) k(ξ∪η) Σ_x ∫dy a(x−y) e^{sE(x,η\x)−(1−s)E(y,η)} e_λ(c_{x,y}, ξ)
            let s = *s;
            let c = |x: &Point, y: &Point, xi: &FiniteConfig| -> f64 {
                xi.iter()
                    .map(|u| boltzmann(phi.eval(&d(x, u)), s) * boltzmann(phi.eval(&d(y, u)), s - 1.0) - 1.0)
                    .product()
            };
            free_and_zeta(integ, None, |u, xi| {
                let mut acc = CompensatedSum::new();
                for (i, y) in eta.iter().enumerate() {
                    let ax = a.eval(&d(u, y));
                    if ax == 0.0 {
                        continue;
                    }
                    let rest = eta.without_index(i);
                    let e = boltzmann(energy(&w, phi, u, &rest), s) * boltzmann(energy(&w, phi, y, &rest) + phi.eval(&d(y, u)), s - 1.0);
                    let cv = c(u, y, xi);
                    if cv != 0.0 && e != 0.0 {
                        acc.add(ax * e * cv * k.eval(&xi.union(&rest)?.with(*u)?)?);
                    }
                }
                let mut loss = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    let ax = a.eval(&d(x, u));
                    if ax == 0.0 {
                        continue;
                    }
                    let e = boltzmann(energy(&w, phi, x, &eta.without_index(i)), s) * boltzmann(energy(&w, phi, u, eta), s - 1.0);
                    loss.add(ax * e * c(x, u, xi));
                }
                let l = loss.value();
                if l != 0.0 {
                    acc.add(-k.eval(&xi.union(eta)?)? * l);
                }
                Ok(acc.value())
            })
        }
        ModelParams::FreeHop { a } => {
            // Σ_{y∈η} ∫dx a(x−y) k((η\y)∪x) − k(η) Σ_x ∫dy a(x−y)
            free_and_zeta(integ, Some(0), |u, _| {
                let mut acc = CompensatedSum::new();
                for (i, y) in eta.iter().enumerate() {
                    let ax = a.eval(&d(u, y));
                    if ax != 0.0 {
                        acc.add(ax * k.eval(&eta.without_index(i).with(*u)?)?);
                    }
                    acc.add(-k_eta * a.eval(&d(y, u)));
                }
                Ok(acc.value())
            })
        }
        ModelParams::PolynomialHop { p, jump, g } => {
            // Σ_{y∈η} Σ_{i≤p} zⁱ/i! ∫dm⁽ⁱ⁾(ξ) ∫dx k(ξ∪(η\y)∪x) Σ_{ζ⊂η\y,|ζ|=p−i} c̃_{x,y}(ξ∪ζ)
            // − Σ_{i≤p} zⁱ/i! ∫dm⁽ⁱ⁾(ξ) k(ξ∪η) Σ_x Σ_{ζ⊂η\x,|ζ|=p−i} ∫dy c̃_{x,y}(ξ∪ζ)
            let p = *p;
            let ct = |x: &Point, y: &Point, xi: &FiniteConfig, zeta: &FiniteConfig| -> f64 {
                jump.eval(&d(y, x)) * xi.iter().chain(zeta.iter()).map(|u| g.eval(&d(x, u))).product::<f64>()
            };
            free_and_zeta(integ, Some(p), |u, xi| {
                let i = xi.len();
                let mut acc = CompensatedSum::new();
                let mut loss = 0.0;
                for (j, v) in eta.iter().enumerate() {
                    let rest = eta.without_index(j);
                    let mut gain = 0.0;
                    for_each_k_subset(&rest, p - i, |zeta, _| {
                        gain += ct(u, v, xi, zeta);
                        loss += ct(v, u, xi, zeta);
                        Ok(())
                    })?;
                    if gain != 0.0 {
                        acc.add(gain * k.eval(&xi.union(&rest)?.with(*u)?)?);
                    }
                }
                if loss != 0.0 {
                    acc.add(-loss * k.eval(&xi.union(eta)?)?);
                }
                Ok(acc.value())
            })
        }
        ModelParams::AffineHop { jump, base, g } => {
            // Σ_{y∈η} ∫dx₁∫dx k(x₁∪(η\y)∪x) c₁_{x,y}(x₁) − ∫dx₁ k(η∪x₁) Σ_x ∫dy c₁_{x,y}(x₁)
            // + Σ_{y∈η} ∫dx k((η\y)∪x)(b(x,y) + Σ_{x₁∈η\y} c₁_{x,y}(x₁))
            // − k(η) Σ_x ∫dy (b(x,y) + Σ_{x₁∈η\x} c₁_{x,y}(x₁))
            free_and_zeta(integ, Some(1), |u, xi| {
                let mut acc = CompensatedSum::new();
                match xi.points() {
                    [] => {
                        for (i, y) in eta.iter().enumerate() {
                            let rest = eta.without_index(i);
                            let jg = jump.eval(&d(y, u));
                            let gain = jg * (base + rest.iter().map(|x1| g.eval(&d(u, x1))).sum::<f64>());
                            if gain != 0.0 {
                                acc.add(gain * k.eval(&rest.with(*u)?)?);
                            }
                            let jl = jump.eval(&d(u, y));
                            acc.add(-k_eta * jl * (base + rest.iter().map(|x1| g.eval(&d(y, x1))).sum::<f64>()));
                        }
                    }
                    [x1] => {
                        for (i, y) in eta.iter().enumerate() {
                            let rest = eta.without_index(i);
                            let gain = jump.eval(&d(y, u)) * g.eval(&d(u, x1));
                            if gain != 0.0 {
                                acc.add(gain * k.eval(&rest.with(*u)?.with(*x1)?)?);
                            }
                            let loss = jump.eval(&d(u, y)) * g.eval(&d(y, x1));
                            if loss != 0.0 {
                                acc.add(-loss * k.eval(&eta.with(*x1)?)?);
                            }
                        }
                    }
                    _ => {}
                }
                Ok(acc.value())
            })
        }
        ModelParams::PairHop { p, .. } => {
            // Σ_{{x,y}⊂η} ∫∫ c(x,y,x',y')[k(η∪{x',y'}\{x,y}) − k(η)]
            // + Σ_{x∈η} ∫dx'∫dy'∫dy c(x,y,x',y')[k(η∪{x',y'}\x) − k(η∪y)]
            let pf = radial(&w, p);
            let pairs = integ.sector(2, 0, SALT_INNER, |ys, _| {
                let mut acc = CompensatedSum::new();
                let to = FiniteConfig::new(ys.to_vec())?;
                for i in 0..n {
                    for j in i + 1..n {
                        let (x, y) = (eta.points()[i], eta.points()[j]);
                        let c = pair_rate(&pf, &[x, y], ys);
                        if c != 0.0 {
                            let rest = eta.without_index(j).without_index(i);
                            acc.add(c * (k.eval(&rest.union(&to)?)? - k_eta));
                        }
                    }
                }
                Ok(acc.value())
            })?;
            let singles = integ.sector(3, 0, SALT_INNER + 16, |pts, _| {
                let (ys, y) = (&pts[..2], pts[2]);
                let to = FiniteConfig::new(ys.to_vec())?;
                let mut acc = CompensatedSum::new();
                for (i, x) in eta.iter().enumerate() {
                    let c = pair_rate(&pf, &[*x, y], ys);
                    if c != 0.0 {
                        acc.add(c * (k.eval(&eta.without_index(i).union(&to)?)? - k.eval(&eta.with(y)?)?));
                    }
                }
                Ok(acc.value())
            })?;
            Ok(est(pairs).combine(1.0, &est(singles), z))
        }
    }
}

/// One instance of every model with moderate Gaussian kernels, for suites
/// that sweep the whole family.
pub fn catalogue() -> Vec<ModelParams> {
    vec![
        ModelParams::Glauber { phi: Kernel::Gaussian { amplitude: 0.8, sigma: 0.3 }, birth_majorant: None },
        ModelParams::Glauber { phi: Kernel::Gaussian { amplitude: -0.4, sigma: 0.3 }, birth_majorant: Some(12.0) },
        ModelParams::Contact { a: Kernel::Gaussian { amplitude: 1.0, sigma: 0.3 }, lambda: 1.3 },
        ModelParams::LinearVoter { a_plus: Kernel::Gaussian { amplitude: 0.9, sigma: 0.3 }, a_minus: Kernel::Gaussian { amplitude: 0.6, sigma: 0.4 } },
        ModelParams::PolynomialVoter { p: 2, q: 1, a_p: Kernel::Gaussian { amplitude: 0.7, sigma: 0.35 }, a_q: Kernel::Gaussian { amplitude: 0.5, sigma: 0.3 } },
        ModelParams::Kawasaki { phi: Kernel::Gaussian { amplitude: 0.6, sigma: 0.3 }, a: Kernel::Gaussian { amplitude: 1.0, sigma: 0.35 }, s: 0.0 },
        ModelParams::Kawasaki { phi: Kernel::Gaussian { amplitude: 0.6, sigma: 0.3 }, a: Kernel::Gaussian { amplitude: 1.0, sigma: 0.35 }, s: 0.4 },
        ModelParams::FreeHop { a: Kernel::Gaussian { amplitude: 1.0, sigma: 0.3 } },
        ModelParams::PolynomialHop { p: 1, jump: Kernel::Gaussian { amplitude: 1.0, sigma: 0.3 }, g: Kernel::Gaussian { amplitude: 0.8, sigma: 0.4 } },
        ModelParams::PolynomialHop { p: 2, jump: Kernel::Gaussian { amplitude: 1.0, sigma: 0.3 }, g: Kernel::Gaussian { amplitude: 0.8, sigma: 0.4 } },
        ModelParams::AffineHop { jump: Kernel::Gaussian { amplitude: 1.0, sigma: 0.3 }, base: 0.7, g: Kernel::Gaussian { amplitude: 0.8, sigma: 0.4 } },
        ModelParams::PairHop { p: Kernel::Gaussian { amplitude: 1.0, sigma: 0.5 }, parity: Parity::Even },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{random_config, random_correlation, random_smooth_observable};
    use crate::generators::EvalPath;
    use crate::rng::stream_rng;

    fn window() -> Window {
        Window::periodic(&[0.0], &[2.0]).unwrap()
    }

    fn gauss(amplitude: f64, sigma: f64) -> Kernel {
        Kernel::Gaussian { amplitude, sigma }
    }


    #[test]
    fn fast_formulas_match_generic() {
        let w = window();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 3, 24).unwrap();
        let mut rng = stream_rng(71, 0);
        for params in catalogue() {
            let spec = build_spec(&params, &w).unwrap();
            for trial in 0..4 {
                let eta = random_config(&mut rng, &w, trial);
                let g = random_smooth_observable(&mut rng, &w, 3, 1.0);
                let k = random_correlation(&mut rng, &w, 3, 0.3);
                let fast = model_lhat_fast(&params, &g, &eta, &integ).unwrap();
                let slow = spec.apply_lhat(&g, &eta, &integ, EvalPath::Generic).unwrap();
                let scale = 1.0 + slow.value.abs();
                assert!((fast.value - slow.value).abs() < 1e-9 * scale, "{} L̂ |η|={trial}: {} vs {}", params.model_id(), fast.value, slow.value);
                let fast = model_lhat_star_fast(&params, &k, &eta, &integ).unwrap();
                let slow = spec.apply_lhat_star(&k, &eta, &integ, EvalPath::Generic).unwrap();
                let scale = 1.0 + slow.value.abs();
                assert!((fast.value - slow.value).abs() < 1e-9 * scale, "{} L̂* |η|={trial}: {} vs {}", params.model_id(), fast.value, slow.value);
            }
        }
    }

    #[test]
    fn majorants_and_validation() {
        let w = window();
        let attractive = ModelParams::Glauber { phi: gauss(-0.4, 0.3), birth_majorant: None };
        let spec = build_spec(&attractive, &w).unwrap();
        assert!(matches!(require_simulable(&spec), Err(Error::UnsupportedMajorant(_))));
        let mut rng = stream_rng(5, 0);
        for params in catalogue() {
            let spec = build_spec(&params, &w).unwrap();
            require_simulable(&spec).unwrap();
            match &spec {
                Dynamics::BirthDeath(s) => s.check(&w, 200, 6, &mut rng).unwrap(),
                Dynamics::Hop(s) => s.check(&w, 200, 6, &mut rng).unwrap(),
                Dynamics::Group(_) => {}
            }
        }
        let bad = ModelParams::Contact { a: gauss(-1.0, 0.3), lambda: 1.0 };
        assert!(matches!(build_spec(&bad, &w), Err(Error::InvalidInput(_))));
        let bad = ModelParams::Kawasaki { phi: Kernel::Tophat { height: f64::INFINITY, radius: 0.1 }, a: gauss(1.0, 0.3), s: 0.5 };
        assert!(build_spec(&bad, &w).is_err());
    }

    #[test]
    fn params_round_trip_through_toml() {
        let text = r#"
type = "contact"
lambda = 1.2
a = { kind = "tophat", height = 0.5, radius = 1.0 }
"#;
        let p: ModelParams = toml::from_str(text).unwrap();
        assert_eq!(p, ModelParams::Contact { a: Kernel::Tophat { height: 0.5, radius: 1.0 }, lambda: 1.2 });
        for p in catalogue() {
            let s = serde_json::to_string(&p).unwrap();
            assert_eq!(serde_json::from_str::<ModelParams>(&s).unwrap(), p);
        }
    }
}

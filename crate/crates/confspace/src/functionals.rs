//! Bogoliubov functionals `B(θ) = ∫ e_λ(θ,η) k(η) dλ(η)`, their variational
//! derivatives, and the evolution operator `L̃` acting on them.
//!
//! All `L̃` evaluations truncate at the point where the argument of `k` would
//! exceed the integrator's order cap, so generic and closed forms share the
//! same truncation.

use std::sync::Arc;

use rand::Rng;

use crate::configuration::{coherent_state, FiniteConfig, Point, PointFn, Window};
use crate::error::{Error, Result};
use crate::families::random_config;
use crate::generators::{BirthDeathSpec, Dynamics, GroupHopSpec, HopSpec, SALT_INNER, SALT_OUTER};
use crate::harmonic::{ConfigFn, Structure};
use crate::lp::{EstimateWithError, LPIntegrator};
use crate::models::ModelParams;
use crate::numeric::factorial;

/// A real test function `θ`, zero outside its support window.
#[derive(Clone)]
pub struct TestFunction {
    theta: PointFn,
    support_window: Window,
    sup_norm_bound: f64,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("support_window", &self.support_window)
            .field("sup_norm_bound", &self.sup_norm_bound)
            .finish()
    }
}

impl TestFunction {
    pub fn new(theta: PointFn, support_window: Window, sup_norm_bound: f64) -> Result<Self> {
        if !(sup_norm_bound >= 0.0 && sup_norm_bound.is_finite()) {
            return Err(Error::InvalidInput(format!("sup norm bound {sup_norm_bound}")));
        }
        Ok(TestFunction { theta, support_window, sup_norm_bound })
    }

    pub fn zero(window: &Window) -> Self {
        TestFunction { theta: Arc::new(|_| 0.0), support_window: window.clone(), sup_norm_bound: 0.0 }
    }

    pub fn constant(c: f64, window: &Window) -> Self {
        TestFunction { theta: Arc::new(move |_| c), support_window: window.clone(), sup_norm_bound: c.abs() }
    }

    /// Smooth bump of unit mass whose second moment vanishes:
    /// `2g_w − g_{√2w}` with `g_s` the normalized Gaussian of width `s`.
    pub fn bump(window: &Window, center: Point, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidInput(format!("bump width {width}")));
        }
        let d = window.dim() as i32;
        let w = window.clone();
        let norm = |s: f64| (2.0 * std::f64::consts::PI * s * s).powf(-(d as f64) / 2.0);
        let (n1, n2) = (norm(width), norm(width * 2f64.sqrt()));
        let theta: PointFn = Arc::new(move |x| {
            let r2 = w.distance(x, &center).powi(2);
            2.0 * n1 * (-r2 / (2.0 * width * width)).exp() - n2 * (-r2 / (4.0 * width * width)).exp()
        });
        TestFunction::new(theta, window.clone(), 2.0 * n1)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        if self.support_window.contains(x) {
            (self.theta)(x)
        } else {
            0.0
        }
    }

    pub fn support_window(&self) -> &Window {
        &self.support_window
    }

    pub fn sup_norm_bound(&self) -> f64 {
        self.sup_norm_bound
    }

    /// `self + a·other`, on the support window of `self`.
    pub fn plus_scaled(&self, a: f64, other: &TestFunction) -> TestFunction {
        let (f, g) = (self.clone(), other.clone());
        TestFunction {
            theta: Arc::new(move |x| f.eval(x) + a * g.eval(x)),
            support_window: self.support_window.clone(),
            sup_norm_bound: self.sup_norm_bound + a.abs() * other.sup_norm_bound,
        }
    }

    /// Spot-check `|θ| ≤ sup_norm_bound` at random points of the support.
    pub fn check<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<()> {
        for _ in 0..samples {
            let x = self.support_window.sample_uniform(rng);
            let v = self.eval(&x);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(format!("theta({x:?}) = {v}")));
            }
            if v.abs() > self.sup_norm_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidInput(format!("|theta({x:?})| = {} exceeds {}", v.abs(), self.sup_norm_bound)));
            }
        }
        Ok(())
    }
}

/// Spot-check `|k(η)| ≤ C^{|η|}` on random configurations of up to `max_count` points.
pub fn check_ruelle_bound<R: Rng + ?Sized>(k: &ConfigFn, c: f64, window: &Window, samples: usize, max_count: usize, rng: &mut R) -> Result<bool> {
    for _ in 0..samples {
        let n = rng.random_range(0..=max_count);
        let eta = random_config(rng, window, n);
        if k.eval(&eta)?.abs() > c.powi(n as i32) * (1.0 + 1e-12) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `B(θ)`.
pub fn bogoliubov(k: &ConfigFn, theta: &TestFunction, integ: &LPIntegrator) -> Result<EstimateWithError> {
    derivative_with(k, &|x| theta.eval(x), &FiniteConfig::empty(), integ)
}

/// `(D^{|η|}B)(θ; η) = ∫ k(η∪ξ) e_λ(θ,ξ) dλ(ξ)`.
pub fn variational_derivative(k: &ConfigFn, theta: &TestFunction, eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    derivative_with(k, &|x| theta.eval(x), eta, integ)
}

/// `∫ k(η∪ξ) e_λ(ψ,ξ) dλ(ξ)` for an arbitrary weight `ψ`, keeping `|η∪ξ|`
/// within the order cap. Shifted arguments enter only through `ψ`.
fn derivative_with(k: &ConfigFn, psi: &(dyn Fn(&Point) -> f64 + Sync), eta: &FiniteConfig, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let cap = integ.order_cap();
    if eta.len() > cap || k.support_order().is_some_and(|o| eta.len() > o) {
        return Ok(EstimateWithError::exact(0.0));
    }
    let inner = integ.with_order_cap(cap - eta.len());
    if let (Structure::Coherent { amplitude, f }, None) = (k.structure(), k.window()) {
        let pre = amplitude * coherent_state(&**f, eta)?;
        return inner.coherent_integral(pre, |x| psi(x) * f(x));
    }
    let rest = k.support_order().map(|o| o - eta.len());
    inner.integrate(rest, SALT_INNER, |xi, _| {
        let w: f64 = xi.iter().map(psi).product();
        if w == 0.0 {
            return Ok(0.0);
        }
        Ok(w * k.eval(&eta.union(xi)?)?)
    })
}

fn shifted_one(theta: &TestFunction) -> impl Fn(&FiniteConfig) -> f64 + '_ {
    move |eta| eta.iter().map(|u| theta.eval(u) + 1.0).product()
}

/// `(L̃B)(θ)` for birth and death.
pub fn apply_ltilde_bd(spec: &BirthDeathSpec, k: &ConfigFn, theta: &TestFunction, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let e1 = shifted_one(theta);
    let th = |x: &Point| theta.eval(x);
    integ.integrate_with_free(1, spec.kernel_order(), SALT_OUTER, |free, eta, key| {
        let x = free[0];
        let tx = theta.eval(&x);
        if tx == 0.0 {
            return Ok(0.0);
        }
        let w = e1(eta);
        if w == 0.0 {
            return Ok(0.0);
        }
        let child = integ.child(key);
        let mut v = 0.0;
        let death = spec.death_kernel(&x, eta);
        if death != 0.0 {
            v -= death * derivative_with(k, &th, &eta.with(x)?, &child)?.value;
        }
        let birth = spec.birth_kernel(&x, eta);
        if birth != 0.0 {
            v += birth * derivative_with(k, &th, eta, &child)?.value;
        }
        Ok(tx * w * v)
    })
}

/// `(L̃B)(θ)` for single-particle hops.
pub fn apply_ltilde_hop(spec: &HopSpec, k: &ConfigFn, theta: &TestFunction, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let e1 = shifted_one(theta);
    let th = |x: &Point| theta.eval(x);
    integ.integrate_with_free(2, spec.order, SALT_OUTER, |free, eta, key| {
        let (x, y) = (free[0], free[1]);
        let diff = theta.eval(&y) - theta.eval(&x);
        if diff == 0.0 {
            return Ok(0.0);
        }
        let c = spec.kernel_at(&x, &y, eta);
        if c == 0.0 {
            return Ok(0.0);
        }
        let w = e1(eta);
        Ok(w * diff * c * derivative_with(k, &th, &eta.with(x)?, &integ.child(key))?.value)
    })
}

/// `(L̃B)(θ)` for group hops of `n` particles.
pub fn apply_ltilde_group(spec: &GroupHopSpec, k: &ConfigFn, theta: &TestFunction, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let n = spec.n;
    let e1 = shifted_one(theta);
    let th = |x: &Point| theta.eval(x);
    let est = integ.integrate_with_free(2 * n, spec.order, SALT_OUTER, |free, eta, key| {
        let from = FiniteConfig::new(free[..n].to_vec())?;
        let to = FiniteConfig::new(free[n..].to_vec())?;
        let diff = e1(&to) - e1(&from);
        if diff == 0.0 {
            return Ok(0.0);
        }
        let c = spec.kernel_at(&from, &to, eta)?;
        if c == 0.0 {
            return Ok(0.0);
        }
        Ok(e1(eta) * diff * c * derivative_with(k, &th, &eta.union(&from)?, &integ.child(key))?.value)
    })?;
    Ok(est.combine(1.0 / factorial(n), &EstimateWithError::exact(0.0), 0.0))
}

pub fn apply_ltilde(dynamics: &Dynamics, k: &ConfigFn, theta: &TestFunction, integ: &LPIntegrator) -> Result<EstimateWithError> {
    match dynamics {
        Dynamics::BirthDeath(s) => apply_ltilde_bd(s, k, theta, integ),
        Dynamics::Hop(s) => apply_ltilde_hop(s, k, theta, integ),
        Dynamics::Group(s) => apply_ltilde_group(s, k, theta, integ),
    }
}

fn kernel_value(w: &Window, a: &crate::kernels::Kernel, x: &Point, y: &Point) -> f64 {
    a.eval(&w.displacement(x, y))
}

/// `k(η∪ξ)`, zero once the union exceeds the order cap.
fn k_capped(k: &ConfigFn, cap: usize, eta: &FiniteConfig, xi: &FiniteConfig) -> Result<f64> {
    if eta.len() + xi.len() > cap {
        return Ok(0.0);
    }
    k.eval(&eta.union(xi)?)
}

/// `(L̃B)(θ)` from a model's closed formula, with derivatives at shifted
/// arguments folded into the coherent weights of the inner integral.
pub fn apply_ltilde_closed(params: &ModelParams, k: &ConfigFn, theta: &TestFunction, integ: &LPIntegrator) -> Result<EstimateWithError> {
    let w = integ.window().clone();
    let cap = integ.order_cap();
    let th = |x: &Point| theta.eval(x);
    let weight = |xi: &FiniteConfig| -> f64 { xi.iter().map(th).product() };
    let z = integ.z();
    match params {
        ModelParams::Glauber { phi, .. } => {
            // ∫dx θ(x) [B(ψ_x) − δB/δθ(x)],  ψ_x = (1+θ) e^{−φ(x−·)} − 1
            integ.integrate_with_free(1, None, SALT_OUTER, |free, xi, _| {
                let x = free[0];
                let tx = th(&x);
                if tx == 0.0 {
                    return Ok(0.0);
                }
                let psi: f64 = xi
                    .iter()
                    .map(|u| (1.0 + th(u)) * (-phi.eval(&w.displacement(&x, u))).exp() - 1.0)
                    .product();
                let mut v = 0.0;
                if psi != 0.0 {
                    v += psi * k.eval(xi)?;
                }
                let wt = weight(xi);
                if wt != 0.0 {
                    v -= wt * k_capped(k, cap, &FiniteConfig::singleton(x), xi)?;
                }
                Ok(tx * v)
            })
        }
        ModelParams::Contact { a, lambda } => {
            // −∫θ(x) δB/δθ(x) + λ∫∫ a(x−y)(1+θ(y))θ(x) δB/δθ(y)
            let vol = w.volume();
            integ.integrate_with_free(2, Some(cap.saturating_sub(1)), SALT_OUTER, |free, xi, _| {
                let (x, y) = (free[0], free[1]);
                let wt = weight(xi);
                if wt == 0.0 {
                    return Ok(0.0);
                }
                let tx = th(&x);
                let death = -tx * k.eval(&xi.with(x)?)? / vol;
                let a_xy = kernel_value(&w, a, &x, &y);
                let birth = if a_xy * tx != 0.0 { lambda * a_xy * (1.0 + th(&y)) * tx * k.eval(&xi.with(y)?)? } else { 0.0 };
                Ok(wt * (death + birth))
            })
        }
        ModelParams::LinearVoter { a_plus, a_minus } => {
            // ∫∫ a₊(1+θ(y))θ(x) δB/δθ(y) − ∫∫ a₋(1+θ(y))θ(x) δ²B/δθ(x)δθ(y)
            integ.integrate_with_free(2, Some(cap.saturating_sub(1)), SALT_OUTER, |free, xi, _| {
                let (x, y) = (free[0], free[1]);
                let pre = (1.0 + th(&y)) * th(&x);
                let wt = weight(xi);
                if pre == 0.0 || wt == 0.0 {
                    return Ok(0.0);
                }
                let mut v = a_plus.eval(&w.displacement(&x, &y)) * k.eval(&xi.with(y)?)?;
                let am = a_minus.eval(&w.displacement(&x, &y));
                if am != 0.0 {
                    v -= am * k_capped(k, cap, &FiniteConfig::new(vec![x, y])?, xi)?;
                }
                Ok(pre * wt * v)
            })
        }
        ModelParams::PolynomialVoter { p, q, a_p, a_q } => {
            // −zᵠ/q! ∫dm⁽ᵠ⁾(η) e(θ+1,η) ∫dx θ(x) D^{q+1}B(θ,η∪x) ã_x(η)
            // + zᵖ/p! ∫dm⁽ᵖ⁾(η) D^pB(θ,η) e(θ+1,η) ∫dx θ(x) ã_x(η)
            let term = |order: usize, a: &crate::kernels::Kernel, with_x: bool, sign: f64, salt: u64| -> Result<EstimateWithError> {
                let used = order + usize::from(with_x);
                if used > cap {
                    return Ok(EstimateWithError::exact(0.0));
                }
                let est = integ.integrate_with_free(1 + order, Some(cap - used), salt, |free, xi, _| {
                    let x = free[0];
                    let eta = FiniteConfig::new(free[1..].to_vec())?;
                    let tx = th(&x);
                    let wt = weight(xi);
                    if tx == 0.0 || wt == 0.0 {
                        return Ok(0.0);
                    }
                    let amp: f64 = eta.iter().map(|u| a.eval(&w.displacement(&x, u))).product();
                    if amp == 0.0 {
                        return Ok(0.0);
                    }
                    let e1: f64 = eta.iter().map(|u| th(u) + 1.0).product();
                    let arg = if with_x { eta.with(x)? } else { eta };
                    Ok(tx * amp * e1 * wt * k.eval(&arg.union(xi)?)?)
                })?;
                Ok(est.combine(sign * z.powi(order as i32) / factorial(order), &EstimateWithError::exact(0.0), 0.0))
            };
            let death = term(*q, a_q, true, -1.0, SALT_OUTER)?;
            let birth = term(*p, a_p, false, 1.0, SALT_OUTER + 1)?;
            Ok(death.combine(1.0, &birth, 1.0))
        }
        ModelParams::Kawasaki { phi, a, s } if *s == 0.0 => {
            // ∫∫ a(x−y) e^{−φ(x−y)} (θ(y)−θ(x)) ∫dλ(ξ) k(ξ∪x) e(ψ_y, ξ),  ψ_y = (1+θ) e^{−φ(y−·)} − 1
            integ.integrate_with_free(2, Some(cap.saturating_sub(1)), SALT_OUTER, |free, xi, _| {
                let (x, y) = (free[0], free[1]);
                let diff = th(&y) - th(&x);
                if diff == 0.0 {
                    return Ok(0.0);
                }
                let amp = a.eval(&w.displacement(&x, &y)) * (-phi.eval(&w.displacement(&x, &y))).exp();
                if amp == 0.0 {
                    return Ok(0.0);
                }
                let psi: f64 = xi
                    .iter()
                    .map(|u| (1.0 + th(u)) * (-phi.eval(&w.displacement(&y, u))).exp() - 1.0)
                    .product();
                if psi == 0.0 {
                    return Ok(0.0);
                }
                Ok(amp * diff * psi * k.eval(&xi.with(x)?)?)
            })
        }
        ModelParams::PairHop { p, .. } => {
            // ½ ∫∫ δ²B/δθ(x)δθ(y) ∫∫ c [(θ(x')+1)(θ(y')+1) − (θ(x)+1)(θ(y)+1)]
            if cap < 2 {
                return Ok(EstimateWithError::exact(0.0));
            }
            let est = integ.integrate_with_free(4, Some(cap - 2), SALT_OUTER, |free, xi, _| {
                let (x, y, x2, y2) = (free[0], free[1], free[2], free[3]);
                let diff = (th(&x2) + 1.0) * (th(&y2) + 1.0) - (th(&x) + 1.0) * (th(&y) + 1.0);
                let wt = weight(xi);
                if diff == 0.0 || wt == 0.0 {
                    return Ok(0.0);
                }
                let pv = |u: &Point, v: &Point| p.eval(&w.displacement(u, v));
                let c = pv(&x, &x2) * pv(&x, &y2) * pv(&y, &x2) * pv(&y, &y2);
                if c == 0.0 {
                    return Ok(0.0);
                }
                Ok(c * diff * wt * k.eval(&xi.union(&FiniteConfig::new(vec![x, y])?)?)?)
            })?;
            Ok(est.combine(0.5, &EstimateWithError::exact(0.0), 0.0))
        }
        other => Err(Error::UnknownModel(format!("{} has no closed L̃ formula", other.model_id()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{random_correlation, Trig};
    use crate::generators::CoherentSite;
    use crate::kernels::Kernel;
    use crate::models::{build_spec, Parity};
    use crate::rng::stream_rng;

    fn window() -> Window {
        Window::periodic(&[0.0], &[2.0]).unwrap()
    }

    fn trig_theta(seed: u64, offset: f64, amp: f64) -> (TestFunction, Trig) {
        let w = window();
        let t = Trig::random(&mut stream_rng(seed, 0), &w, offset, amp, 2);
        (TestFunction::new(t.to_fn(), w, t.sup_bound()).unwrap(), t)
    }

    #[test]
    fn bogoliubov_of_coherent_states() {
        let w = window();
        let integ = LPIntegrator::tensor(w.clone(), 1.3, 20, 32).unwrap();
        let (theta, t) = trig_theta(1, 0.2, 0.3);
        let rho = 0.7;
        let k = ConfigFn::coherent_const(rho);
        let b = bogoliubov(&k, &theta, &integ).unwrap();
        let exact = (rho * 1.3 * t.integral(w.volume())).exp();
        assert!((b.value - exact).abs() < 1e-6 * exact);
        let x = Point::new(&[0.4]).unwrap();
        let d = variational_derivative(&k, &theta, &FiniteConfig::singleton(x), &integ).unwrap();
        assert!((d.value - rho * exact).abs() < 1e-6 * exact);
        // a table-like k takes the generic path
        let general = ConfigFn::new(None, move |eta| rho.powi(eta.len() as i32));
        let mc = LPIntegrator::monte_carlo(w.clone(), 1.3, 12, 20_000, 4).unwrap();
        let b = bogoliubov(&general, &theta, &mc).unwrap();
        assert!((b.value - exact).abs() < 3.0 * b.std_error + 1e-9, "{b:?} vs {exact}");
        let zero = TestFunction::zero(&w);
        let kc = random_correlation(&mut stream_rng(2, 0), &w, 3, 0.3);
        assert!((bogoliubov(&kc, &zero, &integ).unwrap().value - kc.eval(&FiniteConfig::empty()).unwrap()).abs() < 1e-15);
        let eta = FiniteConfig::from_coords(&[&[0.3], &[1.1]]).unwrap();
        let d0 = variational_derivative(&kc, &zero, &eta, &integ).unwrap();
        assert!((d0.value - kc.eval(&eta).unwrap()).abs() < 1e-15);
        let unit = ConfigFn::unit();
        assert_eq!(bogoliubov(&unit, &theta, &integ).unwrap().value, 1.0);
    }

    #[test]
    fn multiplicative_over_disjoint_supports() {
        let w = window();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 20, 64).unwrap();
        let left: PointFn = Arc::new(|x| if x.coord(0) < 1.0 { 0.8 * (std::f64::consts::PI * x.coord(0)).sin().powi(2) } else { 0.0 });
        let right: PointFn = Arc::new(|x| if x.coord(0) >= 1.0 { -0.5 * (std::f64::consts::PI * x.coord(0)).sin().powi(4) } else { 0.0 });
        let t1 = TestFunction::new(left, w.clone(), 0.8).unwrap();
        let t2 = TestFunction::new(right, w.clone(), 0.5).unwrap();
        let k = ConfigFn::coherent_const(1.4);
        let b = |t: &TestFunction| bogoliubov(&k, t, &integ).unwrap().value;
        let b0 = b(&TestFunction::zero(&w));
        let lhs = b(&t1.plus_scaled(1.0, &t2));
        assert!((lhs - b(&t1) * b(&t2) / b0).abs() < 1e-6 * lhs);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let w = window();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 3, 192).unwrap();
        let mut rng = stream_rng(9, 0);
        for trial in 0..3 {
            let k = random_correlation(&mut rng, &w, 3, 0.3);
            let (theta, _) = trig_theta(20 + trial, 0.1, 0.3);
            let x0 = Point::new(&[0.3 + 0.5 * trial as f64]).unwrap();
            let bump = TestFunction::bump(&w, x0, 0.03).unwrap();
            let h = 1e-3;
            let plus = bogoliubov(&k, &theta.plus_scaled(h, &bump), &integ).unwrap().value;
            let minus = bogoliubov(&k, &theta.plus_scaled(-h, &bump), &integ).unwrap().value;
            // the first-order sector of ∫e(β) is the bump mass on the same grid
            let mass = integ.with_order_cap(1).coherent_integral(1.0, |x| bump.eval(x)).unwrap().value - 1.0;
            let fd = (plus - minus) / (2.0 * h * mass);
            let d = variational_derivative(&k, &theta, &FiniteConfig::singleton(x0), &integ).unwrap().value;
            assert!((fd - d).abs() < 1e-3 * d.abs(), "trial {trial}: {fd} vs {d}");
        }
    }

    #[test]
    fn pure_death_flow() {
        let w = window();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 20, 32).unwrap();
        let spec = BirthDeathSpec::from_products("pure_death", CoherentSite::new(Arc::new(|_| 0.0), Arc::new(|_, _| 0.0)), Some(0), CoherentSite::unit(), Some(0));
        let (theta, t) = trig_theta(3, 0.1, 0.4);
        let rho = 0.9;
        let k = ConfigFn::coherent_const(rho);
        let v = apply_ltilde_bd(&spec, &k, &theta, &integ).unwrap().value;
        let m = t.integral(w.volume());
        let expected = -rho * m * (rho * m).exp();
        assert!((v - expected).abs() < 1e-9 * expected.abs(), "{v} vs {expected}");
        assert_eq!(apply_ltilde_bd(&spec, &k, &TestFunction::zero(&w), &integ).unwrap().value, 0.0);
    }

    fn gauss(amplitude: f64, sigma: f64) -> Kernel {
        Kernel::Gaussian { amplitude, sigma }
    }

    #[test]
    fn closed_forms_match_generic() {
        let w = window();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 3, 12).unwrap();
        let models = [
            ModelParams::Glauber { phi: gauss(0.7, 0.35), birth_majorant: None },
            ModelParams::Contact { a: gauss(1.0, 0.35), lambda: 1.2 },
            ModelParams::LinearVoter { a_plus: gauss(0.9, 0.35), a_minus: gauss(0.6, 0.4) },
            ModelParams::PolynomialVoter { p: 2, q: 1, a_p: gauss(0.7, 0.4), a_q: gauss(0.5, 0.35) },
            ModelParams::Kawasaki { phi: gauss(0.6, 0.35), a: gauss(1.0, 0.4), s: 0.0 },
            ModelParams::PairHop { p: gauss(1.0, 0.5), parity: Parity::Even },
        ];
        let mut rng = stream_rng(13, 0);
        for (i, params) in models.iter().enumerate() {
            let spec = build_spec(params, &w).unwrap();
            let k = random_correlation(&mut rng, &w, 3, 0.3);
            let (theta, _) = trig_theta(40 + i as u64, 0.1, 0.4);
            let generic = apply_ltilde(&spec, &k, &theta, &integ).unwrap().value;
            let closed = apply_ltilde_closed(params, &k, &theta, &integ).unwrap().value;
            assert!((generic - closed).abs() < 1e-8 * (1.0 + generic.abs()), "{}: {generic} vs {closed}", params.model_id());
            let zero = apply_ltilde_closed(params, &k, &TestFunction::zero(&w), &integ).unwrap().value;
            assert_eq!(zero, 0.0, "{}", params.model_id());
        }
        let free = ModelParams::FreeHop { a: gauss(1.0, 0.3) };
        let k = ConfigFn::coherent_const(1.0);
        let (theta, _) = trig_theta(7, 0.1, 0.4);
        assert!(matches!(apply_ltilde_closed(&free, &k, &theta, &integ), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn free_hop_stationarity() {
        let w = window();
        let integ = LPIntegrator::tensor(w.clone(), 1.0, 3, 16).unwrap();
        let spec = build_spec(&ModelParams::FreeHop { a: gauss(1.0, 0.3) }, &w).unwrap();
        let (theta, _) = trig_theta(8, 0.1, 0.4);
        let poisson = ConfigFn::coherent_const(1.0);
        assert!(apply_ltilde(&spec, &poisson, &theta, &integ).unwrap().value.abs() < 1e-12);
        let k = random_correlation(&mut stream_rng(4, 0), &w, 3, 0.3);
        let flat = TestFunction::constant(0.3, &w);
        assert!(apply_ltilde(&spec, &k, &flat, &integ).unwrap().value.abs() < 1e-14);
    }

    #[test]
    fn ruelle_bound_sampling() {
        let w = window();
        let mut rng = stream_rng(6, 0);
        let k = ConfigFn::coherent_const(1.5);
        assert!(check_ruelle_bound(&k, 1.5, &w, 100, 6, &mut rng).unwrap());
        assert!(!check_ruelle_bound(&k, 1.2, &w, 100, 6, &mut rng).unwrap());
    }
}

//! Quasi-observables, the K-transform and the ⋆-convolution.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::configuration::{coherent_state, FiniteConfig, Point, PointFn, Window, DEFAULT_SUBSET_CAP};
use crate::error::{Error, Result};
use crate::numeric::{binomial, CompensatedSum};

/// Default cap on `|η|` when evaluating a ⋆-product (3^n terms).
pub const DEFAULT_STAR_CAP: usize = 12;

pub type EvalFn = Arc<dyn Fn(&FiniteConfig) -> Result<f64> + Send + Sync>;

/// Extra structure a [`ConfigFn`] may carry so integrators can factorize it.
#[derive(Clone)]
pub enum Structure {
    General,
    /// `amplitude · e_λ(f)`.
    Coherent { amplitude: f64, f: PointFn },
}

/// A real function on finite configurations with declared support bounds.
#[derive(Clone)]
pub struct ConfigFn {
    eval: EvalFn,
    support_order: Option<usize>,
    window: Option<Window>,
    tag: String,
    structure: Structure,
}

impl fmt::Debug for ConfigFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConfigFn")
            .field("tag", &self.tag)
            .field("support_order", &self.support_order)
            .finish()
    }
}

impl ConfigFn {
    pub fn fallible<F>(support_order: Option<usize>, f: F) -> Self
    where
        F: Fn(&FiniteConfig) -> Result<f64> + Send + Sync + 'static,
    {
        ConfigFn { eval: Arc::new(f), support_order, window: None, tag: String::new(), structure: Structure::General }
    }

    pub fn new<F>(support_order: Option<usize>, f: F) -> Self
    where
        F: Fn(&FiniteConfig) -> f64 + Send + Sync + 'static,
    {
        Self::fallible(support_order, move |eta| Ok(f(eta)))
    }

    /// `amplitude · e_λ(f)`; unbounded support.
    pub fn coherent_scaled(amplitude: f64, f: PointFn) -> Self {
        let g = f.clone();
        let mut c = Self::fallible(None, move |eta| Ok(amplitude * coherent_state(&*g, eta)?));
        c.structure = Structure::Coherent { amplitude, f };
        c.tag = "coherent".into();
        c
    }

    pub fn coherent(f: PointFn) -> Self {
        Self::coherent_scaled(1.0, f)
    }

    /// `e_λ(c)` for a constant `c`.
    pub fn coherent_const(c: f64) -> Self {
        Self::coherent(Arc::new(move |_| c))
    }

    /// `1{∅}`, the ⋆-unit `e_λ(0)`.
    pub fn unit() -> Self {
        let mut c = Self::new(Some(0), |eta| if eta.is_empty() { 1.0 } else { 0.0 });
        c.tag = "unit".into();
        c
    }

    /// `1{Γ⁽ⁿ⁾} · e_λ(f)`.
    pub fn sector_coherent(n: usize, f: PointFn) -> Self {
        Self::fallible(Some(n), move |eta| if eta.len() == n { coherent_state(&*f, eta) } else { Ok(0.0) })
    }

    /// Tabulated values; configurations absent from the table map to 0.
    pub fn table(values: HashMap<FiniteConfig, f64>) -> Self {
        let order = values.keys().map(FiniteConfig::len).max().unwrap_or(0);
        let values = Arc::new(values);
        let mut c = Self::new(Some(order), move |eta| values.get(eta).copied().unwrap_or(0.0));
        c.tag = "table".into();
        c
    }

    pub fn with_window(mut self, w: Window) -> Self {
        self.window = Some(w);
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn support_order(&self) -> Option<usize> {
        self.support_order
    }

    pub fn window(&self) -> Option<&Window> {
        self.window.as_ref()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    /// Value at `η`, honouring the declared support.
    pub fn eval(&self, eta: &FiniteConfig) -> Result<f64> {
        if self.support_order.is_some_and(|n| eta.len() > n) {
            return Ok(0.0);
        }
        if let Some(w) = &self.window {
            if !eta.inside(w) {
                return Ok(0.0);
            }
        }
        let v = (self.eval)(eta)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue(format!("{} at {eta:?}: {v}", self.tag)))
        }
    }

    pub fn scale(&self, a: f64) -> ConfigFn {
        let g = self.clone();
        let mut c = ConfigFn::fallible(self.support_order, move |eta| Ok(a * g.eval(eta)?));
        c.window = self.window.clone();
        if let Structure::Coherent { amplitude, f } = &self.structure {
            c.structure = Structure::Coherent { amplitude: a * amplitude, f: f.clone() };
        }
        c
    }

    /// `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &ConfigFn, b: f64) -> ConfigFn {
        let (g1, g2) = (self.clone(), other.clone());
        let order = match (self.support_order, other.support_order) {
            (Some(x), Some(y)) => Some(x.max(y)),
            _ => None,
        };
        ConfigFn::fallible(order, move |eta| Ok(a * g1.eval(eta)? + b * g2.eval(eta)?))
    }

    /// Pointwise product.
    pub fn product(&self, other: &ConfigFn) -> ConfigFn {
        let (g1, g2) = (self.clone(), other.clone());
        let order = match (self.support_order, other.support_order) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, None) => x,
            (None, y) => y,
        };
        ConfigFn::fallible(order, move |eta| {
            let a = g1.eval(eta)?;
            if a == 0.0 {
                return Ok(0.0);
            }
            Ok(a * g2.eval(eta)?)
        })
    }

    /// Spot-check the declared support on random configurations in `w`.
    pub fn check_support<R: Rng + ?Sized>(&self, w: &Window, samples: usize, rng: &mut R) -> Result<bool> {
        let Some(n) = self.support_order else { return Ok(true) };
        for _ in 0..samples {
            let m = n + 1 + rng.random_range(0..3);
            let pts: Vec<Point> = (0..m).map(|_| w.sample_uniform(rng)).collect();
            let eta = FiniteConfig::new(pts)?;
            if (self.eval)(&eta)? != 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Visit every subset mask of an `n`-set with popcount `≤ max_k`, by size then
/// colexicographic order.
pub(crate) fn for_each_small_subset(n: usize, max_k: usize, mut f: impl FnMut(u64) -> Result<()>) -> Result<()> {
    for k in 0..=max_k.min(n) {
        if k == 0 {
            f(0)?;
            continue;
        }
        let mut m: u64 = (1u64 << k) - 1;
        let limit = 1u64 << n;
        while m < limit {
            f(m)?;
            let c = m & m.wrapping_neg();
            let r = m + c;
            m = (((r ^ m) >> 2) / c) | r;
        }
    }
    Ok(())
}

/// `(KG)(γ) = Σ_{ξ⊂γ} G(ξ)`, summing only `|ξ| ≤ N` when `G` declares order `N`.
pub fn k_transform(g: &ConfigFn, gamma: &FiniteConfig) -> Result<f64> {
    k_transform_capped(g, gamma, DEFAULT_SUBSET_CAP)
}

pub fn k_transform_capped(g: &ConfigFn, gamma: &FiniteConfig, cap: usize) -> Result<f64> {
    let n = gamma.len();
    let max_k = match g.support_order() {
        Some(order) => {
            let count: u64 = (0..=order.min(n)).map(|k| binomial(n, k)).sum();
            if n >= 64 || count > (1u64 << cap.min(62)) {
                return Err(Error::OrderCapExceeded { order: n, cap });
            }
            order.min(n)
        }
        None => {
            if n > cap {
                return Err(Error::UnboundedSupport { order: n });
            }
            n
        }
    };
    let mut acc = CompensatedSum::new();
    for_each_small_subset(n, max_k, |m| {
        acc.add(g.eval(&gamma.subset_mask(m))?);
        Ok(())
    })?;
    Ok(acc.value())
}

/// `(K⁻¹F)(η) = Σ_{ξ⊂η} (−1)^{|η\ξ|} F(ξ)`.
pub fn k_inverse<F>(f: F, eta: &FiniteConfig) -> Result<f64>
where
    F: Fn(&FiniteConfig) -> Result<f64>,
{
    k_inverse_capped(f, eta, DEFAULT_SUBSET_CAP)
}

pub fn k_inverse_capped<F>(f: F, eta: &FiniteConfig, cap: usize) -> Result<f64>
where
    F: Fn(&FiniteConfig) -> Result<f64>,
{
    let n = eta.len();
    if n > cap || n >= 64 {
        return Err(Error::OrderCapExceeded { order: n, cap });
    }
    let mut acc = CompensatedSum::new();
    for m in 0..(1u64 << n) {
        let v = f(&eta.subset_mask(m))?;
        let sign = if (n - m.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
        acc.add(sign * v);
    }
    Ok(acc.value())
}

/// Values of `g` on every sub-configuration of `η` with at most `max_k`
/// points, indexed by mask; other entries are zero.
fn tabulate<G>(g: &G, eta: &FiniteConfig, max_k: usize) -> Result<Vec<f64>>
where
    G: Fn(&FiniteConfig) -> Result<f64>,
{
    let mut out = vec![0.0; 1usize << eta.len()];
    for_each_small_subset(eta.len(), max_k, |m| {
        out[m as usize] = g(&eta.subset_mask(m))?;
        Ok(())
    })?;
    Ok(out)
}

/// `(G1 ⋆ G2)(η) = Σ_{(η₁,η₂,η₃)} G1(η₁∪η₂) G2(η₂∪η₃)` for plain closures.
pub fn star_eval<G1, G2>(
    g1: G1,
    order1: Option<usize>,
    g2: G2,
    order2: Option<usize>,
    eta: &FiniteConfig,
    cap: usize,
) -> Result<f64>
where
    G1: Fn(&FiniteConfig) -> Result<f64>,
    G2: Fn(&FiniteConfig) -> Result<f64>,
{
    let n = eta.len();
    if let (Some(a), Some(b)) = (order1, order2) {
        if n > a + b {
            return Ok(0.0);
        }
    }
    if n > cap || n >= 32 {
        return Err(Error::OrderCapExceeded { order: n, cap });
    }
    let v1 = tabulate(&g1, eta, order1.unwrap_or(n))?;
    let v2 = tabulate(&g2, eta, order2.unwrap_or(n))?;
    let full = (1usize << n) - 1;
    // A = η₁∪η₂, S = η₂ ⊂ A, B = η₂∪η₃ = S ∪ (η \ A).
    let mut acc = CompensatedSum::new();
    for a in 0..=full {
        let x = v1[a];
        if x == 0.0 {
            continue;
        }
        let rest = full ^ a;
        let mut inner = CompensatedSum::new();
        let mut s = a;
        loop {
            inner.add(v2[rest | s]);
            if s == 0 {
                break;
            }
            s = (s - 1) & a;
        }
        acc.add(x * inner.value());
    }
    Ok(acc.value())
}

/// `(G1 ⋆ G2)(η)`.
pub fn star_at(g1: &ConfigFn, g2: &ConfigFn, eta: &FiniteConfig) -> Result<f64> {
    star_eval(|e| g1.eval(e), g1.support_order(), |e| g2.eval(e), g2.support_order(), eta, DEFAULT_STAR_CAP)
}

/// Lazy `G1 ⋆ G2` with support order `N1 + N2` when both are finite.
pub fn star_convolution(g1: &ConfigFn, g2: &ConfigFn) -> ConfigFn {
    star_convolution_capped(g1, g2, DEFAULT_STAR_CAP)
}

pub fn star_convolution_capped(g1: &ConfigFn, g2: &ConfigFn, cap: usize) -> ConfigFn {
    let order = match (g1.support_order(), g2.support_order()) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    let (a, b) = (g1.clone(), g2.clone());
    let mut out = ConfigFn::fallible(order, move |eta| {
        star_eval(|e| a.eval(e), a.support_order(), |e| b.eval(e), b.support_order(), eta, cap)
    })
    .with_tag(format!("({})*({})", g1.tag(), g2.tag()));
    if let (Structure::Coherent { amplitude: a1, f: f1 }, Structure::Coherent { amplitude: a2, f: f2 }) =
        (g1.structure(), g2.structure())
    {
        let (f1, f2) = (f1.clone(), f2.clone());
        let h: PointFn = Arc::new(move |x| {
            let (u, v) = (f1(x), f2(x));
            u + v + u * v
        });
        out.structure = Structure::Coherent { amplitude: a1 * a2, f: h };
    }
    out
}

/// `Σ_{ξ⊂η} G(ξ) e_λ(f+1, ξ) e_λ(f, η\ξ)`.
pub fn star_with_coherent_eval<G, F>(g: G, order: Option<usize>, f: &F, eta: &FiniteConfig, cap: usize) -> Result<f64>
where
    G: Fn(&FiniteConfig) -> Result<f64>,
    F: Fn(&Point) -> f64 + ?Sized,
{
    let n = eta.len();
    if n > cap || n >= 64 {
        return Err(Error::OrderCapExceeded { order: n, cap });
    }
    let fx: Vec<f64> = eta.iter().map(f).collect();
    if let Some(v) = fx.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("coherent factor {v}")));
    }
    let mut acc = CompensatedSum::new();
    for_each_small_subset(n, order.unwrap_or(n), |m| {
        let mut w = 1.0;
        for (i, v) in fx.iter().enumerate() {
            w *= if m >> i & 1 == 1 { v + 1.0 } else { *v };
        }
        if w != 0.0 {
            acc.add(w * g(&eta.subset_mask(m))?);
        }
        Ok(())
    })?;
    Ok(acc.value())
}

/// `G ⋆ e_λ(f)` through the single-sum formula; unbounded support.
pub fn star_with_coherent(g: &ConfigFn, f: PointFn) -> ConfigFn {
    let gg = g.clone();
    ConfigFn::fallible(None, move |eta| {
        star_with_coherent_eval(|e| gg.eval(e), gg.support_order(), &*f, eta, DEFAULT_SUBSET_CAP)
    })
    .with_tag(format!("({})*e", g.tag()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::partitions;
    use crate::families::{random_config, random_table};
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn cfg(xs: &[f64]) -> FiniteConfig {
        FiniteConfig::new(xs.iter().map(|&x| Point::new(&[x]).unwrap()).collect()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn k_transform_examples() {
        let f = |p: &Point| p.coord(0).cos();
        let g1 = ConfigFn::fallible(Some(1), move |eta| Ok(if eta.len() == 1 { f(&eta.points()[0]) } else { 0.0 }));
        let gamma = cfg(&[0.1, 0.7, 2.0]);
        let expect: f64 = gamma.iter().map(f).sum();
        assert!((k_transform(&g1, &gamma).unwrap() - expect).abs() < 1e-15);

        let coh = ConfigFn::coherent(Arc::new(f));
        let prod: f64 = gamma.iter().map(|p| 1.0 + f(p)).product();
        assert!(rel(k_transform(&coh, &gamma).unwrap(), prod) < 1e-14);

        assert_eq!(k_transform(&ConfigFn::unit(), &gamma).unwrap(), 1.0);
        assert_eq!(k_transform(&coh, &FiniteConfig::empty()).unwrap(), 1.0);

        let big = cfg(&(0..21).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(k_transform(&coh, &big), Err(Error::UnboundedSupport { .. })));
        assert!((k_transform(&g1, &big).unwrap() - big.iter().map(f).sum::<f64>()).abs() < 1e-13);
    }

    #[test]
    fn k_inverse_examples() {
        assert_eq!(k_inverse(|_| Ok(1.0), &FiniteConfig::empty()).unwrap(), 1.0);
        assert_eq!(k_inverse(|_| Ok(1.0), &cfg(&[1.0, 2.0, 3.0])).unwrap(), 0.0);
        let f = |p: &Point| 0.3 + p.coord(0);
        let eta = cfg(&[0.1, 0.2, 0.5, 0.9, 1.3]);
        let v = k_inverse(|g: &FiniteConfig| Ok(g.iter().map(|p| 1.0 + f(p)).product()), &eta).unwrap();
        assert!(rel(v, coherent_state(&f, &eta).unwrap()) < 1e-12);
    }

    #[test]
    fn star_examples() {
        let f: PointFn = Arc::new(|p| p.coord(0).sin());
        let g: PointFn = Arc::new(|p| 0.5 - p.coord(0));
        let ef = ConfigFn::coherent(f.clone());
        let eg = ConfigFn::coherent(g.clone());
        let eta = cfg(&[0.1, 0.4, 0.8, 1.5]);
        let unit = star_at(&ef, &ConfigFn::unit(), &eta).unwrap();
        assert!(rel(unit, ef.eval(&eta).unwrap()) < 1e-14);
        let h = |p: &Point| f(p) + g(p) + f(p) * g(p);
        let lhs = star_at(&ef, &eg, &eta).unwrap();
        assert!(rel(lhs, coherent_state(&h, &eta).unwrap()) < 1e-12);
        let conv = star_convolution(&ef, &eg);
        let Structure::Coherent { f: hf, .. } = conv.structure() else { panic!() };
        assert!((hf(&eta.points()[0]) - h(&eta.points()[0])).abs() < 1e-15);

        let zero: PointFn = Arc::new(|_| 0.0);
        let t = random_table(&mut stream_rng(3, 0), &eta, 1.0);
        let a = star_with_coherent_eval(|e| t.eval(e), t.support_order(), &*zero, &eta, 20).unwrap();
        assert!((a - t.eval(&eta).unwrap()).abs() < 1e-15);
        let b = star_with_coherent_eval(|e| eg.eval(e), None, &*f, &eta, 20).unwrap();
        assert!(rel(b, coherent_state(&h, &eta).unwrap()) < 1e-12);
    }

    #[test]
    fn star_matches_partition_enumeration() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..20 {
            let eta = random_config(&mut rng, &Window::periodic(&[0.0], &[1.0]).unwrap(), 3);
            let g1 = random_table(&mut rng, &eta, 1.0);
            let g2 = random_table(&mut rng, &eta, 1.0);
            let mut brute = 0.0;
            for p in partitions(&eta, 3, 6).unwrap() {
                brute += g1.eval(&p[0].union(&p[1]).unwrap()).unwrap() * g2.eval(&p[1].union(&p[2]).unwrap()).unwrap();
            }
            let v = star_at(&g1, &g2, &eta).unwrap();
            assert!((v - brute).abs() < 1e-12 * brute.abs().max(1.0));
            let f: PointFn = Arc::new(|p| 0.2 + p.coord(0));
            let a = star_at(&g1, &ConfigFn::coherent(f.clone()), &eta).unwrap();
            let b = star_with_coherent(&g1, f).eval(&eta).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn star_support_order_adds() {
        let a = ConfigFn::new(Some(1), |_| 1.0);
        let b = ConfigFn::new(Some(2), |_| 1.0);
        let c = star_convolution(&a, &b);
        assert_eq!(c.support_order(), Some(3));
        assert_eq!(c.eval(&cfg(&[1.0, 2.0, 3.0, 4.0])).unwrap(), 0.0);
        let big = cfg(&(0..13).map(|i| i as f64).collect::<Vec<_>>());
        let u = ConfigFn::coherent_const(1.0);
        assert!(matches!(star_at(&u, &u, &big), Err(Error::OrderCapExceeded { .. })));
    }

    #[test]
    fn support_spot_check() {
        let mut rng = stream_rng(1, 1);
        let w = Window::periodic(&[0.0], &[1.0]).unwrap();
        let good = ConfigFn::new(Some(2), |e| if e.len() <= 2 { 1.0 } else { 0.0 });
        assert!(good.check_support(&w, 20, &mut rng).unwrap());
        let mut bad = ConfigFn::new(None, |_| 1.0);
        bad.support_order = Some(2);
        assert!(!bad.check_support(&w, 20, &mut rng).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip(seed in any::<u64>(), n in 0usize..=8) {
            let mut rng = stream_rng(seed, 0);
            let w = Window::periodic(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
            let eta = random_config(&mut rng, &w, n);
            let g = random_table(&mut rng, &eta, 1.0);
            let back = k_inverse(|x| k_transform(&g, x), &eta).unwrap();
            prop_assert!((back - g.eval(&eta).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn homomorphism(seed in any::<u64>(), n in 0usize..=8) {
            let mut rng = stream_rng(seed, 1);
            let w = Window::periodic(&[0.0], &[1.0]).unwrap();
            let gamma = random_config(&mut rng, &w, n);
            let g1 = random_table(&mut rng, &gamma, 1.0);
            let g2 = random_table(&mut rng, &gamma, 1.0);
            let lhs = k_transform(&star_convolution(&g1, &g2), &gamma).unwrap();
            let rhs = k_transform(&g1, &gamma).unwrap() * k_transform(&g2, &gamma).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()) + 1e-12);
        }

        #[test]
        fn commutative_associative(seed in any::<u64>(), n in 0usize..=4) {
            let mut rng = stream_rng(seed, 2);
            let w = Window::periodic(&[0.0], &[1.0]).unwrap();
            let eta = random_config(&mut rng, &w, n);
            let a = random_table(&mut rng, &eta, 1.0);
            let b = random_table(&mut rng, &eta, 1.0);
            let c = random_table(&mut rng, &eta, 1.0);
            let ab = star_at(&a, &b, &eta).unwrap();
            let ba = star_at(&b, &a, &eta).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-10 * ab.abs().max(1.0));
            let l = star_at(&star_convolution(&a, &b), &c, &eta).unwrap();
            let r = star_at(&a, &star_convolution(&b, &c), &eta).unwrap();
            prop_assert!((l - r).abs() <= 1e-10 * l.abs().max(1.0));
        }

        #[test]
        fn polynomial_bound(seed in any::<u64>(), n in 0usize..=10, order in 0usize..=3) {
            let mut rng = stream_rng(seed, 3);
            let w = Window::periodic(&[0.0], &[1.0]).unwrap();
            let gamma = random_config(&mut rng, &w, n);
            let t = random_table(&mut rng, &gamma, 1.0);
            let g = ConfigFn::fallible(Some(order), move |e| t.eval(e));
            let v = k_transform(&g, &gamma).unwrap();
            prop_assert!(v.abs() <= (1.0 + n as f64).powi(order as i32) + 1e-12);
        }
    }
}

//! Points, windows and finite configurations.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;
pub const DEFAULT_SUBSET_CAP: usize = 20;
pub const DEFAULT_PARTITION_CAP: usize = 6;

/// A point of ℝᵈ, `1 ≤ d ≤ MAX_DIM`, stored inline so it is `Copy`.
#[derive(Clone, Copy)]
pub struct Point {
    c: [f64; MAX_DIM],
    d: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "point dimension {} outside 1..={MAX_DIM}",
                coords.len()
            )));
        }
        if let Some(v) = coords.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("point coordinate {v}")));
        }
        Ok(Self::raw(coords))
    }

    /// No validation; callers guarantee finiteness and dimension.
    pub(crate) fn raw(coords: &[f64]) -> Self {
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point { c, d: coords.len() as u8 }
    }

    pub fn origin(dim: usize) -> Self {
        Point { c: [0.0; MAX_DIM], d: dim as u8 }
    }

    pub fn dim(&self) -> usize {
        self.d as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.c[..self.d as usize]
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.c[i]
    }

    pub fn norm(&self) -> f64 {
        self.coords().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Point) -> Point {
        let mut c = [0.0; MAX_DIM];
        for i in 0..self.dim() {
            c[i] = self.c[i] - other.c[i];
        }
        Point { c, d: self.d }
    }

    pub fn add(&self, other: &Point) -> Point {
        let mut c = [0.0; MAX_DIM];
        for i in 0..self.dim() {
            c[i] = self.c[i] + other.c[i];
        }
        Point { c, d: self.d }
    }

    pub fn neg(&self) -> Point {
        let mut p = *self;
        for i in 0..self.dim() {
            p.c[i] = -p.c[i];
        }
        p
    }

    /// Lexicographic order with `total_cmp`.
    pub fn lex_cmp(&self, other: &Point) -> Ordering {
        for i in 0..self.dim().min(other.dim()) {
            match self.c[i].total_cmp(&other.c[i]) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.d.cmp(&other.d)
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.coords().iter().zip(other.coords()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Point {}

impl Hash for Point {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.d.hash(state);
        for v in self.coords() {
            v.to_bits().hash(state);
        }
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    Open,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Window {
    lower: Point,
    upper: Point,
    boundary: Boundary,
}

#[derive(Deserialize)]
struct WindowRepr {
    lower: Point,
    upper: Point,
    #[serde(default)]
    boundary: Boundary,
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = WindowRepr::deserialize(d)?;
        Window::new(r.lower.coords(), r.upper.coords(), r.boundary).map_err(serde::de::Error::custom)
    }
}

impl Window {
    pub fn new(lower: &[f64], upper: &[f64], boundary: Boundary) -> Result<Self> {
        let lower = Point::new(lower)?;
        let upper = Point::new(upper)?;
        if lower.dim() != upper.dim() {
            return Err(Error::InvalidInput("window corners differ in dimension".into()));
        }
        if lower.coords().iter().zip(upper.coords()).any(|(l, u)| l >= u) {
            return Err(Error::InvalidInput("window needs lower < upper on every axis".into()));
        }
        Ok(Window { lower, upper, boundary })
    }

    pub fn periodic(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(lower, upper, Boundary::Periodic)
    }

    pub fn open(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(lower, upper, Boundary::Open)
    }

    /// The cube `[0, side]^dim`.
    pub fn cube(dim: usize, side: f64, boundary: Boundary) -> Result<Self> {
        Self::new(&vec![0.0; dim], &vec![side; dim], boundary)
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn lower(&self) -> &Point {
        &self.lower
    }

    pub fn upper(&self) -> &Point {
        &self.upper
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn side(&self, i: usize) -> f64 {
        self.upper.c[i] - self.lower.c[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn half_width(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).fold(f64::INFINITY, f64::min) / 2.0
    }

    pub fn center(&self) -> Point {
        let c: Vec<f64> = (0..self.dim()).map(|i| 0.5 * (self.lower.c[i] + self.upper.c[i])).collect();
        Point::raw(&c)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dim() == self.dim() && (0..self.dim()).all(|i| p.c[i] >= self.lower.c[i] && p.c[i] < self.upper.c[i])
    }

    /// `x − y`, using the minimum image on a periodic window.
    pub fn displacement(&self, x: &Point, y: &Point) -> Point {
        let mut u = x.sub(y);
        if self.boundary == Boundary::Periodic {
            for i in 0..self.dim() {
                let l = self.side(i);
                u.c[i] -= l * (u.c[i] / l).round();
            }
        }
        u
    }

    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        self.displacement(x, y).norm()
    }

    /// Map a point into the window: wrap on a torus, `None` outside an open window.
    pub fn wrap(&self, p: &Point) -> Option<Point> {
        match self.boundary {
            Boundary::Open => self.contains(p).then_some(*p),
            Boundary::Periodic => {
                let mut q = *p;
                for i in 0..self.dim() {
                    let l = self.side(i);
                    let mut v = (q.c[i] - self.lower.c[i]).rem_euclid(l);
                    if v >= l {
                        v = 0.0;
                    }
                    q.c[i] = self.lower.c[i] + v;
                }
                Some(q)
            }
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut c = [0.0; MAX_DIM];
        for (i, ci) in c.iter_mut().enumerate().take(self.dim()) {
            *ci = self.lower.c[i] + self.side(i) * rng.random::<f64>();
        }
        Point { c, d: self.d() }
    }

    fn d(&self) -> u8 {
        self.lower.d
    }
}

/// A finite set of distinct points, kept in lexicographic order.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct FiniteConfig {
    points: Vec<Point>,
}

impl fmt::Debug for FiniteConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.points.iter()).finish()
    }
}

impl FiniteConfig {
    pub fn new(mut points: Vec<Point>) -> Result<Self> {
        points.sort_by(Point::lex_cmp);
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DuplicatePoint);
        }
        if let Some(p) = points.first() {
            if points.iter().any(|q| q.dim() != p.dim()) {
                return Err(Error::InvalidInput("mixed point dimensions".into()));
            }
        }
        Ok(FiniteConfig { points })
    }

    pub fn from_coords(coords: &[&[f64]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point::new(c)).collect::<Result<Vec<_>>>()?)
    }

    pub fn empty() -> Self {
        FiniteConfig { points: Vec::new() }
    }

    pub fn singleton(p: Point) -> Self {
        FiniteConfig { points: vec![p] }
    }

    /// Assumes `points` already sorted and distinct.
    pub(crate) fn from_sorted_unchecked(points: Vec<Point>) -> Self {
        FiniteConfig { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.points.binary_search_by(|q| q.lex_cmp(p)).is_ok()
    }

    pub fn with(&self, p: Point) -> Result<Self> {
        match self.points.binary_search_by(|q| q.lex_cmp(&p)) {
            Ok(_) => Err(Error::DuplicatePoint),
            Err(i) => {
                let mut pts = self.points.clone();
                pts.insert(i, p);
                Ok(FiniteConfig { points: pts })
            }
        }
    }

    /// `η \ x`; unchanged if `x ∉ η`.
    pub fn without(&self, p: &Point) -> Self {
        match self.points.binary_search_by(|q| q.lex_cmp(p)) {
            Ok(i) => {
                let mut pts = self.points.clone();
                pts.remove(i);
                FiniteConfig { points: pts }
            }
            Err(_) => self.clone(),
        }
    }

    pub fn without_index(&self, i: usize) -> Self {
        let mut pts = self.points.clone();
        pts.remove(i);
        FiniteConfig { points: pts }
    }

    /// Union of disjoint configurations.
    pub fn union(&self, other: &FiniteConfig) -> Result<Self> {
        let mut pts = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.len() && j < other.len() {
            match self.points[i].lex_cmp(&other.points[j]) {
                Ordering::Less => {
                    pts.push(self.points[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    pts.push(other.points[j]);
                    j += 1;
                }
                Ordering::Equal => return Err(Error::DuplicatePoint),
            }
        }
        pts.extend_from_slice(&self.points[i..]);
        pts.extend_from_slice(&other.points[j..]);
        Ok(FiniteConfig { points: pts })
    }

    /// Sub-configuration selected by bit mask over the canonical order.
    pub fn subset_mask(&self, mask: u64) -> Self {
        let pts = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, p)| *p)
            .collect();
        FiniteConfig { points: pts }
    }

    pub fn is_subset_of(&self, other: &FiniteConfig) -> bool {
        self.points.iter().all(|p| other.contains(p))
    }

    pub fn inside(&self, w: &Window) -> bool {
        self.points.iter().all(|p| w.contains(p))
    }
}

impl<'a> IntoIterator for &'a FiniteConfig {
    type Item = &'a Point;
    type IntoIter = std::slice::Iter<'a, Point>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

fn check_cap(order: usize, cap: usize) -> Result<()> {
    if order > cap || order >= 64 {
        Err(Error::OrderCapExceeded { order, cap })
    } else {
        Ok(())
    }
}

/// All `2^|η|` sub-configurations, by increasing bit mask.
pub fn subconfigs(eta: &FiniteConfig, cap: usize) -> Result<impl Iterator<Item = FiniteConfig> + '_> {
    check_cap(eta.len(), cap)?;
    let n = eta.len();
    Ok((0..(1u64 << n)).map(move |m| eta.subset_mask(m)))
}

/// All ordered `n`-tuples of disjoint parts whose union is `η`.
pub fn partitions(eta: &FiniteConfig, n: usize, cap: usize) -> Result<Vec<Vec<FiniteConfig>>> {
    if n == 0 {
        return Err(Error::InvalidInput("partition into zero parts".into()));
    }
    check_cap(eta.len(), cap)?;
    let m = eta.len();
    let total = n.checked_pow(m as u32).ok_or(Error::OrderCapExceeded { order: m, cap })?;
    let mut out = Vec::with_capacity(total);
    let mut assign = vec![0usize; m];
    for _ in 0..total {
        let mut parts: Vec<Vec<Point>> = vec![Vec::new(); n];
        for (i, &a) in assign.iter().enumerate() {
            parts[a].push(eta.points[i]);
        }
        out.push(parts.into_iter().map(FiniteConfig::from_sorted_unchecked).collect());
        for a in assign.iter_mut() {
            *a += 1;
            if *a < n {
                break;
            }
            *a = 0;
        }
    }
    Ok(out)
}

/// `e_λ(f, η) = Π_{x∈η} f(x)`.
pub fn coherent_state<F: Fn(&Point) -> f64 + ?Sized>(f: &F, eta: &FiniteConfig) -> Result<f64> {
    let mut acc = 1.0;
    for p in eta {
        let v = f(p);
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(format!("coherent factor {v} at {p:?}")));
        }
        acc *= v;
    }
    Ok(acc)
}

/// Energy value in ℝ ∪ {+∞}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn from_f64(v: f64) -> Result<Self> {
        if v.is_nan() {
            Err(Error::NonFiniteValue("NaN energy".into()))
        } else if v == f64::INFINITY {
            Ok(ExtReal::Infinite)
        } else if v == f64::NEG_INFINITY {
            Err(Error::NonFiniteValue("energy -inf".into()))
        } else {
            Ok(ExtReal::Finite(v))
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            ExtReal::Finite(v) => *v,
            ExtReal::Infinite => f64::INFINITY,
        }
    }

    /// `e^{−s E}`; exactly 0 for infinite energy when `s > 0`.
    pub fn boltzmann(&self, s: f64) -> f64 {
        match self {
            ExtReal::Finite(v) => (-s * v).exp(),
            ExtReal::Infinite if s > 0.0 => 0.0,
            ExtReal::Infinite if s == 0.0 => 1.0,
            ExtReal::Infinite => f64::INFINITY,
        }
    }
}

impl std::ops::Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

pub type PointFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// Even pair potential `φ` with `φ ≥ −2B`.
#[derive(Clone)]
pub struct PairPotential {
    phi: PointFn,
    lower_bound: f64,
    range: Option<f64>,
}

impl fmt::Debug for PairPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairPotential")
            .field("lower_bound", &self.lower_bound)
            .field("range", &self.range)
            .finish()
    }
}

impl PairPotential {
    pub fn new(phi: PointFn, lower_bound: f64, range: Option<f64>) -> Result<Self> {
        if !(lower_bound >= 0.0) || !lower_bound.is_finite() {
            return Err(Error::InvalidInput(format!("lower bound {lower_bound} must be finite and >= 0")));
        }
        Ok(PairPotential { phi, lower_bound, range })
    }

    pub fn zero() -> Self {
        PairPotential { phi: Arc::new(|_| 0.0), lower_bound: 0.0, range: Some(0.0) }
    }

    pub fn eval(&self, u: &Point) -> f64 {
        (self.phi)(u)
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn range(&self) -> Option<f64> {
        self.range
    }

    pub fn is_nonnegative(&self) -> bool {
        self.lower_bound == 0.0
    }

    /// Check symmetry and the lower bound on `samples` random displacements.
    pub fn check<R: Rng + ?Sized>(&self, window: &Window, samples: usize, rng: &mut R) -> Result<()> {
        let c = window.center();
        for _ in 0..samples {
            let u = window.displacement(&window.sample_uniform(rng), &c);
            let (a, b) = (self.eval(&u), self.eval(&u.neg()));
            if a.is_nan() || b.is_nan() {
                return Err(Error::NonFiniteValue("pair potential NaN".into()));
            }
            if a != b && (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
                return Err(Error::InvalidInput(format!("pair potential not even at {u:?}")));
            }
            if a < -2.0 * self.lower_bound {
                return Err(Error::InvalidInput(format!("pair potential {a} below -2B at {u:?}")));
            }
        }
        Ok(())
    }
}

fn energy_sum(phi: &PairPotential, x: &Point, eta: &FiniteConfig, disp: impl Fn(&Point, &Point) -> Point) -> Result<ExtReal> {
    let mut acc = ExtReal::Finite(0.0);
    for y in eta {
        acc = acc + ExtReal::from_f64(phi.eval(&disp(x, y)))?;
    }
    Ok(acc)
}

/// `E(x, η) = Σ_{y∈η} φ(x − y)`; `x` itself is not removed from `η`.
pub fn relative_energy(phi: &PairPotential, x: &Point, eta: &FiniteConfig) -> Result<ExtReal> {
    energy_sum(phi, x, eta, |a, b| a.sub(b))
}

/// As [`relative_energy`] with window displacements (minimum image on a torus).
pub fn relative_energy_in(window: &Window, phi: &PairPotential, x: &Point, eta: &FiniteConfig) -> Result<ExtReal> {
    energy_sum(phi, x, eta, |a, b| window.displacement(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn pt(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    fn cfg(xs: &[f64]) -> FiniteConfig {
        FiniteConfig::new(xs.iter().map(|&x| pt(&[x])).collect()).unwrap()
    }

    #[test]
    fn subconfig_examples() {
        assert_eq!(subconfigs(&FiniteConfig::empty(), 20).unwrap().collect::<Vec<_>>(), vec![FiniteConfig::empty()]);
        let a = cfg(&[0.5]);
        let subs: Vec<_> = subconfigs(&a, 20).unwrap().collect();
        assert_eq!(subs, vec![FiniteConfig::empty(), a.clone()]);
        let three = cfg(&[0.1, 0.2, 0.3]);
        let set: HashSet<_> = subconfigs(&three, 20).unwrap().collect();
        assert_eq!(set.len(), 8);
        assert!(matches!(subconfigs(&three, 2), Err(Error::OrderCapExceeded { order: 3, cap: 2 })));
    }

    #[test]
    fn partition_examples() {
        let p = partitions(&FiniteConfig::empty(), 3, 6).unwrap();
        assert_eq!(p, vec![vec![FiniteConfig::empty(); 3]]);
        assert_eq!(partitions(&cfg(&[1.0, 2.0]), 3, 6).unwrap().len(), 9);
        let a = cfg(&[1.0]);
        let p = partitions(&a, 2, 6).unwrap();
        assert_eq!(p, vec![vec![a.clone(), FiniteConfig::empty()], vec![FiniteConfig::empty(), a.clone()]]);
        assert!(partitions(&a, 0, 6).is_err());
    }

    #[test]
    fn coherent_examples() {
        assert_eq!(coherent_state(&|_: &Point| 7.0, &FiniteConfig::empty()).unwrap(), 1.0);
        assert_eq!(coherent_state(&|_: &Point| 0.0, &cfg(&[1.0])).unwrap(), 0.0);
        assert_eq!(coherent_state(&|_: &Point| 2.0, &cfg(&[1.0, 2.0, 3.0])).unwrap(), 8.0);
        assert!(coherent_state(&|_: &Point| f64::NAN, &cfg(&[1.0])).is_err());
    }

    #[test]
    fn energy_examples() {
        let gauss = PairPotential::new(Arc::new(|u: &Point| (-u.norm().powi(2)).exp()), 0.0, None).unwrap();
        let x = pt(&[0.0, 0.0]);
        assert_eq!(relative_energy(&gauss, &x, &FiniteConfig::empty()).unwrap(), ExtReal::Finite(0.0));
        let eta = FiniteConfig::from_coords(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let e = relative_energy(&gauss, &x, &eta).unwrap().value();
        assert!((e - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(relative_energy(&PairPotential::zero(), &x, &eta).unwrap(), ExtReal::Finite(0.0));
        let hard = PairPotential::new(Arc::new(|u: &Point| if u.norm() < 2.0 { f64::INFINITY } else { 0.0 }), 0.0, Some(2.0)).unwrap();
        let e = relative_energy(&hard, &x, &eta).unwrap();
        assert_eq!(e, ExtReal::Infinite);
        assert_eq!(e.boltzmann(1.0), 0.0);
        let nan = PairPotential::new(Arc::new(|_: &Point| f64::NAN), 0.0, None).unwrap();
        assert!(relative_energy(&nan, &x, &eta).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        assert_eq!(FiniteConfig::new(vec![pt(&[1.0]), pt(&[1.0])]), Err(Error::DuplicatePoint));
        assert!(cfg(&[1.0]).with(pt(&[1.0])).is_err());
        assert!(Point::new(&[f64::NAN]).is_err());
        assert!(Point::new(&[0.0; 4]).is_err());
    }

    #[test]
    fn window_geometry() {
        let w = Window::periodic(&[0.0], &[10.0]).unwrap();
        let u = w.displacement(&pt(&[9.5]), &pt(&[0.5]));
        assert!((u.coord(0) + 1.0).abs() < 1e-12);
        assert_eq!(w.wrap(&pt(&[10.25])).unwrap(), pt(&[0.25]));
        assert_eq!(w.wrap(&pt(&[-0.5])).unwrap(), pt(&[9.5]));
        let o = Window::open(&[0.0], &[10.0]).unwrap();
        assert!(o.wrap(&pt(&[10.5])).is_none());
        assert!((o.displacement(&pt(&[9.5]), &pt(&[0.5])).coord(0) - 9.0).abs() < 1e-12);
        assert!(Window::periodic(&[1.0], &[1.0]).is_err());
        let json = serde_json::json!({"lower": [0.0, 0.0], "upper": [2.0, 3.0]});
        let w2: Window = serde_json::from_value(json).unwrap();
        assert_eq!(w2.volume(), 6.0);
        assert_eq!(w2.boundary(), Boundary::Periodic);
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::hash_set(-1000i32..1000, 0..=max).prop_map(|s| s.into_iter().map(|v| v as f64 / 7.0).collect())
    }

    proptest! {
        #[test]
        fn canonical_order_invariant(xs in arb_points(8), seed in 0u64..1000) {
            let a = cfg(&xs);
            let mut ys = xs.clone();
            let n = ys.len();
            if n > 1 { ys.rotate_left(seed as usize % n); ys.reverse(); }
            prop_assert_eq!(a, cfg(&ys));
        }

        #[test]
        fn subconfigs_distinct(xs in arb_points(10)) {
            let eta = cfg(&xs);
            let set: HashSet<_> = subconfigs(&eta, 20).unwrap().collect();
            prop_assert_eq!(set.len(), 1usize << xs.len());
        }

        #[test]
        fn partitions_cover(xs in arb_points(6), n in 1usize..=4) {
            let eta = cfg(&xs);
            let parts = partitions(&eta, n, 6).unwrap();
            prop_assert_eq!(parts.len(), n.pow(xs.len() as u32));
            for tuple in parts {
                let mut u = FiniteConfig::empty();
                for p in &tuple { u = u.union(p).unwrap(); }
                prop_assert_eq!(&u, &eta);
            }
        }

        #[test]
        fn coherent_multiplicative(xs in arb_points(8), split in 0u64..256) {
            let eta = cfg(&xs);
            let m = split & ((1u64 << xs.len()) - 1);
            let a = eta.subset_mask(m);
            let b = eta.subset_mask(!m & ((1u64 << xs.len()) - 1));
            let f = |p: &Point| 1.0 + 0.3 * p.coord(0).sin();
            let whole = coherent_state(&f, &eta).unwrap();
            let prod = coherent_state(&f, &a).unwrap() * coherent_state(&f, &b).unwrap();
            prop_assert!((whole - prod).abs() <= 1e-13 * whole.abs().max(1.0));
        }

        #[test]
        fn energy_additive(xs in arb_points(8), split in 0u64..256, x in -50.0f64..50.0) {
            let phi = PairPotential::new(Arc::new(|u: &Point| (-u.norm()).exp()), 0.0, None).unwrap();
            let eta = cfg(&xs);
            let full = (1u64 << xs.len()) - 1;
            let a = eta.subset_mask(split & full);
            let b = eta.subset_mask(!split & full);
            let p = pt(&[x]);
            let e = relative_energy(&phi, &p, &eta).unwrap().value();
            let s = relative_energy(&phi, &p, &a).unwrap().value() + relative_energy(&phi, &p, &b).unwrap().value();
            prop_assert!((e - s).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }
}

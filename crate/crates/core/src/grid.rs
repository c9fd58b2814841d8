//! Dyadic cube geometry on the half-open unit cube `[0,1)^n`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const MAX_DIM: usize = 3;
pub const MAX_DEPTH: u32 = 24;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("dimension {0} outside 1..=3")]
    Dimension(usize),
    #[error("depth {0} outside 1..=24")]
    Depth(u32),
    #[error("depth exceeded: level {level} > {depth}")]
    DepthExceeded { level: u32, depth: u32 },
    #[error("coordinate {coord} out of range at level {level}")]
    Coord { coord: u64, level: u32 },
    #[error("point not in cube {0}")]
    PointOutside(String),
    #[error("bad cube literal {0:?}: {1}")]
    Parse(String, String),
}

/// A point of the domain. Unused trailing coordinates are zero.
pub type Point = [f64; MAX_DIM];

/// Dyadic cube: `prod [c_j 2^-level, (c_j+1) 2^-level)`.
///
/// Ordering is (level, coords) lexicographic, which is what argmax tie-breaks use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CubeId {
    level: u32,
    dim: u8,
    coords: [u32; MAX_DIM],
}

impl CubeId {
    pub fn new(level: u32, coords: &[u32]) -> Result<Self, GridError> {
        let dim = coords.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(GridError::Dimension(dim));
        }
        if level > MAX_DEPTH {
            return Err(GridError::Depth(level));
        }
        let mut c = [0u32; MAX_DIM];
        for (j, &x) in coords.iter().enumerate() {
            if (x as u64) >= (1u64 << level) {
                return Err(GridError::Coord { coord: x as u64, level });
            }
            c[j] = x;
        }
        Ok(CubeId { level, dim: dim as u8, coords: c })
    }

    pub fn root(dim: usize) -> Self {
        CubeId { level: 0, dim: dim as u8, coords: [0; MAX_DIM] }
    }

    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn dim(&self) -> usize {
        self.dim as usize
    }
    pub fn coords(&self) -> &[u32] {
        &self.coords[..self.dim()]
    }
    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }
    /// Lebesgue measure `|I| = ℓ(I)^n`.
    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim() as i32)
    }
    pub fn lower(&self) -> Point {
        let h = self.side();
        let mut p = [0.0; MAX_DIM];
        for j in 0..self.dim() {
            p[j] = self.coords[j] as f64 * h;
        }
        p
    }
    pub fn upper(&self) -> Point {
        let h = self.side();
        let mut p = [0.0; MAX_DIM];
        for j in 0..self.dim() {
            p[j] = (self.coords[j] as f64 + 1.0) * h;
        }
        p
    }
    pub fn center(&self) -> Point {
        let h = self.side();
        let mut p = [0.0; MAX_DIM];
        for j in 0..self.dim() {
            p[j] = (self.coords[j] as f64 + 0.5) * h;
        }
        p
    }

    pub fn contains_point(&self, x: &Point) -> bool {
        let (lo, hi) = (self.lower(), self.upper());
        (0..self.dim()).all(|j| lo[j] <= x[j] && x[j] < hi[j])
    }

    /// `other ⊆ self`.
    pub fn contains(&self, other: &CubeId) -> bool {
        if other.level < self.level || other.dim != self.dim {
            return false;
        }
        let s = other.level - self.level;
        (0..self.dim()).all(|j| other.coords[j] >> s == self.coords[j])
    }

    pub fn parent(&self) -> Option<CubeId> {
        self.ancestor(self.level.checked_sub(1)?)
    }

    pub fn ancestor(&self, level: u32) -> Option<CubeId> {
        if level > self.level {
            return None;
        }
        let s = self.level - level;
        let mut c = self.coords;
        for x in c.iter_mut().take(self.dim()) {
            *x >>= s;
        }
        Some(CubeId { level, dim: self.dim, coords: c })
    }

    /// The `2^n` children, ordered by their child index (bit j = upper half in direction j).
    pub fn children_unchecked(&self) -> Vec<CubeId> {
        let n = self.dim();
        (0..1u32 << n)
            .map(|b| {
                let mut c = self.coords;
                for (j, x) in c.iter_mut().enumerate().take(n) {
                    *x = 2 * *x + ((b >> j) & 1);
                }
                CubeId { level: self.level + 1, dim: self.dim, coords: c }
            })
            .collect()
    }

    /// The child of `self` containing `other`, if `other` is strictly inside.
    pub fn child_toward(&self, other: &CubeId) -> Option<CubeId> {
        if other.level <= self.level || !self.contains(other) {
            return None;
        }
        other.ancestor(self.level + 1)
    }

    pub fn closures_intersect(&self, other: &CubeId) -> bool {
        self.dist_linf(other) == 0.0
    }

    /// Interiors disjoint (for dyadic cubes: neither contains the other).
    pub fn disjoint(&self, other: &CubeId) -> bool {
        !self.contains(other) && !other.contains(self)
    }

    /// ℓ∞ distance between the closures.
    pub fn dist_linf(&self, other: &CubeId) -> f64 {
        let (a0, a1, b0, b1) = (self.lower(), self.upper(), other.lower(), other.upper());
        (0..self.dim())
            .map(|j| (a0[j] - b1[j]).max(b0[j] - a1[j]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// ℓ∞ distance from `inner` to the boundary of `self`; assumes `inner ⊆ self`.
    pub fn dist_to_boundary(&self, inner: &CubeId) -> f64 {
        let (a0, a1, b0, b1) = (self.lower(), self.upper(), inner.lower(), inner.upper());
        (0..self.dim())
            .map(|j| (b0[j] - a0[j]).min(a1[j] - b1[j]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Concentric dilate by `t`, clipped to the domain.
    pub fn dilate(&self, t: f64) -> Region {
        let c = self.center();
        let r = 0.5 * t * self.side();
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for j in 0..self.dim() {
            lo[j] = (c[j] - r).max(0.0);
            hi[j] = (c[j] + r).min(1.0);
        }
        Region { dim: self.dim(), lo, hi }
    }

    pub fn region(&self) -> Region {
        Region { dim: self.dim(), lo: self.lower(), hi: self.upper() }
    }
}

impl fmt::Display for CubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.level)?;
        for (j, c) in self.coords().iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for CubeId {
    type Err = GridError;
    fn from_str(s: &str) -> Result<Self, GridError> {
        let bad = |m: &str| GridError::Parse(s.to_string(), m.to_string());
        let (lv, cs) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let level: u32 = lv.trim().parse().map_err(|_| bad("level is not an integer"))?;
        let coords = cs
            .split(',')
            .map(|c| c.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("coordinate is not an integer"))?;
        CubeId::new(level, &coords).map_err(|e| bad(&e.to_string()))
    }
}

impl Serialize for CubeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CubeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Axis-parallel half-open box `prod [lo_j, hi_j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
}

impl Region {
    pub fn contains_point(&self, x: &Point) -> bool {
        (0..self.dim).all(|j| self.lo[j] <= x[j] && x[j] < self.hi[j])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub depth: u32,
}

impl GridSpec {
    pub fn new(dim: usize, depth: u32) -> Result<Self, GridError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GridError::Dimension(dim));
        }
        if depth == 0 || depth > MAX_DEPTH {
            return Err(GridError::Depth(depth));
        }
        Ok(GridSpec { dim, depth })
    }

    pub fn root(&self) -> CubeId {
        CubeId::root(self.dim)
    }

    pub fn children(&self, i: &CubeId) -> Result<Vec<CubeId>, GridError> {
        if i.level >= self.depth {
            return Err(GridError::DepthExceeded { level: i.level + 1, depth: self.depth });
        }
        Ok(i.children_unchecked())
    }

    /// Every cube at `level`, coordinates in lexicographic order (last coordinate fastest).
    pub fn cubes_at(&self, level: u32) -> Vec<CubeId> {
        let m = 1u32 << level;
        let n = self.dim;
        let total = (m as usize).pow(n as u32);
        (0..total)
            .map(|mut k| {
                let mut c = [0u32; MAX_DIM];
                for j in (0..n).rev() {
                    c[j] = (k % m as usize) as u32;
                    k /= m as usize;
                }
                CubeId { level, dim: n as u8, coords: c }
            })
            .collect()
    }

    /// Cubes of levels `0..=max_level`, level-major.
    pub fn all_cubes(&self, max_level: u32) -> Vec<CubeId> {
        (0..=max_level.min(self.depth)).flat_map(|l| self.cubes_at(l)).collect()
    }

    /// Cubes `J ⊆ f` at levels `f.level..=max_level`, level-major.
    pub fn descendants(&self, f: &CubeId, max_level: u32) -> Vec<CubeId> {
        let mut out = vec![*f];
        let mut frontier = vec![*f];
        for _ in f.level..max_level.min(self.depth) {
            frontier = frontier.iter().flat_map(|c| c.children_unchecked()).collect();
            out.extend_from_slice(&frontier);
        }
        out
    }

    /// `Adj_ρ(I)`: cubes with `2^-ρ ≤ ℓ(J)/ℓ(I) ≤ 2^ρ` whose closure meets the closure of `I`.
    pub fn adjacent(&self, i: &CubeId, rho: u32) -> Vec<CubeId> {
        let lo_level = i.level.saturating_sub(rho);
        let hi_level = (i.level + rho).min(self.depth);
        let n = self.dim;
        let mut out = Vec::new();
        for m in lo_level..=hi_level {
            let fine = m.max(i.level);
            let h = 1u64 << (fine - m);
            let mut ranges = [(0u64, 0u64); MAX_DIM];
            for (j, r) in ranges.iter_mut().enumerate().take(n) {
                let a = (i.coords[j] as u64) << (fine - i.level);
                let b = (i.coords[j] as u64 + 1) << (fine - i.level);
                let cmin = (a.div_ceil(h)).saturating_sub(1);
                let cmax = (b / h).min((1u64 << m) - 1);
                *r = (cmin, cmax);
            }
            let mut c = [0u32; MAX_DIM];
            product(&ranges[..n], 0, &mut c, &mut |c| {
                out.push(CubeId { level: m, dim: n as u8, coords: *c });
            });
        }
        out
    }

    /// `J ⋐_{ρ,ε} I`: `J ⊆ I`, `ℓ(J) ≤ 2^-ρ ℓ(I)`, `dist(J,∂I) > 2√n ℓ(J)^ε ℓ(I)^(1-ε)`.
    pub fn deeply_embedded(&self, j: &CubeId, i: &CubeId, rho: u32, eps: f64) -> bool {
        deeply_embedded(j, i, rho, eps)
    }

    /// The cube `J_x^[s] ⊆ J` containing `x` with side `2^-s ℓ(J)`.
    pub fn tower(&self, x: &Point, j: &CubeId, s: u32) -> Result<CubeId, GridError> {
        if !j.contains_point(x) {
            return Err(GridError::PointOutside(j.to_string()));
        }
        if j.level + s > self.depth {
            return Err(GridError::DepthExceeded { level: j.level + s, depth: self.depth });
        }
        Ok(locate(x, j.level + s, self.dim))
    }

    pub fn locate(&self, x: &Point, level: u32) -> CubeId {
        locate(x, level, self.dim)
    }
}

pub fn deeply_embedded(j: &CubeId, i: &CubeId, rho: u32, eps: f64) -> bool {
    if !i.contains(j) || j.level < i.level + rho {
        return false;
    }
    let n = i.dim() as f64;
    let margin = 2.0 * n.sqrt() * j.side().powf(eps) * i.side().powf(1.0 - eps);
    i.dist_to_boundary(j) > margin
}

/// The level-`level` cube containing `x` (coordinates clamped into the domain).
pub fn locate(x: &Point, level: u32, dim: usize) -> CubeId {
    let m = 1u64 << level;
    let mut c = [0u32; MAX_DIM];
    for j in 0..dim {
        let k = (x[j] * m as f64).floor();
        c[j] = k.clamp(0.0, (m - 1) as f64) as u32;
    }
    CubeId { level, dim: dim as u8, coords: c }
}

fn product(ranges: &[(u64, u64)], j: usize, c: &mut [u32; MAX_DIM], f: &mut impl FnMut(&[u32; MAX_DIM])) {
    if j == ranges.len() {
        f(c);
        return;
    }
    for v in ranges[j].0..=ranges[j].1 {
        c[j] = v as u32;
        product(ranges, j + 1, c, f);
    }
}

pub fn point(xs: &[f64]) -> Point {
    let mut p = [0.0; MAX_DIM];
    p[..xs.len()].copy_from_slice(xs);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CubeId {
        s.parse().unwrap()
    }

    #[test]
    fn children_of_unit_interval() {
        let g = GridSpec::new(1, 3).unwrap();
        assert_eq!(g.children(&g.root()).unwrap(), vec![c("1:0"), c("1:1")]);
    }

    #[test]
    fn children_2d_quadrants() {
        let g = GridSpec::new(2, 3).unwrap();
        let ch = g.children(&c("1:0,0")).unwrap();
        assert_eq!(ch.len(), 4);
        for k in &ch {
            assert_eq!(k.side(), 0.25);
            assert_eq!(k.parent().unwrap(), c("1:0,0"));
        }
    }

    #[test]
    fn children_at_depth_errors() {
        let g = GridSpec::new(1, 2).unwrap();
        assert!(matches!(g.children(&c("2:3")), Err(GridError::DepthExceeded { .. })));
    }

    fn adjacent_oracle(g: &GridSpec, i: &CubeId, rho: u32) -> Vec<CubeId> {
        let lo = i.level.saturating_sub(rho);
        let hi = (i.level + rho).min(g.depth);
        (lo..=hi)
            .flat_map(|l| g.cubes_at(l))
            .filter(|j| {
                let (a0, a1, b0, b1) = (i.lower(), i.upper(), j.lower(), j.upper());
                (0..g.dim).all(|k| a0[k] <= b1[k] && b0[k] <= a1[k])
            })
            .collect()
    }

    #[test]
    fn adjacent_examples() {
        let g = GridSpec::new(1, 4).unwrap();
        assert_eq!(g.adjacent(&c("1:0"), 0), vec![c("1:0"), c("1:1")]);
        assert_eq!(g.adjacent(&g.root(), 0), vec![g.root()]);
        let i = c("2:1");
        assert_eq!(g.adjacent(&i, 1), adjacent_oracle(&g, &i, 1));
    }

    #[test]
    fn adjacent_matches_enumeration_2d() {
        let g = GridSpec::new(2, 4).unwrap();
        for i in g.all_cubes(3) {
            for rho in 0..3 {
                assert_eq!(g.adjacent(&i, rho), adjacent_oracle(&g, &i, rho), "{i} {rho}");
            }
        }
    }

    #[test]
    fn deep_embedding_examples() {
        let g = GridSpec::new(1, 8).unwrap();
        let root = g.root();
        assert!(!g.deeply_embedded(&c("4:8"), &root, 2, 0.5));
        assert!(g.deeply_embedded(&c("5:16"), &root, 2, 0.5));
        assert!(!g.deeply_embedded(&c("5:16"), &c("1:0"), 2, 0.5));
    }

    #[test]
    fn tower_examples() {
        let g = GridSpec::new(1, 6).unwrap();
        let x = point(&[0.3]);
        assert_eq!(g.tower(&x, &g.root(), 2).unwrap(), c("2:1"));
        assert_eq!(g.tower(&x, &g.root(), 0).unwrap(), g.root());
        assert_eq!(g.tower(&x, &g.root(), 3).unwrap(), c("3:2"));
        assert!(g.tower(&x, &g.root(), 7).is_err());
    }

    #[test]
    fn distances() {
        assert_eq!(c("2:0").dist_linf(&c("2:2")), 0.25);
        assert_eq!(c("2:0").dist_linf(&c("2:1")), 0.0);
        assert_eq!(c("1:0,0").dist_linf(&c("1:1,1")), 0.0);
        assert_eq!(c("2:0,0").dist_linf(&c("2:2,3")), 0.5);
    }

    #[test]
    fn literal_round_trip() {
        for s in ["0:0", "2:1", "1:0,1", "3:7,0,5"] {
            assert_eq!(c(s).to_string(), s);
        }
        assert!("2:4".parse::<CubeId>().is_err());
        assert!("x:1".parse::<CubeId>().is_err());
        assert_eq!(c("1:0,1").lower(), point(&[0.0, 0.5]));
    }
}

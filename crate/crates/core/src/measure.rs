//! Finite atomic measures, closed-form 1-D densities, doubling diagnostics and generators.

use crate::grid::{locate, CubeId, GridSpec, Point, Region, MAX_DEPTH, MAX_DIM};
use crate::poly::{monomials_at, multi_indices, MultiIndex};
use crate::quad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error(transparent)]
    Quad(#[from] quad::QuadError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

fn field_err(field: &str, msg: impl Into<String>) -> MeasureError {
    MeasureError::Field { field: field.to_string(), msg: msg.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Point,
    pub m: f64,
}

/// Finite sum of point masses on `[0,1)^n`.
///
/// Atoms are stored in Morton (Z-curve) order at depth 24, so the atoms of any dyadic
/// cube occupy one contiguous index range. Functions on the measure are `Vec<f64>`
/// aligned with this order.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    keys: Vec<u128>,
    /// `order[i]` = position of sorted atom `i` in the constructor input.
    order: Vec<usize>,
}

fn interleave(coords: &[u32], bits: u32) -> u128 {
    let mut key = 0u128;
    for b in (0..bits).rev() {
        for c in coords {
            key = (key << 1) | ((c >> b) & 1) as u128;
        }
    }
    key
}

fn point_key(x: &Point, dim: usize) -> u128 {
    let c = locate(x, MAX_DEPTH, dim);
    interleave(c.coords(), MAX_DEPTH)
}

fn cube_keys(cube: &CubeId) -> (u128, u128) {
    let shift = cube.dim() as u32 * (MAX_DEPTH - cube.level());
    let prefix = interleave(cube.coords(), cube.level());
    (prefix << shift, (prefix + 1) << shift)
}

fn cube_of_key(key: u128, level: u32, dim: usize) -> CubeId {
    let mut c = [0u32; MAX_DIM];
    let total = dim as u32 * MAX_DEPTH;
    for b in 0..level {
        for (j, cj) in c.iter_mut().enumerate().take(dim) {
            let pos = total - 1 - (b * dim as u32 + j as u32);
            *cj = (*cj << 1) | ((key >> pos) & 1) as u32;
        }
    }
    CubeId::new(level, &c[..dim]).expect("key decodes inside the grid")
}

impl AtomicMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self, MeasureError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(field_err("n", format!("dimension {dim} outside 1..=3")));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.m > 0.0 && a.m.is_finite()) {
                return Err(field_err(&format!("atoms[{i}].m"), "mass must be positive and finite"));
            }
            if !(0..dim).all(|j| (0.0..1.0).contains(&a.x[j])) {
                return Err(field_err(&format!("atoms[{i}].x"), "point outside [0,1)^n"));
            }
        }
        let mut idx: Vec<usize> = (0..atoms.len()).collect();
        let raw: Vec<u128> = atoms.iter().map(|a| point_key(&a.x, dim)).collect();
        idx.sort_by(|&a, &b| raw[a].cmp(&raw[b]).then(a.cmp(&b)));
        Ok(AtomicMeasure {
            dim,
            atoms: idx.iter().map(|&i| atoms[i]).collect(),
            keys: idx.iter().map(|&i| raw[i]).collect(),
            order: idx,
        })
    }

    pub fn empty(dim: usize) -> Self {
        AtomicMeasure { dim, atoms: Vec::new(), keys: Vec::new(), order: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.atoms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
    pub fn point(&self, i: usize) -> &Point {
        &self.atoms[i].x
    }
    pub fn mass(&self, i: usize) -> f64 {
        self.atoms[i].m
    }
    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.m).collect()
    }
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.m).sum()
    }

    /// Reorders values given in constructor order into storage order.
    pub fn from_input_order(&self, values: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| values[i]).collect()
    }

    /// Index range of the atoms lying in `cube`.
    pub fn range(&self, cube: &CubeId) -> Range<usize> {
        let (lo, hi) = cube_keys(cube);
        let a = self.keys.partition_point(|&k| k < lo);
        let b = self.keys.partition_point(|&k| k < hi);
        a..b
    }

    pub fn cube_mass(&self, cube: &CubeId) -> f64 {
        self.atoms[self.range(cube)].iter().map(|a| a.m).sum()
    }

    pub fn region_mass(&self, r: &Region) -> f64 {
        self.atoms.iter().filter(|a| r.contains_point(&a.x)).map(|a| a.m).sum()
    }

    /// `|2Q|_μ` for the concentric double clipped to the domain, as a union of level+1 cubes.
    pub fn double_mass(&self, q: &CubeId) -> f64 {
        let l = q.level() + 1;
        let top = (1i64 << l) - 1;
        let n = self.dim;
        let mut ranges = [(0i64, 0i64); MAX_DIM];
        for j in 0..n {
            let c = q.coords()[j] as i64;
            ranges[j] = ((2 * c - 1).max(0), (2 * c + 2).min(top));
        }
        let mut total = 0.0;
        let mut c = [0u32; MAX_DIM];
        fn rec(m: &AtomicMeasure, r: &[(i64, i64)], j: usize, c: &mut [u32; MAX_DIM], l: u32, acc: &mut f64) {
            if j == r.len() {
                let cube = CubeId::new(l, &c[..r.len()]).unwrap();
                *acc += m.cube_mass(&cube);
                return;
            }
            for v in r[j].0..=r[j].1 {
                c[j] = v as u32;
                rec(m, r, j + 1, c, l, acc);
            }
        }
        rec(self, &ranges[..n], 0, &mut c, l, &mut total);
        total
    }

    /// Cubes at `level` that contain atoms, with their index ranges, in storage order.
    pub fn nonempty_cubes(&self, level: u32) -> Vec<(CubeId, Range<usize>)> {
        let shift = self.dim as u32 * (MAX_DEPTH - level);
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.len() {
            let p = self.keys[start] >> shift;
            let mut end = start + 1;
            while end < self.len() && self.keys[end] >> shift == p {
                end += 1;
            }
            out.push((cube_of_key(self.keys[start], level, self.dim), start..end));
            start = end;
        }
        out
    }

    /// `∫_I ((x - c_I)/ℓ(I))^β dμ` for `|β| ≤ d`.
    pub fn moments(&self, cube: &CubeId, d: u32) -> Vec<(MultiIndex, f64)> {
        let betas = multi_indices(self.dim, d);
        let mut acc = vec![0.0; betas.len()];
        for a in &self.atoms[self.range(cube)] {
            for (s, v) in acc.iter_mut().zip(monomials_at(cube, &betas, &a.x)) {
                *s += a.m * v;
            }
        }
        betas.into_iter().zip(acc).collect()
    }

    /// Same atoms with every mass multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.atoms {
            a.m *= c;
        }
        out
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        self.atoms.iter().zip(f).map(|(a, v)| a.m * v).sum()
    }

    pub fn lp_norm(&self, f: &[f64], p: f64) -> f64 {
        self.atoms.iter().zip(f).map(|(a, v)| a.m * v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }

    /// `E_I^μ |f|`, zero on null cubes.
    pub fn abs_average(&self, cube: &CubeId, f: &[f64]) -> f64 {
        let r = self.range(cube);
        let m: f64 = self.atoms[r.clone()].iter().map(|a| a.m).sum();
        if m <= 0.0 {
            return 0.0;
        }
        self.atoms[r.clone()].iter().zip(&f[r]).map(|(a, v)| a.m * v.abs()).sum::<f64>() / m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    /// `None` when some null cube has a double of positive mass.
    pub constant: Option<f64>,
    pub constant_witness: Option<CubeId>,
    pub theta: Option<f64>,
    pub theta_witness: Option<(CubeId, u32)>,
    pub c: f64,
}

/// `sup_Q |2Q|_μ / |Q|_μ` over dyadic cubes of levels `0..=depth`, with the maximizing cube.
pub fn doubling_constant(mu: &AtomicMeasure, grid: &GridSpec) -> (Option<f64>, Option<CubeId>) {
    let mut best = (0.0f64, None::<CubeId>);
    for level in 0..=grid.depth {
        let mut cand: Vec<CubeId> = mu
            .nonempty_cubes(level)
            .iter()
            .flat_map(|(q, _)| grid.adjacent(q, 0))
            .filter(|c| c.level() == level)
            .collect();
        cand.sort();
        cand.dedup();
        for q in cand {
            let m = mu.cube_mass(&q);
            let d = mu.double_mass(&q);
            if m <= 0.0 {
                if d > 0.0 {
                    return (None, Some(q));
                }
                continue;
            }
            let r = d / m;
            if r > best.0 {
                best = (r, Some(q));
            }
        }
    }
    (Some(best.0.max(1.0)), best.1)
}

/// Doubling exponent along the center-descendant chain, with `c = 1`.
pub fn doubling_exponent(mu: &AtomicMeasure, grid: &GridSpec) -> (Option<f64>, Option<(CubeId, u32)>) {
    let mut theta = 0.0f64;
    let mut wit = None;
    for level in 0..grid.depth {
        for (q, r) in mu.nonempty_cubes(level) {
            let mq: f64 = mu.atoms[r].iter().map(|a| a.m).sum();
            let c = q.center();
            for j in 1..=(grid.depth - level) {
                let d = locate(&c, level + j, grid.dim);
                let md = mu.cube_mass(&d);
                if md <= 0.0 {
                    return (None, Some((q, j)));
                }
                let t = (mq / md).log2() / j as f64;
                if t > theta {
                    theta = t;
                    wit = Some((q, j));
                }
            }
        }
    }
    (Some(theta), wit)
}

pub fn doubling_report(mu: &AtomicMeasure, grid: &GridSpec) -> DoublingReport {
    let (constant, constant_witness) = doubling_constant(mu, grid);
    let (theta, theta_witness) = doubling_exponent(mu, grid);
    DoublingReport { constant, constant_witness, theta, theta_witness, c: 1.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppendixSide {
    Sigma,
    Omega,
}

/// Generator recipes. All atoms sit at centers of depth-`depth` cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MeasureKind {
    Uniform { n: usize, depth: u32 },
    Cascade { n: usize, depth: u32, beta: f64, seed: u64 },
    /// Deterministic 1-D cascade: each parent gives fraction `t` to its left child.
    Binomial { depth: u32, t: f64 },
    /// Density `x^a` on `(0,1)`.
    Power { depth: u32, a: f64 },
    AppendixDiscretized { depth: u32, p: f64, alpha: f64, side: AppendixSide },
    PointMasses { n: usize, atoms: Vec<Atom> },
}

impl MeasureKind {
    pub fn grid(&self) -> Result<GridSpec, MeasureError> {
        let (n, depth) = match self {
            MeasureKind::Uniform { n, depth } | MeasureKind::Cascade { n, depth, .. } => (*n, *depth),
            MeasureKind::Binomial { depth, .. }
            | MeasureKind::Power { depth, .. }
            | MeasureKind::AppendixDiscretized { depth, .. } => (1, *depth),
            MeasureKind::PointMasses { n, .. } => (*n, MAX_DEPTH),
        };
        Ok(GridSpec::new(n, depth)?)
    }
}

fn cell_centers(n: usize, depth: u32, masses: Vec<f64>) -> Result<AtomicMeasure, MeasureError> {
    let g = GridSpec::new(n, depth)?;
    let atoms = g
        .cubes_at(depth)
        .into_iter()
        .zip(masses)
        .filter(|(_, m)| *m > 0.0)
        .map(|(c, m)| Atom { x: c.center(), m })
        .collect();
    AtomicMeasure::new(n, atoms)
}

/// Splits mass level by level; `ratio(cube_index, direction)` returns the lower-half share.
fn cascade_masses(n: usize, depth: u32, mut ratio: impl FnMut() -> Vec<f64>) -> Vec<f64> {
    let mut masses = vec![1.0f64];
    for level in 0..depth {
        let side = 1usize << level;
        let mut next = vec![0.0; masses.len() << n];
        for (k, &m) in masses.iter().enumerate() {
            let r = ratio();
            let mut parent = [0usize; MAX_DIM];
            let mut kk = k;
            for j in (0..n).rev() {
                parent[j] = kk % side;
                kk /= side;
            }
            for b in 0..1usize << n {
                let mut share = m;
                let mut idx = 0usize;
                for j in 0..n {
                    let hi = (b >> j) & 1;
                    share *= if hi == 1 { 1.0 - r[j] } else { r[j] };
                    idx = idx * 2 * side + 2 * parent[j] + hi;
                }
                next[idx] = share;
            }
        }
        masses = next;
    }
    masses
}

pub fn generate(kind: &MeasureKind) -> Result<AtomicMeasure, MeasureError> {
    kind.grid()?;
    match kind {
        MeasureKind::Uniform { n, depth } => {
            let k = 1usize << (*n as u32 * depth);
            cell_centers(*n, *depth, vec![1.0 / k as f64; k])
        }
        MeasureKind::Cascade { n, depth, beta, seed } => {
            if !(*beta > 0.0 && *beta <= 0.5) {
                return Err(field_err("beta", "must lie in (0, 1/2]"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let (lo, hi) = (*beta, 1.0 - *beta);
            let masses = cascade_masses(*n, *depth, || (0..*n).map(|_| rng.gen_range(lo..=hi)).collect());
            cell_centers(*n, *depth, masses)
        }
        MeasureKind::Binomial { depth, t } => {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(field_err("t", "must lie in (0, 1)"));
            }
            cell_centers(1, *depth, cascade_masses(1, *depth, || vec![*t]))
        }
        MeasureKind::Power { depth, a } => {
            let d = DensityMeasure::new(DensityFamily::Power { a: *a })?;
            let h = (-(*depth as f64)).exp2();
            let masses = (0..1usize << depth)
                .map(|k| d.mass(k as f64 * h, (k + 1) as f64 * h))
                .collect::<Result<Vec<_>, _>>()?;
            cell_centers(1, *depth, masses)
        }
        MeasureKind::AppendixDiscretized { depth, p, alpha, side } => {
            let fam = match side {
                AppendixSide::Sigma => DensityFamily::AppendixSigma { p: *p, alpha: *alpha },
                AppendixSide::Omega => DensityFamily::AppendixOmega { p: *p, alpha: *alpha },
            };
            let d = DensityMeasure::new(fam)?;
            let h = (-(*depth as f64)).exp2();
            let half = 1usize << (depth - 1);
            let mut masses = (0..half)
                .map(|k| d.mass(k as f64 * h, (k + 1) as f64 * h))
                .collect::<Result<Vec<_>, _>>()?;
            masses.resize(1 << depth, 0.0);
            cell_centers(1, *depth, masses)
        }
        MeasureKind::PointMasses { n, atoms } => AtomicMeasure::new(*n, atoms.clone()),
    }
}

/// Closed-form 1-D density families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensityFamily {
    /// `1/(x (ln 1/x)^(1+α))` on `(0, 1/2)`.
    AppendixSigma { p: f64, alpha: f64 },
    /// `[x (ln 1/x)^α]^(p-1)` on `(0, 1/2)`.
    AppendixOmega { p: f64, alpha: f64 },
    /// `x^a` on `(0, 1)`.
    Power { a: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMeasure {
    pub family: DensityFamily,
}

impl DensityMeasure {
    pub fn new(family: DensityFamily) -> Result<Self, MeasureError> {
        match family {
            DensityFamily::AppendixSigma { p, alpha } | DensityFamily::AppendixOmega { p, alpha } => {
                if !(p > 1.0) {
                    return Err(field_err("p", "must exceed 1"));
                }
                if !(alpha > 0.0) {
                    return Err(field_err("alpha", "must be positive"));
                }
            }
            DensityFamily::Power { a } => {
                if !(a > -1.0) {
                    return Err(field_err("a", "must exceed -1"));
                }
            }
        }
        Ok(DensityMeasure { family })
    }

    pub fn support(&self) -> (f64, f64) {
        match self.family {
            DensityFamily::Power { .. } => (0.0, 1.0),
            _ => (0.0, 0.5),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x > lo && x < hi) {
            return 0.0;
        }
        match self.family {
            DensityFamily::AppendixSigma { alpha, .. } => {
                let l = -x.ln();
                1.0 / (x * l.powf(1.0 + alpha))
            }
            DensityFamily::AppendixOmega { p, alpha } => (x * (-x.ln()).powf(alpha)).powf(p - 1.0),
            DensityFamily::Power { a } => x.powf(a),
        }
    }

    /// Mass of `(u, v]`, clipped to the support.
    pub fn mass(&self, u: f64, v: f64) -> Result<f64, MeasureError> {
        let (lo, hi) = self.support();
        let (u, v) = (u.max(lo), v.min(hi));
        if v <= u {
            return Ok(0.0);
        }
        match self.family {
            DensityFamily::AppendixSigma { alpha, .. } => Ok(sigma_mass(alpha, u, v)),
            DensityFamily::Power { a } => Ok((v.powf(a + 1.0) - u.powf(a + 1.0)) / (a + 1.0)),
            DensityFamily::AppendixOmega { .. } => {
                let f = |x: f64| self.density(x);
                let rough = 0.5 * (v - u) * (f(u.max(1e-300)) + f(v) + 2.0 * f(0.5 * (u + v)));
                let tol = 1e-13 * rough.abs().max(1e-300);
                Ok(if u == 0.0 { quad::integrate_from_zero(&f, v, tol)? } else { quad::integrate(&f, u, v, tol)? })
            }
        }
    }
}

/// `σ(u, v]` for the appendix density via `G(x) = (ln 1/x)^(-α)/α`, in cancellation-free form.
pub fn sigma_mass(alpha: f64, u: f64, v: f64) -> f64 {
    let lv = -v.ln();
    if u <= 0.0 {
        return lv.powf(-alpha) / alpha;
    }
    let lu = -u.ln();
    let d = ((v - u) / u).ln_1p();
    lv.powf(-alpha) * -(alpha * (-d / lu).ln_1p()).exp_m1() / alpha
}

/// A measure together with the grid it lives on, as read from a measure file.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFile {
    pub grid: GridSpec,
    pub measure: AtomicMeasure,
    pub source: serde_json::Value,
}

fn get_u64(v: &serde_json::Value, k: &str) -> Result<u64, MeasureError> {
    v.get(k).and_then(|x| x.as_u64()).ok_or_else(|| field_err(k, "missing or not a nonnegative integer"))
}
fn get_f64(v: &serde_json::Value, k: &str) -> Result<f64, MeasureError> {
    v.get(k).and_then(|x| x.as_f64()).ok_or_else(|| field_err(k, "missing or not a number"))
}

impl MeasureFile {
    /// Accepts `{n, depth, atoms:[{x, m}]}` or a generator recipe `{family, ...}`.
    pub fn from_json(v: &serde_json::Value) -> Result<Self, MeasureError> {
        if let Some(atoms) = v.get("atoms") {
            let n = get_u64(v, "n")? as usize;
            let depth = get_u64(v, "depth")? as u32;
            let grid = GridSpec::new(n, depth).map_err(|e| field_err("depth", e.to_string()))?;
            let list = atoms.as_array().ok_or_else(|| field_err("atoms", "not an array"))?;
            let mut out = Vec::with_capacity(list.len());
            for (i, a) in list.iter().enumerate() {
                let xs = a
                    .get("x")
                    .and_then(|x| x.as_array())
                    .ok_or_else(|| field_err(&format!("atoms[{i}].x"), "missing or not an array"))?;
                if xs.len() != n {
                    return Err(field_err(&format!("atoms[{i}].x"), format!("expected {n} coordinates")));
                }
                let mut x = [0.0; MAX_DIM];
                for (j, c) in xs.iter().enumerate() {
                    x[j] = c.as_f64().ok_or_else(|| field_err(&format!("atoms[{i}].x[{j}]"), "not a number"))?;
                }
                let m = get_f64(a, "m").map_err(|_| field_err(&format!("atoms[{i}].m"), "missing or not a number"))?;
                out.push(Atom { x, m });
            }
            let measure = AtomicMeasure::new(n, out)?;
            return Ok(MeasureFile { grid, measure, source: v.clone() });
        }
        if v.get("family").is_none() {
            return Err(field_err("family", "expected either `atoms` or a generator `family`"));
        }
        let mut v2 = v.clone();
        if let Some(obj) = v2.as_object_mut() {
            obj.entry("n").or_insert(serde_json::json!(1));
        }
        let kind: MeasureKind = serde_json::from_value(v2).map_err(|e| field_err("family", e.to_string()))?;
        let measure = generate(&kind)?;
        Ok(MeasureFile { grid: kind.grid()?, measure, source: v.clone() })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let n = self.grid.dim;
        serde_json::json!({
            "n": n,
            "depth": self.grid.depth,
            "atoms": self.measure.atoms().iter().map(|a| serde_json::json!({"x": &a.x[..n], "m": a.m})).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::point;

    fn c(s: &str) -> CubeId {
        s.parse().unwrap()
    }

    #[test]
    fn uniform_masses() {
        let mu = generate(&MeasureKind::Uniform { n: 1, depth: 3 }).unwrap();
        assert_eq!(mu.len(), 8);
        assert!(mu.atoms().iter().all(|a| a.m == 0.125));
        assert_eq!(mu.cube_mass(&c("1:0")), 0.5);
        assert_eq!(mu.point(0)[0], 1.0 / 16.0);
    }

    #[test]
    fn binomial_left_left() {
        let mu = generate(&MeasureKind::Binomial { depth: 6, t: 1.0 / 3.0 }).unwrap();
        assert!((mu.cube_mass(&c("2:0")) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cascade_half_is_uniform() {
        let mu = generate(&MeasureKind::Cascade { n: 2, depth: 3, beta: 0.5, seed: 9 }).unwrap();
        assert!(mu.atoms().iter().all(|a| a.m == 1.0 / 64.0));
        assert!(generate(&MeasureKind::Cascade { n: 1, depth: 3, beta: 0.0, seed: 9 }).is_err());
    }

    #[test]
    fn ranges_follow_morton_order_2d() {
        let mu = generate(&MeasureKind::Cascade { n: 2, depth: 4, beta: 0.2, seed: 1 }).unwrap();
        let g = GridSpec::new(2, 4).unwrap();
        for q in g.all_cubes(4) {
            let direct: f64 = mu.atoms().iter().filter(|a| q.contains_point(&a.x)).map(|a| a.m).sum();
            assert!((mu.cube_mass(&q) - direct).abs() <= 1e-15, "{q}");
            assert_eq!(mu.range(&q).len(), mu.atoms().iter().filter(|a| q.contains_point(&a.x)).count());
        }
    }

    #[test]
    fn sigma_closed_form() {
        let d = DensityMeasure::new(DensityFamily::AppendixSigma { p: 1.5, alpha: 1.0 }).unwrap();
        for r in [0.5, 0.25, 1e-3, 1e-9] {
            let want = (1.0 / r as f64).ln().powf(-1.0);
            assert!((d.mass(0.0, r).unwrap() - want).abs() <= 1e-14 * want);
        }
        // additivity through the cancellation-free difference
        let (a, b, m) = (1e-7, 2e-7, 1.5e-7);
        let whole = d.mass(a, b).unwrap();
        let split = d.mass(a, m).unwrap() + d.mass(m, b).unwrap();
        assert!((whole - split).abs() <= 1e-13 * whole);
        let q = quad::integrate(&|x| d.density(x), a, b, 1e-20).unwrap();
        assert!((whole - q).abs() <= 1e-10 * whole);
    }

    #[test]
    fn omega_additivity() {
        let d = DensityMeasure::new(DensityFamily::AppendixOmega { p: 1.5, alpha: 1.0 }).unwrap();
        let whole = d.mass(0.0, 0.5).unwrap();
        let split = d.mass(0.0, 0.125).unwrap() + d.mass(0.125, 0.5).unwrap();
        assert!((whole - split).abs() <= 1e-10 * whole);
    }

    #[test]
    fn appendix_discretized_total() {
        let mu = generate(&MeasureKind::AppendixDiscretized { depth: 10, p: 1.5, alpha: 1.0, side: AppendixSide::Sigma })
            .unwrap();
        assert_eq!(mu.len(), 512);
        let want = 1.0 / 2f64.ln();
        assert!((mu.total_mass() - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn doubling_uniform_and_near_zero_atom() {
        let g = GridSpec::new(1, 6).unwrap();
        let mu = generate(&MeasureKind::Uniform { n: 1, depth: 6 }).unwrap();
        assert_eq!(doubling_constant(&mu, &g).0, Some(2.0));
        assert_eq!(doubling_exponent(&mu, &g).0, Some(1.0));
        let g2 = GridSpec::new(2, 4).unwrap();
        let mu2 = generate(&MeasureKind::Uniform { n: 2, depth: 4 }).unwrap();
        assert_eq!(doubling_exponent(&mu2, &g2).0, Some(2.0));

        let g = GridSpec::new(1, 22).unwrap();
        let x = (-20f64).exp2();
        let mu = AtomicMeasure::new(1, vec![Atom { x: point(&[x]), m: 1.0 }]).unwrap();
        let (v, w) = doubling_constant(&mu, &g);
        assert_eq!(v, None);
        assert_eq!(w, Some(c("19:1")));
    }

    #[test]
    fn binomial_theta_approaches_log3() {
        let g = GridSpec::new(1, 10).unwrap();
        let mu = generate(&MeasureKind::Binomial { depth: 10, t: 1.0 / 3.0 }).unwrap();
        let th = doubling_exponent(&mu, &g).0.unwrap();
        let l3 = 3f64.log2();
        assert!(th <= l3 + 1e-12 && th >= l3 - 1.0 / 10.0, "{th}");
    }

    #[test]
    fn moments_examples() {
        let q = c("1:0");
        let mu = AtomicMeasure::new(1, vec![Atom { x: point(&[0.25]), m: 2.0 }]).unwrap();
        let m = mu.moments(&q, 3);
        assert_eq!(m[0].1, 2.0);
        assert!(m[1..].iter().all(|(_, v)| *v == 0.0));
        let mu = generate(&MeasureKind::Uniform { n: 1, depth: 4 }).unwrap();
        let m = mu.moments(&GridSpec::new(1, 4).unwrap().root(), 3);
        assert!(m[1].1.abs() < 1e-16 && m[3].1.abs() < 1e-16);
        let two = AtomicMeasure::new(1, vec![Atom { x: point(&[0.1]), m: 1.0 }, Atom { x: point(&[0.4]), m: 3.0 }]).unwrap();
        let m = two.moments(&q, 1);
        assert!((m[1].1 - (1.0 * (0.1 - 0.25) / 0.5 + 3.0 * (0.4 - 0.25) / 0.5)).abs() < 1e-15);
    }

    #[test]
    fn file_errors_name_fields() {
        let bad = serde_json::json!({"n": 1, "depth": 3, "atoms": [{"x": [0.2], "m": "a"}]});
        let e = MeasureFile::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("atoms[0].m"), "{e}");
        let gen = serde_json::json!({"family": "cascade", "beta": 0.25, "seed": 42, "depth": 5});
        let f = MeasureFile::from_json(&gen).unwrap();
        assert_eq!(f.measure.len(), 32);
        let back = MeasureFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back.measure, f.measure);
    }
}

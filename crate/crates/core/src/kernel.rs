//! λ-fractional kernels with smooth truncation, the operators `T_σ`, and Poisson integrals.

use crate::alpert::Local;
use crate::estimate::{ConstantEstimate, Witness};
use crate::grid::{CubeId, GridSpec, Point};
use crate::measure::AtomicMeasure;
use nalgebra::{DMatrix, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("field `{0}`: {1}")]
    Field(&'static str, String),
    #[error("measure `nu` charges 2J")]
    NuCharges2J,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `1/(x-y)`, n = 1.
    Hilbert,
    /// `sgn(x-y)|x-y|^(λ-1)`, n = 1.
    SignedFractional,
    /// `(x_j - y_j)/|x-y|^(n-λ+1)`.
    Riesz,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default = "one")]
    pub n: usize,
    pub lambda: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub r_big: f64,
    #[serde(default)]
    pub component: usize,
}

/// `ψ(s) = 6s⁵ - 15s⁴ + 10s³` on `[0,1]`, clamped outside.
pub fn psi(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (s * (6.0 * s - 15.0) + 10.0)
    }
}

impl KernelSpec {
    pub fn hilbert(delta: f64, r_big: f64) -> Self {
        KernelSpec { family: KernelFamily::Hilbert, n: 1, lambda: 0.0, delta, r_big, component: 0 }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(1..=3).contains(&self.n) {
            return Err(KernelError::Field("n", "must be 1, 2 or 3".into()));
        }
        if !(self.delta > 0.0 && self.delta < self.r_big) {
            return Err(KernelError::Field("delta", "need 0 < delta < R".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda < self.n as f64) {
            return Err(KernelError::Field("lambda", "need 0 <= lambda < n".into()));
        }
        match self.family {
            KernelFamily::Hilbert if self.n != 1 || self.lambda != 0.0 => {
                Err(KernelError::Field("family", "hilbert needs n = 1 and lambda = 0".into()))
            }
            KernelFamily::SignedFractional if self.n != 1 || !(self.lambda > 0.0 && self.lambda < 1.0) => {
                Err(KernelError::Field("family", "signed_fractional needs n = 1 and 0 < lambda < 1".into()))
            }
            KernelFamily::Riesz if self.component >= self.n => {
                Err(KernelError::Field("component", "must be below n".into()))
            }
            _ => Ok(()),
        }
    }

    /// `η_{δ,R}(t) = ψ(t/δ - 1)(1 - ψ(t/R - 1))`.
    pub fn eta(&self, t: f64) -> f64 {
        psi(t / self.delta - 1.0) * (1.0 - psi(t / self.r_big - 1.0))
    }

    pub fn untruncated(&self, x: &Point, y: &Point) -> f64 {
        match self.family {
            KernelFamily::Hilbert => {
                let d = x[0] - y[0];
                if d == 0.0 {
                    0.0
                } else {
                    1.0 / d
                }
            }
            KernelFamily::SignedFractional => {
                let d = x[0] - y[0];
                if d == 0.0 {
                    0.0
                } else {
                    d.signum() * d.abs().powf(self.lambda - 1.0)
                }
            }
            KernelFamily::Riesz => {
                let r = dist(x, y, self.n);
                if r == 0.0 {
                    0.0
                } else {
                    (x[self.component] - y[self.component]) / r.powf(self.n as f64 - self.lambda + 1.0)
                }
            }
        }
    }

    pub fn eval(&self, x: &Point, y: &Point) -> f64 {
        let t = dist(x, y, self.n);
        let e = self.eta(t);
        if e == 0.0 {
            0.0
        } else {
            e * self.untruncated(x, y)
        }
    }

    /// `K(x_i, y_k)` with rows indexed by ω-atoms and columns by σ-atoms.
    pub fn matrix(&self, sigma: &AtomicMeasure, omega: &AtomicMeasure) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = (0..omega.len())
            .into_par_iter()
            .map(|i| (0..sigma.len()).map(|k| self.eval(omega.point(i), sigma.point(k))).collect())
            .collect();
        DMatrix::from_fn(omega.len(), sigma.len(), |i, k| rows[i][k])
    }

    /// `T_σ f(x) = Σ_y K(x,y) f(y) σ{y}` at each point.
    pub fn apply(&self, sigma: &AtomicMeasure, f: &[f64], points: &[Point]) -> Vec<f64> {
        points
            .par_iter()
            .map(|x| (0..sigma.len()).map(|k| self.eval(x, sigma.point(k)) * f[k] * sigma.mass(k)).sum())
            .collect()
    }

    /// `T*_ω g(y) = Σ_x K(x,y) g(x) ω{x}` at each point.
    pub fn apply_adjoint(&self, omega: &AtomicMeasure, g: &[f64], points: &[Point]) -> Vec<f64> {
        points
            .par_iter()
            .map(|y| (0..omega.len()).map(|i| self.eval(omega.point(i), y) * g[i] * omega.mass(i)).sum())
            .collect()
    }
}

pub fn dist(x: &Point, y: &Point, n: usize) -> f64 {
    (0..n).map(|j| (x[j] - y[j]).powi(2)).sum::<f64>().sqrt()
}

pub fn points_of(mu: &AtomicMeasure) -> Vec<Point> {
    mu.atoms().iter().map(|a| a.x).collect()
}

/// `⟨T_σ f, g⟩_ω` by direct double sum over a precomputed kernel matrix.
pub fn bilinear(k: &DMatrix<f64>, sigma: &AtomicMeasure, omega: &AtomicMeasure, f: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..omega.len() {
        if g[i] == 0.0 {
            continue;
        }
        let row: f64 = (0..sigma.len()).map(|j| k[(i, j)] * f[j] * sigma.mass(j)).sum();
        s += omega.mass(i) * g[i] * row;
    }
    s
}

/// `D_ω^{1/2} K D_σ^{1/2}`: its spectral norm is the `L²(σ) → L²(ω)` norm.
pub fn weighted_matrix(k: &DMatrix<f64>, sigma: &AtomicMeasure, omega: &AtomicMeasure) -> DMatrix<f64> {
    DMatrix::from_fn(omega.len(), sigma.len(), |i, j| omega.mass(i).sqrt() * k[(i, j)] * sigma.mass(j).sqrt())
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    SVD::new(a.clone(), false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub starts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions { starts: 20, iterations: 500, seed: 0 }
    }
}

fn duality_map(v: &[f64], q: f64) -> Vec<f64> {
    v.iter().map(|x| x.signum() * x.abs().powf(q - 1.0)).collect()
}

/// `𝔑_{T,p}`: exact at `p = 2`, otherwise a multi-start dual-ascent lower bound.
pub fn operator_norm(spec: &KernelSpec, sigma: &AtomicMeasure, omega: &AtomicMeasure, p: f64, opts: &AscentOptions) -> ConstantEstimate {
    let family = format!("all functions on {} sigma-atoms", sigma.len());
    if sigma.is_empty() || omega.is_empty() {
        return ConstantEstimate::exact("norm", 0.0, Witness::None, family);
    }
    let k = spec.matrix(sigma, omega);
    if p == 2.0 {
        let a = weighted_matrix(&k, sigma, omega);
        let svd = SVD::new(a, false, true);
        let (idx, s) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let vt = svd.v_t.unwrap();
        let f: Vec<f64> = (0..sigma.len()).map(|j| vt[(idx, j)] / sigma.mass(j).sqrt()).collect();
        return ConstantEstimate::exact("norm", s, Witness::Function { values: f }, family);
    }
    let pp = p / (p - 1.0);
    let apply = |f: &[f64]| -> Vec<f64> {
        (0..omega.len()).map(|i| (0..sigma.len()).map(|j| k[(i, j)] * sigma.mass(j) * f[j]).sum()).collect()
    };
    let adjoint = |g: &[f64]| -> Vec<f64> {
        (0..sigma.len()).map(|j| (0..omega.len()).map(|i| k[(i, j)] * omega.mass(i) * g[i]).sum()).collect()
    };
    let ratio = |f: &[f64]| {
        let nf = sigma.lp_norm(f, p);
        if nf == 0.0 {
            0.0
        } else {
            omega.lp_norm(&apply(f), p) / nf
        }
    };
    let starts = ascent_starts(sigma, opts);
    let runs: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .map(|mut f| {
            let mut best = (ratio(&f), f.clone());
            for _ in 0..opts.iterations {
                let g = apply(&f);
                let h = adjoint(&duality_map(&g, p));
                let next = duality_map(&h, pp);
                let nn = sigma.lp_norm(&next, p);
                if nn == 0.0 {
                    break;
                }
                f = next.iter().map(|v| v / nn).collect();
                let r = ratio(&f);
                let done = r <= best.0 * (1.0 + 1e-13);
                if r > best.0 {
                    best = (r, f.clone());
                }
                if done {
                    break;
                }
            }
            best
        })
        .collect();
    let (v, f) = runs.into_iter().fold((0.0, Vec::new()), |a, b| if b.0 > a.0 { b } else { a });
    ConstantEstimate::lower("norm", v, Witness::Function { values: f }, family, opts.seed)
}

/// Singletons, Gaussian vectors and tower indicators.
pub fn ascent_starts(sigma: &AtomicMeasure, opts: &AscentOptions) -> Vec<Vec<f64>> {
    let n = sigma.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.starts);
    for s in 0..opts.starts {
        let mut f = vec![0.0; n];
        match s % 3 {
            0 => f[rng.gen_range(0..n)] = 1.0,
            1 => f.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            _ => {
                let i = rng.gen_range(0..n);
                let level = rng.gen_range(0..6u32);
                let c = crate::grid::locate(sigma.point(i), level, sigma.dim());
                for k in sigma.range(&c) {
                    f[k] = 1.0;
                }
            }
        }
        out.push(f);
    }
    out
}

/// `P_t^λ(J, μ) = Σ μ{y} ℓ(J)^t / (ℓ(J) + |y - c_J|)^(t+n-λ)`.
pub fn poisson(j: &CubeId, mu: &AtomicMeasure, lambda: f64, t: f64) -> f64 {
    poisson_filtered(j, mu, lambda, t, |_| true)
}

pub fn poisson_filtered(j: &CubeId, mu: &AtomicMeasure, lambda: f64, t: f64, keep: impl Fn(&Point) -> bool) -> f64 {
    let n = j.dim();
    let l = j.side();
    let c = j.center();
    let e = t + n as f64 - lambda;
    mu.atoms()
        .iter()
        .filter(|a| keep(&a.x))
        .map(|a| a.m * l.powf(t) / (l + dist(&a.x, &c, n)).powf(e))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaLargeReport {
    pub kappa: u32,
    pub lambda: f64,
    /// Center-chain doubling exponent (drives the choice of κ).
    pub theta: f64,
    /// Growth exponent of concentric dilates `|2^j Q| ≤ 2^{jθ'} |Q|` (drives the band).
    pub theta_concentric: f64,
    pub band: (f64, f64),
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub min_cube: Option<CubeId>,
    pub max_cube: Option<CubeId>,
    pub cubes: usize,
    pub passed: bool,
}

/// `sup_{Q,j} log2(|2^j Q|/|Q|)/j` over cubes of levels `≤ max_level`.
pub fn concentric_exponent(mu: &AtomicMeasure, max_level: u32) -> f64 {
    let mut th = 0.0f64;
    for level in 0..=max_level {
        for (q, r) in mu.nonempty_cubes(level) {
            let mq: f64 = mu.atoms()[r].iter().map(|a| a.m).sum();
            for j in 1..=level + 1 {
                let m = mu.region_mass(&q.dilate((j as f64).exp2()));
                th = th.max((m / mq).log2() / j as f64);
            }
        }
    }
    th
}

/// Ratio `P_κ^λ(Q,μ) / (|Q|^{λ/n-1}|Q|_μ)` over nonempty cubes of levels `≤ L-2`, against
/// the band `[(1+√n/2)^{-(n+κ-λ)}, Σ_j a_j 2^{jθ'}]` with `a_0 = 1`, `a_j = (1+2^{j-2})^{-(n+κ-λ)}`.
pub fn check_kappa_large(mu: &AtomicMeasure, grid: &GridSpec, lambda: f64, kappa: u32, theta: f64) -> KappaLargeReport {
    let n = grid.dim as f64;
    let e = n + kappa as f64 - lambda;
    let max_level = grid.depth.saturating_sub(2);
    let th = concentric_exponent(mu, max_level);
    let lo = (1.0 + n.sqrt() / 2.0).powf(-e);
    let hi: f64 = (0..=grid.depth + 1)
        .map(|j| {
            let a = if j == 0 { 1.0 } else { (1.0 + ((j as f64) - 2.0).exp2()).powf(-e) };
            a * (j as f64 * th).exp2()
        })
        .sum();
    let mut rep = KappaLargeReport {
        kappa,
        lambda,
        theta,
        theta_concentric: th,
        band: (lo, hi),
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        min_cube: None,
        max_cube: None,
        cubes: 0,
        passed: true,
    };
    for level in 0..=max_level {
        for (q, r) in mu.nonempty_cubes(level) {
            let mq: f64 = mu.atoms()[r].iter().map(|a| a.m).sum();
            let ratio = poisson(&q, mu, lambda, kappa as f64) / (q.volume().powf(lambda / n - 1.0) * mq);
            rep.cubes += 1;
            if ratio < rep.min_ratio {
                rep.min_ratio = ratio;
                rep.min_cube = Some(q);
            }
            if ratio > rep.max_ratio {
                rep.max_ratio = ratio;
                rep.max_cube = Some(q);
            }
        }
    }
    rep.passed = rep.cubes == 0 || (rep.min_ratio >= lo * (1.0 - 1e-12) && rep.max_ratio <= hi * (1.0 + 1e-12));
    rep
}

/// `P(J, σ1_{K∖I}) / [(ℓ(J)/ℓ(I))^{κ-ε(n+κ-λ)} P(I, σ1_{K∖I})]`; `None` when `σ(K∖I) = 0`.
pub fn poisson_decay_ratio(j: &CubeId, i: &CubeId, k: &CubeId, sigma: &AtomicMeasure, lambda: f64, kappa: u32, eps: f64) -> Option<f64> {
    let outside = |x: &Point| k.contains_point(x) && !i.contains_point(x);
    let kf = kappa as f64;
    let n = j.dim() as f64;
    let den = poisson_filtered(i, sigma, lambda, kf, outside);
    if den == 0.0 {
        return None;
    }
    let num = poisson_filtered(j, sigma, lambda, kf, outside);
    let s = kf - eps * (n + kf - lambda);
    Some(num / ((j.side() / i.side()).powf(s) * den))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Pivotal {
    /// Both sides vanish.
    Vacuous,
    Ratio { value: f64 },
    /// Right side vanishes but the left does not.
    Violation { lhs: f64 },
}

/// `|⟨R T(ν), Ψ_J⟩_ω| / (P_κ^λ(J,ν) ∫_J |Ψ_J| dω)` with `R` given by its values on ω-atoms.
pub fn pivotal_ratio(
    spec: &KernelSpec,
    j: &CubeId,
    nu: &AtomicMeasure,
    omega: &AtomicMeasure,
    psi_j: &Local,
    r_values: &Local,
    kappa: u32,
) -> Result<Pivotal, KernelError> {
    if nu.region_mass(&j.dilate(2.0)) > 0.0 {
        return Err(KernelError::NuCharges2J);
    }
    let mut lhs = 0.0;
    let mut l1 = 0.0;
    for i in psi_j.range() {
        let x = omega.point(i);
        let t: f64 = nu.atoms().iter().map(|a| spec.eval(x, &a.x) * a.m).sum();
        lhs += omega.mass(i) * r_values.get(i) * psi_j.get(i) * t;
        l1 += omega.mass(i) * psi_j.get(i).abs();
    }
    let rhs = poisson(j, nu, spec.lambda, kappa as f64) * l1;
    let lhs = lhs.abs();
    Ok(if rhs == 0.0 {
        if lhs <= 1e-300 {
            Pivotal::Vacuous
        } else {
            Pivotal::Violation { lhs }
        }
    } else {
        Pivotal::Ratio { value: lhs / rhs }
    })
}

/// `(‖(Σ_j |T f_j|²)^{1/2}‖_{L²(ω)}, ‖(Σ_j |f_j|²)^{1/2}‖_{L²(σ)})`.
pub fn vector_extension_l2(k: &DMatrix<f64>, sigma: &AtomicMeasure, omega: &AtomicMeasure, fs: &[Vec<f64>]) -> (f64, f64) {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for f in fs {
        for i in 0..omega.len() {
            let t: f64 = (0..sigma.len()).map(|j| k[(i, j)] * sigma.mass(j) * f[j]).sum();
            lhs += omega.mass(i) * t * t;
        }
        rhs += (0..sigma.len()).map(|j| sigma.mass(j) * f[j] * f[j]).sum::<f64>();
    }
    (lhs.sqrt(), rhs.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::point;
    use crate::measure::{generate, Atom, MeasureKind};

    fn atom(x: f64, m: f64) -> AtomicMeasure {
        AtomicMeasure::new(1, vec![Atom { x: point(&[x]), m }]).unwrap()
    }

    #[test]
    fn truncated_examples() {
        let s = KernelSpec::hilbert(0.1, 1.0);
        assert_eq!(s.eval(&point(&[0.75]), &point(&[0.25])), 2.0);
        assert_eq!(s.eval(&point(&[0.3]), &point(&[0.25])), 0.0);
        assert_eq!(s.eval(&point(&[0.3]), &point(&[0.3])), 0.0);
        for (x, y) in [(0.1, 0.45), (0.9, 0.05), (0.5, 0.33)] {
            assert_eq!(s.eval(&point(&[x]), &point(&[y])), -s.eval(&point(&[y]), &point(&[x])));
        }
        assert_eq!(s.eta(0.2), 1.0);
        assert_eq!(s.eta(1.0), 1.0);
        assert_eq!(s.eta(2.0), 0.0);
        assert_eq!(s.eta(0.1), 0.0);
    }

    #[test]
    fn apply_and_norm_one_atom() {
        let s = KernelSpec::hilbert(0.1, 1.0);
        let sigma = atom(0.25, 1.0);
        let omega = atom(0.75, 1.0);
        assert_eq!(s.apply(&sigma, &[1.0], &[point(&[0.75])]), vec![2.0]);
        let e = operator_norm(&s, &sigma, &omega, 2.0, &AscentOptions::default());
        assert!((e.value - 2.0).abs() < 1e-14);
        let empty = AtomicMeasure::empty(1);
        assert_eq!(operator_norm(&s, &empty, &omega, 2.0, &AscentOptions::default()).value, 0.0);
    }

    #[test]
    fn self_pairing_vanishes() {
        let s = KernelSpec::hilbert(0.02, 1.0);
        let mu = generate(&MeasureKind::Cascade { n: 1, depth: 6, beta: 0.3, seed: 1 }).unwrap();
        let f: Vec<f64> = (0..mu.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let k = s.matrix(&mu, &mu);
        let v = bilinear(&k, &mu, &mu, &f, &f);
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn poisson_examples() {
        let mu = generate(&MeasureKind::Uniform { n: 1, depth: 12 }).unwrap();
        let v = poisson(&CubeId::root(1), &mu, 0.0, 1.0);
        assert!((v - 2.0 / 3.0).abs() < 1e-3);
        let j: CubeId = "2:1".parse().unwrap();
        let one = atom(j.center()[0], 3.0);
        assert!((poisson(&j, &one, 0.0, 2.0) - 3.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn p_ne_2_ascent_below_p2_style_bound() {
        let s = KernelSpec::hilbert(0.05, 1.0);
        let sigma = generate(&MeasureKind::Cascade { n: 1, depth: 4, beta: 0.3, seed: 2 }).unwrap();
        let omega = generate(&MeasureKind::Cascade { n: 1, depth: 4, beta: 0.3, seed: 3 }).unwrap();
        let e = operator_norm(&s, &sigma, &omega, 3.0, &AscentOptions { starts: 6, iterations: 100, seed: 1 });
        let Witness::Function { values } = &e.witness else { panic!() };
        let replay = omega.lp_norm(&s.apply(&sigma, values, &points_of(&omega)), 3.0) / sigma.lp_norm(values, 3.0);
        assert!((replay - e.value).abs() <= 1e-12 * e.value);
        assert!(e.value > 0.0);
    }
}

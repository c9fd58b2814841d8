//! Square functions built from Alpert differences, and dyadic maximal functions.

use crate::alpert::{AlpertError, AlpertSystem, Local};
use crate::corona::{cz_stopping, CoronaDecomposition, CoronaError};
use crate::grid::CubeId;
use crate::measure::AtomicMeasure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SquareError {
    #[error(transparent)]
    Alpert(#[from] AlpertError),
    #[error(transparent)]
    Corona(#[from] CoronaError),
    #[error("p must lie in (1, inf), got {0}")]
    Exponent(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SquareKind {
    Haar,
    Alpert { kappa: u32 },
    /// `𝓕` is the stopping tree of `f` itself unless one is supplied.
    Corona { kappa: u32, gamma: f64 },
    ShiftedCorona { kappa: u32, gamma: f64, tau: u32 },
    /// `literal = true` uses the scalar weight `w_I`; otherwise nearby `Δ_J` are summed.
    RhoDelta { kappa: u32, rho: u32, delta: f64, literal: bool },
}

impl SquareKind {
    pub fn kappa(&self) -> u32 {
        match *self {
            SquareKind::Haar => 1,
            SquareKind::Alpert { kappa }
            | SquareKind::Corona { kappa, .. }
            | SquareKind::ShiftedCorona { kappa, .. }
            | SquareKind::RhoDelta { kappa, .. } => kappa,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SquareKind::Haar => "haar".into(),
            SquareKind::Alpert { kappa } => format!("alpert(kappa={kappa})"),
            SquareKind::Corona { kappa, gamma } => format!("corona(kappa={kappa},gamma={gamma})"),
            SquareKind::ShiftedCorona { kappa, gamma, tau } => format!("shifted(kappa={kappa},gamma={gamma},tau={tau})"),
            SquareKind::RhoDelta { kappa, rho, delta, literal } => {
                format!("rho-delta(kappa={kappa},rho={rho},delta={delta},{})", if literal { "literal" } else { "delta-j" })
            }
        }
    }
}

/// `Δ_{I;κ} f` for every cube above the finest level.
pub fn differences(sys: &AlpertSystem, f: &[f64]) -> Vec<(CubeId, Local)> {
    sys.cubes()
        .par_iter()
        .filter(|c| c.level() < sys.depth)
        .map(|c| (*c, sys.difference(c, f)))
        .collect()
}

/// `w_I = Σ_J 2^{-δ dist(J,I)/ℓ(I)}` over grid cubes `J` with `|level(J) - level(I)| ≤ ρ`.
pub fn rho_delta_weight(i: &CubeId, rho: u32, delta: f64, depth: u32) -> f64 {
    let n = i.dim();
    let mut total = 0.0;
    for m in i.level().saturating_sub(rho)..=(i.level() + rho).min(depth) {
        // Per-coordinate gaps in units of ℓ(I); dist is their max.
        let cells = 1u64 << m;
        let h = (-(m as f64)).exp2();
        let mut gaps: Vec<Vec<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let (a, b) = (i.lower()[j], i.upper()[j]);
            let mut g: Vec<f64> = (0..cells)
                .map(|c| {
                    let (lo, hi) = (c as f64 * h, (c + 1) as f64 * h);
                    (lo - b).max(a - hi).max(0.0) / i.side()
                })
                .collect();
            g.sort_by(f64::total_cmp);
            gaps.push(g);
        }
        let mut ts: Vec<f64> = gaps.iter().flatten().cloned().collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let count_le = |t: f64| -> f64 {
            gaps.iter().map(|g| g.partition_point(|&x| x <= t) as f64).product()
        };
        let mut prev = 0.0;
        for t in ts {
            let c = count_le(t);
            total += (c - prev) * (-delta * t).exp2();
            prev = c;
        }
    }
    total
}

fn accumulate_groups(n: usize, groups: BTreeMap<CubeId, Vec<&Local>>) -> Vec<f64> {
    let mut sq = vec![0.0; n];
    for (_, locals) in groups {
        let lo = locals.iter().map(|l| l.start).min().unwrap_or(0);
        let hi = locals.iter().map(|l| l.range().end).max().unwrap_or(0);
        let mut acc = vec![0.0; hi.saturating_sub(lo)];
        for l in locals {
            for (k, v) in l.values.iter().enumerate() {
                acc[l.start - lo + k] += v;
            }
        }
        for (k, v) in acc.iter().enumerate() {
            sq[lo + k] += v * v;
        }
    }
    sq
}

/// The square function of `kind` at every atom of `mu` (storage order).
///
/// For corona kinds `decomp` overrides the stopping tree of `f`.
pub fn square_function(
    kind: &SquareKind,
    sys: &AlpertSystem,
    mu: &AtomicMeasure,
    f: &[f64],
    decomp: Option<&CoronaDecomposition>,
) -> Result<Vec<f64>, SquareError> {
    if f.len() != mu.len() {
        return Err(AlpertError::Length { got: f.len(), want: mu.len() }.into());
    }
    let diffs = differences(sys, f);
    let n = mu.len();
    let sq = match *kind {
        SquareKind::Haar | SquareKind::Alpert { .. } => {
            let mut sq = vec![0.0; n];
            for (_, d) in &diffs {
                for (k, v) in d.values.iter().enumerate() {
                    sq[d.start + k] += v * v;
                }
            }
            sq
        }
        SquareKind::Corona { gamma, .. } | SquareKind::ShiftedCorona { gamma, .. } => {
            let built;
            let d = match decomp {
                Some(d) => d,
                None => {
                    built = cz_stopping(mu, f, gamma, sys.root, sys.depth)?;
                    &built
                }
            };
            let mut groups: BTreeMap<CubeId, Vec<&Local>> = BTreeMap::new();
            for (c, l) in &diffs {
                let owner = match *kind {
                    SquareKind::ShiftedCorona { tau, .. } => d.shifted_owner(c, tau),
                    _ => d.corona_of(c),
                };
                if let Some(o) = owner {
                    groups.entry(o).or_default().push(l);
                }
            }
            accumulate_groups(n, groups)
        }
        SquareKind::RhoDelta { rho, delta, literal, .. } => {
            let mut sq = vec![0.0; n];
            if literal {
                for (c, d) in &diffs {
                    let w = rho_delta_weight(c, rho, delta, sys.depth);
                    for (k, v) in d.values.iter().enumerate() {
                        sq[d.start + k] += (w * v).powi(2);
                    }
                }
            } else {
                // Nearby J meeting x all have dist(J,I) = 0, so the sum is unweighted.
                let mut by_level: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
                for (c, d) in &diffs {
                    let row = by_level.entry(c.level()).or_insert_with(|| vec![0.0; n]);
                    d.add_into(row, 1.0);
                }
                for (c, _) in &diffs {
                    let l = c.level();
                    for k in mu.range(c) {
                        let s: f64 = by_level
                            .range(l.saturating_sub(rho)..=l + rho)
                            .map(|(_, row)| row[k])
                            .sum();
                        sq[k] += s * s;
                    }
                }
            }
            sq
        }
    };
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// `M_μ f(x) = max_{I ∋ x} E_I^μ |f|` over cubes of `root` down to `depth`.
pub fn maximal(mu: &AtomicMeasure, f: &[f64], root: &CubeId, depth: u32) -> Vec<f64> {
    let av = crate::corona::Averages::new(mu, f);
    let mut out = vec![0.0f64; mu.len()];
    for level in root.level()..=depth {
        for (c, r) in mu.nonempty_cubes(level) {
            if !root.contains(&c) {
                continue;
            }
            let a = av.avg(mu, &c);
            for k in r {
                out[k] = out[k].max(a);
            }
        }
    }
    out
}

/// `(Σ_j (M f_j)²)^{1/2}`.
pub fn maximal_vector(mu: &AtomicMeasure, fs: &[Vec<f64>], root: &CubeId, depth: u32) -> Vec<f64> {
    let mut sq = vec![0.0; mu.len()];
    for f in fs {
        for (s, m) in sq.iter_mut().zip(maximal(mu, f, root, depth)) {
            *s += m * m;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub generations: u32,
    pub max_error: f64,
    pub witness: Option<CubeId>,
    pub passed: bool,
}

/// `∫_E 𝖤_k f = ∫_E 𝖤_{k-1} f` over the atoms `E` of `𝓔_{k-1}`, for every generation `k`.
pub fn martingale_check(d: &CoronaDecomposition, mu: &AtomicMeasure, f: &[f64]) -> MartingaleReport {
    let gens = d.generation.values().copied().max().unwrap_or(0);
    let mean = |c: &CubeId| -> f64 {
        let r = mu.range(c);
        let m: f64 = r.clone().map(|k| mu.mass(k)).sum();
        if m > 0.0 {
            r.map(|k| f[k] * mu.mass(k)).sum::<f64>() / m
        } else {
            0.0
        }
    };
    let e_k = |k: u32| -> Vec<f64> {
        let mut v = f.to_vec();
        for (c, g) in &d.generation {
            if *g == k {
                let a = mean(c);
                for i in mu.range(c) {
                    v[i] = a;
                }
            }
        }
        v
    };
    let mut rep = MartingaleReport { generations: gens, max_error: 0.0, witness: None, passed: true };
    let mut prev = e_k(0);
    for k in 1..=gens + 1 {
        let cur = e_k(k);
        for (c, g) in &d.generation {
            if *g != k - 1 {
                continue;
            }
            let r = mu.range(c);
            let a: f64 = r.clone().map(|i| cur[i] * mu.mass(i)).sum();
            let b: f64 = r.clone().map(|i| prev[i] * mu.mass(i)).sum();
            let scale: f64 = r.map(|i| (f[i] * mu.mass(i)).abs()).sum::<f64>().max(f64::MIN_POSITIVE);
            let err = (a - b).abs() / scale;
            if err > rep.max_error {
                rep.max_error = err;
                rep.witness = Some(*c);
            }
        }
        // Points outside the generation-(k-1) cubes are singleton atoms where both equal f.
        prev = cur;
    }
    rep.passed = rep.max_error <= 1e-10;
    rep
}

pub fn lp_ratio(mu: &AtomicMeasure, s: &[f64], f: &[f64], p: f64) -> f64 {
    let d = mu.lp_norm(f, p);
    if d == 0.0 {
        0.0
    } else {
        mu.lp_norm(s, p) / d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub kind: SquareKind,
    pub p: f64,
    pub trials: usize,
    pub seed: u64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// The maximizing trial's function values (storage order).
    pub witness: Vec<f64>,
}

/// Gaussian, sign and cube-indicator test functions, cycling by trial index.
pub fn random_function(mu: &AtomicMeasure, rng: &mut ChaCha8Rng, trial: usize) -> Vec<f64> {
    let n = mu.len();
    match trial % 3 {
        0 => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        1 => (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect(),
        _ => {
            let k = rng.gen_range(0..n);
            let level = rng.gen_range(0..=6u32);
            let c = crate::grid::locate(mu.point(k), level, mu.dim());
            let r = mu.range(&c);
            (0..n).map(|i| if r.contains(&i) { 1.0 } else { 0.0 }).collect()
        }
    }
}

/// Largest `‖𝒮f‖_p/‖f‖_p` over seeded random `f`.
pub fn ratio_report(kind: &SquareKind, sys: &AlpertSystem, mu: &AtomicMeasure, p: f64, trials: usize, seed: u64) -> Result<RatioReport, SquareError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(SquareError::Exponent(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs: Vec<Vec<f64>> = (0..trials).map(|t| random_function(mu, &mut rng, t)).collect();
    let ratios: Vec<f64> = fs
        .par_iter()
        .map(|f| square_function(kind, sys, mu, f, None).map(|s| lp_ratio(mu, &s, f, p)))
        .collect::<Result<_, _>>()?;
    let (best, max) = ratios.iter().enumerate().fold((0, 0.0), |a, (i, &r)| if r > a.1 { (i, r) } else { a });
    Ok(RatioReport {
        kind: *kind,
        p,
        trials,
        seed,
        max_ratio: max,
        mean_ratio: ratios.iter().sum::<f64>() / trials.max(1) as f64,
        witness: fs.get(best).cloned().unwrap_or_default(),
    })
}

/// Largest ratio over every `{0,1}`-valued and every `±1`-valued `f` on the atoms.
pub fn exhaustive_calibration(kind: &SquareKind, sys: &AlpertSystem, mu: &AtomicMeasure, p: f64) -> Result<f64, SquareError> {
    let n = mu.len();
    assert!(n <= 20, "exhaustive search needs at most 20 atoms");
    let total = 1u64 << n;
    let vals: Vec<f64> = (1..total)
        .into_par_iter()
        .map(|mask| {
            let ind: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
            let sign: Vec<f64> = ind.iter().map(|v| 2.0 * v - 1.0).collect();
            let a = square_function(kind, sys, mu, &ind, None).map(|s| lp_ratio(mu, &s, &ind, p));
            let b = square_function(kind, sys, mu, &sign, None).map(|s| lp_ratio(mu, &s, &sign, p));
            Ok(a?.max(b?))
        })
        .collect::<Result<_, SquareError>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate, MeasureKind};

    fn setup(kind: MeasureKind, kappa: u32) -> (AtomicMeasure, AlpertSystem) {
        let mu = generate(&kind).unwrap();
        let g = kind.grid().unwrap();
        let sys = AlpertSystem::new(&mu, kappa, g.depth, g.root()).unwrap();
        (mu, sys)
    }

    #[test]
    fn constants_have_zero_square_function() {
        let (mu, sys) = setup(MeasureKind::Cascade { n: 1, depth: 6, beta: 0.3, seed: 1 }, 1);
        let s = square_function(&SquareKind::Haar, &sys, &mu, &vec![2.0; mu.len()], None).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
        let m = maximal(&mu, &vec![2.0; mu.len()], &CubeId::root(1), 6);
        assert!(m.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn haar_parseval() {
        let (mu, sys) = setup(MeasureKind::Cascade { n: 1, depth: 7, beta: 0.2, seed: 5 }, 1);
        let f: Vec<f64> = (0..mu.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let s = square_function(&SquareKind::Haar, &sys, &mu, &f, None).unwrap();
        let e = sys.project_values(&CubeId::root(1), &f);
        let lhs = mu.integral(&s.iter().map(|v| v * v).collect::<Vec<_>>())
            + mu.integral(&(0..mu.len()).map(|k| e.get(k).powi(2)).collect::<Vec<_>>());
        let rhs = mu.integral(&f.iter().map(|v| v * v).collect::<Vec<_>>());
        assert!((lhs - rhs).abs() <= 1e-9 * rhs);
    }

    #[test]
    fn single_corona_is_mean_removed() {
        let (mu, sys) = setup(MeasureKind::Uniform { n: 1, depth: 5 }, 2);
        let f = vec![1.0; mu.len()];
        let d = cz_stopping(&mu, &f, 2.0, CubeId::root(1), 5).unwrap();
        let g: Vec<f64> = (0..mu.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = square_function(&SquareKind::Corona { kappa: 2, gamma: 2.0 }, &sys, &mu, &g, Some(&d)).unwrap();
        let e = sys.project_values(&CubeId::root(1), &g);
        for k in 0..mu.len() {
            assert!((s[k] - (g[k] - e.get(k)).abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn rho_delta_dominated_by_alpert() {
        let (mu, sys) = setup(MeasureKind::Cascade { n: 1, depth: 6, beta: 0.3, seed: 2 }, 2);
        let f: Vec<f64> = (0..mu.len()).map(|i| (i as f64 * 1.3).cos()).collect();
        let a = square_function(&SquareKind::Alpert { kappa: 2 }, &sys, &mu, &f, None).unwrap();
        let wmax = sys.cubes().iter().map(|c| rho_delta_weight(c, 1, 0.5, 6)).fold(0.0, f64::max);
        for literal in [true, false] {
            let c = if literal { wmax } else { 3.0 };
            let s = square_function(&SquareKind::RhoDelta { kappa: 2, rho: 1, delta: 0.5, literal }, &sys, &mu, &f, None).unwrap();
            for k in 0..mu.len() {
                assert!(s[k] <= c * a[k] + 1e-12);
            }
        }
    }

    #[test]
    fn rho_delta_weight_counts() {
        // Same-level cubes only, δ = 0: every level-2 cube counts once.
        assert_eq!(rho_delta_weight(&"2:1".parse().unwrap(), 0, 0.0, 4), 4.0);
        let w = rho_delta_weight(&"1:0".parse().unwrap(), 0, 1.0, 4);
        assert!((w - 2.0).abs() < 1e-15);
        let w = rho_delta_weight(&"2:0".parse().unwrap(), 0, 1.0, 4);
        assert!((w - (1.0 + 1.0 + 0.5 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn maximal_indicator_profile() {
        let mu = generate(&MeasureKind::Uniform { n: 1, depth: 4 }).unwrap();
        let f: Vec<f64> = mu.atoms().iter().map(|a| if a.x[0] < 0.25 { 1.0 } else { 0.0 }).collect();
        let m = maximal(&mu, &f, &CubeId::root(1), 4);
        for (a, v) in mu.atoms().iter().zip(&m) {
            let want = if a.x[0] < 0.25 { 1.0 } else if a.x[0] < 0.5 { 0.5 } else { 0.25 };
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn martingale_property() {
        let mu = generate(&MeasureKind::Cascade { n: 1, depth: 7, beta: 0.3, seed: 8 }).unwrap();
        let f: Vec<f64> = (0..mu.len()).map(|i| ((i * 13) % 7) as f64 - 2.0).collect();
        let d = cz_stopping(&mu, &f, 1.5, CubeId::root(1), 7).unwrap();
        assert!(d.stopping.len() > 2);
        assert!(martingale_check(&d, &mu, &f).passed);
    }

    #[test]
    fn haar_p2_ratio_at_most_one() {
        let (mu, sys) = setup(MeasureKind::Cascade { n: 1, depth: 8, beta: 0.25, seed: 3 }, 1);
        let r = ratio_report(&SquareKind::Haar, &sys, &mu, 2.0, 30, 1).unwrap();
        assert!(r.max_ratio <= 1.0 + 1e-12);
    }
}

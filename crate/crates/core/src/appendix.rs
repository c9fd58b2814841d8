//! The weight pair with finite local `A_p` and infinite quadratic offset `A_p`.

use crate::measure::{sigma_mass, DensityFamily, DensityMeasure, MeasureError};
use crate::quad::{integrate, integrate_from_zero, QuadError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppendixError {
    #[error("invalid {0}: {1}")]
    Field(&'static str, String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

fn field(name: &'static str, msg: impl Into<String>) -> AppendixError {
    AppendixError::Field(name, msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixConfig {
    pub p: f64,
    pub alpha: f64,
    pub eps: f64,
    pub n_max: usize,
}

impl AppendixConfig {
    pub fn new(p: f64, alpha: f64, eps: f64, n_max: usize) -> Result<Self, AppendixError> {
        if !(p > 1.0) || p == 2.0 || !p.is_finite() {
            return Err(field("p", "must lie in (1, inf) and differ from 2"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(field("alpha", "must lie in (0, 1]"));
        }
        if !(eps > 0.0) {
            return Err(field("eps", "must be positive"));
        }
        if !(1..=10_000_000).contains(&n_max) {
            return Err(field("nmax", "must lie in [1, 1e7]"));
        }
        let c = AppendixConfig { p, alpha, eps, n_max };
        if 2.0 * c.eta() + 1.0 <= 0.0 {
            return Err(field("eps", "needs (alpha - eps) 2/p > 0"));
        }
        Ok(c)
    }

    /// The exponent the construction runs at: `p` below 2, `p'` above 2 with the measures swapped.
    pub fn construction_p(&self) -> f64 {
        if self.p < 2.0 {
            self.p
        } else {
            self.p / (self.p - 1.0)
        }
    }

    pub fn dual_side(&self) -> bool {
        self.p > 2.0
    }

    /// `η` with `2η + 1 = (α - ε)(2/p)`.
    pub fn eta(&self) -> f64 {
        ((self.alpha - self.eps) * 2.0 / self.construction_p() - 1.0) / 2.0
    }

    /// `ηp - α`, equal to `-ε - p/2`.
    pub fn lhs_exponent(&self) -> f64 {
        self.eta() * self.construction_p() - self.alpha
    }

    /// The left side diverges iff `ηp - α > -1`, i.e. `ε < (2 - p)/2`.
    pub fn diverges(&self) -> bool {
        self.lhs_exponent() > -1.0
    }
}

/// `∫_0^{1/2} f = (ln 2)^{-α}/α`.
pub fn sigma_total(alpha: f64) -> f64 {
    LN_2.powf(-alpha) / alpha
}

fn omega_density(p: f64, alpha: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| if x <= 0.0 { 0.0 } else { (x * (-x.ln()).powf(alpha)).powf(p - 1.0) }
}

/// `(|I|^{-1}∫_I w)(|I|^{-1}∫_I v^{1-p'})^{p-1}` on `I = [a, b] ⊆ [0, 1/2]`.
pub fn local_ap(p: f64, alpha: f64, a: f64, b: f64) -> Result<f64, AppendixError> {
    if !(b > a) {
        return Err(field("interval", format!("[{a}, {b}] has no length")));
    }
    if a < 0.0 || b > 0.5 {
        return Err(field("interval", format!("[{a}, {b}] is not inside [0, 1/2]")));
    }
    let len = b - a;
    let w = omega_density(p, alpha);
    let wi = if a == 0.0 { integrate_from_zero(&w, b, 1e-12 * w(b) * b)? } else { integrate(&w, a, b, 1e-12 * w(b) * len)? };
    let vi = sigma_mass(alpha, a, b);
    Ok((wi / len) * (vi / len).powf(p - 1.0))
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    s: f64,
    c: f64,
}

impl Acc {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Partial sums of the two sides at `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSums {
    pub n: usize,
    /// `Σ_{k≤N} (Σ_{ℓ≤k} a_ℓ²)^{p/2} k^{-(1+α)}`.
    pub rhs: f64,
    /// `Σ_{k≤N} (Σ_{ℓ≤k} |2^ℓ ℓ^{η-α}|²)^{p/2} 2^{-kp} k^{α(p-1)}`, scaled recursion.
    pub lhs: f64,
    /// The same sum from `a_ℓ 2^ℓ ℓ^{-α}` with `a_ℓ = ℓ^η`, by log-sum-exp.
    pub lhs_pre: f64,
}

/// Partial sums at every checkpoint (sorted, each `≤ n_max`), in one pass.
pub fn quadratic_sums(cfg: &AppendixConfig, checkpoints: &[usize]) -> Vec<QuadraticSums> {
    let p = cfg.construction_p();
    let (alpha, eta) = (cfg.alpha, cfg.eta());
    let mut cps: Vec<usize> = checkpoints.iter().cloned().filter(|n| *n >= 1 && *n <= cfg.n_max).collect();
    cps.sort_unstable();
    cps.dedup();
    let last = cps.last().copied().unwrap_or(0);
    let mut out = Vec::with_capacity(cps.len());
    let (mut rhs, mut lhs, mut pre) = (Acc::default(), Acc::default(), Acc::default());
    let mut a2 = Acc::default();
    // s_k = 4^{-k} Σ_{ℓ≤k} 4^ℓ ℓ^{2(η-α)}
    let mut s = 0.0;
    let mut log_s = f64::NEG_INFINITY;
    let mut next = 0;
    for k in 1..=last {
        let kf = k as f64;
        let lk = kf.ln();
        a2.add(kf.powf(2.0 * eta));
        rhs.add(a2.value().powf(p / 2.0) * kf.powf(-(1.0 + alpha)));
        s = 0.25 * s + kf.powf(2.0 * (eta - alpha));
        lhs.add(s.powf(p / 2.0) * kf.powf(alpha * (p - 1.0)));
        let log_term = 2.0 * (eta * lk + kf * LN_2 - alpha * lk);
        log_s = log_add(log_s, log_term);
        pre.add(((p / 2.0) * log_s - kf * p * LN_2 + alpha * (p - 1.0) * lk).exp());
        if k == cps[next] {
            out.push(QuadraticSums { n: k, rhs: rhs.value(), lhs: lhs.value(), lhs_pre: pre.value() });
            next += 1;
        }
    }
    out
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub config: AppendixConfig,
    pub eta: f64,
    pub lhs_exponent: f64,
    pub sums: Vec<QuadraticSums>,
    /// `max_N (RHS_{2N} - RHS_N) N^ε`.
    pub rhs_tail_constant: f64,
    /// `max / min` of `(RHS_{2N} - RHS_N) N^ε` over the doubling checkpoints.
    pub rhs_tail_spread: f64,
    /// Slope of `log(LHS_{2N} - LHS_N)` against `log N`; tends to `1 + ηp - α`.
    pub lhs_block_slope: f64,
    /// Slope of `log LHS_N` against `log N`, biased by the constant term of the partial sums.
    pub lhs_raw_slope: f64,
    /// `max |LHS - LHS_pre| / LHS`.
    pub substitution_gap: f64,
}

/// Doubling checkpoints `N = n0 2^j` with `2N ≤ n_max`.
pub fn doubling_checkpoints(n0: usize, n_max: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut n = n0.max(1);
    while n <= n_max {
        v.push(n);
        n *= 2;
    }
    v
}

/// Series diagnostics over `N ∈ [n0, n_max]` on doubling checkpoints.
pub fn series_report(cfg: &AppendixConfig, n0: usize) -> SeriesReport {
    let cps = doubling_checkpoints(n0, cfg.n_max);
    let sums = quadratic_sums(cfg, &cps);
    let mut tails = Vec::new();
    let (mut xs, mut ys, mut rx, mut ry) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for w in sums.windows(2) {
        let n = w[0].n as f64;
        tails.push((w[1].rhs - w[0].rhs) * n.powf(cfg.eps));
        xs.push(n.ln());
        ys.push((w[1].lhs - w[0].lhs).ln());
    }
    for s in &sums {
        rx.push((s.n as f64).ln());
        ry.push(s.lhs.ln());
    }
    let tmax = tails.iter().cloned().fold(0.0, f64::max);
    let tmin = tails.iter().cloned().fold(f64::INFINITY, f64::min);
    SeriesReport {
        config: *cfg,
        eta: cfg.eta(),
        lhs_exponent: cfg.lhs_exponent(),
        substitution_gap: sums.iter().map(|s| (s.lhs - s.lhs_pre).abs() / s.lhs).fold(0.0, f64::max),
        sums,
        rhs_tail_constant: tmax,
        rhs_tail_spread: if tmin > 0.0 { tmax / tmin } else { f64::INFINITY },
        lhs_block_slope: if xs.len() >= 2 { slope(&xs, &ys) } else { f64::NAN },
        lhs_raw_slope: if rx.len() >= 2 { slope(&rx, &ry) } else { f64::NAN },
    }
}

/// `x Mf(x)` for the dyadic maximal function of `f = 1/(x (ln 1/x)^{1+α})` on `(0, 1/2)`,
/// at `x = e^{-u}`. Candidates: every dyadic interval containing `x` down to two levels below
/// `x`'s own scale, and `f(x)` itself as the limit of shrinking intervals.
pub fn x_maximal(alpha: f64, u: f64) -> f64 {
    let x = (-u).exp();
    let total = sigma_total(alpha);
    if x >= 0.5 {
        // only [0,1) meets the support
        return x * total;
    }
    let mut best = u.powf(-(1.0 + alpha));
    let m = (u / LN_2).ceil() as i32;
    for j in 0..=(m + 2) {
        let h = (-(j as f64) * LN_2).exp();
        let a = (x / h).floor() * h;
        let b = a + h;
        let mass = if b <= 0.5 {
            sigma_mass(alpha, a, b)
        } else if a < 0.5 {
            if a <= 0.0 {
                total
            } else {
                sigma_mass(alpha, a, 0.5)
            }
        } else {
            0.0
        };
        // x/h computed in the log domain for tiny x
        let ratio = if a == 0.0 { (j as f64 * LN_2 - u).exp() } else { x / h };
        best = best.max(mass * ratio);
    }
    best
}

/// `Mf(x) x (ln 1/x)^α` at each `x`, the ratio to the model `1/(x (ln 1/x)^α)`.
pub fn maximal_profile(alpha: f64, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| x_maximal(alpha, -x.ln()) * (-x.ln()).powf(alpha)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub p: f64,
    pub alpha: f64,
    /// `u_k = 2^k ln 2`, i.e. cuts `2^{-2^k}`.
    pub u: Vec<f64>,
    /// `I(e^{-u_k}) = ∫_{e^{-u_k}}^{1/2} (Mf)^p w dx`.
    pub integral: Vec<f64>,
    /// `I(u_{k+1}) - I(u_k)`.
    pub increments: Vec<f64>,
    /// Slope of `log` increments against `log u`; the growth `I ~ u^{1-α}` gives `1 - α`.
    pub increment_slope: f64,
    /// `∫_0^{1/2} f^p v = ∫_0^{1/2} f`, by quadrature in `u`.
    pub companion: f64,
    pub companion_closed: f64,
}

fn u_integrand(p: f64, alpha: f64) -> impl Fn(f64) -> f64 {
    // (Mf)^p w dx with x = e^{-u}: (x Mf)^p u^{α(p-1)} du
    move |u: f64| x_maximal(alpha, u).powf(p) * u.powf(alpha * (p - 1.0))
}

/// The failure integral for cuts `2^{-2^k}`, `k = 1..=k_max`, integrated in `u = ln(1/x)` with
/// breakpoints at `x = 2^{-m}`.
pub fn maximal_failure(p: f64, alpha: f64, k_max: u32) -> Result<FailureReport, AppendixError> {
    if k_max > 9 {
        return Err(field("k_max", "cuts below 2^-512 underflow"));
    }
    let g = u_integrand(p, alpha);
    // unit blocks u ∈ [m ln2, (m+1) ln2], m = 1..2^k_max
    let blocks: Vec<f64> = (1..(1u32 << k_max))
        .into_par_iter()
        .map(|m| integrate(&g, m as f64 * LN_2, (m + 1) as f64 * LN_2, 1e-12))
        .collect::<Result<_, _>>()?;
    let mut u = Vec::new();
    let mut integral = Vec::new();
    let mut acc = Acc::default();
    let mut done = 1u32;
    for k in 1..=k_max {
        let end = 1u32 << k;
        for m in done..end {
            acc.add(blocks[(m - 1) as usize]);
        }
        done = end;
        u.push(end as f64 * LN_2);
        integral.push(acc.value());
    }
    let increments: Vec<f64> = integral.windows(2).map(|w| w[1] - w[0]).collect();
    let fit_from = increments.len().saturating_sub(5);
    let xs: Vec<f64> = u[fit_from..u.len() - 1].iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = increments[fit_from..].iter().map(|v| v.ln()).collect();
    // substitute x = e^{-u}: ∫ f dx = ∫ u^{-(1+α)} du over [ln 2, ∞)
    let tail = |v: f64| v.powf(-(1.0 + alpha));
    let mut companion = Acc::default();
    let mut lo = LN_2;
    for _ in 0..200 {
        let hi = 2.0 * lo;
        companion.add(integrate(&tail, lo, hi, 1e-15)?);
        lo = hi;
        if lo > 1e300 {
            break;
        }
    }
    companion.add(lo.powf(-alpha) / alpha);
    Ok(FailureReport {
        p,
        alpha,
        u,
        integral,
        increment_slope: if xs.len() >= 2 { slope(&xs, &ys) } else { f64::NAN },
        increments,
        companion: companion.value(),
        companion_closed: sigma_total(alpha),
    })
}

/// Tower witness `I_k = [0, 2^{-k})`, `k = 1..=depth`, with `a_k = k^η`: the quadratic offset
/// functional at `λ = 0`, from the dyadic cell masses of the discretized pair.
pub fn tower_offset_value(cfg: &AppendixConfig, depth: u32) -> Result<f64, AppendixError> {
    let p = cfg.construction_p();
    let (sig, om) = (
        DensityMeasure::new(DensityFamily::AppendixSigma { p, alpha: cfg.alpha })?,
        DensityMeasure::new(DensityFamily::AppendixOmega { p, alpha: cfg.alpha })?,
    );
    // with p > 2 the roles swap and the exponent is p'
    let (src, tgt) = if cfg.dual_side() { (&om, &sig) } else { (&sig, &om) };
    let eta = cfg.eta();
    let a: Vec<f64> = (1..=depth).map(|k| (k as f64).powf(eta)).collect();
    let side = |k: u32| (-(k as f64)).exp2();
    // |I_k|_src / |I_k|
    let ratio: Vec<f64> = (1..=depth).map(|k| src.mass(0.0, side(k)).map(|m| m / side(k))).collect::<Result<_, _>>()?;
    let (mut num, mut den) = (0.0, 0.0);
    let (mut sn, mut sd) = (0.0, 0.0);
    // annulus [2^{-k-1}, 2^{-k}) sees I_1..I_k; the innermost cell [0, 2^{-depth}) sees all
    for k in 1..=depth {
        let i = (k - 1) as usize;
        sn += (a[i] * ratio[i]).powi(2);
        sd += a[i].powi(2);
        let (lo, hi) = if k == depth { (0.0, side(k)) } else { (side(k + 1), side(k)) };
        num += tgt.mass(lo, hi)? * sn.powf(p / 2.0);
        den += src.mass(lo, hi)? * sd.powf(p / 2.0);
    }
    Ok((num / den).powf(1.0 / p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApSweep {
    pub r: Vec<f64>,
    pub value: Vec<f64>,
    /// `max / min` over the sweep.
    pub width: f64,
}

/// `local_ap` on `[0, 2^{-k}]`, `k = k_lo..=k_hi`.
pub fn ap_sweep(p: f64, alpha: f64, k_lo: u32, k_hi: u32) -> Result<ApSweep, AppendixError> {
    let r: Vec<f64> = (k_lo..=k_hi).map(|k| (-(k as f64)).exp2()).collect();
    let value: Vec<f64> = r.iter().map(|&r| local_ap(p, alpha, 0.0, r)).collect::<Result<_, _>>()?;
    let mx = value.iter().cloned().fold(0.0, f64::max);
    let mn = value.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ApSweep { r, value, width: mx / mn })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_algebra() {
        let c = AppendixConfig::new(1.5, 1.0, 0.1, 1000).unwrap();
        assert!((2.0 * c.eta() + 1.0 - (c.alpha - c.eps) * 2.0 / c.p).abs() < 1e-14);
        assert!((c.lhs_exponent() - (-c.eps - c.p / 2.0)).abs() < 1e-14);
        assert!(c.diverges());
        assert!(!AppendixConfig::new(1.5, 1.0, 0.3, 1000).unwrap().diverges());
        let d = AppendixConfig::new(3.0, 1.0, 0.1, 1000).unwrap();
        assert!((d.construction_p() - 1.5).abs() < 1e-15 && d.dual_side());
        assert!(AppendixConfig::new(2.0, 1.0, 0.1, 10).is_err());
    }

    #[test]
    fn sigma_mass_closed_form() {
        for alpha in [0.5, 1.0] {
            assert!((sigma_mass(alpha, 0.0, 0.5) - sigma_total(alpha)).abs() < 1e-12);
            let d = DensityMeasure::new(DensityFamily::AppendixSigma { p: 1.5, alpha }).unwrap();
            let r = 1e-3;
            let q = integrate(&|x: f64| d.density(x), r, 0.5, 1e-14).unwrap();
            assert!((q - sigma_mass(alpha, r, 0.5)).abs() < 1e-10, "{q}");
            assert!((sigma_mass(alpha, 0.0, r) + q - sigma_total(alpha)).abs() < 1e-10);
        }
    }

    #[test]
    fn local_ap_band_and_errors() {
        let s = ap_sweep(1.5, 1.0, 2, 20).unwrap();
        assert!(s.width <= 4.0, "{}", s.width);
        for w in s.value.windows(2).skip(8) {
            assert!((w[1] / w[0] - 1.0).abs() < 0.2);
        }
        assert!(local_ap(1.5, 1.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn series_rates() {
        let c = AppendixConfig::new(1.5, 1.0, 0.1, 2_000_000).unwrap();
        let r = series_report(&c, 1000);
        assert!((r.lhs_block_slope - 0.15).abs() <= 0.03, "{}", r.lhs_block_slope);
        assert!(r.rhs_tail_spread < 2.0, "{}", r.rhs_tail_spread);
        assert!(r.substitution_gap < 1e-9, "{}", r.substitution_gap);
        let neg = series_report(&AppendixConfig::new(1.5, 1.0, 0.3, 2_000_000).unwrap(), 1000);
        assert!(neg.lhs_block_slope < 0.0);
    }

    #[test]
    fn maximal_profile_band() {
        let xs: Vec<f64> = (2..=20).map(|k| (-(k as f64)).exp2()).collect();
        let r = maximal_profile(1.0, &xs);
        for v in &r {
            assert!(*v >= 0.5 && *v <= 4.0, "{v}");
        }
        // outside the support the profile decays like total/x
        for x in [0.6, 0.8, 0.99] {
            let m = x_maximal(1.0, -(x as f64).ln()) / x;
            assert!((m - sigma_total(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn failure_growth() {
        let f1 = maximal_failure(1.5, 1.0, 8).unwrap();
        let inc = &f1.increments[2..];
        let mx = inc.iter().cloned().fold(0.0, f64::max);
        let mn = inc.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(mx / mn < 1.1, "{inc:?}");
        assert!((f1.companion - f1.companion_closed).abs() < 1e-10);
        let fh = maximal_failure(1.5, 0.5, 8).unwrap();
        assert!((fh.increment_slope - 0.5).abs() <= 0.05, "{}", fh.increment_slope);
    }

    #[test]
    fn tower_witness_grows() {
        let c = AppendixConfig::new(1.5, 1.0, 0.1, 10).unwrap();
        let v: Vec<f64> = (8..=20).map(|d| tower_offset_value(&c, d).unwrap()).collect();
        for w in v.windows(2) {
            assert!(w[1] > w[0], "{v:?}");
        }
    }
}

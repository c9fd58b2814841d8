//! Calderón–Zygmund stopping times, coronas and shifted coronas.

use crate::grid::CubeId;
use crate::measure::AtomicMeasure;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoronaError {
    #[error("gamma must exceed 1, got {0}")]
    Gamma(f64),
    #[error("root cube {0} carries no mass")]
    EmptyRoot(CubeId),
    #[error("{0} is not a stopping cube")]
    NotStopping(CubeId),
    #[error("f has {got} values for {want} atoms")]
    Length { got: usize, want: usize },
}

/// Prefix sums of `|f| dμ` and `dμ` over storage order.
#[derive(Clone, Debug)]
pub struct Averages {
    abs: Vec<f64>,
    mass: Vec<f64>,
}

impl Averages {
    pub fn new(mu: &AtomicMeasure, f: &[f64]) -> Self {
        let mut abs = vec![0.0; mu.len() + 1];
        let mut mass = vec![0.0; mu.len() + 1];
        for (i, a) in mu.atoms().iter().enumerate() {
            abs[i + 1] = abs[i] + f[i].abs() * a.m;
            mass[i + 1] = mass[i] + a.m;
        }
        Averages { abs, mass }
    }

    pub fn mass(&self, mu: &AtomicMeasure, q: &CubeId) -> f64 {
        let r = mu.range(q);
        self.mass[r.end] - self.mass[r.start]
    }

    /// `E_Q^μ|f|`, zero on null cubes.
    pub fn avg(&self, mu: &AtomicMeasure, q: &CubeId) -> f64 {
        let r = mu.range(q);
        let m = self.mass[r.end] - self.mass[r.start];
        if m > 0.0 {
            (self.abs[r.end] - self.abs[r.start]) / m
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoronaDecomposition {
    pub root: CubeId,
    pub gamma: f64,
    pub depth: u32,
    /// Stopping cubes in cube order.
    pub stopping: Vec<CubeId>,
    pub parent: BTreeMap<CubeId, CubeId>,
    pub children: BTreeMap<CubeId, Vec<CubeId>>,
    pub mass: BTreeMap<CubeId, f64>,
    pub average: BTreeMap<CubeId, f64>,
    pub alpha: BTreeMap<CubeId, f64>,
    /// Generation `n` of the tree (root is generation 0).
    pub generation: BTreeMap<CubeId, u32>,
}

/// Stopping tree of `f` (storage order) from `root` down to level `depth`.
pub fn cz_stopping(mu: &AtomicMeasure, f: &[f64], gamma: f64, root: CubeId, depth: u32) -> Result<CoronaDecomposition, CoronaError> {
    if gamma.is_nan() || gamma <= 1.0 {
        return Err(CoronaError::Gamma(gamma));
    }
    if f.len() != mu.len() {
        return Err(CoronaError::Length { got: f.len(), want: mu.len() });
    }
    let av = Averages::new(mu, f);
    if av.mass(mu, &root) <= 0.0 {
        return Err(CoronaError::EmptyRoot(root));
    }
    let mut d = CoronaDecomposition {
        root,
        gamma,
        depth,
        stopping: vec![root],
        parent: BTreeMap::new(),
        children: BTreeMap::new(),
        mass: BTreeMap::new(),
        average: BTreeMap::new(),
        alpha: BTreeMap::new(),
        generation: BTreeMap::new(),
    };
    let a0 = av.avg(mu, &root);
    d.mass.insert(root, av.mass(mu, &root));
    d.average.insert(root, a0);
    d.alpha.insert(root, a0);
    d.generation.insert(root, 0);
    let mut frontier = vec![root];
    let mut gen = 0;
    while !frontier.is_empty() {
        gen += 1;
        let mut next = Vec::new();
        for fcube in frontier {
            let threshold = gamma * d.average[&fcube];
            let mut kids = Vec::new();
            let mut stack: Vec<CubeId> = if fcube.level() < depth { fcube.children_unchecked() } else { vec![] };
            while let Some(i) = stack.pop() {
                let m = av.mass(mu, &i);
                if m <= 0.0 {
                    continue;
                }
                let a = av.avg(mu, &i);
                if a > 0.0 && a >= threshold {
                    kids.push(i);
                } else if i.level() < depth {
                    stack.extend(i.children_unchecked());
                }
            }
            kids.sort();
            let alpha_f = d.alpha[&fcube];
            for k in &kids {
                let a = av.avg(mu, k);
                d.parent.insert(*k, fcube);
                d.mass.insert(*k, av.mass(mu, k));
                d.average.insert(*k, a);
                d.alpha.insert(*k, alpha_f.max(a));
                d.generation.insert(*k, gen);
            }
            next.extend_from_slice(&kids);
            d.children.insert(fcube, kids);
        }
        d.stopping.extend_from_slice(&next);
        frontier = next;
    }
    d.stopping.sort();
    Ok(d)
}

impl CoronaDecomposition {
    pub fn is_stopping(&self, q: &CubeId) -> bool {
        self.generation.contains_key(q)
    }

    pub fn alpha_of(&self, f: &CubeId) -> Result<f64, CoronaError> {
        self.alpha.get(f).copied().ok_or(CoronaError::NotStopping(*f))
    }

    /// The smallest stopping cube containing `i`, if `i ⊆ F₀`.
    pub fn corona_of(&self, i: &CubeId) -> Option<CubeId> {
        if !self.root.contains(i) {
            return None;
        }
        (self.root.level()..=i.level()).rev().map(|l| i.ancestor(l).unwrap()).find(|a| self.is_stopping(a))
    }

    /// `C_F`: cubes `I ⊆ F` of level `≤ L` whose smallest stopping ancestor is `F`.
    pub fn corona(&self, f: &CubeId) -> Vec<CubeId> {
        let mut out = Vec::new();
        let mut stack = vec![*f];
        while let Some(i) = stack.pop() {
            out.push(i);
            if i.level() < self.depth {
                stack.extend(i.children_unchecked().into_iter().filter(|c| !self.is_stopping(c)));
            }
        }
        out.sort();
        out
    }

    /// `𝒩^τ(F) = {J ⊆ F : ℓ(J) > 2^-τ ℓ(F)}`.
    pub fn in_near_set(f: &CubeId, j: &CubeId, tau: u32) -> bool {
        f.contains(j) && j.level() < f.level() + tau
    }

    /// The unique `F` with `J ∈ C_F^{τ-shift}`: the corona of `J`'s `τ`-th ancestor.
    /// Cubes within the top `τ` levels of `F₀` belong to no shifted corona.
    pub fn shifted_owner(&self, j: &CubeId, tau: u32) -> Option<CubeId> {
        if j.level() < self.root.level() + tau {
            return None;
        }
        self.corona_of(&j.ancestor(j.level() - tau)?)
    }

    /// `[C_F ∖ 𝒩^τ(F)] ∪ ⋃_{F' ∈ 𝔠(F)} [𝒩^τ(F') ∖ 𝒩^τ(F)]`, built from the definition.
    pub fn shifted_corona(&self, f: &CubeId, tau: u32) -> Vec<CubeId> {
        let mut set: BTreeSet<CubeId> =
            self.corona(f).into_iter().filter(|j| !Self::in_near_set(f, j, tau)).collect();
        for k in self.children.get(f).map(|v| v.as_slice()).unwrap_or(&[]) {
            let top = (k.level() + tau).min(self.depth + 1);
            let mut frontier = vec![*k];
            for _ in k.level()..top {
                for j in &frontier {
                    if !Self::in_near_set(f, j, tau) {
                        set.insert(*j);
                    }
                }
                frontier = frontier.iter().flat_map(|c| c.children_unchecked()).collect();
            }
        }
        set.into_iter().collect()
    }

    fn descendants_in_tree(&self, f: &CubeId) -> Vec<(CubeId, u32)> {
        let g0 = self.generation[f];
        let mut out = vec![(*f, 0)];
        let mut i = 0;
        while i < out.len() {
            let (c, _) = out[i];
            for k in self.children.get(&c).map(|v| v.as_slice()).unwrap_or(&[]) {
                out.push((*k, self.generation[k] - g0));
            }
            i += 1;
        }
        out
    }

    /// `Σ_F α_𝓕(F) 1_F` at each atom.
    pub fn alpha_sum(&self, mu: &AtomicMeasure) -> Vec<f64> {
        let mut out = vec![0.0; mu.len()];
        for f in &self.stopping {
            let a = self.alpha[f];
            for k in mu.range(f) {
                out[k] += a;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub property: String,
    pub cube: CubeId,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantitativeReport {
    pub stopping_cubes: usize,
    /// Largest `Σ_{F'∈𝔠(F)} |F'|_μ / |F|_μ`; must be `≤ 1/Γ`.
    pub child_ratio: f64,
    /// Largest `Σ_{F'⪯F} |F'|_μ / |F|_μ`; must be `≤ Γ/(Γ-1)`.
    pub carleson_ratio: f64,
    /// Measured `Σ_F α²|F|_μ / ‖f‖²`, against `4Γ/(Γ-1)`.
    pub quasi_orth: f64,
    /// Measured `‖Σ_F α 1_F‖² / ‖f‖²`, against `4(Γ/(Γ-1))²`.
    pub alpha_sum: f64,
    /// Largest `E_I|f| / (Γ α(F))` over `I ∈ C_F`.
    pub average_control: f64,
    /// Largest `β_{ℓN}(F) 2^ℓ / |F|_μ`; must be `≤ 1`.
    pub decay: f64,
    pub decay_step: u32,
    pub failures: Vec<Failure>,
}

impl QuantitativeReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks the Carleson, quasi-orthogonality, average control and geometric decay properties.
pub fn check_quantitative(d: &CoronaDecomposition, mu: &AtomicMeasure, f: &[f64]) -> QuantitativeReport {
    let g = d.gamma;
    let tol = 1e-12;
    let n_step = (2.0 * g / (g - 1.0)).floor() as u32;
    let av = Averages::new(mu, f);
    let per_f: Vec<(f64, f64, f64, f64, Vec<Failure>)> = d
        .stopping
        .par_iter()
        .map(|fc| {
            let mut fails = Vec::new();
            let mf = d.mass[fc];
            let kids: f64 = d.children.get(fc).map(|v| v.iter().map(|k| d.mass[k]).sum()).unwrap_or(0.0);
            let child = kids / mf;
            if child > (1.0 / g) * (1.0 + tol) {
                fails.push(Failure { property: "child-mass".into(), cube: *fc, lhs: kids, rhs: mf / g });
            }
            let tree = d.descendants_in_tree(fc);
            let total: f64 = tree.iter().map(|(c, _)| d.mass[c]).sum();
            let car = total / mf;
            if car > g / (g - 1.0) * (1.0 + tol) {
                fails.push(Failure { property: "carleson".into(), cube: *fc, lhs: total, rhs: g / (g - 1.0) * mf });
            }
            let mut beta: BTreeMap<u32, f64> = BTreeMap::new();
            for (c, gen) in &tree {
                *beta.entry(*gen).or_default() += d.mass[c];
            }
            let mut decay = 0.0f64;
            for l in 1.. {
                let gen = l * n_step;
                let Some(b) = beta.get(&gen) else { break };
                let r = b * (l as f64).exp2() / mf;
                decay = decay.max(r);
                if r > 1.0 + tol {
                    fails.push(Failure { property: "geometric-decay".into(), cube: *fc, lhs: *b, rhs: mf * (-(l as f64)).exp2() });
                }
            }
            let alpha = d.alpha[fc];
            let mut ctrl = 0.0f64;
            for i in d.corona(fc) {
                if av.mass(mu, &i) <= 0.0 {
                    continue;
                }
                let a = av.avg(mu, &i);
                let ok = if alpha == 0.0 { a <= 0.0 } else { a < g * alpha };
                if alpha > 0.0 {
                    ctrl = ctrl.max(a / (g * alpha));
                }
                if !ok {
                    fails.push(Failure { property: "average-control".into(), cube: i, lhs: a, rhs: g * alpha });
                }
            }
            (child, car, decay, ctrl, fails)
        })
        .collect();
    let mut rep = QuantitativeReport {
        stopping_cubes: d.stopping.len(),
        child_ratio: 0.0,
        carleson_ratio: 0.0,
        quasi_orth: 0.0,
        alpha_sum: 0.0,
        average_control: 0.0,
        decay: 0.0,
        decay_step: n_step,
        failures: Vec::new(),
    };
    for (c, car, dec, ctrl, fails) in per_f {
        rep.child_ratio = rep.child_ratio.max(c);
        rep.carleson_ratio = rep.carleson_ratio.max(car);
        rep.decay = rep.decay.max(dec);
        rep.average_control = rep.average_control.max(ctrl);
        rep.failures.extend(fails);
    }
    let rng = mu.range(&d.root);
    let f2: f64 = rng.clone().map(|k| f[k] * f[k] * mu.mass(k)).sum();
    let qo: f64 = d.stopping.iter().map(|c| d.alpha[c].powi(2) * d.mass[c]).sum();
    let s = d.alpha_sum(mu);
    let as2: f64 = rng.map(|k| s[k] * s[k] * mu.mass(k)).sum();
    let (qo_bound, as_bound) = (4.0 * g / (g - 1.0), 4.0 * (g / (g - 1.0)).powi(2));
    if f2 > 0.0 {
        rep.quasi_orth = qo / f2;
        rep.alpha_sum = as2 / f2;
        if rep.quasi_orth > qo_bound * (1.0 + tol) {
            rep.failures.push(Failure { property: "quasi-orthogonality".into(), cube: d.root, lhs: qo, rhs: qo_bound * f2 });
        }
        if rep.alpha_sum > as_bound * (1.0 + tol) {
            rep.failures.push(Failure { property: "alpha-sum".into(), cube: d.root, lhs: as2, rhs: as_bound * f2 });
        }
    }
    rep
}

/// Largest number of shifted coronas containing a single cube, over all cubes of level `≤ L`,
/// computed from the set definition.
pub fn shifted_overlap(d: &CoronaDecomposition, tau: u32) -> (usize, Option<CubeId>) {
    let mut count: BTreeMap<CubeId, usize> = BTreeMap::new();
    for f in &d.stopping {
        for j in d.shifted_corona(f, tau) {
            *count.entry(j).or_default() += 1;
        }
    }
    count.into_iter().fold((0, None), |acc, (c, k)| if k > acc.0 { (k, Some(c)) } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate, MeasureKind};

    fn uniform(depth: u32) -> AtomicMeasure {
        generate(&MeasureKind::Uniform { n: 1, depth }).unwrap()
    }

    #[test]
    fn constant_gives_single_corona() {
        let mu = uniform(6);
        let d = cz_stopping(&mu, &vec![1.0; mu.len()], 2.0, CubeId::root(1), 6).unwrap();
        assert_eq!(d.stopping, vec![CubeId::root(1)]);
        assert_eq!(d.alpha_of(&CubeId::root(1)).unwrap(), 1.0);
        assert!(check_quantitative(&d, &mu, &vec![1.0; mu.len()]).passed());
    }

    #[test]
    fn chain_example() {
        let m = 5;
        let mu = uniform(8);
        let f: Vec<f64> = mu.atoms().iter().map(|a| if a.x[0] < (-(m as f64)).exp2() { (m as f64).exp2() } else { 0.0 }).collect();
        let d = cz_stopping(&mu, &f, 2.0, CubeId::root(1), 8).unwrap();
        let want: Vec<CubeId> = (0..=m).map(|k| CubeId::new(k, &[0]).unwrap()).collect();
        assert_eq!(d.stopping, want);
        for k in 0..=m {
            assert!((d.alpha[&want[k as usize]] - (k as f64).exp2()).abs() < 1e-12);
        }
        let rep = check_quantitative(&d, &mu, &f);
        assert!(rep.passed(), "{:?}", rep.failures);
        assert!((rep.child_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn off_support_is_trivial() {
        let mu = uniform(6);
        let root: CubeId = "1:0".parse().unwrap();
        let f: Vec<f64> = mu.atoms().iter().map(|a| if a.x[0] >= 0.5 { 3.0 } else { 0.0 }).collect();
        let d = cz_stopping(&mu, &f, 2.0, root, 6).unwrap();
        assert_eq!(d.stopping, vec![root]);
        assert_eq!(d.alpha[&root], 0.0);
        assert!(check_quantitative(&d, &mu, &f).passed());
    }

    #[test]
    fn single_corona_shift() {
        let mu = uniform(5);
        let d = cz_stopping(&mu, &vec![1.0; mu.len()], 2.0, CubeId::root(1), 5).unwrap();
        let s = d.shifted_corona(&CubeId::root(1), 2);
        assert!(s.iter().all(|j| j.level() >= 2));
        assert_eq!(s.len(), 64 - 4);
    }

    #[test]
    fn shifted_owner_matches_sets() {
        let mu = generate(&MeasureKind::Cascade { n: 1, depth: 7, beta: 0.25, seed: 4 }).unwrap();
        let f: Vec<f64> = (0..mu.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let d = cz_stopping(&mu, &f, 2.0, CubeId::root(1), 7).unwrap();
        assert!(d.stopping.len() > 1);
        for tau in 1..4 {
            let mut owner: BTreeMap<CubeId, CubeId> = BTreeMap::new();
            for fc in &d.stopping {
                for j in d.shifted_corona(fc, tau) {
                    assert!(owner.insert(j, *fc).is_none());
                }
            }
            for j in crate::grid::GridSpec::new(1, 7).unwrap().all_cubes(7) {
                assert_eq!(owner.get(&j).copied(), d.shifted_owner(&j, tau), "{j} tau={tau}");
            }
            assert!(shifted_overlap(&d, tau).0 <= tau as usize);
        }
    }

    #[test]
    fn coronas_partition_and_connect() {
        let mu = generate(&MeasureKind::Cascade { n: 2, depth: 5, beta: 0.2, seed: 9 }).unwrap();
        let f: Vec<f64> = (0..mu.len()).map(|i| ((i * 31) % 17) as f64).collect();
        let d = cz_stopping(&mu, &f, 1.5, CubeId::root(2), 5).unwrap();
        let mut seen = BTreeSet::new();
        for fc in &d.stopping {
            let c = d.corona(fc);
            assert!(c.contains(fc));
            for i in &c {
                assert!(seen.insert(*i));
                assert_eq!(d.corona_of(i), Some(*fc));
                let mut a = *i;
                while a != *fc {
                    a = a.parent().unwrap();
                    assert!(c.binary_search(&a).is_ok());
                }
            }
        }
        assert_eq!(seen.len(), crate::grid::GridSpec::new(2, 5).unwrap().all_cubes(5).len());
        assert!(check_quantitative(&d, &mu, &f).passed());
    }
}

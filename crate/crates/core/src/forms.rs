//! Exact bookkeeping of the bilinear form `⟨T_σ f, g⟩_ω` over pairs of Alpert differences.

use crate::alpert::{AlpertError, AlpertSystem, Local};
use crate::constants::Pair;
use crate::corona::CoronaDecomposition;
use crate::grid::{deeply_embedded, CubeId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormsError {
    #[error(transparent)]
    Alpert(#[from] AlpertError),
    #[error("pair ({i}, {j}) qualifies for the vanishing form {form}")]
    Structural { form: &'static str, i: CubeId, j: CubeId },
    #[error("tau = {tau} exceeds rho = {rho}")]
    Parameters { rho: u32, tau: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormParams {
    pub rho: u32,
    pub eps: f64,
    pub tau: u32,
    pub gamma: f64,
    pub kappa: u32,
}

/// Cube-size class of a pair `(I, J)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    /// `J ⋐_{ρ,ε} I`.
    Below,
    /// `I ⋐_{ρ,ε} J`.
    Above,
    /// Disjoint with side ratio outside `[2^-ρ, 2^ρ]`.
    Disjoint,
    /// Comparable sides, disjoint closures.
    Comparable,
    /// `J ∈ Adj_ρ(I)`.
    Adjacent,
    /// Nested with level gap `> ρ` but not deeply embedded.
    Bad,
}

impl SizeClass {
    pub fn part(&self) -> &'static str {
        match self {
            SizeClass::Below => "b_below",
            SizeClass::Above => "b_above",
            SizeClass::Disjoint => "b_disjoint",
            SizeClass::Comparable => "b_comparable",
            SizeClass::Adjacent => "b_adj",
            SizeClass::Bad => "b_bad",
        }
    }
}

fn gap(i: &CubeId, j: &CubeId) -> u32 {
    i.level().abs_diff(j.level())
}

/// Literal membership in each of the five classes; more than one is possible only for
/// nested pairs at gap exactly `ρ`.
pub fn literal_classes(i: &CubeId, j: &CubeId, rho: u32, eps: f64) -> Vec<SizeClass> {
    let mut out = Vec::new();
    let comparable = gap(i, j) <= rho;
    if deeply_embedded(j, i, rho, eps) {
        out.push(SizeClass::Below);
    }
    if deeply_embedded(i, j, rho, eps) {
        out.push(SizeClass::Above);
    }
    if !comparable && i.disjoint(j) {
        out.push(SizeClass::Disjoint);
    }
    if comparable && !i.closures_intersect(j) {
        out.push(SizeClass::Comparable);
    }
    if comparable && i.closures_intersect(j) {
        out.push(SizeClass::Adjacent);
    }
    out
}

/// The class of `(I, J)`, with `⋐`/`⋑` taking priority over `Adj_ρ`.
pub fn classify(i: &CubeId, j: &CubeId, rho: u32, eps: f64) -> SizeClass {
    literal_classes(i, j, rho, eps).first().copied().unwrap_or(SizeClass::Bad)
}

/// `K` is good when it is deeply embedded in every ancestor more than `ρ` levels up.
pub fn is_good(k: &CubeId, root: &CubeId, rho: u32, eps: f64) -> bool {
    (root.level()..k.level())
        .filter(|l| k.level() - l > rho)
        .all(|l| deeply_embedded(k, &k.ancestor(l).unwrap(), rho, eps))
}

/// A random element of the span of `{h_I^a}` over the kept cubes of level `< L`.
pub fn random_wavelet(sys: &AlpertSystem, rng: &mut ChaCha8Rng, keep: impl Fn(&CubeId) -> bool) -> Vec<f64> {
    let mut f = vec![0.0; sys.len_atoms()];
    for c in sys.cubes().iter().filter(|c| c.level() < sys.depth && keep(c)) {
        for h in sys.alpert_functions(c) {
            h.add_into(&mut f, rng.gen_range(-1.0..1.0));
        }
    }
    f
}

/// `Σ_{I kept} Δ_I f`.
pub fn project(sys: &AlpertSystem, f: &[f64], keep: impl Fn(&CubeId) -> bool) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for c in sys.cubes().iter().filter(|c| c.level() < sys.depth && keep(c)) {
        sys.difference(c, f).add_into(&mut out, 1.0);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub scale: f64,
    pub tol: f64,
    pub holds: bool,
}

impl IdentityCheck {
    fn new(name: &str, lhs: f64, rhs: f64, scale: f64, tol: f64) -> Self {
        let holds = (lhs - rhs).abs() <= tol * scale.max(f64::MIN_POSITIVE);
        IdentityCheck { name: name.into(), lhs, rhs, scale, tol, holds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoronaBlock {
    pub stopping: CubeId,
    pub block: f64,
    pub home: f64,
    pub paraproduct: f64,
    pub stop: f64,
    pub commutator: f64,
    pub neighbour: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormLedger {
    pub params: FormParams,
    /// `⟨T_σ f̃, g̃⟩_ω` for the wavelet parts `f̃ = Σ_I Δ_I f`, `g̃ = Σ_J Δ_J g`.
    pub total: f64,
    /// `Σ_{I,J} |⟨T_σ Δ_I f, Δ_J g⟩_ω|`.
    pub scale: f64,
    pub parts: BTreeMap<String, f64>,
    pub pair_counts: BTreeMap<String, usize>,
    /// Pairs in two literal classes at once (resolved by priority).
    pub overlaps: usize,
    pub identities: Vec<IdentityCheck>,
    pub coronas: Vec<CoronaBlock>,
}

impl FormLedger {
    pub fn failures(&self) -> Vec<&IdentityCheck> {
        self.identities.iter().filter(|c| !c.holds).collect()
    }

    pub fn part(&self, name: &str) -> f64 {
        self.parts.get(name).copied().unwrap_or(0.0)
    }
}

pub const IDENTITY_TOL: f64 = 1e-8;

/// Pair table `v(I, J) = ⟨T_σ Δ_I f, Δ_J g⟩_ω` with everything needed to split it.
pub struct Forms<'a> {
    pub pair: &'a Pair,
    pub sa: &'a AlpertSystem,
    pub oa: &'a AlpertSystem,
    pub params: FormParams,
    df: Vec<(CubeId, Local)>,
    dg: Vec<(CubeId, Local)>,
    /// `values[a][b]` for `df[a]`, `dg[b]`.
    values: Vec<Vec<f64>>,
    f: Vec<f64>,
    total: f64,
}

impl<'a> Forms<'a> {
    pub fn new(pair: &'a Pair, sa: &'a AlpertSystem, oa: &'a AlpertSystem, params: FormParams, f: &[f64], g: &[f64]) -> Self {
        let nz = |l: &Local| l.values.iter().any(|v| *v != 0.0);
        let df: Vec<(CubeId, Local)> =
            sa.cubes().iter().filter(|c| c.level() < sa.depth).map(|c| (*c, sa.difference(c, f))).filter(|(_, l)| nz(l)).collect();
        let dg: Vec<(CubeId, Local)> =
            oa.cubes().iter().filter(|c| c.level() < oa.depth).map(|c| (*c, oa.difference(c, g))).filter(|(_, l)| nz(l)).collect();
        let ns = pair.sigma.len();
        let values: Vec<Vec<f64>> = df
            .par_iter()
            .map(|(_, di)| {
                let u = pair.apply(&dense(di, ns));
                dg.iter().map(|(_, dj)| dj.range().map(|x| pair.omega.mass(x) * dj.get(x) * u[x]).sum()).collect()
            })
            .collect();
        let ft = project(sa, f, |_| true);
        let gt = project(oa, g, |_| true);
        let tf = pair.apply(&ft);
        let total = (0..pair.omega.len()).map(|x| pair.omega.mass(x) * tf[x] * gt[x]).sum();
        Forms { pair, sa, oa, params, df, dg, values, f: f.to_vec(), total }
    }

    fn scale(&self) -> f64 {
        self.values.iter().flatten().map(|v| v.abs()).sum()
    }

    fn empty_ledger(&self) -> FormLedger {
        FormLedger {
            params: self.params,
            total: self.total,
            scale: self.scale(),
            parts: BTreeMap::new(),
            pair_counts: BTreeMap::new(),
            overlaps: 0,
            identities: Vec::new(),
            coronas: Vec::new(),
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (&CubeId, &CubeId, f64)> {
        self.df.iter().enumerate().flat_map(move |(a, (i, _))| self.dg.iter().enumerate().map(move |(b, (j, _))| (i, j, self.values[a][b])))
    }

    /// Five-way cube-size splitting plus the goodness remainder `b_bad`.
    pub fn split_by_size(&self, ledger: &mut FormLedger) {
        let (rho, eps) = (self.params.rho, self.params.eps);
        let mut sums: BTreeMap<SizeClass, (f64, usize)> = BTreeMap::new();
        for (i, j, v) in self.pairs() {
            let lit = literal_classes(i, j, rho, eps);
            if lit.len() > 1 {
                ledger.overlaps += 1;
            }
            let c = lit.first().copied().unwrap_or(SizeClass::Bad);
            let e = sums.entry(c).or_default();
            e.0 += v;
            e.1 += 1;
        }
        for c in [SizeClass::Below, SizeClass::Above, SizeClass::Disjoint, SizeClass::Comparable, SizeClass::Adjacent, SizeClass::Bad] {
            let (v, n) = sums.get(&c).copied().unwrap_or_default();
            ledger.parts.insert(c.part().into(), v);
            ledger.pair_counts.insert(c.part().into(), n);
        }
        let n_pairs: usize = ledger.pair_counts.values().sum();
        ledger.pair_counts.insert("all".into(), n_pairs);
        let five: f64 = ["b_below", "b_above", "b_disjoint", "b_comparable", "b_adj"].iter().map(|k| ledger.part(k)).sum();
        let s = ledger.scale;
        ledger.identities.push(IdentityCheck::new("size: five classes + bad = total", five + ledger.part("b_bad"), self.total, s, IDENTITY_TOL));
        ledger.identities.push(IdentityCheck::new(
            "size: every pair classified once",
            n_pairs as f64,
            (self.df.len() * self.dg.len()) as f64,
            1.0,
            0.0,
        ));
    }

    /// Canonical splitting of `B_⋐` by the corona of `I` and shifted corona of `J`, and the
    /// two-term split of the far-below form.
    pub fn canonical_split(&self, decomp: &CoronaDecomposition, ledger: &mut FormLedger) -> Result<(), FormsError> {
        let FormParams { rho, eps, tau, .. } = self.params;
        if tau > rho {
            return Err(FormsError::Parameters { rho, tau });
        }
        let (mut diag, mut below, mut fb1, mut fb2, mut b_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
        // far-above and disjoint pairs abort the split, so their sums stay empty
        let (above, disj) = (0.0, 0.0);
        let mut counts = [0usize; 4];
        for (i, j, v) in self.pairs() {
            let fi = decomp.corona_of(i);
            let gj = decomp.shifted_owner(j, tau);
            let deep = deeply_embedded(j, i, rho, eps);
            if let (Some(f), Some(g)) = (fi, gj) {
                if g != f && f.contains(&g) && i.contains(j) && i != j {
                    fb1 += v;
                    if !deep {
                        fb2 += v;
                    }
                }
            }
            if !deep {
                continue;
            }
            b_sum += v;
            let (Some(f), Some(g)) = (fi, gj) else {
                return Err(FormsError::Structural { form: "uncovered", i: *i, j: *j });
            };
            if g == f {
                diag += v;
                counts[0] += 1;
            } else if f.contains(&g) {
                below += v;
                counts[1] += 1;
            } else if g.contains(&f) {
                return Err(FormsError::Structural { form: "t_far_above", i: *i, j: *j });
            } else {
                return Err(FormsError::Structural { form: "t_disjoint", i: *i, j: *j });
            }
        }
        for (k, (name, val)) in
            [("t_diagonal", diag), ("t_far_below", below), ("t_far_above", above), ("t_disjoint", disj)].into_iter().enumerate()
        {
            ledger.parts.insert(name.into(), val);
            ledger.pair_counts.insert(name.into(), counts[k]);
        }
        ledger.parts.insert("t_fb1".into(), fb1);
        ledger.parts.insert("t_fb2".into(), fb2);
        let s = ledger.scale;
        ledger.identities.push(IdentityCheck::new("canonical: diag + far below + far above + disjoint = B_below", diag + below + above + disj, b_sum, s, IDENTITY_TOL));
        ledger.identities.push(IdentityCheck::new("canonical: far above and disjoint pair sets empty", (counts[2] + counts[3]) as f64, 0.0, 1.0, 0.0));
        ledger.identities.push(IdentityCheck::new("far below: fb1 - fb2 = far below", fb1 - fb2, below, s, IDENTITY_TOL));
        Ok(())
    }

    /// Paraproduct / stop / commutator / neighbour split of each corona block.
    pub fn ntv_split(&self, decomp: &CoronaDecomposition, ledger: &mut FormLedger) -> Result<(), FormsError> {
        let FormParams { rho, eps, tau, kappa, .. } = self.params;
        let pair = self.pair;
        let ns = pair.sigma.len();
        // group deep pairs by corona
        let mut by_f: BTreeMap<CubeId, Vec<(usize, usize)>> = BTreeMap::new();
        for (a, (i, _)) in self.df.iter().enumerate() {
            for (b, (j, _)) in self.dg.iter().enumerate() {
                if !deeply_embedded(j, i, rho, eps) {
                    continue;
                }
                let (Some(f), Some(g)) = (decomp.corona_of(i), decomp.shifted_owner(j, tau)) else { continue };
                if f == g {
                    by_f.entry(f).or_default().push((a, b));
                }
            }
        }
        let blocks: Vec<CoronaBlock> = by_f
            .par_iter()
            .map(|(fc, list)| {
                let t1f = pair.t_indicator(fc);
                let franges = pair.sigma.range(fc);
                let mut cache: HashMap<(usize, CubeId), Vec<f64>> = HashMap::new();
                let mut t1: HashMap<CubeId, Vec<f64>> = HashMap::new();
                let mut blk = CoronaBlock {
                    stopping: *fc,
                    block: 0.0,
                    home: 0.0,
                    paraproduct: 0.0,
                    stop: 0.0,
                    commutator: 0.0,
                    neighbour: 0.0,
                    scale: 0.0,
                };
                for &(a, b) in list {
                    let (i, di) = &self.df[a];
                    let (j, dj) = &self.dg[b];
                    let ij = i.child_toward(j).expect("J inside I");
                    let mut piece = |c: &CubeId| -> Vec<f64> {
                        cache
                            .entry((a, *c))
                            .or_insert_with(|| {
                                let r = pair.sigma.range(c);
                                let local = Local { start: r.start, values: r.clone().map(|y| di.get(y)).collect() };
                                pair.apply(&dense(&local, ns))
                            })
                            .clone()
                    };
                    let pair_dg = |u: &[f64]| -> f64 { dj.range().map(|x| pair.omega.mass(x) * dj.get(x) * u[x]).sum() };
                    let v = self.values[a][b];
                    blk.block += v;
                    blk.scale += v.abs();
                    let home_u = piece(&ij);
                    blk.home += pair_dg(&home_u);
                    for th in i.children_unchecked().into_iter().filter(|c| *c != ij) {
                        let u = piece(&th);
                        blk.neighbour += pair_dg(&u);
                    }
                    let m = self.sa.difference_poly(i, &ij, &self.f);
                    let mx: Vec<(usize, f64)> = dj.range().map(|x| (x, m.eval(pair.omega.point(x)))).collect();
                    let rij = pair.sigma.range(&ij);
                    // T(M 1_{I_J}) from the polynomial at the σ atoms of I_J
                    let mut msig = vec![0.0; ns];
                    for y in rij.clone() {
                        msig[y] = m.eval(pair.sigma.point(y));
                    }
                    let tm = pair.apply(&msig);
                    let t1ij = t1.entry(ij).or_insert_with(|| pair.t_indicator(&ij)).clone();
                    for &(x, mv) in &mx {
                        let w = pair.omega.mass(x) * dj.get(x);
                        let outside: f64 =
                            franges.clone().filter(|y| !rij.contains(y)).map(|y| pair.k[(x, y)] * pair.sigma.mass(y)).sum();
                        blk.paraproduct += w * mv * t1f[x];
                        blk.stop -= w * mv * outside;
                        blk.commutator += w * (tm[x] - mv * t1ij[x]);
                    }
                }
                blk
            })
            .collect();
        let (mut para, mut stop, mut comm, mut neigh, mut home, mut diag) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let s = ledger.scale;
        for b in &blocks {
            let name = format!("ntv[{}]: para + stop + comm + neigh = block", b.stopping);
            ledger.identities.push(IdentityCheck::new(&name, b.paraproduct + b.stop + b.commutator + b.neighbour, b.block, b.scale, IDENTITY_TOL));
            para += b.paraproduct;
            stop += b.stop;
            comm += b.commutator;
            neigh += b.neighbour;
            home += b.home;
            diag += b.block;
        }
        for (k, v) in [("b_paraproduct", para), ("b_stop", stop), ("b_commutator", comm), ("b_neighbour", neigh), ("b_home", home)] {
            ledger.parts.insert(k.into(), v);
        }
        ledger.identities.push(IdentityCheck::new("ntv: home = para + stop + comm", para + stop + comm, home, s, IDENTITY_TOL));
        ledger.identities.push(IdentityCheck::new("ntv: sum over coronas = t_diagonal", para + stop + comm + neigh, diag, s, IDENTITY_TOL));
        if let Some(td) = ledger.parts.get("t_diagonal").copied() {
            ledger.identities.push(IdentityCheck::new("ntv: blocks = canonical t_diagonal", diag, td, s, IDENTITY_TOL));
        }
        if kappa == 1 {
            let cs: f64 = blocks.iter().map(|b| b.commutator.abs()).sum();
            ledger.identities.push(IdentityCheck::new("ntv: Haar commutator vanishes", cs, 0.0, s, 1e-12));
        }
        ledger.coronas = blocks;
        Ok(())
    }

    /// Every split, with every identity recorded.
    pub fn ledger(&self, decomp: &CoronaDecomposition) -> Result<FormLedger, FormsError> {
        let mut l = self.empty_ledger();
        self.split_by_size(&mut l);
        self.canonical_split(decomp, &mut l)?;
        self.ntv_split(decomp, &mut l)?;
        Ok(l)
    }
}

fn dense(l: &Local, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    l.add_into(&mut v, 1.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corona::cz_stopping;
    use crate::grid::GridSpec;
    use crate::kernel::KernelSpec;
    use crate::measure::{generate, MeasureKind};
    use rand::SeedableRng;

    fn setup(seed: u64, depth: u32, kappa: u32) -> (Pair, AlpertSystem, AlpertSystem) {
        let s = generate(&MeasureKind::Cascade { n: 1, depth, beta: 0.3, seed }).unwrap();
        let w = generate(&MeasureKind::Cascade { n: 1, depth, beta: 0.3, seed: seed + 77 }).unwrap();
        let grid = GridSpec::new(1, depth).unwrap();
        let pair = Pair::new(KernelSpec::hilbert(1.0 / 64.0, 1.0), s, w, grid);
        let sa = AlpertSystem::new(&pair.sigma, kappa, depth, CubeId::root(1)).unwrap();
        let oa = AlpertSystem::new(&pair.omega, kappa, depth, CubeId::root(1)).unwrap();
        (pair, sa, oa)
    }

    fn params(kappa: u32) -> FormParams {
        FormParams { rho: 3, eps: 0.9, tau: 2, gamma: 2.0, kappa }
    }

    #[test]
    fn full_ledger_identities() {
        for kappa in [1, 2] {
            let (pair, sa, oa) = setup(4, 5, kappa);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let root = CubeId::root(1);
            let good = |c: &CubeId| is_good(c, &root, 3, 0.9);
            let f = random_wavelet(&sa, &mut rng, good);
            let g = random_wavelet(&oa, &mut rng, good);
            let d = cz_stopping(&pair.sigma, &f, 2.0, root, 5).unwrap();
            let forms = Forms::new(&pair, &sa, &oa, params(kappa), &f, &g);
            let l = forms.ledger(&d).unwrap();
            assert!(l.failures().is_empty(), "{:?}", l.failures());
            assert!(l.part("b_bad").abs() < 1e-12);
            assert!(l.pair_counts["t_diagonal"] > 0);
        }
    }

    #[test]
    fn constant_g_gives_zero() {
        let (pair, sa, oa) = setup(1, 4, 1);
        let f: Vec<f64> = (0..pair.sigma.len()).map(|k| (k as f64).sin()).collect();
        let g = vec![1.0; pair.omega.len()];
        let forms = Forms::new(&pair, &sa, &oa, params(1), &f, &g);
        let mut l = forms.empty_ledger();
        forms.split_by_size(&mut l);
        assert!(l.parts.values().all(|v| v.abs() < 1e-12));
        assert!(l.total.abs() < 1e-12);
    }

    #[test]
    fn huge_rho_empties_nested_classes() {
        let (pair, sa, oa) = setup(2, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_wavelet(&sa, &mut rng, |_| true);
        let g = random_wavelet(&oa, &mut rng, |_| true);
        let mut p = params(1);
        p.rho = 10;
        let forms = Forms::new(&pair, &sa, &oa, p, &f, &g);
        let mut l = forms.empty_ledger();
        forms.split_by_size(&mut l);
        for k in ["b_below", "b_above", "b_disjoint", "b_bad"] {
            assert_eq!(l.pair_counts[k], 0);
        }
        assert!(l.failures().is_empty());
    }

    #[test]
    fn ledger_is_linear_in_f() {
        let (pair, sa, oa) = setup(3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f1 = random_wavelet(&sa, &mut rng, |_| true);
        let f2 = random_wavelet(&sa, &mut rng, |_| true);
        let g = random_wavelet(&oa, &mut rng, |_| true);
        let f3: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let run = |f: &[f64]| {
            let forms = Forms::new(&pair, &sa, &oa, params(2), f, &g);
            let mut l = forms.empty_ledger();
            forms.split_by_size(&mut l);
            l
        };
        let (l1, l2, l3) = (run(&f1), run(&f2), run(&f3));
        for (k, v) in &l3.parts {
            assert!((v - (2.0 * l1.parts[k] - 0.5 * l2.parts[k])).abs() <= 1e-10 * l3.scale);
        }
    }
}

//! Weighted Alpert wavelets: projections `E_{I;κ}`, differences `Δ_{I;κ}`, expansions.

use crate::grid::{CubeId, GridError};
use crate::measure::AtomicMeasure;
use crate::poly::{monomials_at, multi_indices, MultiIndex, Poly};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

/// Relative eigenvalue cutoff of the Gram matrix.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlpertError {
    #[error("kappa must be at least 1")]
    Kappa,
    #[error("function has {got} values, measure has {want} atoms")]
    Length { got: usize, want: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("cube {0} has zero mass")]
    NullCube(CubeId),
}

/// Values of a function on a contiguous atom range.
#[derive(Clone, Debug, PartialEq)]
pub struct Local {
    pub start: usize,
    pub values: Vec<f64>,
}

impl Local {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.values.len()
    }
    pub fn get(&self, i: usize) -> f64 {
        if i >= self.start && i < self.start + self.values.len() {
            self.values[i - self.start]
        } else {
            0.0
        }
    }
    pub fn add_into(&self, out: &mut [f64], scale: f64) {
        for (o, v) in out[self.range()].iter_mut().zip(&self.values) {
            *o += scale * v;
        }
    }
}

/// Orthonormal basis of `L²_{I;κ}(μ)` restricted polynomials on one cube.
#[derive(Clone, Debug)]
pub struct CubeBasis {
    pub cube: CubeId,
    pub range: Range<usize>,
    /// Monomial coefficients of each basis function (`poly_dim × rank`).
    pub coef: DMatrix<f64>,
    /// Basis values at the cube's atoms (`#atoms × rank`).
    pub values: DMatrix<f64>,
    /// Nonempty children, in child order.
    pub children: Vec<CubeId>,
    /// Alpert functions in stacked child-basis coordinates (`Σ rank_child × d_I`).
    pub alpert: DMatrix<f64>,
}

impl CubeBasis {
    pub fn rank(&self) -> usize {
        self.values.ncols()
    }
    /// `d_{I;κ}`, the number of Alpert functions on this cube.
    pub fn alpert_rank(&self) -> usize {
        self.alpert.ncols()
    }
}

#[derive(Clone, Debug)]
pub struct AlpertSystem {
    pub kappa: u32,
    pub depth: u32,
    pub root: CubeId,
    pub betas: Vec<MultiIndex>,
    masses: Vec<f64>,
    points: Vec<crate::grid::Point>,
    nodes: HashMap<CubeId, CubeBasis>,
    order: Vec<CubeId>,
}

/// Alpert expansion of one function.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoefficients {
    pub root: CubeId,
    /// Coefficients of `E_{F0;κ} f` in the root basis.
    pub top: Vec<f64>,
    /// `f̂(I)` for every cube with `d_{I;κ} > 0`.
    pub coeffs: BTreeMap<CubeId, Vec<f64>>,
    /// `f - Σ_{ℓ(I)=2^-L} E_{I;κ} f`; zero when no finest cube carries more than `rank` atoms.
    pub residual: Vec<f64>,
}

impl WaveletCoefficients {
    /// One `cube,rank,c1;c2;...` line per cube.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cube,rank,coefficients\n");
        s += &format!("top,{},{}\n", self.top.len(), join(&self.top));
        for (c, v) in &self.coeffs {
            s += &format!("{c},{},{}\n", v.len(), join(v));
        }
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
}

/// Graded Gram-Schmidt in `L²(μ|_I)` over the monomials, twice per column. A monomial is
/// dropped when its residual has squared norm `≤ RANK_TOL·λ_max(Gram)`, so degenerate cubes
/// keep the lowest-degree representatives.
fn orthonormal_basis(mu: &AtomicMeasure, cube: &CubeId, range: Range<usize>, betas: &[MultiIndex]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = range.len();
    let d = betas.len();
    let phi = DMatrix::from_fn(n, d, |i, a| monomials_at(cube, betas, mu.point(range.start + i))[a]);
    let w = DVector::from_fn(n, |i, _| mu.mass(range.start + i));
    let mut gram = DMatrix::zeros(d, d);
    for i in 0..n {
        let row = phi.row(i);
        gram += w[i] * row.transpose() * row;
    }
    let lmax = SymmetricEigen::new(gram).eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut vals: Vec<DVector<f64>> = Vec::new();
    let mut coefs: Vec<DVector<f64>> = Vec::new();
    for a in 0..d {
        let mut v = phi.column(a).into_owned();
        let mut c = DVector::zeros(d);
        c[a] = 1.0;
        for _ in 0..2 {
            for (pv, pc) in vals.iter().zip(&coefs) {
                let ip = v.component_mul(&w).dot(pv);
                v.axpy(-ip, pv, 1.0);
                c.axpy(-ip, pc, 1.0);
            }
        }
        let n2 = v.component_mul(&w).dot(&v);
        if lmax > 0.0 && n2 > RANK_TOL * lmax {
            let s = n2.sqrt();
            vals.push(v / s);
            coefs.push(c / s);
        }
    }
    let k = vals.len();
    let coef = DMatrix::from_fn(d, k, |i, j| coefs[j][i]);
    let values = DMatrix::from_fn(n, k, |i, j| vals[j][i]);
    (coef, values)
}

impl AlpertSystem {
    /// Builds bases for every nonempty cube `I ⊆ root` with level `≤ depth`.
    pub fn new(mu: &AtomicMeasure, kappa: u32, depth: u32, root: CubeId) -> Result<Self, AlpertError> {
        if kappa == 0 {
            return Err(AlpertError::Kappa);
        }
        if depth < root.level() || depth > crate::grid::MAX_DEPTH {
            return Err(GridError::DepthExceeded { level: root.level(), depth }.into());
        }
        let betas = multi_indices(mu.dim(), kappa - 1);
        let rr = mu.range(&root);
        let mut cubes: Vec<(CubeId, Range<usize>)> = Vec::new();
        for level in root.level()..=depth {
            cubes.extend(mu.nonempty_cubes(level).into_iter().filter(|(c, r)| root.contains(c) && r.start >= rr.start));
        }
        let built: Vec<(CubeId, Range<usize>, DMatrix<f64>, DMatrix<f64>)> = cubes
            .par_iter()
            .map(|(c, r)| {
                let (coef, values) = orthonormal_basis(mu, c, r.clone(), &betas);
                (*c, r.clone(), coef, values)
            })
            .collect();
        let mut nodes: HashMap<CubeId, CubeBasis> = HashMap::with_capacity(built.len());
        let mut order = Vec::with_capacity(built.len());
        for (cube, range, coef, values) in built {
            order.push(cube);
            nodes.insert(cube, CubeBasis { cube, range, coef, values, children: Vec::new(), alpert: DMatrix::zeros(0, 0) });
        }
        let mut sys = AlpertSystem {
            kappa,
            depth,
            root,
            betas,
            masses: mu.masses(),
            points: mu.atoms().iter().map(|a| a.x).collect(),
            nodes,
            order,
        };
        let alperts: Vec<(CubeId, Vec<CubeId>, DMatrix<f64>)> = sys
            .order
            .par_iter()
            .filter(|c| c.level() < depth)
            .map(|c| {
                let kids: Vec<CubeId> =
                    c.children_unchecked().into_iter().filter(|k| sys.nodes.contains_key(k)).collect();
                let a = sys.complement(c, &kids);
                (*c, kids, a)
            })
            .collect();
        for (c, kids, a) in alperts {
            let node = sys.nodes.get_mut(&c).unwrap();
            node.children = kids;
            node.alpert = a;
        }
        Ok(sys)
    }

    /// Orthonormal complement of the parent space inside the stacked child spaces.
    fn complement(&self, cube: &CubeId, kids: &[CubeId]) -> DMatrix<f64> {
        let parent = &self.nodes[cube];
        let dims: Vec<usize> = kids.iter().map(|k| self.nodes[k].rank()).collect();
        let total: usize = dims.iter().sum();
        let mut p: DMatrix<f64> = DMatrix::zeros(total, parent.rank());
        let mut off = 0;
        for k in kids {
            let child = &self.nodes[k];
            let shift = child.range.start - parent.range.start;
            for i in 0..child.range.len() {
                let m = self.masses[child.range.start + i];
                for a in 0..child.rank() {
                    for b in 0..parent.rank() {
                        p[(off + a, b)] += m * child.values[(i, a)] * parent.values[(shift + i, b)];
                    }
                }
            }
            off += child.rank();
        }
        let proj = DMatrix::identity(total, total) - &p * p.transpose();
        let eig = SymmetricEigen::new(proj);
        let keep: Vec<usize> = (0..total).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
        let mut out = DMatrix::zeros(total, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            // sign convention: first nonnegligible entry positive
            if let Some(x) = v.iter().find(|x| x.abs() > 1e-8) {
                if *x < 0.0 {
                    v.neg_mut();
                }
            }
            out.set_column(c, &v);
        }
        out
    }

    pub fn basis(&self, cube: &CubeId) -> Option<&CubeBasis> {
        self.nodes.get(cube)
    }

    /// Nonempty cubes, level-major in storage order.
    pub fn cubes(&self) -> &[CubeId] {
        &self.order
    }

    pub fn len_atoms(&self) -> usize {
        self.masses.len()
    }

    fn check(&self, f: &[f64]) -> Result<(), AlpertError> {
        if f.len() != self.masses.len() {
            return Err(AlpertError::Length { got: f.len(), want: self.masses.len() });
        }
        Ok(())
    }

    /// Coordinates of `E_{I;κ} f` in the cube's orthonormal basis.
    pub fn project_coeffs(&self, cube: &CubeId, f: &[f64]) -> Vec<f64> {
        let Some(b) = self.nodes.get(cube) else { return Vec::new() };
        (0..b.rank())
            .map(|a| b.range.clone().enumerate().map(|(i, k)| self.masses[k] * f[k] * b.values[(i, a)]).sum())
            .collect()
    }

    /// `E_{I;κ} f` as a polynomial; zero on null cubes.
    pub fn project(&self, cube: &CubeId, f: &[f64]) -> Poly {
        let mut p = Poly::zero(*cube, self.betas.clone());
        if let Some(b) = self.nodes.get(cube) {
            let c = self.project_coeffs(cube, f);
            for (a, ca) in c.iter().enumerate() {
                for (k, pk) in p.coef.iter_mut().enumerate() {
                    *pk += b.coef[(k, a)] * ca;
                }
            }
        }
        p
    }

    /// `E_{I;κ} f` at the cube's atoms.
    pub fn project_values(&self, cube: &CubeId, f: &[f64]) -> Local {
        let Some(b) = self.nodes.get(cube) else {
            return Local { start: 0, values: Vec::new() };
        };
        let c = DVector::from_vec(self.project_coeffs(cube, f));
        let v = &b.values * c;
        Local { start: b.range.start, values: v.iter().cloned().collect() }
    }

    /// `Δ_{I;κ} f` at the cube's atoms.
    pub fn difference(&self, cube: &CubeId, f: &[f64]) -> Local {
        let Some(b) = self.nodes.get(cube) else {
            return Local { start: 0, values: Vec::new() };
        };
        let parent = self.project_values(cube, f);
        let mut values: Vec<f64> = parent.values.iter().map(|v| -v).collect();
        for k in &b.children {
            let ch = self.project_values(k, f);
            for (i, v) in ch.values.iter().enumerate() {
                values[ch.start - b.range.start + i] += v;
            }
        }
        Local { start: b.range.start, values }
    }

    /// `1_{I'} Δ_{I;κ} f` as the polynomial `E_{I'} f - E_I f`, evaluable anywhere.
    pub fn difference_poly(&self, cube: &CubeId, child: &CubeId, f: &[f64]) -> PolyDiff {
        PolyDiff { plus: self.project(child, f), minus: self.project(cube, f) }
    }

    /// Alpert functions `h_{I;κ}^a` at the cube's atoms.
    pub fn alpert_functions(&self, cube: &CubeId) -> Vec<Local> {
        let Some(b) = self.nodes.get(cube) else { return Vec::new() };
        let mut out = vec![vec![0.0; b.range.len()]; b.alpert_rank()];
        let mut off = 0;
        for k in &b.children {
            let ch = &self.nodes[k];
            let shift = ch.range.start - b.range.start;
            for a in 0..b.alpert_rank() {
                for r in 0..ch.rank() {
                    let w = b.alpert[(off + r, a)];
                    if w != 0.0 {
                        for i in 0..ch.range.len() {
                            out[a][shift + i] += w * ch.values[(i, r)];
                        }
                    }
                }
            }
            off += ch.rank();
        }
        out.into_iter().map(|values| Local { start: b.range.start, values }).collect()
    }

    /// `f̂(I)`: coordinates of `Δ_{I;κ} f` in the Alpert basis.
    pub fn alpert_coeffs(&self, cube: &CubeId, f: &[f64]) -> Vec<f64> {
        let Some(b) = self.nodes.get(cube) else { return Vec::new() };
        let stacked: Vec<f64> = b.children.iter().flat_map(|k| self.project_coeffs(k, f)).collect();
        let s = DVector::from_vec(stacked);
        (b.alpert.transpose() * s).iter().cloned().collect()
    }

    pub fn expand(&self, f: &[f64]) -> Result<WaveletCoefficients, AlpertError> {
        self.check(f)?;
        let top = self.project_coeffs(&self.root, f);
        let coeffs: BTreeMap<CubeId, Vec<f64>> = self
            .order
            .par_iter()
            .filter(|c| c.level() < self.depth)
            .map(|c| (*c, self.alpert_coeffs(c, f)))
            .filter(|(_, v)| !v.is_empty())
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        let mut residual = vec![0.0; f.len()];
        let rr = self.nodes.get(&self.root).map(|b| b.range.clone()).unwrap_or(0..0);
        residual[rr.clone()].copy_from_slice(&f[rr]);
        for c in self.order.iter().filter(|c| c.level() == self.depth) {
            self.project_values(c, f).add_into(&mut residual, -1.0);
        }
        Ok(WaveletCoefficients { root: self.root, top, coeffs, residual })
    }

    /// Inverse of [`expand`](Self::expand), through the stored Alpert functions.
    pub fn reconstruct(&self, w: &WaveletCoefficients) -> Vec<f64> {
        let mut out = w.residual.clone();
        if let Some(b) = self.nodes.get(&self.root) {
            for (a, c) in w.top.iter().enumerate() {
                for i in 0..b.range.len() {
                    out[b.range.start + i] += c * b.values[(i, a)];
                }
            }
        }
        for (cube, v) in &w.coeffs {
            for (h, c) in self.alpert_functions(cube).iter().zip(v) {
                h.add_into(&mut out, *c);
            }
        }
        out
    }

    /// `‖E_{I;κ} f‖_{∞, atoms of I} / E_I^μ |f|`.
    pub fn infinity_bound_ratio(&self, cube: &CubeId, f: &[f64]) -> Result<f64, AlpertError> {
        let b = self.nodes.get(cube).ok_or(AlpertError::NullCube(*cube))?;
        let m: f64 = b.range.clone().map(|k| self.masses[k]).sum();
        let avg: f64 = b.range.clone().map(|k| self.masses[k] * f[k].abs()).sum::<f64>() / m;
        let sup = self.project_values(cube, f).values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(if avg == 0.0 { 0.0 } else { sup / avg })
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.masses.iter().zip(f).map(|(m, v)| m * v * v).sum::<f64>().sqrt()
    }

    pub fn point(&self, i: usize) -> &crate::grid::Point {
        &self.points[i]
    }
}

/// Difference of two polynomials written in different cube bases.
#[derive(Clone, Debug)]
pub struct PolyDiff {
    pub plus: Poly,
    pub minus: Poly,
}

impl PolyDiff {
    pub fn eval(&self, x: &crate::grid::Point) -> f64 {
        self.plus.eval(x) - self.minus.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate, Atom, MeasureKind};

    fn uniform(depth: u32) -> AtomicMeasure {
        generate(&MeasureKind::Uniform { n: 1, depth }).unwrap()
    }

    #[test]
    fn reproduces_polynomials() {
        let mu = generate(&MeasureKind::Cascade { n: 1, depth: 6, beta: 0.2, seed: 3 }).unwrap();
        let sys = AlpertSystem::new(&mu, 3, 6, CubeId::root(1)).unwrap();
        let f: Vec<f64> = mu.atoms().iter().map(|a| 1.0 - 2.0 * a.x[0] + 5.0 * a.x[0] * a.x[0]).collect();
        for c in sys.cubes() {
            let e = sys.project_values(c, &f);
            for (i, v) in e.values.iter().enumerate() {
                assert!((v - f[e.start + i]).abs() < 1e-10);
            }
            if c.level() < 6 {
                assert!(sys.difference(c, &f).values.iter().all(|v| v.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn haar_example_x() {
        let mu = uniform(4);
        let sys = AlpertSystem::new(&mu, 1, 4, CubeId::root(1)).unwrap();
        let f: Vec<f64> = mu.atoms().iter().map(|a| a.x[0]).collect();
        let d = sys.difference(&CubeId::root(1), &f);
        for (i, v) in d.values.iter().enumerate() {
            let want = if i < 8 { -0.25 } else { 0.25 };
            assert!((v - want).abs() < 1e-14);
        }
        let nrm: f64 = d.values.iter().map(|v| v * v / 16.0).sum::<f64>().sqrt();
        assert!((nrm - 0.25).abs() < 1e-14);
        let sys2 = AlpertSystem::new(&mu, 2, 4, CubeId::root(1)).unwrap();
        assert!(sys2.difference(&CubeId::root(1), &f).values.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn single_atom_rank_one() {
        let mu = AtomicMeasure::new(1, vec![Atom { x: crate::grid::point(&[0.3]), m: 2.0 }]).unwrap();
        let sys = AlpertSystem::new(&mu, 2, 3, CubeId::root(1)).unwrap();
        assert_eq!(sys.basis(&CubeId::root(1)).unwrap().rank(), 1);
        let p = sys.project(&CubeId::root(1), &[7.0]);
        assert!((p.eval(&crate::grid::point(&[0.9])) - 7.0).abs() < 1e-12);
        let empty: CubeId = "1:1".parse().unwrap();
        assert!(sys.project(&empty, &[7.0]).coef.iter().all(|c| *c == 0.0));
        assert!(sys.difference(&empty, &[7.0]).values.is_empty());
    }

    #[test]
    fn expand_round_trip_and_parseval() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mu = generate(&MeasureKind::Cascade { n: 2, depth: 4, beta: 0.25, seed: 2 }).unwrap();
        for kappa in 1..=3 {
            let sys = AlpertSystem::new(&mu, kappa, 4, CubeId::root(2)).unwrap();
            let f: Vec<f64> = (0..mu.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = sys.expand(&f).unwrap();
            assert!(w.residual.iter().all(|r| r.abs() < 1e-12));
            let g = sys.reconstruct(&w);
            let err: f64 = f.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "kappa {kappa}: {err}");
            let total: f64 = w.top.iter().map(|c| c * c).sum::<f64>()
                + w.coeffs.values().flat_map(|v| v.iter()).map(|c| c * c).sum::<f64>();
            let nrm = sys.l2_norm(&f).powi(2);
            assert!((total - nrm).abs() < 1e-10 * nrm);
            for c in sys.cubes().iter().filter(|c| c.level() < 4) {
                let d = sys.difference(c, &f);
                let n2: f64 = d.range().map(|k| mu.mass(k) * d.get(k).powi(2)).sum();
                let hat: f64 = w.coeffs.get(c).map(|v| v.iter().map(|x| x * x).sum()).unwrap_or(0.0);
                assert!((n2.sqrt() - hat.sqrt()).abs() < 1e-10);
            }
        }
    }
}

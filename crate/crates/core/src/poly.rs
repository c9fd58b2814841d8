//! Multi-indices and centered, scaled monomials `((x - c)/ℓ)^β`.

use crate::grid::{CubeId, Point, MAX_DIM};

pub type MultiIndex = [u32; MAX_DIM];

/// All `β` with `|β| ≤ max_degree` in `dim` variables, graded then lexicographic.
pub fn multi_indices(dim: usize, max_degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 0..=max_degree {
        let mut beta = [0u32; MAX_DIM];
        fill(dim, 0, total, &mut beta, &mut out);
    }
    out
}

fn fill(dim: usize, j: usize, left: u32, beta: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
    if j + 1 == dim {
        beta[j] = left;
        out.push(*beta);
        return;
    }
    for k in (0..=left).rev() {
        beta[j] = k;
        fill(dim, j + 1, left - k, beta, out);
    }
    beta[j] = 0;
}

/// Number of monomials of total degree `< kappa` in `dim` variables.
pub fn poly_dim(dim: usize, kappa: u32) -> usize {
    if kappa == 0 {
        0
    } else {
        multi_indices(dim, kappa - 1).len()
    }
}

/// Values of the monomials at `x`, centered at `c_I` and scaled by `ℓ(I)`.
pub fn monomials_at(cube: &CubeId, betas: &[MultiIndex], x: &Point) -> Vec<f64> {
    let c = cube.center();
    let h = cube.side();
    let n = cube.dim();
    let mut u = [0.0; MAX_DIM];
    for j in 0..n {
        u[j] = (x[j] - c[j]) / h;
    }
    betas
        .iter()
        .map(|b| (0..n).map(|j| u[j].powi(b[j] as i32)).product())
        .collect()
}

/// A polynomial written in the monomial basis of some cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub cube: CubeId,
    pub betas: Vec<MultiIndex>,
    pub coef: Vec<f64>,
}

impl Poly {
    pub fn zero(cube: CubeId, betas: Vec<MultiIndex>) -> Self {
        let coef = vec![0.0; betas.len()];
        Poly { cube, betas, coef }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        monomials_at(&self.cube, &self.betas, x)
            .iter()
            .zip(&self.coef)
            .map(|(m, c)| m * c)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(poly_dim(1, 3), 3);
        assert_eq!(poly_dim(2, 2), 3);
        assert_eq!(poly_dim(2, 3), 6);
        assert_eq!(poly_dim(3, 2), 4);
        assert_eq!(multi_indices(2, 1), vec![[0, 0, 0], [1, 0, 0], [0, 1, 0]]);
    }
}

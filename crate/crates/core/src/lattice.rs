//! Lattices Λ ⊂ ℝⁿ and the flat torus geometry they induce.
//!
//! The torus Tⁿ = ℝⁿ/Λ carries the Euclidean metric inherited from ℝⁿ
//! (the coordinates x₁,…,xₙ are orthonormal; the lattice only sets the
//! periodicity). Fourier modes are indexed by integer vectors k with wave
//! vector w = 2π B⁻ᵀ k, B the basis matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_COVOLUME: f64 = 1e-12;

/// A full-rank lattice, columns of `basis` are the generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Row-major n×n basis; column j is the j-th generator.
    rows: Vec<Vec<f64>>,
}

impl Lattice {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != basis.ncols() || basis.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "lattice basis must be square and nonempty, got {}x{}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        let det = basis.determinant().abs();
        if !det.is_finite() || det < MIN_COVOLUME {
            return Err(Error::DegenerateLattice { det });
        }
        let rows = (0..basis.nrows())
            .map(|i| basis.row(i).iter().copied().collect())
            .collect();
        Ok(Self { rows })
    }

    /// Cubic lattice s·ℤⁿ.
    pub fn cubic(n: usize, s: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal_element(n, n, s))
    }

    /// The 2π-periodic cubic lattice, on which e^{i k·x} has integer wave vectors.
    pub fn two_pi(n: usize) -> Self {
        Self::cubic(n, std::f64::consts::TAU).expect("2*pi lattice is nondegenerate")
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn basis(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.rows[i][j])
    }

    pub fn covolume(&self) -> f64 {
        self.basis().determinant().abs()
    }

    /// Scale every generator by s > 0.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.basis() * s)
    }

    fn inverse_basis(&self) -> DMatrix<f64> {
        self.basis()
            .try_inverse()
            .expect("checked nondegenerate at construction")
    }

    /// Wave vector w = 2π B⁻ᵀ k of the integer frequency k.
    pub fn wave_vector(&self, k: &[i32]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(k.len(), n);
        let binv = self.inverse_basis();
        (0..n)
            .map(|i| {
                // (B^{-T} k)_i = sum_j B^{-1}[j][i] k_j
                std::f64::consts::TAU
                    * (0..n).map(|j| binv[(j, i)] * k[j] as f64).sum::<f64>()
            })
            .collect()
    }

    /// Fractional coordinates t with x = B t.
    pub fn fractional(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let binv = self.inverse_basis();
        (0..n)
            .map(|i| (0..n).map(|j| binv[(i, j)] * x[j]).sum())
            .collect()
    }

    /// The point B t of fractional coordinates t.
    pub fn point(&self, t: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.rows[i][j] * t[j]).sum())
            .collect()
    }

    /// Length of the shortest nonzero lattice vector.
    pub fn shortest_vector(&self) -> f64 {
        let b = self.basis();
        let svd = b.clone().svd(false, false);
        let sigma_min = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let n = self.dim();
        let mut best = f64::INFINITY;
        let mut radius = 1i32;
        loop {
            best = best.min(self.min_over_box(radius, &b, n));
            // any coefficient vector with some |k_i| > radius has length
            // >= sigma_min * (radius + 1), so the search is complete once
            // the best found beats that floor
            if best <= sigma_min * (radius as f64 + 1.0) {
                return best;
            }
            radius *= 2;
            if radius > 1 << 16 {
                return best;
            }
        }
    }

    fn min_over_box(&self, radius: i32, b: &DMatrix<f64>, n: usize) -> f64 {
        let mut best = f64::INFINITY;
        let mut k = vec![-radius; n];
        loop {
            if k.iter().any(|&c| c != 0) {
                let mut len2 = 0.0;
                for i in 0..n {
                    let v: f64 = (0..n).map(|j| b[(i, j)] * k[j] as f64).sum();
                    len2 += v * v;
                }
                best = best.min(len2.sqrt());
            }
            // odometer increment
            let mut axis = 0;
            loop {
                if axis == n {
                    return best;
                }
                k[axis] += 1;
                if k[axis] <= radius {
                    break;
                }
                k[axis] = -radius;
                axis += 1;
            }
        }
    }

    /// Flat torus distance: min over lattice shifts of |x - y + λ|.
    pub fn torus_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let diff: Vec<f64> = (0..n).map(|i| x[i] - y[i]).collect();
        let t = self.fractional(&diff);
        // reduce fractional coords near 0, then scan the neighbor shells
        let t0: Vec<f64> = t.iter().map(|c| c - c.round()).collect();
        let b = self.basis();
        let mut best = f64::INFINITY;
        let mut k = vec![-1i32; n];
        loop {
            let mut len2 = 0.0;
            for i in 0..n {
                let v: f64 = (0..n).map(|j| b[(i, j)] * (t0[j] + k[j] as f64)).sum();
                len2 += v * v;
            }
            best = best.min(len2.sqrt());
            let mut axis = 0;
            loop {
                if axis == n {
                    return best;
                }
                k[axis] += 1;
                if k[axis] <= 1 {
                    break;
                }
                k[axis] = -1;
                axis += 1;
            }
        }
    }

    /// Half the shortest closed geodesic; exact on flat tori.
    pub fn injectivity_radius(&self) -> f64 {
        0.5 * self.shortest_vector()
    }

    /// Torus diameter upper bound: half the sum of generator lengths
    /// dominates the circumradius of the fundamental cell.
    pub fn diameter_bound(&self) -> f64 {
        let b = self.basis();
        let n = self.dim();
        0.5 * (0..n)
            .map(|j| b.column(j).norm())
            .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cubic_shortest_and_covolume() {
        let l = Lattice::cubic(2, 0.5).unwrap();
        assert_relative_eq!(l.covolume(), 0.25);
        assert_relative_eq!(l.shortest_vector(), 0.5);
        assert_relative_eq!(l.injectivity_radius(), 0.25);
    }

    #[test]
    fn hexagonal_shortest_vector() {
        // generators (1,0) and (1/2, sqrt(3)/2): unit shortest vector
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 3f64.sqrt() / 2.0]);
        let l = Lattice::new(b).unwrap();
        assert_relative_eq!(l.shortest_vector(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(l.injectivity_radius(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn injectivity_radius_scales() {
        let l = Lattice::two_pi(2);
        let s = l.scaled(0.25).unwrap();
        assert_relative_eq!(s.injectivity_radius(), 0.25 * l.injectivity_radius());
    }

    #[test]
    fn degenerate_basis_rejected() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            Lattice::new(b),
            Err(Error::DegenerateLattice { .. })
        ));
    }

    #[test]
    fn wave_vectors_are_dual() {
        let l = Lattice::two_pi(2);
        let w = l.wave_vector(&[3, -2]);
        // on the 2*pi lattice the wave vector is the integer index itself
        assert_relative_eq!(w[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(w[1], -2.0, epsilon = 1e-12);
        // pairing with a generator is 2*pi * integer
        let b = l.basis();
        let pairing: f64 = (0..2).map(|i| w[i] * b[(i, 0)]).sum();
        assert_relative_eq!(pairing / std::f64::consts::TAU, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn torus_distance_wraps() {
        let l = Lattice::two_pi(1);
        let d = l.torus_distance(&[0.1], &[std::f64::consts::TAU - 0.1]);
        assert_relative_eq!(d, 0.2, epsilon = 1e-12);
    }
}

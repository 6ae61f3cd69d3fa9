//! Alias-free collocation grids for nonlinear operations.
//!
//! A trig polynomial band-limited at B is synthesized exactly on any uniform
//! grid (the FFT places mode k at cell k mod N). Analysis back to coefficients
//! |k|_inf ≤ K is exact when N ≥ B + K + 1, since no product mode can alias
//! onto a retained one. Grid sizes are rounded up to 5-smooth integers and
//! never fall below the 3/2 dealiasing floor.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::collections::BTreeMap;

use crate::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FourierGrid {
    n: usize,
    size: usize,
}

impl FourierGrid {
    pub fn new(n: usize, size: usize) -> Self {
        assert!(size > 0);
        Self { n, size }
    }

    /// Smallest alias-free grid for products of band `band` analyzed up to
    /// `keep`, at least the 3/2-rule floor for the kept band.
    pub fn for_band(n: usize, band: i32, keep: i32) -> Self {
        let exact = (band + keep + 1).max(1) as usize;
        let three_halves = (3 * keep + 1).max(1) as usize;
        Self::new(n, smooth_at_least(exact.max(three_halves)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of the flat cell index (row-major, axis 0 slowest).
    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0usize; self.n];
        for a in (0..self.n).rev() {
            m[a] = idx % self.size;
            idx /= self.size;
        }
        m
    }

    fn flat(&self, m: &[i64]) -> usize {
        let mut idx = 0usize;
        for a in 0..self.n {
            let c = m[a].rem_euclid(self.size as i64) as usize;
            idx = idx * self.size + c;
        }
        idx
    }

    /// Grid point x = B(j/N) of flat index idx.
    pub fn point(&self, idx: usize, lattice: &Lattice) -> Vec<f64> {
        let m = self.multi(idx);
        let t: Vec<f64> = m.iter().map(|&j| j as f64 / self.size as f64).collect();
        lattice.point(&t)
    }

    /// Values Σ_k c_k e^{2πi k·j/N} at all grid points. Exact for any band.
    pub fn synthesize<'a, I>(&self, modes: I) -> Vec<Complex64>
    where
        I: IntoIterator<Item = (&'a Vec<i32>, Complex64)>,
    {
        let mut buf = vec![Complex64::ZERO; self.len()];
        for (k, c) in modes {
            let m: Vec<i64> = k.iter().map(|&f| f as i64).collect();
            buf[self.flat(&m)] += c;
        }
        fft_nd(&mut buf, self.n, self.size, true);
        buf
    }

    /// Coefficients c_k = (1/Nⁿ) Σ_j f_j e^{−2πi k·j/N} for |k|_inf ≤ keep.
    /// Exact when the values come from a band-B polynomial with N ≥ B+keep+1.
    pub fn analyze(&self, values: &[Complex64], keep: i32) -> BTreeMap<Vec<i32>, Complex64> {
        assert_eq!(values.len(), self.len());
        let mut buf = values.to_vec();
        fft_nd(&mut buf, self.n, self.size, false);
        let scale = 1.0 / self.len() as f64;
        let mut out = BTreeMap::new();
        let mut k = vec![-keep; self.n];
        loop {
            let m: Vec<i64> = k.iter().map(|&f| f as i64).collect();
            let c = buf[self.flat(&m)] * scale;
            if c != Complex64::ZERO {
                out.insert(k.clone(), c);
            }
            let mut axis = 0;
            loop {
                if axis == self.n {
                    return out;
                }
                k[axis] += 1;
                if k[axis] <= keep {
                    break;
                }
                k[axis] = -keep;
                axis += 1;
            }
        }
    }
}

/// In-place n-dimensional FFT over a row-major cube of side `size`.
/// `inverse` uses the e^{+2πi} kernel, both unnormalized.
pub(crate) fn fft_nd(values: &mut [Complex64], n: usize, size: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(size)
    } else {
        planner.plan_fft_forward(size)
    };
    let total = values.len();
    let mut scratch = vec![Complex64::ZERO; size];
    for axis in 0..n {
        // stride of this axis in the row-major layout
        let stride = size.pow((n - 1 - axis) as u32);
        let lines = total / size;
        for line in 0..lines {
            // base offset of this 1-D line: decompose line index over the
            // remaining axes
            let block = line / stride;
            let offset = line % stride;
            let base = block * stride * size + offset;
            for j in 0..size {
                scratch[j] = values[base + j * stride];
            }
            fft.process(&mut scratch);
            for j in 0..size {
                values[base + j * stride] = scratch[j];
            }
        }
    }
}

/// Smallest 5-smooth integer ≥ x (fast FFT sizes).
fn smooth_at_least(x: usize) -> usize {
    let mut candidate = x.max(1);
    loop {
        let mut m = candidate;
        for p in [2usize, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return candidate;
        }
        candidate += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_at_least(17), 18);
        assert_eq!(smooth_at_least(32), 32);
        assert_eq!(smooth_at_least(61), 64);
    }

    #[test]
    fn synthesize_analyze_round_trip() {
        let grid = FourierGrid::for_band(2, 3, 3);
        let mut modes = BTreeMap::new();
        modes.insert(vec![1, -2], Complex64::new(0.3, -0.7));
        modes.insert(vec![-1, 2], Complex64::new(0.3, 0.7));
        modes.insert(vec![0, 3], Complex64::new(1.5, 0.0));
        let values = grid.synthesize(modes.iter().map(|(k, c)| (k, *c)));
        let back = grid.analyze(&values, 3);
        for (k, c) in &modes {
            let got = back[k];
            assert_relative_eq!(got.re, c.re, epsilon = 1e-12);
            assert_relative_eq!(got.im, c.im, epsilon = 1e-12);
        }
        let significant = back.values().filter(|c| c.norm() > 1e-12).count();
        assert_eq!(significant, modes.len());
    }

    #[test]
    fn synthesis_matches_direct_evaluation() {
        let lat = Lattice::two_pi(2);
        let grid = FourierGrid::new(2, 12);
        let k = vec![2, -1];
        let c = Complex64::new(0.4, 0.1);
        let values = grid.synthesize(std::iter::once((&k, c)));
        for idx in [0usize, 5, 77, 143] {
            let x = grid.point(idx, &lat);
            let w = lat.wave_vector(&k);
            let phase: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            let direct = c * Complex64::new(phase.cos(), phase.sin());
            assert_relative_eq!(values[idx].re, direct.re, epsilon = 1e-12);
            assert_relative_eq!(values[idx].im, direct.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn product_coefficients_exact_with_dealiased_grid() {
        // multiply two band-3 signals pointwise; analyzed coefficients up to
        // band 3 must equal the exact convolution
        let grid = FourierGrid::for_band(1, 6, 3);
        let a_modes: Vec<(Vec<i32>, Complex64)> = vec![
            (vec![1], Complex64::new(0.5, 0.2)),
            (vec![3], Complex64::new(-0.3, 0.0)),
        ];
        let b_modes: Vec<(Vec<i32>, Complex64)> = vec![
            (vec![-2], Complex64::new(0.7, -0.1)),
            (vec![2], Complex64::new(0.1, 0.4)),
        ];
        let av = grid.synthesize(a_modes.iter().map(|(k, c)| (k, *c)));
        let bv = grid.synthesize(b_modes.iter().map(|(k, c)| (k, *c)));
        let prod: Vec<Complex64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        let got = grid.analyze(&prod, 3);
        let mut expect: BTreeMap<Vec<i32>, Complex64> = BTreeMap::new();
        for (ka, ca) in &a_modes {
            for (kb, cb) in &b_modes {
                let k = vec![ka[0] + kb[0]];
                if k[0].abs() <= 3 {
                    *expect.entry(k).or_insert(Complex64::ZERO) += ca * cb;
                }
            }
        }
        for (k, c) in &expect {
            let g = got.get(k).copied().unwrap_or(Complex64::ZERO);
            assert_relative_eq!(g.re, c.re, epsilon = 1e-12);
            assert_relative_eq!(g.im, c.im, epsilon = 1e-12);
        }
    }
}

//! Grid surrogates for the Hölder norms of the deformation estimates.
//!
//! True C^{0,α}/C^{1,α} norms are not computable; the solver works with
//! dense-grid sup norms plus maximum finite-difference Hölder quotients at
//! grid scale. Every certificate records that this substitution was made.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::FourierGrid;
use super::torus::TorusForm;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormParams {
    /// Hölder exponent in (0,1).
    pub alpha: f64,
    /// Evaluation grid resolution per torus dimension.
    pub grid: usize,
}

impl Default for NormParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            grid: 64,
        }
    }
}

/// Surrogate norm data of one torus form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormReport {
    pub sup_norm: f64,
    pub grad_sup_norm: f64,
    /// Max finite-difference Hölder quotient of the gradient at grid scale.
    pub holder_seminorm_estimate: f64,
    pub alpha: f64,
}

impl NormReport {
    /// Surrogate C^{1,α} value.
    pub fn c1_alpha(&self) -> f64 {
        self.sup_norm + self.grad_sup_norm + self.holder_seminorm_estimate
    }
}

/// Pointwise (component-Euclidean) fields of a form and its gradient on the
/// evaluation grid.
struct FieldStack {
    grid: FourierGrid,
    /// one field per component
    values: Vec<Vec<Complex64>>,
    /// gradient fields, [component][axis]
    grads: Vec<Vec<Vec<Complex64>>>,
}

fn synthesize_fields(form: &TorusForm, params: NormParams, with_grads: bool) -> FieldStack {
    let n = form.n();
    let grid = FourierGrid::new(n, params.grid);
    let mut per_component: std::collections::BTreeMap<Vec<u8>, Vec<(Vec<i32>, Complex64)>> =
        std::collections::BTreeMap::new();
    for (key, c) in form.coeffs() {
        per_component
            .entry(key.axes.clone())
            .or_default()
            .push((key.freq.clone(), *c));
    }
    let mut values = Vec::new();
    let mut grads = Vec::new();
    for modes in per_component.values() {
        values.push(grid.synthesize(modes.iter().map(|(k, c)| (k, *c))));
        if with_grads {
            let mut comp_grads = Vec::with_capacity(n);
            for axis in 0..n {
                let dmodes: Vec<(Vec<i32>, Complex64)> = modes
                    .iter()
                    .map(|(k, c)| {
                        let w = form.lattice().wave_vector(k);
                        (k.clone(), c * Complex64::new(0.0, w[axis]))
                    })
                    .collect();
                comp_grads.push(grid.synthesize(dmodes.iter().map(|(k, c)| (k, *c))));
            }
            grads.push(comp_grads);
        }
    }
    FieldStack {
        grid,
        values,
        grads,
    }
}

fn pointwise_sup(fields: &[Vec<Complex64>], len: usize) -> f64 {
    let mut sup: f64 = 0.0;
    for idx in 0..len {
        let mut norm2 = 0.0;
        for f in fields {
            norm2 += f[idx].norm_sqr();
        }
        sup = sup.max(norm2.sqrt());
    }
    sup
}

/// Max over axis-neighbor pairs of |f(x+h) − f(x)| / |h|^α, f vector-valued
/// over the given fields.
fn holder_quotient(
    fields: &[&Vec<Complex64>],
    grid: &FourierGrid,
    lattice: &crate::lattice::Lattice,
    alpha: f64,
) -> f64 {
    if fields.is_empty() {
        return 0.0;
    }
    let n = grid.n();
    let size = grid.size();
    let len = grid.len();
    let basis = lattice.basis();
    let mut worst: f64 = 0.0;
    for axis in 0..n {
        let h = basis.column(axis).norm() / size as f64;
        let scale = h.powf(alpha);
        let stride = size.pow((n - 1 - axis) as u32);
        for idx in 0..len {
            // neighbor along this axis with wrap-around
            let coord = (idx / stride) % size;
            let nb = if coord + 1 < size {
                idx + stride
            } else {
                idx + stride - size * stride
            };
            let mut diff2 = 0.0;
            for f in fields {
                diff2 += (f[nb] - f[idx]).norm_sqr();
            }
            worst = worst.max(diff2.sqrt() / scale);
        }
    }
    worst
}

/// Sup, gradient sup, and gradient Hölder quotient of a torus form. The
/// surrogate C^{1,α} value is the sum of the three entries.
pub fn surrogate_norms(form: &TorusForm, params: NormParams) -> NormReport {
    let stack = synthesize_fields(form, params, true);
    let len = stack.grid.len();
    let sup_norm = pointwise_sup(&stack.values, len);
    let all_grads: Vec<Vec<Complex64>> = stack.grads.into_iter().flatten().collect();
    let grad_sup_norm = pointwise_sup(&all_grads, len);
    let grad_refs: Vec<&Vec<Complex64>> = all_grads.iter().collect();
    let holder =
        holder_quotient(&grad_refs, &stack.grid, form.lattice(), params.alpha);
    NormReport {
        sup_norm,
        grad_sup_norm,
        holder_seminorm_estimate: holder,
        alpha: params.alpha,
    }
}

/// Surrogate C^{0,α} value: sup plus the Hölder quotient of the components.
pub fn c0_alpha_norm(form: &TorusForm, params: NormParams) -> f64 {
    let stack = synthesize_fields(form, params, false);
    let len = stack.grid.len();
    let sup = pointwise_sup(&stack.values, len);
    let refs: Vec<&Vec<Complex64>> = stack.values.iter().collect();
    sup + holder_quotient(&refs, &stack.grid, form.lattice(), params.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn zero_form_has_zero_norms() {
        let lat = Lattice::two_pi(2);
        let z = TorusForm::zero(2, 1, lat);
        let rep = surrogate_norms(&z, NormParams::default());
        assert_eq!(rep.sup_norm, 0.0);
        assert_eq!(rep.grad_sup_norm, 0.0);
        assert_eq!(rep.holder_seminorm_estimate, 0.0);
        assert_eq!(rep.c1_alpha(), 0.0);
    }

    #[test]
    fn sup_of_sine_component() {
        // sin x1 dx1: sup over a 64-grid hits 1 exactly (pi/2 is a grid point)
        let lat = Lattice::two_pi(2);
        let mut f = TorusForm::zero(2, 1, lat);
        f.set(vec![1, 0], vec![0], Complex64::new(0.0, -0.5)).unwrap();
        f.set(vec![-1, 0], vec![0], Complex64::new(0.0, 0.5)).unwrap();
        let rep = surrogate_norms(&f, NormParams::default());
        assert_relative_eq!(rep.sup_norm, 1.0, epsilon = 1e-6);
        assert_relative_eq!(rep.grad_sup_norm, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn norms_are_absolutely_homogeneous() {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let lat = Lattice::two_pi(2);
        let f = TorusForm::random_real(2, 1, lat, 3, 2.0, true, &mut rng);
        let rep = surrogate_norms(&f, NormParams::default());
        let scaled = surrogate_norms(&f.scaled(Complex64::new(-2.5, 0.0)), NormParams::default());
        assert_relative_eq!(scaled.sup_norm, 2.5 * rep.sup_norm, max_relative = 1e-12);
        assert_relative_eq!(scaled.c1_alpha(), 2.5 * rep.c1_alpha(), max_relative = 1e-12);
        let c0 = c0_alpha_norm(&f, NormParams::default());
        let c0s = c0_alpha_norm(&f.scaled(Complex64::new(-2.5, 0.0)), NormParams::default());
        assert_relative_eq!(c0s, 2.5 * c0, max_relative = 1e-12);
    }
}

//! Finite product group actions on Tⁿ × B(0, 2r).
//!
//! Elements act as γ(x, y) = (Qx + τ, Ry) with Q a lattice-compatible
//! orthogonal map and R orthogonal on the base. Under the cotangent
//! identification a section transforms by γ·L(y, σ) = L(γ·y, γ^{−1,*}σ).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flat::FlatCalabiYau;
use crate::forms::{AmbientForm, TorusForm};
use crate::lattice::Lattice;

const MATCH_TOL: f64 = 1e-9;
const PRESERVE_TOL: f64 = 1e-12;

/// One product-action element: torus map x ↦ Qx + τ, base map y ↦ Ry.
#[derive(Debug, Clone)]
pub struct GroupElement {
    pub torus_linear: DMatrix<f64>,
    pub torus_translation: Vec<f64>,
    pub base_linear: DMatrix<f64>,
}

impl GroupElement {
    pub fn identity(n: usize) -> Self {
        Self {
            torus_linear: DMatrix::identity(n, n),
            torus_translation: vec![0.0; n],
            base_linear: DMatrix::identity(n, n),
        }
    }

    fn compose(&self, other: &Self) -> Self {
        // (self ∘ other)(x) = Q1(Q2 x + t2) + t1
        let q = &self.torus_linear * &other.torus_linear;
        let t: Vec<f64> = {
            let qt2 = &self.torus_linear
                * DMatrix::from_column_slice(other.torus_translation.len(), 1, &other.torus_translation);
            (0..self.torus_translation.len())
                .map(|i| qt2[(i, 0)] + self.torus_translation[i])
                .collect()
        };
        let b = &self.base_linear * &other.base_linear;
        Self {
            torus_linear: q,
            torus_translation: t,
            base_linear: b,
        }
    }

    fn inverse(&self) -> Result<Self> {
        let qi = self
            .torus_linear
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::IncompatibleGroupElement {
                reason: "torus map not invertible".into(),
            })?;
        let bi = self
            .base_linear
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::IncompatibleGroupElement {
                reason: "base map not invertible".into(),
            })?;
        let t: Vec<f64> = {
            let v = &qi
                * DMatrix::from_column_slice(self.torus_translation.len(), 1, &self.torus_translation);
            (0..self.torus_translation.len()).map(|i| -v[(i, 0)]).collect()
        };
        Ok(Self {
            torus_linear: qi,
            torus_translation: t,
            base_linear: bi,
        })
    }

    fn matches(&self, other: &Self, lattice: &Lattice) -> bool {
        let n = self.torus_translation.len();
        if (&self.torus_linear - &other.torus_linear).amax() > MATCH_TOL {
            return false;
        }
        if (&self.base_linear - &other.base_linear).amax() > MATCH_TOL {
            return false;
        }
        // translations compared modulo the lattice
        let diff: Vec<f64> = (0..n)
            .map(|i| self.torus_translation[i] - other.torus_translation[i])
            .collect();
        lattice.torus_distance(&diff, &vec![0.0; n]) < MATCH_TOL
    }

    /// Apply the torus map to a point (not reduced modulo Λ).
    pub fn torus_point(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                (0..n).map(|j| self.torus_linear[(i, j)] * x[j]).sum::<f64>()
                    + self.torus_translation[i]
            })
            .collect()
    }

    /// Apply the base map to a point.
    pub fn base_point(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.base_linear[(i, j)] * y[j]).sum())
            .collect()
    }
}

/// A finite group of product-action elements, verified at construction.
#[derive(Debug, Clone)]
pub struct GroupAction {
    lattice: Lattice,
    elements: Vec<GroupElement>,
    /// composition[i][j] = index of elements[i] ∘ elements[j]
    composition: Vec<Vec<usize>>,
}

impl GroupAction {
    pub fn new(lattice: Lattice, elements: Vec<GroupElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidInput("group action needs at least the identity".into()));
        }
        let n = lattice.dim();
        let id = GroupElement::identity(n);
        if !elements.iter().any(|e| e.matches(&id, &lattice)) {
            return Err(Error::IncompatibleGroupElement {
                reason: "element list does not contain the identity".into(),
            });
        }
        // lattice compatibility of every torus map
        for e in &elements {
            crate::forms::ambient_frequency_map(&lattice, &e.torus_linear)?;
        }
        let find = |g: &GroupElement| -> Result<usize> {
            elements
                .iter()
                .position(|e| e.matches(g, &lattice))
                .ok_or_else(|| Error::IncompatibleGroupElement {
                    reason: "element list is not closed under composition".into(),
                })
        };
        let mut composition = vec![vec![0usize; elements.len()]; elements.len()];
        for (i, a) in elements.iter().enumerate() {
            for (j, b) in elements.iter().enumerate() {
                composition[i][j] = find(&a.compose(b))?;
            }
            // inverse must be in the list
            find(&a.inverse()?)?;
        }
        Ok(Self {
            lattice,
            elements,
            composition,
        })
    }

    /// The trivial group.
    pub fn trivial(lattice: Lattice) -> Self {
        let n = lattice.dim();
        Self::new(lattice, vec![GroupElement::identity(n)]).expect("identity group is valid")
    }

    /// ℤ/2 acting by (x, y) ↦ (−x, −y); preserves ω₀ always and Ω₀ for
    /// even n.
    pub fn z2_flip(lattice: Lattice) -> Result<Self> {
        let n = lattice.dim();
        let flip = GroupElement {
            torus_linear: -DMatrix::<f64>::identity(n, n),
            torus_translation: vec![0.0; n],
            base_linear: -DMatrix::<f64>::identity(n, n),
        };
        Self::new(lattice, vec![GroupElement::identity(n), flip])
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn composition_table(&self) -> &[Vec<usize>] {
        &self.composition
    }

    /// Max coefficient defect of γ*ω₀, γ*Ω₀ against ω₀, Ω₀, plus metric
    /// preservation (orthogonality of Q and R), over all elements.
    pub fn flat_invariance_defect(&self, flat: &FlatCalabiYau) -> Result<f64> {
        let n = flat.n();
        let mut worst: f64 = 0.0;
        for e in &self.elements {
            let qtq = e.torus_linear.transpose() * &e.torus_linear;
            let btb = e.base_linear.transpose() * &e.base_linear;
            worst = worst.max((qtq - DMatrix::identity(n, n)).amax());
            worst = worst.max((btb - DMatrix::identity(n, n)).amax());
            let po = self.pullback_ambient(e, flat.omega())?;
            worst = worst.max(po.coeff_distance(flat.omega()));
            let pb = self.pullback_ambient(e, flat.big_omega())?;
            worst = worst.max(pb.coeff_distance(flat.big_omega()));
        }
        Ok(worst)
    }

    /// Ensure every element preserves the flat structure to tolerance.
    pub fn require_flat_invariance(&self, flat: &FlatCalabiYau) -> Result<()> {
        let defect = self.flat_invariance_defect(flat)?;
        if defect > PRESERVE_TOL {
            return Err(Error::IncompatibleGroupElement {
                reason: format!("action does not preserve the flat structure: defect {defect:e}"),
            });
        }
        Ok(())
    }

    fn check_member(&self, elem: &GroupElement) -> Result<()> {
        if self
            .elements
            .iter()
            .any(|e| e.matches(elem, &self.lattice))
        {
            Ok(())
        } else {
            Err(Error::IncompatibleGroupElement {
                reason: "element is not in the action's element list".into(),
            })
        }
    }

    /// γ*(form) on the ambient space.
    pub fn pullback_ambient(&self, elem: &GroupElement, form: &AmbientForm) -> Result<AmbientForm> {
        self.check_member(elem)?;
        form.pullback_product(&elem.torus_linear, &elem.torus_translation, &elem.base_linear)
    }

    /// γ*(form) on the torus.
    pub fn pullback_torus(&self, elem: &GroupElement, form: &TorusForm) -> Result<TorusForm> {
        self.check_member(elem)?;
        pullback_torus_affine(form, &elem.torus_linear, &elem.torus_translation)
    }

    /// γ^{−1,*}σ, the section transform of γ·L(y, σ) = L(γ·y, γ^{−1,*}σ).
    pub fn section_transform(&self, elem: &GroupElement, sigma: &TorusForm) -> Result<TorusForm> {
        self.check_member(elem)?;
        let inv = elem.inverse()?;
        pullback_torus_affine(sigma, &inv.torus_linear, &inv.torus_translation)
    }

    /// Group-average of an ambient form, (1/|Γ|) Σ_γ γ*φ; the result is
    /// Γ-invariant by construction.
    pub fn average_ambient(&self, form: &AmbientForm) -> Result<AmbientForm> {
        let mut acc = AmbientForm::zero(
            form.n(),
            form.degree(),
            form.lattice().clone(),
            form.domain_radius(),
        );
        for e in &self.elements {
            acc = acc.add(&self.pullback_ambient(e, form)?)?;
        }
        Ok(acc.scaled(Complex64::new(1.0 / self.elements.len() as f64, 0.0)))
    }

    /// True when the base maps permute the given point set (used to check
    /// grid invariance).
    pub fn base_set_invariant(&self, points: &[Vec<f64>], tol: f64) -> bool {
        for e in &self.elements {
            for p in points {
                let q = e.base_point(p);
                let found = points.iter().any(|r| {
                    r.iter()
                        .zip(&q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                        < tol
                });
                if !found {
                    return false;
                }
            }
        }
        true
    }
}

/// Pullback of a torus form by the affine map x ↦ Qx + τ.
pub fn pullback_torus_affine(
    form: &TorusForm,
    q: &DMatrix<f64>,
    tau: &[f64],
) -> Result<TorusForm> {
    let n = form.n();
    let freq_map = crate::forms::ambient_frequency_map(form.lattice(), q)?;
    let mut out = TorusForm::zero(n, form.degree(), form.lattice().clone());
    for (key, c) in form.coeffs() {
        let kq: Vec<i32> = (0..n)
            .map(|i| (0..n).map(|j| freq_map[(i, j)] * key.freq[j]).sum())
            .collect();
        let w = form.lattice().wave_vector(&key.freq);
        let phase: f64 = w.iter().zip(tau).map(|(a, b)| a * b).sum();
        let base = c * Complex64::new(phase.cos(), phase.sin());
        for (axes, det) in torus_minor_expansion(q, &key.axes) {
            out.add_to(kq.clone(), axes, base * det)?;
        }
    }
    out.prune();
    Ok(out)
}

fn torus_minor_expansion(q: &DMatrix<f64>, rows: &[u8]) -> Vec<(Vec<u8>, f64)> {
    let p = rows.len();
    let n = q.nrows();
    let mut out = Vec::new();
    for cols in crate::forms::increasing_tuples(n, p) {
        let m = DMatrix::from_fn(p, p, |r, c| q[(rows[r] as usize, cols[c] as usize)]);
        let det = if p == 0 { 1.0 } else { m.determinant() };
        if det != 0.0 {
            out.push((cols, det));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat2() -> FlatCalabiYau {
        FlatCalabiYau::new(2, Lattice::two_pi(2), 2.0).unwrap()
    }

    #[test]
    fn z2_flip_is_a_group_preserving_the_flat_structure() {
        let flat = flat2();
        let action = GroupAction::z2_flip(flat.lattice().clone()).unwrap();
        assert_eq!(action.len(), 2);
        assert_eq!(action.composition_table()[1][1], 0);
        let defect = action.flat_invariance_defect(&flat).unwrap();
        assert!(defect < 1e-13, "defect {defect}");
    }

    #[test]
    fn identity_acts_trivially() {
        let flat = flat2();
        let action = GroupAction::trivial(flat.lattice().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sigma = TorusForm::random_real(2, 1, flat.lattice().clone(), 3, 2.0, true, &mut rng);
        let moved = action
            .section_transform(&action.elements()[0].clone(), &sigma)
            .unwrap();
        assert!(moved.sub(&sigma).unwrap().coeffs().values().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn flip_transforms_sections_pointwise() {
        // gamma^{-1,*} sigma evaluated at x equals the transform of sigma
        // at gamma^{-1} x = -x with components negated
        let flat = flat2();
        let action = GroupAction::z2_flip(flat.lattice().clone()).unwrap();
        let flip = action.elements()[1].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = TorusForm::random_real(2, 1, flat.lattice().clone(), 3, 2.0, true, &mut rng);
        let moved = action.section_transform(&flip, &sigma).unwrap();
        let x = [0.37, 1.21];
        let xm = [-0.37, -1.21];
        let v = moved.eval_components(&x);
        let w = sigma.eval_components(&xm);
        for j in 0..2u8 {
            let a = v.get(&vec![j]).copied().unwrap_or(Complex64::ZERO);
            let b = w.get(&vec![j]).copied().unwrap_or(Complex64::ZERO);
            assert_relative_eq!(a.re, -b.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn averaging_yields_invariant_potentials() {
        let flat = flat2();
        let action = GroupAction::z2_flip(flat.lattice().clone()).unwrap();
        let profile = crate::flat::SamplerProfile {
            k_max: 3,
            d_max: 2,
            decay: 4.0,
        };
        let (alpha, _beta) = crate::flat::sample_potentials(&flat, profile, 31).unwrap();
        let avg = action.average_ambient(&alpha).unwrap();
        let flip = action.elements()[1].clone();
        let moved = action.pullback_ambient(&flip, &avg).unwrap();
        assert!(moved.coeff_distance(&avg) < 1e-12);
    }

    #[test]
    fn incompatible_element_rejected() {
        let lat = Lattice::two_pi(2);
        let bad = GroupElement {
            // 45-degree rotation does not preserve the square lattice basis
            // scaling... it does preserve directions but not the lattice
            torus_linear: DMatrix::from_row_slice(
                2,
                2,
                &[0.5f64.sqrt(), -(0.5f64.sqrt()), 0.5f64.sqrt(), 0.5f64.sqrt()],
            ),
            torus_translation: vec![0.0, 0.0],
            base_linear: DMatrix::identity(2, 2),
        };
        let r = GroupAction::new(lat.clone(), vec![GroupElement::identity(2), bad]);
        assert!(r.is_err());
    }
}

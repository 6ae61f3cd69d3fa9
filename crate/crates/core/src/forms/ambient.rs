//! Forms on the ambient model Tⁿ × B(0, 2r): trigonometric polynomials in the
//! torus coordinates x, genuine polynomials in the base coordinates y. The
//! class is closed under d and wedge, so both are exact.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{increasing_tuples, insert_axis, merge_axes};
use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// (frequency, y-monomial exponent, multi-index) key.
/// Axes 0..n are dx₁..dxₙ, axes n..2n are dy₁..dyₙ.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AmbientKey {
    pub freq: Vec<i32>,
    pub mono: Vec<u8>,
    pub axes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct AmbientForm {
    n: usize,
    degree: usize,
    lattice: Lattice,
    domain_radius: f64,
    coeffs: BTreeMap<AmbientKey, Complex64>,
}

impl AmbientForm {
    pub fn zero(n: usize, degree: usize, lattice: Lattice, domain_radius: f64) -> Self {
        Self {
            n,
            degree,
            lattice,
            domain_radius,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// The 2r bound on |y|.
    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn coeffs(&self) -> &BTreeMap<AmbientKey, Complex64> {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|c| c.norm() == 0.0)
    }

    pub fn band(&self) -> i32 {
        self.coeffs
            .keys()
            .flat_map(|k| k.freq.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Largest total y-degree present.
    pub fn poly_degree(&self) -> usize {
        self.coeffs
            .keys()
            .map(|k| k.mono.iter().map(|&m| m as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn set(&mut self, freq: Vec<i32>, mono: Vec<u8>, axes: Vec<u8>, c: Complex64) -> Result<()> {
        self.check_key(&freq, &mono, &axes)?;
        if c == Complex64::ZERO {
            self.coeffs.remove(&AmbientKey { freq, mono, axes });
        } else {
            self.coeffs.insert(AmbientKey { freq, mono, axes }, c);
        }
        Ok(())
    }

    pub fn add_to(&mut self, freq: Vec<i32>, mono: Vec<u8>, axes: Vec<u8>, c: Complex64) -> Result<()> {
        self.check_key(&freq, &mono, &axes)?;
        let e = self
            .coeffs
            .entry(AmbientKey { freq, mono, axes })
            .or_insert(Complex64::ZERO);
        *e += c;
        Ok(())
    }

    fn check_key(&self, freq: &[i32], mono: &[u8], axes: &[u8]) -> Result<()> {
        if freq.len() != self.n || mono.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: freq.len().max(mono.len()),
            });
        }
        if axes.len() != self.degree
            || axes.windows(2).any(|w| w[0] >= w[1])
            || axes.iter().any(|&a| a as usize >= 2 * self.n)
        {
            return Err(Error::InvalidInput(format!(
                "invalid ambient multi-index {axes:?} for degree {} over 2n = {}",
                self.degree,
                2 * self.n
            )));
        }
        Ok(())
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        if self.lattice != other.lattice {
            return Err(Error::InvalidInput("lattice mismatch".into()));
        }
        Ok(())
    }

    pub fn prune(&mut self) {
        self.coeffs.retain(|_, c| c.norm() > 0.0);
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn add_scaled(&self, other: &Self, s: Complex64) -> Result<Self> {
        self.compatible(other)?;
        if self.degree != other.degree {
            return Err(Error::InvalidInput(format!(
                "cannot add degree {} to degree {}",
                other.degree, self.degree
            )));
        }
        let mut out = self.clone();
        for (k, c) in &other.coeffs {
            let e = out.coeffs.entry(k.clone()).or_insert(Complex64::ZERO);
            *e += s * c;
        }
        out.prune();
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, Complex64::ONE)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, -Complex64::ONE)
    }

    /// Take real or imaginary part as a complex-coefficient form.
    pub fn real_part(&self) -> Self {
        self.combine_conj(0.5, 0.5)
    }

    pub fn imag_part(&self) -> Self {
        // Im f = (f - conj f) / 2i
        self.combine_conj_im()
    }

    /// Complex conjugate: conj(c e^{iw·x}) = conj(c) e^{−iw·x}; monomials
    /// and dz factors are real.
    pub fn conjugate(&self) -> Self {
        let mut out = Self::zero(self.n, self.degree, self.lattice.clone(), self.domain_radius);
        for (k, c) in &self.coeffs {
            let key = AmbientKey {
                freq: k.freq.iter().map(|f| -f).collect(),
                mono: k.mono.clone(),
                axes: k.axes.clone(),
            };
            let e = out.coeffs.entry(key).or_insert(Complex64::ZERO);
            *e += c.conj();
        }
        out.prune();
        out
    }

    fn combine_conj(&self, a: f64, b: f64) -> Self {
        let conj = self.conjugate();
        self.scaled(Complex64::new(a, 0.0))
            .add_scaled(&conj, Complex64::new(b, 0.0))
            .expect("same shape")
    }

    fn combine_conj_im(&self) -> Self {
        let conj = self.conjugate();
        let half_over_i = Complex64::new(0.0, -0.5);
        self.scaled(half_over_i)
            .add_scaled(&conj, -half_over_i)
            .expect("same shape")
    }

    /// Exterior derivative, exact: i·w_j multiplications in x, monomial
    /// lowering in y. Rejects the top degree 2n.
    pub fn d(&self) -> Result<Self> {
        if self.degree >= 2 * self.n {
            return Err(Error::DegreeOverflow {
                degree: self.degree,
                top: 2 * self.n,
            });
        }
        let mut out = Self::zero(self.n, self.degree + 1, self.lattice.clone(), self.domain_radius);
        for (key, c) in &self.coeffs {
            let w = self.lattice.wave_vector(&key.freq);
            for j in 0..self.n {
                if w[j] != 0.0 {
                    if let Some((axes, sign)) = insert_axis(&key.axes, j as u8) {
                        let e = out
                            .coeffs
                            .entry(AmbientKey {
                                freq: key.freq.clone(),
                                mono: key.mono.clone(),
                                axes,
                            })
                            .or_insert(Complex64::ZERO);
                        *e += Complex64::new(0.0, w[j]) * c * sign;
                    }
                }
                if key.mono[j] > 0 {
                    if let Some((axes, sign)) = insert_axis(&key.axes, (self.n + j) as u8) {
                        let mut mono = key.mono.clone();
                        mono[j] -= 1;
                        let e = out
                            .coeffs
                            .entry(AmbientKey {
                                freq: key.freq.clone(),
                                mono,
                                axes,
                            })
                            .or_insert(Complex64::ZERO);
                        *e += c * key.mono[j] as f64 * sign;
                    }
                }
            }
        }
        out.prune();
        Ok(out)
    }

    /// Graded-commutative wedge, exact convolution in (k, m).
    pub fn wedge(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        if self.degree + other.degree > 2 * self.n {
            return Err(Error::DegreeOverflow {
                degree: self.degree + other.degree,
                top: 2 * self.n,
            });
        }
        let mut out = Self::zero(
            self.n,
            self.degree + other.degree,
            self.lattice.clone(),
            self.domain_radius,
        );
        for (ka, ca) in &self.coeffs {
            for (kb, cb) in &other.coeffs {
                if let Some((axes, sign)) = merge_axes(&ka.axes, &kb.axes) {
                    let freq: Vec<i32> =
                        ka.freq.iter().zip(&kb.freq).map(|(a, b)| a + b).collect();
                    let mono: Vec<u8> =
                        ka.mono.iter().zip(&kb.mono).map(|(a, b)| a + b).collect();
                    let e = out
                        .coeffs
                        .entry(AmbientKey { freq, mono, axes })
                        .or_insert(Complex64::ZERO);
                    *e += ca * cb * sign;
                }
            }
        }
        out.prune();
        Ok(out)
    }

    /// Component functions at the point (x, y).
    pub fn eval_components(&self, x: &[f64], y: &[f64]) -> BTreeMap<Vec<u8>, Complex64> {
        let mut out: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
        for (key, c) in &self.coeffs {
            let w = self.lattice.wave_vector(&key.freq);
            let phase: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let mut v = c * Complex64::new(phase.cos(), phase.sin());
            for j in 0..self.n {
                for _ in 0..key.mono[j] {
                    v *= y[j];
                }
            }
            *out.entry(key.axes.clone()).or_insert(Complex64::ZERO) += v;
        }
        out
    }

    /// Evaluate the p-form on an ordered frame of p tangent vectors (length
    /// 2n each) at the point (x, y): Σ c·e^{iw·x}·y^m·det(v[axes]).
    pub fn eval_on_frame(&self, x: &[f64], y: &[f64], frame: &[Vec<f64>]) -> Complex64 {
        assert_eq!(frame.len(), self.degree);
        let comps = self.eval_components(x, y);
        let p = self.degree;
        let mut acc = Complex64::ZERO;
        for (axes, value) in comps {
            let m = DMatrix::from_fn(p, p, |a, b| frame[b][axes[a] as usize]);
            acc += value * m.determinant();
        }
        acc
    }

    /// Pullback along the product map γ(x, y) = (Qx + τ, Ry). Q must map Λ
    /// to itself; frequencies transform by the integer matrix (B⁻¹QB)ᵀ.
    pub fn pullback_product(&self, q: &DMatrix<f64>, tau: &[f64], r_map: &DMatrix<f64>) -> Result<Self> {
        let n = self.n;
        let freq_map = frequency_map(&self.lattice, q)?;
        let mut out = Self::zero(n, self.degree, self.lattice.clone(), self.domain_radius);
        for (key, c) in &self.coeffs {
            // transformed frequency and translation phase
            let kq: Vec<i32> = (0..n)
                .map(|i| (0..n).map(|j| freq_map[(i, j)] * key.freq[j]).sum())
                .collect();
            let w = self.lattice.wave_vector(&key.freq);
            let phase: f64 = w.iter().zip(tau).map(|(a, b)| a * b).sum();
            let base = c * Complex64::new(phase.cos(), phase.sin());

            // y^m ∘ R expands into a polynomial in y
            let poly = monomial_pullback(&key.mono, r_map);

            // split the multi-index into its x and y blocks
            let ix: Vec<u8> = key.axes.iter().copied().filter(|&a| (a as usize) < n).collect();
            let iy: Vec<u8> = key
                .axes
                .iter()
                .copied()
                .filter(|&a| (a as usize) >= n)
                .map(|a| a - n as u8)
                .collect();

            for (jx, det_x) in minor_expansion(q, &ix) {
                for (jy, det_y) in minor_expansion(r_map, &iy) {
                    let mut axes: Vec<u8> = jx.clone();
                    axes.extend(jy.iter().map(|&a| a + n as u8));
                    for (mono, coef) in &poly {
                        let value = base * det_x * det_y * *coef;
                        if value != Complex64::ZERO {
                            let e = out
                                .coeffs
                                .entry(AmbientKey {
                                    freq: kq.clone(),
                                    mono: mono.clone(),
                                    axes: axes.clone(),
                                })
                                .or_insert(Complex64::ZERO);
                            *e += value;
                        }
                    }
                }
            }
        }
        out.prune();
        Ok(out)
    }

    /// Max coefficient difference against another form of the same shape.
    pub fn coeff_distance(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, c) in &self.coeffs {
            let o = other.coeffs.get(k).copied().unwrap_or(Complex64::ZERO);
            worst = worst.max((c - o).norm());
        }
        for (k, o) in &other.coeffs {
            if !self.coeffs.contains_key(k) {
                worst = worst.max(o.norm());
            }
        }
        worst
    }
}

/// Integer matrix M with w_{Mk} = Qᵀ w_k, i.e. M = (B⁻¹QB)ᵀ. Errors when Q
/// does not preserve the lattice.
pub(crate) fn frequency_map(lattice: &Lattice, q: &DMatrix<f64>) -> Result<DMatrix<i32>> {
    let b = lattice.basis();
    let binv = b.clone().try_inverse().expect("lattice nondegenerate");
    let m = (binv * q * b).transpose();
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            let r = v.round();
            if (v - r).abs() > 1e-9 {
                return Err(Error::IncompatibleGroupElement {
                    reason: format!("torus map does not preserve the lattice: (B^-1 Q B)^T[{i}][{j}] = {v}"),
                });
            }
            out[(i, j)] = r as i32;
        }
    }
    Ok(out)
}

/// dz_I ∘ A = Σ_J det(A[I,J]) dz_J over increasing J of the same length.
fn minor_expansion(a: &DMatrix<f64>, rows: &[u8]) -> Vec<(Vec<u8>, f64)> {
    let p = rows.len();
    let n = a.nrows();
    let mut out = Vec::new();
    for cols in increasing_tuples(n, p) {
        let m = DMatrix::from_fn(p, p, |r, c| a[(rows[r] as usize, cols[c] as usize)]);
        let det = if p == 0 { 1.0 } else { m.determinant() };
        if det != 0.0 {
            out.push((cols, det));
        }
    }
    out
}

/// Expand Π_j (Σ_l R_{jl} y_l)^{m_j} into monomials.
fn monomial_pullback(mono: &[u8], r_map: &DMatrix<f64>) -> Vec<(Vec<u8>, f64)> {
    let n = mono.len();
    let mut poly: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    poly.insert(vec![0; n], 1.0);
    for j in 0..n {
        for _ in 0..mono[j] {
            let mut next: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
            for (m, c) in &poly {
                for l in 0..n {
                    let r = r_map[(j, l)];
                    if r != 0.0 {
                        let mut m2 = m.clone();
                        m2[l] += 1;
                        *next.entry(m2).or_insert(0.0) += c * r;
                    }
                }
            }
            poly = next;
        }
    }
    poly.into_iter().collect()
}

/// Grid evaluator: synthesizes a form's trig factors once per
/// (monomial, multi-index) group, then produces pointwise component fields
/// at any base point y without touching the coefficient table again.
pub struct AmbientGridEval {
    n: usize,
    grid: super::grid::FourierGrid,
    /// (mono, axes, value field, per-x-axis derivative fields)
    groups: Vec<(Vec<u8>, Vec<u8>, Vec<Complex64>, Vec<Vec<Complex64>>)>,
}

impl AmbientGridEval {
    pub fn new(form: &AmbientForm, grid: super::grid::FourierGrid, with_x_derivs: bool) -> Self {
        let mut grouped: BTreeMap<(Vec<u8>, Vec<u8>), Vec<(Vec<i32>, Complex64)>> =
            BTreeMap::new();
        for (key, c) in form.coeffs() {
            grouped
                .entry((key.mono.clone(), key.axes.clone()))
                .or_default()
                .push((key.freq.clone(), *c));
        }
        let n = form.n();
        let mut groups = Vec::with_capacity(grouped.len());
        for ((mono, axes), modes) in grouped {
            let field = grid.synthesize(modes.iter().map(|(k, c)| (k, *c)));
            let mut derivs = Vec::new();
            if with_x_derivs {
                for axis in 0..n {
                    let dmodes: Vec<(Vec<i32>, Complex64)> = modes
                        .iter()
                        .map(|(k, c)| {
                            let w = form.lattice().wave_vector(k);
                            (k.clone(), c * Complex64::new(0.0, w[axis]))
                        })
                        .collect();
                    derivs.push(grid.synthesize(dmodes.iter().map(|(k, c)| (k, *c))));
                }
            }
            groups.push((mono, axes, field, derivs));
        }
        Self { n, grid, groups }
    }

    pub fn grid(&self) -> &super::grid::FourierGrid {
        &self.grid
    }

    /// Component fields Σ_m y^m F_{m,I}(x) at a fixed base point.
    pub fn components_at(&self, y: &[f64]) -> BTreeMap<Vec<u8>, Vec<Complex64>> {
        let len = self.grid.len();
        let mut out: BTreeMap<Vec<u8>, Vec<Complex64>> = BTreeMap::new();
        for (mono, axes, field, _) in &self.groups {
            let ypow = monomial_value(mono, y);
            if ypow == 0.0 {
                continue;
            }
            let target = out
                .entry(axes.clone())
                .or_insert_with(|| vec![Complex64::ZERO; len]);
            for idx in 0..len {
                target[idx] += field[idx] * ypow;
            }
        }
        out
    }

    /// Sup over the grid and the given base points of pointwise component
    /// norm plus the norm of all first partials (x and y). Contributions to
    /// the same component are summed before taking norms.
    pub fn sup_c1(&self, ys: &[Vec<f64>]) -> f64 {
        let len = self.grid.len();
        let dirs = 2 * self.n;
        let mut sup: f64 = 0.0;
        for y in ys {
            // per component: value field and one field per partial direction
            let mut values: BTreeMap<&[u8], Vec<Complex64>> = BTreeMap::new();
            let mut derivs: BTreeMap<&[u8], Vec<Vec<Complex64>>> = BTreeMap::new();
            for (mono, axes, field, dx_fields) in &self.groups {
                let value = values
                    .entry(axes.as_slice())
                    .or_insert_with(|| vec![Complex64::ZERO; len]);
                let ypow = monomial_value(mono, y);
                if ypow != 0.0 {
                    for idx in 0..len {
                        value[idx] += field[idx] * ypow;
                    }
                }
                let dcomp = derivs
                    .entry(axes.as_slice())
                    .or_insert_with(|| vec![vec![Complex64::ZERO; len]; dirs]);
                if ypow != 0.0 {
                    for (i, d) in dx_fields.iter().enumerate() {
                        for idx in 0..len {
                            dcomp[i][idx] += d[idx] * ypow;
                        }
                    }
                }
                for l in 0..self.n {
                    if mono[l] > 0 {
                        let mut low = mono.clone();
                        low[l] -= 1;
                        let f = mono[l] as f64 * monomial_value(&low, y);
                        if f != 0.0 {
                            for idx in 0..len {
                                dcomp[self.n + l][idx] += field[idx] * f;
                            }
                        }
                    }
                }
            }
            for idx in 0..len {
                let mut v2 = 0.0;
                let mut d2 = 0.0;
                for value in values.values() {
                    v2 += value[idx].norm_sqr();
                }
                for dcomp in derivs.values() {
                    for d in dcomp {
                        d2 += d[idx].norm_sqr();
                    }
                }
                sup = sup.max(v2.sqrt() + d2.sqrt());
            }
        }
        sup
    }
}

fn monomial_value(mono: &[u8], y: &[f64]) -> f64 {
    let mut v = 1.0;
    for (l, &m) in mono.iter().enumerate() {
        for _ in 0..m {
            v *= y[l];
        }
    }
    v
}

#[derive(Serialize, Deserialize)]
struct AmbientFormRecord {
    degree: usize,
    n: usize,
    lattice: Lattice,
    domain_radius: f64,
    coeffs: Vec<(Vec<i32>, Vec<u8>, Vec<u8>, f64, f64)>,
}

impl Serialize for AmbientForm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(k, c)| (k.freq.clone(), k.mono.clone(), k.axes.clone(), c.re, c.im))
            .collect();
        AmbientFormRecord {
            degree: self.degree,
            n: self.n,
            lattice: self.lattice.clone(),
            domain_radius: self.domain_radius,
            coeffs,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AmbientForm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = AmbientFormRecord::deserialize(d)?;
        let mut out = AmbientForm::zero(rec.n, rec.degree, rec.lattice, rec.domain_radius);
        for (freq, mono, axes, re, im) in rec.coeffs {
            out.set(freq, mono, axes, Complex64::new(re, im))
                .map_err(serde::de::Error::custom)?;
        }
        Ok(out)
    }
}

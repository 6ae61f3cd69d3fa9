//! Degree-p differential forms on the flat torus, as sparse Fourier tables.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{complement, insert_axis, merge_axes};
use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// Coefficients below this magnitude are dropped after arithmetic.
const PRUNE_EPS: f64 = 0.0;

/// (frequency, multi-index) key of one coefficient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TorusKey {
    pub freq: Vec<i32>,
    /// Strictly increasing axes over 0..n, one per dx factor.
    pub axes: Vec<u8>,
}

/// A degree-p form Σ c(k,I) e^{i w_k·x} dx_I on Tⁿ = ℝⁿ/Λ.
///
/// Real forms satisfy c(−k,I) = conj c(k,I). The degree may formally exceed
/// n, in which case no multi-index exists and the form is identically zero
/// (the canonical representation of e.g. a 2-form restricted to a circle).
#[derive(Debug, Clone)]
pub struct TorusForm {
    n: usize,
    degree: usize,
    lattice: Lattice,
    coeffs: BTreeMap<TorusKey, Complex64>,
}

impl TorusForm {
    pub fn zero(n: usize, degree: usize, lattice: Lattice) -> Self {
        Self {
            n,
            degree,
            lattice,
            coeffs: BTreeMap::new(),
        }
    }

    /// The constant function c (degree 0).
    pub fn constant(n: usize, lattice: Lattice, c: Complex64) -> Self {
        let mut f = Self::zero(n, 0, lattice);
        if c != Complex64::ZERO {
            f.coeffs.insert(
                TorusKey {
                    freq: vec![0; n],
                    axes: vec![],
                },
                c,
            );
        }
        f
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

    pub fn coeffs(&self) -> &BTreeMap<TorusKey, Complex64> {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|c| c.norm() == 0.0)
    }

    /// Largest |k|_inf over stored frequencies.
    pub fn band(&self) -> i32 {
        self.coeffs
            .keys()
            .flat_map(|k| k.freq.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn set(&mut self, freq: Vec<i32>, axes: Vec<u8>, c: Complex64) -> Result<()> {
        self.check_key(&freq, &axes)?;
        if c == Complex64::ZERO {
            self.coeffs.remove(&TorusKey { freq, axes });
        } else {
            self.coeffs.insert(TorusKey { freq, axes }, c);
        }
        Ok(())
    }

    pub fn add_to(&mut self, freq: Vec<i32>, axes: Vec<u8>, c: Complex64) -> Result<()> {
        self.check_key(&freq, &axes)?;
        let entry = self
            .coeffs
            .entry(TorusKey { freq, axes })
            .or_insert(Complex64::ZERO);
        *entry += c;
        Ok(())
    }

    fn check_key(&self, freq: &[i32], axes: &[u8]) -> Result<()> {
        if freq.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: freq.len(),
            });
        }
        if axes.len() != self.degree
            || axes.windows(2).any(|w| w[0] >= w[1])
            || axes.iter().any(|&a| a as usize >= self.n)
        {
            return Err(Error::InvalidInput(format!(
                "invalid multi-index {axes:?} for degree {} over n = {}",
                self.degree, self.n
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
        self.coeffs.retain(|_, c| c.norm() > PRUNE_EPS);
    }

    /// Drop every coefficient of magnitude below `eps`.
    pub fn chop(&mut self, eps: f64) {
        self.coeffs.retain(|_, c| c.norm() > eps);
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, Complex64::ONE)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, -Complex64::ONE)
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
            let entry = out.coeffs.entry(k.clone()).or_insert(Complex64::ZERO);
            *entry += s * c;
        }
        out.prune();
        Ok(out)
    }

    /// Exterior derivative; exact on the representation. Rejects top degree.
    pub fn d(&self) -> Result<Self> {
        if self.degree >= self.n {
            return Err(Error::DegreeOverflow {
                degree: self.degree,
                top: self.n,
            });
        }
        Ok(self.d_over())
    }

    /// Exterior derivative that silently returns the empty over-degree form
    /// instead of erroring; used where d of a top form is the zero (n+1)-form.
    pub(crate) fn d_over(&self) -> Self {
        let mut out = Self::zero(self.n, self.degree + 1, self.lattice.clone());
        for (key, c) in &self.coeffs {
            let w = self.lattice.wave_vector(&key.freq);
            for j in 0..self.n {
                if w[j] == 0.0 {
                    continue;
                }
                if let Some((axes, sign)) = insert_axis(&key.axes, j as u8) {
                    let coeff = Complex64::new(0.0, w[j]) * c * sign;
                    let entry = out
                        .coeffs
                        .entry(TorusKey {
                            freq: key.freq.clone(),
                            axes,
                        })
                        .or_insert(Complex64::ZERO);
                    *entry += coeff;
                }
            }
        }
        out.prune();
        out
    }

    /// Hodge star of the flat metric, orientation dx₁∧…∧dxₙ positive:
    /// ⋆dx_I = sign(I, Iᶜ) dx_{Iᶜ}.
    pub fn hodge_star(&self) -> Result<Self> {
        if self.degree > self.n {
            return Err(Error::DegreeOverflow {
                degree: self.degree,
                top: self.n,
            });
        }
        let mut out = Self::zero(self.n, self.n - self.degree, self.lattice.clone());
        for (key, c) in &self.coeffs {
            let comp = complement(&key.axes, self.n);
            let (_, sign) = merge_axes(&key.axes, &comp)
                .expect("complement is disjoint by construction");
            let entry = out
                .coeffs
                .entry(TorusKey {
                    freq: key.freq.clone(),
                    axes: comp,
                })
                .or_insert(Complex64::ZERO);
            *entry += c * sign;
        }
        out.prune();
        Ok(out)
    }

    /// Codifferential with the L²-adjoint sign, δ = (−1)^{n(p+1)+1} ⋆d⋆.
    /// On exact 1-forms df this returns Δf with nonnegative spectrum.
    pub fn codifferential(&self) -> Result<Self> {
        if self.degree == 0 {
            return Err(Error::DegreeUnderflow { degree: 0 });
        }
        let star = self.hodge_star()?;
        let dstar = star.d_over();
        let starred = dstar.hodge_star()?;
        let exponent = self.n * (self.degree + 1) + 1;
        let sign = if exponent % 2 == 0 { 1.0 } else { -1.0 };
        Ok(starred.scaled(Complex64::new(sign, 0.0)))
    }

    /// Graded-commutative wedge, exact coefficient convolution.
    pub fn wedge(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        if self.degree + other.degree > self.n {
            return Err(Error::DegreeOverflow {
                degree: self.degree + other.degree,
                top: self.n,
            });
        }
        let mut out = Self::zero(self.n, self.degree + other.degree, self.lattice.clone());
        for (ka, ca) in &self.coeffs {
            for (kb, cb) in &other.coeffs {
                if let Some((axes, sign)) = merge_axes(&ka.axes, &kb.axes) {
                    let freq: Vec<i32> = ka
                        .freq
                        .iter()
                        .zip(&kb.freq)
                        .map(|(a, b)| a + b)
                        .collect();
                    let entry = out
                        .coeffs
                        .entry(TorusKey { freq, axes })
                        .or_insert(Complex64::ZERO);
                    *entry += ca * cb * sign;
                }
            }
        }
        out.prune();
        Ok(out)
    }

    /// Component functions evaluated at the point x (complex values).
    pub fn eval_components(&self, x: &[f64]) -> BTreeMap<Vec<u8>, Complex64> {
        let mut out: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
        for (key, c) in &self.coeffs {
            let w = self.lattice.wave_vector(&key.freq);
            let phase: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
            let e = Complex64::new(phase.cos(), phase.sin());
            *out.entry(key.axes.clone()).or_insert(Complex64::ZERO) += c * e;
        }
        out
    }

    /// L² inner product ⟨self, other⟩ by Parseval (exact on representations).
    pub fn l2_inner(&self, other: &Self) -> Result<Complex64> {
        self.compatible(other)?;
        let mut acc = Complex64::ZERO;
        for (k, c) in &self.coeffs {
            if let Some(o) = other.coeffs.get(k) {
                acc += c * o.conj();
            }
        }
        Ok(acc * self.lattice.covolume())
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for c in self.coeffs.values() {
            acc += c.norm_sqr();
        }
        (acc * self.lattice.covolume()).sqrt()
    }

    /// The frequency-0 (harmonic) part.
    pub fn harmonic_part(&self) -> Self {
        let mut out = Self::zero(self.n, self.degree, self.lattice.clone());
        for (k, c) in &self.coeffs {
            if k.freq.iter().all(|&f| f == 0) {
                out.coeffs.insert(k.clone(), *c);
            }
        }
        out
    }

    /// Remove the frequency-0 part (projection onto exact ⊕ coexact).
    pub fn zero_harmonic(&self) -> Self {
        let mut out = self.clone();
        out.coeffs.retain(|k, _| k.freq.iter().any(|&f| f != 0));
        out
    }

    pub fn has_zero_harmonic_part(&self) -> bool {
        self.harmonic_part().is_zero()
    }

    /// Keep only frequencies with |k|_inf ≤ kmax.
    pub fn truncated(&self, kmax: i32) -> Self {
        let mut out = self.clone();
        out.coeffs
            .retain(|k, _| k.freq.iter().all(|&f| f.abs() <= kmax));
        out
    }

    /// Max deviation from the conjugate symmetry of a real form.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, c) in &self.coeffs {
            let neg: Vec<i32> = k.freq.iter().map(|f| -f).collect();
            let mirror = self
                .coeffs
                .get(&TorusKey {
                    freq: neg,
                    axes: k.axes.clone(),
                })
                .copied()
                .unwrap_or(Complex64::ZERO);
            worst = worst.max((mirror - c.conj()).norm());
        }
        worst
    }

    /// Seeded random real form, band-limited at kmax, coefficient amplitude
    /// ∝ (1+|k|)^{−decay}, zero harmonic part when `zero_mean`.
    pub fn random_real<R: Rng>(
        n: usize,
        degree: usize,
        lattice: Lattice,
        kmax: i32,
        decay: f64,
        zero_mean: bool,
        rng: &mut R,
    ) -> Self {
        let mut out = Self::zero(n, degree, lattice);
        let axes_list = super::increasing_tuples(n, degree);
        let mut freq = vec![-kmax; n];
        loop {
            let is_zero_freq = freq.iter().all(|&f| f == 0);
            // fill only the lexicographically positive half; mirror the rest
            let positive = freq.iter().find(|&&f| f != 0).map_or(false, |&f| f > 0);
            if (positive || is_zero_freq) && !(is_zero_freq && zero_mean) {
                let norm = (freq.iter().map(|&f| (f * f) as f64).sum::<f64>()).sqrt();
                let amp = (1.0 + norm).powf(-decay);
                for axes in &axes_list {
                    let re: f64 = rng.gen_range(-1.0..1.0);
                    let im: f64 = if is_zero_freq {
                        0.0
                    } else {
                        rng.gen_range(-1.0..1.0)
                    };
                    let c = Complex64::new(re, im) * amp;
                    if c != Complex64::ZERO {
                        out.coeffs.insert(
                            TorusKey {
                                freq: freq.clone(),
                                axes: axes.clone(),
                            },
                            c,
                        );
                        if !is_zero_freq {
                            out.coeffs.insert(
                                TorusKey {
                                    freq: freq.iter().map(|f| -f).collect(),
                                    axes: axes.clone(),
                                },
                                c.conj(),
                            );
                        }
                    }
                }
            }
            let mut axis = 0;
            loop {
                if axis == n {
                    return out;
                }
                freq[axis] += 1;
                if freq[axis] <= kmax {
                    break;
                }
                freq[axis] = -kmax;
                axis += 1;
            }
        }
    }
}

/// Serialization record: {degree, n, lattice, coeffs: [[k, m, I, re, im], …]}.
/// Torus forms carry an empty m-vector. Exact round-trip.
#[derive(Serialize, Deserialize)]
struct TorusFormRecord {
    degree: usize,
    n: usize,
    lattice: Lattice,
    coeffs: Vec<(Vec<i32>, Vec<u8>, Vec<u8>, f64, f64)>,
}

impl Serialize for TorusForm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(k, c)| (k.freq.clone(), Vec::new(), k.axes.clone(), c.re, c.im))
            .collect();
        TorusFormRecord {
            degree: self.degree,
            n: self.n,
            lattice: self.lattice.clone(),
            coeffs,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TorusForm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = TorusFormRecord::deserialize(d)?;
        let mut out = TorusForm::zero(rec.n, rec.degree, rec.lattice);
        for (freq, _m, axes, re, im) in rec.coeffs {
            out.set(freq, axes, Complex64::new(re, im))
                .map_err(serde::de::Error::custom)?;
        }
        Ok(out)
    }
}

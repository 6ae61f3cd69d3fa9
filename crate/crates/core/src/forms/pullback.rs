//! Pullback of ambient forms onto the graph L(y, σ) = {(x, y + σ(x))}.
//!
//! The graph map Π: Tⁿ → Tⁿ × B substitutes y_j ↦ y_j + σ_j(x) and
//! dy_j ↦ dσ_j(x). Everything is evaluated on an alias-free collocation grid
//! and transformed back to Fourier coefficients up to the kept cutoff, so the
//! retained coefficients are exact for the band-limited inputs at hand.
//!
//! The same machinery yields the σ- and y-linearizations of the pullback by
//! pointwise product rule, which is what the deformation operator estimates
//! differentiate.

use num_complex::Complex64;
use std::collections::BTreeMap;

use super::ambient::AmbientForm;
use super::grid::FourierGrid;
use super::torus::TorusForm;
use super::{increasing_tuples, merge_axes};
use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// Precomputed graph data: σ and dσ fields on the collocation grid.
#[derive(Debug, Clone)]
pub struct GraphContext {
    lattice: Lattice,
    n: usize,
    keep: i32,
    grid: FourierGrid,
    y0: Vec<f64>,
    /// s[j][idx] = σ_j at grid point idx
    s: Vec<Vec<f64>>,
    /// ds[j][i][idx] = ∂_i σ_j
    ds: Vec<Vec<Vec<f64>>>,
}

/// A form's trig factors synthesized on a context's grid, grouped by
/// (y-monomial, x-axes, y-axes); reusable across pullback calls that share
/// the grid size.
#[derive(Debug, Clone)]
pub struct PreparedForm {
    degree: usize,
    domain_radius: f64,
    grid_size: usize,
    groups: Vec<Group>,
}

#[derive(Debug, Clone)]
struct Group {
    mono: Vec<u8>,
    ix: Vec<u8>,
    /// σ-component indices of the dy factors (ascending)
    iy: Vec<u8>,
    field: Vec<Complex64>,
}

impl GraphContext {
    /// Build the context for pulling back the given forms through the graph
    /// of y0 + σ, keeping output frequencies |k|_inf ≤ keep. The grid is
    /// sized so kept coefficients are alias-free for every listed form and
    /// for linearization directions band-limited at `keep`.
    pub fn new(y0: &[f64], sigma: &TorusForm, keep: i32, forms: &[&AmbientForm]) -> Result<Self> {
        let n = sigma.n();
        if y0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y0.len(),
            });
        }
        if sigma.degree() != 1 {
            return Err(Error::InvalidInput(format!(
                "graph section must be a 1-form, got degree {}",
                sigma.degree()
            )));
        }
        let lattice = sigma.lattice().clone();
        let s_band = sigma.band().max(keep);
        let mut band = keep;
        for f in forms {
            let dy_slots = f.degree().min(n);
            let b = f.band() + (f.poly_degree() + dy_slots) as i32 * s_band;
            band = band.max(b);
        }
        let grid = FourierGrid::for_band(n, band, keep);

        let (s, ds) = synthesize_section_fields(&grid, &lattice, n, sigma);
        Ok(Self {
            lattice,
            n,
            keep,
            grid,
            y0: y0.to_vec(),
            s,
            ds,
        })
    }

    pub fn grid(&self) -> &FourierGrid {
        &self.grid
    }

    pub fn keep(&self) -> i32 {
        self.keep
    }

    pub fn base_point(&self) -> &[f64] {
        &self.y0
    }

    /// Max over the grid of |y0 + σ(x)|.
    pub fn displacement_sup(&self) -> f64 {
        let mut sup: f64 = 0.0;
        for idx in 0..self.grid.len() {
            sup = sup.max(self.displacement_norm(idx));
        }
        sup
    }

    fn displacement_norm(&self, idx: usize) -> f64 {
        let mut norm2 = 0.0;
        for j in 0..self.n {
            let v = self.y0[j] + self.s[j][idx];
            norm2 += v * v;
        }
        norm2.sqrt()
    }

    fn check_domain(&self, radius: f64) -> Result<()> {
        for idx in 0..self.grid.len() {
            let norm = self.displacement_norm(idx);
            if norm >= radius {
                return Err(Error::DomainEscape {
                    x: self.grid.point(idx, &self.lattice),
                    norm,
                    limit: radius,
                });
            }
        }
        Ok(())
    }

    /// Synthesize and group a form's trig factors on this grid.
    pub fn prepare(&self, form: &AmbientForm) -> Result<PreparedForm> {
        if form.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: form.n(),
            });
        }
        let n = self.n as u8;
        let mut grouped: BTreeMap<(Vec<u8>, Vec<u8>), Vec<(Vec<i32>, Complex64)>> = BTreeMap::new();
        for (key, c) in form.coeffs() {
            grouped
                .entry((key.mono.clone(), key.axes.clone()))
                .or_default()
                .push((key.freq.clone(), *c));
        }
        let mut groups = Vec::with_capacity(grouped.len());
        for ((mono, axes), modes) in grouped {
            let ix: Vec<u8> = axes.iter().copied().filter(|&a| a < n).collect();
            let iy: Vec<u8> = axes
                .iter()
                .copied()
                .filter(|&a| a >= n)
                .map(|a| a - n)
                .collect();
            if ix.len() + iy.len() > self.n {
                // more pulled-back factors than torus axes: identically zero
                continue;
            }
            let field = self.grid.synthesize(modes.iter().map(|(k, c)| (k, *c)));
            groups.push(Group { mono, ix, iy, field });
        }
        Ok(PreparedForm {
            degree: form.degree(),
            domain_radius: form.domain_radius(),
            grid_size: self.grid.size(),
            groups,
        })
    }

    fn check_prepared(&self, prep: &PreparedForm) -> Result<()> {
        if prep.grid_size != self.grid.size() {
            return Err(Error::InvalidInput(format!(
                "prepared form grid {} does not match context grid {}",
                prep.grid_size,
                self.grid.size()
            )));
        }
        self.check_domain(prep.domain_radius)
    }

    /// (y0 + σ(x))^m pointwise.
    fn ypow(&self, mono: &[u8]) -> Vec<f64> {
        let len = self.grid.len();
        let mut out = vec![1.0; len];
        for j in 0..self.n {
            for _ in 0..mono[j] {
                for idx in 0..len {
                    out[idx] *= self.y0[j] + self.s[j][idx];
                }
            }
        }
        out
    }

    fn ypow_lowered(&self, mono: &[u8], l: usize) -> Option<(f64, Vec<f64>)> {
        if mono[l] == 0 {
            return None;
        }
        let mut lowered = mono.to_vec();
        lowered[l] -= 1;
        Some((mono[l] as f64, self.ypow(&lowered)))
    }

    /// det over the grid of the q×q matrix M[a][b] = ∂_{cols[b]} σ_{rows[a]};
    /// `replace` swaps row `slot` for the direction's derivative fields
    /// (indexed by x axis).
    fn det_field(
        &self,
        rows: &[u8],
        cols: &[u8],
        replace: Option<(usize, &[Vec<f64>])>,
    ) -> Vec<f64> {
        let q = rows.len();
        let len = self.grid.len();
        if q == 0 {
            return vec![1.0; len];
        }
        let mut out = vec![0.0; len];
        for (perm, sign) in permutations_with_sign(q) {
            for idx in 0..len {
                let mut term = sign;
                for a in 0..q {
                    let col = cols[perm[a]] as usize;
                    let v = match replace {
                        Some((slot, dot_row)) if slot == a => dot_row[col][idx],
                        _ => self.ds[rows[a] as usize][col][idx],
                    };
                    term *= v;
                    if term == 0.0 {
                        break;
                    }
                }
                out[idx] += term;
            }
        }
        out
    }

    /// Accumulate scalar × trig × (wedge of dσ's, optionally with one slot
    /// replaced by dσ̇) into per-component output fields.
    fn accumulate(
        &self,
        out: &mut BTreeMap<Vec<u8>, Vec<Complex64>>,
        group: &Group,
        scalar: &[f64],
        replace: Option<(usize, &[Vec<f64>])>,
    ) {
        let q = group.iy.len();
        let len = self.grid.len();
        for cols in increasing_tuples(self.n, q) {
            let det = self.det_field(&group.iy, &cols, replace);
            if det.iter().all(|&v| v == 0.0) {
                continue;
            }
            if let Some((axes, sign)) = merge_axes(&group.ix, &cols) {
                let target = out.entry(axes).or_insert_with(|| vec![Complex64::ZERO; len]);
                for idx in 0..len {
                    target[idx] += group.field[idx] * (scalar[idx] * det[idx] * sign);
                }
            }
        }
    }

    fn analyze_output(
        &self,
        degree: usize,
        fields: BTreeMap<Vec<u8>, Vec<Complex64>>,
    ) -> TorusForm {
        let mut out = TorusForm::zero(self.n, degree, self.lattice.clone());
        for (axes, values) in fields {
            for (freq, c) in self.grid.analyze(&values, self.keep) {
                out.add_to(freq, axes.clone(), c).expect("valid key");
            }
        }
        out.prune();
        out
    }

    /// Π*(form) as a band-limited torus form of the same degree.
    pub fn pullback(&self, prep: &PreparedForm) -> Result<TorusForm> {
        self.check_prepared(prep)?;
        let mut fields: BTreeMap<Vec<u8>, Vec<Complex64>> = BTreeMap::new();
        for group in &prep.groups {
            let scalar = self.ypow(&group.mono);
            self.accumulate(&mut fields, group, &scalar, None);
        }
        Ok(self.analyze_output(prep.degree, fields))
    }

    /// Directional derivative D_σ(Π*form)·σ̇: monomial terms pick up
    /// Σ_l m_l (y0+σ)^{m−e_l} σ̇_l, wedge factors get one dσ row replaced
    /// by dσ̇ per slot.
    pub fn pullback_linearized(&self, prep: &PreparedForm, dot: &TorusForm) -> Result<TorusForm> {
        self.check_prepared(prep)?;
        if dot.degree() != 1 || dot.n() != self.n {
            return Err(Error::InvalidInput(
                "linearization direction must be a 1-form of matching dimension".into(),
            ));
        }
        let (dot_s, dot_ds) = synthesize_section_fields(&self.grid, &self.lattice, self.n, dot);
        let len = self.grid.len();
        let mut fields: BTreeMap<Vec<u8>, Vec<Complex64>> = BTreeMap::new();
        for group in &prep.groups {
            // monomial derivative part
            let mut scalar = vec![0.0; len];
            let mut any = false;
            for l in 0..self.n {
                if let Some((mult, low)) = self.ypow_lowered(&group.mono, l) {
                    any = true;
                    for idx in 0..len {
                        scalar[idx] += mult * low[idx] * dot_s[l][idx];
                    }
                }
            }
            if any {
                self.accumulate(&mut fields, group, &scalar, None);
            }
            // wedge derivative part: the slot's component picks its dσ̇ table
            if !group.iy.is_empty() {
                let ypow = self.ypow(&group.mono);
                for slot in 0..group.iy.len() {
                    let comp = group.iy[slot] as usize;
                    self.accumulate(&mut fields, group, &ypow, Some((slot, &dot_ds[comp])));
                }
            }
        }
        Ok(self.analyze_output(prep.degree, fields))
    }

    /// Directional derivative D_y(Π*form)·ẏ: only the monomials depend on y.
    pub fn pullback_dy(&self, prep: &PreparedForm, ydot: &[f64]) -> Result<TorusForm> {
        self.check_prepared(prep)?;
        let len = self.grid.len();
        let mut fields: BTreeMap<Vec<u8>, Vec<Complex64>> = BTreeMap::new();
        for group in &prep.groups {
            let mut scalar = vec![0.0; len];
            let mut any = false;
            for l in 0..self.n {
                if ydot[l] == 0.0 {
                    continue;
                }
                if let Some((mult, low)) = self.ypow_lowered(&group.mono, l) {
                    any = true;
                    for idx in 0..len {
                        scalar[idx] += mult * low[idx] * ydot[l];
                    }
                }
            }
            if any {
                self.accumulate(&mut fields, group, &scalar, None);
            }
        }
        Ok(self.analyze_output(prep.degree, fields))
    }
}

/// Real value and derivative fields of a 1-form's components on a grid:
/// returns (s[j][idx], ds[j][i][idx]).
fn synthesize_section_fields(
    grid: &FourierGrid,
    lattice: &Lattice,
    n: usize,
    sigma: &TorusForm,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let mut s = Vec::with_capacity(n);
    let mut ds = Vec::with_capacity(n);
    for j in 0..n as u8 {
        let modes: Vec<(Vec<i32>, Complex64)> = sigma
            .coeffs()
            .iter()
            .filter(|(k, _)| k.axes == [j])
            .map(|(k, c)| (k.freq.clone(), *c))
            .collect();
        s.push(real_field(grid, modes.iter().map(|(k, c)| (k, *c))));
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let dmodes: Vec<(Vec<i32>, Complex64)> = modes
                .iter()
                .map(|(k, c)| {
                    let w = lattice.wave_vector(k);
                    (k.clone(), c * Complex64::new(0.0, w[i]))
                })
                .collect();
            rows.push(real_field(grid, dmodes.iter().map(|(k, c)| (k, *c))));
        }
        ds.push(rows);
    }
    (s, ds)
}

fn real_field<'a, I>(grid: &FourierGrid, modes: I) -> Vec<f64>
where
    I: IntoIterator<Item = (&'a Vec<i32>, Complex64)>,
{
    grid.synthesize(modes).into_iter().map(|v| v.re).collect()
}

/// All permutations of 0..q with their signs (q ≤ 4 in practice).
fn permutations_with_sign(q: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..q).collect();
    permute_rec(&mut items, 0, &mut out);
    out
}

fn permute_rec(items: &mut Vec<usize>, at: usize, out: &mut Vec<(Vec<usize>, f64)>) {
    if at == items.len() {
        let mut inversions = 0;
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                if items[i] > items[j] {
                    inversions += 1;
                }
            }
        }
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        out.push((items.clone(), sign));
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permute_rec(items, at + 1, out);
        items.swap(at, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_omega(n: usize, lat: &Lattice, r: f64) -> AmbientForm {
        let mut w = AmbientForm::zero(n, 2, lat.clone(), r);
        for j in 0..n {
            w.set(vec![0; n], vec![0; n], vec![j as u8, (n + j) as u8], Complex64::ONE)
                .unwrap();
        }
        w
    }

    #[test]
    fn permutation_signs() {
        let perms = permutations_with_sign(3);
        assert_eq!(perms.len(), 6);
        let product: f64 = perms.iter().map(|(_, s)| s).sum();
        assert_eq!(product, 0.0); // three even, three odd
        for (p, s) in &perms {
            if p == &vec![0, 1, 2] {
                assert_eq!(*s, 1.0);
            }
            if p == &vec![1, 0, 2] {
                assert_eq!(*s, -1.0);
            }
        }
    }

    #[test]
    fn zero_section_pullback_of_omega_vanishes() {
        let n = 2;
        let lat = Lattice::two_pi(n);
        let omega = flat_omega(n, &lat, 4.0);
        let sigma = TorusForm::zero(n, 1, lat);
        let ctx = GraphContext::new(&[0.3, -0.2], &sigma, 8, &[&omega]).unwrap();
        let prep = ctx.prepare(&omega).unwrap();
        let pulled = ctx.pullback(&prep).unwrap();
        assert!(pulled.is_zero());
    }

    #[test]
    fn omega_pullback_is_minus_d_sigma() {
        let n = 2;
        let lat = Lattice::two_pi(n);
        let omega = flat_omega(n, &lat, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sigma = TorusForm::random_real(n, 1, lat, 3, 2.0, true, &mut rng)
            .scaled(Complex64::new(0.05, 0.0));
        let ctx = GraphContext::new(&[0.1, 0.4], &sigma, 8, &[&omega]).unwrap();
        let prep = ctx.prepare(&omega).unwrap();
        let pulled = ctx.pullback(&prep).unwrap();
        let minus_dsigma = sigma.d().unwrap().scaled(-Complex64::ONE);
        let diff = pulled.sub(&minus_dsigma).unwrap();
        assert!(
            diff.coeffs().values().all(|c| c.norm() < 1e-12),
            "max defect {:?}",
            diff.coeffs().values().map(|c| c.norm()).fold(0.0, f64::max)
        );
    }

    #[test]
    fn dy_pullback_is_d_sigma_component() {
        let n = 2;
        let lat = Lattice::two_pi(n);
        let mut dy1 = AmbientForm::zero(n, 1, lat.clone(), 8.0);
        dy1.set(vec![0; n], vec![0; n], vec![n as u8], Complex64::ONE)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = TorusForm::random_real(n, 1, lat, 3, 2.0, true, &mut rng)
            .scaled(Complex64::new(0.02, 0.0));
        let ctx = GraphContext::new(&[0.0, 0.0], &sigma, 8, &[&dy1]).unwrap();
        let prep = ctx.prepare(&dy1).unwrap();
        let pulled = ctx.pullback(&prep).unwrap();
        // dσ₁ where σ₁ is the dx₁ component of σ
        let mut sigma1 = TorusForm::zero(n, 0, pulled.lattice().clone());
        for (k, c) in sigma.coeffs() {
            if k.axes == [0] {
                sigma1.set(k.freq.clone(), vec![], *c).unwrap();
            }
        }
        let expected = sigma1.d().unwrap();
        let diff = pulled.sub(&expected).unwrap();
        assert!(diff.coeffs().values().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn pullback_matches_pointwise_evaluation() {
        // compare the Fourier-side pullback against direct pointwise pullback
        // at random sample points, for a mixed-monomial ambient 1-form
        let n = 2;
        let lat = Lattice::two_pi(n);
        let r = 8.0;
        let mut form = AmbientForm::zero(n, 1, lat.clone(), r);
        form.set(vec![1, 0], vec![1, 0], vec![0], Complex64::new(0.3, -0.1))
            .unwrap();
        form.set(vec![-1, 0], vec![1, 0], vec![0], Complex64::new(0.3, 0.1))
            .unwrap();
        form.set(vec![0, 1], vec![0, 2], vec![3], Complex64::new(-0.2, 0.5))
            .unwrap();
        form.set(vec![0, -1], vec![0, 2], vec![3], Complex64::new(-0.2, -0.5))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sigma = TorusForm::random_real(n, 1, lat.clone(), 2, 2.0, true, &mut rng)
            .scaled(Complex64::new(0.1, 0.0));
        let y0 = [0.25, -0.5];
        let ctx = GraphContext::new(&y0, &sigma, 10, &[&form]).unwrap();
        let prep = ctx.prepare(&form).unwrap();
        let pulled = ctx.pullback(&prep).unwrap();

        use rand::Rng;
        for _ in 0..20 {
            let x = [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)];
            // direct: evaluate sigma and dsigma pointwise, substitute
            let sig = sigma.eval_components(&x);
            let dsig = sigma.d().unwrap().eval_components(&x);
            let s_at = [
                sig.get(&vec![0u8]).map_or(0.0, |c| c.re),
                sig.get(&vec![1u8]).map_or(0.0, |c| c.re),
            ];
            let y_at = [y0[0] + s_at[0], y0[1] + s_at[1]];
            // ds_j/dx_i from spectral derivative of each component
            let mut ds = [[0.0f64; 2]; 2];
            for j in 0..2u8 {
                let mut comp = TorusForm::zero(n, 0, lat.clone());
                for (k, c) in sigma.coeffs() {
                    if k.axes == [j] {
                        comp.set(k.freq.clone(), vec![], *c).unwrap();
                    }
                }
                let dcomp = comp.d().unwrap().eval_components(&x);
                for i in 0..2u8 {
                    ds[j as usize][i as usize] =
                        dcomp.get(&vec![i]).map_or(0.0, |c| c.re);
                }
            }
            let _ = dsig;
            let ambient_vals = form.eval_components(&x, &y_at);
            // expected dx-components of the pullback: dx_i stays, dy_j ↦ Σ ds[j][i] dx_i
            let mut expect = [Complex64::ZERO, Complex64::ZERO];
            for (axes, v) in &ambient_vals {
                let a = axes[0] as usize;
                if a < 2 {
                    expect[a] += v;
                } else {
                    let j = a - 2;
                    for i in 0..2 {
                        expect[i] += v * ds[j][i];
                    }
                }
            }
            let got = pulled.eval_components(&x);
            for i in 0..2u8 {
                let g = got.get(&vec![i]).copied().unwrap_or(Complex64::ZERO);
                assert_relative_eq!(g.re, expect[i as usize].re, epsilon = 1e-9);
                assert_relative_eq!(g.im, expect[i as usize].im, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn linearization_matches_finite_difference() {
        let n = 2;
        let lat = Lattice::two_pi(n);
        let r = 8.0;
        // quadratic monomial with a dy factor exercises both product-rule terms
        let mut form = AmbientForm::zero(n, 2, lat.clone(), r);
        form.set(vec![1, 1], vec![2, 0], vec![0, 3], Complex64::new(0.4, 0.0))
            .unwrap();
        form.set(vec![-1, -1], vec![2, 0], vec![0, 3], Complex64::new(0.4, 0.0))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = TorusForm::random_real(n, 1, lat.clone(), 2, 2.0, true, &mut rng)
            .scaled(Complex64::new(0.05, 0.0));
        let dot = TorusForm::random_real(n, 1, lat, 2, 2.0, true, &mut rng);
        let y0 = [0.2, 0.1];
        let ctx = GraphContext::new(&y0, &sigma, 8, &[&form]).unwrap();
        let prep = ctx.prepare(&form).unwrap();
        let lin = ctx.pullback_linearized(&prep, &dot).unwrap();

        let h = 1e-5;
        let plus = sigma.add_scaled(&dot, Complex64::new(h, 0.0)).unwrap();
        let minus = sigma.add_scaled(&dot, Complex64::new(-h, 0.0)).unwrap();
        let ctx_p = GraphContext::new(&y0, &plus, 8, &[&form]).unwrap();
        let ctx_m = GraphContext::new(&y0, &minus, 8, &[&form]).unwrap();
        let fd = ctx_p
            .pullback(&ctx_p.prepare(&form).unwrap())
            .unwrap()
            .sub(&ctx_m.pullback(&ctx_m.prepare(&form).unwrap()).unwrap())
            .unwrap()
            .scaled(Complex64::new(0.5 / h, 0.0));
        let diff = lin.sub(&fd).unwrap();
        let worst = diff.coeffs().values().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "linearization vs FD defect {worst}");
    }
}

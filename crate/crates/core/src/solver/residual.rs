//! The deformation residual 𝔉(y, σ) and its linearizations.
//!
//! The graph L(y, σ) is special Lagrangian of phase θ for (ω_k, Ω_k) iff
//! 𝔉(y, σ) = 0, where
//!
//!   𝔉(y, σ) = (−Π*ω_k|, −a⁻¹ ⋆_h Π* Im e^{iθ}Ω_k|).
//!
//! The second component carries a global minus sign relative to the raw
//! pairing so that the flat-structure linearization at (0, 0) is exactly the
//! adjoint-convention Hodge Dirac operator (d, δ), with δ(df) = Δf of
//! nonnegative spectrum. The reduced route computes the same value as
//!
//!   (dσ + Π*dα|, δσ − ⋆_h Π*(higher ImΩ₀ terms + d Im β)|),
//!
//! where the higher ImΩ₀ terms (three or more dy factors) vanish for n ≤ 2.
//! Direct and reduced routes agreeing on random inputs is the global sign
//! arbiter for the whole artifact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat::PerturbedCalabiYau;
use crate::forms::{c0_alpha_norm, AmbientForm, GraphContext, NormParams, PreparedForm, TorusForm};

use super::dirac::DiracOperator;
use super::SolverParams;

/// A 𝔅₂ element: the 2-form and 0-form residual components.
#[derive(Debug, Clone)]
pub struct Residual {
    pub first: TorusForm,
    pub second: TorusForm,
}

impl Residual {
    pub fn new(first: TorusForm, second: TorusForm) -> Self {
        debug_assert_eq!(first.degree(), 2);
        debug_assert_eq!(second.degree(), 0);
        Self { first, second }
    }

    pub fn zero(n: usize, lattice: crate::lattice::Lattice) -> Self {
        Self {
            first: TorusForm::zero(n, 2, lattice.clone()),
            second: TorusForm::zero(n, 0, lattice),
        }
    }

    /// Combined surrogate C^{0,α} norm of the pair.
    pub fn surrogate_norm(&self, params: NormParams) -> f64 {
        c0_alpha_norm(&self.first, params) + c0_alpha_norm(&self.second, params)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            first: self.first.add(&other.first)?,
            second: self.second.add(&other.second)?,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            first: self.first.sub(&other.first)?,
            second: self.second.sub(&other.second)?,
        })
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            first: self.first.scaled(s),
            second: self.second.scaled(s),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.first.is_zero() && self.second.is_zero()
    }
}

/// The deformation operator of one perturbed structure: owns the structure,
/// the Dirac operator, and the cached ambient forms that every residual and
/// linearization evaluation pulls back.
pub struct DeformationMap {
    structure: PerturbedCalabiYau,
    params: SolverParams,
    dirac: DiracOperator,
    /// a⁻¹ of the structure (the Eq.-(4.01) factor on the second component).
    inv_a: f64,
    /// Im(e^{iθ}Ω_k), pulled back by the direct route.
    im_cal: AmbientForm,
    /// d(α_k) for the reduced route's first component.
    d_alpha: AmbientForm,
    /// ImΩ₀ terms with ≥ 3 dy factors plus d Im β: the reduced route's
    /// second-component pullback.
    im_rest: AmbientForm,
}

/// A frozen linearization point (y, σ): owns the collocation context and the
/// prepared forms, so repeated directional derivatives are cheap.
pub struct FrozenLinearization {
    ctx: GraphContext,
    prep_omega: PreparedForm,
    prep_im: PreparedForm,
    inv_a: f64,
}

impl FrozenLinearization {
    /// D_σ𝔉(y, σ)·σ̇ by linearized pullback of the full ambient forms.
    pub fn d_sigma(&self, dot: &TorusForm) -> Result<Residual> {
        let first = self
            .ctx
            .pullback_linearized(&self.prep_omega, dot)?
            .scaled(-Complex64::ONE);
        let second = self
            .ctx
            .pullback_linearized(&self.prep_im, dot)?
            .hodge_star()?
            .scaled(Complex64::new(-self.inv_a, 0.0));
        Ok(Residual::new(first, second))
    }

    /// D_y𝔉(y, σ)·ẏ.
    pub fn d_y(&self, ydot: &[f64]) -> Result<Residual> {
        let first = self
            .ctx
            .pullback_dy(&self.prep_omega, ydot)?
            .scaled(-Complex64::ONE);
        let second = self
            .ctx
            .pullback_dy(&self.prep_im, ydot)?
            .hodge_star()?
            .scaled(Complex64::new(-self.inv_a, 0.0));
        Ok(Residual::new(first, second))
    }
}

impl DeformationMap {
    pub fn new(structure: PerturbedCalabiYau, params: SolverParams) -> Result<Self> {
        let dirac = DiracOperator::new(
            structure.lattice().clone(),
            params.cutoff,
            params.norms,
            params.probes,
            params.probe_seed,
        )?;
        let theta = structure.phase_theta();
        let inv_a = 1.0 / structure.scale_a();
        let im_cal = structure.im_calibration(theta);
        let d_alpha = structure.alpha().d()?;
        let im_high = multi_dy_part(&structure.base().big_omega().imag_part(), structure.n());
        let im_rest = im_high.add(&structure.beta().imag_part().d()?)?;
        Ok(Self {
            structure,
            params,
            dirac,
            inv_a,
            im_cal,
            d_alpha,
            im_rest,
        })
    }

    pub fn structure(&self) -> &PerturbedCalabiYau {
        &self.structure
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn dirac(&self) -> &DiracOperator {
        &self.dirac
    }

    pub fn n(&self) -> usize {
        self.structure.n()
    }

    fn check_section(&self, sigma: &TorusForm) -> Result<()> {
        if !sigma.has_zero_harmonic_part() {
            return Err(Error::InvalidInput(
                "graph section must have exactly zero harmonic part".into(),
            ));
        }
        Ok(())
    }

    /// Collocation context for the graph of y + σ covering every cached form.
    pub fn context(&self, y: &[f64], sigma: &TorusForm) -> Result<GraphContext> {
        self.check_section(sigma)?;
        GraphContext::new(
            y,
            sigma,
            self.params.cutoff,
            &[
                self.structure.omega_k(),
                &self.im_cal,
                &self.d_alpha,
                &self.im_rest,
            ],
        )
    }

    /// 𝔉(y, σ) by genuine pullback of ω_k and Im e^{iθ}Ω_k.
    pub fn residual_direct(&self, y: &[f64], sigma: &TorusForm) -> Result<Residual> {
        let ctx = self.context(y, sigma)?;
        self.residual_direct_in(&ctx)
    }

    pub fn residual_direct_in(&self, ctx: &GraphContext) -> Result<Residual> {
        let first = ctx
            .pullback(&ctx.prepare(self.structure.omega_k())?)?
            .scaled(-Complex64::ONE);
        let second = ctx
            .pullback(&ctx.prepare(&self.im_cal)?)?
            .hodge_star()?
            .scaled(Complex64::new(-self.inv_a, 0.0));
        Ok(Residual::new(first, second))
    }

    /// 𝔉(y, σ) by the reduced route: (dσ + Π*dα|, δσ − ⋆Π*(rest)|).
    pub fn residual_formula(&self, y: &[f64], sigma: &TorusForm) -> Result<Residual> {
        let ctx = self.context(y, sigma)?;
        let mut first = sigma.d_over().truncated(self.params.cutoff);
        first = first.add(&ctx.pullback(&ctx.prepare(&self.d_alpha)?)?)?;
        let mut second = sigma.codifferential()?.truncated(self.params.cutoff);
        if !self.im_rest.is_zero() {
            let rest = ctx
                .pullback(&ctx.prepare(&self.im_rest)?)?
                .hodge_star()?
                .scaled(-Complex64::ONE);
            second = second.add(&rest)?;
        }
        Ok(Residual::new(first, second))
    }

    /// Freeze a linearization point.
    pub fn linearization_at(&self, y: &[f64], sigma: &TorusForm) -> Result<FrozenLinearization> {
        let ctx = self.context(y, sigma)?;
        let prep_omega = ctx.prepare(self.structure.omega_k())?;
        let prep_im = ctx.prepare(&self.im_cal)?;
        Ok(FrozenLinearization {
            ctx,
            prep_omega,
            prep_im,
            inv_a: self.inv_a,
        })
    }

    /// D_σ𝔉(y, σ)·σ̇ (one-shot; freeze the point for repeated directions).
    pub fn linearize_sigma(
        &self,
        y: &[f64],
        sigma: &TorusForm,
        dot: &TorusForm,
    ) -> Result<Residual> {
        self.linearization_at(y, sigma)?.d_sigma(dot)
    }

    /// D_y𝔉(y, σ)·ẏ.
    pub fn linearize_y(&self, y: &[f64], sigma: &TorusForm, ydot: &[f64]) -> Result<Residual> {
        self.linearization_at(y, sigma)?.d_y(ydot)
    }

    /// The zero section of this structure's torus.
    pub fn zero_section(&self) -> TorusForm {
        TorusForm::zero(self.n(), 1, self.structure.lattice().clone())
    }
}

/// The part of an ambient n-form whose multi-index contains at least three
/// dy factors (the nonlinear ImΩ₀ terms for n ≥ 3).
fn multi_dy_part(form: &AmbientForm, n: usize) -> AmbientForm {
    let mut out = AmbientForm::zero(n, form.degree(), form.lattice().clone(), form.domain_radius());
    for (key, c) in form.coeffs() {
        let dy_count = key.axes.iter().filter(|&&a| (a as usize) >= n).count();
        if dy_count >= 3 {
            out.add_to(key.freq.clone(), key.mono.clone(), key.axes.clone(), *c)
                .expect("valid key");
        }
    }
    out
}

/// Graph section datum: the 1-form σ with zero harmonic part and its base
/// point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSection {
    pub y: Vec<f64>,
    pub sigma: TorusForm,
}

impl GraphSection {
    pub fn new(y: Vec<f64>, sigma: TorusForm) -> Result<Self> {
        if sigma.degree() != 1 {
            return Err(Error::InvalidInput(format!(
                "graph section must be a 1-form, got degree {}",
                sigma.degree()
            )));
        }
        if !sigma.has_zero_harmonic_part() {
            return Err(Error::InvalidInput(
                "graph section must have exactly zero harmonic part".into(),
            ));
        }
        Ok(Self { y, sigma })
    }
}

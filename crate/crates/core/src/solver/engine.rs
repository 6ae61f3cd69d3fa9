//! Certification of the quantitative implicit-function hypotheses and the
//! certified section solver.
//!
//! The canonical iteration is fixed-slope: σ ← σ − D_σ𝔉(0,0)⁻¹ 𝔉(y, σ),
//! whose contraction bookkeeping is exactly the certificate's constants
//! (C̄, 1/2C̄, δ/4C̄). Newton mode refreshes the linearization each step and
//! converges to the same fixed point; it is an accelerator, never the
//! arbiter.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::forms::{surrogate_norms, NormParams, TorusForm};
use crate::rng::{rng, Stream, PRNG_SCHEME};

use super::dirac::{neumann_invert, random_b1_direction, random_b2_target, NeumannLog};
use super::residual::{DeformationMap, FrozenLinearization, GraphSection, Residual};

/// Numerically verified Theorem-2.1 constants for one structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IFTCertificate {
    /// Measured surrogate bound on ‖D_σ𝔉(0,0)⁻¹‖.
    pub cbar: f64,
    /// Measured sup over sampled (y, σ) of ‖D_σ𝔉(y,σ) − D_σ𝔉(0,0)‖.
    pub deviation_bound: f64,
    /// Measured sup over sampled y of ‖𝔉(y, 0)‖.
    pub residual_at_zero: f64,
    pub delta: f64,
    pub delta0: f64,
    /// Base-ball radius: solves are certified for |y| < r.
    pub r: f64,
    pub hypotheses_ok: bool,
    /// Elliptic constant C_S of the unperturbed Dirac operator.
    pub elliptic_constant: f64,
    /// Measured contraction ‖𝒟⁻¹V‖ of the frozen perturbation.
    pub contraction: f64,
    pub cutoff: i32,
    pub norm_params: NormParams,
    pub probe_seed: u64,
    pub sample_pairs: usize,
    pub probes_per_pair: usize,
    pub residual_samples: usize,
    pub cbar_probes: usize,
    pub prng_scheme: String,
    /// Records that Hölder norms are grid surrogates, per design.
    pub norm_surrogate: String,
}

impl IFTCertificate {
    fn evaluate_hypotheses(&mut self) {
        self.hypotheses_ok = self.deviation_bound <= 1.0 / (2.0 * self.cbar)
            && self.residual_at_zero <= self.delta / (4.0 * self.cbar)
            && self.delta < self.delta0;
    }

    /// Human-readable margin report.
    pub fn margins(&self) -> String {
        format!(
            "deviation {:.3e} vs 1/(2Cbar) {:.3e}; residual_at_zero {:.3e} vs delta/(4Cbar) {:.3e}; delta {} < delta0 {}",
            self.deviation_bound,
            1.0 / (2.0 * self.cbar),
            self.residual_at_zero,
            self.delta / (4.0 * self.cbar),
            self.delta,
            self.delta0
        )
    }
}

/// Sampling plan of certify_hypotheses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub delta: f64,
    pub delta0: f64,
    /// Certified base radius (must stay within 3r/2 of the structure).
    pub r: f64,
    pub sample_pairs: usize,
    pub probes_per_pair: usize,
    pub residual_samples: usize,
    pub cbar_probes: usize,
    pub seed: u64,
}

impl CertifyOptions {
    pub fn for_structure(r_domain: f64, seed: u64) -> Self {
        Self {
            delta: 0.12,
            delta0: 0.25,
            r: 0.75 * r_domain, // half of the 3r/2 ball, comfortably inside
            sample_pairs: 12,
            probes_per_pair: 6,
            residual_samples: 16,
            cbar_probes: 16,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    /// Frozen inverse D_σ𝔉(0,0)⁻¹ each step (the theorem's iteration).
    FixedSlope,
    /// Refreshed linearization each step.
    Newton,
}

/// Convergence record of one section solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub mode: SolveMode,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub sigma_norm: f64,
    pub max_projection_defect: f64,
}

/// Solver bound to one structure: owns the deformation map, the frozen
/// linearization at (0, 0), and its measured contraction.
pub struct SectionSolver {
    map: DeformationMap,
    lin00: FrozenLinearization,
    contraction: f64,
}

impl SectionSolver {
    pub fn new(map: DeformationMap) -> Result<Self> {
        let zero = map.zero_section();
        let origin = vec![0.0; map.n()];
        let lin00 = map.linearization_at(&origin, &zero)?;
        let mut solver = Self {
            map,
            lin00,
            contraction: f64::NAN,
        };
        solver.contraction = solver.measure_contraction()?;
        Ok(solver)
    }

    pub fn map(&self) -> &DeformationMap {
        &self.map
    }

    /// Measured ‖𝒟⁻¹ V₀₀‖ in surrogate norms.
    pub fn contraction(&self) -> f64 {
        self.contraction
    }

    /// V₀₀ σ̇ = D_σ𝔉(0,0)σ̇ − 𝒟σ̇.
    pub fn apply_v00(&self, dot: &TorusForm) -> Result<Residual> {
        let full = self.lin00.d_sigma(dot)?;
        let dirac = self.map.dirac().apply(dot)?;
        full.sub(&dirac)
    }

    fn measure_contraction(&self) -> Result<f64> {
        let p = self.map.params();
        let mut r = rng(p.probe_seed, Stream::Probes, 1);
        let mut worst: f64 = 0.0;
        for _ in 0..p.probes {
            let dot = random_b1_direction(self.map.structure().lattice(), p.cutoff, p.norms, &mut r);
            let v = self.apply_v00(&dot)?;
            let (projected, _) = self.map.dirac().project_b2(&v);
            let x = self.map.dirac().invert_projected(&projected);
            worst = worst.max(surrogate_norms(&x, p.norms).c1_alpha());
        }
        Ok(worst)
    }

    /// (𝒟 + V₀₀)⁻¹ target by Neumann series.
    pub fn invert_frozen(&self, target: &Residual) -> Result<(TorusForm, NeumannLog)> {
        let p = self.map.params();
        neumann_invert(
            self.map.dirac(),
            |dot| self.apply_v00(dot),
            self.contraction,
            target,
            p.projection_tol,
            p.neumann_term_tol,
        )
    }

    /// Solve 𝔉(y, σ) = 0 from the zero initial section.
    pub fn solve(
        &self,
        y: &[f64],
        cert: &IFTCertificate,
        mode: SolveMode,
    ) -> Result<(GraphSection, ConvergenceLog)> {
        self.solve_from(y, cert, mode, self.map.zero_section())
    }

    /// Solve from a caller-supplied admissible initial section (multi-start
    /// uniqueness probes use this).
    pub fn solve_from(
        &self,
        y: &[f64],
        cert: &IFTCertificate,
        mode: SolveMode,
        initial: TorusForm,
    ) -> Result<(GraphSection, ConvergenceLog)> {
        if !cert.hypotheses_ok {
            return Err(Error::CertificateFailed {
                reason: cert.margins(),
            });
        }
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if y_norm >= cert.r {
            return Err(Error::InvalidInput(format!(
                "base point |y| = {y_norm} outside the certified radius {}",
                cert.r
            )));
        }
        let p = *self.map.params();
        let mut sigma = initial;
        let mut history = Vec::new();
        let mut max_defect: f64 = 0.0;
        let mut iterations = 0usize;
        loop {
            let residual = self.map.residual_direct(y, &sigma)?;
            let rn = residual.surrogate_norm(p.norms);
            history.push(rn);
            if rn <= p.tol {
                break;
            }
            if iterations >= p.max_iter {
                return Err(Error::SolverDiverged {
                    iterations,
                    last: rn,
                    history,
                });
            }
            let (projected, defect) = self.map.dirac().project_b2(&residual);
            if defect > p.projection_tol {
                return Err(Error::ProjectionDefect {
                    defect,
                    tol: p.projection_tol,
                });
            }
            max_defect = max_defect.max(defect);
            let (update, nlog) = match mode {
                SolveMode::FixedSlope => self.invert_frozen(&projected)?,
                SolveMode::Newton => self.invert_at(y, &sigma, &projected)?,
            };
            max_defect = max_defect.max(nlog.max_projection_defect);
            sigma = sigma.sub(&update)?.zero_harmonic().truncated(p.cutoff);
            iterations += 1;
        }
        let sigma_norm = surrogate_norms(&sigma, p.norms).c1_alpha();
        if sigma_norm > cert.delta {
            return Err(Error::BudgetViolation {
                norm: sigma_norm,
                delta: cert.delta,
            });
        }
        let final_residual = *history.last().expect("history nonempty");
        let log = ConvergenceLog {
            mode,
            iterations,
            residual_history: history,
            final_residual,
            sigma_norm,
            max_projection_defect: max_defect,
        };
        Ok((GraphSection::new(y.to_vec(), sigma)?, log))
    }

    /// Solve D_σ𝔉(y, σ)x = target at a refreshed linearization point.
    fn invert_at(
        &self,
        y: &[f64],
        sigma: &TorusForm,
        target: &Residual,
    ) -> Result<(TorusForm, NeumannLog)> {
        let p = self.map.params();
        let lin = self.map.linearization_at(y, sigma)?;
        let v = |dot: &TorusForm| -> Result<Residual> {
            lin.d_sigma(dot)?.sub(&self.map.dirac().apply(dot)?)
        };
        // measure the refreshed contraction on a few probes
        let mut r = rng(p.probe_seed, Stream::Probes, 2);
        let mut q: f64 = 0.0;
        for _ in 0..p.probes.min(8) {
            let dot = random_b1_direction(self.map.structure().lattice(), p.cutoff, p.norms, &mut r);
            let (projected, _) = self.map.dirac().project_b2(&v(&dot)?);
            let x = self.map.dirac().invert_projected(&projected);
            q = q.max(surrogate_norms(&x, p.norms).c1_alpha());
        }
        neumann_invert(
            self.map.dirac(),
            v,
            q,
            target,
            p.projection_tol,
            p.neumann_term_tol,
        )
    }

    /// Dσ(y)·e_i = −D_σ𝔉(y,σ)⁻¹ D_y𝔉(y,σ)·e_i for each base direction;
    /// σ must solve at y.
    pub fn solution_derivative(&self, y: &[f64], sigma: &TorusForm) -> Result<Vec<TorusForm>> {
        let n = self.map.n();
        let p = self.map.params();
        let lin = self.map.linearization_at(y, sigma)?;
        let mut columns = Vec::with_capacity(n);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let rhs = lin.d_y(&e)?.scaled(-Complex64::ONE);
            let (projected, defect) = self.map.dirac().project_b2(&rhs);
            if defect > p.projection_tol {
                return Err(Error::ProjectionDefect {
                    defect,
                    tol: p.projection_tol,
                });
            }
            let v = |dot: &TorusForm| -> Result<Residual> {
                lin.d_sigma(dot)?.sub(&self.map.dirac().apply(dot)?)
            };
            // contraction at (y, σ): bounded by the frozen contraction plus
            // the certified deviation; measure directly on a few probes
            let mut r = rng(p.probe_seed, Stream::Probes, 3);
            let mut q: f64 = 0.0;
            for _ in 0..p.probes.min(8) {
                let dot =
                    random_b1_direction(self.map.structure().lattice(), p.cutoff, p.norms, &mut r);
                let (pv, _) = self.map.dirac().project_b2(&v(&dot)?);
                let x = self.map.dirac().invert_projected(&pv);
                q = q.max(surrogate_norms(&x, p.norms).c1_alpha());
            }
            let (col, _) = neumann_invert(
                self.map.dirac(),
                v,
                q,
                &projected,
                p.projection_tol,
                p.neumann_term_tol,
            )?;
            columns.push(col);
        }
        Ok(columns)
    }

    /// Max over the derivative columns of the surrogate C¹ norm: the
    /// measured ‖Dσ(y)‖.
    pub fn solution_derivative_norm(&self, y: &[f64], sigma: &TorusForm) -> Result<f64> {
        let p = self.map.params();
        Ok(self
            .solution_derivative(y, sigma)?
            .iter()
            .map(|c| surrogate_norms(c, p.norms).c1_alpha())
            .fold(0.0, f64::max))
    }
}

/// Measure the Theorem-2.1 hypotheses by sampled surrogate operator norms.
pub fn certify_hypotheses(solver: &SectionSolver, opts: &CertifyOptions) -> Result<IFTCertificate> {
    let map = solver.map();
    let p = *map.params();
    let lattice = map.structure().lattice().clone();
    let n = map.n();
    let max_base = 1.5 * map.structure().r();
    if opts.r > max_base {
        return Err(Error::InvalidInput(format!(
            "certified radius {} exceeds the 3r/2 ball {}",
            opts.r, max_base
        )));
    }

    // Cbar: measured ‖(𝒟+V₀₀)⁻¹‖ over random 𝔅₂ probes
    let mut r_cbar = rng(opts.seed, Stream::Probes, 10);
    let mut cbar: f64 = 0.0;
    for _ in 0..opts.cbar_probes {
        let target = random_b2_target(&lattice, p.cutoff, &mut r_cbar);
        let (projected, _) = map.dirac().project_b2(&target);
        let tn = projected.surrogate_norm(p.norms);
        if tn == 0.0 {
            continue;
        }
        let (x, _) = solver.invert_frozen(&projected)?;
        cbar = cbar.max(surrogate_norms(&x, p.norms).c1_alpha() / tn);
    }

    // deviation: sup over sampled (y, σ) pairs and probe directions of
    // ‖(D_σ𝔉(y,σ) − D_σ𝔉(0,0))σ̇‖₂ / ‖σ̇‖₁
    let mut r_probe = rng(opts.seed, Stream::Probes, 11);
    let probes: Vec<TorusForm> = (0..opts.probes_per_pair)
        .map(|_| random_b1_direction(&lattice, p.cutoff, p.norms, &mut r_probe))
        .collect();
    let base_at_zero: Vec<Residual> = probes
        .iter()
        .map(|dot| solver.lin00.d_sigma(dot))
        .collect::<Result<_>>()?;

    let mut r_pair = rng(opts.seed, Stream::SamplePoints, 12);
    let pairs: Vec<(Vec<f64>, TorusForm)> = (0..opts.sample_pairs)
        .map(|_| {
            let y = random_ball_point(n, opts.r.min(max_base), &mut r_pair);
            let raw = random_b1_direction(&lattice, p.cutoff, p.norms, &mut r_pair);
            let sigma = raw.scaled(Complex64::new(opts.delta0, 0.0));
            (y, sigma)
        })
        .collect();
    let deviations = exec::map_collect(&pairs, |(y, sigma)| -> Result<f64> {
        let lin = map.linearization_at(y, sigma)?;
        let mut worst: f64 = 0.0;
        for (dot, at_zero) in probes.iter().zip(&base_at_zero) {
            let moved = lin.d_sigma(dot)?;
            let diff = moved.sub(at_zero)?.surrogate_norm(p.norms);
            worst = worst.max(diff);
        }
        Ok(worst)
    });
    let mut deviation_bound: f64 = 0.0;
    for d in deviations {
        deviation_bound = deviation_bound.max(d?);
    }

    // residual at zero: sup over sampled y of ‖𝔉(y, 0)‖₂
    let mut r_res = rng(opts.seed, Stream::SamplePoints, 13);
    let zero = map.zero_section();
    let ys: Vec<Vec<f64>> = (0..opts.residual_samples)
        .map(|_| random_ball_point(n, opts.r.min(max_base), &mut r_res))
        .collect();
    let residuals = exec::map_collect(&ys, |y| -> Result<f64> {
        Ok(map.residual_direct(y, &zero)?.surrogate_norm(p.norms))
    });
    let mut residual_at_zero: f64 = 0.0;
    for rz in residuals {
        residual_at_zero = residual_at_zero.max(rz?);
    }

    let mut cert = IFTCertificate {
        cbar,
        deviation_bound,
        residual_at_zero,
        delta: opts.delta,
        delta0: opts.delta0,
        r: opts.r,
        hypotheses_ok: false,
        elliptic_constant: map.dirac().elliptic_constant(),
        contraction: solver.contraction(),
        cutoff: p.cutoff,
        norm_params: p.norms,
        probe_seed: opts.seed,
        sample_pairs: opts.sample_pairs,
        probes_per_pair: opts.probes_per_pair,
        residual_samples: opts.residual_samples,
        cbar_probes: opts.cbar_probes,
        prng_scheme: PRNG_SCHEME.to_string(),
        norm_surrogate: format!(
            "Hoelder norms replaced by grid surrogates: sup + gradient sup + max FD quotient at alpha = {}, grid = {}",
            p.norms.alpha, p.norms.grid
        ),
    };
    cert.evaluate_hypotheses();
    Ok(cert)
}

fn random_ball_point<R: rand::Rng>(n: usize, radius: f64, r: &mut R) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-radius..radius)).collect();
        if y.iter().map(|v| v * v).sum::<f64>().sqrt() < radius {
            return y;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat::{FlatCalabiYau, PerturbedCalabiYau, SamplerProfile};
    use crate::lattice::Lattice;
    use crate::solver::SolverParams;

    fn solver_for(epsilon: f64, seed: u64) -> SectionSolver {
        let flat = FlatCalabiYau::new(2, Lattice::two_pi(2), 2.0).unwrap();
        let profile = SamplerProfile {
            k_max: 4,
            d_max: 2,
            decay: 4.0,
        };
        let s = if epsilon == 0.0 {
            PerturbedCalabiYau::flat(flat)
        } else {
            PerturbedCalabiYau::sample(flat, profile, epsilon, seed, None).unwrap()
        };
        let params = SolverParams {
            cutoff: 6,
            probes: 8,
            ..SolverParams::default()
        };
        SectionSolver::new(DeformationMap::new(s, params).unwrap()).unwrap()
    }

    fn quick_cert(solver: &SectionSolver) -> IFTCertificate {
        let opts = CertifyOptions {
            sample_pairs: 4,
            probes_per_pair: 3,
            residual_samples: 6,
            cbar_probes: 6,
            ..CertifyOptions::for_structure(2.0, 99)
        };
        certify_hypotheses(solver, &opts).unwrap()
    }

    #[test]
    fn flat_certificate_is_clean() {
        let solver = solver_for(0.0, 0);
        assert!(solver.contraction() < 1e-12);
        let cert = quick_cert(&solver);
        assert!(cert.hypotheses_ok, "{}", cert.margins());
        assert!(cert.deviation_bound < 1e-11);
        assert!(cert.residual_at_zero < 1e-11);
    }

    #[test]
    fn flat_solve_returns_zero_in_zero_iterations() {
        let solver = solver_for(0.0, 0);
        let cert = quick_cert(&solver);
        let (section, log) = solver.solve(&[0.4, -0.9], &cert, SolveMode::FixedSlope).unwrap();
        assert_eq!(log.iterations, 0);
        assert!(section.sigma.is_zero());
    }

    #[test]
    fn perturbed_solve_converges_and_modes_agree() {
        let solver = solver_for(1e-2, 3);
        assert!(solver.contraction() < 0.5, "contraction {}", solver.contraction());
        let cert = quick_cert(&solver);
        assert!(cert.hypotheses_ok, "{}", cert.margins());
        let y = [0.5, -0.3];
        let (fixed, log_f) = solver.solve(&y, &cert, SolveMode::FixedSlope).unwrap();
        assert!(log_f.final_residual <= 1e-10);
        let direct = solver
            .map()
            .residual_direct(&y, &fixed.sigma)
            .unwrap()
            .surrogate_norm(NormParams::default());
        assert!(direct < 1e-9, "re-checked residual {direct}");
        let (newton, log_n) = solver.solve(&y, &cert, SolveMode::Newton).unwrap();
        assert!(log_n.iterations <= log_f.iterations);
        let gap = fixed
            .sigma
            .sub(&newton.sigma)
            .unwrap();
        let gap_norm = surrogate_norms(&gap, NormParams::default()).c1_alpha();
        assert!(gap_norm < 1e-9, "mode disagreement {gap_norm}");
    }

    #[test]
    fn multi_start_reaches_the_same_section() {
        let solver = solver_for(1e-2, 3);
        let cert = quick_cert(&solver);
        let y = [0.2, 0.6];
        let (base, _) = solver.solve(&y, &cert, SolveMode::FixedSlope).unwrap();
        let mut r = rng(77, Stream::Probes, 50);
        for _ in 0..3 {
            let init = random_b1_direction(
                solver.map().structure().lattice(),
                6,
                NormParams::default(),
                &mut r,
            )
            .scaled(Complex64::new(0.5 * cert.delta, 0.0));
            let (other, _) = solver.solve_from(&y, &cert, SolveMode::FixedSlope, init).unwrap();
            let gap = base.sigma.sub(&other.sigma).unwrap();
            let gap_norm = surrogate_norms(&gap, NormParams::default()).c1_alpha();
            assert!(gap_norm < 1e-9, "multi-start gap {gap_norm}");
        }
    }

    #[test]
    fn solve_requires_valid_certificate() {
        let solver = solver_for(1e-2, 3);
        let mut cert = quick_cert(&solver);
        cert.hypotheses_ok = false;
        assert!(matches!(
            solver.solve(&[0.0, 0.0], &cert, SolveMode::FixedSlope),
            Err(Error::CertificateFailed { .. })
        ));
    }

    #[test]
    fn oversized_epsilon_fails_certification() {
        // find a perturbation strong enough to break the smallness chain but
        // not the degeneracy floor
        let solver = solver_for(0.35, 3);
        let cert = quick_cert(&solver);
        assert!(
            !cert.hypotheses_ok || solver.contraction() >= 0.5,
            "expected certification failure at large epsilon: {}",
            cert.margins()
        );
    }

    #[test]
    fn solution_derivative_matches_resolve_differences() {
        let solver = solver_for(1e-2, 3);
        let cert = quick_cert(&solver);
        let y = [0.3, 0.1];
        let (section, _) = solver.solve(&y, &cert, SolveMode::FixedSlope).unwrap();
        let cols = solver.solution_derivative(&y, &section.sigma).unwrap();
        let h = 1e-3;
        for i in 0..2 {
            let mut yp = y.to_vec();
            yp[i] += h;
            let mut ym = y.to_vec();
            ym[i] -= h;
            let (sp, _) = solver.solve(&yp, &cert, SolveMode::FixedSlope).unwrap();
            let (sm, _) = solver.solve(&ym, &cert, SolveMode::FixedSlope).unwrap();
            let fd = sp
                .sigma
                .sub(&sm.sigma)
                .unwrap()
                .scaled(Complex64::new(0.5 / h, 0.0));
            let diff = fd.sub(&cols[i]).unwrap();
            let dn = surrogate_norms(&diff, NormParams::default()).c1_alpha();
            assert!(dn < 1e-5, "solution derivative vs FD defect {dn}");
        }
    }
}

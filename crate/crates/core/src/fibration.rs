//! Assembling solved sections over a base grid into a fibration, the
//! embedding check for Ψ(x, y) = (x, y + σ(y)(x)), equivariance defects,
//! and fibration export.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::forms::{surrogate_norms, FourierGrid, NormParams, TorusForm};
use crate::group::GroupAction;
use crate::solver::{ConvergenceLog, GraphSection, IFTCertificate, SectionSolver, SolveMode};

/// Finite base grid inside B(0, 3r/2): a uniform box grid intersected with
/// the ball of the given radius, kept with its integer index for neighbor
/// lookups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseGrid {
    n: usize,
    per_dim: usize,
    radius: f64,
    spacing: f64,
    indices: Vec<Vec<i32>>,
    points: Vec<Vec<f64>>,
}

impl BaseGrid {
    /// per_dim uniform points per axis over [−radius, radius], filtered to
    /// the closed ball of the same radius.
    pub fn cartesian_ball(n: usize, per_dim: usize, radius: f64) -> Result<Self> {
        if per_dim < 1 || radius <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "grid needs per_dim >= 1 and radius > 0, got {per_dim}, {radius}"
            )));
        }
        let spacing = if per_dim == 1 {
            0.0
        } else {
            2.0 * radius / (per_dim - 1) as f64
        };
        let half = (per_dim as i32 - 1) / 2;
        let offset = if per_dim % 2 == 0 { 0.5 } else { 0.0 };
        let mut indices = Vec::new();
        let mut points = Vec::new();
        let mut idx = vec![0i32; n];
        let start = -half - if per_dim % 2 == 0 { 1 } else { 0 };
        let mut cursor = vec![start; n];
        loop {
            let y: Vec<f64> = cursor.iter().map(|&c| (c as f64 + offset) * spacing).collect();
            if y.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius + 1e-12 {
                indices.push(cursor.clone());
                points.push(y);
            }
            let mut axis = 0;
            loop {
                if axis == n {
                    let _ = &mut idx;
                    return Ok(Self {
                        n,
                        per_dim,
                        radius,
                        spacing,
                        indices,
                        points,
                    });
                }
                cursor[axis] += 1;
                if cursor[axis] < start + per_dim as i32 {
                    break;
                }
                cursor[axis] = start;
                axis += 1;
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Pairs of grid slots adjacent along one axis.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, idx) in self.indices.iter().enumerate() {
            for axis in 0..self.n {
                let mut next = idx.clone();
                next[axis] += 1;
                if let Some(j) = self.indices.iter().position(|c| c == &next) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Index of the grid point matching y within tolerance.
    pub fn find(&self, y: &[f64], tol: f64) -> Option<usize> {
        self.points.iter().position(|p| {
            p.iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                < tol
        })
    }

    pub fn is_invariant_under(&self, action: &GroupAction, tol: f64) -> bool {
        action.base_set_invariant(&self.points, tol)
    }
}

/// One solved fiber with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiberRecord {
    pub section: GraphSection,
    pub log: ConvergenceLog,
    pub residual_direct: f64,
    pub residual_formula: f64,
    pub sigma_norm: f64,
}

/// The assembled fibration over the base grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fibration {
    pub grid: BaseGrid,
    pub theta: f64,
    pub fibers: Vec<FiberRecord>,
    /// Measured sup of ‖Dσ(y)‖ over the sampled grid points.
    pub max_solution_derivative: f64,
    /// Worst ratio of adjacent-section difference to the
    /// ‖Dσ‖·spacing·1.5 continuity budget.
    pub continuity_ratio: f64,
    pub continuity_ok: bool,
}

/// Solve every grid point (concurrently) and run the continuity diagnostic.
pub fn build_fibration(
    solver: &SectionSolver,
    cert: &IFTCertificate,
    grid: BaseGrid,
    mode: SolveMode,
) -> Result<Fibration> {
    let params = *solver.map().params();
    let results = exec::map_collect(grid.points(), |y| -> Result<FiberRecord> {
        let (section, log) = solver.solve(y, cert, mode).map_err(|e| Error::FiberFailed {
            y: y.clone(),
            source: Box::new(e),
        })?;
        let rd = solver
            .map()
            .residual_direct(y, &section.sigma)?
            .surrogate_norm(params.norms);
        let rf = solver
            .map()
            .residual_formula(y, &section.sigma)?
            .surrogate_norm(params.norms);
        let sigma_norm = surrogate_norms(&section.sigma, params.norms).c1_alpha();
        Ok(FiberRecord {
            section,
            log,
            residual_direct: rd,
            residual_formula: rf,
            sigma_norm,
        })
    });
    let mut fibers = Vec::with_capacity(results.len());
    for r in results {
        fibers.push(r?);
    }

    // measure ‖Dσ‖ on a subsample of grid points
    let stride = (grid.len() / 9).max(1);
    let sampled: Vec<usize> = (0..grid.len()).step_by(stride).collect();
    let derivative_norms = exec::map_collect(&sampled, |&i| {
        solver.solution_derivative_norm(&fibers[i].section.y, &fibers[i].section.sigma)
    });
    let mut max_dsigma: f64 = 0.0;
    for d in derivative_norms {
        max_dsigma = max_dsigma.max(d?);
    }

    // adjacent sections must differ by at most ‖Dσ‖·spacing·(1 + 0.5)
    let budget = max_dsigma * grid.spacing() * 1.5 + 1e-12;
    let mut worst_ratio: f64 = 0.0;
    for (i, j) in grid.neighbor_pairs() {
        let diff = fibers[i].section.sigma.sub(&fibers[j].section.sigma)?;
        let dn = surrogate_norms(&diff, params.norms).c1_alpha();
        worst_ratio = worst_ratio.max(dn / budget);
    }
    let theta = solver.map().structure().phase_theta();
    Ok(Fibration {
        grid,
        theta,
        fibers,
        max_solution_derivative: max_dsigma,
        continuity_ratio: worst_ratio,
        continuity_ok: worst_ratio <= 1.0,
    })
}

/// Embedding diagnostics of Ψ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingReport {
    /// min over sampled (x, y) of det(I + ∂σ(y)/∂y at x).
    pub min_jacobian_det: f64,
    /// min over fiber pairs of the sampled ambient distance.
    pub min_fiber_separation: f64,
    /// min over fiber pairs of |Δy| − sup|σ_i| − sup|σ_j|.
    pub separation_lower_bound: f64,
    /// max over sampled fibers and entries of |∂σ_j/∂y_i| at x-samples.
    pub max_dsigma_dy: f64,
    pub injective: bool,
}

/// Sample the Jacobian of Ψ over a product grid and estimate fiber
/// separations.
pub fn check_embedding(
    solver: &SectionSolver,
    fibration: &Fibration,
    x_samples_per_dim: usize,
) -> Result<EmbeddingReport> {
    let n = fibration.grid.n();
    let norms = solver.map().params().norms;
    let lattice = solver.map().structure().lattice().clone();
    let xgrid = FourierGrid::new(n, x_samples_per_dim.max(2));

    let dets = exec::map_collect(&fibration.fibers, |fiber| -> Result<(f64, f64)> {
        let columns = solver.solution_derivative(&fiber.section.y, &fiber.section.sigma)?;
        let mut min_det = f64::INFINITY;
        let mut max_entry: f64 = 0.0;
        for idx in 0..xgrid.len() {
            let x = xgrid.point(idx, &lattice);
            let mut m = nalgebra::DMatrix::<f64>::identity(n, n);
            for (i, col) in columns.iter().enumerate() {
                let comps = col.eval_components(&x);
                for j in 0..n {
                    let v = comps
                        .get(&vec![j as u8])
                        .map_or(0.0, |c| c.re);
                    m[(j, i)] += v;
                    max_entry = max_entry.max(v.abs());
                }
            }
            min_det = min_det.min(m.determinant());
        }
        Ok((min_det, max_entry))
    });
    let mut min_jacobian_det = f64::INFINITY;
    let mut max_dsigma_dy: f64 = 0.0;
    for d in dets {
        let (det, entry) = d?;
        min_jacobian_det = min_jacobian_det.min(det);
        max_dsigma_dy = max_dsigma_dy.max(entry);
    }

    // displacement sups per fiber
    let sups: Vec<f64> = fibration
        .fibers
        .iter()
        .map(|f| surrogate_norms(&f.section.sigma, norms).sup_norm)
        .collect();

    let mut separation_lower_bound = f64::INFINITY;
    let mut min_fiber_separation = f64::INFINITY;
    let close_cut = 2.5 * fibration.grid.spacing();
    for i in 0..fibration.fibers.len() {
        for j in (i + 1)..fibration.fibers.len() {
            let yi = &fibration.fibers[i].section.y;
            let yj = &fibration.fibers[j].section.y;
            let dy: f64 = yi
                .iter()
                .zip(yj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            separation_lower_bound = separation_lower_bound.min(dy - sups[i] - sups[j]);
            if dy <= close_cut {
                // sampled same-x distance between the two graphs
                let si = &fibration.fibers[i].section.sigma;
                let sj = &fibration.fibers[j].section.sigma;
                for idx in 0..xgrid.len() {
                    let x = xgrid.point(idx, &lattice);
                    let vi = si.eval_components(&x);
                    let vj = sj.eval_components(&x);
                    let mut d2 = 0.0;
                    for a in 0..n {
                        let ya = yi[a] + vi.get(&vec![a as u8]).map_or(0.0, |c| c.re);
                        let yb = yj[a] + vj.get(&vec![a as u8]).map_or(0.0, |c| c.re);
                        d2 += (ya - yb) * (ya - yb);
                    }
                    min_fiber_separation = min_fiber_separation.min(d2.sqrt());
                }
            }
        }
    }
    if fibration.fibers.len() < 2 {
        separation_lower_bound = f64::INFINITY;
        min_fiber_separation = f64::INFINITY;
    }

    let injective = min_jacobian_det > 0.0
        && (separation_lower_bound > 0.0 || min_fiber_separation > 0.0);
    Ok(EmbeddingReport {
        min_jacobian_det,
        min_fiber_separation,
        separation_lower_bound,
        max_dsigma_dy,
        injective,
    })
}

/// Max over elements γ and grid points y of ‖γ^{−1,*}σ(y) − σ(γ·y)‖ in the
/// surrogate C¹ norm. The structure must be invariant and the grid closed
/// under the action.
pub fn check_equivariance(
    solver: &SectionSolver,
    fibration: &Fibration,
    action: &GroupAction,
) -> Result<f64> {
    let structure = solver.map().structure();
    let norms = solver.map().params().norms;
    // structure invariance pre-check
    for e in action.elements() {
        let po = action.pullback_ambient(e, structure.omega_k())?;
        if po.coeff_distance(structure.omega_k()) > 1e-10 {
            return Err(Error::IncompatibleGroupElement {
                reason: "omega_k is not invariant under the action".into(),
            });
        }
        let pb = action.pullback_ambient(e, structure.big_omega_k())?;
        if pb.coeff_distance(structure.big_omega_k()) > 1e-10 {
            return Err(Error::IncompatibleGroupElement {
                reason: "Omega_k is not invariant under the action".into(),
            });
        }
    }
    if !fibration.grid.is_invariant_under(action, 1e-9) {
        return Err(Error::InvalidInput(
            "base grid is not invariant under the action".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for e in action.elements() {
        for fiber in &fibration.fibers {
            let moved_y = e.base_point(&fiber.section.y);
            let target = fibration
                .grid
                .find(&moved_y, 1e-9)
                .expect("grid invariance checked above");
            let transformed = action.section_transform(e, &fiber.section.sigma)?;
            let diff = transformed.sub(&fibration.fibers[target].section.sigma)?;
            worst = worst.max(surrogate_norms(&diff, norms).c1_alpha());
        }
    }
    Ok(worst)
}

/// The companion CSV of (y, ‖σ‖, residual) rows.
pub fn fibration_csv(fibration: &Fibration) -> String {
    let n = fibration.grid.n();
    let mut out = String::new();
    for i in 0..n {
        out.push_str(&format!("y{},", i + 1));
    }
    out.push_str("sigma_norm,residual_direct,residual_formula,iterations\n");
    for f in &fibration.fibers {
        for v in &f.section.y {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!(
            "{},{},{},{}\n",
            f.sigma_norm, f.residual_direct, f.residual_formula, f.log.iterations
        ));
    }
    out
}

/// Re-check every stored fiber against both residual routes.
pub fn recheck_fibration(solver: &SectionSolver, fibration: &Fibration, tol: f64) -> Result<()> {
    let norms = solver.map().params().norms;
    for fiber in &fibration.fibers {
        let rd = solver
            .map()
            .residual_direct(&fiber.section.y, &fiber.section.sigma)?
            .surrogate_norm(norms);
        let rf = solver
            .map()
            .residual_formula(&fiber.section.y, &fiber.section.sigma)?
            .surrogate_norm(norms);
        if rd > tol || rf > tol {
            return Err(Error::InvalidInput(format!(
                "fiber at y = {:?} re-checks at residuals {rd:e}/{rf:e} above {tol:e}",
                fiber.section.y
            )));
        }
    }
    Ok(())
}

/// σ scaled to a pure displacement field sup (used by comparison reports).
pub fn displacement_sup(sigma: &TorusForm, norms: NormParams) -> f64 {
    surrogate_norms(sigma, norms).sup_norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat::{FlatCalabiYau, PerturbedCalabiYau};
    use crate::lattice::Lattice;
    use crate::solver::{certify_hypotheses, CertifyOptions, DeformationMap, SolverParams};

    fn flat_solver() -> SectionSolver {
        let flat = FlatCalabiYau::new(2, Lattice::two_pi(2), 2.0).unwrap();
        let params = SolverParams {
            cutoff: 4,
            probes: 4,
            ..SolverParams::default()
        };
        SectionSolver::new(DeformationMap::new(PerturbedCalabiYau::flat(flat), params).unwrap())
            .unwrap()
    }

    fn flat_cert(solver: &SectionSolver) -> IFTCertificate {
        let opts = CertifyOptions {
            sample_pairs: 2,
            probes_per_pair: 2,
            residual_samples: 3,
            cbar_probes: 3,
            ..CertifyOptions::for_structure(2.0, 1)
        };
        certify_hypotheses(solver, &opts).unwrap()
    }

    #[test]
    fn cartesian_ball_grid_shape() {
        let g = BaseGrid::cartesian_ball(2, 3, 1.0).unwrap();
        // 3x3 box grid: corners at radius sqrt(2) are filtered out
        assert_eq!(g.len(), 5);
        assert_eq!(g.spacing(), 1.0);
        assert!(!g.neighbor_pairs().is_empty());
        // 9x9 box grid over [-1,1]^2 keeps the 49 points inside the ball
        let g9 = BaseGrid::cartesian_ball(2, 9, 1.0).unwrap();
        assert_eq!(g9.len(), 49);
    }

    #[test]
    fn flat_fibration_is_the_model_projection() {
        let solver = flat_solver();
        let cert = flat_cert(&solver);
        let grid = BaseGrid::cartesian_ball(2, 3, 1.0).unwrap();
        let fib = build_fibration(&solver, &cert, grid, SolveMode::FixedSlope).unwrap();
        for f in &fib.fibers {
            assert!(f.section.sigma.is_zero());
            assert_eq!(f.log.iterations, 0);
            assert!(f.residual_direct < 1e-12);
        }
        assert!(fib.continuity_ok);
        let report = check_embedding(&solver, &fib, 8).unwrap();
        assert!((report.min_jacobian_det - 1.0).abs() < 1e-12);
        assert!(report.injective);
        // grid spacing 1.0, zero sections: separation exactly the spacing
        assert!((report.min_fiber_separation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_group_has_zero_defect() {
        let solver = flat_solver();
        let cert = flat_cert(&solver);
        let grid = BaseGrid::cartesian_ball(2, 3, 1.0).unwrap();
        let fib = build_fibration(&solver, &cert, grid, SolveMode::FixedSlope).unwrap();
        let action = crate::group::GroupAction::trivial(Lattice::two_pi(2));
        let defect = check_equivariance(&solver, &fib, &action).unwrap();
        assert_eq!(defect, 0.0);
    }

    #[test]
    fn csv_has_one_row_per_fiber() {
        let solver = flat_solver();
        let cert = flat_cert(&solver);
        let grid = BaseGrid::cartesian_ball(2, 3, 1.0).unwrap();
        let fib = build_fibration(&solver, &cert, grid, SolveMode::FixedSlope).unwrap();
        let csv = fibration_csv(&fib);
        assert_eq!(csv.lines().count(), 1 + fib.fibers.len());
        assert!(csv.starts_with("y1,y2,sigma_norm"));
    }
}

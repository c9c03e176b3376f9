//! Nyström discretization and iterative solution of the Dirichlet boundary
//! integral equations: the interior Laplace problem through the smooth
//! on-boundary limit of the double layer, and the exterior Helmholtz
//! problem through a combined-field operator whose matrix-vector product is
//! evaluated with two-sided adaptive expansions. Both are solved with
//! unrestarted GMRES.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::aqbx::{AqbxConfig, ExpansionCenter, LayerPotential};
use crate::density::Density;
use crate::geometry::{build_boundary, Boundary, ParametrizedCurve, Side, PANEL_ORDER};
use crate::kernels::{kernel_value, KernelSpec};
use crate::special::hankel1;
use crate::{Complex, Error, Result};

/// A Dirichlet problem posed on one side of a closed boundary, with truth
/// given by point sources on the other side.
pub struct BoundaryValueProblem {
    pub kernel: KernelSpec,
    pub boundary: Arc<Boundary>,
    /// Side of the boundary occupied by the solution domain.
    pub side: Side,
    /// Point sources (location, strength) generating the boundary data;
    /// strengths are normalized so that max |f| over the nodes is 1.
    pub sources: Vec<(Complex, Complex)>,
    /// Dirichlet data at the boundary nodes.
    pub dirichlet: Vec<Complex>,
    /// Seed used for random source placement, when applicable.
    pub source_seed: Option<u64>,
}

/// Random (position, strength) pairs on a circle of the given radius.
pub fn random_circle_sources<R: Rng>(
    rng: &mut R,
    count: usize,
    radius: f64,
) -> Vec<(Complex, Complex)> {
    (0..count)
        .map(|_| {
            let th = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            let pos = radius * Complex::new(th.cos(), th.sin());
            let strength = Complex::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
            (pos, strength)
        })
        .collect()
}

impl BoundaryValueProblem {
    /// Interior Laplace problem: the curve is oriented so the normals
    /// point into the enclosed domain; sources must lie outside it.
    pub fn laplace_interior(
        curve: &ParametrizedCurve,
        n_panels: usize,
        sources: Vec<(Complex, Complex)>,
    ) -> Result<Self> {
        let boundary = Arc::new(build_boundary(&curve.oriented_ccw(true), n_panels)?);
        Self::laplace_interior_on(boundary, sources)
    }

    /// Interior Laplace problem on an existing (ccw-oriented) boundary.
    pub fn laplace_interior_on(
        boundary: Arc<Boundary>,
        sources: Vec<(Complex, Complex)>,
    ) -> Result<Self> {
        if !boundary.ccw {
            return Err(Error::Config(
                "interior Laplace problem needs a counterclockwise boundary \
                 (normals pointing into the domain)"
                    .into(),
            ));
        }
        for (s, _) in &sources {
            if boundary.contains_side(*s, Side::Interior) {
                return Err(Error::Config(format!(
                    "Laplace truth source {s} lies inside the solution domain"
                )));
            }
        }
        Self::assemble(KernelSpec::laplace(), boundary, Side::Interior, sources)
    }

    /// Exterior Helmholtz problem: the curve is oriented so the normals
    /// point into the unbounded domain; sources must lie inside the
    /// obstacle (the radiation condition is then automatic).
    pub fn helmholtz_exterior(
        curve: &ParametrizedCurve,
        n_panels: usize,
        wavenumber: f64,
        sources: Vec<(Complex, Complex)>,
    ) -> Result<Self> {
        let boundary = Arc::new(build_boundary(&curve.oriented_ccw(false), n_panels)?);
        Self::helmholtz_exterior_on(boundary, wavenumber, sources)
    }

    /// Exterior Helmholtz problem on an existing (cw-oriented) boundary.
    pub fn helmholtz_exterior_on(
        boundary: Arc<Boundary>,
        wavenumber: f64,
        sources: Vec<(Complex, Complex)>,
    ) -> Result<Self> {
        if boundary.ccw {
            return Err(Error::Config(
                "exterior Helmholtz problem needs a clockwise boundary \
                 (normals pointing into the exterior domain)"
                    .into(),
            ));
        }
        for (s, _) in &sources {
            if boundary.contains_side(*s, Side::Exterior) {
                return Err(Error::Config(format!(
                    "Helmholtz truth source {s} lies in the exterior domain"
                )));
            }
        }
        Self::assemble(
            KernelSpec::helmholtz(wavenumber)?,
            boundary,
            Side::Exterior,
            sources,
        )
    }

    fn assemble(
        kernel: KernelSpec,
        boundary: Arc<Boundary>,
        side: Side,
        sources: Vec<(Complex, Complex)>,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("need at least one truth source".into()));
        }
        let mut problem = Self {
            kernel,
            boundary,
            side,
            sources,
            dirichlet: Vec::new(),
            source_seed: None,
        };
        let raw: Vec<Complex> = problem
            .boundary
            .nodes()
            .iter()
            .map(|&z| problem.reference_field(z))
            .collect::<Result<_>>()?;
        let norm = raw.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if norm == 0.0 {
            return Err(Error::Config("boundary data vanished identically".into()));
        }
        for (_, c) in problem.sources.iter_mut() {
            *c /= norm;
        }
        problem.dirichlet = raw.into_iter().map(|v| v / norm).collect();
        Ok(problem)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.source_seed = Some(seed);
        self
    }

    /// Exact solution: superposition of the point-source fields.
    pub fn reference_field(&self, z: Complex) -> Result<Complex> {
        let mut acc = Complex::new(0.0, 0.0);
        for &(s, c) in &self.sources {
            let d = z - s;
            if d.norm() == 0.0 {
                return Err(Error::SingularEvaluation);
            }
            match self.kernel {
                KernelSpec::LaplaceDlp => {
                    acc += Complex::new((c / d).re, 0.0);
                }
                KernelSpec::HelmholtzCfie { wavenumber } => {
                    let h0 = hankel1(0, wavenumber * d.norm())?;
                    acc += c * Complex::new(0.0, 0.25) * h0;
                }
            }
        }
        Ok(acc)
    }
}

/// Square linear operator for the iterative solver.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex]) -> Result<Vec<Complex>>;
}

/// Dense real matrix (row-major) acting on complex vectors.
pub struct DenseOperator {
    pub n: usize,
    pub entries: Vec<f64>,
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[Complex]) -> Result<Vec<Complex>> {
        Ok((0..self.n)
            .into_par_iter()
            .map(|i| {
                let row = &self.entries[i * self.n..(i + 1) * self.n];
                row.iter().zip(x).map(|(&m, &s)| m * s).sum()
            })
            .collect())
    }
}

/// Dense Nyström matrix of (1/2 I + D) for the interior Laplace double
/// layer. The kernel has a smooth on-boundary limit; the diagonal is fixed
/// by requiring the discrete operator to reproduce the on-surface Gauss
/// identity, whose sign is measured at an interior point rather than
/// assumed from a curvature convention.
pub fn laplace_nystrom_matrix(boundary: &Boundary) -> Result<DenseOperator> {
    let n = boundary.node_count();
    let n_panels = boundary.panels.len();
    // Reject near self-contact: nodes of well-separated panels (along the
    // curve) approaching each other much closer than their arc separation.
    let h = boundary.panel_arclen();
    for i in 0..n {
        let pi = i / PANEL_ORDER;
        let zi = boundary.node_position(i);
        for pj in 0..n_panels {
            let gap = (pi + n_panels - pj) % n_panels;
            let gap = gap.min(n_panels - gap);
            if gap < 2 {
                continue;
            }
            let threshold = h * (0.2 * (gap - 1) as f64).min(1.0);
            for j in 0..PANEL_ORDER {
                let d = (boundary.node_position(boundary.flat_index(pj, j)) - zi).norm();
                if d < threshold {
                    return Err(Error::UnsupportedGeometry(format!(
                        "nodes of non-adjacent panels {pi} and {pj} are {d:.3e} apart \
                         (arc separation {} panels)",
                        gap
                    )));
                }
            }
        }
    }

    let spec = KernelSpec::laplace();
    let mut entries = vec![0.0; n * n];
    entries.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let zi = boundary.node_position(i);
        for (j, rj) in row.iter_mut().enumerate() {
            if i != j {
                let k = kernel_value(&spec, zi, boundary.node_position(j), boundary.node_normal(j))
                    .expect("distinct nodes");
                *rj = k.re * boundary.node_arc_weight(j);
            }
        }
    });

    // Interior Gauss value of the double layer of unit density, measured
    // at the node centroid; +-1 depending on orientation. The on-surface
    // row sums of D equal half of it.
    let centroid: Complex =
        boundary.nodes().iter().sum::<Complex>() / boundary.node_count() as f64;
    let mut gauss = 0.0;
    for j in 0..n {
        let k = kernel_value(
            &spec,
            centroid,
            boundary.node_position(j),
            boundary.node_normal(j),
        )?;
        gauss += k.re * boundary.node_arc_weight(j);
    }
    if (gauss - gauss.round()).abs() > 1e-8 || gauss.round().abs() != 1.0 {
        return Err(Error::UnsupportedGeometry(format!(
            "interior Gauss identity returned {gauss}; expected +-1 \
             (is the node centroid inside the domain?)"
        )));
    }
    let pv = 0.5 * gauss.round();
    for i in 0..n {
        let off_diag: f64 = (0..n).filter(|&j| j != i).map(|j| entries[i * n + j]).sum();
        entries[i * n + i] = pv - off_diag;
    }
    // (1/2 I + D)
    for i in 0..n {
        entries[i * n + i] += 0.5;
    }
    Ok(DenseOperator { n, entries })
}

/// On-boundary combined-field operator (1/2 I + D_k - ik/2 S_k) whose
/// principal value is evaluated by averaging adaptive expansions on both
/// sides of the boundary: the single layer is continuous across the
/// boundary and the double layer jumps cancel in the average.
pub struct TwoSidedCfieOperator<'a> {
    lp: &'a LayerPotential,
    centers_domain: Vec<ExpansionCenter>,
    centers_opposite: Vec<ExpansionCenter>,
    cfg: AqbxConfig,
    two_sided: bool,
}

impl<'a> TwoSidedCfieOperator<'a> {
    pub fn new(
        lp: &'a LayerPotential,
        domain_side: Side,
        r_over_h: f64,
        cfg: AqbxConfig,
        two_sided: bool,
    ) -> Result<Self> {
        let opposite = match domain_side {
            Side::Interior => Side::Exterior,
            Side::Exterior => Side::Interior,
        };
        let centers_domain = lp.place_centers(r_over_h, domain_side, cfg.near_panel_count)?;
        let centers_opposite = if two_sided {
            lp.place_centers(r_over_h, opposite, cfg.near_panel_count)?
        } else {
            Vec::new()
        };
        Ok(Self {
            lp,
            centers_domain,
            centers_opposite,
            cfg,
            two_sided,
        })
    }

    /// One-sided boundary limit of the layer potential at node i, computed
    /// as dense direct quadrature with the near panels replaced by the
    /// expansion about the given center.
    fn side_limit(
        &self,
        density: &Density,
        dense: &[Complex],
        i: usize,
        center: &ExpansionCenter,
    ) -> Result<Complex> {
        let z = self.lp.boundary.node_position(i);
        let exp = self.lp.compute_expansion(density, center, &self.cfg)?;
        let near_direct = self
            .lp
            .direct_eval_panels(density, &center.near, z, Some(i))?;
        let (u_near, _) = exp.evaluate_with_slack(z, self.cfg.tol, 0.25)?;
        Ok(dense[i] - near_direct + u_near)
    }
}

impl LinearOperator for TwoSidedCfieOperator<'_> {
    fn dim(&self) -> usize {
        self.lp.boundary.node_count()
    }

    fn apply(&self, x: &[Complex]) -> Result<Vec<Complex>> {
        let density = Density::from_node_values(x.to_vec());
        let dense = self.lp.dense_matvec(x);
        (0..self.dim())
            .into_par_iter()
            .map(|i| {
                let u_domain = self.side_limit(&density, &dense, i, &self.centers_domain[i])?;
                if self.two_sided {
                    let u_opp = self.side_limit(&density, &dense, i, &self.centers_opposite[i])?;
                    Ok(0.5 * x[i] + 0.5 * (u_domain + u_opp))
                } else {
                    // The domain-side limit already contains the +1/2 jump.
                    Ok(u_domain)
                }
            })
            .collect()
    }
}

/// Result of a GMRES run.
#[derive(Debug, Clone)]
pub struct GmresResult {
    pub solution: Vec<Complex>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

fn dot(a: &[Complex], b: &[Complex]) -> Complex {
    a.iter().zip(b).map(|(&x, &y)| x.conj() * y).sum()
}

fn norm(a: &[Complex]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Unrestarted GMRES with modified Gram-Schmidt Arnoldi and Givens
/// rotations, stopping at relative residual < tol.
pub fn gmres(
    op: &dyn LinearOperator,
    rhs: &[Complex],
    tol: f64,
    max_iter: usize,
) -> Result<GmresResult> {
    let n = op.dim();
    assert_eq!(rhs.len(), n);
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok(GmresResult {
            solution: vec![Complex::new(0.0, 0.0); n],
            iterations: 0,
            residual: 0.0,
            history: vec![],
        });
    }
    let m = max_iter.min(n);
    let mut basis: Vec<Vec<Complex>> = Vec::with_capacity(m + 1);
    basis.push(rhs.iter().map(|&v| v / b_norm).collect());
    let mut hess: Vec<Vec<Complex>> = Vec::with_capacity(m);
    let mut cs: Vec<Complex> = Vec::with_capacity(m);
    let mut sn: Vec<Complex> = Vec::with_capacity(m);
    let mut g = vec![Complex::new(0.0, 0.0); m + 1];
    g[0] = Complex::new(b_norm, 0.0);
    let mut history = Vec::with_capacity(m);

    let mut converged_at = None;
    for j in 0..m {
        let mut w = op.apply(&basis[j])?;
        let mut col = Vec::with_capacity(j + 2);
        for v in basis.iter().take(j + 1) {
            let hij = dot(v, &w);
            for (wk, &vk) in w.iter_mut().zip(v.iter()) {
                *wk -= hij * vk;
            }
            col.push(hij);
        }
        let h_next = norm(&w);
        col.push(Complex::new(h_next, 0.0));
        // Apply the accumulated rotations to the new column.
        for i in 0..j {
            let t0 = cs[i] * col[i] + sn[i] * col[i + 1];
            let t1 = -sn[i].conj() * col[i] + cs[i].conj() * col[i + 1];
            col[i] = t0;
            col[i + 1] = t1;
        }
        // New rotation eliminating the subdiagonal entry.
        let (a, bb) = (col[j], col[j + 1]);
        let r = (a.norm_sqr() + bb.norm_sqr()).sqrt();
        let (c, s) = if r == 0.0 {
            (Complex::new(1.0, 0.0), Complex::new(0.0, 0.0))
        } else {
            (a.conj() / r, bb.conj() / r)
        };
        col[j] = Complex::new(r, 0.0);
        col[j + 1] = Complex::new(0.0, 0.0);
        let g0 = c * g[j] + s * g[j + 1];
        let g1 = -s.conj() * g[j] + c.conj() * g[j + 1];
        g[j] = g0;
        g[j + 1] = g1;
        cs.push(c);
        sn.push(s);
        hess.push(col);
        let rel = g[j + 1].norm() / b_norm;
        history.push(rel);
        if rel < tol {
            converged_at = Some(j + 1);
            break;
        }
        if h_next == 0.0 {
            // Exact breakdown: the Krylov space is invariant.
            converged_at = Some(j + 1);
            break;
        }
        basis.push(w.into_iter().map(|v| v / h_next).collect());
    }

    let iters = converged_at.unwrap_or(m);
    // Back substitution for the least-squares coefficients.
    let mut y = vec![Complex::new(0.0, 0.0); iters];
    for i in (0..iters).rev() {
        let mut acc = g[i];
        for k in (i + 1)..iters {
            acc -= hess[k][i] * y[k];
        }
        y[i] = acc / hess[i][i];
    }
    let mut solution = vec![Complex::new(0.0, 0.0); n];
    for (k, yk) in y.iter().enumerate() {
        for (sol, &v) in solution.iter_mut().zip(basis[k].iter()) {
            *sol += yk * v;
        }
    }
    let residual = *history.last().unwrap_or(&0.0);
    if converged_at.is_none() {
        return Err(Error::NonConvergence {
            iterations: m,
            residual,
            history,
        });
    }
    Ok(GmresResult {
        solution,
        iterations: iters,
        residual,
        history,
    })
}

/// Options for [`solve`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub gmres_tol: f64,
    /// Tolerance for the expansion evaluations inside the matrix-vector
    /// product; defaults to gmres_tol / 100, without which GMRES stagnates.
    pub aqbx_tol: Option<f64>,
    pub max_iterations: usize,
    pub r_over_h: f64,
    pub near_panel_count: usize,
    pub two_sided: bool,
    /// Radius of the circle on which the post-solve error is measured;
    /// defaults to 2.0 for exterior problems and 0.3 for interior ones.
    pub eval_radius: Option<f64>,
    pub eval_points: usize,
}

impl SolveOptions {
    pub fn with_gmres_tol(gmres_tol: f64) -> Self {
        Self {
            gmres_tol,
            aqbx_tol: None,
            max_iterations: 400,
            r_over_h: 0.25,
            near_panel_count: 5,
            two_sided: true,
            eval_radius: None,
            eval_points: 256,
        }
    }
}

/// Post-solve report.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub gmres_tol: f64,
    pub aqbx_tol: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Max relative error against the point-source truth on the
    /// evaluation circle.
    pub eval_error: f64,
    /// Highest-mode resolution diagnostic of the solved density.
    pub resolution_estimate: f64,
    pub source_seed: Option<u64>,
}

/// Solve the problem's boundary integral equation and report accuracy.
/// The layer potential must wrap the same boundary as the problem.
pub fn solve(
    lp: &LayerPotential,
    problem: &BoundaryValueProblem,
    opts: &SolveOptions,
) -> Result<(Density, SolveReport)> {
    assert!(
        Arc::ptr_eq(&lp.boundary, &problem.boundary),
        "layer potential and problem must share one boundary"
    );
    let aqbx_tol = opts.aqbx_tol.unwrap_or(opts.gmres_tol / 100.0);
    if aqbx_tol > opts.gmres_tol {
        return Err(Error::Config(format!(
            "AQBX tolerance {aqbx_tol:.2e} must not exceed GMRES tolerance {:.2e}",
            opts.gmres_tol
        )));
    }
    let mut cfg = AqbxConfig::with_tol(aqbx_tol);
    cfg.near_panel_count = opts.near_panel_count;

    let result = match problem.kernel {
        KernelSpec::LaplaceDlp => {
            let op = laplace_nystrom_matrix(&problem.boundary)?;
            gmres(&op, &problem.dirichlet, opts.gmres_tol, opts.max_iterations)
        }
        KernelSpec::HelmholtzCfie { .. } => {
            let op =
                TwoSidedCfieOperator::new(lp, problem.side, opts.r_over_h, cfg, opts.two_sided)?;
            gmres(&op, &problem.dirichlet, opts.gmres_tol, opts.max_iterations)
        }
    };
    let result = match result {
        Ok(r) => r,
        Err(Error::NonConvergence {
            iterations,
            residual,
            ..
        }) if aqbx_tol > opts.gmres_tol / 100.0 => {
            return Err(Error::Config(format!(
                "GMRES stagnated at residual {residual:.3e} after {iterations} iterations; \
                 the AQBX tolerance {aqbx_tol:.1e} is likely too loose for GMRES tolerance \
                 {:.1e} (it should be about two orders of magnitude smaller)",
                opts.gmres_tol
            )));
        }
        Err(e) => return Err(e),
    };

    let density = Density::from_node_values(result.solution.clone());

    // Post-solve accuracy on the evaluation circle, far from the boundary.
    let radius = opts.eval_radius.unwrap_or(match problem.side {
        Side::Exterior => 2.0,
        Side::Interior => 0.3,
    });
    let targets: Vec<Complex> = (0..opts.eval_points)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / opts.eval_points as f64;
            radius * Complex::new(th.cos(), th.sin())
        })
        .collect();
    let numeric = lp.direct_eval(&density, &targets)?;
    let mut max_err = 0.0f64;
    let mut max_ref = 0.0f64;
    for (i, &z) in targets.iter().enumerate() {
        let truth = problem.reference_field(z)?;
        let num = match problem.kernel {
            KernelSpec::LaplaceDlp => Complex::new(numeric[i].re, 0.0),
            _ => numeric[i],
        };
        max_err = max_err.max((num - truth).norm());
        max_ref = max_ref.max(truth.norm());
    }

    let report = SolveReport {
        gmres_tol: opts.gmres_tol,
        aqbx_tol,
        iterations: result.iterations,
        residual: result.residual,
        eval_error: max_err / max_ref.max(f64::MIN_POSITIVE),
        resolution_estimate: density.resolution_estimate(),
        source_seed: problem.source_seed,
    };
    Ok((density, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn gmres_identity_and_diagonal() {
        struct Diag(Vec<f64>);
        impl LinearOperator for Diag {
            fn dim(&self) -> usize {
                self.0.len()
            }
            fn apply(&self, x: &[Complex]) -> Result<Vec<Complex>> {
                Ok(x.iter().zip(&self.0).map(|(&v, &d)| v * d).collect())
            }
        }
        let id = Diag(vec![1.0; 6]);
        let rhs: Vec<Complex> = (0..6).map(|i| c(i as f64, -1.0)).collect();
        let res = gmres(&id, &rhs, 1e-12, 50).unwrap();
        assert_eq!(res.iterations, 1);
        for (a, b) in res.solution.iter().zip(&rhs) {
            assert!((a - b).norm() < 1e-12);
        }

        let diag = Diag(vec![1.0, 2.0]);
        let res = gmres(&diag, &[c(1.0, 0.0), c(1.0, 0.0)], 1e-12, 50).unwrap();
        assert!(res.iterations <= 2);
        assert!((res.solution[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((res.solution[1] - c(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn gmres_nonconvergence_carries_history() {
        struct Rot;
        impl LinearOperator for Rot {
            fn dim(&self) -> usize {
                4
            }
            fn apply(&self, x: &[Complex]) -> Result<Vec<Complex>> {
                // Cyclic shift: needs the full 4 iterations.
                Ok(vec![x[3], x[0], x[1], x[2]])
            }
        }
        let rhs = vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let err = gmres(&Rot, &rhs, 1e-13, 2).unwrap_err();
        match err {
            Error::NonConvergence {
                iterations,
                history,
                ..
            } => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn gmres_dense_random_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 24;
        let mut entries = vec![0.0; n * n];
        for (i, e) in entries.iter_mut().enumerate() {
            *e = if i % (n + 1) == 0 { 3.0 } else { 0.0 } + rng.gen::<f64>() - 0.5;
        }
        let op = DenseOperator { n, entries };
        let x_true: Vec<Complex> = (0..n).map(|i| c((i as f64).sin(), 0.3 * i as f64)).collect();
        let rhs = op.apply(&x_true).unwrap();
        let res = gmres(&op, &rhs, 1e-13, 100).unwrap();
        for (a, b) in res.solution.iter().zip(&x_true) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn laplace_row_sums_on_circle() {
        // Row sums of D on the ccw unit circle equal +1/2 (inward normal);
        // the assembled operator (1/2 I + D) maps constants to constants.
        let b = build_boundary(&ParametrizedCurve::circle(1.0), 8).unwrap();
        let op = laplace_nystrom_matrix(&b).unwrap();
        let n = op.n;
        for i in 0..n {
            let row_sum: f64 = op.entries[i * n..(i + 1) * n].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12, "row {i}: {row_sum}");
        }
    }

    #[test]
    fn laplace_diagonal_matches_curvature_limit_on_circle() {
        // On the unit circle the smooth kernel limit is the constant
        // 1/(4 pi), so the diagonal should equal that times the weight.
        let b = build_boundary(&ParametrizedCurve::circle(1.0), 8).unwrap();
        let op = laplace_nystrom_matrix(&b).unwrap();
        let n = op.n;
        for i in 0..n {
            let want = 0.5 + b.node_arc_weight(i) / (4.0 * std::f64::consts::PI);
            assert!((op.entries[i * n + i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn laplace_interior_solve_reaches_point_source_truth() {
        let curve = ParametrizedCurve::starfish(5, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sources = random_circle_sources(&mut rng, 5, 2.0);
        let problem = BoundaryValueProblem::laplace_interior(&curve, 40, sources).unwrap();
        let lp = LayerPotential::new(problem.boundary.clone(), problem.kernel);
        let opts = SolveOptions {
            aqbx_tol: Some(1e-13),
            ..SolveOptions::with_gmres_tol(1e-12)
        };
        let (_, report) = solve(&lp, &problem, &opts).unwrap();
        assert!(
            report.eval_error < 1e-12,
            "interior evaluation error {:.3e}",
            report.eval_error
        );
        assert!(
            report.iterations < 30,
            "second-kind system should converge fast, got {}",
            report.iterations
        );
    }

    #[test]
    fn laplace_rejects_interior_sources() {
        let curve = ParametrizedCurve::starfish(5, 0.3);
        let sources = vec![(c(0.0, 0.0), c(1.0, 0.0))];
        assert!(matches!(
            BoundaryValueProblem::laplace_interior(&curve, 20, sources),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn helmholtz_reference_field_decay() {
        // |H1_0| ~ r^{-1/2}: fit the log-log slope over a decade.
        let curve = ParametrizedCurve::starfish(5, 0.3);
        let problem = BoundaryValueProblem::helmholtz_exterior(
            &curve,
            20,
            10.0,
            vec![(c(0.05, 0.0), c(1.0, 0.0))],
        )
        .unwrap();
        let mut logs = Vec::new();
        for i in 0..20 {
            let r = 10.0 * 10f64.powf(i as f64 / 19.0);
            let u = problem.reference_field(c(r, 0.0)).unwrap();
            logs.push((r.ln(), u.norm().ln()));
        }
        let n = logs.len() as f64;
        let sx: f64 = logs.iter().map(|(x, _)| x).sum();
        let sy: f64 = logs.iter().map(|(_, y)| y).sum();
        let sxx: f64 = logs.iter().map(|(x, _)| x * x).sum();
        let sxy: f64 = logs.iter().map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope + 0.5).abs() < 0.02 * 0.5, "slope {slope}");
    }

    #[test]
    fn reference_normalization_is_unit_max() {
        let curve = ParametrizedCurve::starfish(5, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sources = random_circle_sources(&mut rng, 5, 0.2);
        let problem = BoundaryValueProblem::helmholtz_exterior(&curve, 20, 10.0, sources).unwrap();
        let max_f = problem
            .dirichlet
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!((max_f - 1.0).abs() < 1e-13);
    }

    #[test]
    fn laplace_single_source_odd_symmetry() {
        // Mean of Re[1/(z - s)] over symmetric points on a circle centered
        // at the source cancels the dipole.
        let curve = ParametrizedCurve::starfish(5, 0.3);
        let problem =
            BoundaryValueProblem::laplace_interior(&curve, 20, vec![(c(2.0, 0.0), c(1.0, 0.0))])
                .unwrap();
        let s = problem.sources[0].0;
        let mut acc = 0.0;
        let m = 16;
        for i in 0..m {
            let th = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
            let z = s + 0.5 * c(th.cos(), th.sin());
            acc += problem.reference_field(z).unwrap().re;
        }
        assert!((acc / m as f64).abs() < 1e-13);
    }

    #[test]
    fn two_sided_average_is_mean_of_one_sided_limits() {
        let curve = ParametrizedCurve::starfish(5, 0.3);
        let k = 8.0;
        let problem = BoundaryValueProblem::helmholtz_exterior(
            &curve,
            20,
            k,
            vec![(c(0.1, 0.05), c(1.0, 0.5))],
        )
        .unwrap();
        let lp = LayerPotential::new(problem.boundary.clone(), problem.kernel);
        let cfg = AqbxConfig::with_tol(1e-8);
        let op2 = TwoSidedCfieOperator::new(&lp, Side::Exterior, 0.25, cfg, true).unwrap();
        let sigma: Vec<Complex> = problem.dirichlet.clone();
        let density = Density::from_node_values(sigma.clone());
        let dense = lp.dense_matvec(&sigma);
        let out = op2.apply(&sigma).unwrap();
        for i in (0..sigma.len()).step_by(53) {
            let up = op2
                .side_limit(&density, &dense, i, &op2.centers_domain[i])
                .unwrap();
            let um = op2
                .side_limit(&density, &dense, i, &op2.centers_opposite[i])
                .unwrap();
            let want = 0.5 * sigma[i] + 0.5 * (up + um);
            assert!((out[i] - want).norm() < 1e-14);
        }
        // sigma = 0 maps to 0.
        let zeros = vec![c(0.0, 0.0); sigma.len()];
        let out0 = op2.apply(&zeros).unwrap();
        assert!(out0.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn helmholtz_small_solve_end_to_end() {
        // Desk-scale exterior solve: 20 panels, moderate wavenumber.
        let curve = ParametrizedCurve::starfish(5, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sources = random_circle_sources(&mut rng, 3, 0.2);
        let problem = BoundaryValueProblem::helmholtz_exterior(&curve, 20, 5.0, sources).unwrap();
        let lp = LayerPotential::new(problem.boundary.clone(), problem.kernel);
        let opts = SolveOptions::with_gmres_tol(1e-6);
        let (density, report) = solve(&lp, &problem, &opts).unwrap();
        assert!(report.iterations > 2);
        assert!(
            report.eval_error < 1e-4,
            "eval error {:.3e} should track the GMRES tolerance",
            report.eval_error
        );
        // Consistency: applying the operator to the solution returns the
        // boundary data to within the tolerance budget.
        let cfg = AqbxConfig::with_tol(report.aqbx_tol);
        let op = TwoSidedCfieOperator::new(&lp, Side::Exterior, 0.25, cfg, true).unwrap();
        let applied = op.apply(density.node_values()).unwrap();
        let resid = applied
            .iter()
            .zip(&problem.dirichlet)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(resid < 1e-5, "residual {resid:.3e}");
    }
}

//! The adaptive expansion engine: tolerance-driven computation of local
//! expansion coefficients with automatic upsampling, tolerance-driven
//! evaluation, near/far splitting with direct quadrature for the far field,
//! activation logic for volumetric targets, and work accounting.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, OnceLock, RwLock};

use rayon::prelude::*;

use crate::density::Density;
use crate::estimates::{coeff_error_estimate, potential_error_estimate, PreimageContext};
use crate::geometry::{Boundary, Side, PANEL_ORDER};
use crate::kernels::{kernel_value, CoefficientTerm, EvalFactors, KernelSpec, SourceFactors};
use crate::special::{gauss_legendre_cached, MAX_RULE_SIZE};
use crate::{Complex, Error, Result};

/// How |sigma(t0)| is approximated inside the error estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSurrogate {
    /// Max norm of the density over the panel nodes (robust default).
    PanelMaxNorm,
    /// Polynomial extrapolation of the density to the complex preimage.
    Extrapolate,
}

/// Knobs of the adaptive algorithm. The defaults reproduce the reference
/// configuration: five near panels, conservative two-term termination,
/// order cap 60 and upsampled rule sizes up to 128.
#[derive(Debug, Clone, Copy)]
pub struct AqbxConfig {
    pub tol: f64,
    pub near_panel_count: usize,
    pub order_cap: usize,
    pub rule_size_cap: usize,
    /// Use max(|a_{m-1}|, |a_m|) < tol instead of |a_m| < tol, guarding
    /// against even/odd structure in the coefficients.
    pub two_term_termination: bool,
    pub surrogate: SigmaSurrogate,
    /// Offset (relative to the panel length) of centers placed on demand
    /// for targets not covered by the node-grid centers.
    pub ad_hoc_r_over_h: f64,
}

impl AqbxConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            near_panel_count: 5,
            order_cap: crate::kernels::ORDER_CAP,
            rule_size_cap: MAX_RULE_SIZE,
            two_term_termination: true,
            surrogate: SigmaSurrogate::PanelMaxNorm,
            ad_hoc_r_over_h: 0.25,
        }
    }
}

/// How an expansion's coefficient loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Trailing coefficients dropped below tolerance.
    Converged,
    /// The order cap was reached first; the expansion is usable but its
    /// truncation error is not guaranteed below tolerance.
    OrderCap,
}

/// An off-boundary expansion center with its validity disc and near set.
#[derive(Debug, Clone)]
pub struct ExpansionCenter {
    pub z0: Complex,
    /// Disc radius: minimum distance from z0 to the boundary nodes.
    pub r: f64,
    /// Closest boundary node (panel, node-in-panel).
    pub base: (usize, usize),
    pub side: Side,
    /// Panels treated by the expansion; the rest are evaluated directly.
    pub near: Vec<usize>,
}

/// A computed local expansion of the layer potential about a center.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub center: ExpansionCenter,
    pub kernel: KernelSpec,
    /// Coefficients a_0..a_p.
    pub coeffs: Vec<CoefficientTerm>,
    /// Upsampling rate used for each coefficient.
    pub kappa_history: Vec<usize>,
    pub tol: f64,
    pub terminated_by: Termination,
}

impl Expansion {
    /// Expansion order p (index of the last computed coefficient).
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Work in source evaluations per original source point,
    /// W = sum_{m=1..p} kappa_m.
    pub fn work(&self) -> usize {
        self.kappa_history.iter().skip(1).sum()
    }

    /// Mean upsampling rate over the order sweep, W/p.
    pub fn kappa_avg(&self) -> f64 {
        if self.order() == 0 {
            1.0
        } else {
            self.work() as f64 / self.order() as f64
        }
    }

    /// Evaluate the expansion at z (inside the closed validity disc) to the
    /// given tolerance. Returns the accumulated value and the number of
    /// terms consumed, which never exceeds p + 1.
    pub fn evaluate(&self, z: Complex, tol: f64) -> Result<(Complex, usize)> {
        self.evaluate_with_slack(z, tol, 1e-12)
    }

    /// Evaluation admitting points slightly beyond the rim; used for the
    /// base node of a center whose node-sampled radius came out below the
    /// placement offset (strong local curvature).
    pub(crate) fn evaluate_with_slack(
        &self,
        z: Complex,
        tol: f64,
        slack: f64,
    ) -> Result<(Complex, usize)> {
        let mut ev = EvalFactors::with_disc_slack(
            &self.kernel,
            z,
            self.center.z0,
            self.center.r,
            self.order(),
            slack,
        )?;
        let mut u = Complex::new(0.0, 0.0);
        let mut prev = f64::INFINITY;
        for (m, a) in self.coeffs.iter().enumerate() {
            let delta = a.dot(&ev.factor(m)?);
            u += delta;
            let dn = delta.norm();
            if m >= 1 && prev.max(dn) < tol {
                return Ok((u, m + 1));
            }
            prev = dn;
        }
        Ok((u, self.coeffs.len()))
    }
}

/// Aggregate work statistics over a set of expansions.
#[derive(Debug, Clone, Copy)]
pub struct WorkSummary {
    pub mean_order: f64,
    pub mean_kappa: f64,
    pub mean_work: f64,
    pub max_order: usize,
    pub max_kappa: usize,
}

pub fn summarize_work(expansions: &[Expansion]) -> WorkSummary {
    let n = expansions.len().max(1) as f64;
    let mut s = WorkSummary {
        mean_order: 0.0,
        mean_kappa: 0.0,
        mean_work: 0.0,
        max_order: 0,
        max_kappa: 0,
    };
    for e in expansions {
        s.mean_order += e.order() as f64 / n;
        s.mean_kappa += e.kappa_avg() / n;
        s.mean_work += e.work() as f64 / n;
        s.max_order = s.max_order.max(e.order());
        s.max_kappa = s
            .max_kappa
            .max(e.kappa_history.iter().copied().max().unwrap_or(1));
    }
    s
}

/// Per-center diagnostics stream: center id, order, work, termination and
/// the kappa schedule.
pub fn write_expansion_diagnostics<W: Write>(
    expansions: &[Expansion],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "center,p,work,terminated_by,kappa_history")?;
    for (i, e) in expansions.iter().enumerate() {
        let hist: Vec<String> = e.kappa_history.iter().map(|k| k.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            i,
            e.order(),
            e.work(),
            match e.terminated_by {
                Termination::Converged => "converged",
                Termination::OrderCap => "order_cap",
            },
            hist.join(";")
        )?;
    }
    Ok(())
}

/// Upsampled panel geometry at kappa*16 interpolated nodes.
#[derive(Debug)]
pub struct PanelQuadData {
    pub nodes_z: Vec<Complex>,
    pub normals: Vec<Complex>,
    /// Quadrature weights against arc length.
    pub arc_weights: Vec<f64>,
}

/// Cache of upsampled panel geometry, keyed by (panel, kappa). Reads are
/// concurrent; insertion is single-writer per key.
#[derive(Default)]
pub struct UpsampleCache {
    map: RwLock<HashMap<(usize, usize), Arc<PanelQuadData>>>,
}

impl UpsampleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(
        &self,
        boundary: &Boundary,
        panel: usize,
        kappa: usize,
    ) -> Result<Arc<PanelQuadData>> {
        if let Some(d) = self.map.read().unwrap().get(&(panel, kappa)) {
            return Ok(d.clone());
        }
        if kappa * PANEL_ORDER > MAX_RULE_SIZE {
            return Err(Error::UpsamplingCap {
                requested: kappa * PANEL_ORDER,
                cap: MAX_RULE_SIZE,
            });
        }
        let p = &boundary.panels[panel];
        let data = if kappa == 1 {
            PanelQuadData {
                nodes_z: p.nodes_z.to_vec(),
                normals: p.normals.to_vec(),
                arc_weights: (0..PANEL_ORDER)
                    .map(|j| p.quad_weights[j] * p.nodes_dz[j].norm())
                    .collect(),
            }
        } else {
            let rule = gauss_legendre_cached(kappa * PANEL_ORDER)?;
            let mut nodes_z = Vec::with_capacity(rule.order);
            let mut normals = Vec::with_capacity(rule.order);
            let mut arc_weights = Vec::with_capacity(rule.order);
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let (z, dz) = p.eval_physical(Complex::new(x, 0.0))?;
                nodes_z.push(z);
                normals.push(Complex::new(0.0, 1.0) * dz / dz.norm());
                arc_weights.push(w * dz.norm());
            }
            PanelQuadData {
                nodes_z,
                normals,
                arc_weights,
            }
        };
        let data = Arc::new(data);
        let mut map = self.map.write().unwrap();
        Ok(map.entry((panel, kappa)).or_insert(data).clone())
    }
}

/// Per-target diagnostics of [`LayerPotential::evaluate_field`].
#[derive(Debug, Clone, Copy)]
pub struct FieldDiagnostics {
    /// True when the error estimate forced special quadrature.
    pub activated: bool,
    /// Estimated direct-quadrature error at the target.
    pub estimate: f64,
    /// Index of the node-grid center used, if any.
    pub center: Option<usize>,
    /// True when a dedicated center had to be placed for this target.
    pub ad_hoc: bool,
    /// Expansion order available at the used center.
    pub order: usize,
    /// Terms actually consumed by the evaluation.
    pub terms: usize,
    /// Work spent building the used expansion.
    pub work: usize,
}

impl FieldDiagnostics {
    fn direct(estimate: f64) -> Self {
        Self {
            activated: false,
            estimate,
            center: None,
            ad_hoc: false,
            order: 0,
            terms: 0,
            work: 0,
        }
    }
}

/// A layer potential over a fixed boundary and kernel, with the shared
/// caches (upsampled geometry, dense far-field matrix) that make repeated
/// expansion computations cheap.
pub struct LayerPotential {
    pub boundary: Arc<Boundary>,
    pub kernel: KernelSpec,
    cache: UpsampleCache,
    dense_matrix: OnceLock<Vec<Complex>>,
}

impl LayerPotential {
    pub fn new(boundary: Arc<Boundary>, kernel: KernelSpec) -> Self {
        Self {
            boundary,
            kernel,
            cache: UpsampleCache::new(),
            dense_matrix: OnceLock::new(),
        }
    }

    pub fn upsample_cache(&self) -> &UpsampleCache {
        &self.cache
    }

    /// Place one expansion center per boundary node at distance
    /// r_over_h * h along the normal pointing to `side`. The disc radius is
    /// recomputed as the true minimum node distance.
    pub fn place_centers(
        &self,
        r_over_h: f64,
        side: Side,
        near_panel_count: usize,
    ) -> Result<Vec<ExpansionCenter>> {
        if !(r_over_h > 0.0 && r_over_h <= 1.0) {
            return Err(Error::Domain(format!(
                "r/h must lie in (0, 1], got {r_over_h}"
            )));
        }
        let b = &self.boundary;
        let h = b.panel_arclen();
        let offset = r_over_h * h;
        (0..b.node_count())
            .into_par_iter()
            .map(|i| {
                let z0 = b.node_position(i) + offset * b.normal_into(i, side);
                let (bp, bn, r) = b.nearest_node(z0);
                if r < 0.5 * offset {
                    return Err(Error::UnsupportedGeometry(format!(
                        "center at node {i} collides with another boundary part (r = {r:.3e})"
                    )));
                }
                Ok(ExpansionCenter {
                    z0,
                    r,
                    base: (bp, bn),
                    side,
                    near: b.nearest_panels(z0, near_panel_count),
                })
            })
            .collect()
    }

    /// Adaptive computation of the expansion coefficients at one center:
    /// for each order, raise the upsampling rate until the per-panel
    /// coefficient error estimate clears the tolerance (and until the
    /// estimate itself is trustworthy, m <= kappa n / 2), then integrate
    /// the coefficient over the near panels; stop once the trailing
    /// coefficients drop below tolerance.
    pub fn compute_expansion(
        &self,
        density: &Density,
        center: &ExpansionCenter,
        cfg: &AqbxConfig,
    ) -> Result<Expansion> {
        struct PanelCtx {
            panel: usize,
            t0: Complex,
            dgamma: Complex,
            sigma: f64,
            r_std: f64,
        }

        let b = &self.boundary;
        let mut contexts: Vec<PanelCtx> = Vec::with_capacity(center.near.len());
        for &pi in &center.near {
            let p = &b.panels[pi];
            match p.preimage(center.z0, pi) {
                Ok(t0) => {
                    let (_, dgamma) = p.eval_interpolant(t0)?;
                    let sigma = match cfg.surrogate {
                        SigmaSurrogate::PanelMaxNorm => density.panel_max_norm(pi),
                        SigmaSurrogate::Extrapolate => density.extrapolate_at(pi, t0)?.norm(),
                    };
                    contexts.push(PanelCtx {
                        panel: pi,
                        t0,
                        dgamma,
                        sigma,
                        r_std: center.r * p.std_scale().norm(),
                    });
                }
                // A panel whose preimage search fails is far enough that
                // its estimated coefficient error is treated as zero.
                Err(Error::PreimageNotFound { .. }) => {}
                Err(e) => return Err(e),
            }
        }

        struct PanelSources {
            factors: Vec<SourceFactors>,
            weights: Vec<Complex>,
        }

        let build_sources = |kappa: usize| -> Result<Vec<PanelSources>> {
            center
                .near
                .iter()
                .map(|&pi| {
                    let geo = self.cache.get(b, pi, kappa)?;
                    let sig = density.upsampled(pi, kappa)?;
                    let mut factors = Vec::with_capacity(geo.nodes_z.len());
                    let mut weights = Vec::with_capacity(geo.nodes_z.len());
                    for j in 0..geo.nodes_z.len() {
                        factors.push(SourceFactors::new(
                            &self.kernel,
                            geo.nodes_z[j],
                            geo.normals[j],
                            center.z0,
                            center.r,
                        )?);
                        weights.push(sig[j] * geo.arc_weights[j]);
                    }
                    Ok(PanelSources { factors, weights })
                })
                .collect()
        };

        let mut kappa = 1usize;
        let mut sources = build_sources(kappa)?;
        let mut coeffs: Vec<CoefficientTerm> = Vec::new();
        let mut kappa_history: Vec<usize> = Vec::new();
        let mut terminated_by = Termination::OrderCap;

        for m in 0..=cfg.order_cap {
            loop {
                let n_eff = kappa * PANEL_ORDER;
                let mut need = 2 * m > n_eff; // estimate reliability rule
                if !need {
                    for ctx in &contexts {
                        let pc = PreimageContext {
                            t0: ctx.t0,
                            dgamma_t0: ctx.dgamma,
                            sigma_t0: ctx.sigma,
                            n: n_eff,
                            panel: ctx.panel,
                        };
                        if coeff_error_estimate(&pc, m, ctx.r_std)? > cfg.tol {
                            need = true;
                            break;
                        }
                    }
                }
                if !need {
                    break;
                }
                if (kappa + 1) * PANEL_ORDER > cfg.rule_size_cap {
                    return Err(Error::ToleranceUnreachable {
                        tol: cfg.tol,
                        order: m,
                        kappa,
                        last_coeff: coeffs.last().map(|a| a.norm()).unwrap_or(f64::NAN),
                    });
                }
                kappa += 1;
                sources = build_sources(kappa)?;
            }

            let mut a = CoefficientTerm::zero(m, self.kernel.term_len(m));
            for ps in &mut sources {
                for (f, &w) in ps.factors.iter_mut().zip(&ps.weights) {
                    a.axpy(w, &f.factor(m)?);
                }
            }
            coeffs.push(a);
            kappa_history.push(kappa);

            let small = coeffs[m].norm() < cfg.tol;
            let done = if cfg.two_term_termination {
                m >= 1 && small && coeffs[m - 1].norm() < cfg.tol
            } else {
                small
            };
            if done {
                terminated_by = Termination::Converged;
                break;
            }
        }

        Ok(Expansion {
            center: center.clone(),
            kernel: self.kernel,
            coeffs,
            kappa_history,
            tol: cfg.tol,
            terminated_by,
        })
    }

    /// Plain composite quadrature of the layer potential at one target over
    /// a subset of panels, optionally skipping one singular node.
    pub fn direct_eval_panels(
        &self,
        density: &Density,
        panels: &[usize],
        z: Complex,
        skip_node: Option<usize>,
    ) -> Result<Complex> {
        let b = &self.boundary;
        let sigma = density.node_values();
        let mut acc = Complex::new(0.0, 0.0);
        for &pi in panels {
            for j in 0..PANEL_ORDER {
                let idx = b.flat_index(pi, j);
                if skip_node == Some(idx) {
                    continue;
                }
                let g = kernel_value(&self.kernel, z, b.node_position(idx), b.node_normal(idx))?;
                acc += g * sigma[idx] * b.node_arc_weight(idx);
            }
        }
        Ok(acc)
    }

    /// Direct quadrature over the whole boundary for a batch of targets.
    /// Accuracy degrades near the boundary by design; the error there is
    /// what [`LayerPotential::evaluate_field`] estimates and corrects.
    pub fn direct_eval(&self, density: &Density, targets: &[Complex]) -> Result<Vec<Complex>> {
        let all: Vec<usize> = (0..self.boundary.panels.len()).collect();
        targets
            .par_iter()
            .map(|&z| self.direct_eval_panels(density, &all, z, None))
            .collect()
    }

    /// Dense direct-quadrature matrix over the boundary nodes with zero
    /// diagonal, built once and cached. Row i holds the contribution of
    /// every source node to target node i.
    pub fn dense_matrix(&self) -> &[Complex] {
        self.dense_matrix.get_or_init(|| {
            let b = &self.boundary;
            let n = b.node_count();
            let mut mat = vec![Complex::new(0.0, 0.0); n * n];
            mat.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let zi = b.node_position(i);
                for (j, rj) in row.iter_mut().enumerate() {
                    if i != j {
                        *rj = kernel_value(&self.kernel, zi, b.node_position(j), b.node_normal(j))
                            .expect("distinct nodes")
                            * b.node_arc_weight(j);
                    }
                }
            });
            mat
        })
    }

    /// Apply the cached dense matrix to a density vector.
    pub fn dense_matvec(&self, sigma: &[Complex]) -> Vec<Complex> {
        let n = self.boundary.node_count();
        let mat = self.dense_matrix();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let row = &mat[i * n..(i + 1) * n];
                row.iter().zip(sigma).map(|(&m, &s)| m * s).sum()
            })
            .collect()
    }

    /// Direct-quadrature error estimate at a target from the nearest
    /// panel's preimage; zero when no preimage exists (far target).
    pub fn activation_estimate(
        &self,
        density: &Density,
        z: Complex,
        surrogate: SigmaSurrogate,
    ) -> Result<f64> {
        let (panel, _, _) = self.boundary.nearest_node(z);
        let p = &self.boundary.panels[panel];
        match p.preimage(z, panel) {
            Ok(t0) => {
                if t0.im == 0.0 && t0.re.abs() <= 1.0 {
                    // Target on the panel itself; direct quadrature is
                    // singular there.
                    return Ok(f64::INFINITY);
                }
                let (_, dgamma) = p.eval_interpolant(t0)?;
                let sigma = match surrogate {
                    SigmaSurrogate::PanelMaxNorm => density.panel_max_norm(panel),
                    SigmaSurrogate::Extrapolate => density.extrapolate_at(panel, t0)?.norm(),
                };
                let ctx = PreimageContext {
                    t0,
                    dgamma_t0: dgamma,
                    sigma_t0: sigma,
                    n: PANEL_ORDER,
                    panel,
                };
                potential_error_estimate(&self.kernel, &ctx)
            }
            Err(Error::PreimageNotFound { .. }) => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    /// Evaluate the potential on the boundary nodes through the per-node
    /// expansions: far panels by direct quadrature (via the cached dense
    /// matrix), near panels through the expansion evaluated at the node.
    ///
    /// `centers` must hold one center per boundary node, in node order.
    pub fn evaluate_on_surface(
        &self,
        density: &Density,
        centers: &[ExpansionCenter],
        cfg: &AqbxConfig,
    ) -> Result<(Vec<Complex>, Vec<Expansion>)> {
        let b = &self.boundary;
        let n = b.node_count();
        assert_eq!(centers.len(), n, "need one center per node");
        let dense = self.dense_matvec(density.node_values());
        let pairs: Result<Vec<(Complex, Expansion)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let exp = self.compute_expansion(density, &centers[i], cfg)?;
                let z = b.node_position(i);
                let near_direct = self.direct_eval_panels(density, &centers[i].near, z, Some(i))?;
                let (u_near, _) = exp.evaluate_with_slack(z, cfg.tol, 0.25)?;
                Ok((dense[i] - near_direct + u_near, exp))
            })
            .collect();
        let pairs = pairs?;
        let mut values = Vec::with_capacity(n);
        let mut expansions = Vec::with_capacity(n);
        for (v, e) in pairs {
            values.push(v);
            expansions.push(e);
        }
        Ok((values, expansions))
    }

    /// Evaluate the potential at arbitrary targets on one side of the
    /// boundary. Each target is first triaged by the potential error
    /// estimate: if direct quadrature already meets the tolerance it is
    /// used over the whole boundary; otherwise the target is assigned the
    /// nearest node-grid center whose disc contains it (placing a
    /// dedicated center along the nearest node's normal when none does)
    /// and evaluated as far-direct plus near-expansion.
    pub fn evaluate_field(
        &self,
        density: &Density,
        targets: &[Complex],
        side: Side,
        centers: &[ExpansionCenter],
        cfg: &AqbxConfig,
    ) -> Result<(Vec<Complex>, Vec<FieldDiagnostics>)> {
        let b = &self.boundary;
        let all: Vec<usize> = (0..b.panels.len()).collect();
        let expansions: Vec<OnceLock<Result<Expansion>>> =
            (0..centers.len()).map(|_| OnceLock::new()).collect();
        let h = b.panel_arclen();

        let pairs: Result<Vec<(Complex, FieldDiagnostics)>> = targets
            .par_iter()
            .map(|&z| {
                let est = self.activation_estimate(density, z, cfg.surrogate)?;
                if est <= cfg.tol {
                    let u = self.direct_eval_panels(density, &all, z, None)?;
                    return Ok((u, FieldDiagnostics::direct(est)));
                }
                // Nearest node-grid center containing the target.
                let mut chosen: Option<usize> = None;
                let mut best = f64::INFINITY;
                for pi in b.nearest_panels(z, 3) {
                    for j in 0..PANEL_ORDER {
                        let ci = b.flat_index(pi, j);
                        if ci >= centers.len() {
                            continue;
                        }
                        let c = &centers[ci];
                        let d = (z - c.z0).norm();
                        if d <= c.r * (1.0 + 1e-12) && d < best {
                            best = d;
                            chosen = Some(ci);
                        }
                    }
                }
                if let Some(ci) = chosen {
                    let exp = expansions[ci]
                        .get_or_init(|| self.compute_expansion(density, &centers[ci], cfg))
                        .as_ref()
                        .map_err(Clone::clone)?;
                    let far = self.far_direct(density, &exp.center.near, z)?;
                    let (u_near, terms) = exp.evaluate(z, cfg.tol)?;
                    return Ok((
                        far + u_near,
                        FieldDiagnostics {
                            activated: true,
                            estimate: est,
                            center: Some(ci),
                            ad_hoc: false,
                            order: exp.order(),
                            terms,
                            work: exp.work(),
                        },
                    ));
                }
                // No disc contains the target: place a dedicated center on
                // the nearest node's normal, far enough out to cover it.
                let (np, nn, _) = b.nearest_node(z);
                let base_idx = b.flat_index(np, nn);
                let node_z = b.node_position(base_idx);
                let d = (z - node_z).norm();
                let rho = d.max(cfg.ad_hoc_r_over_h * h);
                let z0 = node_z + rho * b.normal_into(base_idx, side);
                let (bp, bn, r) = b.nearest_node(z0);
                let center = ExpansionCenter {
                    z0,
                    r,
                    base: (bp, bn),
                    side,
                    near: b.nearest_panels(z0, cfg.near_panel_count),
                };
                if (z - z0).norm() > r * (1.0 + 1e-12) {
                    // Could not cover the target; fall back to direct.
                    let u = self.direct_eval_panels(density, &all, z, None)?;
                    return Ok((u, FieldDiagnostics::direct(est)));
                }
                let exp = self.compute_expansion(density, &center, cfg)?;
                let far = self.far_direct(density, &center.near, z)?;
                let (u_near, terms) = exp.evaluate(z, cfg.tol)?;
                Ok((
                    far + u_near,
                    FieldDiagnostics {
                        activated: true,
                        estimate: est,
                        center: None,
                        ad_hoc: true,
                        order: exp.order(),
                        terms,
                        work: exp.work(),
                    },
                ))
            })
            .collect();

        let pairs = pairs?;
        let mut values = Vec::with_capacity(targets.len());
        let mut diags = Vec::with_capacity(targets.len());
        for (v, d) in pairs {
            values.push(v);
            diags.push(d);
        }
        Ok((values, diags))
    }

    /// Direct quadrature over the complement of `near`.
    pub fn far_direct(&self, density: &Density, near: &[usize], z: Complex) -> Result<Complex> {
        let far: Vec<usize> = (0..self.boundary.panels.len())
            .filter(|pi| !near.contains(pi))
            .collect();
        self.direct_eval_panels(density, &far, z, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_boundary, ParametrizedCurve};

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn circle_potential() -> LayerPotential {
        let b = build_boundary(&ParametrizedCurve::circle(1.0), 12).unwrap();
        LayerPotential::new(Arc::new(b), KernelSpec::laplace())
    }

    #[test]
    fn centers_on_circle_are_symmetric() {
        let lp = circle_potential();
        let h = lp.boundary.panel_arclen();
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        assert_eq!(centers.len(), lp.boundary.node_count());
        for (i, ctr) in centers.iter().enumerate() {
            assert!((ctr.z0.norm() - (1.0 - 0.25 * h)).abs() < 1e-6);
            assert!((ctr.r - 0.25 * h).abs() < 1e-6 * h);
            assert_eq!(ctr.base, (i / PANEL_ORDER, i % PANEL_ORDER));
            assert_eq!(ctr.near.len(), 5);
            assert!(ctr.near.contains(&(i / PANEL_ORDER)));
        }
        // Exterior side flips the offset direction.
        let ext = lp.place_centers(0.25, Side::Exterior, 5).unwrap();
        assert!((ext[0].z0.norm() - (1.0 + 0.25 * h)).abs() < 1e-6);
    }

    #[test]
    fn gauss_identity_through_expansion() {
        // Laplace, sigma = 1, interior center: Re(a_0 + far part) = 1.
        let lp = circle_potential();
        let density = Density::constant(&lp.boundary, c(1.0, 0.0));
        let cfg = AqbxConfig::with_tol(1e-10);
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        let exp = lp.compute_expansion(&density, &centers[7], &cfg).unwrap();
        assert_eq!(exp.terminated_by, Termination::Converged);
        let far = lp
            .far_direct(&density, &centers[7].near, centers[7].z0)
            .unwrap();
        let a0 = exp.coeffs[0].components()[0];
        assert!(((a0 + far).re - 1.0).abs() < 1e-10, "a0 + far = {}", a0 + far);
    }

    #[test]
    fn a0_matches_fine_direct_quadrature_at_center() {
        // a_0 equals the layer potential at z0 computed with a kappa = 8
        // upsampled direct quadrature over the near panels.
        let b = Arc::new(build_boundary(&ParametrizedCurve::starfish(5, 0.3), 60).unwrap());
        for kernel in [KernelSpec::laplace(), KernelSpec::helmholtz(26.6).unwrap()] {
            let lp = LayerPotential::new(b.clone(), kernel);
            let density =
                Density::from_fn(&lp.boundary, |z| c((2.0 * z.re).sin() + 1.2, 0.4 * z.im));
            let cfg = AqbxConfig::with_tol(1e-10);
            let centers = lp.place_centers(0.25, Side::Exterior, 5).unwrap();
            let ctr = &centers[100];
            let exp = lp.compute_expansion(&density, ctr, &cfg).unwrap();
            let a0 = exp.coeffs[0].components()[0];
            let mut fine = c(0.0, 0.0);
            for &pi in &ctr.near {
                let geo = lp.cache.get(&lp.boundary, pi, 8).unwrap();
                let sig = density.upsampled(pi, 8).unwrap();
                for j in 0..geo.nodes_z.len() {
                    fine += kernel_value(&kernel, ctr.z0, geo.nodes_z[j], geo.normals[j]).unwrap()
                        * sig[j]
                        * geo.arc_weights[j];
                }
            }
            assert!(
                (a0 - fine).norm() < 1e-10 * fine.norm().max(1.0),
                "kernel {kernel:?}: a0 = {a0}, fine = {fine}"
            );
        }
    }

    #[test]
    fn evaluation_terminates_within_order() {
        let lp = circle_potential();
        let density = Density::from_fn(&lp.boundary, |z| c(z.re * z.im + 1.0, 0.2 * z.re));
        let cfg = AqbxConfig::with_tol(1e-8);
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        for ctr in centers.iter().step_by(37) {
            let exp = lp.compute_expansion(&density, ctr, &cfg).unwrap();
            let z = lp
                .boundary
                .node_position(lp.boundary.flat_index(ctr.base.0, ctr.base.1));
            let (_, terms) = exp.evaluate(z, cfg.tol).unwrap();
            assert!(terms <= exp.order() + 1);
            // At the center only the first term contributes.
            let (u0, t0) = exp.evaluate(ctr.z0, cfg.tol).unwrap();
            assert!(t0 <= exp.order() + 1);
            assert!((u0 - exp.coeffs[0].components()[0]).norm() < cfg.tol);
        }
    }

    #[test]
    fn zero_density_terminates_immediately() {
        let lp = circle_potential();
        let density = Density::constant(&lp.boundary, c(0.0, 0.0));
        let mut cfg = AqbxConfig::with_tol(1e-10);
        cfg.two_term_termination = false;
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        let exp = lp.compute_expansion(&density, &centers[0], &cfg).unwrap();
        assert_eq!(exp.order(), 0);
        assert_eq!(exp.work(), 0);
        assert_eq!(exp.terminated_by, Termination::Converged);
    }

    #[test]
    fn work_counter_consistency() {
        let lp = circle_potential();
        let density = Density::from_fn(&lp.boundary, |z| c((3.0 * z.re).cos(), z.im));
        let cfg = AqbxConfig::with_tol(1e-12);
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        let exp = lp.compute_expansion(&density, &centers[11], &cfg).unwrap();
        let p = exp.order();
        assert!(exp.work() >= p, "kappa_m >= 1 for every order");
        assert_eq!(exp.kappa_history.len(), p + 1);
        let manual: usize = exp.kappa_history[1..].iter().sum();
        assert_eq!(exp.work(), manual);
        for w in exp.kappa_history.windows(2) {
            assert!(w[1] >= w[0], "kappa never decreases");
        }
    }

    #[test]
    fn direct_eval_gauss_identity_far_target() {
        let lp = circle_potential();
        let density = Density::constant(&lp.boundary, c(1.0, 0.0));
        let u = lp.direct_eval(&density, &[c(0.0, 0.0)]).unwrap();
        assert!((u[0].re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn direct_eval_rejects_node_target() {
        let lp = circle_potential();
        let density = Density::constant(&lp.boundary, c(1.0, 0.0));
        let z = lp.boundary.node_position(5);
        assert!(matches!(
            lp.direct_eval(&density, &[z]),
            Err(Error::SingularEvaluation)
        ));
    }

    #[test]
    fn correction_form_identity() {
        // direct_all - direct_near == direct_far to roundoff.
        let lp = circle_potential();
        let density = Density::from_fn(&lp.boundary, |z| c(z.re + 0.3, -z.im));
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        let ctr = &centers[40];
        let z = ctr.z0 + c(0.3 * ctr.r, 0.0);
        let all: Vec<usize> = (0..lp.boundary.panels.len()).collect();
        let direct_all = lp.direct_eval_panels(&density, &all, z, None).unwrap();
        let direct_near = lp.direct_eval_panels(&density, &ctr.near, z, None).unwrap();
        let far = lp.far_direct(&density, &ctr.near, z).unwrap();
        assert!(((direct_all - direct_near) - far).norm() < 1e-13);
    }

    #[test]
    fn far_grid_matches_direct_bitwise() {
        let lp = circle_potential();
        let density = Density::from_fn(&lp.boundary, |z| c(z.re, z.im * 0.5));
        let cfg = AqbxConfig::with_tol(1e-8);
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        let targets: Vec<Complex> = (0..25)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / 25.0;
                0.3 * c(th.cos(), th.sin())
            })
            .collect();
        let (field, diags) = lp
            .evaluate_field(&density, &targets, Side::Interior, &centers, &cfg)
            .unwrap();
        let direct = lp.direct_eval(&density, &targets).unwrap();
        for i in 0..targets.len() {
            assert!(!diags[i].activated);
            assert_eq!(field[i], direct[i]);
        }
    }

    #[test]
    fn near_targets_activate_and_match_upsampled_reference() {
        let b = build_boundary(&ParametrizedCurve::circle(1.0), 16).unwrap();
        let lp = LayerPotential::new(Arc::new(b), KernelSpec::laplace());
        let density = Density::from_fn(&lp.boundary, |z| c(z.re * z.re - z.im, 0.0));
        let cfg = AqbxConfig::with_tol(1e-9);
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        let h = lp.boundary.panel_arclen();
        let targets: Vec<Complex> = (0..12)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.21) / 12.0;
                (1.0 - 0.1 * h) * c(th.cos(), th.sin())
            })
            .collect();
        let (field, diags) = lp
            .evaluate_field(&density, &targets, Side::Interior, &centers, &cfg)
            .unwrap();
        for (i, &z) in targets.iter().enumerate() {
            assert!(diags[i].activated, "target {i} should activate");
            // Reference by kappa = 8 direct quadrature over all panels.
            let mut fine = c(0.0, 0.0);
            for pi in 0..lp.boundary.panels.len() {
                let geo = lp.cache.get(&lp.boundary, pi, 8).unwrap();
                let sig = density.upsampled(pi, 8).unwrap();
                for j in 0..geo.nodes_z.len() {
                    fine += kernel_value(&lp.kernel, z, geo.nodes_z[j], geo.normals[j]).unwrap()
                        * sig[j]
                        * geo.arc_weights[j];
                }
            }
            assert!(
                (field[i] - fine).norm() < 20.0 * cfg.tol,
                "target {i}: {} vs {}",
                field[i],
                fine
            );
        }
    }

    #[test]
    fn diagnostics_csv_shape() {
        let lp = circle_potential();
        let density = Density::from_fn(&lp.boundary, |z| c(z.re, 0.0));
        let cfg = AqbxConfig::with_tol(1e-6);
        let centers = lp.place_centers(0.25, Side::Interior, 5).unwrap();
        let exps: Vec<Expansion> = centers
            .iter()
            .take(4)
            .map(|ctr| lp.compute_expansion(&density, ctr, &cfg).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_expansion_diagnostics(&exps, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("center,p,work,terminated_by,kappa_history"));
    }
}

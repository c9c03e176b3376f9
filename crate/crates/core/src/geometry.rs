//! Boundary curves, equal-arc-length panelization, the Legendre
//! representation of each panel's geometry map, and complex preimages
//! t0 = gamma^{-1}(z0) by Newton iteration on the panel interpolant.

use std::io::Write;
use std::sync::Arc;

use crate::special::{
    gauss_legendre_cached, legendre_projection_matrix_cached, legendre_sequence_with_deriv,
    QuadratureRule,
};
use crate::{Complex, Error, Result};

/// Nodes per panel. The scheme is built around 16-point panels.
pub const PANEL_ORDER: usize = 16;

/// Radius of the parameter-plane region where the panel interpolant is
/// trusted as an analytic continuation of the geometry map.
pub const TRUST_RADIUS: f64 = 3.0;

type CurveFn = Arc<dyn Fn(f64) -> Complex + Send + Sync>;

/// A closed curve given by an analytic parametrization over t in [0, 1].
#[derive(Clone)]
pub struct ParametrizedCurve {
    position: CurveFn,
    derivative: CurveFn,
    closed: bool,
}

/// Parameters for the built-in curve families.
#[derive(Debug, Clone)]
pub struct CurveParams {
    /// Number of starfish arms.
    pub arms: usize,
    /// Starfish radial modulation amplitude.
    pub amplitude: f64,
    /// Circle radius.
    pub radius: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self {
            arms: 5,
            amplitude: 0.3,
            radius: 1.0,
        }
    }
}

impl ParametrizedCurve {
    pub fn new<P, D>(position: P, derivative: D, closed: bool) -> Self
    where
        P: Fn(f64) -> Complex + Send + Sync + 'static,
        D: Fn(f64) -> Complex + Send + Sync + 'static,
    {
        Self {
            position: Arc::new(position),
            derivative: Arc::new(derivative),
            closed,
        }
    }

    /// Starfish curve (1 + a cos(2 pi m t)) e^{-2 pi i t}, traversed
    /// clockwise so that i gamma'/|gamma'| points away from the curve.
    pub fn starfish(arms: usize, amplitude: f64) -> Self {
        let m = arms as f64;
        let tau = 2.0 * std::f64::consts::PI;
        Self::new(
            move |t| {
                let rho = 1.0 + amplitude * (tau * m * t).cos();
                rho * (Complex::new(0.0, -tau * t)).exp()
            },
            move |t| {
                let rho = 1.0 + amplitude * (tau * m * t).cos();
                let drho = -amplitude * tau * m * (tau * m * t).sin();
                let e = (Complex::new(0.0, -tau * t)).exp();
                (Complex::new(drho, 0.0) - Complex::new(0.0, tau) * rho) * e
            },
            true,
        )
    }

    /// Circle of given radius, traversed counterclockwise.
    pub fn circle(radius: f64) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        Self::new(
            move |t| radius * (Complex::new(0.0, tau * t)).exp(),
            move |t| Complex::new(0.0, tau) * radius * (Complex::new(0.0, tau * t)).exp(),
            true,
        )
    }

    /// Construct one of the built-in curves by name.
    pub fn from_name(name: &str, params: &CurveParams) -> Result<Self> {
        match name {
            "starfish" => Ok(Self::starfish(params.arms, params.amplitude)),
            "circle" => Ok(Self::circle(params.radius)),
            other => Err(Error::Config(format!("unknown curve '{other}'"))),
        }
    }

    /// Same curve traversed in the opposite direction, flipping the normals.
    pub fn reversed(&self) -> Self {
        let pos = self.position.clone();
        let der = self.derivative.clone();
        Self {
            position: Arc::new(move |t| pos(1.0 - t)),
            derivative: Arc::new(move |t| -der(1.0 - t)),
            closed: self.closed,
        }
    }

    pub fn position(&self, t: f64) -> Complex {
        (self.position)(t)
    }

    pub fn derivative(&self, t: f64) -> Complex {
        (self.derivative)(t)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Signed enclosed area from the shoelace integral; positive for
    /// counterclockwise traversal.
    pub fn signed_area(&self) -> f64 {
        let rule = gauss_legendre_cached(16).expect("16-point rule");
        let m = 256;
        let mut area = 0.0;
        for i in 0..m {
            let a = i as f64 / m as f64;
            let half = 0.5 / m as f64;
            let mid = a + half;
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let t = mid + half * x;
                area += 0.5 * half * w * (self.position(t).conj() * self.derivative(t)).im;
            }
        }
        area
    }

    /// Reorient so the traversal is counterclockwise (or clockwise).
    pub fn oriented_ccw(&self, ccw: bool) -> Self {
        if (self.signed_area() > 0.0) == ccw {
            self.clone()
        } else {
            self.reversed()
        }
    }
}

/// One 16-node Gauss-Legendre segment of the boundary, carrying both the
/// physical node data and the Legendre coefficients of the standardized
/// geometry map (panel endpoints mapped to -1 and +1).
#[derive(Debug, Clone)]
pub struct Panel {
    /// Global parameter interval [ta, tb].
    pub param_interval: [f64; 2],
    /// Global parameters of the nodes.
    pub nodes_t: [f64; PANEL_ORDER],
    /// Physical node positions.
    pub nodes_z: [Complex; PANEL_ORDER],
    /// d gamma / d s at the nodes, s in [-1,1] the panel parameter.
    pub nodes_dz: [Complex; PANEL_ORDER],
    /// Unit normals i gamma'/|gamma'|.
    pub normals: [Complex; PANEL_ORDER],
    /// Gauss-Legendre weights of the 16-point rule.
    pub quad_weights: [f64; PANEL_ORDER],
    /// Panel arc length.
    pub arclen: f64,
    /// Legendre coefficients of the standardized geometry map.
    pub geom_coeffs: [Complex; PANEL_ORDER],
    /// Physical endpoints.
    pub endpoints: [Complex; 2],
}

impl Panel {
    /// Complex scale of the standardizing affine map zeta = scale*(z - mid).
    pub fn std_scale(&self) -> Complex {
        2.0 / (self.endpoints[1] - self.endpoints[0])
    }

    /// Panel arc length measured in the standardized frame.
    pub fn std_arclen(&self) -> f64 {
        self.arclen * self.std_scale().norm()
    }

    /// Map a physical point into the standardized frame.
    pub fn standardize(&self, z: Complex) -> Result<Complex> {
        let d = self.endpoints[1] - self.endpoints[0];
        if d.norm() == 0.0 {
            return Err(Error::Domain("degenerate panel: equal endpoints".into()));
        }
        Ok((2.0 * z - (self.endpoints[0] + self.endpoints[1])) / d)
    }

    /// Inverse of [`Panel::standardize`].
    pub fn unstandardize(&self, zeta: Complex) -> Complex {
        (zeta * (self.endpoints[1] - self.endpoints[0]) + self.endpoints[0] + self.endpoints[1])
            / 2.0
    }

    /// Evaluate the standardized geometry interpolant and its derivative at
    /// (possibly complex) parameter t.
    pub fn eval_interpolant(&self, t: Complex) -> Result<(Complex, Complex)> {
        if t.norm() > TRUST_RADIUS {
            return Err(Error::OutsideTrustRegion(t.norm()));
        }
        Ok(self.eval_interpolant_unchecked(t))
    }

    fn eval_interpolant_unchecked(&self, t: Complex) -> (Complex, Complex) {
        let (p, dp) = legendre_sequence_with_deriv(t, PANEL_ORDER - 1);
        let mut g = Complex::new(0.0, 0.0);
        let mut dg = Complex::new(0.0, 0.0);
        for l in 0..PANEL_ORDER {
            g += self.geom_coeffs[l] * p[l];
            dg += self.geom_coeffs[l] * dp[l];
        }
        (g, dg)
    }

    /// Physical position and d/ds derivative of the interpolated geometry.
    pub fn eval_physical(&self, t: Complex) -> Result<(Complex, Complex)> {
        let (g, dg) = self.eval_interpolant(t)?;
        let half = (self.endpoints[1] - self.endpoints[0]) / 2.0;
        Ok((self.unstandardize(g), dg * half))
    }

    /// Solve P_n[gamma](t0) = z0 by Newton iteration from the given
    /// parameter-plane starting guess.
    pub fn preimage_from(
        &self,
        z0: Complex,
        start: Complex,
        panel_index: usize,
    ) -> Result<Complex> {
        let zeta0 = self.standardize(z0)?;
        let tol = 1e-13 * self.std_arclen();
        let mut t = start;
        for _ in 0..30 {
            if t.norm() > TRUST_RADIUS + 0.5 {
                return Err(Error::PreimageNotFound { panel: panel_index });
            }
            let (g, dg) = self.eval_interpolant_unchecked(t);
            let f = g - zeta0;
            if f.norm() < tol {
                if t.norm() > TRUST_RADIUS {
                    return Err(Error::PreimageNotFound { panel: panel_index });
                }
                return Ok(t);
            }
            if dg.norm() == 0.0 {
                return Err(Error::PreimageNotFound { panel: panel_index });
            }
            t -= f / dg;
        }
        let (g, _) = self.eval_interpolant_unchecked(t);
        if (g - zeta0).norm() < tol && t.norm() <= TRUST_RADIUS {
            Ok(t)
        } else {
            Err(Error::PreimageNotFound { panel: panel_index })
        }
    }

    /// Default preimage search: start from the standardized target, which
    /// works well whenever the panel is close to its chord.
    pub fn preimage(&self, z0: Complex, panel_index: usize) -> Result<Complex> {
        let start = self.standardize(z0)?;
        self.preimage_from(z0, start, panel_index)
    }

    /// All distinct preimage candidates found from the standardized target
    /// and from the two endpoints. Near concave regions the inverse map is
    /// multivalued and the candidates can differ; callers that want a
    /// conservative error estimate should take the worst one.
    pub fn preimage_candidates(&self, z0: Complex, panel_index: usize) -> Vec<Complex> {
        let mut found: Vec<Complex> = Vec::new();
        let mut guesses = Vec::with_capacity(3);
        if let Ok(s) = self.standardize(z0) {
            guesses.push(s);
        }
        guesses.push(Complex::new(1.0, 0.0));
        guesses.push(Complex::new(-1.0, 0.0));
        for g in guesses {
            if let Ok(t) = self.preimage_from(z0, g, panel_index) {
                if !found.iter().any(|f| (f - t).norm() < 1e-8) {
                    found.push(t);
                }
            }
        }
        found
    }
}

/// Orientation side relative to the closed boundary curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Interior,
    Exterior,
}

/// A closed boundary tiled by equal-arc-length panels.
pub struct Boundary {
    pub curve: ParametrizedCurve,
    pub panels: Vec<Panel>,
    /// True when the curve is traversed counterclockwise, in which case the
    /// normals i gamma'/|gamma'| point into the interior.
    pub ccw: bool,
    nodes_flat: Vec<Complex>,
    normals_flat: Vec<Complex>,
    /// Quadrature weights against arc length, |dz/ds| w.
    arc_weights_flat: Vec<f64>,
}

impl Boundary {
    /// Number of quadrature nodes on the boundary.
    pub fn node_count(&self) -> usize {
        self.nodes_flat.len()
    }

    pub fn node_position(&self, idx: usize) -> Complex {
        self.nodes_flat[idx]
    }

    pub fn node_normal(&self, idx: usize) -> Complex {
        self.normals_flat[idx]
    }

    /// Quadrature weight of node `idx` against arc length.
    pub fn node_arc_weight(&self, idx: usize) -> f64 {
        self.arc_weights_flat[idx]
    }

    pub fn nodes(&self) -> &[Complex] {
        &self.nodes_flat
    }

    pub fn normals(&self) -> &[Complex] {
        &self.normals_flat
    }

    pub fn arc_weights(&self) -> &[f64] {
        &self.arc_weights_flat
    }

    pub fn total_arclen(&self) -> f64 {
        self.panels.iter().map(|p| p.arclen).sum()
    }

    /// Arc length of a single panel (all panels are equal by construction).
    pub fn panel_arclen(&self) -> f64 {
        self.total_arclen() / self.panels.len() as f64
    }

    /// Flat node index of (panel, node-in-panel).
    pub fn flat_index(&self, panel: usize, node: usize) -> usize {
        panel * PANEL_ORDER + node
    }

    /// Unit normal pointing towards the requested side at a node.
    pub fn normal_into(&self, idx: usize, side: Side) -> Complex {
        // ccw traversal makes i gamma'/|gamma'| point into the interior.
        let sign = match (side, self.ccw) {
            (Side::Interior, true) | (Side::Exterior, false) => 1.0,
            _ => -1.0,
        };
        self.normals_flat[idx] * sign
    }

    /// Closest node to z: (panel, node, distance).
    pub fn nearest_node(&self, z: Complex) -> (usize, usize, f64) {
        let mut best = (0usize, 0usize, f64::INFINITY);
        for (i, &w) in self.nodes_flat.iter().enumerate() {
            let d = (w - z).norm();
            if d < best.2 {
                best = (i / PANEL_ORDER, i % PANEL_ORDER, d);
            }
        }
        best
    }

    /// Minimum distance from z to the boundary nodes.
    pub fn min_node_distance(&self, z: Complex) -> f64 {
        self.nearest_node(z).2
    }

    /// Indices of the `count` panels closest to z0 (distance measured to
    /// panel nodes), ties broken by lower panel index.
    pub fn nearest_panels(&self, z0: Complex, count: usize) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = self
            .panels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = p
                    .nodes_z
                    .iter()
                    .map(|&w| (w - z0).norm())
                    .fold(f64::INFINITY, f64::min);
                (d, i)
            })
            .collect();
        dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dist.truncate(count.min(self.panels.len()));
        dist.into_iter().map(|(_, i)| i).collect()
    }

    /// Winding number of the boundary around z (by quadrature; only reliable
    /// away from the boundary). +-1 inside the curve, 0 outside.
    pub fn winding_number(&self, z: Complex) -> f64 {
        let mut acc = Complex::new(0.0, 0.0);
        for p in &self.panels {
            for j in 0..PANEL_ORDER {
                acc += p.quad_weights[j] * p.nodes_dz[j] / (p.nodes_z[j] - z);
            }
        }
        (acc / Complex::new(0.0, 2.0 * std::f64::consts::PI)).re
    }

    /// True if z lies on the given side of the curve (winding test).
    pub fn contains_side(&self, z: Complex, side: Side) -> bool {
        let inside = self.winding_number(z).abs() > 0.5;
        match side {
            Side::Interior => inside,
            Side::Exterior => !inside,
        }
    }

    /// Dump the node data as CSV: panel id, node parameter, position,
    /// normal, arc-length quadrature weight.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "panel,t,x,y,nx,ny,weight")?;
        for (pi, p) in self.panels.iter().enumerate() {
            for j in 0..PANEL_ORDER {
                writeln!(
                    out,
                    "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    pi,
                    p.nodes_t[j],
                    p.nodes_z[j].re,
                    p.nodes_z[j].im,
                    p.normals[j].re,
                    p.normals[j].im,
                    p.quad_weights[j] * p.nodes_dz[j].norm()
                )?;
            }
        }
        Ok(())
    }
}

/// Cumulative arc-length table over a fine composite rule, used to place
/// equal-arc-length panel breakpoints by bisection.
struct ArcLengthTable<'a> {
    curve: &'a ParametrizedCurve,
    rule: Arc<QuadratureRule>,
    subdivisions: usize,
    cumulative: Vec<f64>,
}

impl<'a> ArcLengthTable<'a> {
    fn new(curve: &'a ParametrizedCurve) -> Result<Self> {
        let rule = gauss_legendre_cached(16)?;
        let subdivisions = 1024;
        let mut cumulative = Vec::with_capacity(subdivisions + 1);
        cumulative.push(0.0);
        for i in 0..subdivisions {
            let a = i as f64 / subdivisions as f64;
            let b = (i + 1) as f64 / subdivisions as f64;
            let prev = *cumulative.last().unwrap();
            cumulative.push(prev + Self::segment(curve, &rule, a, b));
        }
        Ok(Self {
            curve,
            rule,
            subdivisions,
            cumulative,
        })
    }

    fn segment(curve: &ParametrizedCurve, rule: &QuadratureRule, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| w * half * curve.derivative(mid + half * x).norm())
            .sum()
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Arc length accumulated from 0 to t.
    fn eval(&self, t: f64) -> f64 {
        let i = ((t * self.subdivisions as f64) as usize).min(self.subdivisions - 1);
        let a = i as f64 / self.subdivisions as f64;
        self.cumulative[i] + Self::segment(self.curve, &self.rule, a, t)
    }

    /// Parameter t with eval(t) = target, by bisection.
    fn invert(&self, target: f64) -> f64 {
        let mut lo_idx = self
            .cumulative
            .partition_point(|&c| c <= target)
            .saturating_sub(1)
            .min(self.subdivisions - 1);
        // Guard against rounding at subinterval edges.
        while lo_idx > 0 && self.cumulative[lo_idx] > target {
            lo_idx -= 1;
        }
        let mut lo = lo_idx as f64 / self.subdivisions as f64;
        let mut hi = (lo_idx + 1) as f64 / self.subdivisions as f64;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let v = self.eval(mid);
            if (v - target).abs() < 1e-14 * self.total() {
                return mid;
            }
            if v < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Split a closed curve into `n_panels` panels of equal arc length and
/// populate the per-panel node data and geometry interpolants.
pub fn build_boundary(curve: &ParametrizedCurve, n_panels: usize) -> Result<Boundary> {
    if !curve.is_closed() {
        return Err(Error::UnsupportedGeometry(
            "panelization requires a closed curve".into(),
        ));
    }
    if n_panels < 4 {
        return Err(Error::Domain(format!(
            "need at least 4 panels, got {n_panels}"
        )));
    }
    let gap = (curve.position(0.0) - curve.position(1.0)).norm();
    if gap > 1e-10 {
        return Err(Error::UnsupportedGeometry(format!(
            "curve endpoints differ by {gap:.3e}; not closed"
        )));
    }

    let table = ArcLengthTable::new(curve)?;
    let total = table.total();
    let mut breaks = Vec::with_capacity(n_panels + 1);
    breaks.push(0.0);
    for j in 1..n_panels {
        breaks.push(table.invert(total * j as f64 / n_panels as f64));
    }
    breaks.push(1.0);

    let rule = gauss_legendre_cached(PANEL_ORDER)?;
    let l_mat = legendre_projection_matrix_cached(PANEL_ORDER)?;

    let mut panels = Vec::with_capacity(n_panels);
    let mut nodes_flat = Vec::with_capacity(n_panels * PANEL_ORDER);
    let mut normals_flat = Vec::with_capacity(n_panels * PANEL_ORDER);
    let mut arc_weights_flat = Vec::with_capacity(n_panels * PANEL_ORDER);
    let mut area = 0.0;

    for w in breaks.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let mid = 0.5 * (ta + tb);
        let half = 0.5 * (tb - ta);
        let zero = Complex::new(0.0, 0.0);
        let mut nodes_t = [0.0; PANEL_ORDER];
        let mut nodes_z = [zero; PANEL_ORDER];
        let mut nodes_dz = [zero; PANEL_ORDER];
        let mut normals = [zero; PANEL_ORDER];
        let mut quad_weights = [0.0; PANEL_ORDER];
        let mut arclen = 0.0;
        for j in 0..PANEL_ORDER {
            let t = mid + half * rule.nodes[j];
            nodes_t[j] = t;
            nodes_z[j] = curve.position(t);
            nodes_dz[j] = curve.derivative(t) * half;
            normals[j] = Complex::new(0.0, 1.0) * nodes_dz[j] / nodes_dz[j].norm();
            quad_weights[j] = rule.weights[j];
            arclen += rule.weights[j] * nodes_dz[j].norm();
            area += 0.5 * rule.weights[j] * (nodes_z[j].conj() * nodes_dz[j]).im;
        }
        let endpoints = [curve.position(ta), curve.position(tb)];
        let d = endpoints[1] - endpoints[0];
        if d.norm() == 0.0 {
            return Err(Error::UnsupportedGeometry(
                "degenerate panel with coincident endpoints".into(),
            ));
        }
        let mut geom_coeffs = [zero; PANEL_ORDER];
        for l in 0..PANEL_ORDER {
            let mut acc = zero;
            for m in 0..PANEL_ORDER {
                let zeta = (2.0 * nodes_z[m] - (endpoints[0] + endpoints[1])) / d;
                acc += l_mat[l * PANEL_ORDER + m] * zeta;
            }
            geom_coeffs[l] = acc;
        }
        nodes_flat.extend_from_slice(&nodes_z);
        normals_flat.extend_from_slice(&normals);
        for j in 0..PANEL_ORDER {
            arc_weights_flat.push(quad_weights[j] * nodes_dz[j].norm());
        }
        panels.push(Panel {
            param_interval: [ta, tb],
            nodes_t,
            nodes_z,
            nodes_dz,
            normals,
            quad_weights,
            arclen,
            geom_coeffs,
            endpoints,
        });
    }

    Ok(Boundary {
        curve: curve.clone(),
        panels,
        ccw: area > 0.0,
        nodes_flat,
        normals_flat,
        arc_weights_flat,
    })
}

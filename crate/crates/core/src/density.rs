//! Panel-wise representation of the layer density: Legendre modal analysis,
//! integer-factor upsampling, extrapolation to complex parameters, and the
//! highest-mode resolution diagnostic.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, OnceLock, RwLock};

use crate::geometry::{Boundary, PANEL_ORDER};
use crate::special::{
    gauss_legendre_cached, legendre_projection_matrix_cached, legendre_sequence,
    legendre_sequence_real, QuadratureRule, MAX_RULE_SIZE,
};
use crate::{Complex, Error, Result};

/// Modal coefficients sigma_l = sum_m L_{lm} sigma(t_m) of samples at the
/// nodes of `rule`.
pub fn modal_coefficients(values: &[Complex], rule: &QuadratureRule) -> Vec<Complex> {
    assert_eq!(values.len(), rule.order);
    let n = rule.order;
    let l_mat = legendre_projection_matrix_cached(n).expect("projection matrix");
    let mut coeffs = vec![Complex::new(0.0, 0.0); n];
    for (l, c) in coeffs.iter_mut().enumerate() {
        let mut acc = Complex::new(0.0, 0.0);
        for m in 0..n {
            acc += l_mat[l * n + m] * values[m];
        }
        *c = acc;
    }
    coeffs
}

/// Row-major evaluation matrix of the n-term Legendre basis at the
/// kappa*n-point rule: entry [j*n + l] = P_l(x_j).
fn upsample_matrix_cached(n: usize, kappa: usize) -> Result<Arc<Vec<f64>>> {
    static CACHE: OnceLock<RwLock<HashMap<(usize, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(m) = cache.read().unwrap().get(&(n, kappa)) {
        return Ok(m.clone());
    }
    let fine = gauss_legendre_cached(kappa * n)?;
    let mut mat = vec![0.0; kappa * n * n];
    for (j, &x) in fine.nodes.iter().enumerate() {
        let p = legendre_sequence_real(x, n - 1);
        mat[j * n..(j + 1) * n].copy_from_slice(&p);
    }
    let mat = Arc::new(mat);
    let mut map = cache.write().unwrap();
    Ok(map.entry((n, kappa)).or_insert(mat).clone())
}

/// Evaluate the n-term Legendre expansion of `panel_values` at the
/// kappa*n-point Gauss-Legendre nodes. kappa = 1 returns the input.
pub fn upsample(panel_values: &[Complex], kappa: usize) -> Result<Vec<Complex>> {
    let n = panel_values.len();
    if kappa == 0 {
        return Err(Error::Domain("upsampling factor must be >= 1".into()));
    }
    if kappa == 1 {
        return Ok(panel_values.to_vec());
    }
    if kappa * n > MAX_RULE_SIZE {
        return Err(Error::UpsamplingCap {
            requested: kappa * n,
            cap: MAX_RULE_SIZE,
        });
    }
    let rule = gauss_legendre_cached(n)?;
    let coeffs = modal_coefficients(panel_values, &rule);
    let mat = upsample_matrix_cached(n, kappa)?;
    let mut out = vec![Complex::new(0.0, 0.0); kappa * n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = Complex::new(0.0, 0.0);
        for l in 0..n {
            acc += mat[j * n + l] * coeffs[l];
        }
        *o = acc;
    }
    Ok(out)
}

/// Layer density sampled at the boundary nodes, with lazily computed
/// per-panel Legendre coefficients and a shared upsampling cache.
pub struct Density {
    values: Vec<Complex>,
    n_panels: usize,
    coeffs: Vec<OnceLock<Vec<Complex>>>,
    upsampled: RwLock<HashMap<(usize, usize), Arc<Vec<Complex>>>>,
}

impl Clone for Density {
    fn clone(&self) -> Self {
        Self::from_node_values(self.values.clone())
    }
}

impl Density {
    /// Wrap a flat vector of node values (16 per panel).
    pub fn from_node_values(values: Vec<Complex>) -> Self {
        assert!(
            values.len() % PANEL_ORDER == 0,
            "density length must be a multiple of {PANEL_ORDER}"
        );
        let n_panels = values.len() / PANEL_ORDER;
        Self {
            values,
            n_panels,
            coeffs: (0..n_panels).map(|_| OnceLock::new()).collect(),
            upsampled: RwLock::new(HashMap::new()),
        }
    }

    /// Sample a function of position at the boundary nodes.
    pub fn from_fn<F: Fn(Complex) -> Complex>(boundary: &Boundary, f: F) -> Self {
        Self::from_node_values(boundary.nodes().iter().map(|&z| f(z)).collect())
    }

    pub fn constant(boundary: &Boundary, value: Complex) -> Self {
        Self::from_node_values(vec![value; boundary.node_count()])
    }

    pub fn n_panels(&self) -> usize {
        self.n_panels
    }

    /// All node values, panel-major.
    pub fn node_values(&self) -> &[Complex] {
        &self.values
    }

    /// Node values of a single panel.
    pub fn panel_values(&self, panel: usize) -> &[Complex] {
        &self.values[panel * PANEL_ORDER..(panel + 1) * PANEL_ORDER]
    }

    /// Legendre modal coefficients of a panel (computed once, then shared).
    pub fn panel_coeffs(&self, panel: usize) -> &[Complex] {
        self.coeffs[panel].get_or_init(|| {
            let rule = gauss_legendre_cached(PANEL_ORDER).expect("panel rule");
            modal_coefficients(self.panel_values(panel), &rule)
        })
    }

    /// Panel values upsampled to kappa*16 nodes, cached per (panel, kappa).
    pub fn upsampled(&self, panel: usize, kappa: usize) -> Result<Arc<Vec<Complex>>> {
        if kappa == 1 {
            // Fast path; not worth caching.
            return Ok(Arc::new(self.panel_values(panel).to_vec()));
        }
        if let Some(v) = self.upsampled.read().unwrap().get(&(panel, kappa)) {
            return Ok(v.clone());
        }
        if kappa * PANEL_ORDER > MAX_RULE_SIZE {
            return Err(Error::UpsamplingCap {
                requested: kappa * PANEL_ORDER,
                cap: MAX_RULE_SIZE,
            });
        }
        let mat = upsample_matrix_cached(PANEL_ORDER, kappa)?;
        let coeffs = self.panel_coeffs(panel);
        let mut out = vec![Complex::new(0.0, 0.0); kappa * PANEL_ORDER];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = Complex::new(0.0, 0.0);
            for l in 0..PANEL_ORDER {
                acc += mat[j * PANEL_ORDER + l] * coeffs[l];
            }
            *o = acc;
        }
        let out = Arc::new(out);
        let mut map = self.upsampled.write().unwrap();
        Ok(map.entry((panel, kappa)).or_insert(out).clone())
    }

    /// Evaluate the panel's Legendre expansion at a complex parameter.
    pub fn extrapolate_at(&self, panel: usize, t0: Complex) -> Result<Complex> {
        if t0.norm() > crate::geometry::TRUST_RADIUS {
            return Err(Error::OutsideTrustRegion(t0.norm()));
        }
        let coeffs = self.panel_coeffs(panel);
        let p = legendre_sequence(t0, PANEL_ORDER - 1);
        Ok(coeffs.iter().zip(&p).map(|(&c, &pl)| c * pl).sum())
    }

    /// Max norm of the density over a panel's nodes; the default surrogate
    /// for |sigma(t0)| in the error estimates.
    pub fn panel_max_norm(&self, panel: usize) -> f64 {
        self.panel_values(panel)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Global max norm over all nodes.
    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Upsampling error estimate: max over panels of the relative magnitude
    /// of the highest Legendre mode, |sigma_15| / ||sigma||_inf. Grows when
    /// the density is under-resolved by the grid.
    pub fn resolution_estimate(&self) -> f64 {
        let norm = self.max_norm();
        if norm == 0.0 {
            return 0.0;
        }
        (0..self.n_panels)
            .map(|p| self.panel_coeffs(p)[PANEL_ORDER - 1].norm())
            .fold(0.0, f64::max)
            / norm
    }

    /// CSV export: panel id, node index, Re sigma, Im sigma.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "panel,node,sigma_re,sigma_im")?;
        for p in 0..self.n_panels {
            for j in 0..PANEL_ORDER {
                let v = self.values[p * PANEL_ORDER + j];
                writeln!(out, "{},{},{:.16e},{:.16e}", p, j, v.re, v.im)?;
            }
        }
        Ok(())
    }

    /// CSV import matching [`Density::write_csv`].
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows: Vec<(usize, usize, Complex)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Config(format!("csv read: {e}")))?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!("bad density row: '{line}'")));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number '{s}': {e}")))
            };
            let panel: usize = parts[0]
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad panel id: {e}")))?;
            let node: usize = parts[1]
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad node id: {e}")))?;
            rows.push((panel, node, Complex::new(parse(parts[2])?, parse(parts[3])?)));
        }
        let n = rows.len();
        if n == 0 || n % PANEL_ORDER != 0 {
            return Err(Error::Config(format!(
                "density csv must hold a multiple of {PANEL_ORDER} rows, got {n}"
            )));
        }
        let mut values = vec![Complex::new(0.0, 0.0); n];
        for (panel, node, v) in rows {
            let idx = panel * PANEL_ORDER + node;
            if idx >= n {
                return Err(Error::Config(format!(
                    "density csv index ({panel},{node}) out of range"
                )));
            }
            values[idx] = v;
        }
        Ok(Self::from_node_values(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn modal_of_constant() {
        let rule = gauss_legendre_cached(16).unwrap();
        let vals = vec![c(2.5, -1.0); 16];
        let coeffs = modal_coefficients(&vals, &rule);
        assert!((coeffs[0] - c(2.5, -1.0)).norm() < 1e-14);
        for l in 1..16 {
            // Zero up to roundoff amplified by the (2l+1)/2 projection factor.
            assert!(coeffs[l].norm() < 5e-15 * vals[0].norm());
        }
    }

    #[test]
    fn modal_of_p3() {
        let rule = gauss_legendre_cached(16).unwrap();
        let vals: Vec<Complex> = rule
            .nodes
            .iter()
            .map(|&x| c(0.5 * (5.0 * x * x * x - 3.0 * x), 0.0))
            .collect();
        let coeffs = modal_coefficients(&vals, &rule);
        assert!((coeffs[3] - c(1.0, 0.0)).norm() < 1e-13);
        for l in (0..16).filter(|&l| l != 3) {
            assert!(coeffs[l].norm() < 1e-13);
        }
    }

    #[test]
    fn modal_reconstruction_of_smooth_function() {
        let rule = gauss_legendre_cached(16).unwrap();
        let vals: Vec<Complex> = rule.nodes.iter().map(|&x| c(x.exp(), 0.0)).collect();
        let coeffs = modal_coefficients(&vals, &rule);
        for i in 0..100 {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / 100.0;
            let p = legendre_sequence_real(x, 15);
            let recon: Complex = coeffs.iter().zip(&p).map(|(&cf, &pl)| cf * pl).sum();
            assert!((recon.re - x.exp()).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn upsample_identity_and_cap() {
        let vals: Vec<Complex> = (0..16).map(|i| c(i as f64, -(i as f64))).collect();
        assert_eq!(upsample(&vals, 1).unwrap(), vals);
        assert!(matches!(
            upsample(&vals, 9),
            Err(Error::UpsamplingCap { .. })
        ));
    }

    #[test]
    fn upsample_reproduces_polynomials() {
        let rule = gauss_legendre_cached(16).unwrap();
        let poly = |x: f64| {
            // Degree 15 with mixed coefficients.
            let mut acc = 0.0;
            let mut xp = 1.0;
            for k in 0..16 {
                acc += ((k as f64) * 0.3 - 1.0) * xp;
                xp *= x;
            }
            acc
        };
        let vals: Vec<Complex> = rule.nodes.iter().map(|&x| c(poly(x), 0.0)).collect();
        let fine = upsample(&vals, 2).unwrap();
        let fine_rule = gauss_legendre_cached(32).unwrap();
        for (j, &x) in fine_rule.nodes.iter().enumerate() {
            assert!((fine[j].re - poly(x)).abs() < 1e-13 * (1.0 + poly(x).abs()));
        }
    }

    #[test]
    fn upsample_preserves_integral() {
        let rule = gauss_legendre_cached(16).unwrap();
        let vals: Vec<Complex> = rule
            .nodes
            .iter()
            .map(|&x| c((2.0 * x).sin(), (0.7 * x).cos()))
            .collect();
        let coarse: Complex = vals
            .iter()
            .zip(&rule.weights)
            .map(|(&v, &w)| v * w)
            .sum();
        for kappa in [2usize, 3, 5, 8] {
            let fine_rule = gauss_legendre_cached(16 * kappa).unwrap();
            let fine = upsample(&vals, kappa).unwrap();
            let fine_sum: Complex = fine
                .iter()
                .zip(&fine_rule.weights)
                .map(|(&v, &w)| v * w)
                .sum();
            assert!((fine_sum - coarse).norm() < 1e-13);
        }
    }

    #[test]
    fn upsample_then_modal_reproduces_coefficients() {
        let rule = gauss_legendre_cached(16).unwrap();
        let vals: Vec<Complex> = rule
            .nodes
            .iter()
            .map(|&x| c((1.3 * x).exp(), x.sin()))
            .collect();
        let coeffs = modal_coefficients(&vals, &rule);
        let fine = upsample(&vals, 4).unwrap();
        let fine_rule = gauss_legendre_cached(64).unwrap();
        let fine_coeffs = modal_coefficients(&fine, &fine_rule);
        for l in 0..64 {
            let want = if l < 16 { coeffs[l] } else { c(0.0, 0.0) };
            assert!((fine_coeffs[l] - want).norm() < 1e-12, "l={l}");
        }
    }

    #[test]
    fn extrapolate_constant_and_polynomial() {
        let vals = vec![c(1.0, 0.0); 16];
        let d = Density::from_node_values(vals);
        // Away from [-1,1] the basis grows, amplifying modal roundoff.
        let t0 = c(0.4, 0.3);
        assert!((d.extrapolate_at(0, t0).unwrap() - c(1.0, 0.0)).norm() < 1e-11);

        let rule = gauss_legendre_cached(16).unwrap();
        let sq: Vec<Complex> = rule.nodes.iter().map(|&x| c(x * x, 0.0)).collect();
        let d = Density::from_node_values(sq);
        let t0 = c(0.2, 0.1);
        let got = d.extrapolate_at(0, t0).unwrap();
        assert!((got - t0 * t0).norm() < 1e-13, "got {got}");
    }

    #[test]
    fn extrapolate_matches_barycentric_on_interval() {
        let rule = gauss_legendre_cached(16).unwrap();
        let f = |x: f64| (1.7 * x).exp() * (3.0 * x).cos();
        let vals: Vec<Complex> = rule.nodes.iter().map(|&x| c(f(x), 0.0)).collect();
        let d = Density::from_node_values(vals.clone());
        // Barycentric Lagrange interpolation oracle on the same nodes.
        let weights: Vec<f64> = (0..16)
            .map(|j| {
                let mut w = 1.0;
                for k in 0..16 {
                    if k != j {
                        w /= rule.nodes[j] - rule.nodes[k];
                    }
                }
                w
            })
            .collect();
        for i in 0..40 {
            let x = -0.99 + 1.98 * i as f64 / 39.0;
            let mut num = c(0.0, 0.0);
            let mut den = 0.0;
            let mut exact_hit = None;
            for j in 0..16 {
                let dxj = x - rule.nodes[j];
                if dxj.abs() < 1e-14 {
                    exact_hit = Some(vals[j]);
                    break;
                }
                num += vals[j] * (weights[j] / dxj);
                den += weights[j] / dxj;
            }
            let oracle = exact_hit.unwrap_or(num / den);
            let got = d.extrapolate_at(0, c(x, 0.0)).unwrap();
            assert!((got - oracle).norm() < 1e-12 * (1.0 + oracle.norm()));
        }
    }

    #[test]
    fn panel_max_norm_cases() {
        let mut vals = vec![c(0.0, 0.0); 16];
        vals[15] = c(-3.0, 0.0);
        let d = Density::from_node_values(vals);
        assert_eq!(d.panel_max_norm(0), 3.0);
        let ones = Density::from_node_values(vec![c(1.0, 0.0); 16]);
        assert_eq!(ones.panel_max_norm(0), 1.0);
    }

    #[test]
    fn resolution_estimate_zero_and_polynomial() {
        let zero = Density::from_node_values(vec![c(0.0, 0.0); 32]);
        assert_eq!(zero.resolution_estimate(), 0.0);
        let rule = gauss_legendre_cached(16).unwrap();
        // Degree 14 polynomial has no P_15 content.
        let vals: Vec<Complex> = rule
            .nodes
            .iter()
            .map(|&x| c(x.powi(14) - 0.5 * x.powi(3), 0.0))
            .collect();
        let d = Density::from_node_values(vals);
        assert!(d.resolution_estimate() < 1e-13);
    }

    #[test]
    fn csv_round_trip() {
        let vals: Vec<Complex> = (0..32).map(|i| c(i as f64 * 0.1, -(i as f64))).collect();
        let d = Density::from_node_values(vals.clone());
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Density::read_csv(std::io::Cursor::new(buf)).unwrap();
        for (a, b) in vals.iter().zip(back.node_values()) {
            assert!((a - b).norm() < 1e-15 * (1.0 + a.norm()));
        }
    }
}

//! Layer-potential kernels and their separation into expansion factors
//! A_m (source side) and B_m (evaluation side) about a center z0, for the
//! Laplace double layer and the Helmholtz combined field representation.
//!
//! The factors are normalized so that |B_m| <= 1 on the closed validity
//! disc |z - z0| <= r, with the supremum over m and z equal to 1. For
//! Laplace the per-m supremum is exactly 1; for Helmholtz only the joint
//! supremum is.

use crate::special::{bessel_j_sequence, factorial, hankel1_sequence};
use crate::{Complex, Error, Result};

/// Cap on the expansion order, set by the factorial range of f64.
pub const ORDER_CAP: usize = 60;

/// Which PDE and layer representation a potential uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// Laplace double layer; the physical potential is the real part of the
    /// accumulated complex value.
    LaplaceDlp,
    /// Helmholtz combined field D_k - (ik/2) S_k with wavenumber k.
    HelmholtzCfie { wavenumber: f64 },
}

impl KernelSpec {
    pub fn laplace() -> Self {
        KernelSpec::LaplaceDlp
    }

    pub fn helmholtz(wavenumber: f64) -> Result<Self> {
        if wavenumber <= 0.0 {
            return Err(Error::Domain(format!(
                "Helmholtz wavenumber must be positive, got {wavenumber}"
            )));
        }
        Ok(KernelSpec::HelmholtzCfie { wavenumber })
    }

    /// Single-layer combination coefficient of the combined field
    /// representation, -ik/2.
    pub fn combination_coefficient(&self) -> Complex {
        match self {
            KernelSpec::LaplaceDlp => Complex::new(0.0, 0.0),
            KernelSpec::HelmholtzCfie { wavenumber } => Complex::new(0.0, -wavenumber / 2.0),
        }
    }

    pub fn is_laplace(&self) -> bool {
        matches!(self, KernelSpec::LaplaceDlp)
    }

    /// Number of components of a coefficient term of index m.
    pub fn term_len(&self, m: usize) -> usize {
        match self {
            KernelSpec::LaplaceDlp => 1,
            KernelSpec::HelmholtzCfie { .. } => {
                if m == 0 {
                    1
                } else {
                    2
                }
            }
        }
    }
}

/// One term of an expansion: a scalar for Laplace and for the Helmholtz
/// m = 0 term, a (+m, -m) pair for Helmholtz m > 0.
#[derive(Debug, Clone, Copy)]
pub struct CoefficientTerm {
    pub index: usize,
    values: [Complex; 2],
    len: usize,
}

impl CoefficientTerm {
    pub fn scalar(index: usize, v: Complex) -> Self {
        Self {
            index,
            values: [v, Complex::new(0.0, 0.0)],
            len: 1,
        }
    }

    pub fn pair(index: usize, plus: Complex, minus: Complex) -> Self {
        Self {
            index,
            values: [plus, minus],
            len: 2,
        }
    }

    pub fn zero(index: usize, len: usize) -> Self {
        Self {
            index,
            values: [Complex::new(0.0, 0.0); 2],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn components(&self) -> &[Complex] {
        &self.values[..self.len]
    }

    /// l2 norm over the components.
    pub fn norm(&self) -> f64 {
        self.components()
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// self += s * other (component-wise).
    pub fn axpy(&mut self, s: Complex, other: &CoefficientTerm) {
        debug_assert_eq!(self.len, other.len);
        for i in 0..self.len {
            self.values[i] += s * other.values[i];
        }
    }

    /// Unconjugated pairing sum_i self_i other_i, recombining the +-m terms.
    pub fn dot(&self, other: &CoefficientTerm) -> Complex {
        debug_assert_eq!(self.len, other.len);
        self.components()
            .iter()
            .zip(other.components())
            .map(|(&a, &b)| a * b)
            .sum()
    }
}

/// Kernel value G(z, w) for a source at w with unit normal n_w.
///
/// Laplace: (1/2pi) n_w/(z-w); the physical double-layer potential is the
/// real part of the accumulated value. Helmholtz: the combined field kernel
/// dPhi_k/dn_w - (ik/2) Phi_k.
pub fn kernel_value(spec: &KernelSpec, z: Complex, w: Complex, n_w: Complex) -> Result<Complex> {
    let d = z - w;
    if d.norm() == 0.0 {
        return Err(Error::SingularEvaluation);
    }
    match spec {
        KernelSpec::LaplaceDlp => Ok(n_w / d / (2.0 * std::f64::consts::PI)),
        KernelSpec::HelmholtzCfie { wavenumber } => {
            let k = *wavenumber;
            let dist = d.norm();
            let h = hankel1_sequence(1, k * dist)?;
            let ik4 = Complex::new(0.0, 0.25 * k);
            let dlp = ik4 * h[1] * dist * (n_w / d).re;
            let slp = Complex::new(0.0, 0.25) * h[0];
            Ok(dlp + spec.combination_coefficient() * slp)
        }
    }
}

/// Shared per-source state for assembling the coefficient factors A_m for
/// m = 0, 1, 2, ... at one expansion center. Reuses the Hankel sequence and
/// runs the unit-phase powers incrementally, so a sweep over m costs O(1)
/// extra work per order.
pub struct SourceFactors {
    spec: KernelSpec,
    r: f64,
    n_w: Complex,
    dw: Complex,
    // Laplace running state: -r^m n_w / (2 pi (w-z0)^{m+1}) at current m.
    lap_cur: Complex,
    lap_m: usize,
    // Helmholtz state.
    k: f64,
    rw: f64,
    hankel: Vec<Complex>,
    em: Complex,       // e^{-i theta_w}
    em_pow: Complex,   // e^{-i m theta_w}
    scale_pow: f64,    // (k r / 2)^m / m! at current m
    helm_m: usize,
}

impl SourceFactors {
    pub fn new(spec: &KernelSpec, w: Complex, n_w: Complex, z0: Complex, r: f64) -> Result<Self> {
        let dw = w - z0;
        if dw.norm() == 0.0 {
            return Err(Error::SingularEvaluation);
        }
        if r <= 0.0 {
            return Err(Error::Domain("expansion radius must be positive".into()));
        }
        let mut s = Self {
            spec: *spec,
            r,
            n_w,
            dw,
            lap_cur: -n_w / (2.0 * std::f64::consts::PI * dw),
            lap_m: 0,
            k: 0.0,
            rw: dw.norm(),
            hankel: Vec::new(),
            em: Complex::new(1.0, 0.0),
            em_pow: Complex::new(1.0, 0.0),
            scale_pow: 1.0,
            helm_m: 0,
        };
        if let KernelSpec::HelmholtzCfie { wavenumber } = spec {
            s.k = *wavenumber;
            s.em = dw.conj() / s.rw;
            s.hankel = hankel1_sequence(1, s.k * s.rw)?;
        }
        Ok(s)
    }

    fn extend_hankel(&mut self, upto: usize) {
        let x = self.k * self.rw;
        while self.hankel.len() <= upto {
            let m = self.hankel.len() - 1;
            let next = 2.0 * m as f64 / x * self.hankel[m] - self.hankel[m - 1];
            self.hankel.push(next);
        }
    }

    /// A_m for this source. Orders must be requested in non-decreasing
    /// sequence for the incremental state to stay cheap; any order is
    /// still answered correctly.
    pub fn factor(&mut self, m: usize) -> Result<CoefficientTerm> {
        if m > ORDER_CAP {
            return Err(Error::OrderCap {
                order: m,
                cap: ORDER_CAP,
            });
        }
        match self.spec {
            KernelSpec::LaplaceDlp => {
                if m < self.lap_m {
                    self.lap_cur = -self.n_w / (2.0 * std::f64::consts::PI * self.dw)
                        * (self.r / self.dw).powi(m as i32);
                    self.lap_m = m;
                }
                while self.lap_m < m {
                    self.lap_cur *= self.r / self.dw;
                    self.lap_m += 1;
                }
                Ok(CoefficientTerm::scalar(m, self.lap_cur))
            }
            KernelSpec::HelmholtzCfie { .. } => {
                if m < self.helm_m {
                    self.em_pow = self.em.powi(m as i32);
                    self.scale_pow = (0.5 * self.k * self.r).powi(m as i32) / factorial(m);
                    self.helm_m = m;
                }
                while self.helm_m < m {
                    self.helm_m += 1;
                    self.em_pow *= self.em;
                    self.scale_pow *= 0.5 * self.k * self.r / self.helm_m as f64;
                }
                self.extend_hankel(m + 1);
                let (c_plus, c_minus) = self.combined_field_terms(m);
                if m == 0 {
                    Ok(CoefficientTerm::scalar(0, c_plus))
                } else {
                    let s = 2.0_f64.sqrt() * self.scale_pow;
                    Ok(CoefficientTerm::pair(m, s * c_plus, s * c_minus))
                }
            }
        }
    }

    /// c_{+m} and c_{-m} of the combined field expansion (un-normalized).
    fn combined_field_terms(&self, m: usize) -> (Complex, Complex) {
        let i = Complex::new(0.0, 1.0);
        let k = self.k;
        let h = &self.hankel;
        let em = self.em_pow; // e^{-i m theta}
        let ep = em.conj(); // e^{+i m theta}
        let nw = self.n_w;
        let comb = self.spec.combination_coefficient();
        if m == 0 {
            // A^D_0 - (ik/2) A^S_0, with H_{-1} = -H_1.
            let ad0 = i * k / 8.0 * (-h[1] * self.em.conj() * nw.conj() - h[1] * self.em * nw);
            let as0 = i / 4.0 * h[0];
            let c0 = ad0 + comb * as0;
            return (c0, c0);
        }
        let em1 = self.em; // e^{-i theta}
        let ep1 = em1.conj();
        // A^S_{+-m}
        let as_p = i / 4.0 * h[m] * em;
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let as_m = i / 4.0 * sign * h[m] * ep;
        // A^D_{+-m}
        let ad_p = i * k / 8.0 * (h[m - 1] * em * ep1 * nw.conj() - h[m + 1] * em * em1 * nw);
        let ad_m = -sign
            * (i * k / 8.0)
            * (h[m + 1] * ep * ep1 * nw.conj() - h[m - 1] * ep * em1 * nw);
        (ad_p + comb * as_p, ad_m + comb * as_m)
    }
}

/// Evaluation-side factors B_m at a point z in the closed disc about z0.
/// As with [`SourceFactors`], sweeping m upward is O(1) per order.
pub struct EvalFactors {
    spec: KernelSpec,
    // Laplace running state ((z-z0)/r)^m.
    lap_ratio: Complex,
    lap_cur: Complex,
    lap_m: usize,
    // Helmholtz state.
    k: f64,
    r: f64,
    rz: f64,
    bessel: Vec<f64>,
    ez: Complex,     // e^{i theta_z}
    ez_pow: Complex, // e^{i m theta_z}
    scale_pow: f64,  // m! (2/(k r))^m / sqrt(2) ... assembled incrementally
    helm_m: usize,
}

impl EvalFactors {
    pub fn new(
        spec: &KernelSpec,
        z: Complex,
        z0: Complex,
        r: f64,
        max_order: usize,
    ) -> Result<Self> {
        Self::with_disc_slack(spec, z, z0, r, max_order, 1e-12)
    }

    /// Like [`EvalFactors::new`] but admitting points up to a relative
    /// distance `slack` beyond the rim. On-surface evaluation at a
    /// center's base node lands marginally outside the node-sampled disc
    /// radius when the local curvature is strong.
    pub(crate) fn with_disc_slack(
        spec: &KernelSpec,
        z: Complex,
        z0: Complex,
        r: f64,
        max_order: usize,
        slack: f64,
    ) -> Result<Self> {
        let dz = z - z0;
        let dist = dz.norm();
        if dist > r * (1.0 + slack) {
            return Err(Error::OutsideDisc { dist, radius: r });
        }
        let mut s = Self {
            spec: *spec,
            lap_ratio: dz / r,
            lap_cur: Complex::new(1.0, 0.0),
            lap_m: 0,
            k: 0.0,
            r,
            rz: dist,
            bessel: Vec::new(),
            ez: Complex::new(1.0, 0.0),
            ez_pow: Complex::new(1.0, 0.0),
            scale_pow: 1.0,
            helm_m: 0,
        };
        if let KernelSpec::HelmholtzCfie { wavenumber } = spec {
            s.k = *wavenumber;
            s.bessel = bessel_j_sequence(max_order.max(1), s.k * dist);
            s.ez = if dist > 0.0 {
                dz / dist
            } else {
                Complex::new(1.0, 0.0)
            };
        }
        Ok(s)
    }

    pub fn factor(&mut self, m: usize) -> Result<CoefficientTerm> {
        if m > ORDER_CAP {
            return Err(Error::OrderCap {
                order: m,
                cap: ORDER_CAP,
            });
        }
        match self.spec {
            KernelSpec::LaplaceDlp => {
                if m < self.lap_m {
                    self.lap_cur = self.lap_ratio.powi(m as i32);
                    self.lap_m = m;
                }
                while self.lap_m < m {
                    self.lap_cur *= self.lap_ratio;
                    self.lap_m += 1;
                }
                Ok(CoefficientTerm::scalar(m, self.lap_cur))
            }
            KernelSpec::HelmholtzCfie { .. } => {
                if m >= self.bessel.len() {
                    self.bessel = bessel_j_sequence(m, self.k * self.rz);
                }
                if m == 0 {
                    return Ok(CoefficientTerm::scalar(0, Complex::new(self.bessel[0], 0.0)));
                }
                if m < self.helm_m {
                    self.ez_pow = self.ez.powi(m as i32);
                    self.scale_pow = factorial(m) * (2.0 / (self.k * self.r)).powi(m as i32);
                    self.helm_m = m;
                }
                while self.helm_m < m {
                    self.helm_m += 1;
                    self.ez_pow *= self.ez;
                    self.scale_pow *= 2.0 * self.helm_m as f64 / (self.k * self.r);
                }
                let s = self.scale_pow / 2.0_f64.sqrt();
                let jm = self.bessel[m];
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                Ok(CoefficientTerm::pair(
                    m,
                    s * jm * self.ez_pow,
                    s * sign * jm * self.ez_pow.conj(),
                ))
            }
        }
    }
}

/// A_m(w, z0): the integrand factor of the m-th expansion coefficient.
pub fn addition_a(
    spec: &KernelSpec,
    m: usize,
    w: Complex,
    n_w: Complex,
    z0: Complex,
    r: f64,
) -> Result<CoefficientTerm> {
    SourceFactors::new(spec, w, n_w, z0, r)?.factor(m)
}

/// B_m(z, z0): the evaluation factor of the m-th expansion term, defined on
/// the closed disc |z - z0| <= r.
pub fn addition_b(
    spec: &KernelSpec,
    m: usize,
    z: Complex,
    z0: Complex,
    r: f64,
) -> Result<CoefficientTerm> {
    EvalFactors::new(spec, z, z0, r, m)?.factor(m)
}

/// Partial sum sum_{m<=p} A_m . B_m of the addition theorem; converges to
/// [`kernel_value`] as p grows whenever |z - z0| < r <= |w - z0|.
pub fn reconstruct_kernel(
    spec: &KernelSpec,
    p: usize,
    z: Complex,
    w: Complex,
    n_w: Complex,
    z0: Complex,
    r: f64,
) -> Result<Complex> {
    let rz = (z - z0).norm();
    let rw = (w - z0).norm();
    if !(rz < r && r <= rw * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "addition theorem requires |z-z0| < r <= |w-z0| (got {rz:.3e}, {r:.3e}, {rw:.3e})"
        )));
    }
    let mut src = SourceFactors::new(spec, w, n_w, z0, r)?;
    let mut ev = EvalFactors::new(spec, z, z0, r, p)?;
    let mut acc = Complex::new(0.0, 0.0);
    for m in 0..=p {
        acc += src.factor(m)?.dot(&ev.factor(m)?);
    }
    Ok(acc)
}

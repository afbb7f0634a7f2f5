//! Pointwise algebra of the Lorentzian norm and its future cone.
//!
//! Signature convention is `(+,-,...,-)` with axis 0 the time axis. A vector
//! `v` is future-causal when `g(v,v) >= -eps |v|_E^2` and `g(v, T) > 0`,
//! where `T` is the eigenvector of the single positive eigenvalue of `g`,
//! oriented so that `g(∂_0, T) > 0`. The hyperbolic norm `|v|_F` is
//! `sqrt(g(v,v))` on the future cone `F` and `-∞` elsewhere.
//!
//! The dual cone is `F* = { w : g^{-1} w ∈ F }`. With this orientation the
//! momentum of a future timelike velocity is `-DL(v)` and the velocity of a
//! momentum is `-DH(w)`; the two maps are mutually inverse.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{domain, usage, LabError, Result};
use crate::ext::ExtReal;

/// Relative width of the lightlike band, before `tolerance_scale`.
pub const CONE_EPS: f64 = 1e-12;

/// A tangent vector in chart coordinates (index 0 = time).
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector(pub DVector<f64>);

/// A cotangent vector (e.g. a differential `du`) in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Covector(pub DVector<f64>);

impl TangentVector {
    pub fn new(components: &[f64]) -> Self {
        TangentVector(DVector::from_column_slice(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Covector {
    pub fn new(components: &[f64]) -> Self {
        Covector(DVector::from_column_slice(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for TangentVector {
    fn from(v: Vec<f64>) -> Self {
        TangentVector(DVector::from_vec(v))
    }
}

impl From<Vec<f64>> for Covector {
    fn from(v: Vec<f64>) -> Self {
        Covector(DVector::from_vec(v))
    }
}

/// Causal character of a vector under the tolerance rule of [`classify`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CausalClass {
    Timelike,
    Lightlike,
    Spacelike,
    PastCausal,
    Zero,
}

impl CausalClass {
    /// Future-causal, including the zero vector (the apex of `F`).
    pub fn is_future_causal(self) -> bool {
        matches!(self, CausalClass::Timelike | CausalClass::Lightlike | CausalClass::Zero)
    }
}

/// Metric tensor at a point, validated to have Lorentzian signature.
#[derive(Clone, Debug)]
pub struct MetricValue {
    g: DMatrix<f64>,
    inverse: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    time_direction: DVector<f64>,
    tolerance_scale: f64,
}

impl MetricValue {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        if n != g.ncols() {
            return usage(format!("metric must be square, got {}x{}", n, g.ncols()));
        }
        if n < 2 {
            return usage("metric dimension must be at least 2");
        }
        if g.iter().any(|x| !x.is_finite()) {
            return domain("metric has non-finite entries");
        }
        let scale = g.amax().max(f64::MIN_POSITIVE);
        let asym = (&g - g.transpose()).amax();
        if asym > 1e-12 * scale {
            return domain(format!("metric is not symmetric (asymmetry {asym:e})"));
        }
        let g = (&g + g.transpose()) * 0.5;
        let eig = SymmetricEigen::new(g.clone());
        let cutoff = 1e-14 * eig.eigenvalues.amax();
        let positive = eig.eigenvalues.iter().filter(|&&l| l > cutoff).count();
        let negative = eig.eigenvalues.iter().filter(|&&l| l < -cutoff).count();
        if positive != 1 || negative != n - 1 {
            return domain(format!(
                "metric signature is not Lorentzian: {positive} positive, {negative} negative eigenvalues"
            ));
        }
        let (imax, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        let mut time_direction: DVector<f64> = eig.eigenvectors.column(imax).into_owned();
        // g(∂_0, T) = λ T^0, so a positive time component keeps T in the cone of ∂_0.
        let pivot = if time_direction[0].abs() > 1e-14 {
            time_direction[0]
        } else {
            time_direction.iter().copied().find(|x| x.abs() > 1e-14).unwrap_or(1.0)
        };
        if pivot < 0.0 {
            time_direction = -time_direction;
        }
        let inverse = g
            .clone()
            .try_inverse()
            .ok_or_else(|| LabError::Domain("metric is degenerate".into()))?;
        Ok(MetricValue {
            g,
            inverse,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            time_direction,
            tolerance_scale: 1.0,
        })
    }

    /// Diagonal metric, mostly for tests and closed-form models.
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    pub fn with_tolerance_scale(mut self, scale: f64) -> Self {
        self.tolerance_scale = scale.abs().max(f64::MIN_POSITIVE);
        self
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn tolerance_scale(&self) -> f64 {
        self.tolerance_scale
    }

    /// Future timelike reference direction (unit Euclidean length).
    pub fn time_direction(&self) -> &DVector<f64> {
        &self.time_direction
    }

    pub fn volume_density(&self) -> f64 {
        self.g.determinant().abs().sqrt()
    }

    pub fn dot(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (&self.g * v).dot(u)
    }

    pub fn dual_dot(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (&self.inverse * b).dot(a)
    }

    pub fn lower(&self, v: &TangentVector) -> Covector {
        Covector(&self.g * &v.0)
    }

    pub fn raise(&self, w: &Covector) -> TangentVector {
        TangentVector(&self.inverse * &w.0)
    }

    /// Complete Riemannian companion metric: same eigenvectors, absolute
    /// eigenvalues (the spatial block flipped to positive).
    pub fn riemannian_reference(&self) -> DMatrix<f64> {
        let abs = self.eigenvalues.map(f64::abs);
        &self.eigenvectors * DMatrix::from_diagonal(&abs) * self.eigenvectors.transpose()
    }

    fn eps(&self) -> f64 {
        CONE_EPS * self.tolerance_scale
    }

    fn classify_raw(&self, v: &DVector<f64>) -> CausalClass {
        let norm2 = v.norm_squared();
        if norm2 == 0.0 {
            return CausalClass::Zero;
        }
        let q = self.dot(v, v);
        let band = self.eps() * norm2;
        if q < -band {
            return CausalClass::Spacelike;
        }
        if self.dot(v, &self.time_direction) <= 0.0 {
            return CausalClass::PastCausal;
        }
        if q.abs() <= band {
            CausalClass::Lightlike
        } else {
            CausalClass::Timelike
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return usage(format!("vector has dimension {len}, metric has {}", self.dim()));
        }
        Ok(())
    }
}

/// Exponent pair `(p, q)` with `1/p + 1/q = 1`, `p < 1`, `p != 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PExponent {
    p: f64,
    q: f64,
}

impl PExponent {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() || p >= 1.0 || p == 0.0 {
            return usage(format!("p must satisfy p < 1 and p != 0, got {p}"));
        }
        Ok(PExponent { p, q: p / (p - 1.0) })
    }

    /// Builds the pair from the Lagrangian exponent `q`.
    pub fn from_conjugate(q: f64) -> Result<Self> {
        if !q.is_finite() || q >= 1.0 || q == 0.0 {
            return usage(format!("q must satisfy q < 1 and q != 0, got {q}"));
        }
        Ok(PExponent { p: q / (q - 1.0), q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// Value of `L` or `H` together with a flag set when the argument sits on
/// the boundary of the cone (the value is then the one-sided limit).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConeValue {
    pub value: ExtReal,
    pub boundary: bool,
}

pub fn classify(v: &TangentVector, g: &MetricValue) -> Result<CausalClass> {
    g.check_dim(v.dim())?;
    Ok(g.classify_raw(&v.0))
}

/// Causal class of the raised covector `g^{-1} w`; `Timelike` means `w` is
/// in the interior of `F*`.
pub fn classify_covector(w: &Covector, g: &MetricValue) -> Result<CausalClass> {
    g.check_dim(w.dim())?;
    Ok(g.classify_raw(&(g.inverse() * &w.0)))
}

/// Hyperbolic norm `|v|_F`: `sqrt(g(v,v))` on the future cone, `-∞` otherwise.
pub fn f_norm(v: &TangentVector, g: &MetricValue) -> Result<ExtReal> {
    let class = classify(v, g)?;
    Ok(if class.is_future_causal() {
        ExtReal::Finite(g.dot(&v.0, &v.0).max(0.0).sqrt())
    } else {
        ExtReal::NegInf
    })
}

/// Dual norm `|w|_{F*}`, finite exactly on `F*`.
pub fn dual_norm(w: &Covector, g: &MetricValue) -> Result<ExtReal> {
    let class = classify_covector(w, g)?;
    Ok(if class.is_future_causal() {
        ExtReal::Finite(g.dual_dot(&w.0, &w.0).max(0.0).sqrt())
    } else {
        ExtReal::NegInf
    })
}

/// Concave Lagrangian convention: `L(v) = -(1/q) |v|_F^q` on `F`, `+∞` outside.
pub fn lagrangian(v: &TangentVector, pq: PExponent, g: &MetricValue) -> Result<ConeValue> {
    let q = pq.q();
    Ok(match classify(v, g)? {
        CausalClass::Timelike => {
            let norm = g.dot(&v.0, &v.0).sqrt();
            ConeValue { value: ExtReal::Finite(-norm.powf(q) / q), boundary: false }
        }
        // On ∂F the norm vanishes: 0 for 0 < q < 1, +∞ for q < 0.
        CausalClass::Lightlike | CausalClass::Zero => ConeValue {
            value: if q > 0.0 { ExtReal::Finite(0.0) } else { ExtReal::PosInf },
            boundary: true,
        },
        CausalClass::Spacelike | CausalClass::PastCausal => {
            ConeValue { value: ExtReal::PosInf, boundary: false }
        }
    })
}

/// Hamiltonian `H(w) = -(1/p) |w|_{F*}^p` on `F*`, `+∞` outside.
pub fn hamiltonian(w: &Covector, pq: PExponent, g: &MetricValue) -> Result<ConeValue> {
    let p = pq.p();
    Ok(match classify_covector(w, g)? {
        CausalClass::Timelike => {
            let norm = g.dual_dot(&w.0, &w.0).sqrt();
            ConeValue { value: ExtReal::Finite(-norm.powf(p) / p), boundary: false }
        }
        CausalClass::Lightlike | CausalClass::Zero => ConeValue {
            value: if p > 0.0 { ExtReal::Finite(0.0) } else { ExtReal::PosInf },
            boundary: true,
        },
        CausalClass::Spacelike | CausalClass::PastCausal => {
            ConeValue { value: ExtReal::PosInf, boundary: false }
        }
    })
}

fn require_timelike(v: &TangentVector, g: &MetricValue, what: &str) -> Result<f64> {
    match classify(v, g)? {
        CausalClass::Timelike => Ok(g.dot(&v.0, &v.0).sqrt()),
        other => domain(format!("{what} must be strictly future timelike, got {other:?}")),
    }
}

fn require_dual_timelike(w: &Covector, g: &MetricValue, what: &str) -> Result<f64> {
    match classify_covector(w, g)? {
        CausalClass::Timelike => Ok(g.dual_dot(&w.0, &w.0).sqrt()),
        other => domain(format!("{what} must lie strictly inside the dual cone, got {other:?}")),
    }
}

/// Differential `DL(v) = -|v|^{q-2} g v` of the Lagrangian.
pub fn lagrangian_gradient(v: &TangentVector, pq: PExponent, g: &MetricValue) -> Result<Covector> {
    let norm = require_timelike(v, g, "velocity")?;
    Ok(Covector(g.matrix() * &v.0 * (-norm.powf(pq.q() - 2.0))))
}

/// Differential `DH(w) = -|w|^{p-2} g^{-1} w` of the Hamiltonian.
pub fn hamiltonian_gradient(w: &Covector, pq: PExponent, g: &MetricValue) -> Result<TangentVector> {
    let norm = require_dual_timelike(w, g, "momentum")?;
    Ok(TangentVector(g.inverse() * &w.0 * (-norm.powf(pq.p() - 2.0))))
}

/// Momentum `-DL(v) ∈ F*` of a future timelike velocity.
pub fn momentum(v: &TangentVector, pq: PExponent, g: &MetricValue) -> Result<Covector> {
    lagrangian_gradient(v, pq, g).map(|w| Covector(-w.0))
}

/// Velocity `-DH(w) ∈ F` of a momentum in the interior of `F*`.
pub fn velocity(w: &Covector, pq: PExponent, g: &MetricValue) -> Result<TangentVector> {
    hamiltonian_gradient(w, pq, g).map(|v| TangentVector(-v.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct LegendreCheck {
    pub residual: f64,
    /// `|v|_E^2 / g(v,v)`; large values mean `v` is close to the light cone.
    pub condition: f64,
    pub ill_conditioned: bool,
}

/// Condition number above which a Legendre check is flagged.
pub const LEGENDRE_CONDITION_WARN: f64 = 100.0;

/// Round trip `v -> w = -DL(v) -> -DH(w)`; returns the Euclidean residual.
pub fn legendre_check(v: &TangentVector, pq: PExponent, g: &MetricValue) -> Result<LegendreCheck> {
    let norm = require_timelike(v, g, "velocity")?;
    let w = momentum(v, pq, g)?;
    let h = hamiltonian(&w, pq, g)?;
    if !h.value.is_finite() {
        return Err(LabError::Internal("momentum left the dual cone".into()));
    }
    let back = velocity(&w, pq, g)?;
    let condition = v.0.norm_squared() / (norm * norm);
    Ok(LegendreCheck {
        residual: (back.0 - &v.0).norm(),
        condition,
        ill_conditioned: condition > LEGENDRE_CONDITION_WARN,
    })
}

#[derive(Clone, Debug)]
pub struct HamiltonianHessian {
    /// `H^{ij} = |w|^{p-2} [ (2-p) w^i w^j / |w|^2 - g^{ij} ]`, indices raised.
    pub matrix: DMatrix<f64>,
    /// Ascending eigenvalues of `matrix`.
    pub eigenvalues: Vec<f64>,
}

pub fn hamiltonian_hessian(w: &Covector, pq: PExponent, g: &MetricValue) -> Result<HamiltonianHessian> {
    let norm = require_dual_timelike(w, g, "covector")?;
    let p = pq.p();
    let matrix = hessian_matrix(&w.0, norm, p, g.inverse());
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(matrix.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    Ok(HamiltonianHessian { matrix, eigenvalues })
}

/// Closed form of `D^2 H` for a covector with dual norm `norm`; `p` is not
/// range-checked so callers can probe the degenerate limit.
pub(crate) fn hessian_matrix(w: &DVector<f64>, norm: f64, p: f64, inverse: &DMatrix<f64>) -> DMatrix<f64> {
    let up = inverse * w;
    let outer = &up * up.transpose() * ((2.0 - p) / (norm * norm));
    (outer - inverse) * norm.powf(p - 2.0)
}

/// Orthonormal frame `e_0, ..., e_{n-1}` obtained by Gram-Schmidt from the
/// coordinate basis; `e_0` is `∂_0` normalised, so it is the comoving observer
/// of the chart.
pub fn orthonormal_frame(g: &MetricValue) -> Result<Vec<DVector<f64>>> {
    let n = g.dim();
    let gm = g.matrix();
    if gm[(0, 0)] <= 0.0 {
        return domain("coordinate time axis is not timelike");
    }
    let mut frame: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut e0 = DVector::zeros(n);
    e0[0] = 1.0 / gm[(0, 0)].sqrt();
    frame.push(e0);
    for a in 1..n {
        let mut u = DVector::zeros(n);
        u[a] = 1.0;
        for e in frame.clone() {
            let ee = g.dot(&e, &e);
            u -= &e * (g.dot(&u, &e) / ee);
        }
        let uu = g.dot(&u, &u);
        if uu >= 0.0 {
            return domain("coordinate axes do not span a spacelike complement");
        }
        frame.push(u / (-uu).sqrt());
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mink(n: usize) -> MetricValue {
        let mut d = vec![-1.0; n];
        d[0] = 1.0;
        MetricValue::diagonal(&d).unwrap()
    }

    fn v(c: &[f64]) -> TangentVector {
        TangentVector::new(c)
    }

    fn w(c: &[f64]) -> Covector {
        Covector::new(c)
    }

    #[test]
    fn f_norm_examples() {
        let g = mink(2);
        assert_eq!(f_norm(&v(&[1.0, 0.0]), &g).unwrap(), ExtReal::Finite(1.0));
        assert_relative_eq!(f_norm(&v(&[2.0, 1.0]), &g).unwrap().finite().unwrap(), 3f64.sqrt(), epsilon = 1e-15);
        assert_eq!(f_norm(&v(&[0.0, 1.0]), &g).unwrap(), ExtReal::NegInf);
        assert!(f_norm(&v(&[1.0, 0.0, 0.0]), &g).is_err());
    }

    #[test]
    fn classify_examples() {
        let g = mink(2);
        assert_eq!(classify(&v(&[1.0, 0.0]), &g).unwrap(), CausalClass::Timelike);
        assert_eq!(classify(&v(&[1.0, 1.0]), &g).unwrap(), CausalClass::Lightlike);
        assert_eq!(classify(&v(&[-1.0, 0.0]), &g).unwrap(), CausalClass::PastCausal);
        assert_eq!(classify(&v(&[0.0, 1.0]), &g).unwrap(), CausalClass::Spacelike);
        assert_eq!(classify(&v(&[0.0, 0.0]), &g).unwrap(), CausalClass::Zero);
    }

    #[test]
    fn near_null_vectors_fall_in_the_lightlike_band() {
        let g = mink(2);
        // g(v,v) = -2e-13 is inside the band 1e-12 * |v|^2.
        assert_eq!(classify(&v(&[1.0, 1.0 + 1e-13]), &g).unwrap(), CausalClass::Lightlike);
        assert_eq!(classify(&v(&[1.0, 1.0 + 1e-9]), &g).unwrap(), CausalClass::Spacelike);
        let loose = mink(2).with_tolerance_scale(1e4);
        assert_eq!(classify(&v(&[1.0, 1.0 + 1e-9]), &loose).unwrap(), CausalClass::Lightlike);
    }

    #[test]
    fn time_orientation_follows_the_chart_time_axis() {
        // Boosted metric with off-diagonal terms: ∂_0 stays future.
        let g = MetricValue::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, -2.0])).unwrap();
        assert_eq!(classify(&v(&[1.0, 0.0]), &g).unwrap(), CausalClass::Timelike);
        assert_eq!(classify(&v(&[-1.0, 0.0]), &g).unwrap(), CausalClass::PastCausal);
    }

    #[test]
    fn rejects_non_lorentzian_metrics() {
        assert!(MetricValue::diagonal(&[1.0, 1.0]).is_err());
        assert!(MetricValue::diagonal(&[1.0, 1.0, -1.0]).is_err());
        assert!(MetricValue::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, -1.0])).is_err());
    }

    #[test]
    fn p_exponent_rejects_endpoints() {
        assert!(PExponent::new(1.0).is_err());
        assert!(PExponent::new(0.0).is_err());
        assert!(PExponent::new(2.0).is_err());
        let pq = PExponent::new(0.5).unwrap();
        assert_relative_eq!(pq.q(), -1.0);
        let pq = PExponent::new(-1.0).unwrap();
        assert_relative_eq!(pq.q(), 0.5);
        assert_relative_eq!(1.0 / pq.p() + 1.0 / pq.q(), 1.0, epsilon = 1e-15);
        assert_eq!(PExponent::from_conjugate(0.5).unwrap().p(), -1.0);
        assert!(PExponent::from_conjugate(1.0).is_err());
    }

    #[test]
    fn lagrangian_hamiltonian_examples() {
        let g = mink(2);
        let pq = PExponent::new(-1.0).unwrap();
        let l = lagrangian(&v(&[1.0, 0.0]), pq, &g).unwrap();
        assert_eq!(l.value, ExtReal::Finite(-2.0));
        let h = hamiltonian(&w(&[1.0, 0.0]), pq, &g).unwrap();
        assert_eq!(h.value, ExtReal::Finite(1.0));
        let edge = hamiltonian(&w(&[1.0, 1.0]), pq, &g).unwrap();
        assert_eq!(edge, ConeValue { value: ExtReal::PosInf, boundary: true });
        // 0 < q < 1: L jumps from 0 on ∂F to +∞ outside.
        let on = lagrangian(&v(&[1.0, 1.0]), pq, &g).unwrap();
        assert_eq!(on, ConeValue { value: ExtReal::Finite(0.0), boundary: true });
        let off = lagrangian(&v(&[1.0, 1.5]), pq, &g).unwrap();
        assert_eq!(off, ConeValue { value: ExtReal::PosInf, boundary: false });
        // q < 0 (0 < p < 1): L diverges at ∂F, H tends to 0 at ∂F*.
        let pq = PExponent::new(0.5).unwrap();
        assert_eq!(lagrangian(&v(&[1.0, 1.0]), pq, &g).unwrap().value, ExtReal::PosInf);
        assert_eq!(hamiltonian(&w(&[1.0, 1.0]), pq, &g).unwrap().value, ExtReal::Finite(0.0));
    }

    #[test]
    fn hamiltonian_diverges_continuously_towards_the_dual_boundary() {
        let g = mink(2);
        let pq = PExponent::new(-1.0).unwrap();
        let mut last = 0.0;
        for k in 1..8 {
            let s = 1.0 - 10f64.powi(-k);
            let h = hamiltonian(&w(&[1.0, s]), pq, &g).unwrap().value.finite().unwrap();
            assert!(h > last);
            last = h;
        }
        assert!(last > 1e3);
    }

    /// Central-difference gradient of an extended-real valued function.
    fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn legendre_closed_forms_match_numerical_differentiation() {
        let g = mink(2);
        for &p in &[0.5, -1.0, -3.0, 0.9] {
            let pq = PExponent::new(p).unwrap();
            let vel = [2.0, 1.0];
            let lf = |x: &[f64]| lagrangian(&v(x), pq, &g).unwrap().value.to_f64();
            let dl = fd_gradient(lf, &vel);
            let closed = lagrangian_gradient(&v(&vel), pq, &g).unwrap();
            for i in 0..2 {
                assert!((dl[i] - closed.0[i]).abs() < 1e-7, "DL mismatch p={p}");
            }
            let mom: Vec<f64> = dl.iter().map(|x| -x).collect();
            let hf = |x: &[f64]| hamiltonian(&w(x), pq, &g).unwrap().value.to_f64();
            let dh = fd_gradient(hf, &mom);
            // Oracle round trip built only from finite differences of L and H.
            let back: Vec<f64> = dh.iter().map(|x| -x).collect();
            assert!((back[0] - vel[0]).abs() < 1e-5 && (back[1] - vel[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn legendre_check_examples() {
        let g = mink(2);
        let r = legendre_check(&v(&[1.0, 0.0]), PExponent::new(-1.0).unwrap(), &g).unwrap();
        assert_eq!(r.residual, 0.0);
        let r = legendre_check(&v(&[2.0, 1.0]), PExponent::new(0.5).unwrap(), &g).unwrap();
        assert!(r.residual < 1e-8);
        assert!(!r.ill_conditioned);
        let r = legendre_check(&v(&[1.0, 0.999]), PExponent::new(0.5).unwrap(), &g).unwrap();
        assert!(r.residual.is_finite() && r.residual < 1e-8);
        assert!(r.ill_conditioned);
        assert!(legendre_check(&v(&[1.0, 1.0]), PExponent::new(0.5).unwrap(), &g).is_err());
    }

    #[test]
    fn hessian_examples() {
        let g = mink(2);
        let h = hamiltonian_hessian(&w(&[1.0, 0.0]), PExponent::new(0.5).unwrap(), &g).unwrap();
        assert_relative_eq!(h.eigenvalues[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(h.eigenvalues[1], 1.0, epsilon = 1e-12);
        let h = hamiltonian_hessian(&w(&[2.0, 0.0]), PExponent::new(0.5).unwrap(), &g).unwrap();
        let s = 2f64.powf(-1.5);
        assert_relative_eq!(h.eigenvalues[0], 0.5 * s, epsilon = 1e-12);
        assert_relative_eq!(h.eigenvalues[1], s, epsilon = 1e-12);
        let h = hamiltonian_hessian(&w(&[1.0, 0.0]), PExponent::new(1.0 - 1e-6).unwrap(), &g).unwrap();
        assert!(h.eigenvalues[0] < 1e-5 && h.eigenvalues[0] > 0.0);
        assert!(hamiltonian_hessian(&w(&[1.0, 1.0]), PExponent::new(0.5).unwrap(), &g).is_err());
    }

    #[test]
    fn hessian_matches_numerical_second_derivative() {
        let g = MetricValue::new(DMatrix::from_row_slice(3, 3, &[1.2, 0.1, 0.0, 0.1, -0.9, 0.05, 0.0, 0.05, -1.1])).unwrap();
        let pq = PExponent::new(-0.7).unwrap();
        let w0 = [1.0, 0.2, -0.3];
        let grad = |x: &[f64]| -> Vec<f64> {
            hamiltonian_gradient(&w(x), pq, &g).unwrap().0.iter().copied().collect()
        };
        let h = hamiltonian_hessian(&w(&w0), pq, &g).unwrap();
        let eps = 1e-6;
        for j in 0..3 {
            let mut a = w0.to_vec();
            let mut b = w0.to_vec();
            a[j] += eps;
            b[j] -= eps;
            let (ga, gb) = (grad(&a), grad(&b));
            for i in 0..3 {
                assert!(((ga[i] - gb[i]) / (2.0 * eps) - h.matrix[(i, j)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn orthonormal_frame_is_orthonormal() {
        let g = MetricValue::new(DMatrix::from_row_slice(3, 3, &[1.2, 0.1, 0.0, 0.1, -0.9, 0.05, 0.0, 0.05, -1.1])).unwrap();
        let f = orthonormal_frame(&g).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a != b { 0.0 } else if a == 0 { 1.0 } else { -1.0 };
                assert!((g.dot(&f[a], &f[b]) - expect).abs() < 1e-12);
            }
        }
    }

    fn future_causal(n: usize) -> impl Strategy<Value = Vec<f64>> {
        (prop::collection::vec(-1.0f64..1.0, n - 1), 0.0f64..1.0, 0.01f64..10.0).prop_map(|(dir, speed, scale)| {
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let mut out = vec![scale];
            out.extend(dir.iter().map(|x| x / norm * speed * scale));
            out
        })
    }

    proptest! {
        #[test]
        fn reverse_triangle_inequality(u in future_causal(4), v2 in future_causal(4)) {
            let g = mink(4);
            let a = f_norm(&v(&u), &g).unwrap().finite().unwrap();
            let b = f_norm(&v(&v2), &g).unwrap().finite().unwrap();
            let sum: Vec<f64> = u.iter().zip(&v2).map(|(x, y)| x + y).collect();
            let c = f_norm(&v(&sum), &g).unwrap().finite().unwrap();
            prop_assert!(c >= a + b - 1e-9 * (1.0 + c));
        }

        #[test]
        fn one_homogeneity(u in future_causal(3), lambda in 0.01f64..100.0) {
            let g = mink(3);
            let a = f_norm(&v(&u), &g).unwrap().finite().unwrap();
            let scaled: Vec<f64> = u.iter().map(|x| x * lambda).collect();
            let b = f_norm(&v(&scaled), &g).unwrap().finite().unwrap();
            prop_assert!((b - lambda * a).abs() <= 1e-9 * (1.0 + b));
        }

        #[test]
        fn past_reflection_is_never_future(u in future_causal(3)) {
            let g = mink(3);
            prop_assume!(classify(&v(&u), &g).unwrap() == CausalClass::Timelike);
            let neg: Vec<f64> = u.iter().map(|x| -x).collect();
            prop_assert_eq!(classify(&v(&neg), &g).unwrap(), CausalClass::PastCausal);
            prop_assert_eq!(f_norm(&v(&neg), &g).unwrap(), ExtReal::NegInf);
        }

        #[test]
        fn legendre_involution(dir in prop::collection::vec(-1.0f64..1.0, 2), speed in 0.0f64..0.95,
                               norm in 0.1f64..10.0, p in -5.0f64..0.99) {
            prop_assume!(p.abs() > 1e-3);
            let g = mink(3);
            let d = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            let gamma = 1.0 / (1.0 - speed * speed).sqrt();
            let vel = vec![norm * gamma, norm * gamma * speed * dir[0] / d, norm * gamma * speed * dir[1] / d];
            let r = legendre_check(&v(&vel), PExponent::new(p).unwrap(), &g).unwrap();
            prop_assert!(r.residual < 1e-8 * (1.0 + vel[0]), "residual {}", r.residual);
        }
    }
}

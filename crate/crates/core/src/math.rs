//! Scalar formulas: exponent bookkeeping, the explicit ODE blow-up profile,
//! the power nonlinearity and its truncation, the smooth cutoff, and a
//! quadrature solver for the linearized ODE around the profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre8, integrate, integrate_from_zero};

/// Spatial setting: a full 1D line, or radially symmetric fields in N ≥ 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimMode {
    Line,
    Radial,
}

/// Named numerical tolerances shared by the construction and the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative target of adaptive quadrature.
    pub quadrature_rel: f64,
    /// Algebraic identity checks.
    pub identity_rel: f64,
    /// Finite-difference oracle checks.
    pub fd_oracle_rel: f64,
    /// `A` below this is treated as an exact zero.
    pub zero_floor: f64,
    /// Slack in the head-closure integrability test.
    pub head_exponent_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            quadrature_rel: 1e-10,
            identity_rel: 1e-10,
            fd_oracle_rel: 1e-2,
            zero_floor: 1e-300,
            head_exponent_margin: 1e-6,
        }
    }
}

/// Exponents and constants that every other module reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub p: f64,
    pub dim_mode: DimMode,
    pub n_dim: usize,
    /// Number of ansatz corrections.
    pub depth: usize,
    /// Flatness order of the amplitude function.
    pub k: u32,
    /// Gain exponent of the error bound.
    pub lambda: f64,
    /// Prefactor of the ODE profile.
    pub kappa: f64,
    /// Time weight exponent of the weighted norm.
    pub sigma: f64,
    pub tolerances: Tolerances,
}

/// Lower bounds on the flatness order: `(2J + 2, 2(p+1)/(λ(p-1)) + 2)`.
pub fn flatness_bounds(p: f64, depth: usize, lambda: f64) -> (f64, f64) {
    (
        2.0 * depth as f64 + 2.0,
        2.0 * (p + 1.0) / (lambda * (p - 1.0)) + 2.0,
    )
}

/// Resolves `J`, `k`, `λ`, `κ` for exponent `p` in dimension `n_dim`.
pub fn derive_params(p: f64, n_dim: usize, k_override: Option<u32>) -> Result<ProblemParams> {
    let mode = if n_dim >= 2 { DimMode::Radial } else { DimMode::Line };
    derive_params_with_mode(p, n_dim, mode, k_override)
}

pub fn derive_params_with_mode(
    p: f64,
    n_dim: usize,
    dim_mode: DimMode,
    k_override: Option<u32>,
) -> Result<ProblemParams> {
    if !p.is_finite() || p <= 1.0 {
        return Err(Error::SupercriticalExponent { p, n_dim });
    }
    if n_dim == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if n_dim >= 3 && p >= (n_dim as f64 + 2.0) / (n_dim as f64 - 2.0) {
        return Err(Error::SupercriticalExponent { p, n_dim });
    }
    // N = 1 radial fields are just even line fields.
    let dim_mode = if n_dim == 1 { DimMode::Line } else { dim_mode };
    if dim_mode == DimMode::Line && n_dim != 1 {
        return Err(Error::InvalidParameter(format!(
            "line mode requires N = 1, got N = {n_dim}"
        )));
    }
    let ratio = (p + 1.0) / (p - 1.0);
    // The nudge keeps exact integers such as (3+1)/(3-1) = 2 from rounding down.
    let depth = (ratio + 1e-12).floor() as usize;
    let lambda = (depth as f64 - 2.0 / (p - 1.0)).min(0.5);
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gain exponent λ = {lambda} is not positive for p = {p}"
        )));
    }
    let (b1, b2) = flatness_bounds(p, depth, lambda);
    let bound = b1.max(b2);
    let k = match k_override {
        Some(k) => {
            if (k as f64) < bound - 1e-9 {
                return Err(Error::FlatnessOrder { k, bound });
            }
            k
        }
        None => {
            let mut k = (bound - 1e-9).ceil() as u32;
            if k % 2 == 1 {
                k += 1;
            }
            k
        }
    };
    let kappa = (2.0 * (p + 1.0) / ((p - 1.0) * (p - 1.0))).powf(1.0 / (p - 1.0));
    Ok(ProblemParams {
        p,
        dim_mode,
        n_dim,
        depth,
        k,
        lambda,
        kappa,
        sigma: 0.75,
        tolerances: Tolerances::default(),
    })
}

/// Which member of the nonlinearity family to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinOrder {
    /// `f(u) = |u|^{p-1} u`
    Value,
    /// Antiderivative vanishing at zero.
    Primitive,
    First,
    Second,
}

impl ProblemParams {
    /// Blow-up rate `2/(p-1)`.
    pub fn rate(&self) -> f64 {
        2.0 / (self.p - 1.0)
    }

    /// Explicit ODE solution `κ t^{-2/(p-1)}`.
    pub fn h(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.kappa * t.powf(-self.rate()))
    }

    pub fn h_prime(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let a = self.rate();
        Ok(-a * self.kappa * t.powf(-a - 1.0))
    }

    pub fn h_second(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let a = self.rate();
        Ok(a * (a + 1.0) * self.kappa * t.powf(-a - 2.0))
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        u.abs().powf(self.p - 1.0) * u
    }

    #[inline]
    pub fn primitive(&self, u: f64) -> f64 {
        u.abs().powf(self.p + 1.0) / (self.p + 1.0)
    }

    #[inline]
    pub fn f_prime(&self, u: f64) -> f64 {
        self.p * u.abs().powf(self.p - 1.0)
    }

    pub fn f_second(&self, u: f64) -> Result<f64> {
        if u == 0.0 && self.p < 3.0 {
            return Err(Error::Singular(format!(
                "f'' at u = 0 with p = {} < 3",
                self.p
            )));
        }
        Ok(self.f_second_unchecked(u))
    }

    #[inline]
    fn f_second_unchecked(&self, u: f64) -> f64 {
        if u == 0.0 {
            // only reached for p >= 3, where the limit is 0
            return 0.0;
        }
        self.p * (self.p - 1.0) * u.abs().powf(self.p - 3.0) * u
    }

    pub fn nonlinearity(&self, u: f64, order: NonlinOrder) -> Result<f64> {
        Ok(match order {
            NonlinOrder::Value => self.f(u),
            NonlinOrder::Primitive => self.primitive(u),
            NonlinOrder::First => self.f_prime(u),
            NonlinOrder::Second => self.f_second(u)?,
        })
    }

    /// Coefficient `b = κ^{(p-1)/2} (p-1)/(3p+1)` of the correction kernel.
    pub fn correction_coefficient(&self) -> f64 {
        self.kappa.powf(0.5 * (self.p - 1.0)) * (self.p - 1.0) / (3.0 * self.p + 1.0)
    }

    /// Decay exponent `e_j = 1 - j(p-1) + (2j+2)(p-1)/(2k)` of the residual of level `j`.
    pub fn residual_exponent(&self, level: usize) -> f64 {
        let j = level as f64;
        let pm = self.p - 1.0;
        1.0 - j * pm + (2.0 * j + 2.0) * pm / (2.0 * self.k as f64)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTime(t))
    }
}

#[inline]
fn bump_tail(y: f64) -> f64 {
    if y > 0.0 {
        (-1.0 / y).exp()
    } else {
        0.0
    }
}

// (g, g', g'') of g(y) = exp(-1/y) for y > 0.
#[inline]
pub(crate) fn bump_tail_derivs(y: f64) -> (f64, f64, f64) {
    if y <= 1e-3 {
        // exp(-1000) underflows; derivatives vanish with it.
        return (0.0, 0.0, 0.0);
    }
    let g = (-1.0 / y).exp();
    let y2 = y * y;
    let d1 = g / y2;
    let d2 = g * (1.0 / (y2 * y2) - 2.0 / (y2 * y));
    (g, d1, d2)
}

/// Smooth even cutoff: 1 on `[0, 1]`, 0 on `[2, ∞)`.
pub fn chi(s: f64) -> f64 {
    let s = s.abs();
    if s <= 1.0 {
        return 1.0;
    }
    if s >= 2.0 {
        return 0.0;
    }
    let a = bump_tail(2.0 - s);
    let c = bump_tail(s - 1.0);
    a / (a + c)
}

/// Derivative of [`chi`] (odd in `s`).
pub fn chi_prime(s: f64) -> f64 {
    chi_derivs(s).1
}

/// Second derivative of [`chi`] (even in `s`).
pub fn chi_second(s: f64) -> f64 {
    chi_derivs(s).2
}

/// `(χ, χ', χ'')` at `s`.
pub fn chi_derivs(s: f64) -> (f64, f64, f64) {
    let sign = if s < 0.0 { -1.0 } else { 1.0 };
    let r = s.abs();
    if r <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if r >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    let (a, a1, a2) = bump_tail_derivs(2.0 - r);
    let (c, c1, c2) = bump_tail_derivs(r - 1.0);
    // d/dr of a(2-r) flips the sign of the odd derivatives.
    let (a1, a2) = (-a1, a2);
    let d = a + c;
    let d1 = a1 + c1;
    let num = a1 * c - a * c1;
    let num1 = a2 * c - a * c2;
    let v = a / d;
    let v1 = num / (d * d);
    let v2 = (num1 * d - 2.0 * num * d1) / (d * d * d);
    (v, sign * v1, v2)
}

/// Panels used to tabulate the truncated primitive on `[B, 2B]`.
const TRUNC_PANELS: usize = 256;

/// `f_n(u) = f(u) χ(u/B)` together with its primitive and derivatives.
///
/// The primitive is closed form below `B` and tabulated on `[B, 2B]`;
/// the table is built once and then read-only.
#[derive(Debug, Clone)]
pub struct TruncatedNonlinearity {
    p: f64,
    level: f64,
    // cumulative ∫_B^{B + i h} f_n, i = 0..=TRUNC_PANELS
    table: Vec<f64>,
}

impl TruncatedNonlinearity {
    pub fn new(p: f64, level: f64) -> Result<Self> {
        if !(level > 1.0) || !level.is_finite() {
            return Err(Error::TruncationLevel(level));
        }
        let mut table = Vec::with_capacity(TRUNC_PANELS + 1);
        table.push(0.0);
        let h = level / TRUNC_PANELS as f64;
        let fnc = |u: f64| u.powf(p) * chi(u / level);
        let mut acc = 0.0;
        for i in 0..TRUNC_PANELS {
            let a = level + i as f64 * h;
            acc += integrate(fnc, a, a + h, 1e-13, 1e-15 * level.powf(p) * h)?;
            table.push(acc);
        }
        Ok(Self { p, level, table })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        let a = u.abs();
        if a < self.level {
            return a.powf(self.p - 1.0) * u;
        }
        a.powf(self.p - 1.0) * u * chi(a / self.level)
    }

    pub fn primitive(&self, v: f64) -> f64 {
        let a = v.abs();
        let b = self.level;
        if a <= b {
            return a.powf(self.p + 1.0) / (self.p + 1.0);
        }
        let base = b.powf(self.p + 1.0) / (self.p + 1.0);
        let top = a.min(2.0 * b);
        let h = b / TRUNC_PANELS as f64;
        let pos = (top - b) / h;
        let i = (pos.floor() as usize).min(TRUNC_PANELS - 1);
        let lo = b + i as f64 * h;
        let partial = if top > lo {
            let p = self.p;
            gauss_legendre8(|u| u.powf(p) * chi(u / b), lo, top)
        } else {
            0.0
        };
        base + self.table[i] + partial
    }

    #[inline]
    pub fn f_prime(&self, u: f64) -> f64 {
        let a = u.abs();
        let fp = self.p * a.powf(self.p - 1.0);
        if a < self.level {
            return fp;
        }
        let (c, c1, _) = chi_derivs(a / self.level);
        fp * c + a.powf(self.p) * c1 / self.level
    }

    #[inline]
    pub fn f_second(&self, u: f64) -> f64 {
        let a = u.abs();
        let sign = if u < 0.0 { -1.0 } else { 1.0 };
        let p = self.p;
        let f2 = if a == 0.0 {
            0.0
        } else {
            p * (p - 1.0) * a.powf(p - 2.0)
        };
        if a < self.level {
            return sign * f2;
        }
        let b = self.level;
        let (c, c1, c2) = chi_derivs(a / b);
        sign * (f2 * c + 2.0 * p * a.powf(p - 1.0) * c1 / b + a.powf(p) * c2 / (b * b))
    }

    pub fn eval(&self, u: f64, order: NonlinOrder) -> f64 {
        match order {
            NonlinOrder::Value => self.f(u),
            NonlinOrder::Primitive => self.primitive(u),
            NonlinOrder::First => self.f_prime(u),
            NonlinOrder::Second => self.f_second(u),
        }
    }
}

/// Homogeneous solutions `t^{-(p+1)/(p-1)}` and `t^{2p/(p-1)}` of
/// `g'' = 2p(p+1)/(p-1)^2 t^{-2} g`.
pub fn homogeneous_pair(p: f64, t: f64) -> (f64, f64) {
    (t.powf(-(p + 1.0) / (p - 1.0)), t.powf(2.0 * p / (p - 1.0)))
}

/// Potential `2p(p+1)/(p-1)^2` of the linearized ODE.
pub fn linearized_potential(p: f64) -> f64 {
    2.0 * p * (p + 1.0) / ((p - 1.0) * (p - 1.0))
}

/// Solves `g'' - 2p(p+1)/(p-1)^2 t^{-2} g = G` on `(0, 1]` by variation of
/// parameters, with the solution selected by vanishing weighted data at 0 and 1.
pub fn linearized_ode_solve<G: Fn(f64) -> f64>(source: G, t: f64, p: f64) -> Result<f64> {
    check_time(t)?;
    if t > 1.0 {
        return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let lo_exp = 2.0 * p / (p - 1.0);
    let hi_exp = -(p + 1.0) / (p - 1.0);
    let rel = 1e-12;
    let inner = integrate_from_zero(|s| s.powf(lo_exp) * source(s), t, rel)?;
    let outer = if t < 1.0 {
        // Graded split keeps the quadrature accurate for t near 0.
        let mut acc = 0.0;
        let mut a = t;
        while a < 1.0 {
            let b = (2.0 * a).min(1.0);
            acc += integrate(|s| s.powf(hi_exp) * source(s), a, b, rel, 0.0)?;
            a = b;
        }
        acc
    } else {
        0.0
    };
    let (g1, g2) = homogeneous_pair(p, t);
    Ok(-(p - 1.0) / (3.0 * p + 1.0) * (g1 * inner + g2 * outer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn derived_parameters_match_closed_forms() {
        let a = derive_params(3.0, 1, None).unwrap();
        assert_eq!((a.depth, a.k), (2, 10));
        assert_eq!(a.lambda, 0.5);
        assert!((a.kappa - 2f64.sqrt()).abs() < 1e-15);

        let b = derive_params(5.0, 1, None).unwrap();
        assert_eq!((b.depth, b.k), (1, 8));
        assert_eq!(b.lambda, 0.5);
        assert!((b.kappa - 0.75f64.powf(0.25)).abs() < 1e-15);
        assert!((b.kappa - 0.930605).abs() < 1e-6);

        let c = derive_params(2.0, 3, None).unwrap();
        assert_eq!((c.depth, c.k), (3, 14));
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.dim_mode, DimMode::Radial);
    }

    #[test]
    fn rejects_supercritical_and_bad_overrides() {
        assert!(derive_params(5.0, 3, None).is_err());
        assert!(derive_params(1.0, 1, None).is_err());
        assert!(derive_params(4.9, 3, None).is_ok());
        assert!(matches!(
            derive_params(3.0, 1, Some(8)),
            Err(Error::FlatnessOrder { .. })
        ));
        assert_eq!(derive_params(3.0, 1, Some(12)).unwrap().k, 12);
    }

    #[test]
    fn ode_profile_values() {
        let prm = derive_params(3.0, 1, None).unwrap();
        assert!((prm.h(1.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((prm.h(0.1).unwrap() - 14.142_135_623_730_95).abs() < 1e-12);
        assert!(prm.h(0.0).is_err());
        assert!(prm.h(-1.0).is_err());
        for p in [1.5, 2.0, 3.0, 5.0] {
            let prm = derive_params(p, 1, None).unwrap();
            for t in [1e-3, 0.01, 0.1, 0.5, 1.0] {
                let h = prm.h(t).unwrap();
                let rel = (prm.h_second(t).unwrap() - h.powf(p)).abs() / h.powf(p);
                assert!(rel < 1e-12, "p={p} t={t} rel={rel}");
            }
        }
    }

    #[test]
    fn nonlinearity_values() {
        let prm = derive_params(3.0, 1, None).unwrap();
        assert_eq!(prm.f(2.0), 8.0);
        assert_eq!(prm.f(-2.0), -8.0);
        assert_eq!(prm.primitive(2.0), 4.0);
        assert_eq!(prm.f_prime(2.0), 12.0);
        assert_eq!(prm.f_second(2.0).unwrap(), 12.0);
        let q = derive_params(2.0, 1, None).unwrap();
        assert!(matches!(q.nonlinearity(0.0, NonlinOrder::Second), Err(Error::Singular(_))));
    }

    #[test]
    fn cutoff_values() {
        assert_eq!(chi(0.5), 1.0);
        assert_eq!(chi(3.0), 0.0);
        let v = chi(1.5);
        // symmetric quotient: g(0.5)/(g(0.5)+g(0.5))
        assert!((v - 0.5).abs() < 1e-15);
        assert!(chi_prime(1.5) < 0.0);
        assert!(chi_prime(-1.5) > 0.0);
    }

    #[test]
    fn cutoff_derivatives_match_differences() {
        for &s in &[1.1, 1.3, 1.5, 1.77, 1.95] {
            let h = 1e-5;
            let fd1 = (chi(s + h) - chi(s - h)) / (2.0 * h);
            let fd2 = (chi(s + h) - 2.0 * chi(s) + chi(s - h)) / (h * h);
            let (_, d1, d2) = chi_derivs(s);
            assert!((fd1 - d1).abs() < 1e-7 * (1.0 + d1.abs()), "s={s}");
            assert!((fd2 - d2).abs() < 1e-4 * (1.0 + d2.abs()), "s={s} {fd2} {d2}");
        }
    }

    #[test]
    fn truncated_nonlinearity_examples() {
        let tr = TruncatedNonlinearity::new(3.0, 10.0).unwrap();
        assert_eq!(tr.f(5.0), 125.0);
        assert_eq!(tr.f(30.0), 0.0);
        let mid = tr.f(15.0);
        assert!(mid > 0.0 && mid < 15f64.powi(3));
        assert!((mid - 15f64.powi(3) * chi(1.5)).abs() < 1e-9);
        assert_eq!(tr.f(-15.0), -mid);
        assert!(TruncatedNonlinearity::new(3.0, 1.0).is_err());
    }

    #[test]
    fn truncated_primitive_matches_quadrature() {
        let b = 4.0;
        let tr = TruncatedNonlinearity::new(3.0, b).unwrap();
        assert!((tr.primitive(2.0) - 4.0).abs() < 1e-14);
        for v in [4.5, 5.3, 6.0, 7.99, 8.0, 12.0] {
            let exact = integrate(|u| tr.f(u), 0.0, v, 1e-13, 0.0).unwrap();
            assert!((tr.primitive(v) - exact).abs() < 1e-10 * exact, "v={v}");
            assert_eq!(tr.primitive(-v), tr.primitive(v));
        }
        assert_eq!(tr.primitive(9.0), tr.primitive(20.0));
    }

    #[test]
    fn truncated_derivatives_match_differences() {
        let tr = TruncatedNonlinearity::new(3.0, 3.0).unwrap();
        for &u in &[-5.0, -3.3, 1.0, 3.5, 4.5, 5.9] {
            let h = 1e-5;
            let fd1 = (tr.f(u + h) - tr.f(u - h)) / (2.0 * h);
            let fd2 = (tr.f_prime(u + h) - tr.f_prime(u - h)) / (2.0 * h);
            assert!((fd1 - tr.f_prime(u)).abs() < 1e-6 * (1.0 + fd1.abs()), "u={u}");
            assert!((fd2 - tr.f_second(u)).abs() < 1e-5 * (1.0 + fd2.abs()), "u={u}");
        }
    }

    #[test]
    fn truncated_derivative_growth_bounded_by_power() {
        // |f_n^(α)(u)| ≤ C_α u^{p-α} with constants independent of the level.
        for b in [2.0, 10.0, 100.0] {
            let tr = TruncatedNonlinearity::new(3.0, b).unwrap();
            let mut c = [0.0f64; 3];
            for i in 1..=4000 {
                let u = 4.0 * b * i as f64 / 4000.0;
                c[0] = c[0].max(tr.f(u).abs() / u.powi(3));
                c[1] = c[1].max(tr.f_prime(u).abs() / u.powi(2));
                c[2] = c[2].max(tr.f_second(u).abs() / u);
            }
            assert!(c.iter().all(|v| v.is_finite() && *v < 60.0), "{c:?}");
        }
    }

    #[test]
    fn homogeneous_solutions_solve_linearized_ode() {
        for p in [2.0, 3.0, 5.0] {
            let pot = linearized_potential(p);
            let a = (p + 1.0) / (p - 1.0);
            let b = 2.0 * p / (p - 1.0);
            for t in [0.01, 0.3, 1.0] {
                let (g1, g2) = homogeneous_pair(p, t);
                let g1pp = a * (a + 1.0) * t.powf(-a - 2.0);
                let g2pp = b * (b - 1.0) * t.powf(b - 2.0);
                assert!((g1pp - pot * g1 / (t * t)).abs() <= 1e-12 * g1pp.abs());
                assert!((g2pp - pot * g2 / (t * t)).abs() <= 1e-12 * g2pp.abs());
            }
        }
    }

    /// Closed-form solution for a monomial source `s^q`; returns (g, residual of the ODE).
    fn monomial_oracle(p: f64, q: f64, t: f64) -> (f64, f64) {
        let a = (p + 1.0) / (p - 1.0);
        let b = 2.0 * p / (p - 1.0);
        let c = -(p - 1.0) / (3.0 * p + 1.0);
        // g = c[ t^{-a} t^{b+q+1}/(b+q+1) + t^b (1 - t^{q-a+1})/(q-a+1) ]
        let e1 = b + q + 1.0 - a;
        let k1 = 1.0 / (b + q + 1.0);
        let term = |coef: f64, e: f64| coef * (e * (e - 1.0) - linearized_potential(p)) * t.powf(e - 2.0);
        if (q - a + 1.0).abs() < 1e-12 {
            // ∫_t^1 s^{-1} ds = -ln t
            let g = c * (k1 * t.powf(e1) - t.powf(b) * t.ln());
            // (t^b ln t)'' = b(b-1) t^{b-2} ln t + (2b-1) t^{b-2}
            let log_term = -(2.0 * b - 1.0) * t.powf(b - 2.0);
            let resid = c * (term(k1, e1) + log_term) - t.powf(q);
            return (g, resid);
        }
        let k2 = 1.0 / (q - a + 1.0);
        let e3 = b + q - a + 1.0;
        let g = c * (k1 * t.powf(e1) + k2 * t.powf(b) - k2 * t.powf(e3));
        let resid = c * (term(k1, e1) + term(k2, b) - term(k2, e3)) - t.powf(q);
        (g, resid)
    }

    #[test]
    fn monomial_sources_match_closed_form() {
        let p = 3.0;
        for q in [0.0, 0.5, 1.0, 2.0, 3.7] {
            for t in [0.01, 0.1, 0.45, 0.9, 1.0] {
                let (exact, resid) = monomial_oracle(p, q, t);
                assert!(resid.abs() <= 1e-8 * t.powf(q).max(1e-300), "closed form residual q={q} t={t}");
                let g = linearized_ode_solve(|s| s.powf(q), t, p).unwrap();
                assert!((g - exact).abs() <= 1e-8 * exact.abs(), "q={q} t={t} {g} {exact}");
            }
        }
        assert_eq!(linearized_ode_solve(|_| 0.0, 0.3, p).unwrap(), 0.0);
    }

    #[test]
    fn linearized_solution_satisfies_ode_for_smooth_sources() {
        let p = 3.0;
        let pot = linearized_potential(p);
        let sources: [fn(f64) -> f64; 3] = [|s| s.cos(), |s| (1.0 + s).powi(-2), |s| s * (2.0 * s).exp()];
        for src in sources {
            for &t in &[0.2, 0.5, 0.8] {
                let h = 1e-3;
                let gm = linearized_ode_solve(src, t - h, p).unwrap();
                let g0 = linearized_ode_solve(src, t, p).unwrap();
                let gp = linearized_ode_solve(src, t + h, p).unwrap();
                let gpp = (gp - 2.0 * g0 + gm) / (h * h);
                let resid = gpp - pot * g0 / (t * t) - src(t);
                assert!(resid.abs() < 1e-4 * (1.0 + src(t).abs()), "t={t} resid={resid}");
            }
        }
    }

    #[test]
    fn divergent_source_is_rejected() {
        // s^{2p/(p-1)} s^{-5} = s^{-2} is not integrable at 0 for p = 3.
        assert!(linearized_ode_solve(|s| s.powf(-5.0), 0.5, 3.0).is_err());
    }

    proptest! {
        #[test]
        fn chi_is_even_monotone_and_bounded(s in 0.0f64..3.0) {
            let (v, d1, d2) = chi_derivs(s);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(d1 <= 0.0);
            prop_assert_eq!(chi(-s), v);
            prop_assert_eq!(chi_prime(-s), -d1);
            prop_assert_eq!(chi_second(-s), d2);
            prop_assert!(chi(s + 1e-3) <= v);
        }

        #[test]
        fn truncation_is_exact_outside_transition(u in -50.0f64..50.0) {
            let tr = TruncatedNonlinearity::new(3.0, 10.0).unwrap();
            let prm = derive_params(3.0, 1, None).unwrap();
            if u.abs() < 10.0 {
                prop_assert_eq!(tr.f(u), prm.f(u));
            }
            if u.abs() > 20.0 {
                prop_assert_eq!(tr.f(u), 0.0);
            }
            prop_assert_eq!(tr.f(-u), -tr.f(u));
        }

        #[test]
        fn ode_profile_identity(t in 1e-3f64..1.0, p in 1.2f64..6.0) {
            let prm = derive_params(p, 1, None).unwrap();
            let h = prm.h(t).unwrap();
            let rel = (prm.h_second(t).unwrap() - h.powf(p)).abs() / h.powf(p);
            prop_assert!(rel < 1e-12);
        }
    }
}

//! Explicit radial barriers on geodesic discs of hyperbolic space.
//!
//! On `Ω_k = {ρ ≤ ρ_k}`, `ρ_k = artanh(1 - 1/k)`, with `d = ρ_k - ρ`:
//!
//! ```text
//! h(d) = C (arcsin(tanh ρ_k) - arcsin(tanh ρ)),   h' = C / cosh ρ,   h'' = C tanh ρ / cosh ρ,
//! v_k  = M₀ + h(d).
//! ```
//!
//! Because `h'' = κ h'` with `κ = tanh ρ`, the radial operator reduces to
//! `Q[v_k] = -(C/√(1+C²)) n H_cyl(ρ)`, which is below `-n sup|H|` as soon as
//! `C/√(1+C²) > sup|H|`. `v_k` is then an upper barrier and `-v_k` a lower one.

use serde::{Deserialize, Serialize};

use crate::error::{PmcError, Result};
use crate::mesh::GridFunction;

/// Floor applied by callers when `choose_c` returns 0.
pub const MIN_SLOPE: f64 = 0.1;

/// Default safety factor of [`choose_c`].
pub const DEFAULT_MARGIN: f64 = 1.1;

/// `ρ_k = artanh(1 - 1/k)`.
pub fn rho_k(k: u32) -> Result<f64> {
    if k < 2 {
        return Err(PmcError::OutOfRange(format!("exhaustion index k = {k} must be >= 2")));
    }
    Ok((1.0 - 1.0 / k as f64).atanh())
}

/// `((n-1) coth ρ + tanh ρ) / n`.
pub fn hyperbolic_cylinder_curvature(n: usize, rho: f64) -> f64 {
    let nf = n as f64;
    ((nf - 1.0) / rho.tanh() + rho.tanh()) / nf
}

/// `H_k` at `ρ_k` written in `k`, free of cancellation for large `k`.
pub fn h_k_closed_form(n: usize, k: u32) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    ((nf - 1.0) * kf / (kf - 1.0) + (kf - 1.0) / kf) / nf
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub n: usize,
    pub k: u32,
    pub rho_k: f64,
    pub m0: f64,
    pub c: f64,
    pub h_k: f64,
}

impl BarrierSpec {
    pub fn new(n: usize, k: u32, m0: f64, c: f64) -> Result<Self> {
        if n < 2 {
            return Err(PmcError::OutOfRange(format!("dimension {n} must be >= 2")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(PmcError::OutOfRange(format!("slope C = {c} must be positive")));
        }
        if !(m0 >= 0.0 && m0.is_finite()) {
            return Err(PmcError::OutOfRange(format!("M0 = {m0} must be >= 0")));
        }
        let rho_k = rho_k(k)?;
        Ok(BarrierSpec {
            n,
            k,
            rho_k,
            m0,
            c,
            h_k: h_k_closed_form(n, k),
        })
    }

    /// `M = M₀ + Cπ`.
    pub fn height_bound(&self) -> f64 {
        self.m0 + self.c * std::f64::consts::PI
    }

    fn check(&self, rho: f64) -> Result<()> {
        if !(0.0..=self.rho_k * (1.0 + 1e-14)).contains(&rho) {
            return Err(PmcError::OutOfRange(format!(
                "rho = {rho} outside [0, {}]",
                self.rho_k
            )));
        }
        Ok(())
    }
}

pub fn barrier_h(spec: &BarrierSpec, rho: f64) -> Result<f64> {
    spec.check(rho)?;
    let v = spec.c * ((spec.rho_k.tanh()).asin() - rho.tanh().asin());
    Ok(v.max(0.0))
}

/// `dh/dd` with `d = ρ_k - ρ`.
pub fn barrier_dh(spec: &BarrierSpec, rho: f64) -> Result<f64> {
    spec.check(rho)?;
    Ok(spec.c / rho.cosh())
}

/// `d²h/dd²`.
pub fn barrier_d2h(spec: &BarrierSpec, rho: f64) -> Result<f64> {
    spec.check(rho)?;
    Ok(spec.c * rho.tanh() / rho.cosh())
}

/// `v_k = M₀ + h`.
pub fn barrier_value(spec: &BarrierSpec, rho: f64) -> Result<f64> {
    Ok(spec.m0 + barrier_h(spec, rho)?)
}

/// Analytic radial evaluation of the barrier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialQ {
    /// `Q[v_k](ρ)`.
    pub q: f64,
    /// `n H_target - Q`; positive for a strict supersolution.
    pub margin: f64,
    /// `h'' - κ h'`.
    pub identity_residual: f64,
}

/// `Q[v_k] = -n h' H_cyl / √(γ + h'²) + γ (h'' - κ h') / (γ + h'²)^{3/2}`.
pub fn q_radial(spec: &BarrierSpec, rho: f64, h_target: f64) -> Result<RadialQ> {
    if rho == 0.0 {
        return Err(PmcError::OutOfRange("q_radial is undefined at the pole".into()));
    }
    let dh = barrier_dh(spec, rho)?;
    let d2h = barrier_d2h(spec, rho)?;
    let kappa = rho.tanh();
    let c = rho.cosh();
    let gamma = 1.0 / (c * c);
    let hc = hyperbolic_cylinder_curvature(spec.n, rho);
    let s = gamma + dh * dh;
    let ident = d2h - kappa * dh;
    let nf = spec.n as f64;
    let q = -nf * dh * hc / s.sqrt() + gamma * ident / (s * s.sqrt());
    Ok(RadialQ {
        q,
        margin: nf * h_target - q,
        identity_residual: ident,
    })
}

/// `margin · √(H₀² / (1 - H₀²))`.
pub fn choose_c(h0: f64, margin_factor: f64) -> Result<f64> {
    if !(h0 >= 0.0) {
        return Err(PmcError::OutOfRange(format!("H0 = {h0} must be >= 0")));
    }
    if h0 >= 1.0 {
        return Err(PmcError::OutOfRange(format!(
            "H0 = {h0}: barriers need sup|H| < 1"
        )));
    }
    if !(margin_factor >= 1.0) {
        return Err(PmcError::OutOfRange(format!(
            "margin factor {margin_factor} must be >= 1"
        )));
    }
    Ok(margin_factor * (h0 * h0 / (1.0 - h0 * h0)).sqrt())
}

/// Barrier diagnostics attached to a solve report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierDiagnostics {
    #[serde(rename = "C")]
    pub c: f64,
    pub rho_k: f64,
    #[serde(rename = "H_k")]
    pub h_k: f64,
    pub height_bound: f64,
    /// `max(u - v_k, -v_k - u)` over nodes; non-positive when `u` lies between.
    pub max_violation: f64,
}

/// Compares a solution on a disc grid around the pole with `±v_k`.
pub fn barrier_diagnostics(spec: &BarrierSpec, u: &GridFunction) -> Result<BarrierDiagnostics> {
    let grid = u.grid();
    let mut worst = f64::NEG_INFINITY;
    for p in 0..grid.len() {
        let rho = grid.coords(p)[0].min(spec.rho_k);
        let v = barrier_value(spec, rho)?;
        let x = u.get(p);
        worst = worst.max(x - v).max(-v - x);
    }
    Ok(BarrierDiagnostics {
        c: spec.c,
        rho_k: spec.rho_k,
        h_k: spec.h_k,
        height_bound: spec.height_bound(),
        max_violation: worst,
    })
}

//! Exact FLRW background: scale factor in closed form, e-folding, expansion
//! rate, background pressure, and the derived constants (H, delta, varsigma,
//! q).
//!
//! The background is always evaluated analytically; it is never co-integrated
//! with the PDE, so decay fits are not contaminated by background drift.

use crate::error::{Error, Result};
use std::io::Write;

/// Parameters of the background family plus the derived constants.
#[derive(Debug, Clone, Copy)]
pub struct BackgroundParams {
    /// cosmological constant (> 0)
    pub lambda: f64,
    /// squared sound speed, in (0, 1/3)
    pub cs2: f64,
    /// initial uniform energy density (> 0)
    pub rho_bar: f64,
    /// de Sitter rate H = sqrt(lambda / 3)
    pub hubble: f64,
    /// initial pressure pbar = cs2 * rho_bar
    pub p_bar: f64,
    /// delta = 3 cs2
    pub delta: f64,
    /// varsigma = 3 (1 + cs2)
    pub varsigma: f64,
    /// decay weight q (see `q` in the norms); q <= (2/3) min(delta, 1-delta)
    pub q: f64,
    /// configured stand-in for the energy-lemma constant eta_min
    pub eta_min_proxy: f64,
}

impl BackgroundParams {
    pub fn new(lambda: f64, rho_bar: f64, cs2: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        if !(rho_bar > 0.0) {
            return Err(Error::InvalidParameter(format!("rho_bar must be > 0, got {rho_bar}")));
        }
        if !(cs2 > 0.0 && cs2 < 1.0 / 3.0) {
            return Err(Error::InvalidParameter(format!(
                "cs2 must lie in (0, 1/3), got {cs2}"
            )));
        }
        let delta = 3.0 * cs2;
        let eta_min_proxy = delta.min(1.0 - delta);
        Self::with_eta_min_proxy(lambda, rho_bar, cs2, eta_min_proxy)
    }

    /// Same, but with an explicit stand-in for eta_min; q becomes
    /// (2/3) min(eta_min_proxy, delta, 1 - delta).
    pub fn with_eta_min_proxy(
        lambda: f64,
        rho_bar: f64,
        cs2: f64,
        eta_min_proxy: f64,
    ) -> Result<Self> {
        if !(eta_min_proxy > 0.0) {
            return Err(Error::InvalidParameter("eta_min_proxy must be > 0".into()));
        }
        let delta = 3.0 * cs2;
        let q = (2.0 / 3.0) * eta_min_proxy.min(delta).min(1.0 - delta);
        Ok(BackgroundParams {
            lambda,
            cs2,
            rho_bar,
            hubble: (lambda / 3.0).sqrt(),
            p_bar: cs2 * rho_bar,
            delta,
            varsigma: 3.0 * (1.0 + cs2),
            q,
            eta_min_proxy,
        })
    }
}

/// The background scalars on one time slice.
#[derive(Debug, Clone, Copy)]
pub struct BackgroundState {
    pub t: f64,
    /// scale factor a(t), a(0) = 1
    pub a: f64,
    /// e-folding Omega = ln a
    pub omega_fold: f64,
    /// expansion rate omega = adot / a
    pub omega: f64,
    /// omega time derivative (from the closed-form identity)
    pub omega_dot: f64,
    /// background rescaled-pressure weight ptilde = e^{-varsigma Omega} pbar
    pub p_tilde: f64,
}

/// Closed-form scale factor
/// a(t) = { sinh(vs H t / 2) sqrt(rho/(3H^2) + 1) + cosh(vs H t / 2) }^{2/vs}.
pub fn scale_factor(params: &BackgroundParams, t: f64) -> f64 {
    let s = params.varsigma * params.hubble * t / 2.0;
    let amp = (params.rho_bar / (3.0 * params.hubble * params.hubble) + 1.0).sqrt();
    (s.sinh() * amp + s.cosh()).powf(2.0 / params.varsigma)
}

/// Right-hand side of the background ODE: adot = a sqrt(Lambda/3 + rho/(3 a^vs)).
pub fn friedmann_rhs(params: &BackgroundParams, a: f64) -> f64 {
    a * (params.lambda / 3.0 + params.rho_bar / (3.0 * a.powf(params.varsigma))).sqrt()
}

/// All background scalars at time t.
pub fn background_at(params: &BackgroundParams, t: f64) -> BackgroundState {
    let a = scale_factor(params, t);
    let omega_fold = a.ln();
    let omega = friedmann_rhs(params, a) / a;
    let p_tilde = (-params.varsigma * omega_fold).exp() * params.p_bar;
    let omega_dot = -(1.0 + params.cs2) / (2.0 * params.cs2) * p_tilde;
    BackgroundState { t, a, omega_fold, omega, omega_dot, p_tilde }
}

impl BackgroundState {
    /// Residual of 3 omega^2 - Lambda = p_tilde / cs2 (exact up to rounding).
    pub fn friedmann_residual(&self, params: &BackgroundParams) -> f64 {
        3.0 * self.omega * self.omega - params.lambda - self.p_tilde / params.cs2
    }
}

/// Emits the CSV table behind the `background` subcommand:
/// columns t,a,Omega,omega,p_tilde.
pub fn write_table<W: Write>(
    params: &BackgroundParams,
    t_max: f64,
    samples: usize,
    w: &mut W,
) -> Result<()> {
    if !(t_max > 0.0) || samples < 2 {
        return Err(Error::InvalidParameter(
            "background table needs t_max > 0 and samples >= 2".into(),
        ));
    }
    writeln!(w, "t,a,Omega,omega,p_tilde")?;
    for i in 0..samples {
        let t = t_max * i as f64 / (samples - 1) as f64;
        let s = background_at(params, t);
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            s.t, s.a, s.omega_fold, s.omega, s.p_tilde
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BackgroundParams {
        BackgroundParams::new(3.0, 3.0, 1.0 / 9.0).unwrap()
    }

    /// RK4 integration of the background ODE (independent oracle).
    pub(crate) fn rk4_scale_factor(params: &BackgroundParams, t: f64, steps: usize) -> f64 {
        let dt = t / steps as f64;
        let mut a = 1.0;
        for _ in 0..steps {
            let k1 = friedmann_rhs(params, a);
            let k2 = friedmann_rhs(params, a + 0.5 * dt * k1);
            let k3 = friedmann_rhs(params, a + 0.5 * dt * k2);
            let k4 = friedmann_rhs(params, a + dt * k3);
            a += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        a
    }

    #[test]
    fn a_of_zero_is_one() {
        assert_eq!(scale_factor(&params(), 0.0), 1.0);
    }

    #[test]
    fn vacuum_limit_is_pure_exponential() {
        // rho -> 0+: sinh + cosh combine to e^{Ht}
        let p = BackgroundParams::new(3.0, 1e-14, 0.2).unwrap();
        for t in [0.3, 1.0, 2.5] {
            let want = (p.hubble * t).exp();
            let got = scale_factor(&p, t);
            assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn closed_form_matches_rk4() {
        let p = params();
        let got = scale_factor(&p, 1.0);
        let want = rk4_scale_factor(&p, 1.0, 20000);
        assert!(
            ((got - want) / want).abs() < 1e-8,
            "closed form {got} vs RK4 {want}"
        );
    }

    #[test]
    fn lemma_bounds_hold() {
        let p = params();
        let amp = (p.rho_bar / (3.0 * p.hubble * p.hubble) + 1.0).sqrt();
        let a_big = (0.5 * (amp + 1.0)).powf(2.0 / p.varsigma);
        for i in 0..50 {
            let t = 10.0 * i as f64 / 49.0 / p.hubble;
            let a = scale_factor(&p, t);
            let e = (p.hubble * t).exp();
            assert!(a >= 0.5f64.powf(2.0 / p.varsigma) * e - 1e-12);
            assert!(a <= a_big * e + 1e-9 * a);
        }
    }

    #[test]
    fn friedmann_rhs_values() {
        let p = params();
        let want = (p.lambda / 3.0 + p.rho_bar / 3.0).sqrt();
        assert!((friedmann_rhs(&p, 1.0) - want).abs() < 1e-14);
        // large a: matter term vanished, rhs ~ H a
        let a = 1e8;
        assert!((friedmann_rhs(&p, a) / a - p.hubble).abs() < 1e-10);
        // an independent evaluation at a = 2 with varsigma = 10/3
        let p2 = BackgroundParams::new(3.0, 3.0, 1.0 / 9.0).unwrap();
        assert!((p2.varsigma - 10.0 / 3.0).abs() < 1e-14);
        let direct = 2.0 * (1.0 + 1.0 / (2.0f64.powf(10.0 / 3.0))).sqrt();
        assert!((friedmann_rhs(&p2, 2.0) - direct).abs() < 1e-13);
    }

    #[test]
    fn state_invariants() {
        let p = params();
        let s0 = background_at(&p, 0.0);
        assert_eq!(s0.a, 1.0);
        let want = (p.lambda / 3.0 + p.rho_bar / 3.0).sqrt();
        assert!((s0.omega - want).abs() < 1e-14);
        let mut prev = 0.0;
        for i in 0..60 {
            let t = 6.0 * i as f64 / 59.0;
            let s = background_at(&p, t);
            assert!(s.a > prev, "a strictly increasing");
            prev = s.a;
            assert!(s.omega >= p.hubble - 1e-12);
            assert!(s.omega <= (p.hubble * p.hubble + p.rho_bar / 3.0).sqrt() + 1e-12);
            assert!(s.friedmann_residual(&p).abs() < 1e-10 * (1.0 + p.lambda));
        }
    }

    #[test]
    fn omega_dot_matches_finite_differences() {
        let p = params();
        let eps = 1e-5;
        for t in [0.2, 1.0, 2.0] {
            let s = background_at(&p, t);
            let fd = (background_at(&p, t + eps).omega - background_at(&p, t - eps).omega)
                / (2.0 * eps);
            assert!(
                ((s.omega_dot - fd) / fd.abs().max(1e-30)).abs() < 1e-7,
                "t = {t}: analytic {} vs fd {}",
                s.omega_dot,
                fd
            );
        }
    }

    #[test]
    fn omega_minus_hubble_decays_at_rate_varsigma_h() {
        // fitted exponent of omega - H (and its first finite difference)
        // within 10% of varsigma * H
        let p = params();
        let ts: Vec<f64> = (0..40).map(|i| 1.0 + 4.0 * i as f64 / 39.0).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| background_at(&p, t).omega - p.hubble).collect();
        let rate = fit_log_slope(&ts, &vals);
        let want = -p.varsigma * p.hubble;
        assert!(
            (rate - want).abs() < 0.1 * want.abs(),
            "rate {rate} vs {want}"
        );
        // N = 1: finite differences of omega - H decay at the same rate
        let dvals: Vec<f64> = ts
            .iter()
            .map(|&t| {
                (background_at(&p, t + 1e-4).omega - background_at(&p, t - 1e-4).omega) / 2e-4
            })
            .map(f64::abs)
            .collect();
        let drate = fit_log_slope(&ts, &dvals);
        assert!(
            (drate - want).abs() < 0.1 * want.abs(),
            "d/dt rate {drate} vs {want}"
        );
    }

    fn fit_log_slope(ts: &[f64], vals: &[f64]) -> f64 {
        let n = ts.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (&t, &v) in ts.iter().zip(vals) {
            let y = v.abs().ln();
            sx += t;
            sy += y;
            sxx += t * t;
            sxy += t * y;
        }
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BackgroundParams::new(-1.0, 1.0, 0.1).is_err());
        assert!(BackgroundParams::new(3.0, 0.0, 0.1).is_err());
        assert!(BackgroundParams::new(3.0, 1.0, 0.34).is_err());
        let p = params();
        assert!(p.q <= (2.0 / 3.0) * p.delta.min(1.0 - p.delta) + 1e-15);
        assert!(p.delta > 0.0 && p.delta < 1.0);
        assert!(p.varsigma > 3.0 && p.varsigma < 4.0);
        assert!(p.p_bar > 0.0);
    }
}

//! Norms, energies, energy currents, constraint monitors, decay-rate fits
//! and asymptotic-limit extraction along a run.

use crate::background::{BackgroundParams, BackgroundState};
use crate::error::{Error, Result};
use crate::geometry::{constraint_residuals, GeometricData, GeometryCache};
use crate::grid::{Grid, ScalarField};
use crate::reduced::{self, Ctx, ErrorTerms};
use crate::state::FieldState;
use crate::tensor::{mat3_inv, Mat4, Vec4, SYM3};
use serde::{Deserialize, Serialize};

/// Sobolev order and energy constants.
///
/// The (gamma, delta) pairs default to the cross-term-cancelling choice
/// delta = beta + gamma * alpha for the damping coefficients
/// (alpha, beta) = (5, 6) and (3, 2) of the g00 / g0j wave equations, with
/// gamma = 1; the h-sector uses (0, 0). All are configurable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub order: usize,
    pub gamma00: f64,
    pub delta00: f64,
    pub gamma0s: f64,
    pub delta0s: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig { order: 3, gamma00: 1.0, delta00: 11.0, gamma0s: 1.0, delta0s: 5.0 }
    }
}

impl EnergyConfig {
    /// Positivity of the quadratic form in the building-block energy:
    /// delta |g^{00}| > gamma^2 (g^{00})^2 at every point.
    pub fn check_positivity(&self, cache: &GeometryCache) -> Result<()> {
        for (gamma, delta) in [(self.gamma00, self.delta00), (self.gamma0s, self.delta0s)] {
            if gamma < 0.0 || delta < 0.0 {
                return Err(Error::InvalidParameter("energy constants must be >= 0".into()));
            }
            if gamma == 0.0 {
                continue;
            }
            let mut worst = f64::INFINITY;
            for gi in cache.ginv.iter() {
                let g00_up = gi[0][0];
                worst = worst.min(delta * (-g00_up) - gamma * gamma * g00_up * g00_up);
            }
            if !(worst > 0.0) {
                return Err(Error::Diagnostics(format!(
                    "energy form lost positivity: margin {worst} for (gamma, delta) = ({gamma}, {delta})"
                )));
            }
        }
        Ok(())
    }
}

/// All multi-indices with |alpha| <= order, in a fixed deterministic order.
pub fn multi_indices(order: usize) -> Vec<[usize; 3]> {
    let mut v = Vec::new();
    for total in 0..=order {
        for a1 in (0..=total).rev() {
            for a2 in (0..=(total - a1)).rev() {
                v.push([a1, a2, total - a1 - a2]);
            }
        }
    }
    v
}

/// The Sobolev-norm block of one output time.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormBlock {
    pub s_g00: f64,
    pub s_g0s: f64,
    pub s_hss: f64,
    /// total metric norm
    pub s_g: f64,
    pub u_nm1: f64,
    pub s_fluid: f64,
    /// total norm
    pub q_n: f64,
}

/// Weighted Sobolev norms of the deviation from FLRW.
pub fn norms(
    grid: &Grid,
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    order: usize,
) -> Result<NormBlock> {
    let q = params.q;
    let om_f = bg.omega_fold;
    let n = grid.n();
    let hn = |f: &ScalarField| grid.sobolev_norm(f, order);
    let hn_shifted = |f: &ScalarField, shift: f64| {
        let mut g = f.clone();
        for v in g.values_mut() {
            *v += shift;
        }
        grid.sobolev_norm(&g, order)
    };
    // l2 combination of the three spatial first derivatives in H^m
    let dbar = |f: &ScalarField, m: usize| -> Result<f64> {
        let mut s = 0.0;
        for axis in 1..=3 {
            let d = grid.derivative(f, axis)?;
            s += grid.sobolev_norm(&d, m)?.powi(2);
        }
        Ok(s.sqrt())
    };
    let _ = n;

    let s_g00 = (q * om_f).exp() * hn(&state.k00)?
        + (q * om_f).exp() * hn_shifted(&state.g00, 1.0)?
        + ((q - 1.0) * om_f).exp() * dbar(&state.g00, order)?;

    let mut s_g0s = 0.0;
    for j in 0..3 {
        s_g0s += ((q - 1.0) * om_f).exp() * hn(&state.k0[j])?
            + ((q - 1.0) * om_f).exp() * hn(&state.g0[j])?
            + ((q - 2.0) * om_f).exp() * dbar(&state.g0[j], order)?;
    }

    let mut s_hss = 0.0;
    for (s, &(j, k)) in SYM3.iter().enumerate() {
        let mult = if j == k { 1.0 } else { 2.0 };
        let shifted = if j == k { -1.0 } else { 0.0 };
        let _ = shifted;
        s_hss += mult
            * ((q * om_f).exp() * hn(&state.kh[s])?
                + dbar(&state.h[s], order - 1)?
                + ((q - 1.0) * om_f).exp() * dbar(&state.h[s], order)?);
    }

    let mut u_sq = 0.0;
    let mut u_sq_top = 0.0;
    for j in 0..3 {
        u_sq += grid.sobolev_norm(&state.u[j], order - 1)?.powi(2);
        u_sq_top += hn(&state.u[j])?.powi(2);
    }
    let u_nm1 = ((1.0 + q) * om_f).exp() * u_sq.sqrt();
    let s_fluid = om_f.exp() * u_sq_top.sqrt() + hn_shifted(&state.p, -params.p_bar)?;

    let s_g = s_g00 + s_g0s + s_hss;
    Ok(NormBlock { s_g00, s_g0s, s_hss, s_g, u_nm1, s_fluid, q_n: s_g + s_fluid + u_nm1 })
}

/// The metric-energy block.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricEnergies {
    pub e_g00: f64,
    pub e_g0s: f64,
    pub e_hss: f64,
    pub e_g: f64,
}

/// Building-block energy of one scalar field:
/// E^2 = (1/2) int { -g^{00} (dt v)^2 + g^{ab} (d_a v)(d_b v)
///                   - 2 gamma H g^{00} v dt v + delta H^2 v^2 }.
fn building_block_sq(
    grid: &Grid,
    cache: &GeometryCache,
    v: Option<&ScalarField>,
    dt_v: &ScalarField,
    dv: &[ScalarField; 3],
    gamma: f64,
    delta: f64,
    hubble: f64,
) -> f64 {
    let h3 = grid.spacing().powi(3);
    let mut total = 0.0;
    for idx in 0..dt_v.len() {
        let gi = &cache.ginv[idx];
        let dt = dt_v.values()[idx];
        let mut s = -gi[0][0] * dt * dt;
        for a in 0..3 {
            for b in 0..3 {
                s += gi[a + 1][b + 1] * dv[a].values()[idx] * dv[b].values()[idx];
            }
        }
        if let Some(vf) = v {
            let vv = vf.values()[idx];
            s += -2.0 * gamma * hubble * gi[0][0] * vv * dt;
            s += delta * hubble * hubble * vv * vv;
        }
        total += s;
    }
    0.5 * total * h3
}

/// Energies of the metric sectors per the weighted multi-index sums;
/// fails when the quadratic form loses positivity.
pub fn metric_energies(
    grid: &Grid,
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    cache: &GeometryCache,
    cfg: &EnergyConfig,
) -> Result<MetricEnergies> {
    cfg.check_positivity(cache)?;
    let q = params.q;
    let hubble = params.hubble;
    let om_f = bg.omega_fold;
    let alphas = multi_indices(cfg.order);

    // one sector: sum over alpha of weight * E^2[d_alpha v]
    let sector = |v: &ScalarField,
                  dt_v: &ScalarField,
                  gamma: f64,
                  delta: f64,
                  weight: f64,
                  with_v: bool,
                  c_alpha_term: bool|
     -> Result<f64> {
        let v_hat = grid.fft3(v);
        let dt_hat = grid.fft3(dt_v);
        let mut total = 0.0;
        for &al in alphas.iter() {
            let va = grid.multi_derivative_from_fft(&v_hat, al);
            let dt_va = grid.multi_derivative_from_fft(&dt_hat, al);
            let dva = [
                grid.multi_derivative_from_fft(&v_hat, [al[0] + 1, al[1], al[2]]),
                grid.multi_derivative_from_fft(&v_hat, [al[0], al[1] + 1, al[2]]),
                grid.multi_derivative_from_fft(&v_hat, [al[0], al[1], al[2] + 1]),
            ];
            let vslot = if with_v { Some(&va) } else { None };
            total += weight * building_block_sq(grid, cache, vslot, &dt_va, &dva, gamma, delta, hubble);
            if c_alpha_term && al != [0, 0, 0] {
                // + (1/2) c_alpha H^2 int (d_alpha v)^2, c_alpha = 1 for |alpha| > 0
                total += 0.5 * hubble * hubble * grid.l2_norm(&va).powi(2);
            }
        }
        Ok(total)
    };

    // g00 + 1 sector
    let mut g00p1 = state.g00.clone();
    for v in g00p1.values_mut() {
        *v += 1.0;
    }
    let e_g00_sq = sector(
        &g00p1,
        &state.k00,
        cfg.gamma00,
        cfg.delta00,
        (2.0 * q * om_f).exp(),
        true,
        false,
    )?;

    let mut e_g0s_sq = 0.0;
    for j in 0..3 {
        e_g0s_sq += sector(
            &state.g0[j],
            &state.k0[j],
            cfg.gamma0s,
            cfg.delta0s,
            (2.0 * (q - 1.0) * om_f).exp(),
            true,
            false,
        )?;
    }

    let mut e_hss_sq = 0.0;
    for (s, &(j, k)) in SYM3.iter().enumerate() {
        let mult = if j == k { 1.0 } else { 2.0 };
        // (0,0) constants: the v-slot drops out of the quadratic form; the
        // c_alpha H^2 (d_alpha h)^2 compensation carries no e^{2q Omega}
        let main = sector(
            &state.h[s],
            &state.kh[s],
            0.0,
            0.0,
            (2.0 * q * om_f).exp(),
            false,
            false,
        )?;
        let comp = sector(&state.h[s], &state.kh[s], 0.0, 0.0, 1.0, false, true)?
            - sector(&state.h[s], &state.kh[s], 0.0, 0.0, 1.0, false, false)?;
        e_hss_sq += mult * (main + comp);
    }

    let e_g00 = e_g00_sq.max(0.0).sqrt();
    let e_g0s = e_g0s_sq.max(0.0).sqrt();
    let e_hss = e_hss_sq.max(0.0).sqrt();
    Ok(MetricEnergies { e_g00, e_g0s, e_hss, e_g: e_g00 + e_g0s + e_hss })
}

/// Fluid energy from the energy current: E_N^2 = sum_alpha int J^0[d_alpha W].
/// Also returns the per-multi-index integrals and the pointwise minimum of
/// J^0 over all variations (coercivity monitor).
pub fn fluid_energy(
    grid: &Grid,
    state: &FieldState,
    params: &BackgroundParams,
    cache: &GeometryCache,
    order: usize,
) -> Result<(f64, Vec<([usize; 3], f64)>, f64)> {
    let alphas = multi_indices(order);
    let mut p_dev = state.p.clone();
    for v in p_dev.values_mut() {
        *v -= params.p_bar;
    }
    let p_hat = grid.fft3(&p_dev);
    let u_hat = [
        grid.fft3(&state.u[0]),
        grid.fft3(&state.u[1]),
        grid.fft3(&state.u[2]),
    ];
    let e2o_omf = cache.bg.omega_fold;
    let _ = e2o_omf;
    let h3 = grid.spacing().powi(3);
    let mut per_alpha = Vec::new();
    let mut total = 0.0;
    let mut min_j0 = f64::INFINITY;
    for &al in alphas.iter() {
        let pd = grid.multi_derivative_from_fft(&p_hat, al);
        let ud = [
            grid.multi_derivative_from_fft(&u_hat[0], al),
            grid.multi_derivative_from_fft(&u_hat[1], al),
            grid.multi_derivative_from_fft(&u_hat[2], al),
        ];
        let mut integral = 0.0;
        for idx in 0..pd.len() {
            let j0 = current_j0_at(state, params, cache, idx, pd.values()[idx], [
                ud[0].values()[idx],
                ud[1].values()[idx],
                ud[2].values()[idx],
            ]);
            min_j0 = min_j0.min(j0);
            integral += j0;
        }
        let integral = integral * h3;
        total += integral;
        per_alpha.push((al, integral));
    }
    if total < 0.0 && total > -1e-14 {
        total = 0.0;
    }
    if total < 0.0 {
        return Err(Error::Diagnostics(format!(
            "fluid energy lost coercivity: E^2 = {total}"
        )));
    }
    Ok((total.sqrt(), per_alpha, min_j0))
}

/// J^0 of one variation at one point.
#[inline]
fn current_j0_at(
    state: &FieldState,
    params: &BackgroundParams,
    cache: &GeometryCache,
    idx: usize,
    pdot: f64,
    udot_sp: [f64; 3],
) -> f64 {
    let cs2 = params.cs2;
    let p = state.p.values()[idx];
    let cp = (1.0 + cs2) * p;
    let u0 = cache.u0[idx];
    let ul = &cache.u_lower[idx];
    let udot0 = -(ul[1] * udot_sp[0] + ul[2] * udot_sp[1] + ul[3] * udot_sp[2]) / ul[0];
    let udot = [udot0, udot_sp[0], udot_sp[1], udot_sp[2]];
    let e2o = (2.0 * cache.bg.omega_fold).exp();
    let g = state.metric_at(idx, e2o);
    let mut q = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            q += g[a][b] * udot[a] * udot[b];
        }
    }
    u0 / cp * pdot * pdot + 2.0 * udot0 * pdot + cp * u0 / cs2 * q
}

/// The equations-of-variation data for one multi-index: the variation
/// fields, the completed udot^0, and the inhomogeneities.
pub struct VariationBundle {
    pub alpha: [usize; 3],
    /// variation of P - pbar
    pub p_dot: ScalarField,
    /// variations of u^j
    pub u_dot: [ScalarField; 3],
    /// udot^0 = -(1/u_0) u_a udot^a
    pub u_dot0: ScalarField,
    /// inhomogeneity for the pressure variation
    pub f_inhom: ScalarField,
    /// inhomogeneities G^j
    pub g_inhom: [ScalarField; 3],
    /// inhomogeneity G^0
    pub g0_inhom: ScalarField,
}

impl VariationBundle {
    /// Builds the bundle on one slice: the variations are d_alpha W, and the
    /// inhomogeneities follow the commutator decomposition
    /// b_{delta alpha} = { A^0 d_alpha[(A^0)^{-1} b] - d_alpha b }
    ///                   + A^0 d_alpha[(A^0)^{-1} b_delta]
    ///                   + A^0 { (A^0)^{-1} A^a d_a d_alpha W
    ///                           - d_alpha[(A^0)^{-1} A^a d_a W] }.
    pub fn build(
        grid: &Grid,
        state: &FieldState,
        params: &BackgroundParams,
        bg: &BackgroundState,
        cache: &GeometryCache,
        errors: &ErrorTerms,
        alpha: [usize; 3],
    ) -> Result<VariationBundle> {
        let n = grid.n();
        let total = n * n * n;
        let mut p_dev = state.p.clone();
        for v in p_dev.values_mut() {
            *v -= params.p_bar;
        }
        let w_fields = [&p_dev, &state.u[0], &state.u[1], &state.u[2]];
        let w_hats: Vec<_> = w_fields.iter().map(|f| grid.fft3(f)).collect();

        // pointwise matrices and product fields
        let mut f1 = [grid.zeros(), grid.zeros(), grid.zeros(), grid.zeros()];
        let mut f2 = f1.clone();
        let mut f3 = f1.clone();
        let mut b = f1.clone();
        let mut a0_store: Vec<Mat4> = vec![[[0.0; 4]; 4]; total];
        let mut a0inv_store: Vec<Mat4> = vec![[[0.0; 4]; 4]; total];
        let mut asp_store: Vec<[Mat4; 3]> = vec![[[[0.0; 4]; 4]; 3]; total];
        for idx in 0..total {
            let c = Ctx::load(state, params, bg, cache, idx);
            let a = reduced::fluid_matrices_point(&c);
            let (a0inv, _) = reduced::a0_inverse_point(&c, reduced::Mutation::None);
            let bv: Vec4 = [
                0.0,
                (params.delta - 2.0) * bg.omega * c.u[1],
                (params.delta - 2.0) * bg.omega * c.u[2],
                (params.delta - 2.0) * bg.omega * c.u[3],
            ];
            let bd: Vec4 = [
                errors.fluid.values()[idx],
                errors.fluid_uj[0].values()[idx],
                errors.fluid_uj[1].values()[idx],
                errors.fluid_uj[2].values()[idx],
            ];
            // advective term A^a d_a W
            let mut adv = [0.0; 4];
            for sp in 1..4 {
                let daw = [
                    cache.derivs.d_p[sp - 1].values()[idx],
                    cache.derivs.d_u[0][sp - 1].values()[idx],
                    cache.derivs.d_u[1][sp - 1].values()[idx],
                    cache.derivs.d_u[2][sp - 1].values()[idx],
                ];
                for r in 0..4 {
                    for cc in 0..4 {
                        adv[r] += a[sp][r][cc] * daw[cc];
                    }
                }
            }
            for r in 0..4 {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                let mut s3 = 0.0;
                for cc in 0..4 {
                    s1 += a0inv[r][cc] * bv[cc];
                    s2 += a0inv[r][cc] * bd[cc];
                    s3 += a0inv[r][cc] * adv[cc];
                }
                f1[r].values_mut()[idx] = s1;
                f2[r].values_mut()[idx] = s2;
                f3[r].values_mut()[idx] = s3;
                b[r].values_mut()[idx] = bv[r];
            }
            a0_store[idx] = a[0];
            a0inv_store[idx] = a0inv;
            asp_store[idx] = [a[1], a[2], a[3]];
        }

        let dal = |f: &ScalarField| -> ScalarField {
            grid.multi_derivative_from_fft(&grid.fft3(f), alpha)
        };
        let da_f1: Vec<ScalarField> = f1.iter().map(&dal).collect();
        let da_f2: Vec<ScalarField> = f2.iter().map(&dal).collect();
        let da_f3: Vec<ScalarField> = f3.iter().map(&dal).collect();
        let da_b: Vec<ScalarField> = b.iter().map(&dal).collect();

        // d_a d_alpha W (spectral)
        let mut da_dal_w = Vec::new();
        for hat in w_hats.iter() {
            let mut per_axis = Vec::new();
            for axis in 0..3 {
                let mut al = alpha;
                al[axis] += 1;
                per_axis.push(grid.multi_derivative_from_fft(hat, al));
            }
            da_dal_w.push(per_axis);
        }

        // variations d_alpha W and the bundle outputs
        let p_dot = grid.multi_derivative_from_fft(&w_hats[0], alpha);
        let u_dot = [
            grid.multi_derivative_from_fft(&w_hats[1], alpha),
            grid.multi_derivative_from_fft(&w_hats[2], alpha),
            grid.multi_derivative_from_fft(&w_hats[3], alpha),
        ];

        let mut f_inhom = grid.zeros();
        let mut g_inhom = [grid.zeros(), grid.zeros(), grid.zeros()];
        let mut g0_inhom = grid.zeros();
        let mut u_dot0 = grid.zeros();
        for idx in 0..total {
            let a0 = &a0_store[idx];
            let a0inv = &a0inv_store[idx];
            // commutator piece: (A^0)^{-1} A^a d_a d_alpha W - d_alpha f3
            let mut comm = [0.0; 4];
            for sp in 0..3 {
                let v = [
                    da_dal_w[0][sp].values()[idx],
                    da_dal_w[1][sp].values()[idx],
                    da_dal_w[2][sp].values()[idx],
                    da_dal_w[3][sp].values()[idx],
                ];
                let asp = &asp_store[idx][sp];
                let mut av = [0.0; 4];
                for r in 0..4 {
                    for cc in 0..4 {
                        av[r] += asp[r][cc] * v[cc];
                    }
                }
                for r in 0..4 {
                    for cc in 0..4 {
                        comm[r] += a0inv[r][cc] * av[cc];
                    }
                }
            }
            let mut bda = [0.0; 4];
            for r in 0..4 {
                let mut s = 0.0;
                for cc in 0..4 {
                    s += a0[r][cc]
                        * (da_f1[cc].values()[idx] + da_f2[cc].values()[idx]
                            + (comm[cc] - da_f3[cc].values()[idx]));
                }
                bda[r] = s - da_b[r].values()[idx];
            }
            f_inhom.values_mut()[idx] = bda[0];
            for j in 0..3 {
                g_inhom[j].values_mut()[idx] = bda[j + 1];
            }

            // udot^0 and G^0
            let ul = &cache.u_lower[idx];
            let ud = [
                u_dot[0].values()[idx],
                u_dot[1].values()[idx],
                u_dot[2].values()[idx],
            ];
            let udot0 = -(ul[1] * ud[0] + ul[2] * ud[1] + ul[3] * ud[2]) / ul[0];
            u_dot0.values_mut()[idx] = udot0;
            // G^0 = -[u^nu d_nu (u_a / u_0)] udot^a
            //       - (delta - 2) omega (1/u_0) u_a udot^a - (1/u_0) u_a G^a
            let c = Ctx::load(state, params, bg, cache, idx);
            let dtu0 = errors.dt_u0.values()[idx];
            let dtuj = [
                (params.delta - 2.0) * bg.omega * c.u[1] + errors.dt_uj[0].values()[idx],
                (params.delta - 2.0) * bg.omega * c.u[2] + errors.dt_uj[1].values()[idx],
                (params.delta - 2.0) * bg.omega * c.u[3] + errors.dt_uj[2].values()[idx],
            ];
            let du_full = full_velocity_derivs(&c, dtu0, dtuj, cache, idx);
            let mut g0 = 0.0;
            for a in 1..4 {
                // u^nu d_nu (u_a / u_0)
                let mut transport = 0.0;
                for nu in 0..4 {
                    // d_nu u_mu = (d_nu g_{mu lam}) u^lam + g_{mu lam} d_nu u^lam
                    let mut d_ul_a = 0.0;
                    let mut d_ul_0 = 0.0;
                    for lam in 0..4 {
                        d_ul_a += c.dg[nu][a][lam] * c.u[lam] + c.g[a][lam] * du_full[nu][lam];
                        d_ul_0 += c.dg[nu][0][lam] * c.u[lam] + c.g[0][lam] * du_full[nu][lam];
                    }
                    let d_ratio = d_ul_a / ul[0] - ul[a] * d_ul_0 / (ul[0] * ul[0]);
                    transport += c.u[nu] * d_ratio;
                }
                g0 += -transport * ud[a - 1];
            }
            let uad: f64 = (1..4).map(|a| ul[a] * ud[a - 1]).sum();
            g0 += -(params.delta - 2.0) * bg.omega * uad / ul[0];
            let uag: f64 = (1..4).map(|a| ul[a] * g_inhom[a - 1].values()[idx]).sum();
            g0 += -uag / ul[0];
            g0_inhom.values_mut()[idx] = g0;
        }

        Ok(VariationBundle {
            alpha,
            p_dot,
            u_dot,
            u_dot0,
            f_inhom,
            g_inhom,
            g0_inhom,
        })
    }
}

/// Full coordinate derivatives du[nu][lam] = d_nu u^lam at one point, using
/// the evolution equations for the time derivatives and the differentiated
/// normalization for d_a u^0.
pub(crate) fn full_velocity_derivs(
    c: &Ctx,
    dt_u0: f64,
    dt_uj: [f64; 3],
    _cache: &GeometryCache,
    _idx: usize,
) -> [[f64; 4]; 4] {
    let mut du = [[0.0; 4]; 4];
    du[0][0] = dt_u0;
    for j in 0..3 {
        du[0][j + 1] = dt_uj[j];
    }
    for a in 1..4 {
        du[a][0] = reduced::da_u0(c, a);
        for j in 1..4 {
            du[a][j] = c.du[a - 1][j - 1];
        }
    }
    du
}

/// L^1 residual of the energy-current divergence identity for the variation
/// d_alpha W, with dt J^0 by centered differences across three uniformly
/// spaced snapshots and the closed-form right-hand side at the middle slice.
pub fn divergence_residual(
    grid: &Grid,
    states: &[FieldState; 3],
    params: &BackgroundParams,
    alpha: [usize; 3],
) -> Result<f64> {
    let dt1 = states[1].t - states[0].t;
    let dt2 = states[2].t - states[1].t;
    if (dt1 - dt2).abs() > 1e-10 * dt1.abs().max(dt2.abs()) || dt1 <= 0.0 {
        return Err(Error::Diagnostics(format!(
            "divergence residual needs uniformly spaced snapshots, got dt = {dt1}, {dt2}"
        )));
    }
    let n = grid.n();
    let total = n * n * n;

    // J^0 on the outer slices
    let j0_field = |state: &FieldState| -> Result<ScalarField> {
        let bg = crate::background::background_at(params, state.t);
        let cache = GeometryCache::build(grid, state, params, &bg)?;
        let mut p_dev = state.p.clone();
        for v in p_dev.values_mut() {
            *v -= params.p_bar;
        }
        let pd = grid.multi_derivative_from_fft(&grid.fft3(&p_dev), alpha);
        let ud = [
            grid.multi_derivative_from_fft(&grid.fft3(&state.u[0]), alpha),
            grid.multi_derivative_from_fft(&grid.fft3(&state.u[1]), alpha),
            grid.multi_derivative_from_fft(&grid.fft3(&state.u[2]), alpha),
        ];
        let mut out = grid.zeros();
        for idx in 0..total {
            out.values_mut()[idx] = current_j0_at(state, params, &cache, idx, pd.values()[idx], [
                ud[0].values()[idx],
                ud[1].values()[idx],
                ud[2].values()[idx],
            ]);
        }
        Ok(out)
    };
    let j0_minus = j0_field(&states[0])?;
    let j0_plus = j0_field(&states[2])?;

    // middle slice: spatial current, RHS
    let state = &states[1];
    let bg = crate::background::background_at(params, state.t);
    let cache = GeometryCache::build(grid, state, params, &bg)?;
    let errors = reduced::assemble_error_terms(state, params, &bg, &cache)?;
    let bundle = VariationBundle::build(grid, state, params, &bg, &cache, &errors, alpha)?;

    // J^a fields
    let mut ja = [grid.zeros(), grid.zeros(), grid.zeros()];
    let cs2 = params.cs2;
    let e2o = (2.0 * bg.omega_fold).exp();
    for idx in 0..total {
        let p = state.p.values()[idx];
        let cp = (1.0 + cs2) * p;
        let pdot = bundle.p_dot.values()[idx];
        let udot = [
            bundle.u_dot0.values()[idx],
            bundle.u_dot[0].values()[idx],
            bundle.u_dot[1].values()[idx],
            bundle.u_dot[2].values()[idx],
        ];
        let g = state.metric_at(idx, e2o);
        let mut q = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                q += g[a][b] * udot[a] * udot[b];
            }
        }
        for sp in 0..3 {
            let usp = state.u[sp].values()[idx];
            ja[sp].values_mut()[idx] =
                usp / cp * pdot * pdot + 2.0 * udot[sp + 1] * pdot + cp / cs2 * usp * q;
        }
    }
    let mut div_spatial = grid.zeros();
    for sp in 0..3 {
        let d = grid.derivative(&ja[sp], sp + 1)?;
        div_spatial.axpy(1.0, &d);
    }

    // RHS at the middle slice
    let mut residual_l1 = 0.0;
    let h3 = grid.spacing().powi(3);
    let inv_2dt = 1.0 / (2.0 * dt1);
    for idx in 0..total {
        let c = Ctx::load(state, params, &bg, &cache, idx);
        let cp = (1.0 + cs2) * c.p;
        let big = cp / cs2;
        let om = bg.omega;
        let dec = params.delta;
        let dt_p = errors.dt_p.values()[idx];
        let dt_u0 = errors.dt_u0.values()[idx];
        let dt_uj = [
            (dec - 2.0) * om * c.u[1] + errors.dt_uj[0].values()[idx],
            (dec - 2.0) * om * c.u[2] + errors.dt_uj[1].values()[idx],
            (dec - 2.0) * om * c.u[3] + errors.dt_uj[2].values()[idx],
        ];
        let du = full_velocity_derivs(&c, dt_u0, dt_uj, &cache, idx);
        // d_mu u_lam
        let mut dul = [[0.0; 4]; 4];
        for nu in 0..4 {
            for m in 0..4 {
                let mut s = 0.0;
                for lam in 0..4 {
                    s += c.dg[nu][m][lam] * c.u[lam] + c.g[m][lam] * du[nu][lam];
                }
                dul[nu][m] = s;
            }
        }
        // dP in all four directions
        let dp4 = [dt_p, c.dp[0], c.dp[1], c.dp[2]];
        let pdot = bundle.p_dot.values()[idx];
        let udot = [
            bundle.u_dot0.values()[idx],
            bundle.u_dot[0].values()[idx],
            bundle.u_dot[1].values()[idx],
            bundle.u_dot[2].values()[idx],
        ];
        let f_in = bundle.f_inhom.values()[idx];
        let g_in = [
            bundle.g0_inhom.values()[idx],
            bundle.g_inhom[0].values()[idx],
            bundle.g_inhom[1].values()[idx],
            bundle.g_inhom[2].values()[idx],
        ];
        let mut qq = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                qq += c.g[a][b] * udot[a] * udot[b];
            }
        }

        let mut rhs = 0.0;
        // (d_mu [u^mu / ((1+c^2) P)]) Pdot^2, mu = 0 then spatial
        for mu in 0..4 {
            let d_ratio = du[mu][mu] / cp - c.u[mu] * (1.0 + cs2) * dp4[mu] / (cp * cp);
            rhs += d_ratio * pdot * pdot;
        }
        // (d_mu [(1+c^2) P u^mu / c^2]) (g udot udot)
        for mu in 0..4 {
            let d_cpu = (1.0 + cs2) / cs2 * (dp4[mu] * c.u[mu] + c.p * du[mu][mu]);
            rhs += d_cpu * qq;
        }
        // spatial metric-derivative quadratics
        for a in 1..4 {
            rhs += big * c.u[a] * c.dg[a][0][0] * udot[0] * udot[0];
            for b in 1..4 {
                rhs += 2.0 * big * c.u[a] * c.dg[a][0][b] * udot[0] * udot[b];
            }
            for l in 1..4 {
                for m in 1..4 {
                    rhs += big * c.u[a] * c.dg[a][l][m] * udot[l] * udot[m];
                }
            }
        }
        // time metric-derivative quadratics
        rhs += big * c.u[0] * c.dg[0][0][0] * udot[0] * udot[0];
        for a in 1..4 {
            rhs += 2.0 * big * c.u[0] * c.dg[0][0][a] * udot[0] * udot[a];
        }
        for a in 1..4 {
            for b in 1..4 {
                rhs += big * (c.u[0] - 1.0) * c.dg[0][a][b] * udot[a] * udot[b];
            }
        }
        // -2 (dt [u_a / u_0]) udot^a Pdot
        for a in 1..4 {
            let dt_ratio = dul[0][a] / c.ul[0] - c.ul[a] * dul[0][0] / (c.ul[0] * c.ul[0]);
            rhs += -2.0 * dt_ratio * udot[a] * pdot;
        }
        // (dt g_{ab} - 2 omega g_{ab}) and the damping quadratic
        for a in 1..4 {
            for b in 1..4 {
                rhs += big * (c.dg[0][a][b] - 2.0 * om * c.g[a][b]) * udot[a] * udot[b];
                rhs += 2.0 * big * (dec - 1.0) * om * c.g[a][b] * udot[a] * udot[b];
            }
        }
        rhs += 2.0 * f_in / cp * pdot;
        // inhomogeneity block (symmetric form) plus the shift-sector damping
        // quadratic that the symmetric rewriting requires
        for a in 0..4 {
            for b in 0..4 {
                rhs += 2.0 * big * c.g[a][b] * g_in[a] * udot[b];
            }
        }
        for b in 1..4 {
            rhs += 2.0 * big * (dec - 2.0) * om * c.g[0][b] * udot[0] * udot[b];
        }

        let lhs = (j0_plus.values()[idx] - j0_minus.values()[idx]) * inv_2dt
            + div_spatial.values()[idx];
        residual_l1 += (lhs - rhs).abs();
    }
    Ok(residual_l1 * h3)
}

/// Least-squares slope of log(value) against t over [window.0, window.1].
/// Returns (rate, r_squared).
pub fn fit_decay_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .cloned()
        .collect();
    if pts.len() < 3 {
        return Err(Error::Diagnostics(format!(
            "decay fit needs >= 3 samples in the window, got {}",
            pts.len()
        )));
    }
    for &(_, v) in &pts {
        if !(v > 0.0) {
            return Err(Error::NonPositiveSeries(v));
        }
    }
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, v) in &pts {
        let y = v.ln();
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
        syy += y * y;
    }
    let denom = n * sxx - sx * sx;
    let rate = (n * sxy - sx * sy) / denom;
    let ss_tot = syy - sy * sy / n;
    let intercept = (sy - rate * sx) / n;
    let mut ss_res = 0.0;
    for &(t, v) in &pts {
        let e = v.ln() - (intercept + rate * t);
        ss_res += e * e;
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((rate, r2))
}

/// Extracted limits and convergence evidence.
pub struct Asymptotics {
    /// limit of h_jk (packed symmetric)
    pub h_inf: [ScalarField; 6],
    /// limit of e^{(2 - delta) Omega} u^j
    pub u_inf: [ScalarField; 3],
    /// limit of P
    pub p_inf: ScalarField,
    /// sup norms of the last two successive differences per group (h, u, P)
    pub cauchy_h: (f64, f64),
    pub cauchy_u: (f64, f64),
    pub cauchy_p: (f64, f64),
}

/// Estimates the late-time limits from the last three uniformly spaced
/// snapshots by pointwise Aitken extrapolation (falling back to the last
/// value where the increments degenerate).
pub fn extract_asymptotics(
    snapshots: &[FieldState],
    params: &BackgroundParams,
) -> Result<Asymptotics> {
    if snapshots.len() < 3 {
        return Err(Error::Diagnostics("need at least 3 snapshots".into()));
    }
    let s = &snapshots[snapshots.len() - 3..];
    let t_last = s[2].t;
    if params.hubble * t_last < 5.0 {
        return Err(Error::Diagnostics(format!(
            "run too short for asymptotics: H t = {} < 5",
            params.hubble * t_last
        )));
    }
    let n = s[2].n();
    let aitken = |f0: &ScalarField, f1: &ScalarField, f2: &ScalarField| -> ScalarField {
        let mut out = f2.clone();
        for idx in 0..out.len() {
            let d1 = f1.values()[idx] - f0.values()[idx];
            let d2 = f2.values()[idx] - f1.values()[idx];
            let den = d2 - d1;
            let scale = f2.values()[idx].abs().max(1.0);
            if den.abs() > 1e-13 * scale {
                out.values_mut()[idx] = f2.values()[idx] - d2 * d2 / den;
            }
        }
        out
    };
    let weighted_u = |st: &FieldState, j: usize| -> ScalarField {
        let bg = crate::background::background_at(params, st.t);
        let w = ((2.0 - params.delta) * bg.omega_fold).exp();
        let mut f = st.u[j].clone();
        f.scale(w);
        f
    };
    let mut h_inf: [ScalarField; 6] = core::array::from_fn(|_| ScalarField::zeros(n));
    for sy in 0..6 {
        h_inf[sy] = aitken(&s[0].h[sy], &s[1].h[sy], &s[2].h[sy]);
    }
    let mut u_inf: [ScalarField; 3] = core::array::from_fn(|_| ScalarField::zeros(n));
    for j in 0..3 {
        u_inf[j] = aitken(&weighted_u(&s[0], j), &weighted_u(&s[1], j), &weighted_u(&s[2], j));
    }
    let p_inf = aitken(&s[0].p, &s[1].p, &s[2].p);

    let diff_sup = |a: &ScalarField, b: &ScalarField| -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let mut ch = (0.0f64, 0.0f64);
    for sy in 0..6 {
        ch.0 = ch.0.max(diff_sup(&s[1].h[sy], &s[0].h[sy]));
        ch.1 = ch.1.max(diff_sup(&s[2].h[sy], &s[1].h[sy]));
    }
    let mut cu = (0.0f64, 0.0f64);
    for j in 0..3 {
        cu.0 = cu.0.max(diff_sup(&weighted_u(&s[1], j), &weighted_u(&s[0], j)));
        cu.1 = cu.1.max(diff_sup(&weighted_u(&s[2], j), &weighted_u(&s[1], j)));
    }
    let cp = (diff_sup(&s[1].p, &s[0].p), diff_sup(&s[2].p, &s[1].p));
    Ok(Asymptotics { h_inf, u_inf, p_inf, cauchy_h: ch, cauchy_u: cu, cauchy_p: cp })
}

/// Everything tracked at one output time. The CSV schema is stable:
/// t,S_g00,S_g0s,S_hss,U_Nm1,S_fluid,Q_N,E_g00,E_g0s,E_hss,E_fluid,E_total,
/// gauge_sup,gauss_L2,codazzi_L2,minP,min_eig_h,equiv_ratio
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub s_g00: f64,
    pub s_g0s: f64,
    pub s_hss: f64,
    pub u_nm1: f64,
    pub s_fluid: f64,
    pub q_n: f64,
    pub e_g00: f64,
    pub e_g0s: f64,
    pub e_hss: f64,
    pub e_fluid: f64,
    pub e_total: f64,
    pub gauge_sup: f64,
    pub gauss_l2: f64,
    pub codazzi_l2: f64,
    pub min_p: f64,
    pub min_eig_h: f64,
    pub equiv_ratio: f64,
    /// pointwise minimum of J^0 over all variations (coercivity monitor;
    /// not part of the CSV schema)
    pub min_j0: f64,
    /// sup norm of the velocity components (handy for rate fits; not part of
    /// the CSV schema)
    pub sup_u: f64,
}

pub const CSV_HEADER: &str = "t,S_g00,S_g0s,S_hss,U_Nm1,S_fluid,Q_N,E_g00,E_g0s,E_hss,E_fluid,E_total,gauge_sup,gauss_L2,codazzi_L2,minP,min_eig_h,equiv_ratio";

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            self.t,
            self.s_g00,
            self.s_g0s,
            self.s_hss,
            self.u_nm1,
            self.s_fluid,
            self.q_n,
            self.e_g00,
            self.e_g0s,
            self.e_hss,
            self.e_fluid,
            self.e_total,
            self.gauge_sup,
            self.gauss_l2,
            self.codazzi_l2,
            self.min_p,
            self.min_eig_h,
            self.equiv_ratio
        )
    }

    /// Computes the whole record on one slice.
    pub fn compute(
        grid: &Grid,
        state: &FieldState,
        params: &BackgroundParams,
        bg: &BackgroundState,
        cfg: &EnergyConfig,
    ) -> Result<DiagnosticsRecord> {
        let cache = GeometryCache::build(grid, state, params, bg)?;
        let nb = norms(grid, state, params, bg, cfg.order)?;
        let me = metric_energies(grid, state, params, bg, &cache, cfg)?;
        let (e_fluid, _, min_j0) = fluid_energy(grid, state, params, &cache, cfg.order)?;
        let e_total = me.e_g + e_fluid + nb.u_nm1;
        let gauge_sup = cache.gauge_sup();
        let data = slice_geometric_data(grid, state, params, bg, &cache)?;
        let (gauss, codazzi) = constraint_residuals(grid, &data, params)?;
        let gauss_l2 = grid.l2_norm(&gauss);
        let codazzi_l2 = codazzi.iter().map(|c| grid.l2_norm(c).powi(2)).sum::<f64>().sqrt();
        let equiv_ratio = if e_total < 1e-13 && nb.q_n < 1e-13 {
            1.0
        } else {
            e_total / nb.q_n
        };
        let sup_u = state.u.iter().fold(0.0f64, |m, f| m.max(f.sup_norm()));
        Ok(DiagnosticsRecord {
            t: state.t,
            s_g00: nb.s_g00,
            s_g0s: nb.s_g0s,
            s_hss: nb.s_hss,
            u_nm1: nb.u_nm1,
            s_fluid: nb.s_fluid,
            q_n: nb.q_n,
            e_g00: me.e_g00,
            e_g0s: me.e_g0s,
            e_hss: me.e_hss,
            e_fluid,
            e_total,
            gauge_sup,
            gauss_l2,
            codazzi_l2,
            min_p: state.min_pressure(),
            min_eig_h: state.min_eig_h(),
            equiv_ratio,
            min_j0,
            sup_u,
        })
    }
}

/// Extracts the induced geometric data from a running slice: induced metric,
/// second fundamental form via the lapse/shift split, physical pressure, and
/// the tangential projection of the four-velocity. Used for the
/// constraint-residual time series.
pub fn slice_geometric_data(
    grid: &Grid,
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    cache: &GeometryCache,
) -> Result<GeometricData> {
    let n = grid.n();
    let total = n * n * n;
    let e2o = (2.0 * bg.omega_fold).exp();
    let evs = (-params.varsigma * bg.omega_fold).exp();
    let mut gbar: [ScalarField; 6] = core::array::from_fn(|_| grid.zeros());
    let mut kbar: [ScalarField; 6] = core::array::from_fn(|_| grid.zeros());
    let mut pbar = grid.zeros();
    let mut ubar: [ScalarField; 3] = core::array::from_fn(|_| grid.zeros());

    // 3-Christoffels of the induced metric equal those of h (constant
    // conformal factors drop out)
    for idx in 0..total {
        let h = state.h_at(idx);
        let hinv = mat3_inv(&h);
        let mut dh = [[[0.0; 3]; 3]; 3];
        let dah = cache.derivs.dh_at(idx);
        for a in 0..3 {
            dh[a] = dah[a];
        }
        let gam = |l: usize, j: usize, k: usize| -> f64 {
            let mut s = 0.0;
            for m in 0..3 {
                s += 0.5 * hinv[l][m] * (dh[j][m][k] + dh[k][j][m] - dh[m][j][k]);
            }
            s
        };
        // shift and lapse
        let beta_low = [
            state.g0[0].values()[idx],
            state.g0[1].values()[idx],
            state.g0[2].values()[idx],
        ];
        let gamma_inv = |a: usize, b: usize| hinv[a][b] / e2o;
        let mut beta_up = [0.0; 3];
        for a in 0..3 {
            for b in 0..3 {
                beta_up[a] += gamma_inv(a, b) * beta_low[b];
            }
        }
        let beta_sq: f64 = (0..3).map(|a| beta_up[a] * beta_low[a]).sum();
        let lapse_sq = beta_sq - state.g00.values()[idx];
        if !(lapse_sq > 0.0) {
            return Err(Error::Diagnostics(format!("slice lapse^2 = {lapse_sq} <= 0")));
        }
        let lapse = lapse_sq.sqrt();

        // D_j beta_k (3-covariant derivative of the shift covector)
        let d_beta = |j: usize, k: usize| -> f64 {
            let mut s = cache.derivs.d_g0[k][j].values()[idx];
            for l in 0..3 {
                s -= gam(l, j, k) * beta_low[l];
            }
            s
        };

        let kh = state.kh_at(idx);
        for (sy, &(j, k)) in SYM3.iter().enumerate() {
            gbar[sy].values_mut()[idx] = e2o * h[j][k];
            let dt_gamma = e2o * (kh[j][k] + 2.0 * bg.omega * h[j][k]);
            kbar[sy].values_mut()[idx] =
                (dt_gamma - d_beta(j, k) - d_beta(k, j)) / (2.0 * lapse);
        }
        pbar.values_mut()[idx] = evs * state.p.values()[idx];
        // tangential projection: ubar^j = u^j + N^2 u^0 g^{0j}
        let u0 = cache.u0[idx];
        let gi = &cache.ginv[idx];
        for j in 0..3 {
            ubar[j].values_mut()[idx] =
                state.u[j].values()[idx] + lapse_sq * u0 * gi[0][j + 1];
        }
    }
    Ok(GeometricData { gbar, kbar, pbar, ubar })
}

//! Right-hand sides of the modified evolution equations in first-order form:
//! principal terms plus every error ("delta") field, the matrix-vector fluid
//! view, and the isolated time derivatives of the fluid variables.
//!
//! Every under-braced substitution is implemented in its h-variable form so
//! no e^{2 Omega} cancellation is left to floating point; the raw g-variable
//! forms exist only in the identity checks.

use crate::background::{BackgroundParams, BackgroundState};
use crate::error::{BreakdownCase, Error, Result};
use crate::geometry::GeometryCache;
use crate::grid::{Grid, ScalarField};
use crate::state::FieldState;
use crate::tensor::{Gamma, Mat3, Mat4, Vec4, SYM3};

/// Single-term sign flips for the mutation coverage of the identity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// flips the e^{2 Omega} dt h term inside the Christoffel error
    /// Delta^0_{jk}
    ChristoffelDtH,
    /// flips the g^{ab} g^{lm} (d_a g_{0l})(d_b g_{0m}) quadratic inside
    /// Delta_{A,00}
    AQuadratic00,
    /// flips the 2 omega g^{ab} g^{0l} Gamma_{alb} term inside Delta_{C,00}
    CGammaTerm,
    /// flips the Pi^{00} coefficient of the A^0 inverse prefactor
    A0InversePrefactor,
}

/// Per-point inputs shared by all error-term kernels.
pub(crate) struct Ctx {
    pub g: Mat4,
    pub ginv: Mat4,
    /// dg[mu][al][be] = d_mu g_{al be}
    pub dg: [Mat4; 4],
    pub h: Mat3,
    /// dt h_{jk}
    pub dth: Mat3,
    /// dah[a][j][k] = d_{a+1} h_{jk}
    pub dah: [Mat3; 3],
    /// lowered Christoffels Gamma_{m a n}
    pub gl: Gamma,
    /// contracted Gamma^mu
    pub gc: Vec4,
    /// u^mu with u^0 completed
    pub u: Vec4,
    /// u_mu
    pub ul: Vec4,
    /// Pi^{mu nu}
    pub pi: Mat4,
    /// rescaled pressure P
    pub p: f64,
    /// spatial d_a (P - pbar)
    pub dp: [f64; 3],
    /// du[a][j] = d_{a+1} u^{j+1}
    pub du: Mat3,
    // background scalars
    pub om: f64,
    pub hb: f64,
    pub e2o: f64,
    /// e^{-varsigma Omega}
    pub evs: f64,
    pub pbar: f64,
    pub cs2: f64,
    /// 3 cs2
    pub dec: f64,
}

impl Ctx {
    pub(crate) fn load(
        state: &FieldState,
        params: &BackgroundParams,
        bg: &BackgroundState,
        cache: &GeometryCache,
        idx: usize,
    ) -> Ctx {
        let e2o = (2.0 * bg.omega_fold).exp();
        let g = state.metric_at(idx, e2o);
        let dg = cache.derivs.metric_derivs_at(state, bg, idx);
        let u0 = cache.u0[idx];
        let u = [
            u0,
            state.u[0].values()[idx],
            state.u[1].values()[idx],
            state.u[2].values()[idx],
        ];
        Ctx {
            g,
            ginv: cache.ginv[idx],
            dg,
            h: state.h_at(idx),
            dth: state.kh_at(idx),
            dah: cache.derivs.dh_at(idx),
            gl: cache.gamma_lower[idx],
            gc: cache.gamma_contracted[idx],
            u,
            ul: cache.u_lower[idx],
            pi: cache.pi[idx],
            p: state.p.values()[idx],
            dp: cache.derivs.dp_spatial_at(idx),
            du: cache.derivs.du_spatial_at(idx),
            om: bg.omega,
            hb: params.hubble,
            e2o,
            evs: (-params.varsigma * bg.omega_fold).exp(),
            pbar: params.p_bar,
            cs2: params.cs2,
            dec: params.delta,
        }
    }

    /// g^{ab} dt g_{al} - 2 omega delta_l^b in its h-variable form:
    /// e^{2 Omega} g^{ab} dt h_{al} - 2 omega g^{0b} g_{0l}.
    #[inline]
    fn gb(&self, b: usize, l: usize) -> f64 {
        let mut s = 0.0;
        for a in 1..4 {
            s += self.e2o * self.ginv[a][b] * self.dth[a - 1][l - 1];
        }
        s - 2.0 * self.om * self.ginv[0][b] * self.g[0][l]
    }
}

/// Christoffel error terms: D[m][a][n] is the deviation of Gamma_{m n}^{a}
/// from its FLRW principal part, all blocks.
pub(crate) fn delta_gamma(c: &Ctx, mutation: Mutation) -> Gamma {
    let (g, ginv, dg) = (&c.g, &c.ginv, &c.dg);
    let (om, e2o) = (c.om, c.e2o);
    let mut d = [[[0.0; 4]; 4]; 4];
    // 2 D^0_{00} = g^{00} dt g00 + 2 g^{0a} dt g0a - g^{0a} da g00
    {
        let mut s = ginv[0][0] * dg[0][0][0];
        for a in 1..4 {
            s += 2.0 * ginv[0][a] * dg[0][0][a] - ginv[0][a] * dg[a][0][0];
        }
        d[0][0][0] = 0.5 * s;
    }
    // 2 D^0_{j0} = g^{00} dj g00 + g^{0a}(dj g_{a0} - da g_{j0})
    //              + 2 om g^{0a} g_{ja} + g^{0a} e^{2O} dt h_{aj}
    for j in 1..4 {
        let mut s = ginv[0][0] * dg[j][0][0];
        for a in 1..4 {
            s += ginv[0][a] * (dg[j][a][0] - dg[a][j][0]);
            s += 2.0 * om * ginv[0][a] * g[j][a];
            s += ginv[0][a] * e2o * c.dth[a - 1][j - 1];
        }
        d[j][0][0] = 0.5 * s;
        d[0][0][j] = 0.5 * s;
    }
    // 2 D^j_{00} = g^{j0} dt g00 + 2 g^{ja} dt g0a - g^{ja} da g00
    for j in 1..4 {
        let mut s = ginv[j][0] * dg[0][0][0];
        for a in 1..4 {
            s += 2.0 * ginv[j][a] * dg[0][0][a] - ginv[j][a] * dg[a][0][0];
        }
        d[0][j][0] = 0.5 * s;
    }
    // 2 D^j_{0k} = g^{j0} dk g00 + g^{ja} dk g0a - g^{ja} da g0k
    //              + (e^{2O} g^{ja} dt h_{ak} - 2 om g^{0j} g_{0k})
    for j in 1..4 {
        for k in 1..4 {
            let mut s = ginv[j][0] * dg[k][0][0];
            for a in 1..4 {
                s += ginv[j][a] * dg[k][0][a] - ginv[j][a] * dg[a][0][k];
                s += e2o * ginv[j][a] * c.dth[a - 1][k - 1];
            }
            s += -2.0 * om * ginv[0][j] * g[0][k];
            d[0][j][k] = 0.5 * s;
            d[k][j][0] = 0.5 * s;
        }
    }
    // 2 D^0_{jk} = g^{00}(dj g0k + dk g0j) + g^{0a}(dj g_{ak} + dk g_{aj} - da g_{jk})
    //              + e^{2O} dt h_{jk} - 2 (g^{00}+1) om g_{jk} - (g^{00}+1) e^{2O} dt h_{jk}
    let mflip = if mutation == Mutation::ChristoffelDtH { -1.0 } else { 1.0 };
    for j in 1..4 {
        for k in j..4 {
            let mut s = ginv[0][0] * (dg[j][0][k] + dg[k][0][j]);
            for a in 1..4 {
                s += ginv[0][a] * (dg[j][a][k] + dg[k][a][j] - dg[a][j][k]);
            }
            s += mflip * e2o * c.dth[j - 1][k - 1];
            s += -2.0 * (ginv[0][0] + 1.0) * om * g[j][k];
            s += -(ginv[0][0] + 1.0) * e2o * c.dth[j - 1][k - 1];
            d[j][0][k] = 0.5 * s;
            d[k][0][j] = 0.5 * s;
        }
    }
    // 2 D^k_{ij} = g^{ka}(di g_{aj} + dj g_{ia} - da g_{ij})
    //            + g^{k0}(di g_{0j} + dj g_{0i}) - g^{k0} e^{2O} dt h_{ij}
    //            - 2 om g^{0k} g_{ij}
    // (the lambda = 0 part of g^{k lam} Gamma_{i lam j}, written in h-variables)
    for i in 1..4 {
        for j in 1..4 {
            for k in 1..4 {
                let mut s = 0.0;
                for a in 1..4 {
                    s += ginv[k][a] * (dg[i][a][j] + dg[j][i][a] - dg[a][i][j]);
                }
                s += ginv[k][0] * (dg[i][0][j] + dg[j][0][i]);
                s += -ginv[k][0] * e2o * c.dth[i - 1][j - 1];
                s += -2.0 * om * ginv[0][k] * g[i][j];
                d[i][k][j] = 0.5 * s;
            }
        }
    }
    d
}

/// FLRW principal parts of the Christoffels, same slot order.
pub(crate) fn gamma_principal(c: &Ctx) -> Gamma {
    let om = c.om;
    let mut pr = [[[0.0; 4]; 4]; 4];
    for j in 1..4 {
        for k in 1..4 {
            if j == k {
                pr[0][j][k] = om;
                pr[k][j][0] = om;
            }
            pr[j][0][k] = om * c.g[j][k];
        }
    }
    pr
}

/// Error terms of the quadratic A_{mu nu} decomposition:
/// (da_00, da_0j, da_jk) with j, k spatial 1..4.
pub(crate) fn delta_a(c: &Ctx, mutation: Mutation) -> (f64, [f64; 4], Mat4) {
    let (g, ginv, dg, gl) = (&c.g, &c.ginv, &c.dg, &c.gl);
    let (om, e2o) = (c.om, c.e2o);
    let quad_flip = if mutation == Mutation::AQuadratic00 { -1.0 } else { 1.0 };

    // ---- da_00 ---------------------------------------------------------
    let mut s = ginv[0][0] * ginv[0][0] * (dg[0][0][0] * dg[0][0][0] - gl[0][0][0] * gl[0][0][0]);
    for a in 1..4 {
        s += ginv[0][0]
            * ginv[0][a]
            * (2.0 * dg[0][0][0] * (dg[0][0][a] + dg[a][0][0]) - 4.0 * gl[0][0][0] * gl[0][0][a]);
    }
    for a in 1..4 {
        for b in 1..4 {
            s += ginv[0][0]
                * ginv[a][b]
                * (dg[0][0][a] * dg[0][0][b] + dg[a][0][0] * dg[b][0][0]
                    - 2.0 * gl[0][0][a] * gl[0][0][b]);
            s += ginv[0][a]
                * ginv[0][b]
                * (2.0 * dg[0][0][0] * dg[a][0][b] + 2.0 * dg[0][0][b] * dg[a][0][0]
                    - 2.0 * gl[0][0][0] * gl[a][0][b]
                    - 2.0 * gl[0][0][b] * gl[0][0][a]);
        }
    }
    for a in 1..4 {
        for b in 1..4 {
            for l in 1..4 {
                s += ginv[a][b]
                    * ginv[0][l]
                    * (2.0 * dg[0][0][a] * dg[l][0][b] + 2.0 * dg[b][0][0] * dg[a][0][l]
                        - 4.0 * gl[0][0][a] * gl[l][0][b]);
            }
        }
    }
    for a in 1..4 {
        for b in 1..4 {
            for l in 1..4 {
                for m in 1..4 {
                    s += quad_flip * ginv[a][b] * ginv[l][m] * dg[a][0][l] * dg[b][0][m];
                    s += -0.25
                        * ginv[a][b]
                        * ginv[l][m]
                        * (dg[a][0][l] + dg[l][0][a])
                        * (dg[b][0][m] + dg[m][0][b]);
                }
            }
        }
    }
    for l in 1..4 {
        for m in 1..4 {
            for b in 1..4 {
                s += 0.5 * ginv[l][m] * c.gb(b, l) * (dg[b][0][m] + dg[m][0][b]);
            }
        }
    }
    for l in 1..4 {
        for b in 1..4 {
            // g^{lm} dt g_{bm} - 2 om delta_b^l in h-form
            let mut gb2 = 0.0;
            for m in 1..4 {
                gb2 += e2o * ginv[l][m] * c.dth[b - 1][m - 1];
            }
            gb2 -= 2.0 * om * ginv[0][l] * g[0][b];
            s += -0.25 * c.gb(b, l) * gb2;
        }
    }
    let da00 = s;

    // ---- da_0j ---------------------------------------------------------
    let mut da0j = [0.0; 4];
    for j in 1..4 {
        let mut s =
            ginv[0][0] * ginv[0][0] * (dg[0][0][0] * dg[0][0][j] - gl[0][0][0] * gl[0][j][0]);
        for a in 1..4 {
            s += ginv[0][0]
                * ginv[0][a]
                * (dg[0][0][0] * (dg[0][a][j] + dg[a][0][j])
                    + dg[0][0][j] * (dg[0][0][a] + dg[a][0][0])
                    - 2.0 * gl[0][0][0] * gl[0][j][a]
                    - 2.0 * gl[0][j][0] * gl[0][0][a]);
        }
        for a in 1..4 {
            // (g^{ab} dt g_{bj} - 2 om delta_j^a) (dt g0a - da g00 / 2)
            let mut gbja = 0.0;
            for b in 1..4 {
                gbja += e2o * ginv[a][b] * c.dth[b - 1][j - 1];
            }
            gbja -= 2.0 * om * ginv[0][a] * g[0][j];
            s += ginv[0][0] * gbja * (dg[0][0][a] - 0.5 * dg[a][0][0]);
        }
        for a in 1..4 {
            for b in 1..4 {
                s += 0.5 * ginv[0][0] * ginv[a][b] * dg[a][0][0] * (dg[b][0][j] + dg[j][0][b]);
                s += ginv[0][a]
                    * ginv[0][b]
                    * (dg[0][0][0] * dg[a][b][j]
                        + dg[0][0][b] * dg[a][0][j]
                        + dg[a][0][0] * dg[0][b][j]
                        + dg[a][0][b] * dg[0][0][j]
                        - gl[0][0][0] * gl[a][j][b]
                        - 2.0 * gl[0][0][b] * gl[0][j][a]
                        - gl[a][0][b] * gl[0][j][0]);
            }
        }
        for a in 1..4 {
            for b in 1..4 {
                for l in 1..4 {
                    s += ginv[a][b]
                        * ginv[0][l]
                        * (dg[0][0][a] * dg[l][b][j]
                            + dg[l][0][a] * dg[0][b][j]
                            + dg[b][0][0] * dg[a][l][j]
                            + dg[b][0][l] * dg[a][0][j]
                            - 2.0 * gl[0][0][a] * gl[l][j][b]);
                    s += -ginv[a][b]
                        * ginv[0][l]
                        * ((dg[l][0][a] + dg[a][0][l]) * gl[0][j][b]
                            - 0.5 * dg[0][l][a] * (dg[b][0][j] - dg[j][0][b]));
                }
            }
        }
        for a in 1..4 {
            s += om * ginv[0][a] * e2o * c.dth[a - 1][j - 1];
        }
        for l in 1..4 {
            for b in 1..4 {
                // g^{ab} dt g_{la} - 2 om delta_l^b in h-form
                let mut gblb = 0.0;
                for a in 1..4 {
                    gblb += e2o * ginv[a][b] * c.dth[l - 1][a - 1];
                }
                gblb -= 2.0 * om * ginv[0][b] * g[0][l];
                s += 0.5 * ginv[0][l] * gblb * dg[0][b][j];
            }
        }
        for a in 1..4 {
            for b in 1..4 {
                for l in 1..4 {
                    for m in 1..4 {
                        s += ginv[a][b]
                            * ginv[l][m]
                            * (dg[a][0][l] * dg[b][m][j]
                                - 0.5 * (dg[a][0][l] + dg[l][0][a]) * gl[b][j][m]);
                    }
                }
            }
        }
        for a in 1..4 {
            for b in 1..4 {
                for m in 1..4 {
                    // g^{lm} dt g_{la} - 2 om delta_a^m in h-form
                    let mut gbam = 0.0;
                    for l in 1..4 {
                        gbam += e2o * ginv[l][m] * c.dth[l - 1][a - 1];
                    }
                    gbam -= 2.0 * om * ginv[0][m] * g[0][a];
                    s += 0.5 * ginv[a][b] * gbam * gl[b][j][m];
                }
            }
        }
        da0j[j] = s;
    }

    // ---- da_jk ---------------------------------------------------------
    let mut dajk = [[0.0; 4]; 4];
    for j in 1..4 {
        for k in 1..4 {
            let mut s =
                ginv[0][0] * ginv[0][0] * (dg[0][0][j] * dg[0][0][k] - gl[0][j][0] * gl[0][k][0]);
            for a in 1..4 {
                s += ginv[0][0]
                    * ginv[0][a]
                    * (dg[0][0][j] * (dg[0][a][k] + dg[a][0][k])
                        + dg[0][0][k] * (dg[0][a][j] + dg[a][0][j])
                        - 2.0 * gl[0][j][0] * gl[0][k][a]
                        - 2.0 * gl[0][k][0] * gl[0][j][a]);
            }
            for a in 1..4 {
                for b in 1..4 {
                    s += ginv[0][0]
                        * ginv[a][b]
                        * (dg[a][0][j] * dg[b][0][k]
                            - 0.5 * (dg[a][0][j] - dg[j][0][a]) * (dg[b][0][k] - dg[k][0][b]));
                }
            }
            for b in 1..4 {
                s += -0.5 * ginv[0][0] * c.gb(b, j) * (dg[b][0][k] - dg[k][0][b]);
            }
            for a in 1..4 {
                s += -0.5 * ginv[0][0] * c.gb(a, k) * (dg[a][0][j] - dg[j][0][a]);
            }
            // om g^{00} (g_{bk} g^{ab} - delta_k^a) dt g_{aj}; brace = -g_{0k} g^{0a}
            for a in 1..4 {
                s += om * ginv[0][0] * (-g[0][k] * ginv[0][a]) * dg[0][a][j];
            }
            // (1/2) g^{00} (g^{ab} dt g_{aj} - 2 om delta_j^b)(dt g_{bk} - 2 om g_{bk})
            for b in 1..4 {
                s += 0.5 * ginv[0][0] * c.gb(b, j) * e2o * c.dth[b - 1][k - 1];
            }
            for a in 1..4 {
                for b in 1..4 {
                    s += ginv[0][a]
                        * ginv[0][b]
                        * (dg[0][0][j] * dg[a][b][k]
                            + dg[0][b][j] * dg[a][0][k]
                            + dg[a][0][j] * dg[0][b][k]
                            + dg[a][b][j] * dg[0][0][k]
                            - gl[0][j][0] * gl[a][k][b]
                            - 2.0 * gl[0][j][b] * gl[0][k][a]
                            - gl[a][j][b] * gl[0][k][0]);
                }
            }
            for a in 1..4 {
                for b in 1..4 {
                    for l in 1..4 {
                        s += ginv[a][b]
                            * ginv[0][l]
                            * (dg[0][a][j] * dg[l][b][k]
                                + dg[l][a][j] * dg[0][b][k]
                                + dg[b][0][j] * dg[a][l][k]
                                + dg[b][l][j] * dg[a][0][k]
                                - 2.0 * gl[0][j][a] * gl[l][k][b]
                                - 2.0 * gl[l][j][a] * gl[0][k][b]);
                    }
                }
            }
            for a in 1..4 {
                for b in 1..4 {
                    for m in 1..4 {
                        for l in 1..4 {
                            s += ginv[a][b]
                                * ginv[m][l]
                                * (dg[a][l][j] * dg[b][m][k] - gl[a][j][l] * gl[b][k][m]);
                        }
                    }
                }
            }
            dajk[j][k] = s;
        }
    }
    (da00, da0j, dajk)
}

/// Principal parts of A_{mu nu}.
pub(crate) fn a_principal(c: &Ctx) -> (f64, [f64; 4], Mat4) {
    let (g, ginv, dg, gl, om) = (&c.g, &c.ginv, &c.dg, &c.gl, c.om);
    let mut a00 = 3.0 * om * om;
    for a in 1..4 {
        for b in 1..4 {
            a00 += -om * ginv[a][b] * dg[0][a][b] + 2.0 * om * ginv[a][b] * dg[a][0][b];
        }
    }
    let mut a0j = [0.0; 4];
    for j in 1..4 {
        let mut s = 2.0 * om * ginv[0][0] * dg[0][0][j]
            - 2.0 * om * om * ginv[0][0] * g[0][j]
            - om * ginv[0][0] * dg[j][0][0];
        for a in 1..4 {
            for b in 1..4 {
                s += om * ginv[a][b] * gl[a][j][b];
            }
        }
        a0j[j] = s;
    }
    let mut ajk = [[0.0; 4]; 4];
    for j in 1..4 {
        for k in 1..4 {
            ajk[j][k] =
                2.0 * om * ginv[0][0] * dg[0][j][k] - 2.0 * om * om * ginv[0][0] * g[j][k];
        }
    }
    (a00, a0j, ajk)
}

/// Error terms of the gauge-source combination A + I.
pub(crate) fn delta_c(c: &Ctx, mutation: Mutation) -> (f64, [f64; 4]) {
    let (g, ginv, dg, gl) = (&c.g, &c.ginv, &c.dg, &c.gl);
    let (om, e2o) = (c.om, c.e2o);
    let gamma_flip = if mutation == Mutation::CGammaTerm { -1.0 } else { 1.0 };
    let mut g0a_low_sq = 0.0;
    for a in 1..4 {
        g0a_low_sq += ginv[0][a] * g[0][a];
    }
    let mut s = -6.0 * om * om / g[0][0] * ((g[0][0] + 1.0) * (g[0][0] + 1.0) - g0a_low_sq);
    // - om (g^{00}+1)(g^{ab} dt g_ab - 6 om) in h-form:
    //   e^{2O} g^{ab} dt h_ab - 2 om g^{0a} g_{0a}
    let mut brace = 0.0;
    for a in 1..4 {
        for b in 1..4 {
            brace += e2o * ginv[a][b] * c.dth[a - 1][b - 1];
        }
    }
    brace -= 2.0 * om * g0a_low_sq;
    s += -om * (ginv[0][0] + 1.0) * brace;
    for a in 1..4 {
        for b in 1..4 {
            s += 2.0 * om * (ginv[0][0] + 1.0) * ginv[a][b] * dg[a][0][b];
        }
    }
    s += om * (ginv[0][0] + 1.0) * (ginv[0][0] - 1.0) * dg[0][0][0];
    for a in 1..4 {
        s += 2.0 * om * ginv[0][0] * ginv[0][a] * (gl[0][a][0] + 2.0 * gl[0][0][a]);
    }
    for a in 1..4 {
        for b in 1..4 {
            s += 4.0 * om * ginv[0][a] * ginv[0][b] * gl[0][a][b];
        }
    }
    for a in 1..4 {
        for b in 1..4 {
            for l in 1..4 {
                s += gamma_flip * 2.0 * om * ginv[a][b] * ginv[0][l] * gl[a][l][b];
            }
        }
    }
    let dc00 = s;
    let mut dc0j = [0.0; 4];
    for j in 1..4 {
        let mut s = 2.0 * om * om * (ginv[0][0] + 1.0) * g[0][j];
        for a in 1..4 {
            s += -2.0
                * om
                * ginv[0][a]
                * (e2o * c.dth[a - 1][j - 1] + dg[a][0][j] - dg[j][0][a]);
        }
        dc0j[j] = s;
    }
    (dc00, dc0j)
}

/// Metric error terms Delta_00, Delta_0j, Delta_jk of the final equations.
pub(crate) fn delta_metric(c: &Ctx, mutation: Mutation) -> (f64, [f64; 4], Mat4) {
    let (da00, da0j, dajk) = delta_a(c, mutation);
    let (dc00, dc0j) = delta_c(c, mutation);
    let (g, ginv, dg, gl) = (&c.g, &c.ginv, &c.dg, &c.gl);
    let (om, hb, cs2, evs, pbar, p, e2o) = (c.om, c.hb, c.cs2, c.evs, c.pbar, c.p, c.e2o);
    let ul = &c.ul;

    let d00 = 2.0
        * (da00 + dc00
            - (3.0 * cs2 + 1.0) / (2.0 * cs2) * (g[0][0] + 1.0) * evs * pbar
            - (3.0 * cs2 + 1.0) / (2.0 * cs2) * evs * (p - pbar)
            - (1.0 + cs2) / cs2 * (ul[0] + 1.0) * (ul[0] - 1.0) * evs * p
            - (1.0 - cs2) / (2.0 * cs2) * (g[0][0] + 1.0) * evs * p
            + 2.5 * (om - hb) * dg[0][0][0]
            + 3.0 * (om * om - hb * hb) * (g[0][0] + 1.0));

    let mut d0j = [0.0; 4];
    for j in 1..4 {
        let mut gab_gajb = 0.0;
        for a in 1..4 {
            for b in 1..4 {
                gab_gajb += ginv[a][b] * gl[a][j][b];
            }
        }
        d0j[j] = 2.0
            * (da0j[j] + dc0j[j]
                + (1.0 - 3.0 * cs2) / (4.0 * cs2) * evs * pbar * g[0][j]
                - (1.0 + cs2) / cs2 * evs * p * ul[0] * ul[j]
                - (1.0 - cs2) / (2.0 * cs2) * evs * p * g[0][j]
                + 1.5 * (om - hb) * dg[0][0][j]
                + (om * om - hb * hb) * g[0][j]
                - (om - hb) * gab_gajb);
    }

    let mut djk = [[0.0; 4]; 4];
    for j in 1..4 {
        for k in 1..4 {
            let mut adv = 0.0;
            for a in 1..4 {
                adv += ginv[0][a] * c.dah[a - 1][j - 1][k - 1];
            }
            djk[j][k] = 2.0
                * ((-2.0f64 * c.bg_omega_fold()).exp() * dajk[j][k]
                    + (1.0 + cs2) / (2.0 * cs2)
                        * pbar
                        * evs
                        * (ginv[0][0] + 1.0)
                        * c.h[j - 1][k - 1]
                    - 2.0 * om * adv
                    - (1.0 - cs2) / (2.0 * cs2) * evs * (p - pbar) * c.h[j - 1][k - 1]
                    - (1.0 + cs2) / cs2 / e2o * evs * p * ul[j] * ul[k]
                    + 1.5 * (om - hb) * c.dth[j - 1][k - 1]);
        }
    }
    (d00, d0j, djk)
}

impl Ctx {
    #[inline]
    fn bg_omega_fold(&self) -> f64 {
        0.5 * self.e2o.ln()
    }
}

/// Fluid error terms (delta, delta^j, delta^0) of the first-order Euler
/// equations, and the contracted Christoffel errors they use.
pub(crate) fn delta_fluid(c: &Ctx, dgam: &Gamma) -> (f64, [f64; 4], f64) {
    let (g, ginv) = (&c.g, &c.ginv);
    let (om, cs2, dec, p) = (c.om, c.cs2, c.dec, c.p);
    let u = &c.u;
    let ul = &c.ul;
    let cp = (1.0 + cs2) * p;
    // contracted Delta^al_{al be}
    let mut dcon = [0.0; 4];
    for be in 0..4 {
        for al in 0..4 {
            dcon[be] += dgam[al][al][be];
        }
    }
    let mut dtg_uu = 0.0;
    for al in 0..4 {
        for be in 0..4 {
            dtg_uu += c.dg[0][al][be] * u[al] * u[be];
        }
    }
    let mut tri = -cp * dcon[0] * u[0];
    for a in 1..4 {
        tri += -cp * dcon[a] * u[a];
    }
    tri += cp / (2.0 * ul[0]) * dtg_uu;

    let mut trij = [0.0; 4];
    for j in 1..4 {
        let mut duu = 0.0;
        for al in 0..4 {
            for be in 0..4 {
                duu += u[al] * dgam[al][j][be] * u[be];
            }
        }
        trij[j] = (dec - 2.0) * om * (u[0] - 1.0) * u[j] - duu + dec * om * ginv[0][j];
    }

    let mut duu0 = 0.0;
    for al in 0..4 {
        for be in 0..4 {
            duu0 += u[al] * dgam[al][0][be] * u[be];
        }
    }
    let mut g_uu = 0.0;
    for a in 1..4 {
        for b in 1..4 {
            g_uu += g[a][b] * u[a] * u[b];
        }
    }
    let tri0 = dec * om * ((u[0] - 1.0) * (u[0] + 1.0) + (ginv[0][0] + 1.0)) - om * g_uu - duu0;
    (tri, trij, tri0)
}

/// Isolated time derivatives (dt P, dt u^0, dt u^j minus its decay part):
/// (delta', delta'^0, delta'^j).
pub(crate) fn delta_prime(
    c: &Ctx,
    dgam: &Gamma,
    tri: f64,
    trij: &[f64; 4],
    tri0: f64,
) -> Result<(f64, f64, [f64; 4])> {
    let (om, cs2, dec, p) = (c.om, c.cs2, c.dec, c.p);
    let (u, ul, pi) = (&c.u, &c.ul, &c.pi);
    let cp = (1.0 + cs2) * p;
    let denom = 1.0 - cs2 * pi[0][0] / (u[0] * u[0]);
    if !(denom.abs() > 1e-12) {
        return Err(Error::Breakdown {
            case: BreakdownCase::SupNormBlowup,
            t: 0.0,
            i: 0,
            j: 0,
            k: 0,
            detail: format!("fluid hyperbolicity lost: det(A0) prefactor = {denom}"),
        });
    }
    let mut s = 0.0;
    for a in 1..4 {
        s += -u[a] * c.dp[a - 1];
        s += -cp * c.du[a - 1][a - 1];
        s += cs2 / u[0] * pi[a][0] * c.dp[a - 1];
        s += cp / (ul[0] * u[0]) * (dec - 2.0) * om * ul[a] * u[a];
        s += cp / (ul[0] * u[0]) * ul[a] * trij[a];
        for b in 1..4 {
            s += -cp / (ul[0] * u[0]) * u[a] * ul[b] * c.du[a - 1][b - 1];
        }
    }
    s += tri;
    let dt_p = (1.0 / u[0]) / denom * s;

    let mut dtu = [0.0; 4];
    for j in 1..4 {
        let mut duu = 0.0;
        for al in 0..4 {
            for be in 0..4 {
                duu += u[al] * dgam[al][j][be] * u[be];
            }
        }
        let mut s = -duu + dec * om * c.ginv[0][j]
            - cs2 / cp * pi[0][j] * dt_p;
        for a in 1..4 {
            s += -cs2 / cp * pi[a][j] * c.dp[a - 1];
            s += -u[a] * c.du[a - 1][j - 1];
        }
        dtu[j] = s / u[0];
    }

    // delta'^0, with the -u^a d_a u^0 advection restored; d_a u^0 comes from
    // the differentiated normalization
    let mut s = tri0 - cs2 / cp * pi[0][0] * dt_p;
    for a in 1..4 {
        s += -cs2 / cp * pi[0][a] * c.dp[a - 1];
        s += -u[a] * da_u0(c, a);
    }
    let dt_u0 = s / u[0];
    Ok((dt_p, dt_u0, dtu))
}

/// d_a u^0 from the differentiated normalization condition:
/// u_beta d_a u^beta = -(d_a g_{al be}) u u / 2.
#[inline]
pub(crate) fn da_u0(c: &Ctx, a: usize) -> f64 {
    let mut dg_uu = 0.0;
    for al in 0..4 {
        for be in 0..4 {
            dg_uu += c.dg[a][al][be] * c.u[al] * c.u[be];
        }
    }
    let mut ul_du = 0.0;
    for j in 1..4 {
        ul_du += c.ul[j] * c.du[a - 1][j - 1];
    }
    -(ul_du + 0.5 * dg_uu) / c.ul[0]
}

/// Every error field of the decomposition, evaluated on the grid.
pub struct ErrorTerms {
    pub n: usize,
    /// quadratic-term errors Delta_{A,.}
    pub da_00: ScalarField,
    pub da_0j: [ScalarField; 3],
    pub da_jk: [ScalarField; 6],
    /// gauge-combination errors Delta_{C,.}
    pub dc_00: ScalarField,
    pub dc_0j: [ScalarField; 3],
    /// Christoffel errors, full slot layout per point
    pub dgamma: Vec<Gamma>,
    /// metric-equation errors
    pub dm_00: ScalarField,
    pub dm_0j: [ScalarField; 3],
    pub dm_jk: [ScalarField; 6],
    /// fluid errors
    pub fluid: ScalarField,
    pub fluid_u0: ScalarField,
    pub fluid_uj: [ScalarField; 3],
    /// isolated time-derivative forms
    pub dt_p: ScalarField,
    pub dt_u0: ScalarField,
    pub dt_uj: [ScalarField; 3],
}

/// Populates every error field by literal transcription of the decomposition
/// formulas (h-variable forms).
pub fn assemble_error_terms(
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    cache: &GeometryCache,
) -> Result<ErrorTerms> {
    assemble_error_terms_with(state, params, bg, cache, Mutation::None)
}

pub fn assemble_error_terms_with(
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    cache: &GeometryCache,
    mutation: Mutation,
) -> Result<ErrorTerms> {
    let n = state.n();
    let total = n * n * n;
    let zf = || ScalarField::zeros(n);
    let mut out = ErrorTerms {
        n,
        da_00: zf(),
        da_0j: [zf(), zf(), zf()],
        da_jk: [zf(), zf(), zf(), zf(), zf(), zf()],
        dc_00: zf(),
        dc_0j: [zf(), zf(), zf()],
        dgamma: vec![[[[0.0; 4]; 4]; 4]; total],
        dm_00: zf(),
        dm_0j: [zf(), zf(), zf()],
        dm_jk: [zf(), zf(), zf(), zf(), zf(), zf()],
        fluid: zf(),
        fluid_u0: zf(),
        fluid_uj: [zf(), zf(), zf()],
        dt_p: zf(),
        dt_u0: zf(),
        dt_uj: [zf(), zf(), zf()],
    };
    for idx in 0..total {
        let c = Ctx::load(state, params, bg, cache, idx);
        let dgam = delta_gamma(&c, mutation);
        let (da00, da0j, dajk) = delta_a(&c, mutation);
        let (dc00, dc0j) = delta_c(&c, mutation);
        let (dm00, dm0j, dmjk) = delta_metric(&c, mutation);
        let (tri, trij, tri0) = delta_fluid(&c, &dgam);
        let (dt_p, dt_u0, dt_uj) = delta_prime(&c, &dgam, tri, &trij, tri0).map_err(|e| {
            match e {
                Error::Breakdown { case, detail, .. } => Error::Breakdown {
                    case,
                    t: state.t,
                    i: idx / (n * n),
                    j: (idx / n) % n,
                    k: idx % n,
                    detail,
                },
                other => other,
            }
        })?;
        out.da_00.values_mut()[idx] = da00;
        out.dc_00.values_mut()[idx] = dc00;
        out.dm_00.values_mut()[idx] = dm00;
        out.fluid.values_mut()[idx] = tri;
        out.fluid_u0.values_mut()[idx] = tri0;
        out.dt_p.values_mut()[idx] = dt_p;
        out.dt_u0.values_mut()[idx] = dt_u0;
        for j in 0..3 {
            out.da_0j[j].values_mut()[idx] = da0j[j + 1];
            out.dc_0j[j].values_mut()[idx] = dc0j[j + 1];
            out.dm_0j[j].values_mut()[idx] = dm0j[j + 1];
            out.fluid_uj[j].values_mut()[idx] = trij[j + 1];
            out.dt_uj[j].values_mut()[idx] = dt_uj[j + 1];
        }
        for (s, &(j, k)) in SYM3.iter().enumerate() {
            out.da_jk[s].values_mut()[idx] = dajk[j + 1][k + 1];
            out.dm_jk[s].values_mut()[idx] = dmjk[j + 1][k + 1];
        }
        out.dgamma[idx] = dgam;
    }
    Ok(out)
}

/// Time derivatives of (k00, k0j, kh_jk) from the wave equations with the
/// second time derivative isolated:
///   dt k = (1/g^{00}) [ principal + Delta - g^{ab} dd_ab(field)
///                       - 2 g^{0a} d_a k(field) ].
pub fn metric_rhs(
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    cache: &GeometryCache,
    errors: &ErrorTerms,
) -> Result<(ScalarField, [ScalarField; 3], [ScalarField; 6])> {
    let n = state.n();
    let total = n * n * n;
    let hb = params.hubble;
    let mut dk00 = ScalarField::zeros(n);
    let mut dk0 = [ScalarField::zeros(n), ScalarField::zeros(n), ScalarField::zeros(n)];
    let mut dkh = [
        ScalarField::zeros(n),
        ScalarField::zeros(n),
        ScalarField::zeros(n),
        ScalarField::zeros(n),
        ScalarField::zeros(n),
        ScalarField::zeros(n),
    ];
    for idx in 0..total {
        let ginv = &cache.ginv[idx];
        let g00_up = ginv[0][0];
        if !(g00_up < 0.0) {
            return Err(Error::Breakdown {
                case: BreakdownCase::MetricTimeDegenerate,
                t: state.t,
                i: idx / (n * n),
                j: (idx / n) % n,
                k: idx % n,
                detail: format!("g^00 = {g00_up}"),
            });
        }
        // spatial box parts
        let dd = |field_dd: &[ScalarField; 6]| -> f64 {
            let mut s = 0.0;
            for (sy, &(a, b)) in SYM3.iter().enumerate() {
                let factor = if a == b { 1.0 } else { 2.0 };
                s += factor * ginv[a + 1][b + 1] * field_dd[sy].values()[idx];
            }
            s
        };
        let adv = |dk: &[ScalarField; 3]| -> f64 {
            let mut s = 0.0;
            for a in 0..3 {
                s += ginv[0][a + 1] * dk[a].values()[idx];
            }
            s
        };
        // g00 equation
        {
            let k00 = state.k00.values()[idx];
            let g00 = state.g00.values()[idx];
            let rhs = 5.0 * hb * k00 + 6.0 * hb * hb * (g00 + 1.0) + errors.dm_00.values()[idx]
                - dd(&cache.derivs.dd_g00)
                - 2.0 * adv(&cache.derivs.d_k00);
            dk00.values_mut()[idx] = rhs / g00_up;
        }
        // g0j equations
        for j in 0..3 {
            let gl = &cache.gamma_lower[idx];
            let mut gab_gajb = 0.0;
            for a in 1..4 {
                for b in 1..4 {
                    gab_gajb += ginv[a][b] * gl[a][j + 1][b];
                }
            }
            let k0j = state.k0[j].values()[idx];
            let g0j = state.g0[j].values()[idx];
            let rhs = 3.0 * hb * k0j + 2.0 * hb * hb * g0j - 2.0 * hb * gab_gajb
                + errors.dm_0j[j].values()[idx]
                - dd(&cache.derivs.dd_g0[j])
                - 2.0 * adv(&cache.derivs.d_k0[j]);
            dk0[j].values_mut()[idx] = rhs / g00_up;
        }
        // h_jk equations
        for sy in 0..6 {
            let khv = state.kh[sy].values()[idx];
            let rhs = 3.0 * hb * khv + errors.dm_jk[sy].values()[idx]
                - dd(&cache.derivs.dd_h[sy])
                - 2.0 * adv(&cache.derivs.d_kh[sy]);
            dkh[sy].values_mut()[idx] = rhs / g00_up;
        }
    }
    Ok((dk00, dk0, dkh))
}

/// Time derivatives of the fluid variables from the isolated forms:
/// dt (P - pbar) = delta', dt u^j = (delta - 2) omega u^j + delta'^j.
pub fn fluid_rhs(
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    errors: &ErrorTerms,
) -> (ScalarField, [ScalarField; 3]) {
    let n = state.n();
    let dp = errors.dt_p.clone();
    let mut du = [
        ScalarField::zeros(n),
        ScalarField::zeros(n),
        ScalarField::zeros(n),
    ];
    for j in 0..3 {
        for idx in 0..n * n * n {
            du[j].values_mut()[idx] = (params.delta - 2.0) * bg.omega * state.u[j].values()[idx]
                + errors.dt_uj[j].values()[idx];
        }
    }
    (dp, du)
}

/// Matrix-vector view of the fluid subsystem at every grid point.
pub struct FluidSystemView {
    pub n: usize,
    /// W = (P - pbar, u^1, u^2, u^3) per point
    pub w: Vec<Vec4>,
    /// decay-inducing inhomogeneity b
    pub b: Vec<Vec4>,
    /// error inhomogeneity b_delta
    pub b_delta: Vec<Vec4>,
    /// A^mu matrices per point
    pub a: Vec<[Mat4; 4]>,
    /// (A^0)^{-1} per point (closed form)
    pub a0_inv: Vec<Mat4>,
    /// det A^0 per point (closed form)
    pub det_a0: Vec<f64>,
}

/// A^mu at one point.
pub(crate) fn fluid_matrices_point(c: &Ctx) -> [Mat4; 4] {
    let cp = (1.0 + c.cs2) * c.p;
    let mut a = [[[0.0; 4]; 4]; 4];
    // A^0
    a[0][0][0] = c.u[0];
    for j in 1..4 {
        a[0][0][j] = -cp * c.ul[j] / c.ul[0];
        a[0][j][0] = c.cs2 / cp * c.pi[j][0];
        a[0][j][j] = c.u[0];
    }
    for sp in 1..4 {
        a[sp][0][0] = c.u[sp];
        a[sp][0][sp] = cp;
        for j in 1..4 {
            a[sp][j][0] = c.cs2 / cp * c.pi[j][sp];
            a[sp][j][j] = c.u[sp];
        }
    }
    a
}

/// Closed-form (A^0)^{-1} and det A^0.
pub(crate) fn a0_inverse_point(c: &Ctx, mutation: Mutation) -> (Mat4, f64) {
    let cp = (1.0 + c.cs2) * c.p;
    let flip = if mutation == Mutation::A0InversePrefactor { -1.0 } else { 1.0 };
    let u0 = c.u[0];
    let det = u0 * u0 * (u0 * u0 - c.cs2 * c.pi[0][0]);
    let pref = 1.0 / (u0 * u0 - flip * c.cs2 * c.pi[0][0]);
    let mut m = [[0.0; 4]; 4];
    m[0][0] = u0;
    for j in 1..4 {
        m[0][j] = cp * c.ul[j] / c.ul[0];
        m[j][0] = -c.cs2 / cp * c.pi[j][0];
    }
    const OTHERS: [(usize, usize); 4] = [(0, 0), (2, 3), (1, 3), (1, 2)];
    for j in 1..4 {
        let (o1, o2) = OTHERS[j];
        m[j][j] = u0 + c.cs2 / (c.ul[0] * u0) * (c.pi[o1][0] * c.ul[o1] + c.pi[o2][0] * c.ul[o2]);
        for k in 1..4 {
            if k != j {
                m[j][k] = -c.cs2 / (c.ul[0] * u0) * c.pi[j][0] * c.ul[k];
            }
        }
    }
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v *= pref;
        }
    }
    (m, det)
}

/// Builds the matrix-vector fluid view on the whole grid.
pub fn fluid_matrices(
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
    cache: &GeometryCache,
    errors: &ErrorTerms,
) -> Result<FluidSystemView> {
    let n = state.n();
    let total = n * n * n;
    let mut view = FluidSystemView {
        n,
        w: vec![[0.0; 4]; total],
        b: vec![[0.0; 4]; total],
        b_delta: vec![[0.0; 4]; total],
        a: vec![[[[0.0; 4]; 4]; 4]; total],
        a0_inv: vec![[[0.0; 4]; 4]; total],
        det_a0: vec![0.0; total],
    };
    for idx in 0..total {
        let c = Ctx::load(state, params, bg, cache, idx);
        if !(c.u[0] > 0.0) {
            return Err(Error::Breakdown {
                case: BreakdownCase::SupNormBlowup,
                t: state.t,
                i: idx / (n * n),
                j: (idx / n) % n,
                k: idx % n,
                detail: format!("u^0 = {}", c.u[0]),
            });
        }
        view.w[idx] = [
            c.p - c.pbar,
            c.u[1],
            c.u[2],
            c.u[3],
        ];
        view.b[idx] = [
            0.0,
            (c.dec - 2.0) * c.om * c.u[1],
            (c.dec - 2.0) * c.om * c.u[2],
            (c.dec - 2.0) * c.om * c.u[3],
        ];
        view.b_delta[idx] = [
            errors.fluid.values()[idx],
            errors.fluid_uj[0].values()[idx],
            errors.fluid_uj[1].values()[idx],
            errors.fluid_uj[2].values()[idx],
        ];
        view.a[idx] = fluid_matrices_point(&c);
        let (inv, det) = a0_inverse_point(&c, Mutation::None);
        view.a0_inv[idx] = inv;
        view.det_a0[idx] = det;
    }
    Ok(view)
}

/// Full first-order RHS of the evolution system, shaped like a FieldState:
///   d/dt g00 = k00, d/dt g0j = k0j, d/dt h = kh,
///   d/dt k... from metric_rhs, d/dt P and d/dt u^j from fluid_rhs;
/// each nonlinear output is dealiased when the grid asks for it.
pub fn full_rhs(
    grid: &Grid,
    state: &FieldState,
    params: &BackgroundParams,
    bg: &BackgroundState,
) -> Result<FieldState> {
    let cache = GeometryCache::build(grid, state, params, bg)?;
    let errors = assemble_error_terms(state, params, bg, &cache)?;
    let (dk00, dk0, dkh) = metric_rhs(state, params, bg, &cache, &errors)?;
    let (dp, du) = fluid_rhs(state, params, bg, &errors);
    let mut rhs = FieldState::zeros(state.n(), state.t);
    rhs.g00 = state.k00.clone();
    rhs.g0 = state.k0.clone();
    rhs.h = state.kh.clone();
    rhs.k00 = dk00;
    rhs.k0 = dk0;
    rhs.kh = dkh;
    rhs.p = dp;
    rhs.u = du;
    // dealias the nonlinear outputs
    grid.dealias(&mut rhs.k00);
    for f in rhs.k0.iter_mut() {
        grid.dealias(f);
    }
    for f in rhs.kh.iter_mut() {
        grid.dealias(f);
    }
    grid.dealias(&mut rhs.p);
    for f in rhs.u.iter_mut() {
        grid.dealias(f);
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{background_at, BackgroundParams};
    use crate::fieldgen::{band_limited, Rng};
    use crate::grid::Backend;
    use crate::initial::flrw_state;
    use crate::tensor::{mat4_det, mat4_mul};

    fn params() -> BackgroundParams {
        BackgroundParams::new(3.0, 3.0, 1.0 / 9.0).unwrap()
    }

    use crate::identity::random_state;

    #[test]
    fn all_error_terms_vanish_on_flrw() {
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        for t in [0.0, 0.9] {
            let bg = background_at(&p, t);
            let st = flrw_state(&grid, &p, &bg);
            let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
            let e = assemble_error_terms(&st, &p, &bg, &cache).unwrap();
            let scale = 1.0 + bg.omega * bg.omega;
            for f in [&e.da_00, &e.dc_00, &e.dm_00, &e.fluid, &e.fluid_u0, &e.dt_p, &e.dt_u0] {
                assert!(f.sup_norm() < 1e-12 * scale, "sup = {:e}", f.sup_norm());
            }
            for j in 0..3 {
                assert!(e.da_0j[j].sup_norm() < 1e-12 * scale);
                assert!(e.dm_0j[j].sup_norm() < 1e-12 * scale);
                assert!(e.fluid_uj[j].sup_norm() < 1e-12 * scale);
                assert!(e.dt_uj[j].sup_norm() < 1e-12 * scale);
            }
            for s in 0..6 {
                assert!(e.da_jk[s].sup_norm() < 1e-12 * scale);
                assert!(e.dm_jk[s].sup_norm() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn flrw_is_exact_fixed_point_of_full_rhs() {
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = background_at(&p, 0.4);
        let st = flrw_state(&grid, &p, &bg);
        let rhs = full_rhs(&grid, &st, &p, &bg).unwrap();
        for (name, f) in FieldState::field_names().iter().zip(rhs.fields()) {
            assert!(f.sup_norm() < 1e-12, "{name} rhs sup = {:e}", f.sup_norm());
        }
    }

    #[test]
    fn box_g00_roundtrip_identity() {
        // reassembling box(g00) from the returned dt k00 reproduces
        // 5 H k00 + 6 H^2 (g00+1) + Delta_00
        let grid = Grid::new(16, Backend::Spectral, false).unwrap();
        let (st, p, bg) = random_state(&grid, 0.3, 0.05, 17);
        let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
        let e = assemble_error_terms(&st, &p, &bg, &cache).unwrap();
        let (dk00, _, _) = metric_rhs(&st, &p, &bg, &cache, &e).unwrap();
        let n = grid.n();
        let mut worst = 0.0f64;
        for idx in 0..n * n * n {
            let ginv = &cache.ginv[idx];
            let mut boxg = ginv[0][0] * dk00.values()[idx];
            for a in 0..3 {
                boxg += 2.0 * ginv[0][a + 1] * cache.derivs.d_k00[a].values()[idx];
            }
            for (sy, &(a, b)) in SYM3.iter().enumerate() {
                let factor = if a == b { 1.0 } else { 2.0 };
                boxg += factor * ginv[a + 1][b + 1] * cache.derivs.dd_g00[sy].values()[idx];
            }
            let want = 5.0 * p.hubble * st.k00.values()[idx]
                + 6.0 * p.hubble * p.hubble * (st.g00.values()[idx] + 1.0)
                + e.dm_00.values()[idx];
            worst = worst.max((boxg - want).abs() / want.abs().max(1.0));
        }
        assert!(worst < 1e-10, "roundtrip rel err = {worst:e}");
    }

    #[test]
    fn fluid_matrix_residual_of_returned_time_derivatives() {
        // A^beta d_beta W - b - b_delta ~ 0 with dt W from the
        // returned time derivatives
        let grid = Grid::new(16, Backend::Spectral, false).unwrap();
        let (st, p, bg) = random_state(&grid, 0.5, 0.05, 23);
        let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
        let e = assemble_error_terms(&st, &p, &bg, &cache).unwrap();
        let view = fluid_matrices(&st, &p, &bg, &cache, &e).unwrap();
        let (dp, du) = fluid_rhs(&st, &p, &bg, &e);
        let n = grid.n();
        let mut worst = 0.0f64;
        for idx in 0..n * n * n {
            let dt_w = [
                dp.values()[idx],
                du[0].values()[idx],
                du[1].values()[idx],
                du[2].values()[idx],
            ];
            let mut lhs = [0.0; 4];
            for r in 0..4 {
                for cidx in 0..4 {
                    lhs[r] += view.a[idx][0][r][cidx] * dt_w[cidx];
                }
            }
            for sp in 1..4 {
                let da_w = [
                    cache.derivs.d_p[sp - 1].values()[idx],
                    cache.derivs.d_u[0][sp - 1].values()[idx],
                    cache.derivs.d_u[1][sp - 1].values()[idx],
                    cache.derivs.d_u[2][sp - 1].values()[idx],
                ];
                for r in 0..4 {
                    for cidx in 0..4 {
                        lhs[r] += view.a[idx][sp][r][cidx] * da_w[cidx];
                    }
                }
            }
            for r in 0..4 {
                let res = lhs[r] - view.b[idx][r] - view.b_delta[idx][r];
                worst = worst.max(res.abs());
            }
        }
        assert!(worst < 1e-9, "matrix-form residual = {worst:e}");
    }

    #[test]
    fn a0_inverse_and_det_match_oracles() {
        let grid = Grid::new(8, Backend::Spectral, false).unwrap();
        let (st, p, bg) = random_state(&grid, 0.2, 0.08, 29);
        let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
        for idx in [0usize, 17, 130, 300] {
            let c = Ctx::load(&st, &p, &bg, &cache, idx);
            let a = fluid_matrices_point(&c);
            let (inv, det) = a0_inverse_point(&c, Mutation::None);
            let prod = mat4_mul(&inv, &a[0]);
            for (r, row) in prod.iter().enumerate() {
                for (cl, v) in row.iter().enumerate() {
                    let want = if r == cl { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-10, "({r},{cl}): {v}");
                }
            }
            let lu = mat4_det(&a[0]);
            assert!((det - lu).abs() < 1e-10 * lu.abs().max(1.0));
            // alternative determinant expression
            let u0 = c.u[0];
            let det2 = u0 * u0 * (u0 * u0 * (1.0 - p.cs2) - p.cs2 * c.ginv[0][0]);
            assert!((det - det2).abs() < 1e-12 * det.abs().max(1.0));
        }
    }

    #[test]
    fn flrw_fluid_matrices_are_identity_like() {
        let grid = Grid::new(8, Backend::Spectral, false).unwrap();
        let p = params();
        let bg = background_at(&p, 0.0);
        let st = flrw_state(&grid, &p, &bg);
        let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
        let c = Ctx::load(&st, &p, &bg, &cache, 5);
        let a = fluid_matrices_point(&c);
        for r in 0..4 {
            for cl in 0..4 {
                let want = if r == cl { 1.0 } else { 0.0 };
                assert!((a[0][r][cl] - want).abs() < 1e-14);
            }
        }
        let (_, det) = a0_inverse_point(&c, Mutation::None);
        assert!((det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_velocity_damps_at_rate_delta_minus_two_omega() {
        // homogeneous state P = pbar, u^j = const: dt u^j =
        // (delta-2) omega u^j + O(u^3)
        let grid = Grid::new(8, Backend::Spectral, false).unwrap();
        let p = params();
        let bg = background_at(&p, 0.6);
        let mut st = flrw_state(&grid, &p, &bg);
        let u0 = 1e-3;
        st.u[0] = ScalarField::constant(8, u0);
        let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
        let e = assemble_error_terms(&st, &p, &bg, &cache).unwrap();
        let (_, du) = fluid_rhs(&st, &p, &bg, &e);
        let want = (p.delta - 2.0) * bg.omega * u0;
        let got = du[0].values()[0];
        assert!(
            (got - want).abs() < 10.0 * u0 * u0 * u0 + 1e-14,
            "dt u = {got}, want {want} + O(u^3)"
        );
    }

    #[test]
    fn linearized_g00_mode_matches_scalar_model() {
        // single k-mode of g00 on FLRW with Delta_00 dropped: the equation is
        // -dt^2 v - e^{-2 Omega} k^2 v = 5 H dt v + 6 H^2 v per mode; compare
        // the assembled dt k00 (minus the Delta_00 contribution) against the
        // model at small amplitude.
        let grid = Grid::new(16, Backend::Spectral, false).unwrap();
        let p = params();
        let bg = background_at(&p, 0.0);
        let mut st = flrw_state(&grid, &p, &bg);
        let amp = 1e-7;
        st.g00 = ScalarField::from_fn(16, |x1, _, _| -1.0 + amp * x1.sin());
        let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
        let e = assemble_error_terms(&st, &p, &bg, &cache).unwrap();
        let (dk00, _, _) = metric_rhs(&st, &p, &bg, &cache, &e).unwrap();
        // model: dt^2 v = -[5H dtv + 6 H^2 v + e^{-2Om} k^2 v] with dtv = 0,
        // k = 1, background g^{00} = -1
        let e2o = (2.0 * bg.omega_fold).exp();
        let n3 = grid.n().pow(3);
        let mut worst = 0.0f64;
        for idx in 0..n3 {
            let v = st.g00.values()[idx] + 1.0;
            // dt^2 v = -(6 H^2 + k^2 e^{-2 Omega}) v for the k = 1 mode
            let model = -(6.0 * p.hubble * p.hubble * v + v / e2o);
            let got = dk00.values()[idx] - e.dm_00.values()[idx] / cache.ginv[idx][0][0];
            worst = worst.max((got - model).abs());
        }
        assert!(worst < 100.0 * amp * amp + 1e-15, "worst = {worst:e}");
    }

    #[test]
    fn delta_a_terms_scale_quadratically() {
        let grid = Grid::new(8, Backend::Spectral, false).unwrap();
        let sup_da = |amp: f64| {
            let (st, p, bg) = random_state(&grid, 5.0, amp, 41);
            let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
            let e = assemble_error_terms(&st, &p, &bg, &cache).unwrap();
            let mut m = e.da_00.sup_norm();
            for j in 0..3 {
                m = m.max(e.da_0j[j].sup_norm());
            }
            for s in 0..6 {
                m = m.max(e.da_jk[s].sup_norm());
            }
            m
        };
        let (v1, v2) = (sup_da(0.05), sup_da(0.025));
        let fitted = (v1 / v2).log2();
        assert!(fitted >= 1.9, "fitted power {fitted}");
        // metric-equation deltas at late frozen time: quadratic part dominates
        let sup_dm = |amp: f64| {
            let (st, p, bg) = random_state(&grid, 5.0, amp, 43);
            let cache = GeometryCache::build(&grid, &st, &p, &bg).unwrap();
            let e = assemble_error_terms(&st, &p, &bg, &cache).unwrap();
            let mut m = e.dm_00.sup_norm();
            for j in 0..3 {
                m = m.max(e.dm_0j[j].sup_norm());
            }
            m
        };
        let (w1, w2) = (sup_dm(0.05), sup_dm(0.025));
        let fitted = (w1 / w2).log2();
        assert!(fitted >= 1.9, "metric delta fitted power {fitted}");
    }
}

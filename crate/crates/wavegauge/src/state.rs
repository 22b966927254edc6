//! The evolved variables on one time slice.
//!
//! The metric is carried as (g00, g0j, h_jk = e^{-2 Omega} g_jk) together
//! with first time derivatives, so every stored field stays O(1) along the
//! expanding background; dt g_jk is reconstructed as
//! e^{2 Omega} (dt h_jk + 2 omega h_jk) wherever a formula needs it.

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::tensor::{mat3_from_sym, mat3_min_eigenvalue, Mat3, SYM3};

#[derive(Debug, Clone)]
pub struct FieldState {
    pub t: f64,
    pub g00: ScalarField,
    /// g_{0j}
    pub g0: [ScalarField; 3],
    /// h_{jk}, packed symmetric
    pub h: [ScalarField; 6],
    /// dt g00
    pub k00: ScalarField,
    /// dt g_{0j}
    pub k0: [ScalarField; 3],
    /// dt h_{jk}, packed symmetric
    pub kh: [ScalarField; 6],
    /// rescaled pressure P = e^{3 (1 + cs2) Omega} p
    pub p: ScalarField,
    /// spatial four-velocity u^j
    pub u: [ScalarField; 3],
}

impl FieldState {
    pub fn zeros(n: usize, t: f64) -> Self {
        let z = || ScalarField::zeros(n);
        FieldState {
            t,
            g00: z(),
            g0: [z(), z(), z()],
            h: [z(), z(), z(), z(), z(), z()],
            k00: z(),
            k0: [z(), z(), z()],
            kh: [z(), z(), z(), z(), z(), z()],
            p: z(),
            u: [z(), z(), z()],
        }
    }

    pub fn n(&self) -> usize {
        self.g00.n()
    }

    pub fn fields(&self) -> Vec<&ScalarField> {
        let mut v = vec![&self.g00];
        v.extend(self.g0.iter());
        v.extend(self.h.iter());
        v.push(&self.k00);
        v.extend(self.k0.iter());
        v.extend(self.kh.iter());
        v.push(&self.p);
        v.extend(self.u.iter());
        v
    }

    pub fn fields_mut(&mut self) -> Vec<&mut ScalarField> {
        let mut v = vec![&mut self.g00];
        v.extend(self.g0.iter_mut());
        v.extend(self.h.iter_mut());
        v.push(&mut self.k00);
        v.extend(self.k0.iter_mut());
        v.extend(self.kh.iter_mut());
        v.push(&mut self.p);
        v.extend(self.u.iter_mut());
        v
    }

    pub fn field_names() -> &'static [&'static str] {
        &[
            "g00", "g01", "g02", "g03", "h11", "h12", "h13", "h22", "h23", "h33", "k00", "k01",
            "k02", "k03", "kh11", "kh12", "kh13", "kh22", "kh23", "kh33", "P", "u1", "u2", "u3",
        ]
    }

    /// self <- self + c * other (all evolved fields; time is managed by the
    /// integrator).
    pub fn axpy(&mut self, c: f64, other: &FieldState) {
        for (a, b) in self.fields_mut().into_iter().zip(other.fields()) {
            a.axpy(c, b);
        }
    }

    /// Spatial 3-metric h at a point, unpacked.
    #[inline]
    pub fn h_at(&self, idx: usize) -> Mat3 {
        let mut vals = [0.0; 6];
        for (s, f) in self.h.iter().enumerate() {
            vals[s] = f.values()[idx];
        }
        mat3_from_sym(vals)
    }

    /// dt h at a point, unpacked.
    #[inline]
    pub fn kh_at(&self, idx: usize) -> Mat3 {
        let mut vals = [0.0; 6];
        for (s, f) in self.kh.iter().enumerate() {
            vals[s] = f.values()[idx];
        }
        mat3_from_sym(vals)
    }

    /// Full spacetime metric at a point (g_jk = e^{2 Omega} h_jk).
    #[inline]
    pub fn metric_at(&self, idx: usize, e2o: f64) -> crate::tensor::Mat4 {
        let mut g = [[0.0; 4]; 4];
        g[0][0] = self.g00.values()[idx];
        for j in 0..3 {
            g[0][j + 1] = self.g0[j].values()[idx];
            g[j + 1][0] = g[0][j + 1];
        }
        let h = self.h_at(idx);
        for (j, row) in h.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                g[j + 1][k + 1] = e2o * v;
            }
        }
        g
    }

    /// Pointwise admissibility: h positive definite, P > 0, g00 < 0.
    /// Returns the first offending point.
    pub fn validate(&self, bg: &BackgroundState) -> Result<()> {
        let n = self.n();
        let _ = bg;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = (i * n + j) * n + k;
                    let g00 = self.g00.values()[idx];
                    if !(g00 < 0.0) {
                        return Err(Error::Breakdown {
                            case: crate::error::BreakdownCase::MetricTimeDegenerate,
                            t: self.t,
                            i,
                            j,
                            k,
                            detail: format!("g00 = {g00}"),
                        });
                    }
                    let h = self.h_at(idx);
                    let eig = mat3_min_eigenvalue(&h);
                    if !(eig > 0.0) {
                        return Err(Error::Breakdown {
                            case: crate::error::BreakdownCase::MetricSpaceDegenerate,
                            t: self.t,
                            i,
                            j,
                            k,
                            detail: format!("min eig h = {eig}"),
                        });
                    }
                    let p = self.p.values()[idx];
                    if !(p > 0.0) {
                        return Err(Error::Breakdown {
                            case: crate::error::BreakdownCase::VacuumPressure,
                            t: self.t,
                            i,
                            j,
                            k,
                            detail: format!("P = {p}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Minimum of P over the grid.
    pub fn min_pressure(&self) -> f64 {
        self.p.min_value()
    }

    /// Minimum over the grid of the smallest eigenvalue of h.
    pub fn min_eig_h(&self) -> f64 {
        let mut m = f64::INFINITY;
        for idx in 0..self.g00.len() {
            m = m.min(mat3_min_eigenvalue(&self.h_at(idx)));
        }
        m
    }

    /// Largest sup norm over all evolved fields (C_b-norm proxy for the
    /// blowup monitor).
    pub fn sup_over_fields(&self) -> f64 {
        self.fields().iter().fold(0.0f64, |m, f| m.max(f.sup_norm()))
    }

    /// Writes all fields in the binary snapshot format.
    pub fn write_snapshot<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        for (name, f) in Self::field_names().iter().zip(self.fields()) {
            f.write_binary(name, w)?;
        }
        Ok(())
    }
}

/// Packed symmetric iteration helper re-exported where state fields are
/// walked component-wise.
pub use crate::tensor::sym3;

pub fn sym3_pairs() -> &'static [(usize, usize); 6] {
    &SYM3
}

//! Periodic grid on T^3 = [-pi, pi)^3 with spectral (or 4th-order finite
//! difference) differentiation, Sobolev/sup norms, dealiasing, and field
//! serialization.
//!
//! Wavenumbers are integers; the domain has period 2*pi in every direction.
//! Fields are stored row-major over (x1, x2, x3), x3 fastest.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::io::{Read, Write};
use std::sync::Arc;

/// Differentiation backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Spectral,
    /// 4th-order centered finite differences (cross-validation backend).
    FiniteDifference4,
}

/// Real scalar field sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    n: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { n, data: vec![0.0; n * n * n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        ScalarField { n, data: vec![c; n * n * n] }
    }

    /// Builds a field from point values; rejects NaN/Inf.
    pub fn from_fn(n: usize, mut f: impl FnMut(f64, f64, f64) -> f64) -> Self {
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let mut data = Vec::with_capacity(n * n * n);
        for i in 0..n {
            let x1 = -std::f64::consts::PI + i as f64 * h;
            for j in 0..n {
                let x2 = -std::f64::consts::PI + j as f64 * h;
                for k in 0..n {
                    let x3 = -std::f64::consts::PI + k as f64 * h;
                    data.push(f(x1, x2, x3));
                }
            }
        }
        ScalarField { n, data }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * n {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                n * n * n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("<from_vec>".into()));
        }
        Ok(ScalarField { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// y <- y + c * x
    pub fn axpy(&mut self, c: f64, x: &ScalarField) {
        debug_assert_eq!(self.n, x.n);
        for (a, b) in self.data.iter_mut().zip(x.data.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    /// Serializes to the flat binary snapshot layout:
    /// magic "WGF1", name length (u32 LE), name bytes, n (u32 LE),
    /// then n^3 f64 LE values row-major.
    pub fn write_binary<W: Write>(&self, name: &str, w: &mut W) -> Result<()> {
        w.write_all(b"WGF1")?;
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads one field in the binary snapshot layout; returns (name, field).
    pub fn read_binary<R: Read>(r: &mut R) -> Result<(String, ScalarField)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"WGF1" {
            return Err(Error::GridMismatch("bad snapshot magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let name_len = u32::from_le_bytes(b4) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::GridMismatch("snapshot name not utf-8".into()))?;
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut data = vec![0.0f64; n * n * n];
        let mut b8 = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Ok((name, ScalarField::from_vec(n, data)?))
    }

    /// CSV form (i,j,k,value rows) for small grids.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "i,j,k,value")?;
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    writeln!(w, "{},{},{},{:.17e}", i, j, k, self.data[self.idx(i, j, k)])?;
                }
            }
        }
        Ok(())
    }
}

/// The discrete substrate: grid size, spacing, FFT plans, backend and the
/// dealiasing flag shared by every field operation.
pub struct Grid {
    n: usize,
    backend: Backend,
    dealias: bool,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// integer wavenumbers per mode index
    wavenumbers: Vec<i64>,
}

impl Grid {
    pub fn new(n: usize, backend: Backend, dealias: bool) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "grid size must be a power of two >= 8, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let wavenumbers = (0..n)
            .map(|m| if m < n / 2 { m as i64 } else { m as i64 - n as i64 })
            .collect();
        Ok(Grid { n, backend, dealias, fwd, inv, wavenumbers })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn dealias_enabled(&self) -> bool {
        self.dealias
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField::zeros(self.n)
    }

    fn check(&self, f: &ScalarField) -> Result<()> {
        if f.n != self.n {
            return Err(Error::GridMismatch(format!(
                "field has n = {}, grid has n = {}",
                f.n, self.n
            )));
        }
        Ok(())
    }

    /// Applies the 1D FFT pass along `axis` with a per-mode complex multiplier.
    fn axis_pass(&self, data: &mut [f64], axis: usize, mult: &[Complex64]) {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let stride = match axis {
            0 => n * n,
            1 => n,
            _ => 1,
        };
        // iterate over all lanes orthogonal to `axis`
        let (outer, inner) = match axis {
            0 => (n, n),
            1 => (n, n),
            _ => (n, n),
        };
        for a in 0..outer {
            for b in 0..inner {
                let base = match axis {
                    0 => a * n + b,
                    1 => a * n * n + b,
                    _ => (a * n + b) * n,
                };
                for (m, slot) in buf.iter_mut().enumerate() {
                    *slot = Complex64::new(data[base + m * stride], 0.0);
                }
                self.fwd.process(&mut buf);
                for (m, slot) in buf.iter_mut().enumerate() {
                    *slot *= mult[m];
                }
                self.inv.process(&mut buf);
                let scale = 1.0 / n as f64;
                for (m, slot) in buf.iter().enumerate() {
                    data[base + m * stride] = slot.re * scale;
                }
            }
        }
    }

    /// First derivative along `axis` (1, 2 or 3).
    pub fn derivative(&self, f: &ScalarField, axis: usize) -> Result<ScalarField> {
        self.check(f)?;
        if !(1..=3).contains(&axis) {
            return Err(Error::InvalidParameter(format!("axis must be 1..3, got {axis}")));
        }
        match self.backend {
            Backend::Spectral => Ok(self.derivative_spectral(f, axis)),
            Backend::FiniteDifference4 => Ok(self.derivative_fd4(f, axis)),
        }
    }

    fn derivative_spectral(&self, f: &ScalarField, axis: usize) -> ScalarField {
        let n = self.n;
        let mut out = f.clone();
        let mut mult = vec![Complex64::new(0.0, 0.0); n];
        for (m, k) in self.wavenumbers.iter().enumerate() {
            // zero the (unpaired) Nyquist mode for odd derivatives
            let kk = if m == n / 2 { 0 } else { *k };
            mult[m] = Complex64::new(0.0, kk as f64);
        }
        self.axis_pass(out.values_mut(), axis - 1, &mult);
        out
    }

    fn derivative_fd4(&self, f: &ScalarField, axis: usize) -> ScalarField {
        let n = self.n;
        let h = self.spacing();
        let mut out = ScalarField::zeros(n);
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let wrap = |i: isize| (((i % n as isize) + n as isize) % n as isize) as usize;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let sample = |o: isize| -> f64 {
                        let (a, b, c) = match axis {
                            1 => (wrap(i as isize + o), j, k),
                            2 => (i, wrap(j as isize + o), k),
                            _ => (i, j, wrap(k as isize + o)),
                        };
                        f.data[idx(a, b, c)]
                    };
                    out.data[idx(i, j, k)] =
                        (8.0 * (sample(1) - sample(-1)) - (sample(2) - sample(-2))) / (12.0 * h);
                }
            }
        }
        out
    }

    /// Runs a batch of first-derivative jobs, possibly across threads
    /// (WAVEGAUGE_THREADS); job i's output depends only on job i, so the
    /// result is bit-identical for every thread count.
    pub fn derivatives_batch(&self, jobs: &[(&ScalarField, usize)]) -> Result<Vec<ScalarField>> {
        for (f, axis) in jobs {
            self.check(f)?;
            if !(1..=3).contains(axis) {
                return Err(Error::InvalidParameter(format!("axis must be 1..3, got {axis}")));
            }
        }
        let threads = thread_count().min(jobs.len().max(1));
        if threads <= 1 {
            return Ok(jobs
                .iter()
                .map(|(f, axis)| match self.backend {
                    Backend::Spectral => self.derivative_spectral(f, *axis),
                    Backend::FiniteDifference4 => self.derivative_fd4(f, *axis),
                })
                .collect());
        }
        let mut out: Vec<Option<ScalarField>> = (0..jobs.len()).map(|_| None).collect();
        let chunk = jobs.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (job_chunk, out_chunk) in jobs.chunks(chunk).zip(out.chunks_mut(chunk)) {
                scope.spawn(move || {
                    for ((f, axis), slot) in job_chunk.iter().zip(out_chunk.iter_mut()) {
                        *slot = Some(match self.backend {
                            Backend::Spectral => self.derivative_spectral(f, *axis),
                            Backend::FiniteDifference4 => self.derivative_fd4(f, *axis),
                        });
                    }
                });
            }
        });
        Ok(out.into_iter().map(|o| o.expect("job completed")).collect())
    }

    /// 2/3-rule spectral truncation (no-op when the grid was built with
    /// `dealias = false`).
    pub fn dealias(&self, f: &mut ScalarField) {
        if !self.dealias {
            return;
        }
        self.truncate(f, self.n as i64 / 3);
    }

    /// Zeroes all modes with any |k_i| > k_keep.
    pub fn truncate(&self, f: &mut ScalarField, k_keep: i64) {
        let n = self.n;
        let mut mult = vec![Complex64::new(0.0, 0.0); n];
        for (m, k) in self.wavenumbers.iter().enumerate() {
            mult[m] = if k.abs() <= k_keep {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        for axis in 0..3 {
            self.axis_pass(f.values_mut(), axis, &mult);
        }
    }

    /// Full 3D forward FFT to normalized coefficients: f = sum fhat e^{i k.x}.
    pub fn fft3(&self, f: &ScalarField) -> Vec<Complex64> {
        let n = self.n;
        let mut c: Vec<Complex64> = f.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..3 {
            let stride = match axis {
                0 => n * n,
                1 => n,
                _ => 1,
            };
            for a in 0..n {
                for b in 0..n {
                    let base = match axis {
                        0 => a * n + b,
                        1 => a * n * n + b,
                        _ => (a * n + b) * n,
                    };
                    for (m, slot) in buf.iter_mut().enumerate() {
                        *slot = c[base + m * stride];
                    }
                    self.fwd.process(&mut buf);
                    for (m, slot) in buf.iter().enumerate() {
                        c[base + m * stride] = *slot;
                    }
                }
            }
        }
        let scale = 1.0 / (n as f64).powi(3);
        for v in c.iter_mut() {
            *v *= scale;
        }
        c
    }

    /// Inverse of `fft3` (normalized-coefficient convention).
    pub fn ifft3(&self, coeffs: &[Complex64]) -> ScalarField {
        let n = self.n;
        let mut c = coeffs.to_vec();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..3 {
            let stride = match axis {
                0 => n * n,
                1 => n,
                _ => 1,
            };
            for a in 0..n {
                for b in 0..n {
                    let base = match axis {
                        0 => a * n + b,
                        1 => a * n * n + b,
                        _ => (a * n + b) * n,
                    };
                    for (m, slot) in buf.iter_mut().enumerate() {
                        *slot = c[base + m * stride];
                    }
                    self.inv.process(&mut buf);
                    for (m, slot) in buf.iter().enumerate() {
                        c[base + m * stride] = *slot;
                    }
                }
            }
        }
        let mut out = ScalarField::zeros(n);
        for (o, v) in out.values_mut().iter_mut().zip(c.iter()) {
            *o = v.re;
        }
        out
    }

    /// d_alpha f from a precomputed spectrum, with one combined multiplier
    /// pass: multiplies each mode by prod_i (i k_i)^{alpha_i}.
    pub fn multi_derivative_from_fft(
        &self,
        coeffs: &[Complex64],
        alpha: [usize; 3],
    ) -> ScalarField {
        let n = self.n;
        let mut c = coeffs.to_vec();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = (i * n + j) * n + k;
                    let mut m = Complex64::new(1.0, 0.0);
                    for (axis, &mi) in [i, j, k].iter().enumerate() {
                        let deg = alpha[axis];
                        if deg == 0 {
                            continue;
                        }
                        // zero the unpaired Nyquist mode under odd derivatives
                        let kk = if mi == n / 2 && deg % 2 == 1 {
                            0.0
                        } else {
                            self.wavenumbers[mi] as f64
                        };
                        let ik = Complex64::new(0.0, kk);
                        m *= ik.powu(deg as u32);
                    }
                    c[idx] *= m;
                }
            }
        }
        self.ifft3(&c)
    }

    /// Sobolev norm ||f||_{H^N} = (sum_{|alpha| <= N} int |d_alpha f|^2)^{1/2}
    /// via spectral multipliers; the integral carries the cell volume
    /// (2 pi / n)^3 through Parseval.
    pub fn sobolev_norm(&self, f: &ScalarField, order: usize) -> Result<f64> {
        self.check(f)?;
        let c = self.fft3(f);
        let n = self.n;
        let vol = (2.0 * std::f64::consts::PI).powi(3);
        let mut total = 0.0;
        for i in 0..n {
            let k1 = self.wavenumbers[i] as f64;
            for j in 0..n {
                let k2 = self.wavenumbers[j] as f64;
                for k in 0..n {
                    let k3 = self.wavenumbers[k] as f64;
                    let power = c[(i * n + j) * n + k].norm_sqr();
                    if power == 0.0 {
                        continue;
                    }
                    let mut mult = 0.0;
                    // sum over |alpha| <= N of k1^{2a1} k2^{2a2} k3^{2a3}
                    for a1 in 0..=order {
                        for a2 in 0..=(order - a1) {
                            for a3 in 0..=(order - a1 - a2) {
                                mult += k1.powi(2 * a1 as i32)
                                    * k2.powi(2 * a2 as i32)
                                    * k3.powi(2 * a3 as i32);
                            }
                        }
                    }
                    total += power * mult;
                }
            }
        }
        Ok((total * vol).sqrt())
    }

    /// L^2 norm (Sobolev order 0) computed by the trapezoidal rule; used as
    /// the quadrature route in tests and for integrands already on the grid.
    pub fn integral(&self, f: &ScalarField) -> f64 {
        let h3 = self.spacing().powi(3);
        f.data.iter().sum::<f64>() * h3
    }

    pub fn l2_norm(&self, f: &ScalarField) -> f64 {
        let h3 = self.spacing().powi(3);
        (f.data.iter().map(|v| v * v).sum::<f64>() * h3).sqrt()
    }

    pub fn sup_norm(&self, f: &ScalarField) -> f64 {
        f.sup_norm()
    }
}

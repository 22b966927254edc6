//! Seeded band-limited trigonometric fields.
//!
//! Used by the perturbation builder and by the identity checks; the same
//! coefficients give bit-identical fields on any grid that resolves them.

use crate::grid::ScalarField;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Thin deterministic RNG wrapper (ChaCha8, stable across platforms).
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.gen_range(-1.0..1.0)
    }
}

/// A real trigonometric polynomial sum_k a_k cos(k.x) + b_k sin(k.x) over
/// integer wavevectors with 0 < max_i |k_i| <= k_max (zero mean by
/// construction).
pub struct TrigPoly {
    modes: Vec<([i64; 3], f64, f64)>,
}

impl TrigPoly {
    /// Random coefficients in [-1, 1], then scaled so that
    /// sup |poly| <= amplitude is guaranteed (normalizing by sum |a|+|b|).
    pub fn random(rng: &mut Rng, k_max: i64, amplitude: f64) -> Self {
        let mut modes = Vec::new();
        let mut weight = 0.0;
        for k1 in -k_max..=k_max {
            for k2 in -k_max..=k_max {
                for k3 in 0..=k_max {
                    // half-space to avoid duplicating k and -k directions
                    if k3 == 0 && (k2 < 0 || (k2 == 0 && k1 <= 0)) {
                        continue;
                    }
                    let a = rng.uniform();
                    let b = rng.uniform();
                    weight += a.abs() + b.abs();
                    modes.push(([k1, k2, k3], a, b));
                }
            }
        }
        if weight > 0.0 {
            let s = amplitude / weight;
            for m in modes.iter_mut() {
                m.1 *= s;
                m.2 *= s;
            }
        }
        TrigPoly { modes }
    }

    pub fn eval(&self, x1: f64, x2: f64, x3: f64) -> f64 {
        let mut v = 0.0;
        for ([k1, k2, k3], a, b) in &self.modes {
            let phase = *k1 as f64 * x1 + *k2 as f64 * x2 + *k3 as f64 * x3;
            v += a * phase.cos() + b * phase.sin();
        }
        v
    }

    pub fn sample(&self, n: usize) -> ScalarField {
        ScalarField::from_fn(n, |x1, x2, x3| self.eval(x1, x2, x3))
    }
}

/// Random band-limited field sampled on an n-point grid.
pub fn band_limited(grid: &crate::grid::Grid, rng: &mut Rng, k_max: i64, amplitude: f64) -> ScalarField {
    TrigPoly::random(rng, k_max, amplitude).sample(grid.n())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Backend, Grid};

    #[test]
    fn deterministic_given_seed() {
        let g = Grid::new(8, Backend::Spectral, false).unwrap();
        let a = band_limited(&g, &mut Rng::seeded(42), 2, 0.5);
        let b = band_limited(&g, &mut Rng::seeded(42), 2, 0.5);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_mean_and_bounded() {
        let g = Grid::new(16, Backend::Spectral, false).unwrap();
        let f = band_limited(&g, &mut Rng::seeded(3), 3, 0.2);
        assert!(g.integral(&f).abs() < 1e-12);
        assert!(f.sup_norm() <= 0.2 + 1e-12);
    }
}

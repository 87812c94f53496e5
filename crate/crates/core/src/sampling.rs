//! Reproducible samplers with fixed algorithms.
//!
//! Masks and synthetic data must be identical across library versions, so
//! the normal and Gamma samplers are spelled out here rather than delegated
//! to a distribution crate whose internals may change.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on the open interval (0, 1).
fn open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal by the Box–Muller transform (cosine branch only).
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1 = open_unit(rng);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gamma(shape, rate) by Marsaglia and Tsang (2000).
///
/// For `shape < 1` a Gamma(shape + 1) draw is scaled by `U^(1/shape)`.
pub fn gamma(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    assert!(
        shape > 0.0 && rate > 0.0,
        "gamma needs positive shape and rate"
    );
    if shape < 1.0 {
        let g = gamma(rng, shape + 1.0, 1.0);
        let u = open_unit(rng);
        return g * u.powf(1.0 / shape) / rate;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x = standard_normal(rng);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u = open_unit(rng);
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v / rate;
        }
    }
}

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-3;
/// Maximum relative error between analytic and numerical gradients.
pub const FD_REL_TOL: f64 = 1e-4;
/// Differences below this are round-off in the f64 central difference, not gradient errors.
pub const FD_ABS_FLOOR: f64 = 1e-9;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= FD_ABS_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Central difference of `f` with respect to coordinate `j` of `x`.
pub fn central_difference(x: &[f64], j: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut plus = x.to_vec();
    plus[j] += FD_STEP;
    let mut minus = x.to_vec();
    minus[j] -= FD_STEP;
    (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

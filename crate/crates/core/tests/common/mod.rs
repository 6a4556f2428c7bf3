#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random symmetric PSD matrix `L L^T` of rank `rank`.
pub fn random_psd(rng: &mut impl Rng, d: usize, rank: usize) -> DMatrix<f64> {
    let l = random_matrix(rng, d, rank);
    let m = &l * l.transpose();
    (&m + m.transpose()) * 0.5
}

/// Largest absolute entry of `a - b` relative to the largest entry of `b`
/// (absolute when `b` is zero).
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Wraps an angle difference into (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    deskew::geometry::wrap_angle(a - b)
}

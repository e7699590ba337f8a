//! Spectral normalization by power iteration.

use nalgebra::{DMatrix, DVector};

/// Iterations stop once the singular-value estimate moves by less than this
/// relative amount.
pub const POWER_TOLERANCE: f64 = 1e-10;
pub const MAX_POWER_ITERS: usize = 200;

#[derive(Clone, Debug)]
pub struct SpectralStep {
    pub weight: DMatrix<f64>,
    /// Left singular-vector estimate, length `weight.nrows()`.
    pub u: DVector<f64>,
    pub sigma: f64,
    /// Set when the matrix is zero and was returned unchanged.
    pub degenerate: bool,
}

/// Runs `iters` power-iteration steps from `u` and returns the updated `u` with
/// the estimate `σ̂ = uᵀ W v`. `None` means `W` annihilated the iterate.
pub fn power_iteration(w: &DMatrix<f64>, u: &DVector<f64>, iters: usize) -> Option<(DVector<f64>, f64)> {
    let mut u = normalized(u.clone()).unwrap_or_else(|| fallback(w.nrows()));
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let v = normalized(w.transpose() * &u)?;
        let wv = w * &v;
        let s = wv.norm();
        if s == 0.0 {
            return None;
        }
        u = wv / s;
        sigma = s;
    }
    Some((u, sigma))
}

/// Power iteration run until the estimate stops moving.
pub fn spectral_norm(w: &DMatrix<f64>, u: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let (mut u, mut sigma) = power_iteration(w, u, 1)?;
    for _ in 1..MAX_POWER_ITERS {
        let (u2, s2) = power_iteration(w, &u, 1)?;
        let moved = (s2 - sigma).abs();
        u = u2;
        sigma = s2;
        if moved <= POWER_TOLERANCE * sigma {
            break;
        }
    }
    Some((u, sigma))
}

/// `W̃ = W / σ̂`, with `σ̂` from warm-started power iteration.
pub fn spectral_normalize(w: &DMatrix<f64>, u: &DVector<f64>) -> SpectralStep {
    match spectral_norm(w, u) {
        Some((u, sigma)) => SpectralStep {
            weight: w / sigma,
            u,
            sigma,
            degenerate: false,
        },
        None => SpectralStep {
            weight: w.clone(),
            u: u.clone(),
            sigma: 0.0,
            degenerate: true,
        },
    }
}

fn normalized(v: DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / n)
}

fn fallback(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / (n as f64).sqrt())
}

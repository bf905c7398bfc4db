//! Vector observations: standardized factors and nuisance draws mixed by a
//! fixed random rotation, plus isotropic noise.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::seed::{self, Stream};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `n x (k + m_u)`
    pub observations: Matrix,
    /// `n x m_u`
    pub nuisance: Matrix,
    /// Orthogonal mixing; each observation row is `mixing * latent_row`.
    pub mixing: Matrix,
    pub factor_means: Vec<f64>,
    pub factor_sds: Vec<f64>,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix via QR with sign correction.
pub fn random_orthogonal(dim: usize, seed_value: u64) -> Matrix {
    let mut rng = seed::rng(seed_value);
    let g = normal_matrix(dim, dim, &mut rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

pub fn observe(
    factors: &Matrix,
    nuisance_dims: usize,
    noise_sd: f64,
    seed_value: u64,
) -> Result<Observation> {
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(invalid("observation noise must be finite and non-negative"));
    }
    let n = factors.nrows();
    let k = factors.ncols();
    let (means, sds) = linalg::column_moments(factors);
    let standardized = linalg::standardize(factors, &means, &sds);

    let mut nuisance_rng = seed::stream_rng(seed_value, Stream::Nuisance);
    let nuisance = normal_matrix(n, nuisance_dims, &mut nuisance_rng);

    let dim = k + nuisance_dims;
    let mixing = random_orthogonal(dim, seed::derive(seed_value, Stream::Mixing));

    let mut latent = Matrix::zeros(n, dim);
    latent.columns_mut(0, k).copy_from(&standardized);
    latent.columns_mut(k, nuisance_dims).copy_from(&nuisance);

    let mut observations = &latent * mixing.transpose();
    if noise_sd > 0.0 {
        let mut noise_rng = seed::stream_rng(seed_value, Stream::ObservationNoise);
        observations += normal_matrix(n, dim, &mut noise_rng) * noise_sd;
    }
    Ok(Observation {
        observations,
        nuisance,
        mixing,
        factor_means: means,
        factor_sds: sds,
    })
}

/// Fixed-point-free permutation of `0..n`.
pub fn make_pairs(n: usize, seed_value: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(invalid(format!(
            "pairing needs at least 2 samples, got {n}"
        )));
    }
    let mut rng = seed::rng(seed_value);
    let mut p: Vec<usize> = (0..n).collect();
    for _ in 0..1000 {
        p.shuffle(&mut rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return Ok(p);
        }
    }
    Ok((0..n).map(|i| (i + 1) % n).collect())
}

//! Random CP tensors for tests, examples and experiments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{CpTensor, Grid};

/// CP tensor of rank `rank` on `dims` with i.i.d. standard normal weights and
/// factor entries (columns are then normalized into the weights).
pub fn random_cp<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], rank: usize) -> CpTensor {
    let grid = Grid::new(dims.to_vec()).expect("valid grid");
    let weights = (0..rank).map(|_| rng.sample(StandardNormal)).collect();
    let factors = dims
        .iter()
        .map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.sample(StandardNormal)))
        .collect();
    CpTensor::new(grid, weights, factors).expect("finite random tensor")
}

/// Random rank-1 tensor with weight drawn uniformly from `[0.5, 2)`.
pub fn random_rank_one<R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> CpTensor {
    let t = random_cp(rng, dims, 1);
    let w: f64 = rng.random_range(0.5..2.0);
    let s = w / t.weights()[0].abs();
    t.scaled(s)
}

//! Greedy low-rank approximation of tensors given in CP format.
//!
//! The rank-1 update of [`cptt`] runs a sequence of unfolding PODs
//! ([`pod`]) on the CP representation itself, fixing one dimension at a time
//! in the order of decreasing leading singular value. [`baselines`] has the
//! ALS and ASVD fixed-point solvers; [`greedy`] wraps any of the three in
//! the greedy loop with least-squares coefficients. [`bench`] generates the
//! random test functions and runs campaigns.
//!
//! ```
//! use cptt::{greedy_decompose, GreedyConfig, Method};
//! use cptt::sample::random_cp;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let f = random_cp(&mut rng, &[10, 10, 10], 8);
//! let (approx, trace) = greedy_decompose(&f, &GreedyConfig::new(Method::Cptt, 4)).unwrap();
//! assert_eq!(approx.rank(), 4);
//! assert!(trace.final_rel_residual() < 1.0);
//! ```

pub mod baselines;
pub mod bench;
pub mod cptt;
pub mod error;
pub mod greedy;
pub mod io;
mod linalg;
pub mod pod;
pub mod sample;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use baselines::{als_rank1, asvd_rank1, FixedPointConfig, SolveOutcome};
pub use cptt::{cptt_rank1, cptt_rankk};
pub use error::{Error, Result};
pub use greedy::{greedy_decompose, GreedyConfig, GreedyTrace, Method};
pub use pod::{unfolding_pod, PodPath, PodResult};
pub use tensor::{axpy, contract_mode, inner, norm, CpTensor, DenseTensor, Grid, PureTensor};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cp-tensors.md")]
    mod cp_tensors {}
    #[doc = include_str!("../../../book/src/unfolding-pod.md")]
    mod unfolding_pod {}
    #[doc = include_str!("../../../book/src/cp-tt.md")]
    mod cp_tt {}
    #[doc = include_str!("../../../book/src/greedy.md")]
    mod greedy {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

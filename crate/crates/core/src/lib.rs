//! Black-box distillation of a mixture-SEIR simulation ensemble into a small
//! feed-forward forecaster.
//!
//! The pipeline has four stages:
//!
//! 1. [`teacher`]: a discrete grid of community scenarios simulated with
//!    [`seir`] and calibrated against observed incidence by minimum MSE.
//! 2. [`pool`]: key-based teacher queries producing observation/projection
//!    pairs, expanded with sequence mixup.
//! 3. [`student`]: an MLP trained on the pool with the imitation loss.
//! 4. [`eval`]: weekly MAPE/RMSE comparison of teacher, student and coarse
//!    search, on series prepared by [`data`].
//!
//! [`config`] and [`pipeline`] tie the stages together for the command line
//! tool and the end-to-end benchmarks.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod pool;
pub mod seir;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};

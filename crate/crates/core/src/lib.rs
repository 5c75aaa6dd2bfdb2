pub mod conjugate;
pub mod evaluation;
pub mod error;
pub mod gibbs;
pub mod identifiability;
pub mod init;
pub mod io;
pub mod latent;
pub mod linalg;
pub mod model;
pub mod multiscale;
mod parallel;
pub mod polya_gamma;
mod serde_mat;
pub mod stick_breaking;
pub mod synthetic;
pub mod tree;

pub use error::{Error, Result};
pub use parallel::set_threads;
pub use stick_breaking::{Hyperplane, HyperplaneSet, LeafDistribution};
pub use tree::{NodeId, TreeTopology};

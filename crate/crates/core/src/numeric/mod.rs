//! Dense arrays, linear algebra and seeded randomness.

mod linalg;
mod rng;
mod tensor;

pub use linalg::{dot, eigh_symmetric, matmul, matmul_nt, matmul_tn, squared_distance};
pub(crate) use linalg::{gemm, Strided};
pub use rng::{derive_seed, Rng};
pub use tensor::{Mat, Tensor3};

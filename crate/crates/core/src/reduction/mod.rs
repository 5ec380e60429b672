//! Feature-space reduction: PCA on vectors, 2D²PCA on feature maps,
//! channel scalarizers and per-feature refiners.

mod pca;
mod refine;
mod scalarize;
mod twod_pca;

pub use pca::{fit_pca, PcaDims, PcaModel};
pub use refine::{fit_refiner, RefinerKind, RefinerModel};
pub use scalarize::{scalarize, ScalarizerKind};
pub use twod_pca::{fit_2d2pca, TwoDPcaAccumulator, TwoDPcaFilter, TwoDPcaModel};

//! Representations and recursions for the marginal parameter posterior:
//! grid-based, normal approximation, and the conjugate inverse-gamma
//! component for a scalar variance multiplier.

pub mod grid;
pub mod normal;
pub mod optimize;
pub mod prior;

pub use grid::{GridMoments, ParamGrid};
pub use normal::{InverseGammaPosterior, NormalParamPosterior, NormalUpdateDiag};
pub use prior::{PriorFamily, PriorSpec};

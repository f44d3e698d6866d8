//! Density space over the truncated domain, the transfer operator, its
//! adjoint and the fixed-point iteration.

mod grid;
mod iterate;
mod transfer;

pub use grid::{build_grid, DensityGrid, DensityVector, FLOOR_FACTOR};
pub use iterate::{iterate, IterationRecord, IterationTrace, Termination};
pub use transfer::{
    assemble_adjoint, assemble_likelihood_form, assemble_transfer, assemble_with, duality_residual,
    read_matrix, similarity_form, symmetrize, weighted_symmetry_residual, write_matrix, Assembly,
    Direction, TransferMatrix, LEAK_WARNING,
};

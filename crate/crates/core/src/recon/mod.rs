//! Brightness reconstruction from fused event bins.

mod naive;
mod net;

pub use naive::NaiveIntegrator;
pub use net::{recon_input_graph, ReconConfig, ReconNet, ReconState, RecurrentReconstructor};

use crate::{Result, Tensor};

/// Streaming reconstructor: one `[H, W]` frame in `[0, 1]` per bin.
pub trait Reconstruct {
    fn reset(&mut self);
    /// `d` is the fused `[H, W]` signed bin, `mask` the one-hot `[N_c, W]`
    /// threshold selection active during it.
    fn step(&mut self, d: &Tensor, mask: &Tensor) -> Result<Tensor>;
}

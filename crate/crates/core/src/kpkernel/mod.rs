//! Kernel point convolution.
//!
//! A neighbor at relative position `x'` contributes to kernel point `k`
//! with weight `h = max(0, 1 - |x' - x̃_k| / d)`, and the output at a query
//! is `Σ_i Σ_k h_ik · f_i W_k` over its neighbors `i`.

mod conv;
mod disposition;

pub use conv::{kpconv_backward, kpconv_forward, ConvInput, ConvWeights, InfluenceTable};
pub use disposition::{
    generate_kernel_points, kernel_influence, repulsion_energy, KernelDisposition,
    DEFAULT_INFLUENCE_RATIO, DEFAULT_KERNEL_SIZE, REPULSION_ITERATIONS,
};

//! Span prediction heads mapping an encoded passage to start/end
//! distributions.

mod ind;
mod map;
mod pointer;
mod probs;
mod vcp;

pub use ind::{ind_head, IndHead};
pub use map::{
    guard_full_matrix, map_conditional_row, map_first, map_full_matrix, map_row_logits,
    Direction, FirstPosition, MapContext, MapHead,
};
pub use probs::{ProbMatrix, ProbVector, SUM_TOLERANCE};
pub use vcp::{vcp_head, vcp_init_state, vcp_pointer, VcpHead};

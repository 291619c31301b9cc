//! Numeric kernel: tensor arithmetic with reverse-mode differentiation,
//! a probability-materializing attention primitive, a deterministic
//! pseudorandom source, and live-byte allocator instrumentation.

mod alloc;
mod gradcheck;
mod graph;
mod linalg;
mod rng;

pub use alloc::{allocator_reset_highwater, allocator_stats, AllocatorStats, Buf};
pub use gradcheck::grad_check;
pub use graph::{
    AttentionProbs, AttentionProbsBatch, AttnId, Graph, Var, IGNORE_ROW, SENTINEL_ROW,
};
pub use linalg::{axpy, dot, gemm, l2_sq};
pub use rng::DetRng;

use std::sync::atomic::{AtomicBool, Ordering};

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

/// Force dropout off across the crate. Gradient checks and the bitwise
/// reproducibility tests rely on this.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn deterministic_mode() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

//! Tensor payload buffers with live-byte accounting.
//!
//! Every f64 buffer that backs a tensor value, gradient, or saved
//! intermediate goes through [`Buf`], which bumps a process-wide live-byte
//! counter on allocation and decrements it on drop. The high-water mark is
//! the desk-scale analog of peak device memory: reset it at the start of a
//! training step, read it at the end.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};

static LIVE_BYTES: AtomicU64 = AtomicU64::new(0);
static HIGH_WATER: AtomicU64 = AtomicU64::new(0);

/// Snapshot of the allocator instrumentation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocatorStats {
    /// Bytes of tensor payload currently alive.
    pub live_bytes: u64,
    /// Maximum of `live_bytes` observed since the last reset.
    pub high_water_bytes: u64,
}

/// Current live bytes and the high-water mark since the last reset.
pub fn allocator_stats() -> AllocatorStats {
    AllocatorStats {
        live_bytes: LIVE_BYTES.load(Ordering::SeqCst),
        high_water_bytes: HIGH_WATER.load(Ordering::SeqCst),
    }
}

/// Set the high-water mark back to the current live-byte count.
pub fn allocator_reset_highwater() {
    HIGH_WATER.store(LIVE_BYTES.load(Ordering::SeqCst), Ordering::SeqCst);
}

fn account_alloc(bytes: u64) {
    let live = LIVE_BYTES.fetch_add(bytes, Ordering::SeqCst) + bytes;
    HIGH_WATER.fetch_max(live, Ordering::SeqCst);
}

fn account_free(bytes: u64) {
    LIVE_BYTES.fetch_sub(bytes, Ordering::SeqCst);
}

/// Fixed-length f64 buffer whose payload bytes are tracked by the
/// instrumented allocator. Only the payload (`len * 8` bytes) is counted;
/// bookkeeping overhead is not, so reduction ratios stay comparable across
/// implementations.
#[derive(Debug)]
pub struct Buf {
    data: Vec<f64>,
}

impl Buf {
    pub fn zeros(len: usize) -> Self {
        account_alloc((len * 8) as u64);
        Buf {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        account_alloc((data.len() * 8) as u64);
        Buf { data }
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self::from_vec(data.to_vec())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Consume the buffer and hand back the raw vector (accounting is
    /// released here, not at the vector's eventual drop).
    pub fn into_vec(self) -> Vec<f64> {
        let mut me = self;
        account_free((me.data.len() * 8) as u64);
        std::mem::take(&mut me.data)
    }
}

impl Clone for Buf {
    fn clone(&self) -> Self {
        Buf::from_vec(self.data.clone())
    }
}

impl Drop for Buf {
    fn drop(&mut self) {
        account_free((self.data.len() * 8) as u64);
    }
}

impl Deref for Buf {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Buf {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl From<Vec<f64>> for Buf {
    fn from(v: Vec<f64>) -> Self {
        Buf::from_vec(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn high_water_never_below_live() {
        let _a = Buf::zeros(1000);
        let s = allocator_stats();
        assert!(s.high_water_bytes >= s.live_bytes);
    }

    #[test]
    fn into_vec_releases_accounting() {
        let before = allocator_stats().live_bytes;
        let b = Buf::zeros(64);
        let v = b.into_vec();
        assert_eq!(v.len(), 64);
        assert_eq!(allocator_stats().live_bytes, before);
    }
}

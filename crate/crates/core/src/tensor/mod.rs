//! Dense 2-D tensors and a reverse-mode autodiff graph that supports
//! higher-order gradients.

mod graph;
mod matrix;

pub use graph::{Graph, NodeId};
pub use matrix::Matrix;

/// Keeps freed matrix buffers in the heap instead of returning them to the
/// OS. Autodiff graphs allocate many short-lived buffers above glibc's mmap
/// threshold, and the page faults from remapping them dominate step time.
pub fn retain_heap() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| unsafe {
            // SAFETY: mallopt only adjusts allocator tuning parameters.
            libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        });
    }
}

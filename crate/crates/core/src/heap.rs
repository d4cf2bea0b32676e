//! Allocator settings for training.
//!
//! Every step builds and drops a tape full of large buffers. Under glibc's
//! default thresholds those pages go back to the kernel when the tape drops
//! and are faulted in again by the next step.

/// Keeps freed memory in the process heap. Idempotent; a no-op off glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        use std::os::raw::c_int;
        use std::sync::Once;

        const M_TRIM_THRESHOLD: c_int = -1;
        const M_MMAP_THRESHOLD: c_int = -3;
        // glibc's ceiling for the mmap threshold on 64-bit targets.
        const MMAP_MAX: c_int = 32 << 20;

        extern "C" {
            fn mallopt(param: c_int, value: c_int) -> c_int;
        }

        static ONCE: Once = Once::new();
        // SAFETY: mallopt only adjusts allocator parameters.
        ONCE.call_once(|| unsafe {
            mallopt(M_TRIM_THRESHOLD, c_int::MAX);
            mallopt(M_MMAP_THRESHOLD, MMAP_MAX);
        });
    }
}

//! Process CPU time, which is what the wallclock columns report.

/// Milliseconds of CPU time consumed by this process so far, across all
/// threads. Runs executed concurrently in one process share this clock, so
/// wallclock comparisons should come from single-worker sweeps.
pub fn process_cpu_ms() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec and the clock id is a
    // constant supported on every Linux and macOS target.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime(CLOCK_PROCESS_CPUTIME_ID) failed");
    ts.tv_sec as f64 * 1e3 + ts.tv_nsec as f64 * 1e-6
}

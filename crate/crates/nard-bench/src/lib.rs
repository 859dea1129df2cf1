//! Shared helpers for the criterion benchmarks.

use nard_core::*;

/// A reproducible synthetic instance sized for benchmarking.
pub fn bench_instance(d: usize, m: usize, n: usize) -> Dataset {
    let spec = SynthSpec::new(d, m, n, 0.05, 0.1, 42);
    generate(&spec).expect("benchmark instance generation").0
}

/// Configuration running exactly `iters` solver iterations (the tolerance is
/// set low enough that the stop rule never fires first).
pub fn bench_config(method: Method, iters: usize) -> FitConfig {
    FitConfig {
        lambda: 0.1,
        epsilon: 1e-300,
        max_iter: iters,
        seed: 42,
        method,
        ..Default::default()
    }
}

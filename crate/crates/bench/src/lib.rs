//! Benchmarks for the selector kernels live in `benches/`.

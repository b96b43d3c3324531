//! Criterion benchmarks for the `bktrg` kernels live in `benches/`.

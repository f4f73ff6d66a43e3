//! Criterion benchmarks for the flamevol kernels live in `benches/`.

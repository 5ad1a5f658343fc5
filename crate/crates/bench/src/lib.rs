//! Criterion benchmarks for agescope; see `benches/`.

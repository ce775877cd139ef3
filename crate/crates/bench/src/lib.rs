//! Criterion benchmarks for turducken-core; see `benches/`.

//! Criterion benchmarks for the grounding pipeline live in `benches/`.

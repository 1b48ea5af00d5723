//! Criterion benchmarks for the hot paths of `kbae-core`; see `benches/`.

//! Criterion benchmarks for the hot paths; see `benches/dsg.rs`.

//! Criterion throughput benchmarks for `ym2-core`; see `benches/throughput.rs`.

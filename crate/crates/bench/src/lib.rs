//! Benchmarks for `biocon-core`; see `benches/`.

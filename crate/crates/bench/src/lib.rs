//! Benchmarks for the estimators live under `benches/`.

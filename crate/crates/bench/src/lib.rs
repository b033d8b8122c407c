//! Benchmarks for the pipelines live in benches/.

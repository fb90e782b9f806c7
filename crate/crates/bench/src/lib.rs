//! Criterion benchmarks for the numeric kernels, the model forward pass,
//! decoding and metric scoring. See `benches/kernels.rs`.

//! Criterion benchmarks for `tpivot-core`; see `benches/`.

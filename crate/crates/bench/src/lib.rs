//! Criterion benchmarks for the rod integrator, the environment and the learner live in `benches/`.

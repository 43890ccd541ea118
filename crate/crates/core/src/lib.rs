//! Token-level decoding interventions over pluggable generation backends,
//! plus the Theory-of-Mind benchmark harness and analyses built on them.
//!
//! The crate is organized around the generation loop in [`decode`]: a policy
//! ([`policies`]) watches the argmax of every step and may splice text into
//! the context instead of emitting it. Backends ([`backends`]) provide the
//! token streams; [`benchmarks`] loads datasets, builds prompt variants, and
//! scores answers; [`runner`] orchestrates experiments into line-delimited
//! record files; [`analysis`] aggregates those files into reports.

pub mod analysis;
pub mod backends;
pub mod benchmarks;
pub mod decode;
pub mod policies;
pub mod runner;

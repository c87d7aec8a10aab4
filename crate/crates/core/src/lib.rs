//! Toolkit for locating tunable constants ("deep parameters") in a source
//! tree and measuring how mutating them changes the energy consumption of a
//! scripted workload.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`source`] scans a corpus and enumerates every constant literal
//!    together with its syntactic context.
//! 2. [`filter`] narrows the sites to plausible parameters using line
//!    coverage, context heuristics and manual annotations.
//! 3. [`mutate`] plans alternative values for each candidate and splices
//!    them into the tree byte-exactly.
//! 4. [`measure`] produces one energy figure per run, either from an
//!    external meter via a reading file or from a drift-and-noise simulator.
//! 5. [`experiment`] drives back-to-back measurement campaigns with
//!    stability gating, checkpointing and build/measure overlap.
//! 6. [`stats`] makes the accept/reject call per mutated value with
//!    thresholded one-sided t-tests, and calibrates the thresholds.
//! 7. [`report`] turns a campaign journal into reviewable CSV/JSON reports.

pub mod experiment;
pub mod filter;
pub mod measure;
pub mod mutate;
pub mod report;
mod seeded;
pub mod source;
pub mod stats;

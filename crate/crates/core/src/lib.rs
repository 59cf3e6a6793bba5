//! Layered memory-activity templating.
//!
//! Finding which memory locations of a closed-source binary light up on which
//! input events, by probing successively finer granularities: sweep the whole
//! mapped image in coarse windows, keep only windows that correlate with some
//! event, subdivide the survivors, repeat down to cache-line resolution. The
//! resulting template is then cheap enough to watch in real time.
//!
//! The crate splits into:
//! - [`types`], [`matrix`]: the vocabulary (granularities, locations, events)
//!   and the per-layer hit-ratio matrices;
//! - [`probes`]: the reset/trigger/check backends (deterministic simulator,
//!   page-idle bitmap, page-cache residency, flush+reload) plus the
//!   read-around model;
//! - [`trace`]: deterministic access-trace fixtures driving the simulator;
//! - [`templater`], [`estimate`]: the layered search itself and its cost
//!   model;
//! - [`classifier`], [`template`]: turning matrices into event→location
//!   templates;
//! - [`monitor`]: replaying a template against a live target and scoring
//!   detections;
//! - [`binscan`]: static string-layout analysis of ELF binaries (which
//!   markers share a page / cache line);
//! - [`config`], [`manifest`], [`report`]: run configuration, reproducibility
//!   manifests, CSV/TOML serialization;
//! - [`cli`]: the `strata` command-line tool.

pub mod binscan;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod estimate;
pub mod manifest;
pub mod matrix;
pub mod monitor;
pub mod probes;
pub mod report;
pub mod template;
pub mod templater;
pub mod trace;
pub mod types;

//! Configuration, experiment drivers, and bit-stable output: strict TOML
//! configs, a tiny expression language for wall data and initial fields,
//! deterministic CSV tables and SVG plots, and a seeded invariant battery.

pub mod checks;
pub mod config;
pub mod expr;
pub mod runner;
pub mod svg;

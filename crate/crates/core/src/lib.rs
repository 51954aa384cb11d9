//! Flow-graph engine for systematic prompt and model comparison.

pub mod analysis;
pub mod cli;
pub mod demo;
pub mod engine;
pub mod eval;
pub mod flow;
pub mod planner;
pub mod provider;
pub mod service;
pub mod template;
pub mod workspace;

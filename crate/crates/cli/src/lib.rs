//! Scenario runner for the half-space boundary calculus: TOML configs in,
//! JSON reports and plot-ready CSV out.

pub mod commands;
pub mod config;
pub mod expr;
pub mod selftest;

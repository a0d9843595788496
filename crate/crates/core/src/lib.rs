//! Formulaic alpha mining over stock panels.
//!
//! The crate covers the whole pipeline: a typed formula language ([`dsl`]),
//! panel ingestion and targets ([`panel`]), operator evaluation ([`ops`]),
//! IC metrics ([`metrics`]), the weighted factor pool ([`pool`]), PPO-driven
//! formula search ([`search`]) and a Top-K/Swap-N backtest ([`backtest`]).
//! [`synth`] builds planted-signal panels for experiments and tests.

pub mod backtest;
pub mod dsl;
pub mod metrics;
pub mod ops;
pub mod panel;
pub mod pool;
pub mod search;
pub mod synth;

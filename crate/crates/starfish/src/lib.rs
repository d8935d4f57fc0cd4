//! Starfish: a multi-party off-chain rebalancing protocol for payment channel
//! networks, plus a desk-scale PCN simulator for comparing rebalancing
//! strategies (LN baseline, Close-Open, LOOP, Revive, the three Shaduf binding
//! strategies, and Starfish itself).
//!
//! The crate is organized around the protocol's layers:
//!
//! * [`core`] — coin/ledger arithmetic, channel/merge/edge records, signed
//!   states, and the signature backend.
//! * [`contracts`] — the on-chain channel and merge contract state machines,
//!   including funding escrow, challenge windows, and final payouts.
//! * [`engine`] — a deterministic synchronous round scheduler that runs party
//!   state machines (open/update/close for channels, merges, and edges) against
//!   the contracts, with scripted adversarial behaviors.
//! * [`strategies`] — rebalancing planners and the on-chain operation counter.
//! * [`sim`] — topology synthesis/ingestion, workload generation, routing, and
//!   the experiment harness that measures success ratios.

pub mod contracts;
pub mod core;
pub mod engine;
pub mod sim;
pub mod strategies;

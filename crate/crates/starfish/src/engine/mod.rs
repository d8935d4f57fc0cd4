//! Synchronous round-based protocol execution.
//!
//! Party-to-party messages deliver one round after sending; party-to-contract
//! calls confirm after Δ rounds; contract notifications are visible in their
//! emission round. Within a round the world delivers messages, ticks contract
//! deadlines, routes contract events, then steps every party in id order —
//! which makes whole runs a deterministic function of the scenario.

mod behavior;
mod message;
mod party;
mod scenario;
mod world;

pub use behavior::Behavior;
pub use message::{ContractCall, Endpoint, Envelope, PartyMsg, Payload};
pub use party::{
    broadcast_succeeds, ChannelView, Command, EdgeView, MergeView, Party, PartyOutput,
};
pub use scenario::{Scenario, ScenarioError, ScheduleEntry};
pub use world::{EventLog, LogRecord, World};

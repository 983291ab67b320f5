//! Simulation of a TEE-equipped shipping box reporting signed sensor records
//! to a partially-synchronous blockchain, and an auditor that decides whether
//! the resulting on-chain digital entity can be trusted.

pub mod chain;
pub mod codec;
pub mod crypto;
pub mod device;
pub mod environment;
pub mod network;
pub mod sampler;
pub mod sim;
pub mod types;
pub mod verifier;

pub use sim::{run, RunConfig, Trace};
pub use types::{DeviceId, DigitalEntity, Record, SensorReading, SimTime};
pub use verifier::{audit, AuditReport, TimingParams};

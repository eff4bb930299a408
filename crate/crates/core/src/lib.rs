//! Serverless mutual authentication and secure search between a UAV reader
//! and a population of RFID tags.
//!
//! The crate is organised bottom-up:
//!
//! * [`wire`]: fixed-width parameters and the five message layouts.
//! * [`crypto`]: the 160-bit keyed MAC and nonce sources.
//! * [`actors`]: backend server, UAV and tag state, grant derivation.
//! * [`protocol`]: the handshake step functions and operation counters.
//! * [`sim`]: a seeded broadcast medium, scenarios, adversaries and the
//!   security games.
//! * [`report`]: communication/computation accounting against the
//!   published figures.

pub mod actors;
pub mod crypto;
pub mod protocol;
pub mod report;
pub mod sim;
pub mod wire;

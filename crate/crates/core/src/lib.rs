//! Deterministic network-RTK testbed.
//!
//! A reference station streams raw observables over an NTRIP-style link to a
//! rover RTK engine. Adversary models act on the station's RF environment
//! (synchronous and asynchronous spoofing, barrage jamming) and a rover-side
//! gate decides whether the corrections may be trusted.

pub mod adversary;
pub mod constellation;
pub mod observation;
pub mod guard;
pub mod harness;
pub mod rover;
pub mod station;
pub mod wire;

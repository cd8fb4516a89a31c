//! Deterministic IEEE 802.15.4 beacon-enabled MAC.
//!
//! Periodic guaranteed time slots with reservation levels, PAN-wide
//! arbitration of slots and beacon slots across stars, pre-provisioned
//! dedicated slots, slotted CSMA/CA in the contention period, and a
//! discrete-event simulator with an experiment harness.

pub mod harness;
pub mod ids;
pub mod protocol;
pub mod schedule;
pub mod simcore;
pub mod timing;

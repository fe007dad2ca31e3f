//! Decentralized real-time safety verification for multi-agent systems.
//!
//! Each simulated agent periodically computes a short-horizon enclosure of
//! its own motion by face lifting ([`reach`]), broadcasts the enclosure's
//! interval hull over a lossy, clock-skewed channel ([`comm`]), and checks
//! local constraints, pairwise collision freedom and joint global properties
//! against the hulls it receives ([`verify`]). The discrete-event simulator
//! ([`sim`]) drives whole fleets through this loop deterministically and
//! audits every verdict against dense ground-truth trajectories.

pub mod comm;
pub mod dynamics;
pub mod geometry;
pub mod reach;
pub mod sim;
pub mod verify;

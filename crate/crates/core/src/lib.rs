//! Slot-level simulator for all-mmWave integrated access and backhaul
//! networks.

pub mod blockage;
pub mod connectivity;
pub mod engine;
pub mod mac;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod topology;
pub mod traffic;

//! Emergency messaging over a Bluetooth-Mesh-style managed flooding network.
//!
//! The stack is split the way a mesh node is: addressing and PDUs
//! ([`address`], [`pdu`], [`cache`], [`node`]), message protection
//! ([`security`]), the access layer with the emergency vendor model
//! ([`access`]), the GATT proxy protocol ([`proxy`]) and network bootstrap
//! ([`provisioning`]). [`sim`] wires them into a deterministic discrete-event
//! simulator of an advertising-bearer radio network.

pub mod access;
pub mod address;
pub mod cache;
pub mod node;
pub mod pdu;
pub mod provisioning;
pub mod proxy;
pub mod security;
pub mod sim;

pub use access::{EmergencyKind, EmergencyMessage, ModelId};
pub use address::{classify_address, Address, AddressClass};
pub use node::{relay_decision, Bearers, Features, NodeState};
pub use pdu::{AccessPayload, NetworkPdu, Seq, Ttl};

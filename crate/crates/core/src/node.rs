//! Per-node mesh state: identity, features, keys, sequence numbers and the
//! managed-flooding relay rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{GenericOnOffState, ModelId, ModelRegistry};
use crate::address::Address;
use crate::cache::MessageCache;
use crate::pdu::{NetworkPdu, Seq, Ttl};
use crate::security::{AppKey, KeyIndex, NetKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("sequence number space exhausted")]
    SequenceExhausted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub relay: bool,
    pub proxy: bool,
    pub low_power: bool,
    pub friend: bool,
}

impl Features {
    pub const NONE: Features = Features { relay: false, proxy: false, low_power: false, friend: false };
    pub const RELAY: Features = Features { relay: true, ..Features::NONE };
    pub const RELAY_PROXY: Features = Features { relay: true, proxy: true, ..Features::NONE };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bearers {
    pub advertising: bool,
    pub gatt: bool,
}

impl Bearers {
    pub const ADV: Bearers = Bearers { advertising: true, gatt: false };
    pub const GATT: Bearers = Bearers { advertising: false, gatt: true };
    pub const BOTH: Bearers = Bearers { advertising: true, gatt: true };
}

#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    pub net_keys: Vec<NetKey>,
    pub app_keys: Vec<AppKey>,
}

impl KeyRing {
    pub fn net_key(&self, index: KeyIndex) -> Option<&NetKey> {
        self.net_keys.iter().find(|k| k.index() == index)
    }

    pub fn app_key(&self, index: KeyIndex) -> Option<&AppKey> {
        self.app_keys.iter().find(|k| k.index() == index)
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    unicast: Address,
    features: Features,
    bearers: Bearers,
    seq_counter: u32,
    initial_ttl: Ttl,
    pub cache: MessageCache,
    pub keys: KeyRing,
    pub models: ModelRegistry,
    pub onoff: GenericOnOffState,
    /// Answers help requests with a help offer.
    pub responder: bool,
}

impl NodeState {
    pub fn new(unicast: Address, features: Features, bearers: Bearers) -> Self {
        debug_assert!(unicast.is_unicast());
        NodeState {
            unicast,
            features,
            bearers,
            seq_counter: 0,
            initial_ttl: Ttl::MAX,
            cache: MessageCache::default(),
            keys: KeyRing::default(),
            models: ModelRegistry::default(),
            onoff: GenericOnOffState::default(),
            responder: false,
        }
    }

    pub fn unicast(&self) -> Address {
        self.unicast
    }

    pub fn features(&self) -> Features {
        self.features
    }

    pub fn bearers(&self) -> Bearers {
        self.bearers
    }

    pub fn initial_ttl(&self) -> Ttl {
        self.initial_ttl
    }

    pub fn set_initial_ttl(&mut self, ttl: Ttl) {
        self.initial_ttl = ttl;
    }

    pub fn register_model(&mut self, id: ModelId, app_key: KeyIndex) {
        self.models.register(id, app_key);
    }

    /// Returns the current sequence number and advances the counter.
    pub fn next_seq(&mut self) -> Result<Seq, NodeError> {
        if self.seq_counter >= Seq::MAX {
            return Err(NodeError::SequenceExhausted);
        }
        let seq = Seq::new(self.seq_counter).expect("counter below 2^24 - 1");
        self.seq_counter += 1;
        Ok(seq)
    }

    #[cfg(test)]
    pub(crate) fn set_seq_counter(&mut self, v: u32) {
        self.seq_counter = v;
    }
}

/// Returns the copy to retransmit on the advertising bearer, with TTL
/// decremented, or `None` when the node must not relay. The returned copy
/// still carries the original ciphertext; it must be network-resealed for the
/// new TTL before transmission.
pub fn relay_decision(node: &NodeState, pdu: &NetworkPdu) -> Option<NetworkPdu> {
    if !node.features.relay || !node.bearers.advertising {
        return None;
    }
    forward_copy(node, pdu)
}

/// TTL rule shared by relaying and proxy bridging: forward only if the
/// decremented TTL is at least 1 and the PDU is not our own.
pub(crate) fn forward_copy(node: &NodeState, pdu: &NetworkPdu) -> Option<NetworkPdu> {
    if pdu.ttl.get() < 2 || pdu.src == node.unicast {
        return None;
    }
    let mut copy = pdu.clone();
    copy.ttl = pdu.ttl.decremented()?;
    Some(copy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pdu(ttl: u8, src: u16) -> NetworkPdu {
        NetworkPdu {
            net_key_id: 0,
            ttl: Ttl::new(ttl).unwrap(),
            seq: Seq::new(1).unwrap(),
            src: Address(src),
            dst: Address::BROADCAST,
            ciphertext: vec![0; 8],
            tag: [0; 4],
        }
    }

    #[test]
    fn seq_counts_from_zero_per_node() {
        let mut a = NodeState::new(Address(1), Features::RELAY, Bearers::ADV);
        let mut b = NodeState::new(Address(2), Features::RELAY, Bearers::ADV);
        assert_eq!(a.next_seq().unwrap().get(), 0);
        assert_eq!(a.next_seq().unwrap().get(), 1);
        assert_eq!(a.next_seq().unwrap().get(), 2);
        assert_eq!(b.next_seq().unwrap().get(), 0);
    }

    #[test]
    fn seq_exhaustion() {
        let mut a = NodeState::new(Address(1), Features::NONE, Bearers::ADV);
        a.set_seq_counter(Seq::MAX - 1);
        assert_eq!(a.next_seq().unwrap().get(), Seq::MAX - 1);
        assert_eq!(a.next_seq(), Err(NodeError::SequenceExhausted));
    }

    #[test]
    fn relay_decrements_ttl() {
        let n = NodeState::new(Address(9), Features::RELAY, Bearers::ADV);
        let p = pdu(6, 1);
        let out = relay_decision(&n, &p).unwrap();
        assert_eq!(out.ttl.get(), 5);
        assert_eq!(p.ttl.get(), 6);
        assert_eq!(relay_decision(&n, &pdu(2, 1)).unwrap().ttl.get(), 1);
    }

    #[test]
    fn no_relay_cases() {
        let relay = NodeState::new(Address(9), Features::RELAY, Bearers::ADV);
        assert!(relay_decision(&relay, &pdu(1, 1)).is_none());
        assert!(relay_decision(&relay, &pdu(0, 1)).is_none());
        assert!(relay_decision(&relay, &pdu(6, 9)).is_none());
        let phone = NodeState::new(Address(9), Features::NONE, Bearers::GATT);
        assert!(relay_decision(&phone, &pdu(6, 1)).is_none());
        let gatt_only_relay = NodeState::new(Address(9), Features::RELAY, Bearers::GATT);
        assert!(relay_decision(&gatt_only_relay, &pdu(6, 1)).is_none());
    }
}

//! Access layer: model registry, publish/subscribe dispatch, the generic
//! OnOff model and the emergency vendor model.
//!
//! Emergency message layout (7 bytes):
//!
//! ```text
//! [opcode:1][message-code:1][request_id:4, big endian][flags:1]
//! ```
//!
//! | kind        | opcode | message code |
//! |-------------|--------|--------------|
//! | HelpRequest | 0xE1   | 0x0A         |
//! | HelpOffer   | 0xE2   | 0x0B         |
//! | Status      | 0xE3   | 0x0C         |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::Address;
use crate::node::{NodeError, NodeState};
use crate::pdu::{AccessPayload, NetworkPdu, PduError};
use crate::security::{seal_pdu, KeyIndex, TransportPdu};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("malformed message: {0}")]
    MalformedMessage(&'static str),
    #[error("missing key")]
    MissingKey,
    #[error(transparent)]
    Pdu(#[from] PduError),
    #[error(transparent)]
    Node(#[from] NodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    Generic(u16),
    Vendor { company: u16, model: u16 },
}

impl ModelId {
    pub const GENERIC_ONOFF_SERVER: ModelId = ModelId::Generic(0x1000);
    pub const GENERIC_ONOFF_CLIENT: ModelId = ModelId::Generic(0x1001);
    /// Test-range company id 0xFFFF, model 0x0001.
    pub const EMERGENCY: ModelId = ModelId::Vendor { company: 0xFFFF, model: 0x0001 };

    pub fn from_vendor_id(id: u32) -> ModelId {
        ModelId::Vendor { company: (id >> 16) as u16, model: id as u16 }
    }

    pub fn vendor_id(self) -> Option<u32> {
        match self {
            ModelId::Vendor { company, model } => Some(((company as u32) << 16) | model as u32),
            ModelId::Generic(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmergencyKind {
    HelpRequest,
    HelpOffer,
    Status,
}

impl EmergencyKind {
    pub const ALL: [EmergencyKind; 3] =
        [EmergencyKind::HelpRequest, EmergencyKind::HelpOffer, EmergencyKind::Status];

    pub fn opcode(self) -> u8 {
        match self {
            EmergencyKind::HelpRequest => 0xE1,
            EmergencyKind::HelpOffer => 0xE2,
            EmergencyKind::Status => 0xE3,
        }
    }

    pub fn message_code(self) -> u8 {
        match self {
            EmergencyKind::HelpRequest => 0x0A,
            EmergencyKind::HelpOffer => 0x0B,
            EmergencyKind::Status => 0x0C,
        }
    }

    pub fn from_opcode(op: u8) -> Option<EmergencyKind> {
        EmergencyKind::ALL.into_iter().find(|k| k.opcode() == op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmergencyMessage {
    pub kind: EmergencyKind,
    pub request_id: u32,
    /// Reserved, zero.
    pub flags: u8,
}

impl EmergencyMessage {
    pub const ENCODED_LEN: usize = 7;

    pub fn new(kind: EmergencyKind, request_id: u32) -> Self {
        EmergencyMessage { kind, request_id, flags: 0 }
    }
}

pub fn encode_emergency(m: &EmergencyMessage) -> AccessPayload {
    let mut params = Vec::with_capacity(EmergencyMessage::ENCODED_LEN - 1);
    params.push(m.kind.message_code());
    params.extend_from_slice(&m.request_id.to_be_bytes());
    params.push(m.flags);
    AccessPayload::new(m.kind.opcode(), params).expect("7 bytes fit the access payload")
}

pub fn decode_emergency(p: &AccessPayload) -> Result<EmergencyMessage, AccessError> {
    let kind = EmergencyKind::from_opcode(p.opcode()).ok_or(AccessError::UnknownOpcode(p.opcode()))?;
    let params = p.parameters();
    if p.len() != EmergencyMessage::ENCODED_LEN {
        return Err(AccessError::MalformedMessage("emergency message must be 7 bytes"));
    }
    if params[0] != kind.message_code() {
        return Err(AccessError::MalformedMessage("message code does not match opcode"));
    }
    Ok(EmergencyMessage {
        kind,
        request_id: u32::from_be_bytes([params[1], params[2], params[3], params[4]]),
        flags: params[5],
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenericOnOffState {
    pub on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnOffMessage {
    Get,
    Set(bool),
    Status(bool),
}

impl OnOffMessage {
    pub const OP_GET: u8 = 0x01;
    pub const OP_SET: u8 = 0x02;
    pub const OP_STATUS: u8 = 0x03;

    pub fn encode(self) -> AccessPayload {
        let (op, params) = match self {
            OnOffMessage::Get => (Self::OP_GET, vec![]),
            OnOffMessage::Set(v) => (Self::OP_SET, vec![v as u8]),
            OnOffMessage::Status(v) => (Self::OP_STATUS, vec![v as u8]),
        };
        AccessPayload::new(op, params).expect("fits")
    }

    pub fn decode(p: &AccessPayload) -> Result<Self, AccessError> {
        let flag = |params: &[u8]| match params {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(AccessError::MalformedMessage("onoff state must be one byte 0 or 1")),
        };
        match p.opcode() {
            Self::OP_GET if p.parameters().is_empty() => Ok(OnOffMessage::Get),
            Self::OP_GET => Err(AccessError::MalformedMessage("get takes no parameters")),
            Self::OP_SET => flag(p.parameters()).map(OnOffMessage::Set),
            Self::OP_STATUS => flag(p.parameters()).map(OnOffMessage::Status),
            op => Err(AccessError::UnknownOpcode(op)),
        }
    }
}

pub fn onoff_set(node: &mut NodeState, target: bool) {
    node.onoff.on = target;
}

pub fn onoff_get(node: &NodeState) -> bool {
    node.onoff.on
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessMessage {
    Emergency(EmergencyMessage),
    OnOff(OnOffMessage),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelEntry {
    pub id: ModelId,
    pub app_key: KeyIndex,
    pub subscriptions: BTreeSet<Address>,
}

impl ModelEntry {
    /// Element unicast, all-nodes broadcast, or a subscribed group.
    pub fn accepts(&self, element: Address, dst: Address) -> bool {
        dst == element || dst == Address::BROADCAST || self.subscriptions.contains(&dst)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    entries: Vec<ModelEntry>,
}

impl ModelRegistry {
    pub fn register(&mut self, id: ModelId, app_key: KeyIndex) {
        if !self.contains(id) {
            self.entries.push(ModelEntry { id, app_key, subscriptions: BTreeSet::new() });
        }
    }

    pub fn contains(&self, id: ModelId) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    /// Returns `false` if the model is not registered or the address is not
    /// a group or broadcast address.
    pub fn subscribe(&mut self, id: ModelId, address: Address) -> bool {
        use crate::address::AddressClass::{Broadcast, Group};
        if !matches!(address.class(), Group | Broadcast) {
            return false;
        }
        match self.entries.iter_mut().find(|e| e.id == id) {
            Some(e) => {
                e.subscriptions.insert(address);
                true
            }
            None => false,
        }
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }
}

fn decode_for(model: ModelId, payload: &AccessPayload) -> Option<AccessMessage> {
    match model {
        ModelId::EMERGENCY => decode_emergency(payload).ok().map(AccessMessage::Emergency),
        ModelId::GENERIC_ONOFF_SERVER => match OnOffMessage::decode(payload) {
            Ok(m @ (OnOffMessage::Get | OnOffMessage::Set(_))) => Some(AccessMessage::OnOff(m)),
            _ => None,
        },
        ModelId::GENERIC_ONOFF_CLIENT => match OnOffMessage::decode(payload) {
            Ok(m @ OnOffMessage::Status(_)) => Some(AccessMessage::OnOff(m)),
            _ => None,
        },
        _ => None,
    }
}

/// Delivers an authenticated access payload to every matching model.
pub fn dispatch(
    node: &NodeState,
    _src: Address,
    dst: Address,
    payload: &AccessPayload,
) -> Vec<(ModelId, AccessMessage)> {
    node.models
        .entries()
        .iter()
        .filter(|e| e.accepts(node.unicast(), dst))
        .filter_map(|e| decode_for(e.id, payload).map(|m| (e.id, m)))
        .collect()
}

/// Application-seals then network-seals `payload` from this node. The result
/// is unobfuscated; obfuscation happens when it is put on a bearer. The
/// node's own `(src, seq)` is entered into its cache so echoes are dropped.
pub fn publish(
    node: &mut NodeState,
    _model: ModelId,
    payload: &AccessPayload,
    dst: Address,
    app_key: KeyIndex,
) -> Result<NetworkPdu, AccessError> {
    if !dst.is_valid_destination() {
        return Err(AccessError::Pdu(PduError::MalformedPdu("invalid destination")));
    }
    let ak = node.keys.app_key(app_key).ok_or(AccessError::MissingKey)?.clone();
    let nk = node.keys.net_key(ak.bound_net_key()).ok_or(AccessError::MissingKey)?.clone();
    let bytes = payload.to_bytes();
    let seq = node.next_seq()?;
    let src = node.unicast();
    let transport = TransportPdu::seal(&ak, &bytes, seq, src, dst);
    let pdu = seal_pdu(&nk, node.initial_ttl(), seq, src, dst, &transport.to_bytes());
    node.cache.check_insert(src, seq);
    Ok(pdu)
}

pub fn auto_respond(node: &NodeState, incoming: &EmergencyMessage, from: Address) -> Option<EmergencyMessage> {
    if !node.responder || incoming.kind != EmergencyKind::HelpRequest || from == node.unicast() {
        return None;
    }
    Some(EmergencyMessage::new(EmergencyKind::HelpOffer, incoming.request_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{Bearers, Features};
    use crate::security::{open_pdu, AppKey, NetKey};

    fn idx(v: u16) -> KeyIndex {
        KeyIndex::new(v).unwrap()
    }

    fn keyed_node(addr: u16) -> NodeState {
        let mut n = NodeState::new(Address(addr), Features::NONE, Bearers::GATT);
        n.keys.net_keys.push(NetKey::new([1; 16], idx(0)));
        n.keys.app_keys.push(AppKey::new([2; 16], idx(0), idx(0)));
        n.register_model(ModelId::EMERGENCY, idx(0));
        n
    }

    #[test]
    fn help_request_bytes() {
        let p = encode_emergency(&EmergencyMessage::new(EmergencyKind::HelpRequest, 1));
        assert_eq!(p.to_bytes(), vec![0xE1, 0x0A, 0x00, 0x00, 0x00, 0x01, 0x00]);
    }

    #[test]
    fn decode_offer_and_mismatch() {
        let p = AccessPayload::from_bytes(&[0xE2, 0x0B, 0, 0, 0, 9, 0]).unwrap();
        assert_eq!(decode_emergency(&p).unwrap(), EmergencyMessage::new(EmergencyKind::HelpOffer, 9));
        let bad = AccessPayload::from_bytes(&[0xE1, 0x0B, 0, 0, 0, 9, 0]).unwrap();
        assert!(matches!(decode_emergency(&bad), Err(AccessError::MalformedMessage(_))));
        let short = AccessPayload::from_bytes(&[0xE1, 0x0A, 0, 0]).unwrap();
        assert!(matches!(decode_emergency(&short), Err(AccessError::MalformedMessage(_))));
        let unk = AccessPayload::from_bytes(&[0xE4, 0x0A, 0, 0, 0, 9, 0]).unwrap();
        assert_eq!(decode_emergency(&unk), Err(AccessError::UnknownOpcode(0xE4)));
    }

    #[test]
    fn vendor_id_packing() {
        assert_eq!(ModelId::EMERGENCY.vendor_id(), Some(0xFFFF_0001));
        assert_eq!(ModelId::from_vendor_id(0xFFFF_0001), ModelId::EMERGENCY);
        assert_eq!(ModelId::GENERIC_ONOFF_SERVER.vendor_id(), None);
    }

    #[test]
    fn onoff_state() {
        let mut n = keyed_node(1);
        assert!(!onoff_get(&n));
        onoff_set(&mut n, true);
        assert!(onoff_get(&n));
        onoff_set(&mut n, false);
        assert!(!onoff_get(&n));
        for m in [OnOffMessage::Get, OnOffMessage::Set(true), OnOffMessage::Status(false)] {
            assert_eq!(OnOffMessage::decode(&m.encode()).unwrap(), m);
        }
    }

    #[test]
    fn publish_broadcast_help_request() {
        let mut n = keyed_node(3);
        let payload = encode_emergency(&EmergencyMessage::new(EmergencyKind::HelpRequest, 1));
        let a = publish(&mut n, ModelId::EMERGENCY, &payload, Address::BROADCAST, idx(0)).unwrap();
        assert_eq!(a.dst, Address::BROADCAST);
        assert_eq!(a.ttl.get(), 127);
        assert_eq!(a.src, Address(3));
        let b = publish(&mut n, ModelId::EMERGENCY, &payload, Address::BROADCAST, idx(0)).unwrap();
        assert_eq!(b.seq.get(), a.seq.get() + 1);
        assert!(open_pdu(n.keys.net_key(idx(0)).unwrap(), &a).is_ok());
        assert!(!n.cache.check_insert(a.src, a.seq));
    }

    #[test]
    fn publish_requires_keys() {
        let mut n = keyed_node(3);
        let payload = encode_emergency(&EmergencyMessage::new(EmergencyKind::HelpRequest, 1));
        assert_eq!(
            publish(&mut n, ModelId::EMERGENCY, &payload, Address::BROADCAST, idx(1)),
            Err(AccessError::MissingKey)
        );
        n.keys.net_keys.clear();
        assert_eq!(
            publish(&mut n, ModelId::EMERGENCY, &payload, Address::BROADCAST, idx(0)),
            Err(AccessError::MissingKey)
        );
    }

    #[test]
    fn dispatch_filters_by_address_and_model() {
        let n = keyed_node(3);
        let payload = encode_emergency(&EmergencyMessage::new(EmergencyKind::HelpRequest, 1));
        assert_eq!(dispatch(&n, Address(1), Address::BROADCAST, &payload).len(), 1);
        assert_eq!(dispatch(&n, Address(1), Address(3), &payload).len(), 1);
        assert!(dispatch(&n, Address(1), Address(4), &payload).is_empty());
        assert!(dispatch(&n, Address(1), Address(0xC001), &payload).is_empty());
        let bare = NodeState::new(Address(5), Features::RELAY, Bearers::ADV);
        assert!(dispatch(&bare, Address(1), Address::BROADCAST, &payload).is_empty());
    }

    #[test]
    fn subscription_soundness_and_completeness() {
        // Every (dst, subscription set) over a small address universe.
        let universe = [Address(3), Address(4), Address(0xC001), Address(0xC002), Address::BROADCAST];
        let groups = [Address(0xC001), Address(0xC002)];
        let payload = encode_emergency(&EmergencyMessage::new(EmergencyKind::Status, 2));
        for mask in 0..4u8 {
            let mut n = keyed_node(3);
            let subs: Vec<Address> =
                groups.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, a)| *a).collect();
            for s in &subs {
                assert!(n.models.subscribe(ModelId::EMERGENCY, *s));
            }
            for dst in universe {
                let expected = dst == Address(3) || dst == Address::BROADCAST || subs.contains(&dst);
                assert_eq!(!dispatch(&n, Address(1), dst, &payload).is_empty(), expected, "{dst} {mask}");
            }
        }
        let mut n = keyed_node(3);
        assert!(!n.models.subscribe(ModelId::EMERGENCY, Address(4)));
        assert!(!n.models.subscribe(ModelId::GENERIC_ONOFF_SERVER, Address(0xC001)));
    }

    #[test]
    fn onoff_server_receives_set() {
        let mut n = keyed_node(3);
        n.register_model(ModelId::GENERIC_ONOFF_SERVER, idx(0));
        let got = dispatch(&n, Address(1), Address(3), &OnOffMessage::Set(true).encode());
        assert_eq!(got, vec![(ModelId::GENERIC_ONOFF_SERVER, AccessMessage::OnOff(OnOffMessage::Set(true)))]);
    }

    #[test]
    fn responder_behaviour() {
        let mut n = keyed_node(3);
        let req = EmergencyMessage::new(EmergencyKind::HelpRequest, 7);
        assert_eq!(auto_respond(&n, &req, Address(1)), None);
        n.responder = true;
        assert_eq!(
            auto_respond(&n, &req, Address(1)),
            Some(EmergencyMessage::new(EmergencyKind::HelpOffer, 7))
        );
        let offer = EmergencyMessage::new(EmergencyKind::HelpOffer, 7);
        assert_eq!(auto_respond(&n, &offer, Address(1)), None);
        let status = EmergencyMessage::new(EmergencyKind::Status, 7);
        assert_eq!(auto_respond(&n, &status, Address(1)), None);
    }
}

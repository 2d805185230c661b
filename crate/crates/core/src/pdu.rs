//! Network PDU and access payload structures plus the network PDU byte codec.
//!
//! Wire layout of an encoded network PDU:
//!
//! ```text
//! [key-id:1][ttl:1][seq:3][src:2][dst:2][ciphertext:4..=16][tag:4]
//! ```
//!
//! The 13 bytes of overhead leave 16 bytes of ciphertext inside the 29-byte
//! unsegmented frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::Address;

pub const MAX_PDU_LEN: usize = 29;
pub const HEADER_LEN: usize = 9;
pub const TAG_LEN: usize = 4;
pub const MAX_CIPHERTEXT_LEN: usize = MAX_PDU_LEN - HEADER_LEN - TAG_LEN;
/// The obfuscation keystream samples the first 8 bytes of ciphertext||tag.
pub const MIN_CIPHERTEXT_LEN: usize = 4;
pub const MAX_ACCESS_PAYLOAD_LEN: usize = 11;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PduError {
    #[error("encoded size {len} exceeds the {max}-byte limit")]
    OversizedPayload { len: usize, max: usize },
    #[error("malformed PDU: {0}")]
    MalformedPdu(&'static str),
}

/// Time-to-live, 0..=127.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Ttl(u8);

impl Ttl {
    pub const MAX: Ttl = Ttl(127);
    pub const ZERO: Ttl = Ttl(0);

    pub fn new(v: u8) -> Option<Ttl> {
        (v <= 127).then_some(Ttl(v))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn decremented(self) -> Option<Ttl> {
        self.0.checked_sub(1).map(Ttl)
    }
}

impl TryFrom<u8> for Ttl {
    type Error = PduError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Ttl::new(v).ok_or(PduError::MalformedPdu("ttl above 127"))
    }
}

impl From<Ttl> for u8 {
    fn from(t: Ttl) -> u8 {
        t.0
    }
}

/// 24-bit sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seq(u32);

impl Seq {
    pub const MAX: u32 = 0x00FF_FFFF;

    pub fn new(v: u32) -> Option<Seq> {
        (v <= Self::MAX).then_some(Seq(v))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn to_be_bytes(self) -> [u8; 3] {
        let b = self.0.to_be_bytes();
        [b[1], b[2], b[3]]
    }

    pub fn from_be_bytes(b: [u8; 3]) -> Seq {
        Seq(u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }
}

/// The flooded unit. `ciphertext` and `tag` come from network-layer sealing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkPdu {
    /// Low 8 bits of the NetKey index, used by receivers to pick a key.
    pub net_key_id: u8,
    pub ttl: Ttl,
    pub seq: Seq,
    pub src: Address,
    pub dst: Address,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl NetworkPdu {
    /// The 9 header bytes as authenticated by the network layer.
    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = self.net_key_id;
        h[1] = self.ttl.get();
        h[2..5].copy_from_slice(&self.seq.to_be_bytes());
        h[5..7].copy_from_slice(&self.src.to_be_bytes());
        h[7..9].copy_from_slice(&self.dst.to_be_bytes());
        h
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.ciphertext.len() + TAG_LEN
    }
}

fn check_fields(
    ttl: u8,
    src: Address,
    dst: Address,
    ciphertext_len: usize,
) -> Result<(), PduError> {
    if ttl > 127 {
        return Err(PduError::MalformedPdu("ttl above 127"));
    }
    if !src.is_unicast() {
        return Err(PduError::MalformedPdu("source is not unicast"));
    }
    if !dst.is_valid_destination() {
        return Err(PduError::MalformedPdu("invalid destination"));
    }
    if ciphertext_len < MIN_CIPHERTEXT_LEN {
        return Err(PduError::MalformedPdu("ciphertext too short"));
    }
    Ok(())
}

pub fn encode_network_pdu(pdu: &NetworkPdu) -> Result<Vec<u8>, PduError> {
    let len = pdu.encoded_len();
    if len > MAX_PDU_LEN {
        return Err(PduError::OversizedPayload { len, max: MAX_PDU_LEN });
    }
    check_fields(pdu.ttl.get(), pdu.src, pdu.dst, pdu.ciphertext.len())?;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&pdu.header_bytes());
    out.extend_from_slice(&pdu.ciphertext);
    out.extend_from_slice(&pdu.tag);
    Ok(out)
}

pub fn decode_network_pdu(bytes: &[u8]) -> Result<NetworkPdu, PduError> {
    if bytes.len() > MAX_PDU_LEN {
        return Err(PduError::OversizedPayload { len: bytes.len(), max: MAX_PDU_LEN });
    }
    if bytes.len() < HEADER_LEN + MIN_CIPHERTEXT_LEN + TAG_LEN {
        return Err(PduError::MalformedPdu("truncated"));
    }
    let src = Address::from_be_bytes([bytes[5], bytes[6]]);
    let dst = Address::from_be_bytes([bytes[7], bytes[8]]);
    let ct_end = bytes.len() - TAG_LEN;
    check_fields(bytes[1], src, dst, ct_end - HEADER_LEN)?;
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&bytes[ct_end..]);
    Ok(NetworkPdu {
        net_key_id: bytes[0],
        ttl: Ttl(bytes[1]),
        seq: Seq::from_be_bytes([bytes[2], bytes[3], bytes[4]]),
        src,
        dst,
        ciphertext: bytes[HEADER_LEN..ct_end].to_vec(),
        tag,
    })
}

/// Application message: a one-byte opcode followed by parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessPayload {
    opcode: u8,
    parameters: Vec<u8>,
}

impl AccessPayload {
    pub fn new(opcode: u8, parameters: Vec<u8>) -> Result<Self, PduError> {
        let len = 1 + parameters.len();
        if len > MAX_ACCESS_PAYLOAD_LEN {
            return Err(PduError::OversizedPayload { len, max: MAX_ACCESS_PAYLOAD_LEN });
        }
        Ok(AccessPayload { opcode, parameters })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PduError> {
        let (&opcode, rest) = bytes
            .split_first()
            .ok_or(PduError::MalformedPdu("empty access payload"))?;
        AccessPayload::new(opcode, rest.to_vec())
    }

    pub fn opcode(&self) -> u8 {
        self.opcode
    }

    pub fn parameters(&self) -> &[u8] {
        &self.parameters
    }

    pub fn len(&self) -> usize {
        1 + self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.opcode);
        v.extend_from_slice(&self.parameters);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(ct_len: usize) -> NetworkPdu {
        NetworkPdu {
            net_key_id: 0,
            ttl: Ttl::MAX,
            seq: Seq::new(0x0A0B0C).unwrap(),
            src: Address(0x0001),
            dst: Address::BROADCAST,
            ciphertext: vec![0xAB; ct_len],
            tag: [1, 2, 3, 4],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_network_pdu(&sample(4)).unwrap();
        assert_eq!(&bytes[..9], &[0x00, 127, 0x0A, 0x0B, 0x0C, 0x00, 0x01, 0xFF, 0xFF]);
        assert_eq!(&bytes[13..], &[1, 2, 3, 4]);
    }

    #[test]
    fn full_frame_is_29_bytes() {
        let bytes = encode_network_pdu(&sample(MAX_CIPHERTEXT_LEN)).unwrap();
        assert_eq!(bytes.len(), MAX_PDU_LEN);
        assert!(matches!(
            encode_network_pdu(&sample(MAX_CIPHERTEXT_LEN + 1)),
            Err(PduError::OversizedPayload { len: 30, max: 29 })
        ));
    }

    #[test]
    fn access_payload_limit() {
        assert!(AccessPayload::new(0xE1, vec![0; 10]).is_ok());
        assert_eq!(
            AccessPayload::new(0xE1, vec![0; 11]),
            Err(PduError::OversizedPayload { len: 12, max: 11 })
        );
        assert!(AccessPayload::from_bytes(&[]).is_err());
    }

    #[test]
    fn decode_rejects_bad_input() {
        let good = encode_network_pdu(&sample(6)).unwrap();
        assert!(matches!(decode_network_pdu(&good[..12]), Err(PduError::MalformedPdu(_))));
        let mut bad_ttl = good.clone();
        bad_ttl[1] = 128;
        assert!(decode_network_pdu(&bad_ttl).is_err());
        let mut bad_src = good.clone();
        bad_src[5] = 0xC0;
        assert!(decode_network_pdu(&bad_src).is_err());
        let mut zero_src = good;
        zero_src[5] = 0;
        zero_src[6] = 0;
        assert!(decode_network_pdu(&zero_src).is_err());
    }

    #[test]
    fn ttl_and_seq_bounds() {
        assert!(Ttl::new(128).is_none());
        assert_eq!(Ttl::ZERO.decremented(), None);
        assert!(Seq::new(Seq::MAX + 1).is_none());
        assert_eq!(Seq::from_be_bytes(Seq::new(Seq::MAX).unwrap().to_be_bytes()).get(), Seq::MAX);
    }

    fn valid_dst() -> impl Strategy<Value = Address> {
        prop_oneof![
            (0x0001u16..=0x7FFF).prop_map(Address),
            (0xC000u16..=0xFFFF).prop_map(Address),
        ]
    }

    proptest! {
        #[test]
        fn codec_identity(
            key in any::<u8>(),
            ttl in 0u8..=127,
            seq in 0u32..=Seq::MAX,
            src in 0x0001u16..=0x7FFF,
            dst in valid_dst(),
            ct in proptest::collection::vec(any::<u8>(), MIN_CIPHERTEXT_LEN..=MAX_CIPHERTEXT_LEN),
            tag in any::<[u8; 4]>(),
        ) {
            let pdu = NetworkPdu {
                net_key_id: key,
                ttl: Ttl::new(ttl).unwrap(),
                seq: Seq::new(seq).unwrap(),
                src: Address(src),
                dst,
                ciphertext: ct,
                tag,
            };
            let bytes = encode_network_pdu(&pdu).unwrap();
            prop_assert!(bytes.len() <= MAX_PDU_LEN);
            prop_assert_eq!(decode_network_pdu(&bytes).unwrap(), pdu);
        }
    }
}

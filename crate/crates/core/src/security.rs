//! Two-layer message protection and network header obfuscation.
//!
//! The access payload is sealed first under an AppKey, then the resulting
//! transport PDU is sealed under a NetKey with the network header as
//! associated data. Before transmission the header (except the key-id byte)
//! is XOR-masked with a keystream derived from the PrivacyKey and the first
//! 8 bytes of ciphertext||tag.
//!
//! Primitives: AES-128-CCM with a 4-byte tag and 13-byte nonce, AES-CMAC as
//! the keyed PRF.

use std::collections::HashMap;
use std::fmt;

use aes::Aes128;
use ccm::aead::{AeadInPlace, KeyInit};
use ccm::consts::{U13, U4};
use ccm::Ccm;
use cmac::{Cmac, Mac};
use thiserror::Error;

use crate::address::Address;
use crate::pdu::{
    decode_network_pdu, encode_network_pdu, NetworkPdu, PduError, Seq, Ttl, HEADER_LEN, TAG_LEN,
};

type Aead = Ccm<Aes128, U4, U13>;

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 13;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecurityError {
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("no key matches key id {0:#04x}")]
    UnknownKey(u8),
    #[error(transparent)]
    Pdu(#[from] PduError),
}

/// 12-bit key index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyIndex(u16);

impl KeyIndex {
    pub const MAX: u16 = 0x0FFF;

    pub fn new(v: u16) -> Option<KeyIndex> {
        (v <= Self::MAX).then_some(KeyIndex(v))
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// The byte carried in the network header to select a NetKey.
    pub fn wire_id(self) -> u8 {
        (self.0 & 0xFF) as u8
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct NetKey {
    material: [u8; KEY_LEN],
    index: KeyIndex,
}

impl NetKey {
    pub fn new(material: [u8; KEY_LEN], index: KeyIndex) -> Self {
        NetKey { material, index }
    }

    pub fn index(&self) -> KeyIndex {
        self.index
    }

    pub fn material(&self) -> &[u8; KEY_LEN] {
        &self.material
    }
}

impl fmt::Debug for NetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetKey").field("index", &self.index.0).finish_non_exhaustive()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AppKey {
    material: [u8; KEY_LEN],
    index: KeyIndex,
    bound_net_key: KeyIndex,
}

impl AppKey {
    pub fn new(material: [u8; KEY_LEN], index: KeyIndex, bound_net_key: KeyIndex) -> Self {
        AppKey { material, index, bound_net_key }
    }

    pub fn index(&self) -> KeyIndex {
        self.index
    }

    pub fn bound_net_key(&self) -> KeyIndex {
        self.bound_net_key
    }

    pub fn material(&self) -> &[u8; KEY_LEN] {
        &self.material
    }

    /// One-byte application key identifier carried in the transport PDU.
    pub fn aid(&self) -> u8 {
        prf(&self.material, b"emesh-aid")[0]
    }
}

impl fmt::Debug for AppKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AppKey")
            .field("index", &self.index.0)
            .field("bound_net_key", &self.bound_net_key.0)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PrivacyKey([u8; KEY_LEN]);

impl PrivacyKey {
    pub fn material(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for PrivacyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivacyKey(..)")
    }
}

fn prf(key: &[u8; KEY_LEN], input: &[u8]) -> [u8; 16] {
    let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(key).expect("16-byte key");
    mac.update(input);
    mac.finalize().into_bytes().into()
}

pub fn derive_privacy_key(nk: &NetKey) -> PrivacyKey {
    PrivacyKey(prf(&nk.material, b"emesh-privacy"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Nonce([u8; NONCE_LEN]);

impl Nonce {
    /// Network nonce. TTL is included so a relayed copy, resealed with the
    /// decremented TTL, never reuses the originator's nonce.
    pub fn network(ttl: Ttl, seq: Seq, src: Address) -> Nonce {
        let mut n = [0u8; NONCE_LEN];
        n[0] = 0x00;
        n[1] = ttl.get();
        n[2..5].copy_from_slice(&seq.to_be_bytes());
        n[5..7].copy_from_slice(&src.to_be_bytes());
        Nonce(n)
    }

    pub fn application(seq: Seq, src: Address, dst: Address) -> Nonce {
        let mut n = [0u8; NONCE_LEN];
        n[0] = 0x01;
        n[2..5].copy_from_slice(&seq.to_be_bytes());
        n[5..7].copy_from_slice(&src.to_be_bytes());
        n[7..9].copy_from_slice(&dst.to_be_bytes());
        Nonce(n)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

fn seal(key: &[u8; KEY_LEN], aad: &[u8], plaintext: &[u8], nonce: &Nonce) -> (Vec<u8>, [u8; TAG_LEN]) {
    let cipher = Aead::new_from_slice(key).expect("16-byte key");
    let mut buf = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached((&nonce.0).into(), aad, &mut buf)
        .expect("CCM payload within length limits");
    (buf, tag.into())
}

fn open(
    key: &[u8; KEY_LEN],
    aad: &[u8],
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
    nonce: &Nonce,
) -> Result<Vec<u8>, SecurityError> {
    let cipher = Aead::new_from_slice(key).expect("16-byte key");
    let mut buf = ciphertext.to_vec();
    cipher
        .decrypt_in_place_detached((&nonce.0).into(), aad, &mut buf, tag.into())
        .map_err(|_| SecurityError::AuthenticationFailure)?;
    Ok(buf)
}

pub fn seal_network(
    nk: &NetKey,
    header: &[u8],
    plaintext: &[u8],
    nonce: &Nonce,
) -> (Vec<u8>, [u8; TAG_LEN]) {
    seal(&nk.material, header, plaintext, nonce)
}

pub fn open_network(
    nk: &NetKey,
    header: &[u8],
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
    nonce: &Nonce,
) -> Result<Vec<u8>, SecurityError> {
    open(&nk.material, header, ciphertext, tag, nonce)
}

pub fn seal_application(ak: &AppKey, access_payload: &[u8], nonce: &Nonce) -> (Vec<u8>, [u8; TAG_LEN]) {
    seal(&ak.material, &[], access_payload, nonce)
}

pub fn open_application(
    ak: &AppKey,
    ciphertext: &[u8],
    tag: &[u8; TAG_LEN],
    nonce: &Nonce,
) -> Result<Vec<u8>, SecurityError> {
    open(&ak.material, &[], ciphertext, tag, nonce)
}

fn keystream(pk: &PrivacyKey, keystream_input: &[u8]) -> [u8; 16] {
    let n = keystream_input.len().min(8);
    prf(&pk.0, &keystream_input[..n])
}

fn xor_in_place(bytes: &mut [u8], ks: &[u8]) {
    for (b, k) in bytes.iter_mut().zip(ks) {
        *b ^= k;
    }
}

/// XOR-masks up to 16 header bytes. Only the first 8 bytes of
/// `keystream_input` are used.
pub fn obfuscate_header(pk: &PrivacyKey, header: &[u8], keystream_input: &[u8]) -> Vec<u8> {
    let mut out = header.to_vec();
    xor_in_place(&mut out, &keystream(pk, keystream_input));
    out
}

pub fn deobfuscate_header(pk: &PrivacyKey, header: &[u8], keystream_input: &[u8]) -> Vec<u8> {
    obfuscate_header(pk, header, keystream_input)
}

/// The unit carried inside the network ciphertext:
/// `[aid:1][application ciphertext][application tag:4]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportPdu {
    pub aid: u8,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl TransportPdu {
    pub fn seal(ak: &AppKey, access_payload: &[u8], seq: Seq, src: Address, dst: Address) -> Self {
        let (ciphertext, tag) = seal_application(ak, access_payload, &Nonce::application(seq, src, dst));
        TransportPdu { aid: ak.aid(), ciphertext, tag }
    }

    pub fn open(&self, ak: &AppKey, seq: Seq, src: Address, dst: Address) -> Result<Vec<u8>, SecurityError> {
        if self.aid != ak.aid() {
            return Err(SecurityError::AuthenticationFailure);
        }
        open_application(ak, &self.ciphertext, &self.tag, &Nonce::application(seq, src, dst))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(1 + self.ciphertext.len() + TAG_LEN);
        v.push(self.aid);
        v.extend_from_slice(&self.ciphertext);
        v.extend_from_slice(&self.tag);
        v
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, SecurityError> {
        if b.len() < 1 + 1 + TAG_LEN {
            return Err(PduError::MalformedPdu("transport PDU too short").into());
        }
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&b[b.len() - TAG_LEN..]);
        Ok(TransportPdu { aid: b[0], ciphertext: b[1..b.len() - TAG_LEN].to_vec(), tag })
    }
}

/// Network-seals `transport` into a PDU with the given header fields.
pub fn seal_pdu(
    nk: &NetKey,
    ttl: Ttl,
    seq: Seq,
    src: Address,
    dst: Address,
    transport: &[u8],
) -> NetworkPdu {
    let mut pdu = NetworkPdu {
        net_key_id: nk.index.wire_id(),
        ttl,
        seq,
        src,
        dst,
        ciphertext: Vec::new(),
        tag: [0; TAG_LEN],
    };
    let (ct, tag) = seal_network(nk, &pdu.header_bytes(), transport, &Nonce::network(ttl, seq, src));
    pdu.ciphertext = ct;
    pdu.tag = tag;
    pdu
}

pub fn open_pdu(nk: &NetKey, pdu: &NetworkPdu) -> Result<Vec<u8>, SecurityError> {
    open_network(
        nk,
        &pdu.header_bytes(),
        &pdu.ciphertext,
        &pdu.tag,
        &Nonce::network(pdu.ttl, pdu.seq, pdu.src),
    )
}

/// Encodes and obfuscates a sealed PDU into the bytes handed to a bearer.
pub fn to_wire(nk: &NetKey, pdu: &NetworkPdu) -> Result<Vec<u8>, SecurityError> {
    let mut bytes = encode_network_pdu(pdu)?;
    let pk = derive_privacy_key(nk);
    let (head, body) = bytes.split_at_mut(HEADER_LEN);
    let masked = obfuscate_header(&pk, &head[1..], body);
    head[1..].copy_from_slice(&masked);
    Ok(bytes)
}

/// Deobfuscates, decodes and authenticates a wire frame against every NetKey
/// whose index matches the frame's key id. Returns the PDU, the key used and
/// the transport plaintext.
pub fn from_wire<'k>(
    keys: impl IntoIterator<Item = &'k NetKey>,
    frame: &[u8],
) -> Result<(NetworkPdu, &'k NetKey, Vec<u8>), SecurityError> {
    let Some(&key_id) = frame.first() else {
        return Err(PduError::MalformedPdu("empty frame").into());
    };
    if frame.len() < HEADER_LEN {
        return Err(PduError::MalformedPdu("truncated").into());
    }
    let mut matched = false;
    for nk in keys.into_iter().filter(|k| k.index.wire_id() == key_id) {
        matched = true;
        let pk = derive_privacy_key(nk);
        let mut clear = frame.to_vec();
        let (head, body) = clear.split_at_mut(HEADER_LEN);
        let unmasked = deobfuscate_header(&pk, &head[1..], body);
        head[1..].copy_from_slice(&unmasked);
        let Ok(pdu) = decode_network_pdu(&clear) else { continue };
        if let Ok(plain) = open_pdu(nk, &pdu) {
            return Ok((pdu, nk, plain));
        }
    }
    if matched {
        Err(SecurityError::AuthenticationFailure)
    } else {
        Err(SecurityError::UnknownKey(key_id))
    }
}

/// Records every `(key, nonce)` use and flags reuse with different inputs.
/// Resealing identical content under the same nonce (two relays forwarding
/// the same copy) produces identical ciphertext and is not a violation.
#[derive(Debug, Default)]
pub struct NonceLedger {
    uses: HashMap<([u8; KEY_LEN], [u8; NONCE_LEN]), Vec<u8>>,
    violations: usize,
}

impl NonceLedger {
    pub fn record(&mut self, key: &[u8; KEY_LEN], nonce: &Nonce, aad: &[u8], plaintext: &[u8]) {
        let mut input = aad.to_vec();
        input.push(0xFF);
        input.extend_from_slice(plaintext);
        match self.uses.get(&(*key, nonce.0)) {
            Some(prev) if *prev != input => self.violations += 1,
            Some(_) => {}
            None => {
                self.uses.insert((*key, nonce.0), input);
            }
        }
    }

    pub fn record_pdu(&mut self, nk: &NetKey, pdu: &NetworkPdu, transport: &[u8]) {
        self.record(
            &nk.material,
            &Nonce::network(pdu.ttl, pdu.seq, pdu.src),
            &pdu.header_bytes(),
            transport,
        );
    }

    pub fn len(&self) -> usize {
        self.uses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uses.is_empty()
    }

    pub fn violations(&self) -> usize {
        self.violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nk(b: u8) -> NetKey {
        NetKey::new([b; 16], KeyIndex::new(0).unwrap())
    }

    fn ak(b: u8) -> AppKey {
        AppKey::new([b; 16], KeyIndex::new(0).unwrap(), KeyIndex::new(0).unwrap())
    }

    fn seq(v: u32) -> Seq {
        Seq::new(v).unwrap()
    }

    #[test]
    fn privacy_key_golden_vector() {
        // AES-CMAC(0^16, "emesh-privacy"), computed with an independent AES implementation.
        let pk = derive_privacy_key(&nk(0));
        assert_eq!(hex::encode(pk.material()), "985577a51df168263e95b3e737f9ca35");
    }

    #[test]
    fn network_seal_golden_vector() {
        // AES-CCM, 4-byte tag, computed with an independent AES implementation.
        let header = [0u8, 0x7F, 0, 0, 1, 0, 1, 0xFF, 0xFF];
        let nonce = Nonce::network(Ttl::MAX, seq(1), Address(1));
        let (ct, tag) = seal_network(&nk(1), &header, b"hello mesh", &nonce);
        assert_eq!(hex::encode(&ct), "36b609c687745f2cca2a");
        assert_eq!(hex::encode(tag), "99c74ccc");
    }

    #[test]
    fn privacy_key_is_deterministic_and_separates_keys() {
        assert_eq!(derive_privacy_key(&nk(3)), derive_privacy_key(&nk(3)));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..500 {
            let k = NetKey::new(rng.gen(), KeyIndex::new(0).unwrap());
            assert!(seen.insert(*derive_privacy_key(&k).material()));
        }
    }

    #[test]
    fn network_round_trip_and_tamper() {
        let header = [0u8, 5, 0, 0, 1, 0, 1, 0xFF, 0xFF];
        let nonce = Nonce::network(Ttl::new(5).unwrap(), seq(1), Address(1));
        let (ct, tag) = seal_network(&nk(1), &header, b"hello mesh", &nonce);
        assert_eq!(open_network(&nk(1), &header, &ct, &tag, &nonce).unwrap(), b"hello mesh");

        let mut flipped = ct.clone();
        flipped[0] ^= 0x01;
        assert_eq!(
            open_network(&nk(1), &header, &flipped, &tag, &nonce),
            Err(SecurityError::AuthenticationFailure)
        );
        let mut hdr = header;
        hdr[1] = 4;
        assert!(open_network(&nk(1), &hdr, &ct, &tag, &nonce).is_err());
        assert!(open_network(&nk(2), &header, &ct, &tag, &nonce).is_err());
        let other = Nonce::network(Ttl::new(5).unwrap(), seq(2), Address(1));
        assert!(open_network(&nk(1), &header, &ct, &tag, &other).is_err());
    }

    #[test]
    fn application_layer_separation() {
        let nonce = Nonce::application(seq(9), Address(1), Address::BROADCAST);
        let (ct, tag) = seal_application(&ak(7), &[0xE1, 0x0A], &nonce);
        assert_eq!(open_application(&ak(7), &ct, &tag, &nonce).unwrap(), vec![0xE1, 0x0A]);
        assert!(open_application(&ak(8), &ct, &tag, &nonce).is_err());
    }

    #[test]
    fn net_key_only_holder_cannot_read_payload() {
        let t = TransportPdu::seal(&ak(7), &[0xE1, 0x0A, 0, 0, 0, 1, 0], seq(3), Address(2), Address::BROADCAST);
        let pdu = seal_pdu(&nk(1), Ttl::MAX, seq(3), Address(2), Address::BROADCAST, &t.to_bytes());
        let wire = to_wire(&nk(1), &pdu).unwrap();
        let (got, _, transport) = from_wire([&nk(1)], &wire).unwrap();
        assert_eq!(got, pdu);
        let t2 = TransportPdu::from_bytes(&transport).unwrap();
        assert!(t2.open(&ak(8), seq(3), Address(2), Address::BROADCAST).is_err());
        assert!(t2.open(&ak(7), seq(3), Address(2), Address::BROADCAST).is_ok());
    }

    #[test]
    fn obfuscation_round_trip_and_keystream_dependence() {
        let pk = derive_privacy_key(&nk(4));
        let header = [127u8, 0, 0, 1, 0, 1, 0xFF, 0xFF];
        let a = obfuscate_header(&pk, &header, &[1, 2, 3, 4, 5, 6, 7, 8]);
        let b = obfuscate_header(&pk, &header, &[1, 2, 3, 4, 5, 6, 7, 9]);
        assert_ne!(a, b);
        assert_ne!(a.as_slice(), &header);
        assert_eq!(deobfuscate_header(&pk, &a, &[1, 2, 3, 4, 5, 6, 7, 8]), header);
    }

    #[test]
    fn zero_keystream_leaves_header_unchanged() {
        let mut header = [9u8, 8, 7];
        xor_in_place(&mut header, &[0; 16]);
        assert_eq!(header, [9, 8, 7]);
    }

    #[test]
    fn wire_frame_hides_header() {
        let pdu = seal_pdu(&nk(1), Ttl::MAX, seq(77), Address(5), Address::BROADCAST, &[0u8; 12]);
        let wire = to_wire(&nk(1), &pdu).unwrap();
        assert_eq!(wire[0], pdu.net_key_id);
        assert_ne!(&wire[1..HEADER_LEN], &pdu.header_bytes()[1..]);
        assert_eq!(from_wire([&nk(2)], &wire).unwrap_err(), SecurityError::AuthenticationFailure);
        let other_index = NetKey::new([1; 16], KeyIndex::new(1).unwrap());
        assert_eq!(from_wire([&other_index], &wire).unwrap_err(), SecurityError::UnknownKey(0));
    }

    #[test]
    fn nonce_ledger_flags_reuse() {
        let mut l = NonceLedger::default();
        let n = Nonce::network(Ttl::MAX, seq(1), Address(1));
        l.record(&[0; 16], &n, b"h", b"a");
        l.record(&[0; 16], &n, b"h", b"a");
        assert_eq!(l.violations(), 0);
        l.record(&[0; 16], &n, b"h", b"b");
        assert_eq!(l.violations(), 1);
    }
}

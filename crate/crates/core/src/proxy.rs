//! Proxy protocol framing over the connection-oriented GATT bearer.
//!
//! Each proxy PDU starts with one header byte: SAR in the top two bits,
//! message type in the low six.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_MTU: usize = 4;
pub const DEFAULT_MTU: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProxyError {
    #[error("MTU {0} is below the minimum of 4")]
    InvalidMtu(usize),
    #[error("cannot segment an empty payload")]
    EmptyPayload,
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error("no active proxy link")]
    NoActiveLink,
    #[error("malformed proxy PDU")]
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sar {
    Complete = 0,
    First = 1,
    Continuation = 2,
    Last = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProxyMessageType {
    NetworkPdu = 0,
    Beacon = 1,
    Config = 2,
}

impl ProxyMessageType {
    fn from_bits(v: u8) -> Option<Self> {
        match v {
            0 => Some(ProxyMessageType::NetworkPdu),
            1 => Some(ProxyMessageType::Beacon),
            2 => Some(ProxyMessageType::Config),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyPdu {
    pub sar: Sar,
    pub message_type: ProxyMessageType,
    pub payload: Vec<u8>,
}

impl ProxyPdu {
    pub fn header(&self) -> u8 {
        ((self.sar as u8) << 6) | self.message_type as u8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(1 + self.payload.len());
        v.push(self.header());
        v.extend_from_slice(&self.payload);
        v
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ProxyError> {
        let (&h, payload) = b.split_first().ok_or(ProxyError::Malformed)?;
        let sar = match h >> 6 {
            0 => Sar::Complete,
            1 => Sar::First,
            2 => Sar::Continuation,
            _ => Sar::Last,
        };
        let message_type = ProxyMessageType::from_bits(h & 0x3F).ok_or(ProxyError::Malformed)?;
        Ok(ProxyPdu { sar, message_type, payload: payload.to_vec() })
    }
}

pub fn proxy_segment(
    message_type: ProxyMessageType,
    payload: &[u8],
    mtu: usize,
) -> Result<Vec<ProxyPdu>, ProxyError> {
    if mtu < MIN_MTU {
        return Err(ProxyError::InvalidMtu(mtu));
    }
    if payload.is_empty() {
        return Err(ProxyError::EmptyPayload);
    }
    let chunk = mtu - 1;
    if payload.len() <= chunk {
        return Ok(vec![ProxyPdu { sar: Sar::Complete, message_type, payload: payload.to_vec() }]);
    }
    let chunks: Vec<&[u8]> = payload.chunks(chunk).collect();
    let last = chunks.len() - 1;
    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let sar = match i {
                0 => Sar::First,
                i if i == last => Sar::Last,
                _ => Sar::Continuation,
            };
            ProxyPdu { sar, message_type, payload: c.to_vec() }
        })
        .collect())
}

/// One client-server GATT connection. Ids are opaque to the link.
#[derive(Debug, Clone)]
pub struct ProxyLink {
    pub client: usize,
    pub server: usize,
    mtu: usize,
    buffer: Vec<u8>,
    expected: Option<ProxyMessageType>,
}

impl ProxyLink {
    pub fn new(client: usize, server: usize, mtu: usize) -> Result<Self, ProxyError> {
        if mtu < MIN_MTU {
            return Err(ProxyError::InvalidMtu(mtu));
        }
        Ok(ProxyLink { client, server, mtu, buffer: Vec::new(), expected: None })
    }

    pub fn mtu(&self) -> usize {
        self.mtu
    }

    pub fn is_idle(&self) -> bool {
        self.expected.is_none() && self.buffer.is_empty()
    }

    fn reset(&mut self) {
        self.buffer.clear();
        self.expected = None;
    }

    /// Feeds one segment; returns the complete message on Complete or Last.
    /// Any violation clears the reassembly buffer.
    pub fn reassemble(&mut self, seg: &ProxyPdu) -> Result<Option<(ProxyMessageType, Vec<u8>)>, ProxyError> {
        match (seg.sar, self.expected) {
            (Sar::Complete, None) => Ok(Some((seg.message_type, seg.payload.clone()))),
            (Sar::First, None) => {
                self.buffer.extend_from_slice(&seg.payload);
                self.expected = Some(seg.message_type);
                Ok(None)
            }
            (Sar::Complete | Sar::First, Some(_)) => {
                self.reset();
                Err(ProxyError::ProtocolViolation("new message while reassembling"))
            }
            (Sar::Continuation | Sar::Last, None) => {
                Err(ProxyError::ProtocolViolation("continuation without a first segment"))
            }
            (_, Some(t)) if t != seg.message_type => {
                self.reset();
                Err(ProxyError::ProtocolViolation("message type changed mid-message"))
            }
            (Sar::Continuation, Some(_)) => {
                self.buffer.extend_from_slice(&seg.payload);
                Ok(None)
            }
            (Sar::Last, Some(t)) => {
                self.buffer.extend_from_slice(&seg.payload);
                let msg = std::mem::take(&mut self.buffer);
                self.expected = None;
                Ok(Some((t, msg)))
            }
        }
    }
}

/// Proxy server side of every link terminating at one node.
#[derive(Debug, Clone, Default)]
pub struct ProxyServer {
    links: Vec<ProxyLink>,
}

impl ProxyServer {
    pub fn attach(&mut self, link: ProxyLink) {
        self.links.retain(|l| l.client != link.client);
        self.links.push(link);
    }

    pub fn links(&self) -> &[ProxyLink] {
        &self.links
    }

    /// Reassembles a segment from `client`; a completed network PDU is
    /// returned for injection into the mesh.
    pub fn from_client(&mut self, client: usize, seg: &ProxyPdu) -> Result<Option<Vec<u8>>, ProxyError> {
        let link = self
            .links
            .iter_mut()
            .find(|l| l.client == client)
            .ok_or(ProxyError::NoActiveLink)?;
        match link.reassemble(seg)? {
            Some((ProxyMessageType::NetworkPdu, bytes)) => Ok(Some(bytes)),
            _ => Ok(None),
        }
    }

    /// Segments `frame` for every linked client except `exclude` (the link it
    /// arrived on, if any).
    pub fn to_clients(
        &self,
        frame: &[u8],
        exclude: Option<usize>,
    ) -> Result<Vec<(usize, Vec<ProxyPdu>)>, ProxyError> {
        let out: Vec<_> = self
            .links
            .iter()
            .filter(|l| Some(l.client) != exclude)
            .map(|l| proxy_segment(ProxyMessageType::NetworkPdu, frame, l.mtu).map(|s| (l.client, s)))
            .collect::<Result<_, _>>()?;
        if out.is_empty() {
            return Err(ProxyError::NoActiveLink);
        }
        Ok(out)
    }
}

/// Client end of a link: segments outgoing frames, reassembles incoming.
#[derive(Debug, Clone)]
pub struct ProxyClient {
    pub link: ProxyLink,
}

impl ProxyClient {
    pub fn send(&self, frame: &[u8]) -> Result<Vec<ProxyPdu>, ProxyError> {
        proxy_segment(ProxyMessageType::NetworkPdu, frame, self.link.mtu)
    }

    pub fn receive(&mut self, seg: &ProxyPdu) -> Result<Option<Vec<u8>>, ProxyError> {
        match self.link.reassemble(seg)? {
            Some((ProxyMessageType::NetworkPdu, bytes)) => Ok(Some(bytes)),
            _ => Ok(None),
        }
    }
}

//! Deterministic discrete-event simulation of a mesh network.
//!
//! Nodes hear each other over a unit-disk advertising bearer with Bernoulli
//! per-link loss. Proxy clients reach the mesh through a lossless, ordered
//! GATT link to one proxy server. A run is a pure function of the node set,
//! the configuration, the traffic plan and the seed: every random draw comes
//! from a per-node ChaCha stream.

mod queue;
mod radio;
mod trace;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use queue::{EventQueue, SimTime};
pub use radio::{Position, RadioModel};
pub use trace::{Bearer, DropReason, NodeId, Trace, TraceEvent};

use crate::access::{
    auto_respond, dispatch, encode_emergency, onoff_set, publish, AccessMessage, ModelId, OnOffMessage,
};
use crate::address::Address;
use crate::node::{forward_copy, relay_decision, NodeState};
use crate::pdu::{AccessPayload, NetworkPdu, HEADER_LEN};
use crate::proxy::{ProxyClient, ProxyError, ProxyLink, ProxyPdu, ProxyServer, DEFAULT_MTU};
use crate::security::{
    from_wire, open_pdu, seal_pdu, to_wire, NetKey, NonceLedger, Nonce, SecurityError, TransportPdu,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub radio: RadioModel,
    /// Relay retransmission delay, uniform in `[min, max]` ms.
    pub relay_jitter_ms: (SimTime, SimTime),
    /// GATT overhead a message accumulates entering and leaving the mesh
    /// through proxy links. The uplink (client to server) crossing takes the
    /// larger half, the downlink crossing the rest.
    pub link_latency_ms: SimTime,
    /// Delay between a responder receiving a help request and publishing its offer.
    pub processing_ms: SimTime,
    pub mtu: usize,
    pub audit_nonces: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            radio: RadioModel::default(),
            relay_jitter_ms: (5, 25),
            link_latency_ms: 30,
            processing_ms: 0,
            mtu: DEFAULT_MTU,
            audit_nonces: false,
        }
    }
}

impl SimConfig {
    /// Zero jitter everywhere; useful for closed-form checks.
    pub fn deterministic(per_hop_latency_ms: SimTime) -> Self {
        SimConfig {
            radio: RadioModel { per_hop_latency_ms, jitter_ms: 0, ..RadioModel::default() },
            relay_jitter_ms: (0, 0),
            ..SimConfig::default()
        }
    }

    pub fn uplink_ms(&self) -> SimTime {
        self.link_latency_ms.div_ceil(2)
    }

    pub fn downlink_ms(&self) -> SimTime {
        self.link_latency_ms / 2
    }
}

#[derive(Debug, Clone)]
pub struct SimNode {
    pub label: String,
    pub state: NodeState,
    pub position: Position,
    rng: ChaCha8Rng,
    proxy_server: Option<ProxyServer>,
    proxy_client: Option<ProxyClient>,
}

impl SimNode {
    pub fn proxy_server(&self) -> Option<&ProxyServer> {
        self.proxy_server.as_ref()
    }

    pub fn proxy_client(&self) -> Option<&ProxyClient> {
        self.proxy_client.as_ref()
    }
}

/// What the wire-tap hook sees for every frame handed to a bearer.
#[derive(Debug)]
pub struct TapRecord<'a> {
    pub t: SimTime,
    pub node: NodeId,
    pub bearer: Bearer,
    pub frame: &'a [u8],
    pub plain_header: [u8; HEADER_LEN],
    /// Network-layer plaintext (the application-sealed transport PDU).
    pub transport: &'a [u8],
}

pub type WireTap = Box<dyn FnMut(&TapRecord<'_>) + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Via {
    Radio,
    FromClient(NodeId),
    FromServer,
}

#[derive(Debug, Clone)]
struct FrameMeta {
    src: Address,
    seq: u32,
    ttl: u8,
    header: [u8; HEADER_LEN],
    transport: Arc<[u8]>,
}

impl FrameMeta {
    fn new(pdu: &NetworkPdu, transport: &[u8]) -> Self {
        FrameMeta {
            src: pdu.src,
            seq: pdu.seq.get(),
            ttl: pdu.ttl.get(),
            header: pdu.header_bytes(),
            transport: transport.into(),
        }
    }
}

enum Event {
    Publish { node: NodeId, model: ModelId, dst: Address, payload: AccessPayload },
    Transmit { node: NodeId, frame: Arc<[u8]>, meta: FrameMeta },
    RadioRx { node: NodeId, frame: Arc<[u8]> },
    GattRx { node: NodeId, peer: NodeId, seg: ProxyPdu },
}

pub struct Simulation {
    config: SimConfig,
    seed: u64,
    nodes: Vec<SimNode>,
    queue: EventQueue<Event>,
    trace: Trace,
    drops: BTreeMap<DropReason, u64>,
    publish_errors: u64,
    ledger: Option<NonceLedger>,
    tap: Option<WireTap>,
}

impl Simulation {
    pub fn new(config: SimConfig, seed: u64) -> Self {
        let ledger = config.audit_nonces.then(NonceLedger::default);
        Simulation {
            config,
            seed,
            nodes: Vec::new(),
            queue: EventQueue::new(),
            trace: Trace::default(),
            drops: BTreeMap::new(),
            publish_errors: 0,
            ledger,
            tap: None,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn add_node(&mut self, label: impl Into<String>, state: NodeState, position: Position) -> NodeId {
        let id = self.nodes.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id as u64);
        self.nodes.push(SimNode {
            label: label.into(),
            state,
            position,
            rng,
            proxy_server: None,
            proxy_client: None,
        });
        id
    }

    /// Connects a GATT-capable client to a proxy server. A client holds at
    /// most one link; relinking replaces the old one.
    pub fn link_proxy(&mut self, client: NodeId, server: NodeId) -> Result<(), ProxyError> {
        let s = &self.nodes[server].state;
        if !(s.features().proxy && s.bearers().gatt && s.bearers().advertising) {
            return Err(ProxyError::ProtocolViolation("server lacks proxy feature or a bearer"));
        }
        if !self.nodes[client].state.bearers().gatt {
            return Err(ProxyError::ProtocolViolation("client lacks the GATT bearer"));
        }
        if let Some(old) = self.nodes[client].proxy_client.take() {
            if let Some(srv) = self.nodes[old.link.server].proxy_server.as_mut() {
                let links: Vec<ProxyLink> = srv.links().iter().filter(|l| l.client != client).cloned().collect();
                *srv = ProxyServer::default();
                links.into_iter().for_each(|l| srv.attach(l));
            }
        }
        let link = ProxyLink::new(client, server, self.config.mtu)?;
        self.nodes[server].proxy_server.get_or_insert_with(ProxyServer::default).attach(link.clone());
        self.nodes[client].proxy_client = Some(ProxyClient { link });
        Ok(())
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &SimNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SimNode {
        &mut self.nodes[id]
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label)
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn set_wire_tap(&mut self, tap: WireTap) {
        self.tap = Some(tap);
    }

    pub fn nonce_ledger(&self) -> Option<&NonceLedger> {
        self.ledger.as_ref()
    }

    pub fn drops(&self) -> &BTreeMap<DropReason, u64> {
        &self.drops
    }

    pub fn drop_count(&self, reason: DropReason) -> u64 {
        self.drops.get(&reason).copied().unwrap_or(0)
    }

    pub fn publish_errors(&self) -> u64 {
        self.publish_errors
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn schedule_publish(&mut self, at: SimTime, node: NodeId, model: ModelId, dst: Address, payload: AccessPayload) {
        self.queue.schedule(at, Event::Publish { node, model, dst, payload });
    }

    pub fn schedule_emergency(&mut self, at: SimTime, node: NodeId, msg: crate::access::EmergencyMessage, dst: Address) {
        self.schedule_publish(at, node, ModelId::EMERGENCY, dst, encode_emergency(&msg));
    }

    /// Delivers raw bytes to `node` over the advertising bearer at `at`.
    pub fn inject_frame(&mut self, at: SimTime, node: NodeId, frame: Vec<u8>) {
        self.queue.schedule(at, Event::RadioRx { node, frame: frame.into() });
    }

    /// Executes every event at or before `until` and returns the full trace.
    pub fn run(&mut self, until: SimTime) -> &Trace {
        while let Some((now, event)) = self.queue.pop_until(until) {
            match event {
                Event::Publish { node, model, dst, payload } => self.on_publish(now, node, model, dst, &payload),
                Event::Transmit { node, frame, meta } => self.radio_broadcast(now, node, frame, &meta),
                Event::RadioRx { node, frame } => self.node_on_receive(now, node, &frame, Via::Radio),
                Event::GattRx { node, peer, seg } => self.on_gatt(now, node, peer, &seg),
            }
        }
        &self.trace
    }

    pub fn run_to_completion(&mut self) -> &Trace {
        self.run(SimTime::MAX)
    }

    fn count_drop(&mut self, t: SimTime, node: NodeId, reason: DropReason) {
        *self.drops.entry(reason).or_default() += 1;
        self.trace.push(TraceEvent::Drop { t, node, reason });
    }

    fn tap(&mut self, t: SimTime, node: NodeId, bearer: Bearer, frame: &[u8], meta: &FrameMeta) {
        if let Some(tap) = self.tap.as_mut() {
            tap(&TapRecord { t, node, bearer, frame, plain_header: meta.header, transport: &meta.transport });
        }
    }

    fn audit(&mut self, nk: &NetKey, pdu: &NetworkPdu, transport: &[u8]) {
        if let Some(l) = self.ledger.as_mut() {
            l.record_pdu(nk, pdu, transport);
        }
    }

    fn on_publish(&mut self, now: SimTime, id: NodeId, model: ModelId, dst: Address, payload: &AccessPayload) {
        let state = &mut self.nodes[id].state;
        let app_key = state
            .models
            .entries()
            .iter()
            .find(|e| e.id == model)
            .map(|e| e.app_key)
            .or_else(|| state.keys.app_keys.first().map(|k| k.index()));
        let Some(app_key) = app_key else {
            self.publish_errors += 1;
            return;
        };
        let pdu = match publish(state, model, payload, dst, app_key) {
            Ok(p) => p,
            Err(_) => {
                self.publish_errors += 1;
                return;
            }
        };
        let ak = state.keys.app_key(app_key).cloned().expect("publish checked the AppKey");
        let nk = state.keys.net_key(ak.bound_net_key()).cloned().expect("publish checked the NetKey");
        let transport = open_pdu(&nk, &pdu).expect("own PDU opens");
        if let Some(l) = self.ledger.as_mut() {
            l.record(ak.material(), &Nonce::application(pdu.seq, pdu.src, pdu.dst), &[], &payload.to_bytes());
        }
        self.audit(&nk, &pdu, &transport);
        self.trace.push(TraceEvent::Publish {
            t: now,
            node: id,
            src: pdu.src,
            seq: pdu.seq.get(),
            dst: pdu.dst,
            ttl: pdu.ttl.get(),
        });
        let frame: Arc<[u8]> = to_wire(&nk, &pdu).expect("published PDU fits").into();
        let meta = FrameMeta::new(&pdu, &transport);
        if self.nodes[id].state.bearers().advertising {
            self.queue.schedule(now, Event::Transmit { node: id, frame: frame.clone(), meta: meta.clone() });
        }
        if let Some(client) = self.nodes[id].proxy_client.as_ref() {
            let server = client.link.server;
            let segs = client.send(&frame).expect("link MTU validated at creation");
            self.gatt_send(now, id, server, segs, self.config.uplink_ms(), &frame, &meta);
        }
        self.forward_to_clients(now, id, &frame, None, &meta);
    }

    #[allow(clippy::too_many_arguments)]
    fn gatt_send(
        &mut self,
        now: SimTime,
        from: NodeId,
        to: NodeId,
        segs: Vec<ProxyPdu>,
        delay: SimTime,
        frame: &[u8],
        meta: &FrameMeta,
    ) {
        self.trace.push(TraceEvent::Transmit {
            t: now,
            node: from,
            bearer: Bearer::Gatt,
            src: meta.src,
            seq: meta.seq,
            ttl: meta.ttl,
            len: frame.len(),
        });
        self.tap(now, from, Bearer::Gatt, frame, meta);
        for seg in segs {
            self.queue.schedule(now + delay, Event::GattRx { node: to, peer: from, seg });
        }
    }

    fn forward_to_clients(&mut self, now: SimTime, id: NodeId, frame: &[u8], exclude: Option<NodeId>, meta: &FrameMeta) {
        let Some(server) = self.nodes[id].proxy_server.as_ref() else { return };
        // NoActiveLink: nothing to forward.
        let Ok(out) = server.to_clients(frame, exclude) else { return };
        for (client, segs) in out {
            self.gatt_send(now, id, client, segs, self.config.downlink_ms(), frame, meta);
        }
    }

    /// Broadcasts `frame` from `sender` to every in-range advertising node,
    /// each copy independently subject to link loss.
    fn radio_broadcast(&mut self, now: SimTime, sender: NodeId, frame: Arc<[u8]>, meta: &FrameMeta) {
        if !self.nodes[sender].state.bearers().advertising {
            return;
        }
        self.trace.push(TraceEvent::Transmit {
            t: now,
            node: sender,
            bearer: Bearer::Advertising,
            src: meta.src,
            seq: meta.seq,
            ttl: meta.ttl,
            len: frame.len(),
        });
        self.tap(now, sender, Bearer::Advertising, &frame, meta);
        let origin = self.nodes[sender].position;
        for rx in 0..self.nodes.len() {
            if rx == sender
                || !self.nodes[rx].state.bearers().advertising
                || !self.config.radio.in_range(&origin, &self.nodes[rx].position)
            {
                continue;
            }
            let rng = &mut self.nodes[sender].rng;
            if self.config.radio.sample_lost(rng) {
                self.count_drop(now, rx, DropReason::Lost);
                continue;
            }
            let latency = self.config.radio.sample_latency(rng);
            self.queue.schedule(now + latency, Event::RadioRx { node: rx, frame: frame.clone() });
        }
    }

    fn on_gatt(&mut self, now: SimTime, id: NodeId, peer: NodeId, seg: &ProxyPdu) {
        let node = &mut self.nodes[id];
        let (result, via) = if let Some(server) = node.proxy_server.as_mut().filter(|s| s.links().iter().any(|l| l.client == peer)) {
            (server.from_client(peer, seg), Via::FromClient(peer))
        } else if let Some(client) = node.proxy_client.as_mut() {
            (client.receive(seg), Via::FromServer)
        } else {
            (Err(ProxyError::NoActiveLink), Via::FromServer)
        };
        match result {
            Ok(Some(frame)) => self.node_on_receive(now, id, &frame, via),
            Ok(None) => {}
            Err(_) => self.count_drop(now, id, DropReason::ProxyProtocol),
        }
    }

    /// Network-layer receive path: authenticate, deduplicate, deliver to
    /// local models, bridge to proxy clients, relay.
    fn node_on_receive(&mut self, now: SimTime, id: NodeId, frame: &[u8], via: Via) {
        let opened = from_wire(&self.nodes[id].state.keys.net_keys, frame)
            .map(|(pdu, nk, transport)| (pdu, nk.clone(), transport));
        let (pdu, nk, transport) = match opened {
            Ok(v) => v,
            Err(SecurityError::UnknownKey(_)) => return self.count_drop(now, id, DropReason::UnknownKey),
            Err(SecurityError::AuthenticationFailure) => {
                return self.count_drop(now, id, DropReason::Authentication)
            }
            Err(SecurityError::Pdu(_)) => return self.count_drop(now, id, DropReason::Malformed),
        };
        if !self.nodes[id].state.cache.check_insert(pdu.src, pdu.seq) {
            return self.count_drop(now, id, DropReason::Duplicate);
        }
        let bearer = if via == Via::Radio { Bearer::Advertising } else { Bearer::Gatt };
        self.trace.push(TraceEvent::Receive {
            t: now,
            node: id,
            bearer,
            src: pdu.src,
            seq: pdu.seq.get(),
            ttl: pdu.ttl.get(),
        });

        self.deliver_local(now, id, &pdu, &transport);

        let meta = FrameMeta::new(&pdu, &transport);
        let exclude = match via {
            Via::FromClient(c) => Some(c),
            _ => None,
        };
        self.forward_to_clients(now, id, frame, exclude, &meta);

        let state = &self.nodes[id].state;
        let copy = match via {
            Via::Radio => relay_decision(state, &pdu),
            Via::FromClient(_) if state.bearers().advertising => forward_copy(state, &pdu),
            _ => None,
        };
        if let Some(copy) = copy {
            let resealed = seal_pdu(&nk, copy.ttl, copy.seq, copy.src, copy.dst, &transport);
            self.audit(&nk, &resealed, &transport);
            let out: Arc<[u8]> = to_wire(&nk, &resealed).expect("relayed PDU keeps its size").into();
            let (lo, hi) = self.config.relay_jitter_ms;
            let delay = if hi > lo { self.nodes[id].rng.gen_range(lo..=hi) } else { lo };
            let meta = FrameMeta::new(&resealed, &transport);
            self.queue.schedule(now + delay, Event::Transmit { node: id, frame: out, meta });
        }
    }

    fn deliver_local(&mut self, now: SimTime, id: NodeId, pdu: &NetworkPdu, transport: &[u8]) {
        let state = &self.nodes[id].state;
        let unicast = state.unicast();
        if !state.models.entries().iter().any(|e| e.accepts(unicast, pdu.dst)) {
            return;
        }
        let Ok(tpdu) = TransportPdu::from_bytes(transport) else {
            return self.count_drop(now, id, DropReason::Malformed);
        };
        let plain = state
            .keys
            .app_keys
            .iter()
            .find_map(|ak| tpdu.open(ak, pdu.seq, pdu.src, pdu.dst).ok());
        let Some(plain) = plain else {
            return self.count_drop(now, id, DropReason::ApplicationKey);
        };
        let Ok(payload) = AccessPayload::from_bytes(&plain) else {
            return self.count_drop(now, id, DropReason::Malformed);
        };
        let deliveries = dispatch(state, pdu.src, pdu.dst, &payload);
        for (model, message) in deliveries {
            self.trace.push(TraceEvent::Dispatch {
                t: now,
                node: id,
                src: pdu.src,
                seq: pdu.seq.get(),
                ttl: pdu.ttl.get(),
                model,
                message,
            });
            match message {
                AccessMessage::OnOff(OnOffMessage::Set(v)) => onoff_set(&mut self.nodes[id].state, v),
                AccessMessage::Emergency(m) => {
                    if let Some(reply) = auto_respond(&self.nodes[id].state, &m, pdu.src) {
                        let at = now + self.config.processing_ms;
                        self.schedule_emergency(at, id, reply, Address::BROADCAST);
                    }
                }
                AccessMessage::OnOff(_) => {}
            }
        }
    }
}

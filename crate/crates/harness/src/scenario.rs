//! Scenario files: a `[meta]` block, a `[radio]` block and one node per line
//! under `[nodes]`.
//!
//! ```text
//! [nodes]
//! # id role x y floor features...
//! S1 proxy_server 12.5 8.0 1 relay proxy gatt adv
//! 04 source       12.0 8.5 1 gatt proxy=S1
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use emesh::access::ModelId;
use emesh::address::Address;
use emesh::node::{Bearers, Features};
use emesh::pdu::Ttl;
use emesh::provisioning::{
    export_credentials, import_credentials, provision_device, CredentialBundle, ProvisionerState,
    ProvisioningError, IMPORTED_ADDRESS_BASE,
};
use emesh::security::KeyIndex;
use emesh::sim::{NodeId, Position, RadioModel, SimConfig, Simulation};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("declared {declared} {what} but {listed} listed")]
    CountMismatch { what: &'static str, declared: usize, listed: usize },
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("nodes `{a}` and `{b}` are {dist:.2} m apart, below the {min} m minimum")]
    TooClose { a: String, b: String, dist: f64, min: f64 },
    #[error("node `{id}` has no neighbour within the {max} m maximum")]
    Isolated { id: String, max: f64 },
    #[error("node `{id}`: {msg}")]
    Role { id: String, msg: String },
    #[error("scenario needs exactly one source, found {0}")]
    Source(usize),
    #[error("{0}")]
    Radio(String),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Provisioning(#[from] ProvisioningError),
    #[error("proxy link {client} -> {server}: {msg}")]
    Proxy { client: String, server: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Relay,
    ProxyServer,
    ProxyClient,
    /// The proxy client that sends help requests.
    Source,
}

impl Role {
    fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "relay" => Role::Relay,
            "proxy_server" => Role::ProxyServer,
            "proxy_client" => Role::ProxyClient,
            "source" => Role::Source,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Relay => "relay",
            Role::ProxyServer => "proxy_server",
            Role::ProxyClient => "proxy_client",
            Role::Source => "source",
        }
    }

    pub fn is_phone(self) -> bool {
        matches!(self, Role::ProxyClient | Role::Source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub role: Role,
    pub position: Position,
    pub features: Features,
    pub bearers: Bearers,
    /// Proxy server a phone attaches to.
    pub proxy: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub dimensions: (f64, f64),
    pub floors: i32,
    pub declared_relays: usize,
    pub declared_proxy_servers: usize,
    pub declared_proxy_clients: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub responders: Vec<String>,
    pub initial_ttl: Ttl,
    pub sim: SimConfig,
    pub nodes: Vec<NodeSpec>,
}

impl ScenarioConfig {
    pub fn count(&self, role: Role) -> usize {
        self.nodes.iter().filter(|n| n.role == role).count()
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn source(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.role == Role::Source)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(ParseError::from)?;
    let cfg = parse_scenario(&text)?;
    validate(&cfg)?;
    Ok(cfg)
}

#[derive(PartialEq)]
enum Section {
    None,
    Meta,
    Radio,
    Nodes,
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ParseError> {
    v.parse().map_err(|_| syntax(line, format!("bad value `{v}` for `{key}`")))
}

/// Parses without checking counts or geometry; see [`validate`].
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ParseError> {
    let mut section = Section::None;
    let mut meta: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut sim = SimConfig::default();
    let mut radio_seen = HashSet::new();
    let mut nodes = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[meta]" => Section::Meta,
                "[radio]" => Section::Radio,
                "[nodes]" => Section::Nodes,
                _ => return Err(syntax(ln, format!("unknown section {line}"))),
            };
            continue;
        }
        match section {
            Section::None => return Err(syntax(ln, "content before the first section")),
            Section::Meta | Section::Radio => {
                let (k, v) = line.split_once('=').ok_or_else(|| syntax(ln, "expected `key = value`"))?;
                let (k, v) = (k.trim(), v.trim());
                if section == Section::Meta {
                    if meta.insert(k.to_string(), (ln, v.to_string())).is_some() {
                        return Err(syntax(ln, format!("repeated key `{k}`")));
                    }
                } else {
                    if !radio_seen.insert(k.to_string()) {
                        return Err(syntax(ln, format!("repeated key `{k}`")));
                    }
                    set_radio(&mut sim, ln, k, v)?;
                }
            }
            Section::Nodes => nodes.push(parse_node(ln, line)?),
        }
    }

    let mut take = |key: &'static str| meta.remove(key).ok_or(ParseError::MissingKey(key));
    let name = take("name")?.1;
    let (l, w) = take("width")?;
    let width: f64 = num(l, "width", &w)?;
    let (l, h) = take("height")?;
    let height: f64 = num(l, "height", &h)?;
    let (l, v) = take("floors")?;
    let floors = num(l, "floors", &v)?;
    let (l, v) = take("relays")?;
    let declared_relays = num(l, "relays", &v)?;
    let (l, v) = take("proxy_servers")?;
    let declared_proxy_servers = num(l, "proxy_servers", &v)?;
    let (l, v) = take("proxy_clients")?;
    let declared_proxy_clients = num(l, "proxy_clients", &v)?;
    let (l, v) = take("min_distance")?;
    let min_distance = num(l, "min_distance", &v)?;
    let (l, v) = take("max_distance")?;
    let max_distance = num(l, "max_distance", &v)?;
    let responders = match meta.remove("responders") {
        Some((_, v)) => v.split_whitespace().map(str::to_string).collect(),
        None => Vec::new(),
    };
    let initial_ttl = match meta.remove("initial_ttl") {
        Some((l, v)) => Ttl::new(num(l, "initial_ttl", &v)?).ok_or_else(|| syntax(l, "initial_ttl above 127"))?,
        None => Ttl::MAX,
    };
    if let Some((k, (l, _))) = meta.into_iter().next() {
        return Err(syntax(l, format!("unknown key `{k}`")));
    }

    Ok(ScenarioConfig {
        name,
        dimensions: (width, height),
        floors,
        declared_relays,
        declared_proxy_servers,
        declared_proxy_clients,
        min_distance,
        max_distance,
        responders,
        initial_ttl,
        sim,
        nodes,
    })
}

fn set_radio(sim: &mut SimConfig, ln: usize, k: &str, v: &str) -> Result<(), ParseError> {
    match k {
        "range" => sim.radio.range_m = num(ln, k, v)?,
        "base_loss" => sim.radio.base_loss = num(ln, k, v)?,
        "interference_loss" => sim.radio.interference_loss = num(ln, k, v)?,
        "per_hop_latency_ms" => sim.radio.per_hop_latency_ms = num(ln, k, v)?,
        "jitter_ms" => sim.radio.jitter_ms = num(ln, k, v)?,
        "cross_floor_factor" => sim.radio.cross_floor_factor = num(ln, k, v)?,
        "relay_jitter_min_ms" => sim.relay_jitter_ms.0 = num(ln, k, v)?,
        "relay_jitter_max_ms" => sim.relay_jitter_ms.1 = num(ln, k, v)?,
        "link_latency_ms" => sim.link_latency_ms = num(ln, k, v)?,
        "processing_ms" => sim.processing_ms = num(ln, k, v)?,
        "mtu" => sim.mtu = num(ln, k, v)?,
        _ => return Err(syntax(ln, format!("unknown radio key `{k}`"))),
    }
    Ok(())
}

fn parse_node(ln: usize, line: &str) -> Result<NodeSpec, ParseError> {
    let mut it = line.split_whitespace();
    let id = it.next().unwrap().to_string();
    let role_s = it.next().ok_or_else(|| syntax(ln, "missing role"))?;
    let role = Role::parse(role_s).ok_or_else(|| syntax(ln, format!("unknown role `{role_s}`")))?;
    let mut coord = |what: &str| it.next().ok_or_else(|| syntax(ln, format!("missing {what}")));
    let x = num(ln, "x", coord("x")?)?;
    let y = num(ln, "y", coord("y")?)?;
    let floor = num(ln, "floor", coord("floor")?)?;

    let mut features = Features::NONE;
    let mut bearers = Bearers { advertising: false, gatt: false };
    let mut proxy = None;
    for tok in it {
        match tok {
            "relay" => features.relay = true,
            "proxy" => features.proxy = true,
            "friend" => features.friend = true,
            "low_power" => features.low_power = true,
            "adv" => bearers.advertising = true,
            "gatt" => bearers.gatt = true,
            _ => match tok.strip_prefix("proxy=") {
                Some(s) if !s.is_empty() => proxy = Some(s.to_string()),
                _ => return Err(syntax(ln, format!("unknown feature `{tok}`"))),
            },
        }
    }
    Ok(NodeSpec { id, role, position: Position::new(x, y, floor), features, bearers, proxy })
}

/// Checks declared counts, id uniqueness, role/feature consistency and the
/// distance bounds between mesh nodes on the same floor.
pub fn validate(cfg: &ScenarioConfig) -> Result<(), ValidationError> {
    let mut seen = HashSet::new();
    for n in &cfg.nodes {
        if !seen.insert(n.id.as_str()) {
            return Err(ValidationError::DuplicateId(n.id.clone()));
        }
    }

    let counts = [
        ("relays", cfg.declared_relays, cfg.count(Role::Relay)),
        ("proxy servers", cfg.declared_proxy_servers, cfg.count(Role::ProxyServer)),
        ("proxy clients", cfg.declared_proxy_clients, cfg.count(Role::ProxyClient) + cfg.count(Role::Source)),
    ];
    for (what, declared, listed) in counts {
        if declared != listed {
            return Err(ValidationError::CountMismatch { what, declared, listed });
        }
    }
    let sources = cfg.count(Role::Source);
    if sources != 1 {
        return Err(ValidationError::Source(sources));
    }

    let r = &cfg.sim.radio;
    if r.range_m.is_nan() || r.range_m <= 0.0 {
        return Err(ValidationError::Radio("range must be positive".into()));
    }
    for (k, p) in [("base_loss", r.base_loss), ("interference_loss", r.interference_loss)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(ValidationError::Radio(format!("{k} outside [0, 1]")));
        }
    }
    if cfg.sim.relay_jitter_ms.0 > cfg.sim.relay_jitter_ms.1 {
        return Err(ValidationError::Radio("relay jitter min above max".into()));
    }

    for n in &cfg.nodes {
        check_role(cfg, n)?;
    }
    for id in &cfg.responders {
        match cfg.node(id) {
            Some(n) if n.role == Role::ProxyClient => {}
            _ => {
                return Err(ValidationError::Role { id: id.clone(), msg: "responders must be proxy clients".into() })
            }
        }
    }

    let mesh: Vec<&NodeSpec> = cfg.nodes.iter().filter(|n| !n.role.is_phone()).collect();
    for (i, a) in mesh.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for (j, b) in mesh.iter().enumerate() {
            if i == j || a.position.floor != b.position.floor {
                continue;
            }
            let d = a.position.planar_distance(&b.position);
            if j > i && d < cfg.min_distance {
                return Err(ValidationError::TooClose { a: a.id.clone(), b: b.id.clone(), dist: d, min: cfg.min_distance });
            }
            nearest = nearest.min(d);
        }
        if nearest > cfg.max_distance {
            return Err(ValidationError::Isolated { id: a.id.clone(), max: cfg.max_distance });
        }
    }
    Ok(())
}

fn check_role(cfg: &ScenarioConfig, n: &NodeSpec) -> Result<(), ValidationError> {
    let fail = |msg: &str| Err(ValidationError::Role { id: n.id.clone(), msg: msg.to_string() });
    let floor = n.position.floor;
    if floor < 0 || floor >= cfg.floors {
        return fail("floor outside the building");
    }
    match n.role {
        Role::Relay if !(n.features.relay && n.bearers.advertising) => fail("relay needs `relay adv`"),
        Role::ProxyServer if !(n.features.proxy && n.bearers.gatt && n.bearers.advertising) => {
            fail("proxy server needs `proxy gatt adv`")
        }
        Role::Relay | Role::ProxyServer if n.proxy.is_some() => fail("only phones attach to a proxy"),
        Role::ProxyClient | Role::Source => {
            if !n.bearers.gatt || n.bearers.advertising || n.features != Features::NONE {
                return fail("phones speak GATT only and have no mesh features");
            }
            match n.proxy.as_deref().and_then(|p| cfg.node(p)) {
                Some(s) if s.role == Role::ProxyServer => Ok(()),
                _ => fail("phone must name a proxy server with proxy=<id>"),
            }
        }
        _ => Ok(()),
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&write_scenario(self))
    }
}

pub fn write_scenario(cfg: &ScenarioConfig) -> String {
    let r: &RadioModel = &cfg.sim.radio;
    let mut s = String::new();
    let _ = writeln!(s, "[meta]");
    let _ = writeln!(s, "name = {}", cfg.name);
    let _ = writeln!(s, "width = {}", cfg.dimensions.0);
    let _ = writeln!(s, "height = {}", cfg.dimensions.1);
    let _ = writeln!(s, "floors = {}", cfg.floors);
    let _ = writeln!(s, "relays = {}", cfg.declared_relays);
    let _ = writeln!(s, "proxy_servers = {}", cfg.declared_proxy_servers);
    let _ = writeln!(s, "proxy_clients = {}", cfg.declared_proxy_clients);
    let _ = writeln!(s, "min_distance = {}", cfg.min_distance);
    let _ = writeln!(s, "max_distance = {}", cfg.max_distance);
    let _ = writeln!(s, "responders = {}", cfg.responders.join(" "));
    let _ = writeln!(s, "initial_ttl = {}", cfg.initial_ttl.get());
    let _ = writeln!(s, "\n[radio]");
    let _ = writeln!(s, "range = {}", r.range_m);
    let _ = writeln!(s, "base_loss = {}", r.base_loss);
    let _ = writeln!(s, "interference_loss = {}", r.interference_loss);
    let _ = writeln!(s, "per_hop_latency_ms = {}", r.per_hop_latency_ms);
    let _ = writeln!(s, "jitter_ms = {}", r.jitter_ms);
    let _ = writeln!(s, "cross_floor_factor = {}", r.cross_floor_factor);
    let _ = writeln!(s, "relay_jitter_min_ms = {}", cfg.sim.relay_jitter_ms.0);
    let _ = writeln!(s, "relay_jitter_max_ms = {}", cfg.sim.relay_jitter_ms.1);
    let _ = writeln!(s, "link_latency_ms = {}", cfg.sim.link_latency_ms);
    let _ = writeln!(s, "processing_ms = {}", cfg.sim.processing_ms);
    let _ = writeln!(s, "mtu = {}", cfg.sim.mtu);
    let _ = writeln!(s, "\n[nodes]");
    for n in &cfg.nodes {
        let p = n.position;
        let _ = write!(s, "{} {} {} {} {}", n.id, n.role.as_str(), p.x, p.y, p.floor);
        let flags = [
            (n.features.relay, "relay"),
            (n.features.proxy, "proxy"),
            (n.features.friend, "friend"),
            (n.features.low_power, "low_power"),
            (n.bearers.gatt, "gatt"),
            (n.bearers.advertising, "adv"),
        ];
        for (on, tok) in flags {
            if on {
                let _ = write!(s, " {tok}");
            }
        }
        if let Some(p) = &n.proxy {
            let _ = write!(s, " proxy={p}");
        }
        s.push('\n');
    }
    s
}

/// A scenario instantiated as a simulation.
pub struct World {
    pub sim: Simulation,
    pub source: NodeId,
    pub responders: Vec<NodeId>,
    pub initial_ttl: Ttl,
}

const NET_KEY: [u8; 16] = *b"emesh-net-key-00";
const APP_KEY: [u8; 16] = *b"emesh-app-key-00";

/// Provisions every mesh node from one provisioner, imports the phones from
/// its exported credentials and attaches them to their proxy servers.
pub fn build_world(cfg: &ScenarioConfig, seed: u64) -> Result<World, BuildError> {
    let key_index = KeyIndex::new(0).expect("index 0 is valid");
    let mut prov = ProvisionerState::new(CredentialBundle::new(NET_KEY, &[APP_KEY], key_index));
    let mut sim = Simulation::new(cfg.sim.clone(), seed);
    let mut phones = Vec::new();

    for n in cfg.nodes.iter().filter(|n| !n.role.is_phone()) {
        let mut st = provision_device(&mut prov, n.features, n.bearers)?;
        st.register_model(ModelId::EMERGENCY, key_index);
        st.set_initial_ttl(cfg.initial_ttl);
        sim.add_node(n.id.clone(), st, n.position);
    }
    let creds = export_credentials(&prov);
    for (k, n) in cfg.nodes.iter().filter(|n| n.role.is_phone()).enumerate() {
        let mut st = import_credentials(&creds, Address(IMPORTED_ADDRESS_BASE + 1 + k as u16))?;
        st.set_initial_ttl(cfg.initial_ttl);
        st.responder = cfg.responders.contains(&n.id);
        phones.push(sim.add_node(n.id.clone(), st, n.position));
    }
    for n in cfg.nodes.iter().filter(|n| n.role.is_phone()) {
        let server = n.proxy.as_deref().unwrap_or_default();
        let link_err = |msg: String| BuildError::Proxy { client: n.id.clone(), server: server.to_string(), msg };
        let c = sim.find(&n.id).expect("phone was added");
        let s = sim.find(server).ok_or_else(|| link_err("unknown server".into()))?;
        sim.link_proxy(c, s).map_err(|e| link_err(e.to_string()))?;
    }

    let source = cfg.source().and_then(|n| sim.find(&n.id)).expect("validated scenario has a source");
    let responders = cfg.responders.iter().filter_map(|id| sim.find(id)).collect();
    Ok(World { sim, source, responders, initial_ttl: cfg.initial_ttl })
}

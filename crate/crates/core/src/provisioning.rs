//! Network bootstrap and QR-style credential exchange.
//!
//! Credential JSON, fields in this order:
//!
//! ```json
//! {"netKey":"<32 hex>","appKeys":["<32 hex>",...],"keyIndex":<0..4095>}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::ModelId;
use crate::address::Address;
use crate::node::{Bearers, Features, NodeState};
use crate::security::{AppKey, KeyIndex, NetKey, KEY_LEN};

/// First address of the range imported credential holders pick from.
pub const IMPORTED_ADDRESS_BASE: u16 = 0x7000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProvisioningError {
    #[error("unicast address space exhausted")]
    AddressSpaceExhausted,
    #[error("credential schema violation: {0}")]
    SchemaViolation(String),
    #[error("{0} is not a unicast address")]
    InvalidAddress(Address),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialBundle {
    pub net_key: NetKey,
    pub app_keys: Vec<AppKey>,
    pub key_index: KeyIndex,
}

impl CredentialBundle {
    /// App keys get indexes 0.. in list order, all bound to the subnet.
    pub fn new(net_key_material: [u8; KEY_LEN], app_key_materials: &[[u8; KEY_LEN]], key_index: KeyIndex) -> Self {
        CredentialBundle {
            net_key: NetKey::new(net_key_material, key_index),
            app_keys: app_key_materials
                .iter()
                .enumerate()
                .map(|(i, m)| AppKey::new(*m, KeyIndex::new(i as u16).expect("< 4096 app keys"), key_index))
                .collect(),
            key_index,
        }
    }

    fn install(&self, node: &mut NodeState) {
        node.keys.net_keys.push(self.net_key.clone());
        node.keys.app_keys.extend(self.app_keys.iter().cloned());
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CredentialJson {
    #[serde(rename = "netKey")]
    net_key: String,
    #[serde(rename = "appKeys")]
    app_keys: Vec<String>,
    #[serde(rename = "keyIndex")]
    key_index: u16,
}

fn parse_key(field: &str, s: &str) -> Result<[u8; KEY_LEN], ProvisioningError> {
    if s.len() != 2 * KEY_LEN {
        return Err(ProvisioningError::SchemaViolation(format!(
            "{field}: expected {} hex chars, got {}",
            2 * KEY_LEN,
            s.len()
        )));
    }
    let mut out = [0u8; KEY_LEN];
    hex::decode_to_slice(s, &mut out)
        .map_err(|e| ProvisioningError::SchemaViolation(format!("{field}: {e}")))?;
    Ok(out)
}

pub fn bundle_to_json(b: &CredentialBundle) -> String {
    let j = CredentialJson {
        net_key: hex::encode(b.net_key.material()),
        app_keys: b.app_keys.iter().map(|k| hex::encode(k.material())).collect(),
        key_index: b.key_index.get(),
    };
    serde_json::to_string(&j).expect("plain struct serializes")
}

pub fn bundle_from_json(json: &str) -> Result<CredentialBundle, ProvisioningError> {
    let j: CredentialJson =
        serde_json::from_str(json).map_err(|e| ProvisioningError::SchemaViolation(e.to_string()))?;
    let key_index = KeyIndex::new(j.key_index)
        .ok_or_else(|| ProvisioningError::SchemaViolation(format!("keyIndex {} above 4095", j.key_index)))?;
    let net = parse_key("netKey", &j.net_key)?;
    let apps = j
        .app_keys
        .iter()
        .enumerate()
        .map(|(i, s)| parse_key(&format!("appKeys[{i}]"), s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CredentialBundle::new(net, &apps, key_index))
}

#[derive(Debug, Clone)]
pub struct ProvisionerState {
    next_unicast: u32,
    bundle: CredentialBundle,
    allocated: Vec<Address>,
}

impl ProvisionerState {
    pub fn new(bundle: CredentialBundle) -> Self {
        ProvisionerState { next_unicast: 0x0001, bundle, allocated: Vec::new() }
    }

    pub fn bundle(&self) -> &CredentialBundle {
        &self.bundle
    }

    pub fn allocated(&self) -> &[Address] {
        &self.allocated
    }

    pub fn next_unicast(&self) -> Option<Address> {
        (self.next_unicast <= 0x7FFF).then_some(Address(self.next_unicast as u16))
    }

    #[cfg(test)]
    pub(crate) fn set_next_unicast(&mut self, v: u16) {
        self.next_unicast = v as u32;
    }
}

/// Assigns the next sequential unicast address and installs the network keys.
pub fn provision_device(
    p: &mut ProvisionerState,
    features: Features,
    bearers: Bearers,
) -> Result<NodeState, ProvisioningError> {
    let addr = p.next_unicast().ok_or(ProvisioningError::AddressSpaceExhausted)?;
    p.next_unicast += 1;
    p.allocated.push(addr);
    let mut node = NodeState::new(addr, features, bearers);
    p.bundle.install(&mut node);
    Ok(node)
}

pub fn export_credentials(p: &ProvisionerState) -> String {
    bundle_to_json(&p.bundle)
}

/// Builds a smartphone-profile node (GATT only, no relay or proxy) holding
/// the bundle's keys, with the emergency model bound to the first app key.
pub fn import_credentials(json: &str, self_address: Address) -> Result<NodeState, ProvisioningError> {
    if !self_address.is_unicast() {
        return Err(ProvisioningError::InvalidAddress(self_address));
    }
    let bundle = bundle_from_json(json)?;
    let mut node = NodeState::new(self_address, Features::NONE, Bearers::GATT);
    bundle.install(&mut node);
    if let Some(ak) = bundle.app_keys.first() {
        node.register_model(ModelId::EMERGENCY, ak.index());
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::{from_wire, open_pdu, seal_pdu, to_wire};
    use crate::pdu::{Seq, Ttl};

    fn bundle() -> CredentialBundle {
        CredentialBundle::new([0x11; 16], &[[0x22; 16], [0x33; 16]], KeyIndex::new(5).unwrap())
    }

    #[test]
    fn sequential_addresses() {
        let mut p = ProvisionerState::new(bundle());
        let addrs: Vec<u16> = (0..3)
            .map(|_| provision_device(&mut p, Features::RELAY, Bearers::ADV).unwrap().unicast().0)
            .collect();
        assert_eq!(addrs, vec![1, 2, 3]);
    }

    #[test]
    fn address_space_exhaustion() {
        let mut p = ProvisionerState::new(bundle());
        p.set_next_unicast(0x7FFF);
        assert_eq!(provision_device(&mut p, Features::RELAY, Bearers::ADV).unwrap().unicast(), Address(0x7FFF));
        assert_eq!(
            provision_device(&mut p, Features::RELAY, Bearers::ADV).unwrap_err(),
            ProvisioningError::AddressSpaceExhausted
        );
    }

    #[test]
    fn provisioned_node_opens_network_pdus() {
        let mut p = ProvisionerState::new(bundle());
        let a = provision_device(&mut p, Features::RELAY, Bearers::ADV).unwrap();
        let b = provision_device(&mut p, Features::RELAY, Bearers::ADV).unwrap();
        let pdu = seal_pdu(&a.keys.net_keys[0], Ttl::MAX, Seq::new(0).unwrap(), a.unicast(), Address::BROADCAST, &[1; 8]);
        assert!(open_pdu(&b.keys.net_keys[0], &pdu).is_ok());
        let wire = to_wire(&a.keys.net_keys[0], &pdu).unwrap();
        assert!(from_wire(&b.keys.net_keys, &wire).is_ok());
    }

    #[test]
    fn export_layout_and_determinism() {
        let p = ProvisionerState::new(bundle());
        let json = export_credentials(&p);
        assert_eq!(
            json,
            format!(
                "{{\"netKey\":\"{}\",\"appKeys\":[\"{}\",\"{}\"],\"keyIndex\":5}}",
                "11".repeat(16),
                "22".repeat(16),
                "33".repeat(16)
            )
        );
        assert_eq!(json, export_credentials(&p));
        assert_eq!(bundle_from_json(&json).unwrap(), bundle());
    }

    #[test]
    fn import_validation() {
        let good = bundle_to_json(&bundle());
        let node = import_credentials(&good, Address(0x7001)).unwrap();
        assert_eq!(node.bearers(), Bearers::GATT);
        assert_eq!(node.features(), Features::NONE);
        assert!(node.models.contains(ModelId::EMERGENCY));
        assert_eq!(node.keys.app_keys.len(), 2);

        let truncated = good.replacen(&"11".repeat(16), &"11".repeat(15), 1);
        assert!(matches!(import_credentials(&truncated, Address(0x7001)), Err(ProvisioningError::SchemaViolation(_))));
        let missing = r#"{"netKey":"00000000000000000000000000000000","keyIndex":0}"#;
        assert!(matches!(import_credentials(missing, Address(0x7001)), Err(ProvisioningError::SchemaViolation(_))));
        let bad_hex = good.replacen("11", "zz", 1);
        assert!(matches!(import_credentials(&bad_hex, Address(0x7001)), Err(ProvisioningError::SchemaViolation(_))));
        let big_index = good.replace("\"keyIndex\":5", "\"keyIndex\":4096");
        assert!(matches!(import_credentials(&big_index, Address(0x7001)), Err(ProvisioningError::SchemaViolation(_))));
        assert_eq!(
            import_credentials(&good, Address::BROADCAST).unwrap_err(),
            ProvisioningError::InvalidAddress(Address::BROADCAST)
        );
    }
}

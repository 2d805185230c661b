//! 16-bit mesh addressing.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A 16-bit mesh address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressClass {
    Unassigned,
    Unicast,
    /// 0x8000..=0xBFFF. Virtual addresses in the full standard; unused here.
    Reserved,
    Group,
    Broadcast,
}

impl Address {
    pub const UNASSIGNED: Address = Address(0x0000);
    pub const BROADCAST: Address = Address(0xFFFF);
    pub const MAX_UNICAST: Address = Address(0x7FFF);

    pub fn class(self) -> AddressClass {
        classify_address(self)
    }

    pub fn is_unicast(self) -> bool {
        self.class() == AddressClass::Unicast
    }

    /// Valid as a PDU destination: unicast, group or broadcast.
    pub fn is_valid_destination(self) -> bool {
        matches!(
            self.class(),
            AddressClass::Unicast | AddressClass::Group | AddressClass::Broadcast
        )
    }

    pub fn to_be_bytes(self) -> [u8; 2] {
        self.0.to_be_bytes()
    }

    pub fn from_be_bytes(b: [u8; 2]) -> Self {
        Address(u16::from_be_bytes(b))
    }
}

pub fn classify_address(a: Address) -> AddressClass {
    match a.0 {
        0x0000 => AddressClass::Unassigned,
        0x0001..=0x7FFF => AddressClass::Unicast,
        0x8000..=0xBFFF => AddressClass::Reserved,
        0xC000..=0xFFFE => AddressClass::Group,
        0xFFFF => AddressClass::Broadcast,
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04X}", self.0)
    }
}

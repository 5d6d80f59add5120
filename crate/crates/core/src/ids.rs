//! Identifier newtypes shared across the engine.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdError {
    #[error("ambulance id {0:?} must be 1-16 characters from [A-Za-z0-9_-]")]
    Ambulance(String),
    #[error("sms address {0:?} must match +?[0-9]{{3,15}}")]
    SmsAddress(String),
    #[error("controller id must be non-empty printable ASCII without spaces")]
    Controller,
}

/// Ambulance identifier carried at the front of every location message.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AmbulanceId(String);

impl AmbulanceId {
    pub fn new(s: &str) -> Result<Self, IdError> {
        let ok = (1..=16).contains(&s.len())
            && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        if ok {
            Ok(Self(s.to_string()))
        } else {
            Err(IdError::Ambulance(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Phone number as accepted by `AT+CMGS`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SmsAddress(String);

impl SmsAddress {
    pub fn new(s: &str) -> Result<Self, IdError> {
        let digits = s.strip_prefix('+').unwrap_or(s);
        let ok = (3..=15).contains(&digits.len()) && digits.bytes().all(|b| b.is_ascii_digit());
        if ok {
            Ok(Self(s.to_string()))
        } else {
            Err(IdError::SmsAddress(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ControllerId(String);

impl ControllerId {
    pub fn new(s: &str) -> Result<Self, IdError> {
        if !s.is_empty() && s.bytes().all(|b| b.is_ascii_graphic() && b != b'/') {
            Ok(Self(s.to_string()))
        } else {
            Err(IdError::Controller)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

macro_rules! string_id_impls {
    ($($ty:ident),*) => {$(
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl FromStr for $ty {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl TryFrom<String> for $ty {
            type Error = IdError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                Self::new(&s)
            }
        }

        impl From<$ty> for String {
            fn from(id: $ty) -> String {
                id.0
            }
        }
    )*};
}

string_id_impls!(AmbulanceId, SmsAddress, ControllerId);

/// Road graph node.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

/// Directed road edge. An edge entering a signalized node is that node's approach.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ambulance_id_grammar() {
        assert!(AmbulanceId::new("AMB1").is_ok());
        assert!(AmbulanceId::new("a_b-C9").is_ok());
        assert!(AmbulanceId::new("0123456789abcdef").is_ok());
        assert!(AmbulanceId::new("0123456789abcdefg").is_err());
        assert!(AmbulanceId::new("").is_err());
        assert!(AmbulanceId::new("AMB 1").is_err());
    }

    #[test]
    fn sms_address_grammar() {
        assert!(SmsAddress::new("+15550001").is_ok());
        assert!(SmsAddress::new("112").is_ok());
        assert!(SmsAddress::new("12").is_err());
        assert!(SmsAddress::new("+1234567890123456").is_err());
        assert!(SmsAddress::new("++123").is_err());
        assert!(SmsAddress::new("12a4").is_err());
    }
}

//! String identifiers for sensors, states and subsystems.

use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Reports why `s` is not usable as an identifier, if it isn't.
///
/// Identifiers end up as CSV cells and `sensor=State` command-line pairs, so
/// separators, quotes and whitespace are rejected.
pub fn identifier_problem(s: &str) -> Option<&'static str> {
    if s.is_empty() {
        return Some("identifier must not be empty");
    }
    if s.chars()
        .any(|c| c.is_whitespace() || matches!(c, ',' | '"' | '\'' | '=' | ';'))
    {
        return Some("identifier must not contain whitespace, quotes, ',', ';' or '='");
    }
    None
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl PartialEq<str> for $name {
            fn eq(&self, other: &str) -> bool {
                self.0 == other
            }
        }

        impl PartialEq<&str> for $name {
            fn eq(&self, other: &&str) -> bool {
                self.0 == *other
            }
        }
    };
}

string_id!(
    /// Identifies one sensor (one stochastic process) of the system.
    SensorId
);
string_id!(
    /// Names one state of a sensor, i.e. one distribution of its state set.
    StateLabel
);
string_id!(
    /// Identifies a subsystem: a component, a module or a product.
    SubsystemId
);

/// Prefix of the synthetic one-sensor components used to hypothesize a
/// faulty sensor during diagnosis.
pub const SENSOR_FAULT_PREFIX: &str = "sensor-fault:";

impl SubsystemId {
    /// The synthetic component standing for a fault of `sensor` itself.
    pub fn sensor_fault(sensor: &SensorId) -> Self {
        Self(format!("{SENSOR_FAULT_PREFIX}{sensor}"))
    }

    /// The sensor a synthetic sensor-fault component refers to.
    pub fn faulted_sensor(&self) -> Option<SensorId> {
        self.0.strip_prefix(SENSOR_FAULT_PREFIX).map(SensorId::from)
    }
}

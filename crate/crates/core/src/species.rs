use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four object classes, in the fixed order used by every score vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Species {
    Kite,
    Bird,
    Aircraft,
    Other,
}

pub const NUM_CLASSES: usize = 4;

impl Species {
    pub const ALL: [Species; NUM_CLASSES] =
        [Species::Kite, Species::Bird, Species::Aircraft, Species::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Species {
        Self::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::Kite => "Kite",
            Species::Bird => "Bird",
            Species::Aircraft => "Aircraft",
            Species::Other => "Other",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Species {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Species::ALL
            .into_iter()
            .find(|sp| sp.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown species '{s}'"))
    }
}

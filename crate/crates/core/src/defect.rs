use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The four seeded defect types, in longitudinal zone order.
///
/// The discriminant doubles as the classifier label (0..=3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectClass {
    ShallowDelam,
    Honeycomb,
    Void,
    DeepDelam,
}

impl DefectClass {
    pub const ALL: [DefectClass; 4] = [
        DefectClass::ShallowDelam,
        DefectClass::Honeycomb,
        DefectClass::Void,
        DefectClass::DeepDelam,
    ];

    pub const COUNT: usize = 4;

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    /// Short table code (D1..D4).
    pub fn code(self) -> &'static str {
        match self {
            DefectClass::ShallowDelam => "D1",
            DefectClass::Honeycomb => "D2",
            DefectClass::Void => "D3",
            DefectClass::DeepDelam => "D4",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DefectClass::ShallowDelam => "Shallow Delamination",
            DefectClass::Honeycomb => "Honeycombing",
            DefectClass::Void => "Void",
            DefectClass::DeepDelam => "Deep Delamination",
        }
    }

    fn key(self) -> &'static str {
        match self {
            DefectClass::ShallowDelam => "shallow_delam",
            DefectClass::Honeycomb => "honeycomb",
            DefectClass::Void => "void",
            DefectClass::DeepDelam => "deep_delam",
        }
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DefectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DefectClass::ALL
            .into_iter()
            .find(|c| c.key() == s || c.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::parse("defect class", format!("unknown class `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for c in DefectClass::ALL {
            assert_eq!(DefectClass::from_label(c.label()), Some(c));
            assert_eq!(c.to_string().parse::<DefectClass>().unwrap(), c);
        }
        assert_eq!(DefectClass::from_label(4), None);
        assert_eq!("d3".parse::<DefectClass>().unwrap(), DefectClass::Void);
    }
}

//! Joint classes, per-limb joint layouts, and joint naming.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LimbType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointClass {
    Pip,
    Mcp,
    Mtp,
}

impl JointClass {
    pub fn name(self) -> &'static str {
        match self {
            JointClass::Pip => "PIP",
            JointClass::Mcp => "MCP",
            JointClass::Mtp => "MTP",
        }
    }

    /// Detector class index within a limb type: PIP is 0, MCP/MTP is 1.
    pub fn index(self) -> usize {
        match self {
            JointClass::Pip => 0,
            JointClass::Mcp | JointClass::Mtp => 1,
        }
    }

    pub fn from_index(limb: LimbType, index: usize) -> JointClass {
        match (index, limb) {
            (0, _) => JointClass::Pip,
            (_, LimbType::Hand) => JointClass::Mcp,
            (_, LimbType::Foot) => JointClass::Mtp,
        }
    }
}

impl fmt::Display for JointClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JointClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PIP" => Ok(JointClass::Pip),
            "MCP" => Ok(JointClass::Mcp),
            "MTP" => Ok(JointClass::Mtp),
            _ => Err(Error::InvalidArgument(format!("unknown joint class `{s}`"))),
        }
    }
}

/// Expected joints per class: hands {MCP: 5, PIP: 5}, feet {MTP: 5, PIP: 1}.
pub fn layout(limb: LimbType) -> [(JointClass, usize); 2] {
    match limb {
        LimbType::Hand => [(JointClass::Mcp, 5), (JointClass::Pip, 5)],
        LimbType::Foot => [(JointClass::Mtp, 5), (JointClass::Pip, 1)],
    }
}

/// Number of scored joints: 10 for hands, 6 for feet.
pub fn joint_count(limb: LimbType) -> usize {
    layout(limb).iter().map(|&(_, n)| n).sum()
}

/// A joint position within a limb; digit 1 is the thumb or great toe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointId {
    pub class: JointClass,
    pub digit: u8,
}

impl JointId {
    pub fn new(class: JointClass, digit: u8) -> Self {
        JointId { class, digit }
    }

    /// Lower-case column stem such as `mcp1` or `pip5`.
    pub fn name(&self) -> String {
        format!("{}{}", self.class.name().to_ascii_lowercase(), self.digit)
    }

    pub fn parse(s: &str) -> Result<JointId> {
        let s = s.trim();
        if s.len() < 4 || !s.is_char_boundary(3) {
            return Err(Error::InvalidArgument(format!("bad joint name `{s}`")));
        }
        let class: JointClass = s[..3].parse()?;
        let digit: u8 = s[3..]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad joint digit in `{s}`")))?;
        if !(1..=5).contains(&digit) {
            return Err(Error::InvalidArgument(format!("joint digit out of range in `{s}`")));
        }
        Ok(JointId { class, digit })
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Scored joints of a limb type in canonical order (MCP/MTP digits 1-5, then PIP).
pub fn joints(limb: LimbType) -> Vec<JointId> {
    match limb {
        LimbType::Hand => (1..=5)
            .map(|d| JointId::new(JointClass::Mcp, d))
            .chain((1..=5).map(|d| JointId::new(JointClass::Pip, d)))
            .collect(),
        LimbType::Foot => (1..=5)
            .map(|d| JointId::new(JointClass::Mtp, d))
            .chain(std::iter::once(JointId::new(JointClass::Pip, 1)))
            .collect(),
    }
}

/// Union of hand and foot joint names in CSV column order.
pub fn all_joint_names() -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for class in ["mcp", "pip", "mtp"] {
        for d in 1..=5 {
            names.push(format!("{class}{d}"));
        }
    }
    names
}

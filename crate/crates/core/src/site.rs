use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which linear projection of the host an adapter plugs into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
    LmHead,
}

impl SiteKind {
    pub const LAYER_KINDS: [SiteKind; 7] = [
        SiteKind::Q,
        SiteKind::K,
        SiteKind::V,
        SiteKind::O,
        SiteKind::Gate,
        SiteKind::Up,
        SiteKind::Down,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::Q => "q",
            SiteKind::K => "k",
            SiteKind::V => "v",
            SiteKind::O => "o",
            SiteKind::Gate => "gate",
            SiteKind::Up => "up",
            SiteKind::Down => "down",
            SiteKind::LmHead => "lm_head",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<SiteKind> {
        [SiteKind::LAYER_KINDS.as_slice(), &[SiteKind::LmHead]]
            .concat()
            .into_iter()
            .find(|k| k.code() == code)
    }
}

impl FromStr for SiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "q" => SiteKind::Q,
            "k" => SiteKind::K,
            "v" => SiteKind::V,
            "o" => SiteKind::O,
            "gate" => SiteKind::Gate,
            "up" => SiteKind::Up,
            "down" => SiteKind::Down,
            "lm_head" => SiteKind::LmHead,
            other => return Err(Error::UnknownSite(other.to_string())),
        })
    }
}

/// A specific frozen projection: `(layer, kind)`. The LM head uses `layer == n_layers`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttachmentSite {
    pub layer: usize,
    pub kind: SiteKind,
}

impl AttachmentSite {
    pub fn new(layer: usize, kind: SiteKind) -> Self {
        Self { layer, kind }
    }

    pub fn lm_head(n_layers: usize) -> Self {
        Self {
            layer: n_layers,
            kind: SiteKind::LmHead,
        }
    }
}

impl fmt::Display for AttachmentSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SiteKind::LmHead => f.write_str("lm_head"),
            k => write!(f, "layer{}.{}", self.layer, k.as_str()),
        }
    }
}

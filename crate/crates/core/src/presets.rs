//! Network descriptions bundled with the library.

use crate::ir::NetworkGraph;
use crate::prototxt::{self, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub prototxt: &'static str,
}

impl Preset {
    pub fn graph(&self) -> Result<NetworkGraph, ParseError> {
        prototxt::parse(self.prototxt)
    }
}

pub const ZYNQNET: Preset = Preset {
    name: "zynqnet",
    description: "ZynqNet CNN: 3x256x256 input, eight fire modules, split conv10, 1024 classes",
    prototxt: include_str!("../presets/zynqnet.prototxt"),
};

pub const TINY_FIRE: Preset = Preset {
    name: "tiny_fire",
    description: "One fire module on a 3x32x32 input; runs on the accelerator model",
    prototxt: include_str!("../presets/tiny_fire.prototxt"),
};

pub const LENET: Preset = Preset {
    name: "lenet",
    description: "LeNet-style net with max pooling and fully connected layers (reference engine only)",
    prototxt: include_str!("../presets/lenet.prototxt"),
};

pub const ALL: [Preset; 3] = [ZYNQNET, TINY_FIRE, LENET];

pub fn find(name: &str) -> Option<Preset> {
    ALL.iter().copied().find(|p| p.name == name)
}

/// Parsed ZynqNet topology.
pub fn zynqnet() -> NetworkGraph {
    ZYNQNET.graph().expect("bundled ZynqNet prototxt parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse_and_validate_clean() {
        for p in ALL {
            let g = p.graph().unwrap_or_else(|e| panic!("{}: {e}", p.name));
            let errors: Vec<_> = g.validate().into_iter().filter(|d| d.severity == crate::ir::Severity::Error).collect();
            assert!(errors.is_empty(), "{}: {errors:?}", p.name);
        }
    }

    #[test]
    fn zynqnet_has_65_layers() {
        assert_eq!(zynqnet().layers.len(), 65);
        assert_eq!(find("lenet").map(|p| p.name), Some("lenet"));
        assert!(find("alexnet").is_none());
    }
}

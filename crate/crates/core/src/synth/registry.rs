//! The fixed registry of the fifteen tactile surface properties.

use serde::{Deserialize, Serialize};

/// Number of tactile properties; every tactile vector has this many entries.
pub const NUM_PROPERTIES: usize = 15;

/// Property category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Friction,
    Texture,
    Thermal,
    Compliance,
    Adhesion,
}

/// One registered tactile property.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyEntry {
    pub acronym: &'static str,
    pub full_name: &'static str,
    pub category: Category,
    pub description: &'static str,
}

/// Ordered registry of the fifteen properties. The order is fixed and used
/// everywhere a tactile vector is indexed.
#[derive(Debug, Clone)]
pub struct PropertyRegistry {
    entries: &'static [PropertyEntry; NUM_PROPERTIES],
}

// Positional indices into tactile vectors, for readability at call sites.
pub const IDX_FRS: usize = 0;
pub const IDX_FST: usize = 1;
pub const IDX_UCO: usize = 2;
pub const IDX_URO: usize = 3;
pub const IDX_MRG: usize = 4;
pub const IDX_MCO: usize = 5;
pub const IDX_MTX: usize = 6;
pub const IDX_TCO: usize = 7;
pub const IDX_TPR: usize = 8;
pub const IDX_CCM: usize = 9;
pub const IDX_CDF: usize = 10;
pub const IDX_CDP: usize = 11;
pub const IDX_CRX: usize = 12;
pub const IDX_CYD: usize = 13;
pub const IDX_ATK: usize = 14;

static ENTRIES: [PropertyEntry; NUM_PROPERTIES] = [
    PropertyEntry {
        acronym: "fRS",
        full_name: "Sliding Resistance",
        category: Category::Friction,
        description: "Effort needed to start sliding across the surface, from low grip to high grip.",
    },
    PropertyEntry {
        acronym: "fST",
        full_name: "Tactile Stiction",
        category: Category::Friction,
        description: "Effort needed to keep sliding over the surface, from slippery to resistive.",
    },
    PropertyEntry {
        acronym: "uCO",
        full_name: "Microtexture Coarseness",
        category: Category::Texture,
        description: "Spacing of sub-millimeter surface features, from fine to coarse.",
    },
    PropertyEntry {
        acronym: "uRO",
        full_name: "Microtexture Roughness",
        category: Category::Texture,
        description: "Strength of sub-millimeter features felt as roughness, from smooth to rough.",
    },
    PropertyEntry {
        acronym: "mRG",
        full_name: "Macrotexture Regularity",
        category: Category::Texture,
        description: "Uniformity of features larger than a millimeter, from random to regular.",
    },
    PropertyEntry {
        acronym: "mCO",
        full_name: "Macrotexture Coarseness",
        category: Category::Texture,
        description: "Spacing of features larger than a millimeter, from fine to coarse.",
    },
    PropertyEntry {
        acronym: "mTX",
        full_name: "Macrotexture",
        category: Category::Texture,
        description: "Strength of features larger than a millimeter felt as texture, from smooth to textured.",
    },
    PropertyEntry {
        acronym: "tCO",
        full_name: "Thermal Cooling",
        category: Category::Thermal,
        description: "Initial rate at which the surface draws heat from the fingertip, from warm to cool.",
    },
    PropertyEntry {
        acronym: "tPR",
        full_name: "Thermal Persistence",
        category: Category::Thermal,
        description: "How long the surface keeps drawing heat from the fingertip, from transient to sustained cooling.",
    },
    PropertyEntry {
        acronym: "cCM",
        full_name: "Tactile Compliance",
        category: Category::Compliance,
        description: "How much the surface deforms under pressure, from rigid to compliant.",
    },
    PropertyEntry {
        acronym: "cDF",
        full_name: "Local Deformation",
        category: Category::Compliance,
        description: "How much the surface wraps around the fingertip when pressed, from flat to high wrap.",
    },
    PropertyEntry {
        acronym: "cDP",
        full_name: "Damping",
        category: Category::Compliance,
        description: "How quickly the surface returns to shape after being deformed, from springy to damped.",
    },
    PropertyEntry {
        acronym: "cRX",
        full_name: "Relaxation",
        category: Category::Compliance,
        description: "How much the surface stops pushing back while held deformed, from maintaining force to relaxing.",
    },
    PropertyEntry {
        acronym: "cYD",
        full_name: "Yielding",
        category: Category::Compliance,
        description: "How much the surface stays deformed after being pressed, from recovering to remaining deformed.",
    },
    PropertyEntry {
        acronym: "aTK",
        full_name: "Adhesive Tack",
        category: Category::Adhesion,
        description: "Effort needed to break contact with the surface, from no adhesion to sticky.",
    },
];

impl PropertyRegistry {
    pub fn standard() -> Self {
        PropertyRegistry { entries: &ENTRIES }
    }

    pub fn entries(&self) -> &[PropertyEntry; NUM_PROPERTIES] {
        self.entries
    }

    pub fn acronyms(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.acronym.to_string()).collect()
    }

    pub fn index_of(&self, acronym: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.acronym == acronym)
    }

    pub fn entry(&self, index: usize) -> &PropertyEntry {
        &self.entries[index]
    }
}

//! Scenarios shipped with the binary.

pub struct Bundled {
    pub name: &'static str,
    /// Acceptance criterion the scenario reproduces.
    pub criterion: u8,
    pub text: &'static str,
}

macro_rules! bundled {
    ($($name:literal => $criterion:literal),* $(,)?) => {
        &[$(Bundled { name: $name, criterion: $criterion, text: include_str!(concat!("../scenarios/", $name, ".toml")) }),*]
    };
}

pub const SCENARIOS: &[Bundled] = bundled![
    "linear-gaussian-mart" => 2,
    "singular-rate" => 4,
    "brownian-ito" => 3,
    "diagnose-rough" => 6,
    "diagnose-brownian" => 6,
    "bsde-gaussian" => 7,
    "bsde-discounted-bs" => 7,
    "heston-transforms" => 8,
    "heston-bs-oracle" => 9,
    "heston-mixing" => 9,
    "heston-hedge" => 10,
    "bergomi-simulate" => 11,
    "bergomi-bs-oracle" => 11,
    "rough-simulate" => 12,
];

pub fn find(name: &str) -> Option<&'static Bundled> {
    SCENARIOS.iter().find(|s| s.name == name)
}

/// Scenarios whose name or description contains `filter` (case-insensitive).
pub fn matching(filter: Option<&str>) -> Vec<&'static Bundled> {
    let f = filter.map(str::to_lowercase);
    SCENARIOS
        .iter()
        .filter(|s| f.as_deref().map_or(true, |f| s.name.contains(f) || s.description().to_lowercase().contains(f)))
        .collect()
}

impl Bundled {
    pub fn description(&self) -> String {
        toml::from_str::<toml::Table>(self.text)
            .ok()
            .and_then(|t| t.get("description").and_then(|d| d.as_str()).map(str::to_string))
            .unwrap_or_default()
    }

    pub fn command(&self) -> String {
        toml::from_str::<toml::Table>(self.text)
            .ok()
            .and_then(|t| t.get("command").and_then(|d| d.as_str()).map(str::to_string))
            .unwrap_or_default()
    }
}

//! JSON fixture specifications.
//!
//! ```json
//! {
//!   "kind": "guidance",
//!   "regions": { "1": { "role": "obstacle" }, "2": { "role": "target" } },
//!   "k": 12,
//!   "t_d": 0.0004,
//!   "tolerance": 1e-9,
//!   "seed": 7
//! }
//! ```
//!
//! Unknown keys are rejected with their location. The schema is in
//! `docs/spec.schema.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fixtures::{FixtureKind, FixtureParams, FixtureSpec, Role};
use crate::segmentation::RegionId;

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleName {
    Free,
    Value,
    Obstacle,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionEntry {
    pub role: RoleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub kind: FixtureKind,
    /// Region id (decimal string) to role.
    pub regions: BTreeMap<String, RegionEntry>,
    /// Neighbors per point.
    pub k: usize,
    /// Kernel bandwidth in m²; `h²` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Diffusion time in m²; `h²` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_d: Option<f64>,
    pub tolerance: f64,
    /// Seed for random agent starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::InvalidSpec {
        location: location.into(),
        message: message.into(),
    }
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let location = e.path().to_string();
            invalid(location, e.into_inner().to_string())
        })
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Open {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec files always serialize")
    }

    /// Converts to a [`FixtureSpec`], rejecting region ids that do not occur
    /// in `labels` and inconsistent role entries.
    pub fn to_fixture_spec(&self, labels: &[RegionId]) -> Result<FixtureSpec, IoError> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-3) {
            return Err(invalid("tolerance", "must lie in (0, 1e-3]"));
        }
        for (key, v) in [("epsilon", self.epsilon), ("t_d", self.t_d)] {
            if v.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                return Err(invalid(key, "must be positive and finite"));
            }
        }
        let present: std::collections::BTreeSet<RegionId> = labels.iter().copied().collect();
        let mut roles = BTreeMap::new();
        for (key, entry) in &self.regions {
            let location = format!("regions.{key}");
            let id: RegionId = key
                .parse()
                .map_err(|_| invalid(&location, "region ids must be non-negative integers"))?;
            if !present.contains(&id) {
                return Err(invalid(&location, format!("region {id} does not occur in the cloud labels")));
            }
            let role = match (entry.role, entry.value) {
                (RoleName::Value, Some(v)) if v.is_finite() => Role::Value(v),
                (RoleName::Value, Some(_)) => return Err(invalid(location + ".value", "must be finite")),
                (RoleName::Value, None) => return Err(invalid(location, "role 'value' needs a 'value'")),
                (_, Some(_)) => return Err(invalid(location + ".value", "only role 'value' takes a value")),
                (RoleName::Free, None) => Role::Free,
                (RoleName::Obstacle, None) => Role::Obstacle,
                (RoleName::Target, None) => Role::Target,
            };
            roles.insert(id, role);
        }
        Ok(FixtureSpec {
            kind: self.kind,
            region_roles: roles,
            params: FixtureParams {
                diffusion_time: self.t_d,
                bandwidth: self.epsilon,
                tolerance: self.tolerance,
                ..FixtureParams::default()
            },
        })
    }
}

use serde::{Deserialize, Serialize};

use super::TaskSpec;
use crate::catalog::{Catalog, GenericId};
use crate::error::Result;
use crate::identifier::GenericLocator;

fn default_timeout() -> f64 {
    60.0
}

/// Task declaration as written by users: signals are named by alias,
/// `name.source` or numeric id rather than by catalog id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub name: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

impl TaskManifest {
    pub fn from_json(text: &str) -> Result<TaskManifest> {
        serde_json::from_str(text).map_err(|e| crate::Error::InvalidTask(e.to_string()))
    }

    /// Looks every signal up in the catalog.
    pub fn resolve(&self, catalog: &Catalog) -> Result<TaskSpec> {
        let ids = |names: &[String]| -> Result<Vec<GenericId>> {
            names
                .iter()
                .map(|n| Ok(catalog.resolve_generic(&GenericLocator::parse(n)?)?.id))
                .collect()
        };
        Ok(
            TaskSpec::new(self.name.clone(), ids(&self.inputs)?, ids(&self.outputs)?)
                .command(self.command.clone())
                .timeout_s(self.timeout_s),
        )
    }
}

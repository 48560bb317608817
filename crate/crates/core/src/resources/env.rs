use super::ResourceError;
use crate::space::ResourceType;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDecl {
    #[serde(rename = "type")]
    pub rtype: ResourceType,
    pub locator: String,
}

/// Commands used to reach `node` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    /// Invoked as `<shell> <host> <script> <remote-config-path>`.
    pub shell: String,
    /// Invoked as `<copy> <local-path> <host>:<remote-config-path>`.
    pub copy: String,
    pub remote_dir: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self { shell: "ssh".into(), copy: "scp".into(), remote_dir: "/tmp".into() }
    }
}

/// The environment file: resources, database location and job workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub resources: Vec<ResourceDecl>,
    pub database: PathBuf,
    pub workdir: PathBuf,
    #[serde(default)]
    pub remote: RemoteConfig,
}

impl EnvConfig {
    pub fn new(resources: Vec<ResourceDecl>, database: impl Into<PathBuf>, workdir: impl Into<PathBuf>) -> Self {
        Self { resources, database: database.into(), workdir: workdir.into(), remote: RemoteConfig::default() }
    }

    /// `n` local cpu slots with locators `"0".."n-1"`.
    pub fn local_cpus(n: usize, database: impl Into<PathBuf>, workdir: impl Into<PathBuf>) -> Self {
        let resources = (0..n).map(|i| ResourceDecl { rtype: ResourceType::Cpu, locator: i.to_string() }).collect();
        Self::new(resources, database, workdir)
    }

    pub fn parse(text: &str) -> Result<Self, ResourceError> {
        let env: EnvConfig = serde_json::from_str(text).map_err(|e| ResourceError::EnvFile(e.to_string()))?;
        env.validate()?;
        Ok(env)
    }

    pub fn load(path: &Path) -> Result<Self, ResourceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ResourceError::EnvFile(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("env serializes")
    }

    fn validate(&self) -> Result<(), ResourceError> {
        for r in &self.resources {
            if r.locator.trim().is_empty() {
                return Err(ResourceError::EnvFile(format!("{} resource with empty locator", r.rtype)));
            }
            if r.rtype == ResourceType::Gpu && r.locator.parse::<u32>().is_err() {
                return Err(ResourceError::EnvFile(format!("gpu locator `{}` is not a device index", r.locator)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.resources.iter().find(|r| !seen.insert((r.rtype, r.locator.as_str()))) {
            return Err(ResourceError::EnvFile(format!("duplicate {} resource `{}`", dup.rtype, dup.locator)));
        }
        Ok(())
    }
}

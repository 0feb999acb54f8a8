//! Optional key=value config file. Flags always win; the file only fills
//! values the operator did not pass.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {} is not key=value", idx + 1))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag value if set, else the config-file value, else the default.
    pub fn resolve<T: Clone + std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> anyhow::Result<T> {
        if let Some(value) = flag {
            return Ok(value);
        }
        match self.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("config key {key}: cannot parse {raw:?}")),
            None => Ok(default),
        }
    }
}

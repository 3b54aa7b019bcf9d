//! Challenge manifests.
//!
//! Each challenge lives in its own directory with a `challenge.json`:
//!
//! ```json
//! {
//!   "name": "xor-warmup", "category": "crypto", "points": 50,
//!   "flag": "csawctf{...}", "flag_format": "csawctf{...}",
//!   "description": "...", "files": ["cipher.txt"],
//!   "server": {"host": "crypto.chal.csaw.io", "port": 21210}
//! }
//! ```
//!
//! File paths are relative to the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONTAINER_HOME: &str = "/home/ctfplayer";

#[derive(Debug, Error)]
pub enum ChallengeError {
    #[error("cannot read challenge manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid challenge manifest {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Crypto,
    Forensics,
    Pwn,
    Rev,
    Web,
    Misc,
}

impl Category {
    /// Report column order.
    pub const ALL: [Category; 6] = [
        Category::Crypto,
        Category::Forensics,
        Category::Pwn,
        Category::Rev,
        Category::Web,
        Category::Misc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Crypto => "crypto",
            Category::Forensics => "forensics",
            Category::Pwn => "pwn",
            Category::Rev => "rev",
            Category::Web => "web",
            Category::Misc => "misc",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Server {
    pub host: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeSpec {
    pub name: String,
    pub category: Category,
    pub points: u32,
    /// The true flag. Never shown to agents.
    pub flag: String,
    pub flag_format: String,
    pub description: String,
    #[serde(default)]
    pub files: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<Server>,
    #[serde(default = "default_home")]
    pub container_home: String,
    /// Container image for the container driver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

fn default_home() -> String {
    DEFAULT_CONTAINER_HOME.to_string()
}

impl ChallengeSpec {
    /// Stable identifier used in benchmark records.
    pub fn id(&self) -> &str {
        &self.name
    }

    /// File names as the agent sees them.
    pub fn file_names(&self) -> Vec<String> {
        self.files
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            })
            .collect()
    }

    /// Loads `path` and resolves file entries against its directory.
    pub fn load(path: &Path) -> Result<Self, ChallengeError> {
        let text = std::fs::read_to_string(path).map_err(|source| ChallengeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let invalid = |reason: String| ChallengeError::Invalid {
            path: path.to_path_buf(),
            reason,
        };
        let mut spec: ChallengeSpec = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        if spec.flag_format.trim().is_empty() {
            return Err(invalid("flag_format is empty".into()));
        }
        if spec.name.trim().is_empty() {
            return Err(invalid("name is empty".into()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        spec.files = spec.files.iter().map(|f| base.join(f)).collect();
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_resolves_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("challenge.json");
        std::fs::write(
            &path,
            r#"{"name":"x","category":"crypto","points":50,"flag":"f{1}","flag_format":"f{...}","description":"d","files":["a.txt"]}"#,
        )
        .unwrap();
        let spec = ChallengeSpec::load(&path).unwrap();
        assert_eq!(spec.files[0], dir.path().join("a.txt"));
        assert_eq!(spec.container_home, DEFAULT_CONTAINER_HOME);
        assert_eq!(spec.file_names(), vec!["a.txt"]);
    }

    #[test]
    fn rejects_empty_flag_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("challenge.json");
        std::fs::write(
            &path,
            r#"{"name":"x","category":"web","points":1,"flag":"f","flag_format":" ","description":""}"#,
        )
        .unwrap();
        assert!(matches!(ChallengeSpec::load(&path), Err(ChallengeError::Invalid { .. })));
    }

    #[test]
    fn category_parse() {
        assert_eq!("Rev".parse::<Category>().unwrap(), Category::Rev);
        assert!("hardware".parse::<Category>().is_err());
    }
}

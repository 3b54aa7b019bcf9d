//! Challenge sandboxes.
//!
//! A [`Sandbox`] stages challenge files under `<home>/ctf_files` and runs
//! shell commands with a per-command time limit and output cap. Two drivers
//! share one contract: `local_process` runs on the host inside a scratch
//! directory (no isolation; tests and CI), `container` runs inside a
//! long-lived container started from a pinned image.

mod analysis;
mod exec;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::challenge::ChallengeSpec;

pub use analysis::{Analyzer, CommandAnalyzer, StubAnalyzer};
pub use exec::{run_captured, CommandResult, ProcessRegistry};

pub const DEFAULT_OUTPUT_CAP: usize = 64 * 1024;
pub const DEFAULT_COMMAND_TIMEOUT_SECS: u64 = 120;
pub const DEFAULT_IMAGE: &str = "ctfenv/ctfplayer:2024.09";
pub const UNSAFE_MODE_WARNING: &str =
    "WARNING: unsafe mode. The local_process driver runs agent commands directly on the host without isolation.";

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("challenge file {path} cannot be staged: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("required tools missing from the sandbox: {}", .0.join(", "))]
    MissingTools(Vec<String>),
    #[error("sandbox I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("container runtime failed: {0}")]
    Runtime(String),
    #[error("sandbox already torn down")]
    TornDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    #[default]
    LocalProcess,
    Container,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub driver: DriverKind,
    pub command_timeout_secs: u64,
    pub output_cap: usize,
    /// Image for the container driver when the challenge names none.
    pub image: String,
    /// Container runtime binary.
    pub runtime: String,
    /// Tools that must resolve on `PATH` inside the sandbox.
    pub required_tools: Vec<String>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            driver: DriverKind::LocalProcess,
            command_timeout_secs: DEFAULT_COMMAND_TIMEOUT_SECS,
            output_cap: DEFAULT_OUTPUT_CAP,
            image: DEFAULT_IMAGE.to_string(),
            runtime: "docker".to_string(),
            required_tools: Vec::new(),
        }
    }
}

impl SandboxConfig {
    pub fn command_timeout(&self) -> Duration {
        Duration::from_secs(self.command_timeout_secs)
    }
}

#[derive(Debug)]
enum Driver {
    Local { scratch: tempfile::TempDir },
    Container { runtime: String, name: String },
}

#[derive(Debug)]
pub struct Sandbox {
    id: String,
    /// Agent-visible home directory.
    home: String,
    /// Where `home` lives on the host (local driver only).
    host_dir: Option<PathBuf>,
    staged: Vec<String>,
    timeout: Duration,
    output_cap: usize,
    driver: Option<Driver>,
    registry: ProcessRegistry,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn sandbox_id(spec: &ChallengeSpec) -> String {
    let slug: String = spec
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    format!("kbagent-{slug}-{}-{}", std::process::id(), NEXT_ID.fetch_add(1, Ordering::SeqCst))
}

/// Creates a sandbox for `spec` and stages its files.
pub fn provision(spec: &ChallengeSpec, cfg: &SandboxConfig) -> Result<Sandbox, EnvError> {
    for f in &spec.files {
        fs::metadata(f).map_err(|source| EnvError::MissingFile {
            path: f.clone(),
            source,
        })?;
    }
    let id = sandbox_id(spec);
    let mut sandbox = match cfg.driver {
        DriverKind::LocalProcess => {
            let scratch = tempfile::Builder::new().prefix(&format!("{id}-")).tempdir()?;
            let files_dir = scratch.path().join("ctf_files");
            fs::create_dir_all(&files_dir)?;
            let mut staged = Vec::new();
            for f in &spec.files {
                let name = f.file_name().ok_or_else(|| EnvError::MissingFile {
                    path: f.clone(),
                    source: io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"),
                })?;
                fs::copy(f, files_dir.join(name)).map_err(|source| EnvError::MissingFile {
                    path: f.clone(),
                    source,
                })?;
                staged.push(format!("{}/ctf_files/{}", spec.container_home, name.to_string_lossy()));
            }
            tracing::warn!(sandbox = %id, "{UNSAFE_MODE_WARNING}");
            Sandbox {
                id,
                home: spec.container_home.clone(),
                host_dir: Some(scratch.path().to_path_buf()),
                staged,
                timeout: cfg.command_timeout(),
                output_cap: cfg.output_cap,
                driver: Some(Driver::Local { scratch }),
                registry: ProcessRegistry::default(),
            }
        }
        DriverKind::Container => provision_container(spec, cfg, id)?,
    };
    if !cfg.required_tools.is_empty() {
        let missing = sandbox.missing_tools(&cfg.required_tools)?;
        if !missing.is_empty() {
            sandbox.teardown();
            return Err(EnvError::MissingTools(missing));
        }
    }
    Ok(sandbox)
}

fn runtime_call(runtime: &str, args: &[&str]) -> Result<String, EnvError> {
    let out = Command::new(runtime)
        .args(args)
        .output()
        .map_err(|e| EnvError::Runtime(format!("cannot run `{runtime}`: {e}")))?;
    if !out.status.success() {
        return Err(EnvError::Runtime(format!(
            "`{runtime} {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn provision_container(spec: &ChallengeSpec, cfg: &SandboxConfig, id: String) -> Result<Sandbox, EnvError> {
    let image = spec.image.clone().unwrap_or_else(|| cfg.image.clone());
    let home = spec.container_home.clone();
    runtime_call(
        &cfg.runtime,
        &["run", "-d", "--rm", "--name", &id, "-w", &home, &image, "sleep", "infinity"],
    )?;
    let mut sandbox = Sandbox {
        id: id.clone(),
        home: home.clone(),
        host_dir: None,
        staged: Vec::new(),
        timeout: cfg.command_timeout(),
        output_cap: cfg.output_cap,
        driver: Some(Driver::Container {
            runtime: cfg.runtime.clone(),
            name: id.clone(),
        }),
        registry: ProcessRegistry::default(),
    };
    let files_dir = format!("{home}/ctf_files");
    let staged = (|| {
        runtime_call(&cfg.runtime, &["exec", &id, "mkdir", "-p", &files_dir])?;
        let mut staged = Vec::new();
        for f in &spec.files {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let target = format!("{id}:{files_dir}/{name}");
            runtime_call(&cfg.runtime, &["cp", &f.to_string_lossy(), &target])?;
            staged.push(format!("{files_dir}/{name}"));
        }
        Ok::<_, EnvError>(staged)
    })();
    match staged {
        Ok(s) => {
            sandbox.staged = s;
            Ok(sandbox)
        }
        Err(e) => {
            sandbox.teardown();
            Err(e)
        }
    }
}

impl Sandbox {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn home(&self) -> &str {
        &self.home
    }

    pub fn driver(&self) -> Option<DriverKind> {
        match self.driver {
            Some(Driver::Local { .. }) => Some(DriverKind::LocalProcess),
            Some(Driver::Container { .. }) => Some(DriverKind::Container),
            None => None,
        }
    }

    /// Agent-visible paths of the staged challenge files.
    pub fn staged_files(&self) -> &[String] {
        &self.staged
    }

    /// Host directory backing the home (local driver).
    pub fn host_dir(&self) -> Option<&Path> {
        self.host_dir.as_deref()
    }

    /// Notes that belong at the top of every transcript for this sandbox.
    pub fn warnings(&self) -> Vec<String> {
        match self.driver {
            Some(Driver::Local { .. }) => vec![UNSAFE_MODE_WARNING.to_string()],
            _ => Vec::new(),
        }
    }

    pub fn exec(&self, cmd: &str) -> Result<CommandResult, EnvError> {
        self.exec_with_timeout(cmd, self.timeout)
    }

    /// Runs `cmd` with `sh -c`. Timeouts and non-zero exits are results, not errors.
    ///
    /// Under the local driver the agent-visible home path is mapped to the
    /// scratch directory in the command and back again in the output.
    pub fn exec_with_timeout(&self, cmd: &str, timeout: Duration) -> Result<CommandResult, EnvError> {
        match self.driver.as_ref().ok_or(EnvError::TornDown)? {
            Driver::Local { scratch } => {
                let host = scratch.path().to_string_lossy().into_owned();
                let mut c = Command::new("sh");
                c.arg("-c")
                    .arg(cmd.replace(&self.home, &host))
                    .current_dir(scratch.path())
                    .env("HOME", scratch.path());
                let mut r = run_captured(c, timeout, self.output_cap, &self.registry)?;
                r.stdout = r.stdout.replace(&host, &self.home);
                r.stderr = r.stderr.replace(&host, &self.home);
                Ok(r)
            }
            Driver::Container { runtime, name } => {
                let secs = timeout.as_secs().max(1).to_string();
                let mut c = Command::new(runtime);
                c.args(["exec", "-w", &self.home, name, "timeout", "-s", "KILL", &secs, "sh", "-c", cmd]);
                let mut r = run_captured(c, timeout + Duration::from_secs(5), self.output_cap, &self.registry)?;
                if r.exit_code == Some(137) && r.duration_ms >= timeout.as_millis() as u64 {
                    r.timed_out = true;
                    r.exit_code = None;
                }
                Ok(r)
            }
        }
    }

    fn missing_tools(&self, tools: &[String]) -> Result<Vec<String>, EnvError> {
        let mut missing = Vec::new();
        for t in tools {
            let probe = format!("command -v '{}' >/dev/null 2>&1", t.replace('\'', ""));
            if !self.exec_with_timeout(&probe, Duration::from_secs(10))?.success() {
                missing.push(t.clone());
            }
        }
        Ok(missing)
    }

    /// Process groups started by this sandbox that are still alive.
    pub fn live_processes(&self) -> usize {
        self.registry.live()
    }

    pub fn is_torn_down(&self) -> bool {
        self.driver.is_none()
    }

    /// Kills leftover processes and removes the workspace. Idempotent.
    pub fn teardown(&mut self) {
        self.registry.kill_all();
        match self.driver.take() {
            Some(Driver::Local { scratch }) => {
                if let Err(e) = scratch.close() {
                    tracing::warn!(sandbox = %self.id, error = %e, "scratch directory cleanup failed");
                }
            }
            Some(Driver::Container { runtime, name }) => {
                if let Err(e) = runtime_call(&runtime, &["rm", "-f", &name]) {
                    tracing::warn!(sandbox = %self.id, error = %e, "container removal failed");
                }
            }
            None => {}
        }
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        self.teardown();
    }
}

/// A format such as `csawctf{...}` accepts `csawctf{` + non-empty body + `}`.
/// Formats without braces cannot be checked; any non-blank candidate passes.
pub fn validate_flag_format(candidate: &str, flag_format: &str) -> bool {
    let candidate = candidate.trim();
    if candidate.is_empty() {
        return false;
    }
    let Some(open) = flag_format.find('{') else {
        return true;
    };
    let prefix = &flag_format[..=open];
    candidate.len() > prefix.len() + 1 && candidate.starts_with(prefix) && candidate.ends_with('}')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::challenge::Category;

    fn spec(files: Vec<PathBuf>) -> ChallengeSpec {
        ChallengeSpec {
            name: "t".into(),
            category: Category::Misc,
            points: 1,
            flag: "f{x}".into(),
            flag_format: "f{...}".into(),
            description: String::new(),
            files,
            server: None,
            container_home: "/home/ctfplayer".into(),
            image: None,
        }
    }

    #[test]
    fn flag_format_rule() {
        assert!(validate_flag_format("csawctf{x}", "csawctf{...}"));
        assert!(!validate_flag_format("flag{x}", "csawctf{...}"));
        assert!(!validate_flag_format("", "csawctf{...}"));
        assert!(!validate_flag_format("csawctf{}", "csawctf{...}"));
        assert!(validate_flag_format("anything", "no braces here"));
    }

    #[test]
    fn stages_files_and_maps_home() {
        let src = tempfile::tempdir().unwrap();
        let a = src.path().join("a.txt");
        let b = src.path().join("b.bin");
        fs::write(&a, "alpha").unwrap();
        fs::write(&b, [0u8, 1, 2]).unwrap();
        let sb = provision(&spec(vec![a, b]), &SandboxConfig::default()).unwrap();
        assert_eq!(sb.staged_files(), ["/home/ctfplayer/ctf_files/a.txt", "/home/ctfplayer/ctf_files/b.bin"]);
        let r = sb.exec("cat /home/ctfplayer/ctf_files/a.txt; echo; pwd").unwrap();
        assert_eq!(r.stdout, "alpha\n/home/ctfplayer\n");
        assert_eq!(sb.warnings(), vec![UNSAFE_MODE_WARNING.to_string()]);
    }

    #[test]
    fn missing_file_fails_provision() {
        let err = provision(&spec(vec![PathBuf::from("/nonexistent/x")]), &SandboxConfig::default()).unwrap_err();
        assert!(matches!(err, EnvError::MissingFile { .. }));
    }

    #[test]
    fn required_tools_checked() {
        let cfg = SandboxConfig {
            required_tools: vec!["sh".into(), "definitely-not-a-tool-xyz".into()],
            ..SandboxConfig::default()
        };
        match provision(&spec(vec![]), &cfg) {
            Err(EnvError::MissingTools(m)) => assert_eq!(m, vec!["definitely-not-a-tool-xyz"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn teardown_removes_workspace() {
        let mut sb = provision(&spec(vec![]), &SandboxConfig::default()).unwrap();
        let dir = sb.host_dir().unwrap().to_path_buf();
        assert!(dir.join("ctf_files").is_dir());
        sb.teardown();
        assert!(!dir.exists());
        assert!(matches!(sb.exec("true"), Err(EnvError::TornDown)));
        assert_eq!(sb.live_processes(), 0);
    }
}

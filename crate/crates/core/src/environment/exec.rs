//! Child-process execution with a wall-clock limit and a combined output cap.

use std::collections::BTreeSet;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandResult {
    /// `None` when the process was killed (timeout or signal).
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
    /// Output beyond the cap was discarded.
    pub truncated: bool,
}

impl CommandResult {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }

    /// Text shown to the agent for a tool call.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.timed_out {
            out.push_str(&format!("[command timed out after {} ms]\n", self.duration_ms));
        } else {
            match self.exit_code {
                Some(code) => out.push_str(&format!("[exit code {code}]\n")),
                None => out.push_str("[killed by signal]\n"),
            }
        }
        if !self.stdout.is_empty() {
            out.push_str(&self.stdout);
            if !self.stdout.ends_with('\n') {
                out.push('\n');
            }
        }
        if !self.stderr.is_empty() {
            out.push_str("[stderr]\n");
            out.push_str(&self.stderr);
            if !self.stderr.ends_with('\n') {
                out.push('\n');
            }
        }
        if self.truncated {
            out.push_str("[output truncated]\n");
        }
        out
    }
}

/// Process groups still running, so teardown can kill stragglers.
#[derive(Debug, Clone, Default)]
pub struct ProcessRegistry {
    groups: Arc<Mutex<BTreeSet<i32>>>,
}

impl ProcessRegistry {
    fn add(&self, pgid: i32) {
        self.groups.lock().expect("registry poisoned").insert(pgid);
    }

    fn remove(&self, pgid: i32) {
        self.groups.lock().expect("registry poisoned").remove(&pgid);
    }

    /// Tracked groups that still have at least one live member.
    pub fn live(&self) -> usize {
        let groups = self.groups.lock().expect("registry poisoned");
        groups.iter().filter(|&&g| group_alive(g)).count()
    }

    pub fn kill_all(&self) {
        let mut groups = self.groups.lock().expect("registry poisoned");
        for &g in groups.iter() {
            kill_group(g);
        }
        groups.clear();
    }
}

fn group_alive(pgid: i32) -> bool {
    // SAFETY: signal 0 only probes for existence.
    unsafe { libc::kill(-pgid, 0) == 0 }
}

fn kill_group(pgid: i32) {
    // SAFETY: plain syscall on a process group we created.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

struct Budget {
    remaining: usize,
    truncated: bool,
}

fn drain<R: Read + Send + 'static>(mut src: R, budget: Arc<Mutex<Budget>>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            let n = match src.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            };
            let mut b = budget.lock().expect("budget poisoned");
            let take = n.min(b.remaining);
            b.remaining -= take;
            if take < n {
                b.truncated = true;
            }
            kept.extend_from_slice(&buf[..take]);
        }
        kept
    })
}

/// Runs `cmd` in its own process group. On timeout the whole group is killed.
/// `output_cap` bounds stdout and stderr together.
pub fn run_captured(
    mut cmd: Command,
    timeout: Duration,
    output_cap: usize,
    registry: &ProcessRegistry,
) -> io::Result<CommandResult> {
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).process_group(0);
    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let pgid = child.id() as i32;
    registry.add(pgid);

    let budget = Arc::new(Mutex::new(Budget {
        remaining: output_cap,
        truncated: false,
    }));
    let out = drain(child.stdout.take().expect("stdout piped"), budget.clone());
    let err = drain(child.stderr.take().expect("stderr piped"), budget.clone());

    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            timed_out = true;
            kill_group(pgid);
            break child.wait()?;
        }
        thread::sleep(Duration::from_millis(5));
    };
    // Background members of the group would otherwise hold the pipes open.
    kill_group(pgid);
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    registry.remove(pgid);

    let truncated = budget.lock().expect("budget poisoned").truncated;
    Ok(CommandResult {
        exit_code: if timed_out { None } else { status.code() },
        timed_out,
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        duration_ms: started.elapsed().as_millis() as u64,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Command {
        let mut c = Command::new("sh");
        c.arg("-c").arg(script);
        c
    }

    #[test]
    fn captures_output_and_exit_code() {
        let reg = ProcessRegistry::default();
        let r = run_captured(sh("echo hi; echo oops >&2; exit 3"), Duration::from_secs(5), 1024, &reg).unwrap();
        assert_eq!(r.stdout, "hi\n");
        assert_eq!(r.stderr, "oops\n");
        assert_eq!(r.exit_code, Some(3));
        assert!(!r.truncated && !r.timed_out);
        assert_eq!(reg.live(), 0);
    }

    #[test]
    fn timeout_kills_the_group() {
        let reg = ProcessRegistry::default();
        let r = run_captured(sh("sleep 10 & sleep 10"), Duration::from_millis(200), 1024, &reg).unwrap();
        assert!(r.timed_out);
        assert_eq!(r.exit_code, None);
        assert!(r.duration_ms < 5000);
        assert_eq!(reg.live(), 0);
    }

    #[test]
    fn cap_is_shared_and_honest() {
        let reg = ProcessRegistry::default();
        let r = run_captured(sh("head -c 100000 /dev/zero; head -c 100000 /dev/zero >&2"), Duration::from_secs(10), 1000, &reg)
            .unwrap();
        assert!(r.truncated);
        assert!(r.stdout.len() + r.stderr.len() <= 1000);
        let r = run_captured(sh("printf abc"), Duration::from_secs(5), 3, &reg).unwrap();
        assert!(!r.truncated);
        assert_eq!(r.stdout, "abc");
    }
}

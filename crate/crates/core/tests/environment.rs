mod common;

use std::time::{Duration, Instant};

use proptest::prelude::*;

use kbagent::challenge::ChallengeSpec;
use kbagent::environment::{provision, validate_flag_format, EnvError, SandboxConfig};

fn spec() -> ChallengeSpec {
    ChallengeSpec::load(&common::fixtures().join("challenges/layered_b64/challenge.json")).unwrap()
}

#[test]
fn fixture_files_are_staged() {
    let sb = provision(&spec(), &SandboxConfig::default()).unwrap();
    assert_eq!(sb.staged_files(), ["/home/ctfplayer/ctf_files/encoded.txt"]);
    let r = sb.exec("ls /home/ctfplayer/ctf_files").unwrap();
    assert!(r.success());
    assert_eq!(r.stdout, "encoded.txt\n");
    assert!(r.render().starts_with("[exit code 0]\nencoded.txt\n"));
}

#[test]
fn nonzero_exit_and_stderr_are_results() {
    let sb = provision(&spec(), &SandboxConfig::default()).unwrap();
    let r = sb.exec("echo oops >&2; exit 3").unwrap();
    assert_eq!(r.exit_code, Some(3));
    assert_eq!(r.stderr, "oops\n");
    assert_eq!(r.render(), "[exit code 3]\n[stderr]\noops\n");
}

#[test]
fn timeout_kills_the_command() {
    let sb = provision(&spec(), &SandboxConfig::default()).unwrap();
    let t0 = Instant::now();
    let r = sb.exec_with_timeout("sleep 30", Duration::from_millis(300)).unwrap();
    assert!(r.timed_out);
    assert!(t0.elapsed() < Duration::from_secs(10));
    assert!(r.render().starts_with("[command timed out"));
    assert_eq!(sb.live_processes(), 0);
}

#[test]
fn output_is_capped() {
    let cfg = SandboxConfig {
        output_cap: 1000,
        ..SandboxConfig::default()
    };
    let sb = provision(&spec(), &cfg).unwrap();
    let r = sb.exec("head -c 100000 /dev/zero | tr '\\0' a").unwrap();
    assert!(r.truncated);
    assert!(r.stdout.len() <= 1000);
    assert!(r.render().ends_with("[output truncated]\n"));
}

#[test]
fn teardown_is_idempotent() {
    let mut sb = provision(&spec(), &SandboxConfig::default()).unwrap();
    let dir = sb.host_dir().unwrap().to_path_buf();
    assert!(dir.exists());
    sb.teardown();
    sb.teardown();
    assert!(sb.is_torn_down());
    assert!(!dir.exists());
    assert!(matches!(sb.exec("true"), Err(EnvError::TornDown)));
}

proptest! {
    #[test]
    fn braced_formats(prefix in "[a-z]{1,8}", body in "[a-zA-Z0-9_]{1,20}", other in "[a-z]{1,8}") {
        let format = format!("{prefix}{{...}}");
        let candidate = format!("{prefix}{{{body}}}");
        let padded = format!("  {candidate}\n");
        let empty = format!("{prefix}{{}}");
        let unclosed = format!("{prefix}{{{body}");
        let foreign = format!("{other}{{{body}}}");
        prop_assert!(validate_flag_format(&candidate, &format));
        prop_assert!(validate_flag_format(&padded, &format));
        prop_assert!(!validate_flag_format(&empty, &format));
        prop_assert!(!validate_flag_format(&unclosed, &format));
        if other != prefix {
            prop_assert!(!validate_flag_format(&foreign, &format));
        }
    }

    #[test]
    fn unbraced_formats_accept_nonblank(candidate in "\\PC*", format in "[^{]*") {
        prop_assert_eq!(validate_flag_format(&candidate, &format), !candidate.trim().is_empty());
    }
}

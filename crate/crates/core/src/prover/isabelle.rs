//! Isabelle/HOL adapter: one `isabelle build` process per check, each in a
//! private scratch session directory.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{BackendKind, ProverError, ProverVerdict};
use crate::formal::TacticLadder;

#[derive(Debug, Clone)]
pub struct IsabelleConfig {
    /// Executable name (looked up on `PATH`) or path.
    pub executable: PathBuf,
    pub ladder: TacticLadder,
    /// Cap on concurrently running Isabelle processes.
    pub max_procs: usize,
}

impl Default for IsabelleConfig {
    fn default() -> Self {
        Self {
            executable: PathBuf::from("isabelle"),
            ladder: TacticLadder::default(),
            max_procs: 2,
        }
    }
}

/// Counting semaphore shared by all checks of one runner.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(self: &Arc<Self>) -> Permit {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(Arc::clone(self))
    }
}

struct Permit(Arc<Semaphore>);

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct IsabelleRunner {
    config: IsabelleConfig,
    slots: Arc<Semaphore>,
}

const ROOT_FILE: &str = "session Step = HOL +\n  theories\n    Step\n";

impl IsabelleRunner {
    pub fn new(config: IsabelleConfig) -> Self {
        let slots = Arc::new(Semaphore {
            free: Mutex::new(config.max_procs.max(1)),
            cv: Condvar::new(),
        });
        Self { config, slots }
    }

    pub fn resolve_executable(&self) -> Result<PathBuf, ProverError> {
        let exe = &self.config.executable;
        let unavailable =
            || ProverError::BackendUnavailable(format!("isabelle executable `{}` not found", exe.display()));
        if exe.components().count() > 1 {
            return if is_executable(exe) {
                Ok(exe.clone())
            } else {
                Err(unavailable())
            };
        }
        let path = std::env::var_os("PATH").ok_or_else(unavailable)?;
        std::env::split_paths(&path)
            .map(|dir| dir.join(exe))
            .find(|p| is_executable(p))
            .ok_or_else(unavailable)
    }

    /// Builds the theory document and classifies the outcome.
    pub fn check(&self, document: &str, timeout: Duration) -> Result<ProverVerdict, ProverError> {
        let exe = self.resolve_executable()?;
        let _permit = self.slots.acquire();
        let io = |e: std::io::Error| ProverError::BackendUnavailable(format!("isabelle scratch dir: {e}"));
        let dir = tempfile::Builder::new().prefix("stepproof-isa").tempdir().map_err(io)?;
        std::fs::write(dir.path().join("Step.thy"), document).map_err(io)?;
        std::fs::write(dir.path().join("ROOT"), ROOT_FILE).map_err(io)?;

        let mut child = Command::new(&exe)
            .arg("build")
            .arg("-D")
            .arg(dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ProverError::BackendUnavailable(format!("cannot start {}: {e}", exe.display())))?;

        // drain both pipes concurrently so a chatty build cannot block on a full pipe
        let readers: Vec<_> = [
            child.stdout.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
            child.stderr.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
        ]
        .into_iter()
        .flatten()
        .map(|mut r| {
            std::thread::spawn(move || {
                let mut buf = String::new();
                let _ = r.read_to_string(&mut buf);
                buf
            })
        })
        .collect();

        let status = match child.wait_timeout(timeout) {
            Ok(Some(status)) => Some(status),
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                None
            }
            Err(e) => return Err(ProverError::BackendUnavailable(format!("waiting on isabelle: {e}"))),
        };
        let output: String = readers.into_iter().filter_map(|h| h.join().ok()).collect();
        Ok(match status {
            None => ProverVerdict::invalid(BackendKind::Isabelle, vec!["timeout".into()]),
            Some(status) => classify_isabelle_output(status.success(), &output),
        })
    }
}

fn is_executable(p: &Path) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::metadata(p).is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
    }
    #[cfg(not(unix))]
    {
        p.is_file()
    }
}

/// Markers of errors raised before any proof is attempted.
const PARSE_MARKERS: [&str; 7] = [
    "Outer syntax error",
    "Inner syntax error",
    "Inner lexical error",
    "Type unification failed",
    "Bad name",
    "Undefined type",
    "Malformed",
];

/// Markers of proof-method failures on a well-formed document.
const PROOF_MARKERS: [&str; 5] = [
    "Failed to apply",
    "Failed to finish proof",
    "failed",
    "Timeout",
    "Unprovable",
];

/// Maps process status and output to a verdict. The `*** ` lines are kept
/// verbatim as diagnostics; output that matches no known class fails closed.
pub fn classify_isabelle_output(success: bool, output: &str) -> ProverVerdict {
    let errors: Vec<String> = output
        .lines()
        .filter(|l| l.starts_with("*** "))
        .map(str::to_string)
        .collect();
    if success && errors.is_empty() {
        return ProverVerdict::valid(BackendKind::Isabelle);
    }
    if errors.iter().any(|l| PARSE_MARKERS.iter().any(|m| l.contains(m))) {
        return ProverVerdict::syntax_error(BackendKind::Isabelle, errors);
    }
    if errors.iter().any(|l| PROOF_MARKERS.iter().any(|m| l.contains(m))) {
        return ProverVerdict::invalid(BackendKind::Isabelle, errors);
    }
    let mut diagnostics = errors;
    let tail: Vec<&str> = output.lines().rev().take(20).collect();
    let tail: Vec<&str> = tail.into_iter().rev().collect();
    diagnostics.push(format!("unclassified isabelle output: {}", tail.join("\n")));
    ProverVerdict::invalid(BackendKind::Isabelle, diagnostics)
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    fn fake_isabelle(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("isabelle");
        std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
        p
    }

    fn runner(exe: PathBuf) -> IsabelleRunner {
        IsabelleRunner::new(IsabelleConfig {
            executable: exe,
            ..Default::default()
        })
    }

    #[test]
    fn classification_branches() {
        assert!(classify_isabelle_output(true, "Finished Step (0:00:03 elapsed time)\n").logic_ok);
        let v = classify_isabelle_output(false, "*** Inner syntax error (line 12)\n*** at \"(\"\n");
        assert!(!v.syntax_ok && !v.logic_ok);
        assert_eq!(v.diagnostics[0], "*** Inner syntax error (line 12)");
        let v = classify_isabelle_output(false, "*** Failed to apply proof method (line 14)\n");
        assert!(v.syntax_ok && !v.logic_ok);
        let v = classify_isabelle_output(false, "something odd\n");
        assert!(v.syntax_ok && !v.logic_ok);
        assert!(v.diagnostics[0].starts_with("unclassified isabelle output"));
    }

    #[test]
    fn fake_process_success_and_failure() {
        let dir = tempfile::tempdir().unwrap();
        // succeeds only when the scratch session contains the theory and ROOT
        let exe = fake_isabelle(
            dir.path(),
            r#"test "$1" = build && test -f "$3/Step.thy" && test -f "$3/ROOT" || exit 9
grep -q "lemma goal" "$3/Step.thy" || { echo "*** Outer syntax error (line 1)"; exit 1; }
grep -q "unprovable" "$3/Step.thy" && { echo "*** Failed to finish proof (line 9)"; exit 1; }
echo "Finished Step""#,
        );
        let r = runner(exe);
        let ok = r.check("lemma goal: \"p a\"", Duration::from_secs(10)).unwrap();
        assert!(ok.syntax_ok && ok.logic_ok);
        let bad = r.check("lemma goal: \"unprovable\"", Duration::from_secs(10)).unwrap();
        assert!(bad.syntax_ok && !bad.logic_ok);
        assert_eq!(bad.diagnostics, vec!["*** Failed to finish proof (line 9)"]);
        let broken = r.check("theory", Duration::from_secs(10)).unwrap();
        assert!(!broken.syntax_ok);
    }

    #[test]
    fn fake_process_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let exe = fake_isabelle(dir.path(), "exec sleep 5");
        let v = runner(exe).check("x", Duration::from_millis(200)).unwrap();
        assert!(v.syntax_ok && !v.logic_ok);
        assert_eq!(v.diagnostics, vec!["timeout"]);
    }

    #[test]
    fn semaphore_caps_concurrency() {
        let dir = tempfile::tempdir().unwrap();
        let counter = dir.path().join("running");
        std::fs::create_dir(&counter).unwrap();
        // each process registers itself, records the peak, then leaves
        let exe = fake_isabelle(
            dir.path(),
            &format!(
                r#"touch "{c}/$$"; n=$(ls "{c}" | wc -l); echo $n >> "{c}.peak"; sleep 0.2; rm "{c}/$$"; echo ok"#,
                c = counter.display()
            ),
        );
        let r = Arc::new(runner(exe));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let r = Arc::clone(&r);
                std::thread::spawn(move || r.check("x", Duration::from_secs(10)).unwrap())
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap().logic_ok);
        }
        let peaks = std::fs::read_to_string(format!("{}.peak", counter.display())).unwrap();
        let peak = peaks
            .lines()
            .filter_map(|l| l.trim().parse::<usize>().ok())
            .max()
            .unwrap();
        assert!(peak <= 2, "peak concurrency {peak}");
    }

    /// Runs against a real installation when `STEPPROOF_ISABELLE` names it.
    #[test]
    fn real_isabelle_when_configured() {
        let Some(exe) = std::env::var_os("STEPPROOF_ISABELLE") else {
            return;
        };
        let theory = crate::formal::parse_lif(
            "axiom: forall X. (reads_book(X) -> smart(X))\naxiom: reads_book(harry)\ngoal: smart(harry)",
        )
        .unwrap();
        let doc = crate::formal::emit_isabelle(&theory, &TacticLadder::default());
        let v = runner(exe.into()).check(&doc, Duration::from_secs(300)).unwrap();
        assert!(v.syntax_ok && v.logic_ok, "{:?}", v.diagnostics);
    }
}

//! Shell command execution with a wall-clock budget.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

/// Exit status of `sh` when the command word cannot be found.
pub const SHELL_NOT_FOUND: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Code(i32),
    Signal(i32),
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub exit: Exit,
    pub stdout: String,
    pub stderr: String,
    pub wall: Duration,
}

impl RunOutput {
    pub fn success(&self) -> bool {
        self.exit == Exit::Code(0)
    }

    pub fn command_not_found(&self) -> bool {
        self.exit == Exit::Code(SHELL_NOT_FOUND)
    }

    /// stdout and stderr joined, as written to log files.
    pub fn combined(&self) -> String {
        let mut s = self.stdout.clone();
        if !self.stderr.is_empty() {
            if !s.is_empty() && !s.ends_with('\n') {
                s.push('\n');
            }
            s.push_str(&self.stderr);
        }
        s
    }
}

fn drain(mut pipe: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_group(child: &Child) {
    // The child leads its own process group, so this also reaches anything
    // the shell spawned.
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
}

/// Runs `command` through `sh -c` in `cwd`, killing the whole process group
/// once `timeout` elapses.
pub fn run_shell(command: &str, cwd: &Path, timeout: Duration) -> std::io::Result<RunOutput> {
    let start = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;
    let out = drain(child.stdout.take().expect("piped stdout"));
    let err = drain(child.stderr.take().expect("piped stderr"));

    let mut poll = Duration::from_micros(200);
    let (exit, wall) = loop {
        if let Some(status) = child.try_wait()? {
            let wall = start.elapsed();
            let exit = match (status.code(), status.signal()) {
                (Some(code), _) => Exit::Code(code),
                (None, Some(sig)) => Exit::Signal(sig),
                (None, None) => Exit::Code(-1),
            };
            // Reap stragglers that kept the pipes open.
            kill_group(&child);
            break (exit, wall);
        }
        let elapsed = start.elapsed();
        if elapsed >= timeout {
            kill_group(&child);
            let _ = child.wait();
            break (Exit::TimedOut, elapsed);
        }
        thread::sleep(poll.min(timeout - elapsed));
        poll = (poll * 2).min(Duration::from_millis(5));
    };

    Ok(RunOutput {
        exit,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        wall,
    })
}

/// Quotes `s` for inclusion in an `sh` command line.
pub fn shell_quote(s: &str) -> String {
    if !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"/._-+=:,@%".contains(&b))
    {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

/// Substitutes `{name}` placeholders with shell-quoted values.
pub fn fill_template(template: &str, values: &[(&str, &Path)]) -> String {
    values.iter().fold(template.to_string(), |acc, (name, path)| {
        acc.replace(
            &format!("{{{name}}}"),
            &shell_quote(&path.to_string_lossy()),
        )
    })
}

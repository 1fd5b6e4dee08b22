//! Base classifier running as a child process.
//!
//! Each batch is written to the child's stdin as a headerless frame:
//! `rows u64 | d u64 | rows*d f64`, all little-endian, row-major. The child
//! answers with one class id per line, in row order.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use ndarray::ArrayView2;

use repdensity::certify::BaseClassifier;
use repdensity::Error;

pub struct SubprocessClassifier {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    line: String,
}

impl SubprocessClassifier {
    /// Start `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, Error> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Evaluation(format!("cannot start classifier `{command}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self { command: command.to_string(), child, stdin, stdout, line: String::new() })
    }

    fn fail(&self, what: impl std::fmt::Display) -> Error {
        Error::Evaluation(format!("classifier `{}`: {what}", self.command))
    }

    /// Close stdin and wait; a non-zero exit is an error.
    pub fn finish(mut self) -> Result<(), Error> {
        drop(self.stdin.take());
        let status = self.child.wait().map_err(|e| self.fail(e))?;
        if status.success() {
            Ok(())
        } else {
            Err(self.fail(format!("exited with {status}")))
        }
    }
}

impl BaseClassifier for SubprocessClassifier {
    fn classify(&mut self, inputs: ArrayView2<'_, f64>) -> repdensity::Result<Vec<u32>> {
        let (rows, d) = inputs.dim();
        let mut frame = Vec::with_capacity(16 + rows * d * 8);
        frame.extend_from_slice(&(rows as u64).to_le_bytes());
        frame.extend_from_slice(&(d as u64).to_le_bytes());
        for v in inputs.iter() {
            frame.extend_from_slice(&v.to_le_bytes());
        }
        let stdin = self.stdin.as_mut().expect("open until finish");
        let sent = stdin.write_all(&frame).and_then(|_| stdin.flush());
        sent.map_err(|e| self.fail(format!("write failed: {e}")))?;

        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            self.line.clear();
            let got = self.stdout.read_line(&mut self.line).map_err(|e| self.fail(e))?;
            if got == 0 {
                return Err(self.fail(format!("output ended after {i} of {rows} answers")));
            }
            let class = self
                .line
                .trim()
                .parse::<u32>()
                .map_err(|_| self.fail(format!("bad class id {:?}", self.line.trim())))?;
            out.push(class);
        }
        Ok(out)
    }
}

impl Drop for SubprocessClassifier {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.wait();
    }
}

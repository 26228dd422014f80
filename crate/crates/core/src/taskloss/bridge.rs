//! Line protocol for delegating the task loss to another process.
//!
//! The client writes to the child's stdin and reads its stdout:
//!
//! ```text
//! > EVAL <n>
//! > <row 0>
//! > ...
//! > <row n-1>
//! < LOSS <value>
//! < <row 0>
//! < ...
//! < <row n-1>
//! ```
//!
//! Rows carry the distorted image (request) or the loss gradient (response)
//! channel-major: the `H` rows of R, then G, then B, so `n = 3 * H`. Each row
//! is standard base64 (with padding) of `W` little-endian `f32` values. The
//! reference image is not transmitted; the external sink owns its targets.
//! One request is in flight at a time.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use super::TaskLossProxy;
use crate::media_io::{ImageTensor, Plane};
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout: Duration,
}

impl BridgeConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Handle to a running external loss process. Clones share the process.
#[derive(Clone)]
pub struct ExternalBridge {
    config: BridgeConfig,
    inner: Arc<Mutex<BridgeProcess>>,
}

impl std::fmt::Debug for ExternalBridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalBridge").field("config", &self.config).finish()
    }
}

struct BridgeProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    broken: bool,
}

impl Drop for BridgeProcess {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved sink exit on its own
        self.stdin.take();
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

impl ExternalBridge {
    pub fn spawn(config: BridgeConfig) -> Result<Self> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| Error::Config("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            config,
            inner: Arc::new(Mutex::new(BridgeProcess {
                child,
                stdin,
                lines: rx,
                broken: false,
            })),
        })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.config
    }

    /// Sends one image and waits for the loss and its gradient.
    pub fn eval(&self, distorted: &ImageTensor) -> Result<(f64, ImageTensor)> {
        let mut proc = self
            .inner
            .lock()
            .map_err(|_| Error::Bridge("bridge state poisoned".into()))?;
        if proc.broken {
            return Err(Error::Bridge("bridge unusable after an earlier failure".into()));
        }
        let result = exchange(&mut proc, distorted, self.config.timeout);
        if result.is_err() {
            proc.broken = true;
            let _ = proc.child.kill();
        }
        result
    }
}

fn exchange(proc: &mut BridgeProcess, img: &ImageTensor, timeout: Duration) -> Result<(f64, ImageTensor)> {
    let request = encode_request(img);
    let stdin = proc
        .stdin
        .as_mut()
        .ok_or_else(|| Error::Bridge("stdin closed".into()))?;
    stdin
        .write_all(request.as_bytes())
        .and_then(|_| stdin.flush())
        .map_err(|e| Error::Bridge(format!("write failed: {e}")))?;

    let next = || -> Result<String> {
        match proc.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Bridge(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                Err(Error::Bridge(format!("no response within {timeout:?}")))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::Bridge("process closed its output".into())),
        }
    };
    let header = next()?;
    let loss = parse_loss(&header)?;
    let rows = (0..3 * img.height()).map(|_| next()).collect::<Result<Vec<_>>>()?;
    let grad = decode_rows(&rows, img.width(), img.height())?;
    Ok((loss, grad))
}

fn parse_loss(line: &str) -> Result<f64> {
    let value = line
        .trim_end()
        .strip_prefix("LOSS ")
        .ok_or_else(|| Error::Bridge(format!("expected LOSS line, got {line:?}")))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Bridge(format!("bad loss value {value:?}")))?;
    if !v.is_finite() {
        return Err(Error::Bridge(format!("non-finite loss {v}")));
    }
    Ok(v)
}

fn encode_rows(img: &ImageTensor, out: &mut String) {
    let w = img.width();
    let mut buf = Vec::with_capacity(4 * w);
    for plane in img.channels() {
        for row in plane.samples().chunks_exact(w) {
            buf.clear();
            for &v in row {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            STANDARD.encode_string(&buf, out);
            out.push('\n');
        }
    }
}

pub fn encode_request(img: &ImageTensor) -> String {
    let mut out = format!("EVAL {}\n", 3 * img.height());
    encode_rows(img, &mut out);
    out
}

pub fn encode_response(loss: f64, grad: &ImageTensor) -> String {
    let mut out = format!("LOSS {loss:e}\n");
    encode_rows(grad, &mut out);
    out
}

/// Decodes `3 * height` rows of `width` floats. When `width` is `None` it is
/// taken from the first row.
fn decode_rows_any(rows: &[String], width: Option<usize>, height: usize) -> Result<ImageTensor> {
    if rows.len() != 3 * height || height == 0 {
        return Err(Error::Bridge(format!("expected {} rows, got {}", 3 * height, rows.len())));
    }
    let mut width = width;
    let mut planes: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for (i, row) in rows.iter().enumerate() {
        let bytes = STANDARD
            .decode(row.trim_end())
            .map_err(|e| Error::Bridge(format!("row {i}: bad base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Bridge(format!("row {i}: {} bytes is not whole f32s", bytes.len())));
        }
        let w = *width.get_or_insert(bytes.len() / 4);
        if bytes.len() != 4 * w || w == 0 {
            return Err(Error::Bridge(format!("row {i}: expected {w} values, got {}", bytes.len() / 4)));
        }
        planes[i / height].extend(
            bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))),
        );
    }
    let w = width.expect("at least one row");
    let mut it = planes.into_iter().map(|p| Plane::new(w, height, p));
    ImageTensor::new(
        it.next().unwrap()?,
        it.next().unwrap()?,
        it.next().unwrap()?,
    )
}

pub fn decode_rows(rows: &[String], width: usize, height: usize) -> Result<ImageTensor> {
    decode_rows_any(rows, Some(width), height)
}

/// Answers bridge requests on `input`/`output` with a local proxy against a
/// fixed reference image, until `input` ends.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    proxy: &TaskLossProxy,
    reference: &ImageTensor,
) -> Result<()> {
    let mut lines = input.lines();
    let io_err = |e: std::io::Error| Error::Bridge(format!("i/o: {e}"));
    while let Some(line) = lines.next() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let n: usize = line
            .trim_end()
            .strip_prefix("EVAL ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::Bridge(format!("expected EVAL <n>, got {line:?}")))?;
        if !n.is_multiple_of(3) {
            return Err(Error::Bridge(format!("row count {n} not divisible by 3")));
        }
        let rows = (0..n)
            .map(|_| {
                lines
                    .next()
                    .ok_or_else(|| Error::Bridge("request truncated".into()))?
                    .map_err(io_err)
            })
            .collect::<Result<Vec<_>>>()?;
        let img = decode_rows_any(&rows, None, n / 3)?;
        let (loss, grad) = proxy.value_and_gradient(&img, reference)?;
        output
            .write_all(encode_response(loss, &grad).as_bytes())
            .and_then(|_| output.flush())
            .map_err(io_err)?;
    }
    Ok(())
}

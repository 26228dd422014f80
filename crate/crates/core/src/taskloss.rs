//! Differentiable stand-ins for an analysis network's loss.
//!
//! Two proxies are built in:
//!
//! - `lowfreq-mse`: MSE between `k x k` average-pooled images. Windows at
//!   the right/bottom edge that are cut short average over the pixels they
//!   cover. With `N` pooled samples (all channels) and a full window of `k²`
//!   pixels, each pixel's gradient is `2 * diff / (N * k²)`.
//! - `edge-mse`: MSE of the residual filtered by the 3x3 Laplacian
//!   `[[0,-1,0],[-1,4,-1],[0,-1,0]]`, evaluated only where the kernel fits
//!   inside the image. The gradient is the filtered residual correlated with
//!   the flipped kernel and scaled by `2/N`.
//!
//! A third kind forwards the distorted image to an external process over the
//! line protocol in [`bridge`].

pub mod bridge;

use std::fmt;

use crate::media_io::{ImageTensor, Plane};
use crate::{Error, Result};

pub use bridge::{BridgeConfig, ExternalBridge};

pub const DEFAULT_POOL: usize = 4;

const LAPLACIAN: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];

#[derive(Debug, Clone)]
pub enum TaskLossProxy {
    LowFreqMse { pool: usize },
    EdgeMse,
    External(ExternalBridge),
}

impl TaskLossProxy {
    pub fn lowfreq_mse() -> Self {
        TaskLossProxy::LowFreqMse { pool: DEFAULT_POOL }
    }

    /// Parses a built-in proxy name (`lowfreq-mse`, `lowfreq-mse:<k>`,
    /// `edge-mse`).
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "lowfreq-mse" => Ok(Self::lowfreq_mse()),
            "edge-mse" => Ok(TaskLossProxy::EdgeMse),
            _ => {
                if let Some(k) = name.strip_prefix("lowfreq-mse:") {
                    let pool: usize = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad pool factor {k:?}")))?;
                    if pool == 0 {
                        return Err(Error::Config("pool factor must be positive".into()));
                    }
                    Ok(TaskLossProxy::LowFreqMse { pool })
                } else {
                    Err(Error::Config(format!(
                        "unknown proxy {name:?} (expected lowfreq-mse, lowfreq-mse:<k>, edge-mse or external)"
                    )))
                }
            }
        }
    }

    pub fn evaluate(&self, distorted: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
        check_shapes(distorted, reference)?;
        match self {
            TaskLossProxy::LowFreqMse { pool } => Ok(lowfreq(distorted, reference, *pool, false)?.0),
            TaskLossProxy::EdgeMse => Ok(edge(distorted, reference, false)?.0),
            TaskLossProxy::External(bridge) => Ok(bridge.eval(distorted)?.0),
        }
    }

    pub fn gradient(&self, distorted: &ImageTensor, reference: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.value_and_gradient(distorted, reference)?.1)
    }

    /// Loss and `∂loss/∂distorted` in one pass (one round trip for the
    /// external bridge).
    pub fn value_and_gradient(
        &self,
        distorted: &ImageTensor,
        reference: &ImageTensor,
    ) -> Result<(f64, ImageTensor)> {
        check_shapes(distorted, reference)?;
        let (loss, grad) = match self {
            TaskLossProxy::LowFreqMse { pool } => lowfreq(distorted, reference, *pool, true)?,
            TaskLossProxy::EdgeMse => edge(distorted, reference, true)?,
            TaskLossProxy::External(bridge) => {
                let (loss, grad) = bridge.eval(distorted)?;
                (loss, Some(grad))
            }
        };
        Ok((loss, grad.expect("gradient requested")))
    }
}

impl fmt::Display for TaskLossProxy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskLossProxy::LowFreqMse { pool } if *pool == DEFAULT_POOL => f.write_str("lowfreq-mse"),
            TaskLossProxy::LowFreqMse { pool } => write!(f, "lowfreq-mse:{pool}"),
            TaskLossProxy::EdgeMse => f.write_str("edge-mse"),
            TaskLossProxy::External(b) => write!(f, "external:{}", b.config().command.join(" ")),
        }
    }
}

fn check_shapes(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "distorted {}x{} vs reference {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

fn lowfreq(
    distorted: &ImageTensor,
    reference: &ImageTensor,
    k: usize,
    want_grad: bool,
) -> Result<(f64, Option<ImageTensor>)> {
    let (w, h) = (distorted.width(), distorted.height());
    let (pw, ph) = (w.div_ceil(k), h.div_ceil(k));
    let n = (3 * pw * ph) as f64;

    let mut loss = 0.0;
    let mut grads: Vec<Plane> = Vec::new();
    for (d, r) in distorted.channels().iter().zip(reference.channels()) {
        // pooled difference per window
        let mut diff = vec![0.0; pw * ph];
        let mut count = vec![0.0; pw * ph];
        for y in 0..h {
            for x in 0..w {
                let idx = (y / k) * pw + x / k;
                diff[idx] += d.get(x, y) - r.get(x, y);
                count[idx] += 1.0;
            }
        }
        for (dv, c) in diff.iter_mut().zip(&count) {
            *dv /= c;
        }
        loss += diff.iter().map(|v| v * v).sum::<f64>();

        if want_grad {
            let mut g = Plane::filled(w, h, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let idx = (y / k) * pw + x / k;
                    g.set(x, y, 2.0 * diff[idx] / (n * count[idx]));
                }
            }
            grads.push(g);
        }
    }
    let grad = if want_grad {
        Some(ImageTensor::from_channels(grads.try_into().expect("three channels"))?)
    } else {
        None
    };
    Ok((loss / n, grad))
}

fn edge(
    distorted: &ImageTensor,
    reference: &ImageTensor,
    want_grad: bool,
) -> Result<(f64, Option<ImageTensor>)> {
    let (w, h) = (distorted.width(), distorted.height());
    if w < 3 || h < 3 {
        return Err(Error::Dimension(format!(
            "edge-mse needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let (vw, vh) = (w - 2, h - 2);
    let n = (3 * vw * vh) as f64;

    let mut loss = 0.0;
    let mut grads: Vec<Plane> = Vec::new();
    for (d, r) in distorted.channels().iter().zip(reference.channels()) {
        let res: Vec<f64> = d.samples().iter().zip(r.samples()).map(|(a, b)| a - b).collect();
        let mut filtered = vec![0.0; vw * vh];
        for y in 0..vh {
            for x in 0..vw {
                let mut acc = 0.0;
                for (ky, krow) in LAPLACIAN.iter().enumerate() {
                    for (kx, &kv) in krow.iter().enumerate() {
                        acc += kv * res[(y + ky) * w + x + kx];
                    }
                }
                filtered[y * vw + x] = acc;
            }
        }
        loss += filtered.iter().map(|v| v * v).sum::<f64>();

        if want_grad {
            let mut g = vec![0.0; w * h];
            for y in 0..vh {
                for x in 0..vw {
                    let f = 2.0 * filtered[y * vw + x] / n;
                    for (ky, krow) in LAPLACIAN.iter().enumerate() {
                        for (kx, &kv) in krow.iter().enumerate() {
                            g[(y + ky) * w + x + kx] += kv * f;
                        }
                    }
                }
            }
            grads.push(Plane::new(w, h, g)?);
        }
    }
    let grad = if want_grad {
        Some(ImageTensor::from_channels(grads.try_into().expect("three channels"))?)
    } else {
        None
    };
    Ok((loss / n, grad))
}

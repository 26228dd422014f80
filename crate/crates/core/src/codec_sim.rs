//! A small intra still-image codec for measuring what a scaling list does to
//! rate and quality.
//!
//! Every channel is cut into `B x B` blocks (no prediction), transformed,
//! quantized with the list's matrix and reconstructed. The rate is an
//! estimate, not a bitstream: per block, the indices in zigzag order up to
//! the last non-zero one, each costed as a signed order-0 exp-Golomb code,
//! plus an 8-bit end-of-block marker. RGB channels 0, 1 and 2 take the Y, Cb
//! and Cr intra matrices respectively.

use rayon::prelude::*;

use crate::media_io::{Corpus, ImageTensor, Plane};
use crate::quantizer::{dequantize_block, quantize_block, QuantSpec};
use crate::scaling::{Component, Mode, ScalingList};
use crate::taskloss::TaskLossProxy;
use crate::transform::{tile, untile, DctPlan};
use crate::{Error, Result};

pub const CODING_BLOCK_SIZES: [usize; 4] = [4, 8, 16, 32];
pub const EOB_BITS: u64 = 8;
const QUALITY_EPS: f64 = 1e-12;

/// Raster indices of a `size x size` block in zigzag order: anti-diagonals
/// from DC outward, alternating direction, starting rightward.
pub fn zigzag(size: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(size * size);
    for d in 0..2 * size - 1 {
        let lo = d.saturating_sub(size - 1);
        let hi = d.min(size - 1);
        if d % 2 == 0 {
            // up-right: row decreasing
            for r in (lo..=hi).rev() {
                order.push(r * size + (d - r));
            }
        } else {
            for r in lo..=hi {
                order.push(r * size + (d - r));
            }
        }
    }
    order
}

/// Length in bits of the signed exp-Golomb code for `v`
/// (`v > 0 -> 2v - 1`, `v <= 0 -> -2v`, then `2 floor(log2(k + 1)) + 1`).
pub fn se_golomb_len(v: i32) -> u64 {
    let k: u64 = if v > 0 {
        2 * v as u64 - 1
    } else {
        2 * u64::from(v.unsigned_abs())
    };
    2 * u64::from((k + 1).ilog2()) + 1
}

/// Estimated bits for one block of indices.
pub fn block_bits(indices: &[i32], scan: &[usize]) -> u64 {
    let last = scan.iter().rposition(|&i| indices[i] != 0);
    let body: u64 = match last {
        Some(last) => scan[..=last].iter().map(|&i| se_golomb_len(indices[i])).sum(),
        None => 0,
    };
    body + EOB_BITS
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeResult {
    pub bits: u64,
    pub reconstruction: ImageTensor,
    pub psnr: f64,
    /// `-10 log10(proxy loss + 1e-12)`.
    pub task_quality: f64,
    /// Quantization indices per channel, block after block in raster order.
    pub indices: [Vec<i32>; 3],
}

impl EncodeResult {
    pub fn bits_per_pixel(&self) -> f64 {
        let px = self.reconstruction.width() * self.reconstruction.height();
        self.bits as f64 / px as f64
    }
}

fn check_coding_size(b: usize) -> Result<()> {
    if CODING_BLOCK_SIZES.contains(&b) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "coding block size {b} unsupported, expected one of {CODING_BLOCK_SIZES:?}"
        )))
    }
}

/// PSNR over all three channels with peak 255; `1e-12` is added to the MSE
/// so identical images give a large finite value.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pa, pb) in a.channels().iter().zip(b.channels()) {
        for (x, y) in pa.samples().iter().zip(pb.samples()) {
            sum += (x - y) * (x - y);
        }
        n += pa.samples().len();
    }
    10.0 * (255.0 * 255.0 / (sum / n as f64 + QUALITY_EPS)).log10()
}

pub fn task_quality(loss: f64) -> f64 {
    -10.0 * (loss + QUALITY_EPS).log10()
}

fn code_plane(
    plane: &Plane,
    plan: &DctPlan,
    spec: &QuantSpec,
    list: &ScalingList,
    component: Component,
    scan: &[usize],
) -> Result<(u64, Plane, Vec<i32>)> {
    let b = plan.size();
    let m = list.resolve(b, component, Mode::Intra)?;
    let mut grid = tile(plane, b);
    grid.forward_dct(plan);
    let len = b * b;
    let mut bits = 0u64;
    let mut indices = Vec::with_capacity(grid.as_slice().len());
    let mut scratch = vec![0.0; len];
    let mut out = vec![0.0; len];
    for block in grid.blocks_mut() {
        let q = quantize_block(block, spec, m)?;
        bits += block_bits(&q, scan);
        let deq = dequantize_block(&q, spec, m)?;
        plan.inverse_into(&deq, &mut out, &mut scratch);
        block.copy_from_slice(&out);
        indices.extend_from_slice(&q);
    }
    let recon = untile(&grid, plane.width(), plane.height())?.map(|v| v.clamp(0.0, 255.0));
    Ok((bits, recon, indices))
}

/// Codes `img` at `qp` (8-bit) with `block_size` blocks and the list's intra
/// matrices.
pub fn encode(
    img: &ImageTensor,
    qp: i32,
    list: &ScalingList,
    block_size: usize,
    proxy: &TaskLossProxy,
) -> Result<EncodeResult> {
    check_coding_size(block_size)?;
    let spec = QuantSpec::eight_bit(qp)?;
    let plan = DctPlan::new(block_size)?;
    let scan = zigzag(block_size);

    let coded = (0..3)
        .into_par_iter()
        .map(|c| code_plane(img.channel(c), &plan, &spec, list, Component::for_channel(c), &scan))
        .collect::<Result<Vec<_>>>()?;
    let mut bits = 0;
    let mut planes = Vec::with_capacity(3);
    let mut indices = Vec::with_capacity(3);
    for (b, p, i) in coded {
        bits += b;
        planes.push(p);
        indices.push(i);
    }
    let reconstruction = ImageTensor::from_channels(planes.try_into().expect("three planes"))?;
    let loss = proxy.evaluate(&reconstruction, img)?;
    Ok(EncodeResult {
        bits,
        psnr: psnr(&reconstruction, img),
        task_quality: task_quality(loss),
        indices: indices.try_into().expect("three channels"),
        reconstruction,
    })
}

/// Corpus averages at one QP.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub qp: i32,
    pub bpp: f64,
    pub psnr: f64,
    pub task_quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdSweep {
    pub points: Vec<SweepPoint>,
}

impl RdSweep {
    /// `qp,bpp,psnr_db,task_quality_db`, one row per QP.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("qp,bpp,psnr_db,task_quality_db\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.qp, p.bpp, p.psnr, p.task_quality));
        }
        out
    }

    /// Parses the output of [`RdSweep::to_csv`].
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "qp,bpp,psnr_db,task_quality_db")) => {}
            _ => {
                return Err(Error::Syntax {
                    line: 1,
                    message: "expected header qp,bpp,psnr_db,task_quality_db".into(),
                })
            }
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Syntax {
                line: i + 1,
                message: format!("{what} in {line:?}"),
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let num = |f: &str| f.trim().parse::<f64>().map_err(|_| bad("bad number"));
            points.push(SweepPoint {
                qp: fields[0].trim().parse().map_err(|_| bad("bad QP"))?,
                bpp: num(fields[1])?,
                psnr: num(fields[2])?,
                task_quality: num(fields[3])?,
            });
        }
        Ok(Self { points })
    }
}

/// Encodes every corpus image at every QP and averages bits per pixel, PSNR
/// and task quality per QP.
pub fn rd_sweep(
    corpus: &Corpus,
    qps: &[i32],
    list: &ScalingList,
    block_size: usize,
    proxy: &TaskLossProxy,
) -> Result<RdSweep> {
    if qps.len() < 4 {
        return Err(Error::Config(format!("need at least 4 QPs, got {}", qps.len())));
    }
    if qps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("QPs must be strictly ascending: {qps:?}")));
    }
    if corpus.is_empty() {
        return Err(Error::Config("evaluation corpus is empty".into()));
    }
    check_coding_size(block_size)?;

    let jobs: Vec<(i32, &ImageTensor)> = qps
        .iter()
        .flat_map(|&qp| corpus.images().map(move |img| (qp, img)))
        .collect();
    let run = |&(qp, img): &(i32, &ImageTensor)| {
        encode(img, qp, list, block_size, proxy).map(|r| (r.bits_per_pixel(), r.psnr, r.task_quality))
    };
    let results: Vec<(f64, f64, f64)> = match proxy {
        TaskLossProxy::External(_) => jobs.iter().map(run).collect::<Result<_>>()?,
        _ => jobs.par_iter().map(run).collect::<Result<_>>()?,
    };

    let n = corpus.len();
    let points = qps
        .iter()
        .zip(results.chunks(n))
        .map(|(&qp, rs)| {
            let (mut bpp, mut ps, mut tq) = (0.0, 0.0, 0.0);
            for (b, p, t) in rs {
                bpp += b;
                ps += p;
                tq += t;
            }
            SweepPoint {
                qp,
                bpp: bpp / n as f64,
                psnr: ps / n as f64,
                task_quality: tq / n as f64,
            }
        })
        .collect();
    Ok(RdSweep { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::flat_list;
    use crate::synth::synthetic_image;

    #[test]
    fn zigzag_4x4() {
        assert_eq!(zigzag(4), [0, 1, 4, 8, 5, 2, 3, 6, 9, 12, 13, 10, 7, 11, 14, 15]);
        for n in CODING_BLOCK_SIZES {
            let mut z = zigzag(n);
            z.sort_unstable();
            assert_eq!(z, (0..n * n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn golomb_lengths() {
        assert_eq!(se_golomb_len(0), 1);
        assert_eq!(se_golomb_len(1), 3);
        assert_eq!(se_golomb_len(-1), 3);
        assert_eq!(se_golomb_len(2), 5);
        assert_eq!(se_golomb_len(-3), 5);
        assert_eq!(se_golomb_len(4), 7);
        for m in 0..1000 {
            assert!(se_golomb_len(m + 1) >= se_golomb_len(m));
            assert_eq!(se_golomb_len(m), se_golomb_len(-m));
        }
    }

    #[test]
    fn block_bits_truncates_after_last() {
        let scan = zigzag(2);
        assert_eq!(block_bits(&[0; 4], &scan), 8);
        // scan order 0,1,2,3; last non-zero at raster 1 (scan pos 1)
        assert_eq!(block_bits(&[0, 2, 0, 0], &scan), 1 + 5 + 8);
    }

    #[test]
    fn constant_gray_is_dc_only() {
        let img = ImageTensor::filled(16, 16, 128.0);
        let r = encode(&img, 12, &flat_list(16).unwrap(), 8, &TaskLossProxy::lowfreq_mse()).unwrap();
        for ch in &r.indices {
            for block in ch.chunks(64) {
                assert!(block[1..].iter().all(|&i| i == 0));
            }
        }
        assert!(r.psnr > 50.0, "{}", r.psnr);
    }

    #[test]
    fn near_lossless_at_qp4() {
        let img = synthetic_image(64, 64, 3);
        let r = encode(&img, 4, &flat_list(16).unwrap(), 8, &TaskLossProxy::lowfreq_mse()).unwrap();
        let err = img
            .channels()
            .iter()
            .zip(r.reconstruction.channels())
            .flat_map(|(a, b)| a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        // unit step: per-coefficient error at most 0.5, MSE near 1/12
        assert!(err <= 2.0, "{err}");
        assert!(r.psnr > 55.0, "{}", r.psnr);
    }

    #[test]
    fn coarser_list_costs_fewer_bits() {
        let img = synthetic_image(64, 64, 4);
        let proxy = TaskLossProxy::lowfreq_mse();
        for qp in [12, 22] {
            let fine = encode(&img, qp, &flat_list(16).unwrap(), 8, &proxy).unwrap();
            let coarse = encode(&img, qp, &flat_list(128).unwrap(), 8, &proxy).unwrap();
            assert!(fine.bits >= coarse.bits);
        }
    }

    #[test]
    fn reencoding_reproduces_indices() {
        // mid-range content so reconstruction never clips
        let img = synthetic_image(32, 32, 5).map(|v| 64.0 + v * 0.5);
        let list = flat_list(16).unwrap();
        let proxy = TaskLossProxy::lowfreq_mse();
        let first = encode(&img, 22, &list, 8, &proxy).unwrap();
        let second = encode(&first.reconstruction, 22, &list, 8, &proxy).unwrap();
        assert_eq!(first.indices, second.indices);
    }

    #[test]
    fn unsupported_inputs() {
        let img = ImageTensor::filled(8, 8, 0.0);
        let proxy = TaskLossProxy::lowfreq_mse();
        assert!(matches!(encode(&img, 22, &flat_list(16).unwrap(), 2, &proxy), Err(Error::Config(_))));
        assert!(matches!(encode(&img, 22, &ScalingList::new(), 8, &proxy), Err(Error::Lookup(_))));
    }

    fn corpus(n: usize) -> Corpus {
        Corpus::new((0..n).map(|i| (format!("{i}"), synthetic_image(32, 32, i as u64))).collect()).unwrap()
    }

    #[test]
    fn sweep_rate_falls_with_qp() {
        let sweep = rd_sweep(&corpus(3), &[12, 17, 22, 27], &flat_list(16).unwrap(), 8, &TaskLossProxy::lowfreq_mse())
            .unwrap();
        assert_eq!(sweep.points.len(), 4);
        assert!(sweep.points.windows(2).all(|w| w[1].bpp < w[0].bpp));
        assert!(sweep.to_csv().starts_with("qp,bpp,psnr_db,task_quality_db\n12,"));
        assert_eq!(RdSweep::parse_csv(&sweep.to_csv()).unwrap(), sweep);
        assert!(matches!(RdSweep::parse_csv("qp,bpp\n"), Err(Error::Syntax { line: 1, .. })));
        assert!(matches!(
            RdSweep::parse_csv("qp,bpp,psnr_db,task_quality_db\n12,1,2\n"),
            Err(Error::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn sweep_constant_image_quality() {
        let c = Corpus::new(vec![("c".into(), ImageTensor::filled(8, 8, 100.0))]).unwrap();
        let sweep = rd_sweep(&c, &[12, 17, 22, 27], &flat_list(16).unwrap(), 8, &TaskLossProxy::lowfreq_mse())
            .unwrap();
        // a DC-only error is uniform, so pooling leaves the MSE unchanged
        let peak_db = 20.0 * 255f64.log10();
        for p in &sweep.points {
            assert!((p.task_quality - (p.psnr - peak_db)).abs() < 1e-6, "{p:?}");
            assert!(p.psnr > 40.0);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_validated() {
        let c = corpus(2);
        let list = flat_list(16).unwrap();
        let proxy = TaskLossProxy::EdgeMse;
        let a = rd_sweep(&c, &[12, 17, 22, 27], &list, 8, &proxy).unwrap();
        let b = rd_sweep(&c, &[12, 17, 22, 27], &list, 8, &proxy).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(rd_sweep(&c, &[12], &list, 8, &proxy).is_err());
        assert!(rd_sweep(&c, &[12, 27, 22, 30], &list, 8, &proxy).is_err());
    }
}

//! Bjøntegaard-delta rate and scaling-list comparison reports.
//!
//! BD-rate fits a least-squares cubic to `log10(rate)` as a function of
//! quality for each curve. It averages both fits over the shared quality
//! interval with a 1000-point composite trapezoid rule and reports
//! `(10^(mean_test - mean_anchor) - 1) * 100`. Negative values mean the test
//! needs fewer bits than the anchor at equal quality.

use std::fmt;

use crate::codec_sim::{rd_sweep, RdSweep};
use crate::media_io::Corpus;
use crate::scaling::ScalingList;
use crate::taskloss::TaskLossProxy;
use crate::{Error, Result};

pub const MIN_POINTS: usize = 4;
const INTEGRATION_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    /// Bits per pixel.
    pub rate: f64,
    pub quality: f64,
}

/// At least four points, held in strictly increasing quality order.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts `points` by quality. Fails on fewer than four points, repeated
    /// qualities, non-positive rates or non-finite values.
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::Config(format!(
                "an RD curve needs at least {MIN_POINTS} points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.rate.is_finite() && p.rate > 0.0 && p.quality.is_finite()))
        {
            return Err(Error::Evaluation(format!(
                "invalid RD point (rate {}, quality {})",
                p.rate, p.quality
            )));
        }
        points.sort_by(|a, b| a.quality.total_cmp(&b.quality));
        if points.windows(2).any(|w| w[0].quality == w[1].quality) {
            return Err(Error::Evaluation("RD curve has repeated quality values".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn quality_range(&self) -> (f64, f64) {
        (self.points[0].quality, self.points[self.points.len() - 1].quality)
    }
}

/// Cubic `log10(rate)` fit in a normalized quality coordinate.
struct CubicFit {
    center: f64,
    scale: f64,
    coeffs: [f64; 4],
}

impl CubicFit {
    fn new(curve: &RdCurve) -> Result<Self> {
        let (lo, hi) = curve.quality_range();
        let center = 0.5 * (lo + hi);
        let scale = 0.5 * (hi - lo);
        // normal equations on t in [-1, 1]
        let mut ata = [[0.0f64; 4]; 4];
        let mut aty = [0.0f64; 4];
        for p in &curve.points {
            let t = (p.quality - center) / scale;
            let basis = [1.0, t, t * t, t * t * t];
            let y = p.rate.log10();
            for i in 0..4 {
                aty[i] += basis[i] * y;
                for j in 0..4 {
                    ata[i][j] += basis[i] * basis[j];
                }
            }
        }
        let coeffs = solve4(ata, aty)
            .ok_or_else(|| Error::Evaluation("singular system in cubic RD fit".into()))?;
        Ok(Self {
            center,
            scale,
            coeffs,
        })
    }

    fn eval(&self, quality: f64) -> f64 {
        let t = (quality - self.center) / self.scale;
        let c = &self.coeffs;
        ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
    }

    fn mean_over(&self, lo: f64, hi: f64) -> f64 {
        let n = INTEGRATION_POINTS - 1;
        let h = (hi - lo) / n as f64;
        let mut sum = 0.5 * (self.eval(lo) + self.eval(hi));
        for i in 1..n {
            sum += self.eval(lo + i as f64 * h);
        }
        sum * h / (hi - lo)
    }
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Mean `log10` rate difference `test - anchor` over the shared quality
/// interval.
pub fn mean_log_rate_difference(test: &RdCurve, anchor: &RdCurve) -> Result<f64> {
    let (tl, th) = test.quality_range();
    let (al, ah) = anchor.quality_range();
    let (lo, hi) = (tl.max(al), th.min(ah));
    if hi <= lo {
        return Err(Error::Evaluation(format!(
            "quality ranges [{tl}, {th}] and [{al}, {ah}] do not overlap"
        )));
    }
    let ft = CubicFit::new(test)?;
    let fa = CubicFit::new(anchor)?;
    Ok(ft.mean_over(lo, hi) - fa.mean_over(lo, hi))
}

/// BD-rate of `test` against `anchor` in percent.
pub fn bd_rate(test: &RdCurve, anchor: &RdCurve) -> Result<f64> {
    let d = mean_log_rate_difference(test, anchor)?;
    Ok((10f64.powf(d) - 1.0) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityAxis {
    Psnr,
    TaskQuality,
}

impl QualityAxis {
    pub const ALL: [QualityAxis; 2] = [QualityAxis::Psnr, QualityAxis::TaskQuality];
}

impl fmt::Display for QualityAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualityAxis::Psnr => "psnr",
            QualityAxis::TaskQuality => "task_quality",
        })
    }
}

impl RdSweep {
    /// Rate/quality curve of this sweep on one quality axis.
    pub fn curve(&self, axis: QualityAxis) -> Result<RdCurve> {
        RdCurve::new(
            self.points
                .iter()
                .map(|p| RdPoint {
                    rate: p.bpp,
                    quality: match axis {
                        QualityAxis::Psnr => p.psnr,
                        QualityAxis::TaskQuality => p.task_quality,
                    },
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdRow {
    pub list_name: String,
    pub axis: QualityAxis,
    pub bd_rate_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub anchor: String,
    /// One sweep per list, in input order.
    pub sweeps: Vec<(String, RdSweep)>,
    /// One row per non-anchor list and axis.
    pub rows: Vec<BdRow>,
}

impl ComparisonReport {
    /// `list_name,axis,bd_rate_percent`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("list_name,axis,bd_rate_percent\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.list_name, r.axis, r.bd_rate_percent));
        }
        out
    }

    /// Human-readable table with one line per list.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.list_name.len())
            .chain([4])
            .max()
            .unwrap_or(4);
        let mut out = format!(
            "{:<width$}  {:>12}  {:>18}   (anchor: {})\n",
            "list", "BD psnr [%]", "BD task_qual. [%]", self.anchor
        );
        let names: Vec<&str> = {
            let mut seen = Vec::new();
            for r in &self.rows {
                if !seen.contains(&r.list_name.as_str()) {
                    seen.push(r.list_name.as_str());
                }
            }
            seen
        };
        for name in names {
            let get = |axis| {
                self.rows
                    .iter()
                    .find(|r| r.list_name == name && r.axis == axis)
                    .map(|r| format!("{:.2}", r.bd_rate_percent))
                    .unwrap_or_else(|| "-".into())
            };
            out.push_str(&format!(
                "{name:<width$}  {:>12}  {:>18}\n",
                get(QualityAxis::Psnr),
                get(QualityAxis::TaskQuality)
            ));
        }
        out
    }
}

/// Sweeps every list and reports BD-rates of each non-anchor list against
/// `anchor_name` on both quality axes.
pub fn compare_lists(
    corpus: &Corpus,
    qps: &[i32],
    lists: &[(String, ScalingList)],
    block_size: usize,
    proxy: &TaskLossProxy,
    anchor_name: &str,
) -> Result<ComparisonReport> {
    if !lists.iter().any(|(n, _)| n == anchor_name) {
        return Err(Error::Config(format!("anchor {anchor_name:?} is not among the lists")));
    }
    if let Some(dup) = lists
        .iter()
        .enumerate()
        .find(|(i, (n, _))| lists[..*i].iter().any(|(m, _)| m == n))
    {
        return Err(Error::Config(format!("list name {:?} given twice", dup.1 .0)));
    }
    let sweeps = lists
        .iter()
        .map(|(name, list)| Ok((name.clone(), rd_sweep(corpus, qps, list, block_size, proxy)?)))
        .collect::<Result<Vec<_>>>()?;
    let anchor = &sweeps.iter().find(|(n, _)| n == anchor_name).expect("checked").1;

    let mut rows = Vec::new();
    for (name, sweep) in sweeps.iter().filter(|(n, _)| n != anchor_name) {
        for axis in QualityAxis::ALL {
            rows.push(BdRow {
                list_name: name.clone(),
                axis,
                bd_rate_percent: bd_rate(&sweep.curve(axis)?, &anchor.curve(axis)?)?,
            });
        }
    }
    Ok(ComparisonReport {
        anchor: anchor_name.to_string(),
        sweeps,
        rows,
    })
}

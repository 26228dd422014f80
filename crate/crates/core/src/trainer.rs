//! Learning a scaling matrix for one block size.
//!
//! Each training step runs the noise-proxy chain on a batch of patches:
//! tile, forward DCT, add `U(-0.5, 0.5) * c * S / 16` per coefficient,
//! inverse DCT, untile. It then evaluates
//!
//! ```text
//! L = mean_batch L_task(distorted | S) + λ * 16 / mean(S)
//! ```
//!
//! Gradients flow back analytically. The task-loss gradient over pixels is
//! taken to the coefficient domain with the forward DCT (the adjoint of the
//! orthonormal inverse DCT). Each coefficient's share then reaches `S_k`
//! through the injected noise `n_k * c / 16`. Finally the sigmoid Jacobian
//! maps the result onto the raw parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::media_io::{crop_patches, Corpus, ImageTensor, Plane};
use crate::scaling::{
    matrix_jacobian_diag, params_to_matrix, round_matrix, ScalingMatrix, ScalingParams, MAX_SCALE,
    MIN_SCALE, NEUTRAL_SCALE,
};
use crate::taskloss::TaskLossProxy;
use crate::transform::{tile, untile, BlockGrid, DctPlan};
use crate::{check_block_size, Error, Result};

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_LR_AFTER_HALF: f64 = 0.001;
pub const DEFAULT_PATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub block_size: usize,
    /// Noise strength `c`.
    pub noise_strength: f64,
    /// Rate-loss weight `λ`.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    /// Learning rate from epoch `ceil(epochs / 2)` on.
    pub lr_after_half: f64,
    pub seed: u64,
    pub patch_h: usize,
    pub patch_w: usize,
    pub proxy: TaskLossProxy,
    pub adam: Adam,
}

impl TrainConfig {
    pub fn new(block_size: usize, noise_strength: f64, lambda: f64) -> Self {
        Self {
            block_size,
            noise_strength,
            lambda,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            lr_initial: DEFAULT_LR,
            lr_after_half: DEFAULT_LR_AFTER_HALF,
            seed: 0,
            patch_h: DEFAULT_PATCH,
            patch_w: DEFAULT_PATCH,
            proxy: TaskLossProxy::lowfreq_mse(),
            adam: Adam::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_block_size(self.block_size)?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.noise_strength.is_finite() && self.noise_strength >= 0.0) {
            return bad(format!("noise strength {} must be finite and >= 0", self.noise_strength));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        for lr in [self.lr_initial, self.lr_after_half] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("learning rate {lr} must be positive"));
            }
        }
        if self.patch_h == 0
            || self.patch_w == 0
            || !self.patch_h.is_multiple_of(self.block_size)
            || !self.patch_w.is_multiple_of(self.block_size)
        {
            return bad(format!(
                "patch {}x{} must be a non-empty multiple of the block size {}",
                self.patch_h, self.patch_w, self.block_size
            ));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch < self.epochs.div_ceil(2) {
            self.lr_initial
        } else {
            self.lr_after_half
        }
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ScalingParams,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Raw parameters at zero (every factor 72), zero moments.
    pub fn new(block_size: usize, seed: u64) -> Result<Self> {
        let params = ScalingParams::zeros(block_size)?;
        let n = block_size * block_size;
        Ok(Self {
            params,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn matrix(&self) -> ScalingMatrix {
        params_to_matrix(&self.params)
    }
}

/// `16 / mean(S)`.
pub fn rate_loss(m: &ScalingMatrix) -> f64 {
    NEUTRAL_SCALE / m.mean()
}

/// `∂(16 / mean(S)) / ∂S_k = -16 / (B² mean(S)²)`, identical for every `k`.
pub fn rate_loss_grad(m: &ScalingMatrix) -> Vec<f64> {
    let n = m.values().len() as f64;
    let mean = m.mean();
    vec![-NEUTRAL_SCALE / (n * mean * mean); m.values().len()]
}

/// Uniform noise samples in `[-0.5, 0.5)`, one grid per channel and patch.
pub type NoiseField = Vec<[BlockGrid; 3]>;

/// Draws noise for `count` patches of the given size. Samples are taken in
/// patch, channel, block (raster), coefficient (raster) order.
pub fn draw_noise(
    rng: &mut ChaCha8Rng,
    count: usize,
    block_size: usize,
    width: usize,
    height: usize,
) -> NoiseField {
    let (rows, cols) = (height.div_ceil(block_size), width.div_ceil(block_size));
    (0..count)
        .map(|_| {
            std::array::from_fn(|_| {
                let mut g = BlockGrid::zeros(block_size, rows, cols);
                for block in g.blocks_mut() {
                    for v in block {
                        *v = rng.gen::<f64>() - 0.5;
                    }
                }
                g
            })
        })
        .collect()
}

fn check_patch(patch: &ImageTensor, block_size: usize) -> Result<()> {
    if !patch.width().is_multiple_of(block_size) || !patch.height().is_multiple_of(block_size) {
        return Err(Error::Dimension(format!(
            "patch {}x{} is not a multiple of block size {block_size}",
            patch.width(),
            patch.height()
        )));
    }
    Ok(())
}

fn check_noise(noise: &[BlockGrid; 3], patch: &ImageTensor, block_size: usize) -> Result<()> {
    let (rows, cols) = (patch.height() / block_size, patch.width() / block_size);
    if noise
        .iter()
        .any(|g| g.block_size() != block_size || g.rows() != rows || g.cols() != cols)
    {
        return Err(Error::Dimension("noise field does not match patch layout".into()));
    }
    Ok(())
}

/// Applies the noise proxy with a given noise field.
pub fn distort_with_noise(
    patch: &ImageTensor,
    m: &ScalingMatrix,
    c: f64,
    noise: &[BlockGrid; 3],
) -> Result<ImageTensor> {
    let b = m.size();
    check_patch(patch, b)?;
    check_noise(noise, patch, b)?;
    let plan = DctPlan::new(b)?;
    let amp: Vec<f64> = m.values().iter().map(|s| c * s / NEUTRAL_SCALE).collect();
    let mut planes = Vec::with_capacity(3);
    for (plane, n) in patch.channels().iter().zip(noise) {
        planes.push(distort_plane(plane, &plan, &amp, n)?);
    }
    ImageTensor::from_channels(planes.try_into().expect("three channels"))
}

fn distort_plane(plane: &Plane, plan: &DctPlan, amp: &[f64], noise: &BlockGrid) -> Result<Plane> {
    let mut grid = tile(plane, plan.size());
    grid.forward_dct(plan);
    for (block, nb) in grid.blocks_mut().zip(noise.blocks()) {
        for ((x, n), a) in block.iter_mut().zip(nb).zip(amp) {
            *x += n * a;
        }
    }
    grid.inverse_dct(plan);
    untile(&grid, plane.width(), plane.height())
}

/// Draws fresh noise from `rng` and distorts `patch`. The same matrix is
/// applied to all three channels.
pub fn distort(
    patch: &ImageTensor,
    m: &ScalingMatrix,
    c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageTensor, [BlockGrid; 3])> {
    check_patch(patch, m.size())?;
    let noise = draw_noise(rng, 1, m.size(), patch.width(), patch.height())
        .pop()
        .expect("one noise field");
    let out = distort_with_noise(patch, m, c, &noise)?;
    Ok((out, noise))
}

/// Objective value and gradient for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    /// `task_loss + λ * rate_loss`.
    pub total: f64,
    pub task_loss: f64,
    pub rate_loss: f64,
    /// Gradient with respect to the raw parameters.
    pub grad: Vec<f64>,
}

/// Per-patch task loss and its gradient with respect to `S`.
fn patch_task_grad(
    patch: &ImageTensor,
    noise: &[BlockGrid; 3],
    m: &ScalingMatrix,
    plan: &DctPlan,
    c: f64,
    proxy: &TaskLossProxy,
) -> Result<(f64, Vec<f64>)> {
    let distorted = distort_with_noise(patch, m, c, noise)?;
    let (loss, g_pixel) = proxy.value_and_gradient(&distorted, patch)?;
    let mut g_s = vec![0.0; m.values().len()];
    for (gp, n) in g_pixel.channels().iter().zip(noise) {
        let mut g_coeff = tile(gp, plan.size());
        g_coeff.forward_dct(plan);
        for (gb, nb) in g_coeff.blocks().zip(n.blocks()) {
            for ((acc, g), nk) in g_s.iter_mut().zip(gb).zip(nb) {
                *acc += g * nk;
            }
        }
    }
    let scale = c / NEUTRAL_SCALE;
    g_s.iter_mut().for_each(|v| *v *= scale);
    Ok((loss, g_s))
}

/// Loss and gradient with an explicit noise field (one entry per patch).
pub fn loss_and_grad_with_noise(
    params: &ScalingParams,
    batch: &[ImageTensor],
    noise: &[[BlockGrid; 3]],
    cfg: &TrainConfig,
) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if batch.len() != noise.len() {
        return Err(Error::Dimension(format!(
            "{} patches but {} noise fields",
            batch.len(),
            noise.len()
        )));
    }
    let m = params_to_matrix(params);
    let plan = DctPlan::new(m.size())?;
    let c = cfg.noise_strength;
    let per_patch = |(p, n): (&ImageTensor, &[BlockGrid; 3])| {
        patch_task_grad(p, n, &m, &plan, c, &cfg.proxy)
    };
    // results are collected in batch order either way; the reduction below
    // is therefore independent of scheduling
    let results: Vec<(f64, Vec<f64>)> = match cfg.proxy {
        TaskLossProxy::External(_) => batch.iter().zip(noise).map(per_patch).collect::<Result<_>>()?,
        _ => batch
            .par_iter()
            .zip(noise.par_iter())
            .map(per_patch)
            .collect::<Result<_>>()?,
    };

    let inv = 1.0 / batch.len() as f64;
    let mut task_loss = 0.0;
    let mut g_s = vec![0.0; m.values().len()];
    for (loss, g) in &results {
        task_loss += loss;
        for (acc, v) in g_s.iter_mut().zip(g) {
            *acc += v;
        }
    }
    task_loss *= inv;

    let rate = rate_loss(&m);
    let rate_g = rate_loss_grad(&m);
    let jac = matrix_jacobian_diag(params);
    let grad = g_s
        .iter()
        .zip(&rate_g)
        .zip(&jac)
        .map(|((t, r), j)| (t * inv + cfg.lambda * r) * j)
        .collect();
    Ok(LossAndGrad {
        total: task_loss + cfg.lambda * rate,
        task_loss,
        rate_loss: rate,
        grad,
    })
}

/// Draws fresh noise from the state's generator and evaluates the batch.
pub fn loss_and_grad(state: &mut TrainState, batch: &[ImageTensor], cfg: &TrainConfig) -> Result<LossAndGrad> {
    let first = batch.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    if batch.iter().any(|p| !p.same_shape(first)) {
        return Err(Error::Dimension("patches in a batch must share one size".into()));
    }
    let noise = draw_noise(
        &mut state.rng,
        batch.len(),
        cfg.block_size,
        first.width(),
        first.height(),
    );
    loss_and_grad_with_noise(&state.params, batch, &noise, cfg)
}

/// One bias-corrected Adam update of the raw parameters.
pub fn adam_step(state: &mut TrainState, grad: &[f64], lr: f64, adam: &Adam) -> Result<()> {
    if grad.len() != state.adam_m.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            state.adam_m.len()
        )));
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient {g} at step {}", state.step)));
    }
    let t = state.step + 1;
    let bc1 = 1.0 - adam.beta1.powf(t as f64);
    let bc2 = 1.0 - adam.beta2.powf(t as f64);
    let mut next = state.params.raw().to_vec();
    for (i, &g) in grad.iter().enumerate() {
        let m = adam.beta1 * state.adam_m[i] + (1.0 - adam.beta1) * g;
        let v = adam.beta2 * state.adam_v[i] + (1.0 - adam.beta2) * g * g;
        state.adam_m[i] = m;
        state.adam_v[i] = v;
        next[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + adam.eps);
    }
    if let Some(p) = next.iter().find(|p| !p.is_finite()) {
        return Err(Error::Numeric(format!("update produced non-finite parameter {p} at step {t}")));
    }
    state.params.raw_mut().copy_from_slice(&next);
    state.step = t;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean task loss over the epoch's batches.
    pub task_loss: f64,
    /// Rate loss at the end of the epoch.
    pub rate_loss: f64,
    /// Mean scaling factor at the end of the epoch.
    pub mean_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub total_loss: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub final_matrix: ScalingMatrix,
    pub rounded_matrix: ScalingMatrix,
}

impl TrainReport {
    pub fn final_mean_s(&self) -> f64 {
        self.final_matrix.mean()
    }

    /// `epoch,task_loss,rate_loss,mean_S` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,task_loss,rate_loss,mean_S\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.task_loss, e.rate_loss, e.mean_s));
        }
        out
    }

    /// `row,col,value` heat-map data of the final real-valued matrix.
    pub fn heat_csv(&self) -> String {
        let m = &self.final_matrix;
        let mut out = String::from("row,col,value\n");
        for r in 0..m.size() {
            for c in 0..m.size() {
                out.push_str(&format!("{r},{c},{}\n", m.at(r, c)));
            }
        }
        out
    }
}

/// Seed for the patch offsets of corpus entry `index`.
fn patch_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Crops the training patches of every corpus image with per-image seeds
/// derived from `cfg.seed`.
pub fn training_patches(corpus: &Corpus, cfg: &TrainConfig) -> Result<Vec<ImageTensor>> {
    let mut patches = Vec::new();
    for (i, img) in corpus.images().enumerate() {
        patches.extend(crop_patches(img, cfg.patch_h, cfg.patch_w, patch_seed(cfg.seed, i))?);
    }
    Ok(patches)
}

/// Trains from raw parameters at zero. Patches are cropped once; their order
/// is reshuffled every epoch and noise is drawn fresh for every step.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_observer(corpus, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_observer(
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let patches = training_patches(corpus, cfg)?;
    let mut state = TrainState::new(cfg.block_size, cfg.seed)?;
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_for_epoch(epoch);
        order.shuffle(&mut state.rng);
        let mut task_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ImageTensor> = chunk.iter().map(|&i| patches[i].clone()).collect();
            let lg = loss_and_grad(&mut state, &batch, cfg)?;
            adam_step(&mut state, &lg.grad, lr, &cfg.adam)?;
            task_sum += lg.task_loss;
            batches += 1;

            let m = state.matrix();
            let (min_s, max_s) = m
                .values()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if !(min_s > MIN_SCALE && max_s < MAX_SCALE) {
                return Err(Error::Numeric(format!(
                    "scaling factors left (16, 128) at step {}: [{min_s}, {max_s}]",
                    state.step
                )));
            }
            steps.push(StepRecord {
                step: state.step,
                total_loss: lg.total,
                min_s,
                max_s,
                mean_s: m.mean(),
            });
        }
        let m = state.matrix();
        let record = EpochRecord {
            epoch,
            task_loss: task_sum / batches as f64,
            rate_loss: rate_loss(&m),
            mean_s: m.mean(),
        };
        on_epoch(&record);
        epochs.push(record);
    }

    let final_matrix = state.matrix();
    Ok(TrainReport {
        epochs,
        steps,
        rounded_matrix: round_matrix(&final_matrix),
        final_matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_io::Plane;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageTensor {
        let mut plane = || Plane::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..255.0)).collect()).unwrap();
        ImageTensor::new(plane(), plane(), plane()).unwrap()
    }

    #[test]
    fn rate_loss_values() {
        let m = |v| ScalingMatrix::flat(8, v).unwrap();
        assert_eq!(rate_loss(&m(16.0)), 1.0);
        assert_eq!(rate_loss(&m(128.0)), 0.125);
        assert_eq!(rate_loss(&m(64.0)), 0.25);
        assert_eq!(rate_loss(&ScalingMatrix::flat(2, 64.0).unwrap()), 0.25);
    }

    #[test]
    fn rate_loss_grad_closed_form() {
        let g = rate_loss_grad(&ScalingMatrix::flat(8, 16.0).unwrap());
        assert!(g.iter().all(|&v| (v - (-1.0 / 1024.0)).abs() < 1e-18));
        let g = rate_loss_grad(&ScalingMatrix::flat(2, 32.0).unwrap());
        assert!(g.iter().all(|&v| (v - (-3.90625e-3)).abs() < 1e-18));
    }

    #[test]
    fn rate_loss_grad_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..16).map(|_| rng.gen_range(17.0..127.0)).collect();
        let m = ScalingMatrix::new(4, vals.clone()).unwrap();
        let g = rate_loss_grad(&m);
        let h = 1e-4;
        for k in 0..16 {
            let mut p = vals.clone();
            p[k] += h;
            let mut q = vals.clone();
            q[k] -= h;
            let fd = (rate_loss(&ScalingMatrix::new(4, p).unwrap()) - rate_loss(&ScalingMatrix::new(4, q).unwrap()))
                / (2.0 * h);
            assert!(((fd - g[k]) / g[k]).abs() < 1e-6, "{fd} vs {}", g[k]);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let patch = random_image(&mut rng, 16, 8);
        let m = ScalingMatrix::flat(8, 100.0).unwrap();
        let (out, _) = distort(&patch, &m, 0.0, &mut rng).unwrap();
        for (a, b) in out.channels().iter().zip(patch.channels()) {
            for (x, y) in a.samples().iter().zip(b.samples()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perturbation_bounded_per_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let patch = random_image(&mut rng, 8, 8);
        let vals: Vec<f64> = (0..16).map(|i| 16.0 + 7.0 * i as f64).collect();
        let m = ScalingMatrix::new(4, vals).unwrap();
        let c = 16.0;
        let (out, _) = distort(&patch, &m, c, &mut rng).unwrap();
        let plan = DctPlan::new(4).unwrap();
        for (a, b) in out.channels().iter().zip(patch.channels()) {
            let (mut ga, mut gb) = (tile(a, 4), tile(b, 4));
            ga.forward_dct(&plan);
            gb.forward_dct(&plan);
            for (ba, bb) in ga.blocks().zip(gb.blocks()) {
                for ((x, y), s) in ba.iter().zip(bb).zip(m.values()) {
                    assert!((x - y).abs() <= 0.5 * c * s / 16.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn distort_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patch = random_image(&mut rng, 8, 8);
        let m = ScalingMatrix::flat(4, 50.0).unwrap();
        let a = distort(&patch, &m, 4.0, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = distort(&patch, &m, 4.0, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distort_rejects_unaligned_patch() {
        let patch = ImageTensor::filled(12, 8, 1.0);
        let m = ScalingMatrix::flat(8, 16.0).unwrap();
        assert!(distort(&patch, &m, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    fn cfg(b: usize, c: f64, lambda: f64) -> TrainConfig {
        let mut cfg = TrainConfig::new(b, c, lambda);
        cfg.patch_h = 8;
        cfg.patch_w = 8;
        cfg
    }

    #[test]
    fn zero_noise_leaves_only_rate_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = vec![random_image(&mut rng, 8, 8)];
        let mut state = TrainState::new(4, 0).unwrap();
        state.params = ScalingParams::new(4, (0..16).map(|i| 0.2 * i as f64 - 1.5).collect()).unwrap();
        let c = cfg(4, 0.0, 2.0);
        let lg = loss_and_grad(&mut state, &batch, &c).unwrap();
        let m = state.matrix();
        let expect: Vec<f64> = rate_loss_grad(&m)
            .iter()
            .zip(matrix_jacobian_diag(&state.params))
            .map(|(r, j)| 2.0 * r * j)
            .collect();
        assert_eq!(lg.grad, expect);
        assert!(lg.task_loss < 1e-20);

        let zero = loss_and_grad(&mut state, &batch, &cfg(4, 0.0, 0.0)).unwrap();
        assert!(zero.grad.iter().all(|&g| g == 0.0));
    }

    /// Normwise relative error of the analytic gradient against central
    /// differences of the total loss with the noise held fixed.
    fn gradient_error(b: usize, patch: usize, proxy: TaskLossProxy, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = vec![random_image(&mut rng, patch, patch), random_image(&mut rng, patch, patch)];
        let noise = draw_noise(&mut rng, 2, b, patch, patch);
        let mut c = cfg(b, 16.0, 10.0);
        c.proxy = proxy;
        let raw: Vec<f64> = (0..b * b).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let params = ScalingParams::new(b, raw.clone()).unwrap();
        let analytic = loss_and_grad_with_noise(&params, &batch, &noise, &c).unwrap().grad;
        let h = 1e-5;
        let (mut err, mut norm) = (0.0f64, 0.0f64);
        for k in 0..b * b {
            let eval = |d: f64| {
                let mut r = raw.clone();
                r[k] += d;
                loss_and_grad_with_noise(&ScalingParams::new(b, r).unwrap(), &batch, &noise, &c)
                    .unwrap()
                    .total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            err = err.max((fd - analytic[k]).abs());
            norm = norm.max(analytic[k].abs());
        }
        err / norm
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        for proxy in [TaskLossProxy::lowfreq_mse(), TaskLossProxy::EdgeMse] {
            for (b, patch) in [(2, 8), (4, 8), (8, 16)] {
                let e = gradient_error(b, patch, proxy.clone(), 10 + b as u64);
                assert!(e < 1e-4, "{proxy} B={b}: {e}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient() {
        let mut state = TrainState::new(2, 0).unwrap();
        let before = state.params.clone();
        adam_step(&mut state, &[0.0; 4], 0.01, &Adam::default()).unwrap();
        assert_eq!(state.params, before);
        assert_eq!(state.step, 1);
        // existing momentum keeps moving the parameters and decays
        state.adam_m = vec![0.5; 4];
        state.adam_v = vec![0.25; 4];
        adam_step(&mut state, &[0.0; 4], 0.01, &Adam::default()).unwrap();
        assert!(state.adam_m.iter().all(|&m| (m - 0.45).abs() < 1e-15));
        assert!(state.adam_v.iter().all(|&v| (v - 0.24975).abs() < 1e-15));
        assert!(state.params.raw().iter().all(|&r| r < 0.0));
    }

    #[test]
    fn adam_first_step() {
        let mut state = TrainState::new(2, 0).unwrap();
        let g = [0.3, -2.0, 1e-3, 0.0];
        adam_step(&mut state, &g, 0.01, &Adam::default()).unwrap();
        for (p, gk) in state.params.raw().iter().zip(g) {
            // m̂ = g and v̂ = g² after bias correction
            let expect = -0.01 * gk / (gk.abs() + 1e-8);
            assert!((p - expect).abs() < 1e-15, "{p} vs {expect}");
        }
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let mut a = TrainState::new(2, 5).unwrap();
        let mut b = a.clone();
        adam_step(&mut a, &[0.1, 0.2, 0.3, 0.4], 0.01, &Adam::default()).unwrap();
        adam_step(&mut b, &[0.1, 0.2, 0.3, 0.4], 0.01, &Adam::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!((&a.adam_m, &a.adam_v), (&b.adam_m, &b.adam_v));
        assert!(matches!(
            adam_step(&mut b, &[f64::NAN, 0.0, 0.0, 0.0], 0.01, &Adam::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn lr_switches_at_half() {
        let mut c = cfg(8, 1.0, 1.0);
        assert_eq!((0..20).filter(|&e| c.lr_for_epoch(e) == DEFAULT_LR).count(), 10);
        c.epochs = 5;
        assert_eq!(c.lr_for_epoch(2), DEFAULT_LR);
        assert_eq!(c.lr_for_epoch(3), DEFAULT_LR_AFTER_HALF);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(3, 1.0, 1.0).validate().is_err());
        assert!(cfg(8, -1.0, 1.0).validate().is_err());
        assert!(cfg(8, 1.0, f64::NAN).validate().is_err());
        let mut c = cfg(8, 1.0, 1.0);
        c.patch_w = 12;
        assert!(c.validate().is_err());
        c.patch_w = 16;
        c.epochs = 0;
        assert!(c.validate().is_err());
        assert!(train(&Corpus::default(), &cfg(8, 1.0, 1.0)).is_err());
    }

    fn small_corpus(n: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Corpus::new((0..n).map(|i| (format!("{i:02}"), random_image(&mut rng, 16, 16))).collect()).unwrap()
    }

    #[test]
    fn no_rate_loss_pulls_scaling_down() {
        let corpus = small_corpus(4, 1);
        let mut c = cfg(4, 8.0, 0.0);
        c.epochs = 10;
        c.batch_size = 4;
        let report = train(&corpus, &c).unwrap();
        assert!(report.final_mean_s() < 72.0, "{}", report.final_mean_s());
        assert!(report.epochs.windows(2).all(|w| w[1].mean_s <= w[0].mean_s));
    }

    #[test]
    fn pure_rate_loss_saturates() {
        let corpus = small_corpus(4, 2);
        let mut c = cfg(4, 0.0, 1.0);
        c.epochs = 40;
        c.batch_size = 1;
        let report = train(&corpus, &c).unwrap();
        // 16 patches per epoch, half of the 640 steps at the initial rate
        assert_eq!(report.steps.len(), 640);
        assert!(report.final_mean_s() > 110.0, "{}", report.final_mean_s());
        assert!(report.epochs.windows(2).all(|w| w[1].mean_s > w[0].mean_s));
        assert!(report.steps.iter().all(|s| s.min_s > 16.0 && s.max_s < 128.0));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = small_corpus(3, 3);
        let mut c = cfg(4, 16.0, 1.0);
        c.epochs = 3;
        c.batch_size = 2;
        let a = train(&corpus, &c).unwrap();
        let b = train(&corpus, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        c.seed = 1;
        assert_ne!(train(&corpus, &c).unwrap(), a);
    }
}

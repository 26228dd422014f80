//! Deterministic synthetic RGB test images.
//!
//! Each image mixes a smooth colour gradient, a few filled ellipses and
//! rectangles, bilinear value noise at two scales, an oriented grating and
//! light pixel noise. Samples are whole numbers in `[0, 255]`, so images
//! round-trip losslessly through 8-bit PNM files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::media_io::{Corpus, ImageTensor, Plane};
use crate::Result;

struct ValueNoise {
    cell: f64,
    cols: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let grid = (0..cols * rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { cell, cols, grid }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (smooth(gx.fract()), smooth(gy.fract()));
        let g = |c: usize, r: usize| self.grid[r * self.cols + c];
        let top = g(ix, iy) * (1.0 - fx) + g(ix + 1, iy) * fx;
        let bottom = g(ix, iy + 1) * (1.0 - fx) + g(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

/// A `width`×`height` image determined entirely by `seed`.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A6E);
    let (w, h) = (width as f64, height as f64);

    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(60.0..190.0));
    let grad: [(f64, f64); 3] = std::array::from_fn(|_| (rng.gen_range(-70.0..70.0), rng.gen_range(-70.0..70.0)));

    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.gen_range(2..6))
        .map(|_| {
            let shape = if rng.gen_bool(0.6) {
                Shape::Ellipse {
                    cx: rng.gen_range(0.0..w),
                    cy: rng.gen_range(0.0..h),
                    rx: rng.gen_range(0.08..0.35) * w,
                    ry: rng.gen_range(0.08..0.35) * h,
                }
            } else {
                let (x0, y0) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.1..0.5) * w,
                    y1: y0 + rng.gen_range(0.1..0.5) * h,
                }
            };
            (shape, std::array::from_fn(|_| rng.gen_range(-80.0..80.0)))
        })
        .collect();

    let coarse_cell = rng.gen_range(12.0..24.0);
    let coarse = ValueNoise::new(&mut rng, width, height, coarse_cell);
    let fine_cell = rng.gen_range(3.0..6.0);
    let fine = ValueNoise::new(&mut rng, width, height, fine_cell);
    let coarse_amp = rng.gen_range(10.0..30.0);
    let fine_amp = rng.gen_range(3.0..12.0);

    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let freq = rng.gen_range(0.15..0.9);
    let grating_amp = if rng.gen_bool(0.5) { rng.gen_range(4.0..20.0) } else { 0.0 };
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
    let pixel_noise = rng.gen_range(0.5..3.0);

    let mut planes: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(width * height));
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let texture = coarse_amp * coarse.at(fx, fy) + fine_amp * fine.at(fx, fy);
            let wave = grating_amp * (freq * (fx * theta.cos() + fy * theta.sin())).sin();
            for (c, plane) in planes.iter_mut().enumerate() {
                let mut v = base[c] + grad[c].0 * (fx / w - 0.5) + grad[c].1 * (fy / h - 0.5);
                for (shape, colour) in &shapes {
                    if shape.contains(fx, fy) {
                        v += colour[c];
                    }
                }
                v += tint[c] * (texture + wave);
                v += rng.gen_range(-pixel_noise..pixel_noise);
                plane.push(v.round().clamp(0.0, 255.0));
            }
        }
    }
    let [r, g, b] = planes.map(|p| Plane::new(width, height, p).expect("sample count matches"));
    ImageTensor::new(r, g, b).expect("planes share a shape")
}

/// `count` images named `synth_000`, `synth_001`, ..., seeded from `seed`.
pub fn synthetic_corpus(count: usize, width: usize, height: usize, seed: u64) -> Result<Corpus> {
    Corpus::new(
        (0..count)
            .map(|i| {
                let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                (format!("synth_{i:03}"), synthetic_image(width, height, s))
            })
            .collect(),
    )
}

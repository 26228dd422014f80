//! Images, corpora and deterministic patch cropping.
//!
//! Only binary PNM is supported: P6 (RGB) and P5 (grayscale, replicated to
//! three channels), both with a maxval of 255. Samples are held as `f64` in
//! `[0, 255]` from load time on.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A single channel of samples in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "plane must be at least 1x1, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} plane needs {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty plane");
        Self {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.samples[y * self.width + x] = value;
    }

    /// Copies out the `w`x`h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Plane> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::Dimension(format!(
                "window {w}x{h}+{x}+{y} outside {}x{} plane",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            samples.extend_from_slice(&self.samples[start..start + w]);
        }
        Plane::new(w, h, samples)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Three planes of identical size in R, G, B order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: [Plane; 3],
}

impl ImageTensor {
    pub fn new(r: Plane, g: Plane, b: Plane) -> Result<Self> {
        let (w, h) = (r.width, r.height);
        if [&g, &b].iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::Dimension(format!(
                "channel sizes differ: {}x{}, {}x{}, {}x{}",
                r.width, r.height, g.width, g.height, b.width, b.height
            )));
        }
        Ok(Self {
            channels: [r, g, b],
        })
    }

    pub fn from_channels(channels: [Plane; 3]) -> Result<Self> {
        let [r, g, b] = channels;
        Self::new(r, g, b)
    }

    /// Replicates one plane into all three channels.
    pub fn gray(plane: Plane) -> Self {
        Self {
            channels: [plane.clone(), plane.clone(), plane],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::gray(Plane::filled(width, height, value))
    }

    pub fn width(&self) -> usize {
        self.channels[0].width
    }

    pub fn height(&self) -> usize {
        self.channels[0].height
    }

    pub fn channels(&self) -> &[Plane; 3] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Plane; 3] {
        &mut self.channels
    }

    pub fn channel(&self, index: usize) -> &Plane {
        &self.channels[index]
    }

    pub fn into_channels(self) -> [Plane; 3] {
        self.channels
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.width() == other.width() && self.height() == other.height()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> ImageTensor {
        ImageTensor {
            channels: [
                self.channels[0].map(f),
                self.channels[1].map(f),
                self.channels[2].map(f),
            ],
        }
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<ImageTensor> {
        Ok(ImageTensor {
            channels: [
                self.channels[0].crop(x, y, w, h)?,
                self.channels[1].crop(x, y, w, h)?,
                self.channels[2].crop(x, y, w, h)?,
            ],
        })
    }

    /// Samples clamped to `[0, 255]` and rounded half away from zero, the
    /// values `save_pnm` stores.
    pub fn quantized_to_bytes(&self) -> ImageTensor {
        self.map(to_byte_value)
    }
}

fn to_byte_value(v: f64) -> f64 {
    v.clamp(0.0, 255.0).round()
}

/// Named images in lexicographic identifier order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entries: Vec<(String, ImageTensor)>,
}

impl Corpus {
    /// Builds a corpus, sorting entries by identifier. Duplicate identifiers
    /// are rejected.
    pub fn new(mut entries: Vec<(String, ImageTensor)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Config(format!(
                "duplicate corpus identifier {:?}",
                w[0].0
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, ImageTensor)] {
        &self.entries
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTensor> {
        self.entries.iter().map(|(_, img)| img)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads every `.ppm`/`.pgm` file directly inside `dir` (no recursion).
/// Identifiers are file names.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_pnm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"));
        if is_pnm && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();

    let loaded: Vec<Result<(String, ImageTensor)>> = {
        use rayon::prelude::*;
        paths
            .par_iter()
            .map(|p| {
                let id = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                load_pnm(p).map(|img| (id, img))
            })
            .collect()
    };
    Corpus::new(loaded.into_iter().collect::<Result<Vec<_>>>()?)
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                message: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Decodes an in-memory binary PNM (P5 or P6, maxval 255).
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageTensor> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                message: "expected magic P5 or P6".into(),
            })
        }
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_offset = {
        cur.skip_whitespace_and_comments();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_offset,
            message: format!("maxval {maxval} unsupported, expected 255"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: maxval_offset,
            message: format!("empty image {width}x{height}"),
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: cur.pos,
                message: "expected single whitespace after maxval".into(),
            })
        }
    }

    let payload = &bytes[cur.pos..];
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Parse {
            offset: 2,
            message: "image dimensions overflow".into(),
        })?;
    if payload.len() < needed {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "truncated payload: {width}x{height} needs {needed} bytes, found {}",
                payload.len()
            ),
        });
    }

    let pixels = width * height;
    if channels == 1 {
        let samples = payload[..pixels].iter().map(|&b| f64::from(b)).collect();
        return Ok(ImageTensor::gray(Plane::new(width, height, samples)?));
    }
    let mut planes: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(pixels));
    for px in payload[..needed].chunks_exact(3) {
        for (plane, &b) in planes.iter_mut().zip(px) {
            plane.push(f64::from(b));
        }
    }
    let [r, g, b] = planes;
    ImageTensor::new(
        Plane::new(width, height, r)?,
        Plane::new(width, height, g)?,
        Plane::new(width, height, b)?,
    )
}

/// Encodes as binary P6, clamping to `[0, 255]` and rounding half away
/// from zero.
pub fn encode_ppm(img: &ImageTensor) -> Result<Vec<u8>> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    let [r, g, b] = img.channels();
    for i in 0..w * h {
        for plane in [r, g, b] {
            let v = plane.samples[i];
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite sample {v} at index {i}")));
            }
            out.push(to_byte_value(v) as u8);
        }
    }
    Ok(out)
}

pub fn save_pnm(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Crops `(height / patch_h) * (width / patch_w)` patches at top-left
/// offsets drawn uniformly from the valid range by a generator seeded with
/// `seed`. Offsets are independent of the image content.
pub fn crop_patches(
    img: &ImageTensor,
    patch_h: usize,
    patch_w: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    let (w, h) = (img.width(), img.height());
    if patch_h == 0 || patch_w == 0 || patch_h > h || patch_w > w {
        return Err(Error::Dimension(format!(
            "patch {patch_w}x{patch_h} does not fit in {w}x{h} image"
        )));
    }
    let count = (h / patch_h) * (w / patch_w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let y = rng.gen_range(0..=h - patch_h);
            let x = rng.gen_range(0..=w - patch_w);
            img.crop(x, y, patch_w, patch_h)
        })
        .collect()
}

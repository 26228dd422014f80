//! Scaling matrices and lists.
//!
//! A scaling factor of 16 leaves the quantizer step untouched; larger values
//! coarsen it. Trainable matrices are parameterized as
//! `S = 16 + 112 * sigmoid(raw)`, which keeps every factor strictly inside
//! `(16, 128)` regardless of the raw values.
//!
//! Lists are keyed by block size, colour component and prediction mode.
//! Lookups that miss fall back along a fixed chain: the requested key, then
//! the luma entry of the same mode, then the intra entry of the same
//! component, then the intra luma entry.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::{check_block_size, Error, Result, BLOCK_SIZES};

pub const NEUTRAL_SCALE: f64 = 16.0;
pub const MIN_SCALE: f64 = 16.0;
pub const MAX_SCALE: f64 = 128.0;
const SCALE_SPAN: f64 = MAX_SCALE - MIN_SCALE;

/// Header line of the native list format.
pub const LIST_MAGIC: &str = "FREQSCALE-LIST v1";

/// Square grid of per-frequency scaling factors, row-major with the DC term
/// at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMatrix {
    size: usize,
    values: Vec<f64>,
}

impl ScalingMatrix {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        check_block_size(size)?;
        if values.len() != size * size {
            return Err(Error::Dimension(format!(
                "{size}x{size} matrix needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(Error::Numeric(format!("scaling factor {v} is not positive")));
        }
        Ok(Self { size, values })
    }

    pub fn flat(size: usize, value: f64) -> Result<Self> {
        check_block_size(size)?;
        Self::new(size, vec![value; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_integral(&self) -> bool {
        self.values.iter().all(|v| v.fract() == 0.0)
    }

    /// Mean over the `size/2 x size/2` quadrant nearest DC.
    pub fn low_quadrant_mean(&self) -> f64 {
        self.quadrant_mean(0)
    }

    /// Mean over the `size/2 x size/2` quadrant holding the highest
    /// horizontal and vertical frequencies.
    pub fn high_quadrant_mean(&self) -> f64 {
        self.quadrant_mean(self.size / 2)
    }

    fn quadrant_mean(&self, start: usize) -> f64 {
        let half = self.size / 2;
        let mut sum = 0.0;
        for r in start..start + half {
            for c in start..start + half {
                sum += self.at(r, c);
            }
        }
        sum / (half * half) as f64
    }
}

/// Unconstrained trainable parameters behind a [`ScalingMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    size: usize,
    raw: Vec<f64>,
}

impl ScalingParams {
    pub fn new(size: usize, raw: Vec<f64>) -> Result<Self> {
        check_block_size(size)?;
        if raw.len() != size * size {
            return Err(Error::Dimension(format!(
                "{size}x{size} parameters need {} values, got {}",
                size * size,
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite scaling parameter".into()));
        }
        Ok(Self { size, raw })
    }

    /// All-zero parameters, i.e. every factor at the interval midpoint 72.
    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `16 + 112 * sigmoid(raw)` elementwise.
///
/// Far out in the tails the sigmoid rounds to exactly 0 or 1 in `f64`; the
/// result is then pinned to the nearest representable value inside the open
/// interval so the bounds stay strict.
pub fn params_to_matrix(p: &ScalingParams) -> ScalingMatrix {
    let (lo, hi) = (MIN_SCALE.next_up(), MAX_SCALE.next_down());
    ScalingMatrix {
        size: p.size,
        values: p
            .raw
            .iter()
            .map(|&r| (MIN_SCALE + SCALE_SPAN * sigmoid(r)).clamp(lo, hi))
            .collect(),
    }
}

/// Derivative of [`params_to_matrix`] with respect to each raw parameter.
pub fn matrix_jacobian_diag(p: &ScalingParams) -> Vec<f64> {
    p.raw
        .iter()
        .map(|&r| {
            let s = sigmoid(r);
            SCALE_SPAN * s * (1.0 - s)
        })
        .collect()
}

/// Rounds every factor half away from zero.
pub fn round_matrix(m: &ScalingMatrix) -> ScalingMatrix {
    ScalingMatrix {
        size: m.size,
        values: m.values.iter().map(|v| v.round()).collect(),
    }
}

/// Integer scaling grid for a rectangular block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RectScaling {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u16>,
}

fn check_rect_dim(d: usize) -> Result<()> {
    if (2..=64).contains(&d) && d.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::Config(format!("rectangular dimension {d} not a power of two in 2..=64")))
    }
}

/// Nearest-neighbour derivation of a `target_h x target_w` grid from a
/// square matrix: `out[i][j] = base[i*B/target_h][j*B/target_w]`.
pub fn derive_rectangular(
    base: &ScalingMatrix,
    target_h: usize,
    target_w: usize,
) -> Result<RectScaling> {
    check_rect_dim(target_h)?;
    check_rect_dim(target_w)?;
    let b = base.size;
    if b != target_h.max(target_w) {
        return Err(Error::Config(format!(
            "{target_h}x{target_w} block derives from the {0}x{0} matrix, got {b}x{b}",
            target_h.max(target_w)
        )));
    }
    let mut values = Vec::with_capacity(target_h * target_w);
    for i in 0..target_h {
        for j in 0..target_w {
            values.push(base.at(i * b / target_h, j * b / target_w).round() as u16);
        }
    }
    Ok(RectScaling {
        height: target_h,
        width: target_w,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Y,
    Cb,
    Cr,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Y, Component::Cb, Component::Cr];

    /// Component whose matrix codes RGB channel `index` (R→Y, G→Cb, B→Cr).
    pub fn for_channel(index: usize) -> Component {
        Self::ALL[index]
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Y => "Y",
            Component::Cb => "Cb",
            Component::Cr => "Cr",
        })
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Y" => Ok(Component::Y),
            "Cb" => Ok(Component::Cb),
            "Cr" => Ok(Component::Cr),
            _ => Err(format!("unknown component {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Intra,
    Inter,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Intra, Mode::Inter];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Intra => "intra",
            Mode::Inter => "inter",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "intra" => Ok(Mode::Intra),
            "inter" => Ok(Mode::Inter),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ListKey {
    pub size: usize,
    pub component: Component,
    pub mode: Mode,
}

impl ListKey {
    pub fn new(size: usize, component: Component, mode: Mode) -> Self {
        Self {
            size,
            component,
            mode,
        }
    }
}

impl fmt::Display for ListKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "size={} component={} mode={}", self.size, self.component, self.mode)
    }
}

/// Integer-valued matrices keyed by (size, component, mode).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalingList {
    entries: BTreeMap<ListKey, ScalingMatrix>,
}

impl ScalingList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces an entry. Factors must be integers in `[1, 255]`.
    pub fn insert(&mut self, key: ListKey, matrix: ScalingMatrix) -> Result<()> {
        if key.size != matrix.size {
            return Err(Error::Dimension(format!(
                "entry {key} holds a {0}x{0} matrix",
                matrix.size
            )));
        }
        if let Some(v) = matrix
            .values
            .iter()
            .find(|v| v.fract() != 0.0 || !(1.0..=255.0).contains(*v))
        {
            return Err(Error::Config(format!(
                "entry {key}: factor {v} is not an integer in [1, 255]"
            )));
        }
        self.entries.insert(key, matrix);
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<ListKey, ScalingMatrix> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact lookup without fallback.
    pub fn get_exact(&self, key: &ListKey) -> Option<&ScalingMatrix> {
        self.entries.get(key)
    }

    /// Lookup through the fallback chain described in the module docs.
    pub fn resolve(&self, size: usize, component: Component, mode: Mode) -> Result<&ScalingMatrix> {
        let chain = [
            ListKey::new(size, component, mode),
            ListKey::new(size, Component::Y, mode),
            ListKey::new(size, component, Mode::Intra),
            ListKey::new(size, Component::Y, Mode::Intra),
        ];
        chain
            .iter()
            .find_map(|k| self.entries.get(k))
            .ok_or_else(|| Error::Lookup(chain[0].to_string()))
    }

    /// Scaling grid for a possibly rectangular block, derived from the square
    /// entry of size `max(height, width)`.
    pub fn rectangular(
        &self,
        height: usize,
        width: usize,
        component: Component,
        mode: Mode,
    ) -> Result<RectScaling> {
        let base = self.resolve(height.max(width), component, mode)?;
        derive_rectangular(base, height, width)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(LIST_MAGIC);
        out.push('\n');
        for (i, (key, m)) in self.entries.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "MATRIX {key}").unwrap();
            write_rows(&mut out, m, " ");
        }
        out
    }

    /// Best-effort VTM-flavoured rendering with conventional section names.
    /// The key naming has not been checked against a VTM build.
    pub fn to_vtm_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# best-effort VTM-style scaling list export; key naming unverified\n");
        for (key, m) in &self.entries {
            let mode = match key.mode {
                Mode::Intra => "INTRA",
                Mode::Inter => "INTER",
            };
            let comp = match key.component {
                Component::Y => "LUMA",
                Component::Cb => "CHROMAU",
                Component::Cr => "CHROMAV",
            };
            writeln!(out, "{mode}{0}X{0}_{comp} =", key.size).unwrap();
            write_rows(&mut out, m, ",");
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_list(text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_list(self, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_list(path)
    }
}

fn write_rows(out: &mut String, m: &ScalingMatrix, sep: &str) {
    for row in m.values.chunks(m.size) {
        let line: Vec<String> = row.iter().map(|v| format!("{}", *v as i64)).collect();
        out.push_str(&line.join(sep));
        out.push('\n');
    }
}

/// Copies one matrix per block size into all three components of the intra
/// mode, rounding factors to integers.
pub fn assemble_list(per_size: &BTreeMap<usize, ScalingMatrix>) -> Result<ScalingList> {
    let mut list = ScalingList::new();
    for size in BLOCK_SIZES {
        let m = per_size
            .get(&size)
            .ok_or_else(|| Error::Config(format!("no matrix supplied for block size {size}")))?;
        let rounded = round_matrix(m);
        for component in Component::ALL {
            list.insert(ListKey::new(size, component, Mode::Intra), rounded.clone())?;
        }
    }
    if let Some(extra) = per_size.keys().find(|s| !BLOCK_SIZES.contains(s)) {
        return Err(Error::Config(format!("unsupported block size {extra}")));
    }
    Ok(list)
}

/// A list holding `value` everywhere, for every size, component and mode.
/// `flat_list(16)` is the unscaled anchor.
pub fn flat_list(value: u8) -> Result<ScalingList> {
    let mut list = ScalingList::new();
    for size in BLOCK_SIZES {
        let m = ScalingMatrix::flat(size, f64::from(value))?;
        for component in Component::ALL {
            for mode in Mode::ALL {
                list.insert(ListKey::new(size, component, mode), m.clone())?;
            }
        }
    }
    Ok(list)
}

/// A list with a single intra luma entry, the natural output of one training
/// run. Chroma lookups fall back to it.
pub fn single_matrix_list(m: &ScalingMatrix) -> Result<ScalingList> {
    let mut list = ScalingList::new();
    list.insert(ListKey::new(m.size, Component::Y, Mode::Intra), round_matrix(m))?;
    Ok(list)
}

pub fn write_list(list: &ScalingList, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, list.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_list(path: impl AsRef<Path>) -> Result<ScalingList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_list(&text)
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_matrix_header(line_no: usize, line: &str) -> Result<ListKey> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some("MATRIX") {
        return Err(syntax(line_no, format!("expected MATRIX header, found {line:?}")));
    }
    let (mut size, mut component, mut mode) = (None, None, None);
    for field in fields {
        let (name, value) = field
            .split_once('=')
            .ok_or_else(|| syntax(line_no, format!("malformed field {field:?}")))?;
        match name {
            "size" => {
                let s: usize = value
                    .parse()
                    .map_err(|_| syntax(line_no, format!("bad size {value:?}")))?;
                check_block_size(s).map_err(|_| syntax(line_no, format!("unsupported size {s}")))?;
                size = Some(s);
            }
            "component" => component = Some(value.parse().map_err(|e| syntax(line_no, e))?),
            "mode" => mode = Some(value.parse().map_err(|e| syntax(line_no, e))?),
            _ => return Err(syntax(line_no, format!("unknown field {name:?}"))),
        }
    }
    Ok(ListKey::new(
        size.ok_or_else(|| syntax(line_no, "MATRIX header missing size="))?,
        component.ok_or_else(|| syntax(line_no, "MATRIX header missing component="))?,
        mode.ok_or_else(|| syntax(line_no, "MATRIX header missing mode="))?,
    ))
}

fn parse_list(text: &str) -> Result<ScalingList> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
        .peekable();

    match lines.find(|(_, l)| !l.is_empty()) {
        Some((_, l)) if l == LIST_MAGIC => {}
        Some((n, l)) => return Err(syntax(n, format!("expected {LIST_MAGIC:?}, found {l:?}"))),
        None => return Err(syntax(1, "empty scaling list file")),
    }

    let mut list = ScalingList::new();
    while let Some((line_no, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let key = parse_matrix_header(line_no, line)?;
        if list.entries.contains_key(&key) {
            return Err(syntax(line_no, format!("duplicate entry {key}")));
        }
        let mut values = Vec::with_capacity(key.size * key.size);
        let mut last_line = line_no;
        for _ in 0..key.size {
            let (n, row) = lines
                .next()
                .filter(|(_, l)| !l.is_empty())
                .ok_or_else(|| syntax(last_line + 1, format!("{key}: expected {} rows", key.size)))?;
            last_line = n;
            let before = values.len();
            for tok in row.split_whitespace() {
                let v: i64 = tok
                    .parse()
                    .map_err(|_| syntax(n, format!("not an integer: {tok:?}")))?;
                if !(1..=255).contains(&v) {
                    return Err(Error::Range { line: n, value: v });
                }
                values.push(v as f64);
            }
            if values.len() - before != key.size {
                return Err(syntax(
                    n,
                    format!("expected {} values, found {}", key.size, values.len() - before),
                ));
            }
        }
        list.insert(key, ScalingMatrix::new(key.size, values)?)?;
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(size: usize, v: f64) -> ScalingParams {
        ScalingParams::new(size, vec![v; size * size]).unwrap()
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        assert!(params_to_matrix(&params(4, 0.0)).values().iter().all(|&v| v == 72.0));
        let hi = params_to_matrix(&params(4, 40.0));
        assert!(hi.values().iter().all(|&v| v < 128.0 && 128.0 - v < 1e-6));
        let lo = params_to_matrix(&params(4, -40.0));
        assert!(lo.values().iter().all(|&v| v > 16.0 && v - 16.0 < 1e-6));
    }

    #[test]
    fn jacobian_values() {
        assert!(matrix_jacobian_diag(&params(2, 0.0)).iter().all(|&v| v == 28.0));
        assert!(matrix_jacobian_diag(&params(2, 40.0)).iter().all(|&v| v.abs() < 1e-12));
        assert!(matrix_jacobian_diag(&params(2, -40.0)).iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let h = 1e-5;
        let raw = 1.3;
        let s = |r: f64| params_to_matrix(&params(2, r)).values()[0];
        let fd = (s(raw + h) - s(raw - h)) / (2.0 * h);
        let analytic = matrix_jacobian_diag(&params(2, raw))[0];
        assert!(((fd - analytic) / analytic).abs() < 1e-6, "{fd} vs {analytic}");
    }

    #[test]
    fn rounding() {
        let m = ScalingMatrix::new(2, vec![16.4, 72.5, 127.9, 50.0]).unwrap();
        assert_eq!(round_matrix(&m).values(), &[16.0, 73.0, 128.0, 50.0]);
    }

    fn ramp(size: usize) -> ScalingMatrix {
        ScalingMatrix::new(size, (0..size * size).map(|i| 16.0 + i as f64).collect()).unwrap()
    }

    #[test]
    fn rectangular_square_identity() {
        for size in [2, 8] {
            let base = ramp(size);
            let r = derive_rectangular(&base, size, size).unwrap();
            let expect: Vec<u16> = base.values().iter().map(|&v| v as u16).collect();
            assert_eq!(r.values, expect);
        }
    }

    #[test]
    fn rectangular_4x8_takes_even_rows() {
        let base = ramp(8);
        let r = derive_rectangular(&base, 4, 8).unwrap();
        for i in 0..4 {
            for j in 0..8 {
                assert_eq!(f64::from(r.values[i * 8 + j]), base.at(2 * i, j));
            }
        }
    }

    #[test]
    fn rectangular_requires_matching_base() {
        assert!(derive_rectangular(&ramp(8), 4, 4).is_err());
        assert!(derive_rectangular(&ramp(8), 8, 3).is_err());
        let list = single_matrix_list(&ramp(8)).unwrap();
        assert!(matches!(
            list.rectangular(16, 4, Component::Y, Mode::Intra),
            Err(Error::Lookup(_))
        ));
        assert_eq!(list.rectangular(8, 2, Component::Cr, Mode::Inter).unwrap().values.len(), 16);
    }

    fn per_size(f: impl Fn(usize) -> f64) -> BTreeMap<usize, ScalingMatrix> {
        BLOCK_SIZES
            .iter()
            .map(|&s| (s, ScalingMatrix::flat(s, f(s)).unwrap()))
            .collect()
    }

    #[test]
    fn assemble_counts_and_shares() {
        let list = assemble_list(&per_size(|s| 16.0 + s as f64)).unwrap();
        assert_eq!(list.len(), 18);
        assert!(list.entries().keys().all(|k| k.mode == Mode::Intra));
        let y = list.get_exact(&ListKey::new(8, Component::Y, Mode::Intra)).unwrap();
        let cb = list.get_exact(&ListKey::new(8, Component::Cb, Mode::Intra)).unwrap();
        assert_eq!(y, cb);
    }

    #[test]
    fn assemble_requires_all_sizes() {
        let mut m = per_size(|_| 20.0);
        m.remove(&64);
        assert!(matches!(assemble_list(&m), Err(Error::Config(_))));
    }

    #[test]
    fn flat_list_covers_every_key() {
        let list = flat_list(16).unwrap();
        assert_eq!(list.len(), 36);
        assert!(list.entries().values().all(|m| m.values().iter().all(|&v| v == 16.0)));
    }

    #[test]
    fn fallback_chain() {
        let mut list = ScalingList::new();
        list.insert(ListKey::new(4, Component::Y, Mode::Intra), ScalingMatrix::flat(4, 20.0).unwrap())
            .unwrap();
        list.insert(ListKey::new(4, Component::Cb, Mode::Intra), ScalingMatrix::flat(4, 30.0).unwrap())
            .unwrap();
        list.insert(ListKey::new(4, Component::Y, Mode::Inter), ScalingMatrix::flat(4, 40.0).unwrap())
            .unwrap();
        let get = |c, m| list.resolve(4, c, m).unwrap().values()[0];
        assert_eq!(get(Component::Cb, Mode::Intra), 30.0);
        assert_eq!(get(Component::Cr, Mode::Intra), 20.0);
        assert_eq!(get(Component::Cb, Mode::Inter), 40.0);
        assert_eq!(get(Component::Y, Mode::Inter), 40.0);
        assert!(matches!(list.resolve(8, Component::Y, Mode::Intra), Err(Error::Lookup(_))));
    }

    #[test]
    fn insert_rejects_non_integer() {
        let mut list = ScalingList::new();
        let m = ScalingMatrix::flat(2, 16.5).unwrap();
        assert!(list.insert(ListKey::new(2, Component::Y, Mode::Intra), m).is_err());
    }

    #[test]
    fn text_round_trip_is_stable() {
        let list = assemble_list(&per_size(|s| 100.0 - s as f64)).unwrap();
        let text = list.to_text();
        let back = ScalingList::parse(&text).unwrap();
        assert_eq!(back, list);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn reader_rejects_zero() {
        let text = format!("{LIST_MAGIC}\nMATRIX size=2 component=Y mode=intra\n16 16\n0 16\n");
        assert!(matches!(
            ScalingList::parse(&text),
            Err(Error::Range { line: 4, value: 0 })
        ));
        let text = format!("{LIST_MAGIC}\nMATRIX size=2 component=Y mode=intra\n16 16\n256 16\n");
        assert!(matches!(ScalingList::parse(&text), Err(Error::Range { value: 256, .. })));
    }

    #[test]
    fn reader_accepts_low_literature_values() {
        let text = format!("# hvs\n{LIST_MAGIC}\n\nMATRIX size=2 component=Cb mode=inter\n1 8\n# c\n12 255\n");
        let list = ScalingList::parse(&text).unwrap();
        let m = list.get_exact(&ListKey::new(2, Component::Cb, Mode::Inter)).unwrap();
        assert_eq!(m.values(), &[1.0, 8.0, 12.0, 255.0]);
    }

    #[test]
    fn reader_reports_missing_header_at_line_one() {
        assert!(matches!(
            ScalingList::parse("16 16\n16 16\n"),
            Err(Error::Syntax { line: 1, .. })
        ));
        let text = format!("{LIST_MAGIC}\nMATRIX component=Y mode=intra\n16 16\n16 16\n");
        assert!(matches!(ScalingList::parse(&text), Err(Error::Syntax { line: 2, .. })));
    }

    #[test]
    fn reader_syntax_errors() {
        let short = format!("{LIST_MAGIC}\nMATRIX size=2 component=Y mode=intra\n16 16\n");
        assert!(matches!(ScalingList::parse(&short), Err(Error::Syntax { line: 4, .. })));
        let wide = format!("{LIST_MAGIC}\nMATRIX size=2 component=Y mode=intra\n16 16 16\n16 16\n");
        assert!(matches!(ScalingList::parse(&wide), Err(Error::Syntax { line: 3, .. })));
        let dup = format!(
            "{LIST_MAGIC}\nMATRIX size=2 component=Y mode=intra\n16 16\n16 16\n\nMATRIX size=2 component=Y mode=intra\n16 16\n16 16\n"
        );
        assert!(matches!(ScalingList::parse(&dup), Err(Error::Syntax { line: 6, .. })));
        let bad = format!("{LIST_MAGIC}\nMATRIX size=3 component=Y mode=intra\n");
        assert!(matches!(ScalingList::parse(&bad), Err(Error::Syntax { line: 2, .. })));
    }

    #[test]
    fn vtm_export_names_sections() {
        let list = single_matrix_list(&ScalingMatrix::flat(4, 20.0).unwrap()).unwrap();
        let text = list.to_vtm_text();
        assert!(text.starts_with("# best-effort"));
        assert!(text.contains("INTRA4X4_LUMA =\n20,20,20,20\n"));
    }

    #[test]
    fn quadrant_means() {
        let m = ScalingMatrix::new(2, vec![16.0, 20.0, 30.0, 100.0]).unwrap();
        assert_eq!(m.low_quadrant_mean(), 16.0);
        assert_eq!(m.high_quadrant_mean(), 100.0);
    }

    proptest! {
        #[test]
        fn sigmoid_bounds_and_monotone(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
            let lo = params_to_matrix(&params(2, a)).values()[0];
            let hi = params_to_matrix(&params(2, a + d)).values()[0];
            prop_assert!(lo > 16.0 && lo < 128.0);
            prop_assert!(hi > lo);
        }

        #[test]
        fn list_text_round_trip(vals in proptest::collection::vec(1u8..=255, 4 + 16)) {
            let mut list = ScalingList::new();
            let m2 = ScalingMatrix::new(2, vals[..4].iter().map(|&v| f64::from(v)).collect()).unwrap();
            let m4 = ScalingMatrix::new(4, vals[4..].iter().map(|&v| f64::from(v)).collect()).unwrap();
            list.insert(ListKey::new(2, Component::Cr, Mode::Inter), m2).unwrap();
            list.insert(ListKey::new(4, Component::Y, Mode::Intra), m4).unwrap();
            prop_assert_eq!(ScalingList::parse(&list.to_text()).unwrap(), list);
        }
    }
}

//! QP to step size, and per-coefficient scaled quantization.
//!
//! The step for coefficient `k` is `Δ_k = Δ * S_k / 16` and the index is
//! `floor(X_k / Δ_k + 0.5)`, taken literally: for negative inputs exact
//! half-way values round toward +∞ (`-12.5 -> -12`), not away from zero.

use crate::scaling::{ScalingMatrix, NEUTRAL_SCALE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    qp: i32,
    bit_depth: u32,
    delta: f64,
}

impl QuantSpec {
    pub fn new(qp: i32, bit_depth: u32) -> Result<Self> {
        let delta = qp_to_delta(qp, bit_depth)?;
        Ok(Self {
            qp,
            bit_depth,
            delta,
        })
    }

    /// 8-bit samples.
    pub fn eight_bit(qp: i32) -> Result<Self> {
        Self::new(qp, 8)
    }

    pub fn qp(&self) -> i32 {
        self.qp
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Step size for a coefficient with scaling factor `s_k`.
    #[inline]
    pub fn delta_k(&self, s_k: f64) -> f64 {
        delta_k(self.delta, s_k)
    }
}

/// `Δ = 2^((qp - 4) / 6) * 2^(bit_depth - 8)`.
pub fn qp_to_delta(qp: i32, bit_depth: u32) -> Result<f64> {
    if !(0..=63).contains(&qp) {
        return Err(Error::Config(format!("qp {qp} outside 0..=63")));
    }
    if ![8, 10, 12].contains(&bit_depth) {
        return Err(Error::Config(format!("bit depth {bit_depth} not one of 8, 10, 12")));
    }
    Ok(2f64.powf(f64::from(qp - 4) / 6.0) * 2f64.powi(bit_depth as i32 - 8))
}

#[inline]
pub fn delta_k(delta: f64, s_k: f64) -> f64 {
    delta * s_k / NEUTRAL_SCALE
}

fn check_dims(len: usize, m: &ScalingMatrix) -> Result<()> {
    if len != m.values().len() {
        return Err(Error::Dimension(format!(
            "{len} coefficients against a {0}x{0} scaling matrix",
            m.size()
        )));
    }
    Ok(())
}

/// Quantizes one block of transform coefficients.
pub fn quantize_block(coeffs: &[f64], spec: &QuantSpec, m: &ScalingMatrix) -> Result<Vec<i32>> {
    check_dims(coeffs.len(), m)?;
    coeffs
        .iter()
        .zip(m.values())
        .map(|(&x, &s)| {
            if !x.is_finite() {
                return Err(Error::Numeric(format!("non-finite coefficient {x}")));
            }
            Ok((x / spec.delta_k(s) + 0.5).floor() as i32)
        })
        .collect()
}

pub fn dequantize_block(indices: &[i32], spec: &QuantSpec, m: &ScalingMatrix) -> Result<Vec<f64>> {
    check_dims(indices.len(), m)?;
    Ok(indices
        .iter()
        .zip(m.values())
        .map(|(&i, &s)| f64::from(i) * spec.delta_k(s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_values() {
        assert_eq!(qp_to_delta(4, 8).unwrap(), 1.0);
        assert_eq!(qp_to_delta(22, 8).unwrap(), 8.0);
        // 2^(23/6) evaluated independently
        let expect = (23.0f64 / 6.0 * std::f64::consts::LN_2).exp();
        let got = qp_to_delta(27, 8).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 14.2544).abs() < 1e-4);
        assert_eq!(qp_to_delta(4, 10).unwrap(), 4.0);
        assert_eq!(qp_to_delta(10, 12).unwrap(), 32.0);
    }

    #[test]
    fn delta_range_errors() {
        assert!(matches!(qp_to_delta(-1, 8), Err(Error::Config(_))));
        assert!(matches!(qp_to_delta(64, 8), Err(Error::Config(_))));
        assert!(matches!(qp_to_delta(22, 9), Err(Error::Config(_))));
    }

    #[test]
    fn per_coefficient_step() {
        assert_eq!(delta_k(8.0, 16.0), 8.0);
        assert_eq!(delta_k(8.0, 128.0), 64.0);
        assert_eq!(delta_k(1.0, 32.0), 2.0);
    }

    fn m2(v: f64) -> ScalingMatrix {
        ScalingMatrix::flat(2, v).unwrap()
    }

    #[test]
    fn literal_rounding() {
        let spec = QuantSpec::eight_bit(22).unwrap();
        let q = quantize_block(&[100.0, 0.0, -100.0, -4.0], &spec, &m2(16.0)).unwrap();
        assert_eq!(q, [13, 0, -12, 0]);
        let back = dequantize_block(&q, &spec, &m2(16.0)).unwrap();
        assert_eq!(back, [104.0, 0.0, -96.0, 0.0]);
        assert_eq!(dequantize_block(&[0; 4], &spec, &m2(40.0)).unwrap(), [0.0; 4]);
    }

    #[test]
    fn errors() {
        let spec = QuantSpec::eight_bit(22).unwrap();
        assert!(matches!(
            quantize_block(&[f64::NAN, 0.0, 0.0, 0.0], &spec, &m2(16.0)),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(quantize_block(&[0.0; 3], &spec, &m2(16.0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn flat_sixteen_is_unscaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = QuantSpec::eight_bit(17).unwrap();
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-500.0..500.0)).collect();
        let m = ScalingMatrix::flat(8, 16.0).unwrap();
        let q = quantize_block(&x, &spec, &m).unwrap();
        let plain: Vec<i32> = x.iter().map(|v| (v / spec.delta() + 0.5).floor() as i32).collect();
        assert_eq!(q, plain);
    }

    proptest! {
        #[test]
        fn reconstruction_within_half_step(seed in any::<u64>(), qp in 0i32..=51) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = QuantSpec::eight_bit(qp).unwrap();
            let s: Vec<f64> = (0..16).map(|_| f64::from(rng.gen_range(1u8..=255))).collect();
            let m = ScalingMatrix::new(4, s).unwrap();
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-2000.0..2000.0)).collect();
            let rec = dequantize_block(&quantize_block(&x, &spec, &m).unwrap(), &spec, &m).unwrap();
            for ((xk, rk), sk) in x.iter().zip(&rec).zip(m.values()) {
                prop_assert!((xk - rk).abs() <= spec.delta_k(*sk) / 2.0 + 1e-9);
            }
        }

        #[test]
        fn larger_scaling_never_grows_indices(seed in any::<u64>(), qp in 0i32..=51) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = QuantSpec::eight_bit(qp).unwrap();
            let small: Vec<f64> = (0..16).map(|_| f64::from(rng.gen_range(1u8..=200))).collect();
            let large: Vec<f64> = small.iter().map(|&v| v + f64::from(rng.gen_range(0u8..=55))).collect();
            let (ms, ml) = (ScalingMatrix::new(4, small).unwrap(), ScalingMatrix::new(4, large).unwrap());
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-2000.0..2000.0)).collect();
            let qs = quantize_block(&x, &spec, &ms).unwrap();
            let ql = quantize_block(&x, &spec, &ml).unwrap();
            for (a, b) in qs.iter().zip(&ql) {
                prop_assert!(b.abs() <= a.abs());
            }
        }
    }
}

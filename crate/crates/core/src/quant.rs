//! Symmetric INT8 quantization arithmetic.
//!
//! Zero point is always 0. Codes saturate to [-127, 127]; -128 is never
//! produced. Rounding is half-away-from-zero everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const QMAX: i32 = 127;

#[derive(Debug, Error, PartialEq)]
#[error("invalid quantization scale {0}: must be positive and finite")]
pub struct InvalidScale(pub f32);

/// Per-tensor quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    #[serde(default)]
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32) -> Result<Self, InvalidScale> {
        if scale > 0.0 && scale.is_finite() {
            Ok(Self { scale, zero_point: 0 })
        } else {
            Err(InvalidScale(scale))
        }
    }

    pub const fn unit() -> Self {
        Self {
            scale: 1.0,
            zero_point: 0,
        }
    }

    /// Scale that maps `max_abs` to code 127. `None` for an all-zero range.
    pub fn from_max_abs(max_abs: f32) -> Option<Self> {
        if max_abs > 0.0 && max_abs.is_finite() {
            Self::new(max_abs / QMAX as f32).ok()
        } else {
            None
        }
    }

    pub fn is_valid(&self) -> bool {
        self.zero_point == 0 && self.scale > 0.0 && self.scale.is_finite()
    }
}

#[inline]
pub fn saturate_f32(v: f32) -> i8 {
    // NaN maps to 0 under `as`
    v.round().clamp(-(QMAX as f32), QMAX as f32) as i8
}

#[inline]
pub fn saturate_f64(v: f64) -> i8 {
    v.round().clamp(-(QMAX as f64), QMAX as f64) as i8
}

#[inline]
pub fn quantize(v: f32, scale: f32) -> i8 {
    saturate_f32(v / scale)
}

#[inline]
pub fn dequantize(q: i8, scale: f32) -> f32 {
    q as f32 * scale
}

pub fn quantize_slice(v: &[f32], scale: f32) -> Vec<i8> {
    v.iter().map(|&x| quantize(x, scale)).collect()
}

pub fn dequantize_slice(q: &[i8], scale: f32) -> Vec<f32> {
    q.iter().map(|&x| dequantize(x, scale)).collect()
}

/// FP32 multiplier applied to an INT32 accumulator.
#[inline]
pub fn requant_multiplier(in_scale: f32, weight_scale: f32, out_scale: f32) -> f32 {
    in_scale * weight_scale / out_scale
}

#[inline]
pub fn requantize(acc: i32, multiplier: f32) -> i8 {
    saturate_f32(acc as f32 * multiplier)
}

/// Requantize a real value computed in double precision.
#[inline]
pub fn requantize_f64(v: f64, out_scale: f32) -> i8 {
    saturate_f64(v / out_scale as f64)
}

/// Bias codes at scale `in_scale * weight_scale`, saturated to i32.
pub fn quantize_bias(b: &[f32], in_scale: f32, weight_scale: f32) -> Vec<i32> {
    let s = (in_scale * weight_scale) as f64;
    b.iter()
        .map(|&v| (v as f64 / s).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

//! Di-Accelerator emulation. Every operation dequantizes its INT8 inputs,
//! computes in double precision and requantizes the result.

use super::KernelError;
use crate::model_ir::shape::Window;
use crate::quant::requantize_f64;

#[inline]
fn deq(q: i8, s: f32) -> f64 {
    q as f64 * s as f64
}

fn same_len(a: &[i8], b: &[i8]) -> Result<(), KernelError> {
    if a.len() != b.len() {
        return Err(KernelError::Shape(format!(
            "operands hold {} and {} elements",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Element-wise `a + b`, optionally keeping only non-negative results.
pub fn add(a: &[i8], b: &[i8], sa: f32, sb: f32, sout: f32, relu: bool) -> Result<Vec<i8>, KernelError> {
    same_len(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let q = requantize_f64(deq(x, sa) + deq(y, sb), sout);
            if relu {
                q.max(0)
            } else {
                q
            }
        })
        .collect())
}

pub fn mul(a: &[i8], b: &[i8], sa: f32, sb: f32, sout: f32) -> Result<Vec<i8>, KernelError> {
    same_len(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| requantize_f64(deq(x, sa) * deq(y, sb), sout))
        .collect())
}

#[inline]
fn sigmoid_f64(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[inline]
pub fn silu_code(q: i8, s_in: f32, s_out: f32) -> i8 {
    let v = deq(q, s_in);
    requantize_f64(v * sigmoid_f64(v), s_out)
}

pub fn silu(x: &[i8], s_in: f32, s_out: f32) -> Vec<i8> {
    x.iter().map(|&q| silu_code(q, s_in, s_out)).collect()
}

pub fn sigmoid(x: &[i8], s_in: f32, s_out: f32) -> Vec<i8> {
    x.iter()
        .map(|&q| requantize_f64(sigmoid_f64(deq(q, s_in)), s_out))
        .collect()
}

pub fn relu(x: &[i8], s_in: f32, s_out: f32) -> Vec<i8> {
    x.iter()
        .map(|&q| requantize_f64(deq(q, s_in).max(0.0), s_out))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: Window,
}

/// Pooling over a [C, H, W] tensor. Average pooling divides by the full
/// window area (padding counts as zero).
pub fn pool(
    x: &[i8],
    shape: [usize; 3],
    spec: &PoolSpec,
    s_in: f32,
    s_out: f32,
) -> Result<(Vec<i8>, [usize; 3]), KernelError> {
    let [c, h, w] = shape;
    if x.len() != c * h * w {
        return Err(KernelError::Shape(format!(
            "pool input holds {} codes, shape {shape:?}",
            x.len()
        )));
    }
    let win = &spec.window;
    if win.kernel.contains(&0) || win.strides.contains(&0) {
        return Err(KernelError::Shape("pool window must be at least 1x1".into()));
    }
    let (oh, ow) = win
        .out_dims(h, w)
        .ok_or_else(|| KernelError::Shape(format!("window {:?} larger than input {h}x{w}", win.kernel)))?;
    let area = win.area() as f64;
    let same_scale = s_in == s_out;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut max = i8::MIN;
                let mut sum = 0i32;
                let mut any = false;
                for dy in 0..win.kernel[0] {
                    let iy = (oy * win.strides[0] + dy) as isize - win.pads[0] as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for dx in 0..win.kernel[1] {
                        let ix = (ox * win.strides[1] + dx) as isize - win.pads[1] as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let v = plane[iy as usize * w + ix as usize];
                        max = max.max(v);
                        sum += v as i32;
                        any = true;
                    }
                }
                let q = match spec.kind {
                    PoolKind::Max if !any => 0,
                    PoolKind::Max if same_scale => max,
                    PoolKind::Max => requantize_f64(deq(max, s_in), s_out),
                    PoolKind::Avg => requantize_f64(sum as f64 * s_in as f64 / area, s_out),
                };
                out.push(q);
            }
        }
    }
    Ok((out, [c, oh, ow]))
}

/// A borrowed INT8 tensor with its shape and scale.
#[derive(Debug, Clone, Copy)]
pub struct DiTensor<'a> {
    pub data: &'a [i8],
    pub shape: &'a [usize],
    pub scale: f32,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

/// Joins tensors along `axis`. All parts must already carry `out_scale`.
pub fn concat(parts: &[DiTensor<'_>], axis: usize, out_scale: f32) -> Result<(Vec<i8>, Vec<usize>), KernelError> {
    let first = parts
        .first()
        .ok_or_else(|| KernelError::Shape("concat of zero tensors".into()))?;
    let rank = first.shape.len();
    if axis >= rank {
        return Err(KernelError::Shape(format!("axis {axis} out of range for rank {rank}")));
    }
    let mut out_shape = first.shape.to_vec();
    out_shape[axis] = 0;
    for (i, p) in parts.iter().enumerate() {
        if p.shape.len() != rank
            || p.shape
                .iter()
                .zip(first.shape)
                .enumerate()
                .any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(KernelError::Shape(format!(
                "part {i} shape {:?} incompatible with {:?} on axis {axis}",
                p.shape, first.shape
            )));
        }
        if p.data.len() != p.shape.iter().product::<usize>() {
            return Err(KernelError::Shape(format!("part {i} data does not match its shape")));
        }
        if p.scale != out_scale {
            return Err(KernelError::ScaleMismatch(format!(
                "part {i} has scale {} but output scale is {out_scale}",
                p.scale
            )));
        }
        out_shape[axis] += p.shape[axis];
    }
    let (outer, inner) = outer_inner(&out_shape, axis);
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok((out, out_shape))
}

/// Codes and shape of one output.
pub type Part = (Vec<i8>, Vec<usize>);

/// Splits `x` into contiguous slices of `sizes` along `axis`.
pub fn split(x: &[i8], shape: &[usize], axis: usize, sizes: &[usize]) -> Result<Vec<Part>, KernelError> {
    if axis >= shape.len() {
        return Err(KernelError::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    if x.len() != shape.iter().product::<usize>() {
        return Err(KernelError::Shape("split input does not match its shape".into()));
    }
    if sizes.iter().sum::<usize>() != shape[axis] || sizes.contains(&0) {
        return Err(KernelError::Shape(format!(
            "sizes {sizes:?} do not partition dim {} of {shape:?}",
            shape[axis]
        )));
    }
    let (outer, inner) = outer_inner(shape, axis);
    let row = shape[axis] * inner;
    let mut parts = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &s in sizes {
        let mut data = Vec::with_capacity(outer * s * inner);
        for o in 0..outer {
            let base = o * row + offset * inner;
            data.extend_from_slice(&x[base..base + s * inner]);
        }
        let mut sh = shape.to_vec();
        sh[axis] = s;
        parts.push((data, sh));
        offset += s;
    }
    Ok(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiFunction {
    Add,
    Silu,
    Concat,
    Split,
    MaxPool,
    AvgPool,
    /// ReLU, Sigmoid and Mul share the element-wise engine rate of Add.
    Elementwise,
}

const KB: f64 = 1024.0;

/// Measured (bytes, microseconds) anchor per function.
fn di_anchor(f: DiFunction) -> (f64, f64) {
    match f {
        DiFunction::Add | DiFunction::Elementwise => (16.0 * KB, 55.0),
        DiFunction::Silu => (16.0 * KB, 54.7),
        DiFunction::Concat | DiFunction::Split => (256.0 * KB, 244.5),
        DiFunction::MaxPool => ((128 * 20 * 20) as f64, 8900.0),
        DiFunction::AvgPool => ((128 * 20 * 20) as f64, 15900.0),
    }
}

/// Latency linear in processed bytes, for reporting only.
pub fn cost_model_di(f: DiFunction, byte_size: usize) -> f64 {
    let (bytes, us) = di_anchor(f);
    us * byte_size as f64 / bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_identity_and_cancellation() {
        let a: Vec<i8> = vec![-127, -3, 0, 5, 127];
        assert_eq!(add(&a, &[0; 5], 1.0, 1.0, 1.0, false).unwrap(), a);
        let neg: Vec<i8> = a.iter().map(|v| -v).collect();
        assert_eq!(add(&a, &neg, 0.5, 0.5, 0.5, false).unwrap(), vec![0; 5]);
        assert_eq!(add(&a, &[0; 5], 1.0, 1.0, 1.0, true).unwrap(), vec![0, 0, 0, 5, 127]);
        assert!(add(&a, &[0; 4], 1.0, 1.0, 1.0, false).is_err());
    }

    #[test]
    fn silu_fixed_points() {
        assert_eq!(silu_code(0, 0.1, 0.1), 0);
        // large input: sigmoid ~ 1
        assert_eq!(silu_code(127, 0.2, 0.2), 127);
        assert_eq!(silu_code(-127, 0.2, 0.2), 0);
    }

    #[test]
    fn max_pool_hand_case() {
        let spec = PoolSpec {
            kind: PoolKind::Max,
            window: Window { kernel: [2, 2], strides: [2, 2], pads: [0; 4] },
        };
        let (y, s) = pool(&[1, 2, 3, 4], [1, 2, 2], &spec, 1.0, 1.0).unwrap();
        assert_eq!((y, s), (vec![4], [1, 1, 1]));
        let (y, _) = pool(&[9; 16], [1, 4, 4], &spec, 0.3, 0.3).unwrap();
        assert_eq!(y, vec![9; 4]);
    }

    #[test]
    fn avg_pool_counts_padding() {
        let spec = PoolSpec {
            kind: PoolKind::Avg,
            window: Window { kernel: [2, 2], strides: [2, 2], pads: [1, 1, 0, 0] },
        };
        // top-left window covers 3 padding cells and x[0]
        let (y, s) = pool(&[8, 8, 8, 8], [1, 2, 2], &spec, 1.0, 1.0).unwrap();
        assert_eq!(s, [1, 1, 1]);
        assert_eq!(y, vec![2]);
    }

    #[test]
    fn concat_split_table_sizes() {
        let part = vec![1i8; 64 * 1024];
        let shape = [64 * 1024];
        let parts: Vec<DiTensor> = (0..4)
            .map(|_| DiTensor { data: &part, shape: &shape, scale: 0.5 })
            .collect();
        let (y, s) = concat(&parts, 0, 0.5).unwrap();
        assert_eq!(s, vec![256 * 1024]);
        assert_eq!(y.len(), 256 * 1024);
        let back = split(&y, &s, 0, &[65536; 4]).unwrap();
        assert_eq!(back.len(), 4);
        assert!(back.iter().all(|(d, sh)| d == &part && sh == &vec![65536]));
    }

    #[test]
    fn concat_scale_mismatch() {
        let a = [1i8, 2];
        let parts = [
            DiTensor { data: &a, shape: &[2], scale: 0.5 },
            DiTensor { data: &a, shape: &[2], scale: 0.25 },
        ];
        assert!(matches!(concat(&parts, 0, 0.5), Err(KernelError::ScaleMismatch(_))));
    }

    #[test]
    fn concat_inner_axis() {
        let a = [1i8, 2, 3, 4]; // [2,2]
        let b = [5i8, 6]; // [2,1]
        let (y, s) = concat(
            &[
                DiTensor { data: &a, shape: &[2, 2], scale: 1.0 },
                DiTensor { data: &b, shape: &[2, 1], scale: 1.0 },
            ],
            1,
            1.0,
        )
        .unwrap();
        assert_eq!(s, vec![2, 3]);
        assert_eq!(y, vec![1, 2, 5, 3, 4, 6]);
    }

    #[test]
    fn split_single_part_is_identity() {
        let x: Vec<i8> = (0..12).collect();
        let parts = split(&x, &[3, 4], 1, &[4]).unwrap();
        assert_eq!(parts, vec![(x.clone(), vec![3, 4])]);
        assert!(split(&x, &[3, 4], 1, &[3]).is_err());
    }

    #[test]
    fn table_two_anchors() {
        assert!((cost_model_di(DiFunction::Add, 16 * 1024) - 55.0).abs() < 1e-9);
        assert!((cost_model_di(DiFunction::Silu, 16 * 1024) - 54.7).abs() < 1e-9);
        assert!((cost_model_di(DiFunction::Concat, 256 * 1024) - 244.5).abs() < 1e-9);
        assert!((cost_model_di(DiFunction::Split, 256 * 1024) - 244.5).abs() < 1e-9);
        assert!((cost_model_di(DiFunction::MaxPool, 128 * 20 * 20) - 8900.0).abs() < 1e-9);
    }
}

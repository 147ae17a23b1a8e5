//! An-Accelerator emulation: INT8 MVM with FP32 requantization, im2col
//! convolution and fused activation epilogues.

use super::KernelError;
use crate::model_ir::shape::Window;
use crate::nvm_noise::ReadNoise;
use crate::quant::{requant_multiplier, requantize, QuantParams};

/// Largest stored matrix: 4096 input rows by 512 output columns.
pub const MAX_ROWS: usize = 4096;
pub const MAX_COLS: usize = 512;
pub const ALIGN: usize = 16;

pub fn pad16(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Weight matrix as stored in the MVM engine: `rows` inputs by `cols` outputs,
/// row-major, both multiples of 16.
#[derive(Debug, Clone, PartialEq)]
pub struct AnMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
    pub weight_scale: QuantParams,
}

impl AnMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>, weight_scale: QuantParams) -> Result<Self, KernelError> {
        if rows == 0 || cols == 0 || !rows.is_multiple_of(ALIGN) || !cols.is_multiple_of(ALIGN) {
            return Err(KernelError::Size(format!(
                "matrix {rows}x{cols} is not a non-empty multiple of {ALIGN}"
            )));
        }
        if rows > MAX_ROWS || cols > MAX_COLS {
            return Err(KernelError::Size(format!(
                "matrix {rows}x{cols} exceeds {MAX_ROWS}x{MAX_COLS}"
            )));
        }
        if data.len() != rows * cols {
            return Err(KernelError::Shape(format!(
                "matrix data holds {} codes, expected {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            weight_scale,
        })
    }

    /// Builds the stored matrix from an output-major weight matrix
    /// (`out_rows` x `in_cols`, row-major) by transposing it.
    pub fn from_output_major(
        out_rows: usize,
        in_cols: usize,
        data: &[i8],
        weight_scale: QuantParams,
    ) -> Result<Self, KernelError> {
        if data.len() != out_rows * in_cols {
            return Err(KernelError::Shape(format!(
                "weights hold {} codes, expected {out_rows}x{in_cols}",
                data.len()
            )));
        }
        let mut t = vec![0i8; data.len()];
        for o in 0..out_rows {
            for i in 0..in_cols {
                t[i * out_rows + o] = data[o * in_cols + i];
            }
        }
        Self::new(in_cols, out_rows, t, weight_scale)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: i8) {
        self.data[r * self.cols + c] = v;
    }
}

/// Exact INT32 accumulators `acc[j] = sum_i x[i] * w[i][j]`, written into `acc`.
fn accumulate_into(m: &AnMatrix, x: &[i8], acc: &mut [i32]) {
    acc.fill(0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0 {
            continue;
        }
        let xi = xi as i32;
        let row = &m.data[i * m.cols..(i + 1) * m.cols];
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += xi * w as i32;
        }
    }
}

pub fn mvm_accumulate(m: &AnMatrix, x: &[i8]) -> Result<Vec<i32>, KernelError> {
    if x.len() != m.rows {
        return Err(KernelError::Shape(format!(
            "input vector has {} elements, matrix has {} rows",
            x.len(),
            m.rows
        )));
    }
    let mut acc = vec![0i32; m.cols];
    accumulate_into(m, x, &mut acc);
    Ok(acc)
}

/// `y_j = sat(round(acc_j * in_scale * weight_scale / out_scale))`.
pub fn mvm(m: &AnMatrix, x: &[i8], in_scale: f32, out_scale: f32) -> Result<Vec<i8>, KernelError> {
    mvm_biased(m, x, None, in_scale, out_scale, None)
}

/// MVM with optional INT32 bias (added before requantization) and read noise.
pub fn mvm_biased(
    m: &AnMatrix,
    x: &[i8],
    bias: Option<&[i32]>,
    in_scale: f32,
    out_scale: f32,
    noise: Option<ReadNoise<'_>>,
) -> Result<Vec<i8>, KernelError> {
    let mut acc = mvm_accumulate(m, x)?;
    add_bias(&mut acc, bias)?;
    if let Some(n) = noise {
        n.apply(&mut acc, m.rows, 0);
    }
    let mult = requant_multiplier(in_scale, m.weight_scale.scale, out_scale);
    Ok(acc.iter().map(|&a| requantize(a, mult)).collect())
}

fn add_bias(acc: &mut [i32], bias: Option<&[i32]>) -> Result<(), KernelError> {
    if let Some(b) = bias {
        if b.len() > acc.len() {
            return Err(KernelError::Shape(format!(
                "bias has {} entries for {} outputs",
                b.len(),
                acc.len()
            )));
        }
        for (a, &bv) in acc.iter_mut().zip(b) {
            *a = a.saturating_add(bv);
        }
    }
    Ok(())
}

/// Geometry of an im2col lowering of a [C, H, W] input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Im2colPlan {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: Window,
    out_h: usize,
    out_w: usize,
}

impl Im2colPlan {
    pub fn new(channels: usize, height: usize, width: usize, window: Window) -> Result<Self, KernelError> {
        if channels == 0 || window.strides.contains(&0) || window.kernel.contains(&0) {
            return Err(KernelError::Shape("degenerate im2col plan".into()));
        }
        let (out_h, out_w) = window.out_dims(height, width).ok_or_else(|| {
            KernelError::Shape(format!(
                "kernel {:?} does not fit padded input {height}x{width}",
                window.kernel
            ))
        })?;
        Ok(Self {
            channels,
            height,
            width,
            window,
            out_h,
            out_w,
        })
    }

    pub fn out_h(&self) -> usize {
        self.out_h
    }

    pub fn out_w(&self) -> usize {
        self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.window.kernel[0] * self.window.kernel[1]
    }

    pub fn n_patches(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Writes patch `p` (channel-major, then kernel row, then kernel column)
    /// into `dst[..patch_len]`; padding positions are code 0.
    fn write_patch(&self, x: &[i8], p: usize, dst: &mut [i8]) {
        let (kh, kw) = (self.window.kernel[0], self.window.kernel[1]);
        let (sh, sw) = (self.window.strides[0], self.window.strides[1]);
        let (pt, pl) = (self.window.pads[0], self.window.pads[1]);
        let oh = p / self.out_w;
        let ow = p % self.out_w;
        let mut k = 0;
        for c in 0..self.channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for dy in 0..kh {
                let iy = (oh * sh + dy) as isize - pt as isize;
                for dx in 0..kw {
                    let ix = (ow * sw + dx) as isize - pl as isize;
                    dst[k] = if iy >= 0 && ix >= 0 && (iy as usize) < self.height && (ix as usize) < self.width {
                        plane[iy as usize * self.width + ix as usize]
                    } else {
                        0
                    };
                    k += 1;
                }
            }
        }
    }
}

/// Patch matrix of `n_patches` rows by `patch_len` columns.
pub fn im2col(x: &[i8], plan: &Im2colPlan) -> Result<Vec<i8>, KernelError> {
    if x.len() != plan.input_len() {
        return Err(KernelError::Shape(format!(
            "input holds {} codes, plan expects {}x{}x{}",
            x.len(),
            plan.channels,
            plan.height,
            plan.width
        )));
    }
    let pl = plan.patch_len();
    let mut out = vec![0i8; plan.n_patches() * pl];
    for p in 0..plan.n_patches() {
        plan.write_patch(x, p, &mut out[p * pl..(p + 1) * pl]);
    }
    Ok(out)
}

/// Activation applied to requantized convolution outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epilogue {
    None,
    ReLU,
    /// Requantize to `mid_scale`, then SiLU in the dequantized domain.
    SiLU { mid_scale: f32 },
}

/// A convolution prepared for the MVM engine.
#[derive(Debug, Clone)]
pub struct ConvKernel {
    pub plan: Im2colPlan,
    pub matrix: AnMatrix,
    pub bias: Option<Vec<i32>>,
    pub out_channels: usize,
    pub in_scale: f32,
    pub out_scale: f32,
    pub epilogue: Epilogue,
}

impl ConvKernel {
    pub fn new(
        plan: Im2colPlan,
        matrix: AnMatrix,
        bias: Option<Vec<i32>>,
        out_channels: usize,
        in_scale: f32,
        out_scale: f32,
        epilogue: Epilogue,
    ) -> Result<Self, KernelError> {
        if plan.patch_len() > matrix.rows() {
            return Err(KernelError::Shape(format!(
                "patch length {} exceeds matrix rows {}",
                plan.patch_len(),
                matrix.rows()
            )));
        }
        if out_channels > matrix.cols() {
            return Err(KernelError::Shape(format!(
                "{out_channels} output channels exceed matrix cols {}",
                matrix.cols()
            )));
        }
        Ok(Self {
            plan,
            matrix,
            bias,
            out_channels,
            in_scale,
            out_scale,
            epilogue,
        })
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.plan.n_patches()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.plan.out_h(), self.plan.out_w()]
    }
}

/// Convolution as one MVM per im2col patch, output in [C_out, H_out, W_out].
pub fn conv2d(x: &[i8], k: &ConvKernel, noise: Option<ReadNoise<'_>>) -> Result<Vec<i8>, KernelError> {
    let plan = &k.plan;
    if x.len() != plan.input_len() {
        return Err(KernelError::Shape(format!(
            "conv input holds {} codes, expected {}",
            x.len(),
            plan.input_len()
        )));
    }
    let np = plan.n_patches();
    let pl = plan.patch_len();
    let mut patch = vec![0i8; k.matrix.rows()];
    let mut acc = vec![0i32; k.matrix.cols()];
    let mut out = vec![0i8; k.out_channels * np];
    let w_scale = k.matrix.weight_scale.scale;
    let (mult, mid) = match k.epilogue {
        Epilogue::SiLU { mid_scale } => (requant_multiplier(k.in_scale, w_scale, mid_scale), mid_scale),
        _ => (requant_multiplier(k.in_scale, w_scale, k.out_scale), k.out_scale),
    };
    let noise = noise.filter(|n| n.is_active());
    for p in 0..np {
        plan.write_patch(x, p, &mut patch[..pl]);
        accumulate_into(&k.matrix, &patch, &mut acc);
        add_bias(&mut acc, k.bias.as_deref())?;
        if let Some(n) = noise {
            n.apply(&mut acc, k.matrix.rows(), p as u64);
        }
        for j in 0..k.out_channels {
            let q = requantize(acc[j], mult);
            out[j * np + p] = match k.epilogue {
                Epilogue::None => q,
                Epilogue::ReLU => q.max(0),
                Epilogue::SiLU { .. } => super::di::silu_code(q, mid, k.out_scale),
            };
        }
    }
    Ok(out)
}

/// Measured MVM latencies: (rows * cols, microseconds).
const MVM_ANCHORS: [(f64, f64); 3] = [
    (128.0 * 128.0, 0.70),
    (512.0 * 512.0, 2.70),
    (4096.0 * 512.0, 21.60),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnFunction {
    Mvm,
    Conv,
}

/// Stored-matrix dimensions plus the number of MVMs issued (patches for a conv).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnDims {
    pub rows: usize,
    pub cols: usize,
    pub mvms: usize,
}

/// Piecewise-linear MVM latency in `rows * cols`; end segments extrapolate.
pub fn mvm_cost_us(rows: usize, cols: usize) -> f64 {
    let x = (rows * cols) as f64;
    let seg = if x <= MVM_ANCHORS[1].0 { 0 } else { 1 };
    let (x0, y0) = MVM_ANCHORS[seg];
    let (x1, y1) = MVM_ANCHORS[seg + 1];
    (y0 + (x - x0) * (y1 - y0) / (x1 - x0)).max(0.0)
}

/// Simulated latency, for reporting only.
pub fn cost_model(f: AnFunction, dims: AnDims) -> f64 {
    let one = mvm_cost_us(dims.rows, dims.cols);
    match f {
        AnFunction::Mvm => one,
        AnFunction::Conv => one * dims.mvms as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity16() -> AnMatrix {
        let mut d = vec![0i8; 256];
        for i in 0..16 {
            d[i * 16 + i] = 1;
        }
        AnMatrix::new(16, 16, d, QuantParams::unit()).unwrap()
    }

    #[test]
    fn identity_mvm() {
        let x: Vec<i8> = (1..=16).collect();
        assert_eq!(mvm(&identity16(), &x, 1.0, 1.0).unwrap(), x);
    }

    #[test]
    fn saturates_at_127() {
        let m = AnMatrix::new(512, 16, vec![127; 512 * 16], QuantParams::unit()).unwrap();
        let x = vec![127i8; 512];
        let acc = mvm_accumulate(&m, &x).unwrap();
        assert!(acc.iter().all(|&a| a == 8_258_048));
        let y = mvm(&m, &x, 1.0, 1.0).unwrap();
        assert!(y.iter().all(|&v| v == 127));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            mvm(&identity16(), &[1; 15], 1.0, 1.0),
            Err(KernelError::Shape(_))
        ));
    }

    #[test]
    fn matrix_limits() {
        assert!(AnMatrix::new(4096, 512, vec![0; 4096 * 512], QuantParams::unit()).is_ok());
        assert!(AnMatrix::new(4112, 16, vec![0; 4112 * 16], QuantParams::unit()).is_err());
        assert!(AnMatrix::new(16, 528, vec![0; 16 * 528], QuantParams::unit()).is_err());
        assert!(AnMatrix::new(20, 16, vec![0; 320], QuantParams::unit()).is_err());
    }

    #[test]
    fn im2col_identity_for_1x1() {
        let w = Window { kernel: [1, 1], strides: [1, 1], pads: [0; 4] };
        let plan = Im2colPlan::new(3, 2, 2, w).unwrap();
        let x: Vec<i8> = (0..12).collect();
        let m = im2col(&x, &plan).unwrap();
        // row p = pixel p across channels
        for p in 0..4 {
            for c in 0..3 {
                assert_eq!(m[p * 3 + c], x[c * 4 + p]);
            }
        }
    }

    #[test]
    fn im2col_2x2_on_3x3() {
        let w = Window { kernel: [2, 2], strides: [1, 1], pads: [0; 4] };
        let plan = Im2colPlan::new(1, 3, 3, w).unwrap();
        let x: Vec<i8> = (1..=9).collect();
        let m = im2col(&x, &plan).unwrap();
        assert_eq!(
            m,
            vec![1, 2, 4, 5, 2, 3, 5, 6, 4, 5, 7, 8, 5, 6, 8, 9]
        );
    }

    #[test]
    fn im2col_padding_is_zero() {
        let w = Window { kernel: [3, 3], strides: [1, 1], pads: [1; 4] };
        let plan = Im2colPlan::new(1, 2, 2, w).unwrap();
        let m = im2col(&[1, 2, 3, 4], &plan).unwrap();
        // first patch centred on (0,0): top row and left column are padding
        assert_eq!(&m[0..9], &[0, 0, 0, 0, 1, 2, 0, 3, 4]);
    }

    #[test]
    fn table_anchors() {
        assert!((cost_model(AnFunction::Mvm, AnDims { rows: 128, cols: 128, mvms: 1 }) - 0.70).abs() < 1e-9);
        assert!((cost_model(AnFunction::Mvm, AnDims { rows: 512, cols: 512, mvms: 1 }) - 2.70).abs() < 1e-9);
        assert!((cost_model(AnFunction::Mvm, AnDims { rows: 4096, cols: 512, mvms: 1 }) - 21.60).abs() < 1e-9);
        assert!(mvm_cost_us(16, 16) > 0.0);
        let c = cost_model(AnFunction::Conv, AnDims { rows: 128, cols: 128, mvms: 64 });
        assert!((c - 64.0 * 0.70).abs() < 1e-9);
    }
}

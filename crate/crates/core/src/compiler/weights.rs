use super::CompileError;
use crate::kernels::an::{pad16, AnMatrix, MAX_COLS, MAX_ROWS};
use crate::kernels::KernelError;
use crate::model_ir::{shape, GraphNode, OpKind, TensorValue};
use crate::quant::QuantParams;

/// Output-major INT8 weight matrix: one row per output channel, one column
/// per im2col patch element (or MVM input), both zero-padded to 16.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights2d {
    pub rows: usize,
    pub cols: usize,
    pub logical_rows: usize,
    pub logical_cols: usize,
    pub data: Vec<i8>,
}

impl Weights2d {
    fn padded(logical_rows: usize, logical_cols: usize, node: &GraphNode) -> Result<Self, CompileError> {
        let (rows, cols) = (pad16(logical_rows), pad16(logical_cols));
        // the engine stores the transpose: inputs along its 4096 rows
        if cols > MAX_ROWS || rows > MAX_COLS {
            return Err(CompileError::Size {
                node: node.id.clone(),
                message: format!(
                    "{logical_rows}x{logical_cols} weights pad to {rows}x{cols}; the engine holds at most \
                     {MAX_COLS} outputs by {MAX_ROWS} inputs"
                ),
            });
        }
        Ok(Self {
            rows,
            cols,
            logical_rows,
            logical_cols,
            data: vec![0; rows * cols],
        })
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: i8) {
        self.data[r * self.cols + c] = v;
    }

    /// The transposed matrix the MVM engine stores.
    pub fn to_an_matrix(&self, weight_scale: QuantParams) -> Result<AnMatrix, KernelError> {
        AnMatrix::from_output_major(self.rows, self.cols, &self.data, weight_scale)
    }
}

/// Reshapes INT8 weights into accelerator form. Conv weights
/// `[out, in/group, kH, kW]` become `out` rows by `in*kH*kW` columns in
/// im2col order (channel, then kernel row, then kernel column); grouped
/// convolutions become block-diagonal. MVM weights `[out, in]` are used as is.
pub fn reshape_weights(node: &GraphNode, w: &TensorValue) -> Result<Weights2d, CompileError> {
    let codes = w.as_i8().ok_or_else(|| CompileError::Calibration(format!(
        "weights of node {} are {:?}, expected INT8",
        node.id, w.spec.dtype
    )))?;
    let s = w.shape();
    if node.kind.is_conv_class() {
        if s.len() != 4 {
            return Err(CompileError::Ir(crate::model_ir::IrError::Shape {
                node: node.id.clone(),
                message: format!("conv weights must be 4-D, got {s:?}"),
            }));
        }
        let group = shape::conv_group(node)?;
        let (o, cg, kh, kw) = (s[0], s[1], s[2], s[3]);
        if o % group != 0 {
            return Err(CompileError::Ir(crate::model_ir::IrError::Shape {
                node: node.id.clone(),
                message: format!("{o} output channels not divisible by group {group}"),
            }));
        }
        let c = cg * group;
        let k = kh * kw;
        let og = o / group;
        let mut m = Weights2d::padded(o, c * k, node)?;
        for oc in 0..o {
            let gi = oc / og;
            for ci in 0..cg {
                let col0 = (gi * cg + ci) * k;
                for kk in 0..k {
                    m.set(oc, col0 + kk, codes[(oc * cg + ci) * k + kk]);
                }
            }
        }
        Ok(m)
    } else if node.kind == OpKind::MVM {
        if s.len() != 2 {
            return Err(CompileError::Ir(crate::model_ir::IrError::Shape {
                node: node.id.clone(),
                message: format!("MVM weights must be [out, in], got {s:?}"),
            }));
        }
        let (o, i) = (s[0], s[1]);
        let mut m = Weights2d::padded(o, i, node)?;
        for r in 0..o {
            for c in 0..i {
                m.set(r, c, codes[r * i + c]);
            }
        }
        Ok(m)
    } else {
        Err(CompileError::Unsupported {
            node: node.id.clone(),
            kind: node.kind,
            reason: "only Conv-class and MVM nodes carry weights".into(),
        })
    }
}

/// Block-diagonal weights of an average pool lowered to a depthwise
/// convolution. Every tap holds 1/(kH*kW), which quantizes to code 127.
pub fn avgpool_weights(node: &GraphNode, channels: usize, kernel: [usize; 2]) -> Result<(Weights2d, QuantParams), CompileError> {
    let k = kernel[0] * kernel[1];
    let tap = 1.0 / k as f32;
    let scale = QuantParams::from_max_abs(tap).expect("positive tap");
    let mut m = Weights2d::padded(channels, channels * k, node)?;
    for c in 0..channels {
        for kk in 0..k {
            m.set(c, c * k + kk, crate::quant::quantize(tap, scale.scale));
        }
    }
    Ok((m, scale))
}

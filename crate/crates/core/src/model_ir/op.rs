use std::fmt;

use serde::{Deserialize, Serialize};

/// Operation kinds understood by the toolchain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv2D,
    FusedConvReLU,
    FusedConvSiLU,
    MVM,
    Add,
    FusedAddReLU,
    ReLU,
    Sigmoid,
    Mul,
    SiLU,
    MaxPool,
    AvgPool,
    Concat,
    Split,
    Flatten,
    Reshape,
    QuantizeLinear,
    DequantizeLinear,
}

/// Input/output count contract of an [`OpKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arity {
    pub min_inputs: usize,
    /// `None` means unbounded.
    pub max_inputs: Option<usize>,
    /// `None` means one or more.
    pub outputs: Option<usize>,
}

impl Arity {
    const fn fixed(inputs: usize, outputs: usize) -> Self {
        Self {
            min_inputs: inputs,
            max_inputs: Some(inputs),
            outputs: Some(outputs),
        }
    }

    pub fn accepts(&self, inputs: usize, outputs: usize) -> bool {
        let ins = inputs >= self.min_inputs && self.max_inputs.is_none_or(|m| inputs <= m);
        let outs = match self.outputs {
            Some(n) => outputs == n,
            None => outputs >= 1,
        };
        ins && outs
    }
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::Conv2D,
        OpKind::FusedConvReLU,
        OpKind::FusedConvSiLU,
        OpKind::MVM,
        OpKind::Add,
        OpKind::FusedAddReLU,
        OpKind::ReLU,
        OpKind::Sigmoid,
        OpKind::Mul,
        OpKind::SiLU,
        OpKind::MaxPool,
        OpKind::AvgPool,
        OpKind::Concat,
        OpKind::Split,
        OpKind::Flatten,
        OpKind::Reshape,
        OpKind::QuantizeLinear,
        OpKind::DequantizeLinear,
    ];

    pub fn arity(self) -> Arity {
        use OpKind::*;
        match self {
            // data, weights, optional bias
            Conv2D | FusedConvReLU | FusedConvSiLU | MVM => Arity {
                min_inputs: 2,
                max_inputs: Some(3),
                outputs: Some(1),
            },
            Add | FusedAddReLU | Mul => Arity::fixed(2, 1),
            ReLU | Sigmoid | SiLU | MaxPool | AvgPool | Flatten | Reshape | QuantizeLinear
            | DequantizeLinear => Arity::fixed(1, 1),
            Concat => Arity {
                min_inputs: 1,
                max_inputs: None,
                outputs: Some(1),
            },
            Split => Arity {
                min_inputs: 1,
                max_inputs: Some(1),
                outputs: None,
            },
        }
    }

    pub fn required_attrs(self) -> &'static [&'static str] {
        use OpKind::*;
        match self {
            Conv2D | FusedConvReLU | FusedConvSiLU => &["kernel_shape", "strides", "pads"],
            MaxPool | AvgPool => &["kernel_shape"],
            Concat => &["axis"],
            Split => &["axis", "split_sizes"],
            Reshape => &["shape"],
            QuantizeLinear | DequantizeLinear => &["scale"],
            _ => &[],
        }
    }

    pub fn is_conv_class(self) -> bool {
        matches!(self, OpKind::Conv2D | OpKind::FusedConvReLU | OpKind::FusedConvSiLU)
    }

    pub fn is_add_class(self) -> bool {
        matches!(self, OpKind::Add | OpKind::FusedAddReLU)
    }

    /// Kinds whose second (and third) inputs are weights (and bias).
    pub fn has_weights(self) -> bool {
        self.is_conv_class() || self == OpKind::MVM
    }

    pub fn as_str(self) -> &'static str {
        use OpKind::*;
        match self {
            Conv2D => "Conv2D",
            FusedConvReLU => "FusedConvReLU",
            FusedConvSiLU => "FusedConvSiLU",
            MVM => "MVM",
            Add => "Add",
            FusedAddReLU => "FusedAddReLU",
            ReLU => "ReLU",
            Sigmoid => "Sigmoid",
            Mul => "Mul",
            SiLU => "SiLU",
            MaxPool => "MaxPool",
            AvgPool => "AvgPool",
            Concat => "Concat",
            Split => "Split",
            Flatten => "Flatten",
            Reshape => "Reshape",
            QuantizeLinear => "QuantizeLinear",
            DequantizeLinear => "DequantizeLinear",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scalar or list attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
    Floats(Vec<f64>),
    Str(String),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            AttrValue::Float(v) => Some(*v),
            AttrValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            AttrValue::Ints(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Str(v) => Some(v),
            _ => None,
        }
    }
}

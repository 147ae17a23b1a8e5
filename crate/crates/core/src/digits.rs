//! Synthetic 8x8 digit images and a two-layer CNN trained with plain SGD.
//! Serves as the desk-scale classifier for accuracy and noise studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model_ir::{AttrValue, DType, GraphNode, ModelGraph, OpKind, TensorSpec, TensorValue};

pub const SIDE: usize = 8;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;

const GLYPHS: [[&str; SIDE]; CLASSES] = [
    [
        "..####..", ".#....#.", ".#...##.", ".#..#.#.", ".#.#..#.", ".##...#.", ".#....#.", "..####..",
    ],
    [
        "...##...", "..###...", ".#.##...", "...##...", "...##...", "...##...", "...##...", ".######.",
    ],
    [
        "..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######.",
    ],
    [
        "..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.", "..####..",
    ],
    [
        ".....#..", "....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..",
    ],
    [
        ".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####..",
    ],
    [
        "...###..", "..#.....", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        ".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "...#....",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#....#.", ".#....#.", ".#....#.", "..#####.", "......#.", ".....#..", "..###...",
    ],
];

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image `i` as a `[1, 1, 8, 8]` FP32 tensor.
    pub fn tensor(&self, i: usize) -> TensorValue {
        TensorValue::fp32("image", vec![1, 1, SIDE, SIDE], self.images[i].clone()).expect("image shape")
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
}

/// `n` images with balanced labels: glyphs shifted by up to one pixel,
/// scaled in intensity, with Gaussian pixel noise and random dropouts.
pub fn generate(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::default();
    for i in 0..n {
        let label = i % CLASSES;
        let (dx, dy) = (rng.gen_range(-1i32..=1), rng.gen_range(-1i32..=1));
        let gain = rng.gen_range(0.6f32..1.0);
        let mut img = vec![0f32; PIXELS];
        for (y, row) in GLYPHS[label].iter().enumerate() {
            for (x, c) in row.bytes().enumerate() {
                let (ty, tx) = (y as i32 + dy, x as i32 + dx);
                if c == b'#' && (0..SIDE as i32).contains(&ty) && (0..SIDE as i32).contains(&tx) {
                    img[ty as usize * SIDE + tx as usize] = gain;
                }
            }
        }
        for p in &mut img {
            if rng.gen_bool(0.05) {
                *p = 0.0;
            }
            *p += 0.2 * normal(&mut rng);
        }
        ds.images.push(img);
        ds.labels.push(label);
    }
    ds
}

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Visits every (output index, input index, weight index) triple.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = self.out_hw();
        for co in 0..self.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (co * oh + oy) * ow + ox;
                    for ci in 0..self.cin {
                        for ky in 0..self.k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy as usize >= self.h {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix as usize >= self.w {
                                    continue;
                                }
                                let i = (ci * self.h + iy as usize) * self.w + ix as usize;
                                let wi = ((co * self.cin + ci) * self.k + ky) * self.k + kx;
                                f(o, i, wi);
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
        let (oh, ow) = self.out_hw();
        let mut out: Vec<f32> = (0..self.cout * oh * ow).map(|o| b[o / (oh * ow)]).collect();
        self.for_each(|o, i, wi| out[o] += x[i] * w[wi]);
        out
    }

    /// Accumulates weight/bias gradients; returns the input gradient.
    fn backward(&self, x: &[f32], w: &[f32], dout: &[f32], dw: &mut [f32], db: &mut [f32]) -> Vec<f32> {
        let (oh, ow) = self.out_hw();
        let mut dx = vec![0f32; x.len()];
        for (o, d) in dout.iter().enumerate() {
            db[o / (oh * ow)] += d;
        }
        self.for_each(|o, i, wi| {
            dw[wi] += dout[o] * x[i];
            dx[i] += dout[o] * w[wi];
        });
        dx
    }
}

const L1: ConvGeom = ConvGeom {
    cin: 1,
    h: SIDE,
    w: SIDE,
    cout: 8,
    k: 3,
    stride: 1,
    pad: 1,
};
const L2: ConvGeom = ConvGeom {
    cin: 8,
    h: SIDE,
    w: SIDE,
    cout: 16,
    k: 3,
    stride: 2,
    pad: 1,
};
const FLAT: usize = 16 * 4 * 4;

/// conv3x3(1->8)+ReLU, conv3x3/2(8->16)+ReLU, dense(256->10).
#[derive(Debug, Clone)]
pub struct TinyCnn {
    params: [Vec<f32>; 6],
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch: 16,
            lr: 0.03,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TinyCnn {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |n: usize, fan_in: usize| -> Vec<f32> {
            let s = (2.0 / fan_in as f32).sqrt();
            (0..n).map(|_| s * normal(&mut rng)).collect()
        };
        Self {
            params: [
                he(8 * 9, 9),
                vec![0.0; 8],
                he(16 * 8 * 9, 72),
                vec![0.0; 16],
                he(CLASSES * FLAT, FLAT),
                vec![0.0; CLASSES],
            ],
        }
    }

    fn dense(&self, a: &[f32]) -> Vec<f32> {
        let (w, b) = (&self.params[4], &self.params[5]);
        (0..CLASSES)
            .map(|c| b[c] + w[c * FLAT..(c + 1) * FLAT].iter().zip(a).map(|(x, y)| x * y).sum::<f32>())
            .collect()
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f32> {
        let a1: Vec<f32> = L1.forward(x, &self.params[0], &self.params[1]).into_iter().map(|v| v.max(0.0)).collect();
        let a2: Vec<f32> = L2.forward(&a1, &self.params[2], &self.params[3]).into_iter().map(|v| v.max(0.0)).collect();
        self.dense(&a2)
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let hits = (0..ds.len()).filter(|&i| self.predict(&ds.images[i]) == ds.labels[i]).count();
        hits as f64 / ds.len().max(1) as f64
    }

    /// Adds the softmax cross-entropy gradient of one sample to `grads`.
    fn accumulate(&self, x: &[f32], label: usize, grads: &mut [Vec<f32>; 6]) {
        let z1 = L1.forward(x, &self.params[0], &self.params[1]);
        let a1: Vec<f32> = z1.iter().map(|v| v.max(0.0)).collect();
        let z2 = L2.forward(&a1, &self.params[2], &self.params[3]);
        let a2: Vec<f32> = z2.iter().map(|v| v.max(0.0)).collect();
        let logits = self.dense(&a2);
        let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f32> = logits.iter().map(|v| (v - m).exp()).collect();
        let sum: f32 = e.iter().sum();
        let dlog: Vec<f32> = e
            .iter()
            .enumerate()
            .map(|(c, v)| v / sum - if c == label { 1.0 } else { 0.0 })
            .collect();
        let [g0, g1, g2, g3, g4, g5] = grads;
        let mut da2 = vec![0f32; FLAT];
        for c in 0..CLASSES {
            g5[c] += dlog[c];
            for k in 0..FLAT {
                g4[c * FLAT + k] += dlog[c] * a2[k];
                da2[k] += dlog[c] * self.params[4][c * FLAT + k];
            }
        }
        let dz2: Vec<f32> = da2.iter().zip(&z2).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
        let da1 = L2.backward(&a1, &self.params[2], &dz2, g2, g3);
        let dz1: Vec<f32> = da1.iter().zip(&z1).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
        L1.backward(x, &self.params[0], &dz1, g0, g1);
    }

    /// Mini-batch SGD with momentum; returns the trained network.
    pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Self {
        let mut net = Self::init(cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut velocity: Vec<Vec<f32>> = net.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut order: Vec<usize> = (0..ds.len()).collect();
        for epoch in 0..cfg.epochs {
            // Fisher-Yates
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let lr = cfg.lr * if epoch >= cfg.epochs * 2 / 3 { 0.3 } else { 1.0 };
            for batch in order.chunks(cfg.batch) {
                let mut grads: [Vec<f32>; 6] = net.params.clone().map(|p| vec![0.0; p.len()]);
                for &i in batch {
                    net.accumulate(&ds.images[i], ds.labels[i], &mut grads);
                }
                let scale = 1.0 / batch.len() as f32;
                for ((p, g), v) in net.params.iter_mut().zip(&grads).zip(&mut velocity) {
                    for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = cfg.momentum * *vi - lr * gi * scale;
                        *pi += *vi;
                    }
                }
            }
        }
        net
    }

    /// Exports the network as an unfused model graph (Conv, ReLU, Flatten, MVM).
    pub fn to_graph(&self) -> ModelGraph {
        let mut g = ModelGraph::default();
        g.inputs.push(TensorSpec::new("image", vec![1, 1, SIDE, SIDE], DType::Fp32));
        g.outputs.push(TensorSpec::new("logits", vec![1, CLASSES], DType::Fp32));
        let shapes: [Vec<usize>; 6] = [
            vec![8, 1, 3, 3],
            vec![8],
            vec![16, 8, 3, 3],
            vec![16],
            vec![CLASSES, FLAT],
            vec![CLASSES],
        ];
        let names = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc.w", "fc.b"];
        for ((n, s), p) in names.iter().zip(shapes).zip(&self.params) {
            g.initializers
                .insert(n.to_string(), TensorValue::fp32(*n, s, p.clone()).expect("param shape"));
        }
        let conv = |id: &str, x: &str, w: &str, b: &str, y: &str, stride: i64| {
            GraphNode::new(id, OpKind::Conv2D, &[x, w, b], &[y])
                .with_ints("kernel_shape", &[3, 3])
                .with_ints("strides", &[stride, stride])
                .with_ints("pads", &[1, 1, 1, 1])
        };
        g.nodes = vec![
            conv("conv1", "image", "conv1.w", "conv1.b", "c1", 1),
            GraphNode::new("relu1", OpKind::ReLU, &["c1"], &["a1"]),
            conv("conv2", "a1", "conv2.w", "conv2.b", "c2", 2),
            GraphNode::new("relu2", OpKind::ReLU, &["c2"], &["a2"]),
            GraphNode::new("flatten", OpKind::Flatten, &["a2"], &["flat"]).with_attr("axis", AttrValue::Int(1)),
            GraphNode::new("fc", OpKind::MVM, &["flat", "fc.w", "fc.b"], &["logits"]),
        ];
        g
    }
}

pub fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

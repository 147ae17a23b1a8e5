//! Seeded structural model replicas and random graphs used by tests,
//! benchmarks and the `gen` command. Weights are random; only the topology
//! mirrors the reference networks.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model_ir::{AttrValue, DType, GraphNode, ModelGraph, OpKind, TensorSpec, TensorValue};

/// Incremental graph construction with shape tracking and seeded weights.
pub struct GraphBuilder {
    g: ModelGraph,
    shapes: HashMap<String, Vec<usize>>,
    rng: ChaCha8Rng,
    /// Emit FusedConvReLU / FusedAddReLU directly instead of separate ReLU nodes.
    pub fused: bool,
}

impl GraphBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            g: ModelGraph::default(),
            shapes: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            fused: false,
        }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> String {
        self.g.inputs.push(TensorSpec::new(name, shape.to_vec(), DType::Fp32));
        self.shapes.insert(name.to_string(), shape.to_vec());
        name.to_string()
    }

    pub fn output(&mut self, name: &str) {
        let shape = self.shapes[name].clone();
        self.g.outputs.push(TensorSpec::new(name, shape, DType::Fp32));
    }

    pub fn shape(&self, t: &str) -> &[usize] {
        &self.shapes[t]
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn finish(self) -> ModelGraph {
        self.g
    }

    fn uniform(&mut self, n: usize, bound: f32) -> Vec<f32> {
        (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect()
    }

    pub fn initializer(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> String {
        self.shapes.insert(name.to_string(), shape.clone());
        let v = TensorValue::fp32(name, shape, data).expect("initializer shape");
        self.g.initializers.insert(name.to_string(), v);
        name.to_string()
    }

    /// Adds a node whose output shapes come from shape inference.
    pub fn node(&mut self, node: GraphNode) -> Vec<String> {
        let ins: Vec<&[usize]> = node.inputs.iter().map(|t| self.shapes[t].as_slice()).collect();
        let outs = crate::model_ir::shape::node_output_shapes(&node, &ins)
            .unwrap_or_else(|e| panic!("builder produced an ill-shaped node: {e}"));
        for (t, s) in node.outputs.iter().zip(outs) {
            self.shapes.insert(t.clone(), s);
        }
        let names = node.outputs.clone();
        self.g.nodes.push(node);
        names
    }

    fn one(&mut self, node: GraphNode) -> String {
        self.node(node).remove(0)
    }

    /// Conv with random He-uniform weights and a small bias. `relu` appends
    /// a ReLU (or fuses it when `fused` is set).
    #[allow(clippy::too_many_arguments)]
    pub fn conv(&mut self, id: &str, x: &str, cout: usize, k: usize, stride: usize, pad: usize, relu: bool) -> String {
        let cin = self.shapes[x][1];
        let fan_in = cin * k * k;
        let bound = (6.0 / fan_in as f32).sqrt();
        let w = self.uniform(cout * fan_in, bound);
        let b = self.uniform(cout, 0.1);
        let wn = self.initializer(&format!("{id}.w"), vec![cout, cin, k, k], w);
        let bn = self.initializer(&format!("{id}.b"), vec![cout], b);
        let kind = if relu && self.fused { OpKind::FusedConvReLU } else { OpKind::Conv2D };
        let conv_out = format!("{id}.out");
        let node = GraphNode::new(id, kind, &[x, &wn, &bn], &[&conv_out])
            .with_ints("kernel_shape", &[k as i64, k as i64])
            .with_ints("strides", &[stride as i64, stride as i64])
            .with_ints("pads", &[pad as i64; 4]);
        let y = self.one(node);
        if relu && !self.fused {
            self.relu(&format!("{id}.relu"), &y)
        } else {
            y
        }
    }

    pub fn relu(&mut self, id: &str, x: &str) -> String {
        let out = format!("{id}.out");
        self.one(GraphNode::new(id, OpKind::ReLU, &[x], &[&out]))
    }

    pub fn add(&mut self, id: &str, a: &str, b: &str, relu: bool) -> String {
        let out = format!("{id}.out");
        let kind = if relu && self.fused { OpKind::FusedAddReLU } else { OpKind::Add };
        let y = self.one(GraphNode::new(id, kind, &[a, b], &[&out]));
        if relu && !self.fused {
            self.relu(&format!("{id}.relu"), &y)
        } else {
            y
        }
    }

    pub fn unary(&mut self, id: &str, kind: OpKind, x: &str) -> String {
        let out = format!("{id}.out");
        self.one(GraphNode::new(id, kind, &[x], &[&out]))
    }

    pub fn binary(&mut self, id: &str, kind: OpKind, a: &str, b: &str) -> String {
        let out = format!("{id}.out");
        self.one(GraphNode::new(id, kind, &[a, b], &[&out]))
    }

    pub fn pool(&mut self, id: &str, kind: OpKind, x: &str, k: usize, stride: usize) -> String {
        let out = format!("{id}.out");
        self.one(
            GraphNode::new(id, kind, &[x], &[&out])
                .with_ints("kernel_shape", &[k as i64, k as i64])
                .with_ints("strides", &[stride as i64, stride as i64]),
        )
    }

    pub fn flatten(&mut self, id: &str, x: &str) -> String {
        let out = format!("{id}.out");
        self.one(GraphNode::new(id, OpKind::Flatten, &[x], &[&out]).with_attr("axis", AttrValue::Int(1)))
    }

    pub fn mvm(&mut self, id: &str, x: &str, outputs: usize) -> String {
        let k: usize = self.shapes[x].iter().product();
        let bound = (6.0 / k as f32).sqrt();
        let w = self.uniform(outputs * k, bound);
        let b = self.uniform(outputs, 0.1);
        let wn = self.initializer(&format!("{id}.w"), vec![outputs, k], w);
        let bn = self.initializer(&format!("{id}.b"), vec![outputs], b);
        let out = format!("{id}.out");
        self.one(GraphNode::new(id, OpKind::MVM, &[x, &wn, &bn], &[&out]))
    }

    pub fn concat(&mut self, id: &str, parts: &[&str], axis: i64) -> String {
        let out = format!("{id}.out");
        self.one(GraphNode::new(id, OpKind::Concat, parts, &[&out]).with_attr("axis", AttrValue::Int(axis)))
    }

    pub fn split(&mut self, id: &str, x: &str, axis: i64, sizes: &[usize]) -> Vec<String> {
        let outs: Vec<String> = (0..sizes.len()).map(|i| format!("{id}.out{i}")).collect();
        let refs: Vec<&str> = outs.iter().map(|s| s.as_str()).collect();
        let sizes: Vec<i64> = sizes.iter().map(|&s| s as i64).collect();
        self.node(
            GraphNode::new(id, OpKind::Split, &[x], &refs)
                .with_attr("axis", AttrValue::Int(axis))
                .with_ints("split_sizes", &sizes),
        )
    }
}

/// Single MVM layer `[1, inputs] -> [1, outputs]`.
pub fn single_mvm(inputs: usize, outputs: usize, seed: u64) -> ModelGraph {
    let mut b = GraphBuilder::new(seed);
    let x = b.input("x", &[1, inputs]);
    let y = b.mvm("fc", &x, outputs);
    b.output(&y);
    b.finish()
}

fn resnet8_builder(seed: u64, hw: usize, fused: bool) -> ModelGraph {
    let mut b = GraphBuilder::new(seed);
    b.fused = fused;
    let x = b.input("input", &[1, 3, hw, hw]);
    let x = b.conv("conv0", &x, 16, 3, 1, 1, true);
    // stack 1: identity shortcut
    let y = b.conv("s1.conv_a", &x, 16, 3, 1, 1, true);
    let y = b.conv("s1.conv_b", &y, 16, 3, 1, 1, false);
    let x = b.add("s1.add", &x, &y, true);
    // stacks 2 and 3: strided with 1x1 projection
    let mut x = x;
    for (s, c) in [(2, 32), (3, 64)] {
        let y = b.conv(&format!("s{s}.conv_a"), &x, c, 3, 2, 1, true);
        let y = b.conv(&format!("s{s}.conv_b"), &y, c, 3, 1, 1, false);
        let p = b.conv(&format!("s{s}.proj"), &x, c, 1, 2, 0, false);
        x = b.add(&format!("s{s}.add"), &p, &y, true);
    }
    let side = b.shape(&x)[2];
    let x = b.pool("avgpool", OpKind::AvgPool, &x, side, side);
    let x = if fused { x } else { b.flatten("flatten", &x) };
    let y = b.mvm("fc", &x, 10);
    b.output(&y);
    b.finish()
}

/// ResNet8 replica as exported from a framework: 22 nodes (9 Conv2D, 7 ReLU,
/// 3 Add, AvgPool, Flatten, MVM) that compile to 14 accelerator nodes.
pub fn resnet8(seed: u64) -> ModelGraph {
    resnet8_builder(seed, 32, false)
}

/// ResNet8 replica with a smaller input, for fast tests.
pub fn resnet8_small(seed: u64, hw: usize) -> ModelGraph {
    resnet8_builder(seed, hw, false)
}

/// The 14-node ResNet8 replica in fused form: 9 conv-class, 3 FusedAddReLU,
/// AvgPool and MVM.
pub fn resnet8_fused(seed: u64) -> ModelGraph {
    resnet8_builder(seed, 32, true)
}

/// 30-node ResNet18-style replica in fused form: 20 conv-class nodes
/// (17 on the main path, 3 projections), 8 FusedAddReLU, AvgPool and MVM.
pub fn resnet18s(seed: u64) -> ModelGraph {
    let mut b = GraphBuilder::new(seed);
    b.fused = true;
    let x = b.input("input", &[1, 3, 32, 32]);
    let mut x = b.conv("conv1", &x, 8, 3, 1, 1, true);
    let mut c_prev = 8;
    for (stage, c) in [8usize, 16, 32, 64].into_iter().enumerate() {
        for blk in 0..2 {
            let stride = if stage > 0 && blk == 0 { 2 } else { 1 };
            let p = format!("l{}.{}", stage + 1, blk);
            let y = b.conv(&format!("{p}.conv_a"), &x, c, 3, stride, 1, true);
            let y = b.conv(&format!("{p}.conv_b"), &y, c, 3, 1, 1, false);
            let short = if stride != 1 || c != c_prev {
                b.conv(&format!("{p}.proj"), &x, c, 1, stride, 0, false)
            } else {
                x.clone()
            };
            x = b.add(&format!("{p}.add"), &short, &y, true);
            c_prev = c;
        }
    }
    let side = b.shape(&x)[2];
    let x = b.pool("avgpool", OpKind::AvgPool, &x, side, side);
    let y = b.mvm("fc", &x, 10);
    b.output(&y);
    b.finish()
}

/// Linear chain of `stages` 3x3 conv+ReLU layers with constant width.
pub fn conv_chain(stages: usize, channels: usize, hw: usize, seed: u64) -> ModelGraph {
    let mut b = GraphBuilder::new(seed);
    let mut x = b.input("x", &[1, channels, hw, hw]);
    for i in 0..stages {
        x = b.conv(&format!("stage{i}"), &x, channels, 3, 1, 1, true);
    }
    b.output(&x);
    b.finish()
}

/// YOLO-style block: Conv followed by Sigmoid/Mul, a channel split, a
/// second Conv+SiLU branch, concat and max pooling.
pub fn yolo_snippet(seed: u64) -> ModelGraph {
    let mut b = GraphBuilder::new(seed);
    let x = b.input("images", &[1, 3, 16, 16]);
    let c = b.conv("stem", &x, 16, 3, 1, 1, false);
    let s = b.unary("stem.sigmoid", OpKind::Sigmoid, &c);
    let x = b.binary("stem.mul", OpKind::Mul, &c, &s);
    let parts = b.split("c2f.split", &x, 1, &[8, 8]);
    let c = b.conv("c2f.conv", &parts[1], 8, 3, 1, 1, false);
    let s = b.unary("c2f.sigmoid", OpKind::Sigmoid, &c);
    let y = b.binary("c2f.mul", OpKind::Mul, &c, &s);
    let x = b.concat("c2f.concat", &[&parts[0], &parts[1], &y], 1);
    let x = b.pool("sppf.pool", OpKind::MaxPool, &x, 2, 2);
    b.output(&x);
    b.finish()
}

/// Uniform [-1, 1] FP32 samples for every graph input.
pub fn random_inputs(g: &ModelGraph, n: usize, seed: u64) -> Vec<Vec<TensorValue>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            g.inputs
                .iter()
                .map(|s| {
                    let data = (0..s.numel()).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
                    TensorValue::fp32(s.name.clone(), s.shape.clone(), data).expect("input shape")
                })
                .collect()
        })
        .collect()
}

/// Random DAG of at most `max_nodes` nodes over 4-D activations, drawn
/// from the ops the compiler accepts. Tensors are sometimes consumed twice
/// so fusion patterns both fire and are blocked.
pub fn random_graph(seed: u64, max_nodes: usize) -> ModelGraph {
    let mut b = GraphBuilder::new(seed);
    let c0 = b.rng().gen_range(1..=4);
    let hw = b.rng().gen_range(4..=8);
    let x = b.input("x", &[1, c0, hw, hw]);
    let mut live: Vec<String> = vec![x];
    let mut i = 0;
    while b.g.nodes.len() < max_nodes.saturating_sub(1) {
        let pick = {
            let r = b.rng().gen_range(0..live.len());
            // bias toward recent tensors to grow depth
            let r2 = live.len() - 1;
            if b.rng().gen_bool(0.6) { r2 } else { r }
        };
        let t = live[pick].clone();
        let shape = b.shape(&t).to_vec();
        let id = format!("n{i}");
        i += 1;
        let room = max_nodes - 1 - b.g.nodes.len();
        let choice = b.rng().gen_range(0..10);
        let out = match choice {
            0 | 1 => {
                let cout = b.rng().gen_range(1..=6);
                let k = [1, 3][b.rng().gen_range(0..2)];
                b.conv(&id, &t, cout, k, 1, k / 2, false)
            }
            2 => b.relu(&id, &t),
            3 if room >= 2 => {
                let s = b.unary(&format!("{id}.sig"), OpKind::Sigmoid, &t);
                b.binary(&id, OpKind::Mul, &t, &s)
            }
            3 => b.unary(&id, OpKind::Sigmoid, &t),
            4 => {
                let same: Vec<String> = live.iter().filter(|o| b.shape(o) == shape.as_slice()).cloned().collect();
                let other = same[b.rng().gen_range(0..same.len())].clone();
                b.add(&id, &t, &other, false)
            }
            5 if shape[2] >= 2 && shape[3] >= 2 => {
                let kind = if b.rng().gen_bool(0.5) { OpKind::MaxPool } else { OpKind::AvgPool };
                b.pool(&id, kind, &t, 2, 1)
            }
            6 => {
                let same: Vec<String> = live
                    .iter()
                    .filter(|o| b.shape(o)[2..] == shape[2..])
                    .cloned()
                    .collect();
                let other = same[b.rng().gen_range(0..same.len())].clone();
                b.concat(&id, &[&t, &other], 1)
            }
            7 if shape[1] >= 2 => {
                let a = b.rng().gen_range(1..shape[1]);
                let parts = b.split(&id, &t, 1, &[a, shape[1] - a]);
                live.extend(parts.iter().cloned());
                parts[0].clone()
            }
            8 if room >= 2 => {
                // Reshape round trip that optimize must see through only
                // when the consumer is layout-agnostic
                let flat = b.flatten(&format!("{id}.flat"), &t);
                let k = b.rng().gen_range(2..=5);
                b.mvm(&id, &flat, k)
            }
            _ => {
                let cout = shape[1];
                b.conv(&id, &t, cout, 3, 1, 1, false)
            }
        };
        if b.shape(&out).len() == 4 {
            live.push(out);
        } else {
            // 2-D tensors end a branch
            b.output(&out);
        }
    }
    let last = live.last().cloned().expect("input is live");
    if !b.g.outputs.iter().any(|o| o.name == last) && b.g.inputs.iter().all(|i| i.name != last) {
        b.output(&last);
    }
    if b.g.outputs.is_empty() {
        let y = b.relu("tail", &last);
        b.output(&y);
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(g: &ModelGraph, k: OpKind) -> usize {
        g.nodes.iter().filter(|n| n.kind == k).count()
    }

    #[test]
    fn resnet8_raw_structure() {
        let g = resnet8(1);
        g.validate().unwrap();
        assert_eq!(g.nodes.len(), 22);
        assert_eq!(count(&g, OpKind::Conv2D), 9);
        assert_eq!(count(&g, OpKind::ReLU), 7);
        assert_eq!(count(&g, OpKind::Add), 3);
    }

    #[test]
    fn resnet8_fused_structure() {
        let g = resnet8_fused(1);
        g.validate().unwrap();
        assert_eq!(g.nodes.len(), 14);
        let conv = g.nodes.iter().filter(|n| n.kind.is_conv_class()).count();
        assert_eq!(conv, 9);
        assert_eq!(count(&g, OpKind::FusedAddReLU), 3);
        assert_eq!(count(&g, OpKind::AvgPool), 1);
        assert_eq!(count(&g, OpKind::MVM), 1);
    }

    #[test]
    fn resnet18s_structure() {
        let g = resnet18s(1);
        g.validate().unwrap();
        assert_eq!(g.nodes.len(), 30);
        assert_eq!(g.nodes.iter().filter(|n| n.kind.is_conv_class()).count(), 20);
        assert_eq!(count(&g, OpKind::FusedAddReLU), 8);
    }

    #[test]
    fn random_graphs_validate() {
        for seed in 0..200 {
            let g = random_graph(seed, 15);
            g.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(g.nodes.len() <= 15, "seed {seed}: {} nodes", g.nodes.len());
            crate::model_ir::infer_shapes(&g).unwrap();
        }
    }
}

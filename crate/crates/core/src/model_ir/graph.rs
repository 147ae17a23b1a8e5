use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::op::{AttrValue, OpKind};
use super::tensor::{TensorSpec, TensorValue};
use super::IrError;
use crate::quant::QuantParams;

/// One operation of the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    #[serde(rename = "op")]
    pub kind: OpKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, AttrValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub quant: BTreeMap<String, QuantParams>,
}

impl GraphNode {
    pub fn new(
        id: impl Into<String>,
        kind: OpKind,
        inputs: &[&str],
        outputs: &[&str],
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            attrs: BTreeMap::new(),
            quant: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn with_ints(self, key: &str, values: &[i64]) -> Self {
        self.with_attr(key, AttrValue::Ints(values.to_vec()))
    }

    pub fn attr_int(&self, key: &str) -> Result<i64, IrError> {
        self.attrs
            .get(key)
            .ok_or_else(|| IrError::validation(&self.id, format!("missing attribute `{key}`")))?
            .as_int()
            .ok_or_else(|| IrError::validation(&self.id, format!("attribute `{key}` must be an integer")))
    }

    pub fn attr_float(&self, key: &str) -> Result<f64, IrError> {
        self.attrs
            .get(key)
            .ok_or_else(|| IrError::validation(&self.id, format!("missing attribute `{key}`")))?
            .as_float()
            .ok_or_else(|| IrError::validation(&self.id, format!("attribute `{key}` must be a number")))
    }

    pub fn attr_ints(&self, key: &str) -> Result<Vec<i64>, IrError> {
        match self.attrs.get(key) {
            None => Err(IrError::validation(&self.id, format!("missing attribute `{key}`"))),
            Some(AttrValue::Ints(v)) => Ok(v.clone()),
            // an empty JSON list deserializes as Ints([]), a single int is accepted as a list
            Some(AttrValue::Int(v)) => Ok(vec![*v]),
            Some(_) => Err(IrError::validation(
                &self.id,
                format!("attribute `{key}` must be a list of integers"),
            )),
        }
    }

    pub fn attr_ints_or(&self, key: &str, default: &[i64]) -> Result<Vec<i64>, IrError> {
        if self.attrs.contains_key(key) {
            self.attr_ints(key)
        } else {
            Ok(default.to_vec())
        }
    }
}

/// Where a tensor comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Producer {
    GraphInput(usize),
    Initializer,
    /// (node index, output index)
    Node(usize, usize),
}

/// The whole model: a DAG of nodes plus constant initializers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelGraph {
    pub nodes: Vec<GraphNode>,
    pub initializers: BTreeMap<String, TensorValue>,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<TensorSpec>,
}

/// Boolean node-to-node connection matrix, indexed by `ids` (topological order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    pub ids: Vec<String>,
    matrix: Vec<bool>,
}

impl Adjacency {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.matrix[i * self.ids.len() + j]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn connected(&self, src: &str, dst: &str) -> bool {
        match (self.index_of(src), self.index_of(dst)) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => false,
        }
    }

    /// All true entries as (row, col) in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.ids.len();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j))
            .collect()
    }

    pub fn from_edges(ids: Vec<String>, edges: &[(usize, usize)]) -> Self {
        let n = ids.len();
        let mut matrix = vec![false; n * n];
        for &(i, j) in edges {
            matrix[i * n + j] = true;
        }
        Self { ids, matrix }
    }
}

impl ModelGraph {
    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn is_graph_output(&self, tensor: &str) -> bool {
        self.outputs.iter().any(|o| o.name == tensor)
    }

    /// Producer of every tensor name. Duplicate producers are reported by
    /// [`ModelGraph::validate`]; here the first one wins.
    pub fn producers(&self) -> HashMap<&str, Producer> {
        let mut map = HashMap::new();
        for (i, spec) in self.inputs.iter().enumerate() {
            map.entry(spec.name.as_str()).or_insert(Producer::GraphInput(i));
        }
        for name in self.initializers.keys() {
            map.entry(name.as_str()).or_insert(Producer::Initializer);
        }
        for (ni, node) in self.nodes.iter().enumerate() {
            for (oi, t) in node.outputs.iter().enumerate() {
                map.entry(t.as_str()).or_insert(Producer::Node(ni, oi));
            }
        }
        map
    }

    /// Consumers of every tensor as (node index, input slot).
    pub fn consumers(&self) -> HashMap<&str, Vec<(usize, usize)>> {
        let mut map: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
        for (ni, node) in self.nodes.iter().enumerate() {
            for (slot, t) in node.inputs.iter().enumerate() {
                map.entry(t.as_str()).or_default().push((ni, slot));
            }
        }
        map
    }

    /// Checks structural invariants: unique ids, arity, required attributes,
    /// single producer per tensor, resolvable inputs/outputs, acyclicity.
    pub fn validate(&self) -> Result<(), IrError> {
        let mut ids = HashSet::new();
        for node in &self.nodes {
            if node.id.is_empty() {
                return Err(IrError::validation("<node>", "empty node id"));
            }
            if !ids.insert(node.id.as_str()) {
                return Err(IrError::validation(&node.id, "duplicate node id"));
            }
            let arity = node.kind.arity();
            if !arity.accepts(node.inputs.len(), node.outputs.len()) {
                return Err(IrError::validation(
                    &node.id,
                    format!(
                        "{} takes {}..{} inputs and {} outputs, got {} inputs and {} outputs",
                        node.kind,
                        arity.min_inputs,
                        arity.max_inputs.map_or("n".to_string(), |m| m.to_string()),
                        arity.outputs.map_or("1..n".to_string(), |o| o.to_string()),
                        node.inputs.len(),
                        node.outputs.len()
                    ),
                ));
            }
            for key in node.kind.required_attrs() {
                if !node.attrs.contains_key(*key) {
                    return Err(IrError::validation(
                        &node.id,
                        format!("{} requires attribute `{key}`", node.kind),
                    ));
                }
            }
            super::shape::check_attrs(node)?;
        }

        let mut seen: HashSet<&str> = HashSet::new();
        for spec in &self.inputs {
            spec.check_shape()?;
            if !seen.insert(&spec.name) {
                return Err(IrError::validation(&spec.name, "tensor has more than one producer"));
            }
        }
        for spec in &self.outputs {
            spec.check_shape()?;
        }
        for (name, value) in &self.initializers {
            if name != &value.spec.name {
                return Err(IrError::validation(name, "initializer key does not match its spec name"));
            }
            if !seen.insert(name) {
                return Err(IrError::validation(name, "tensor has more than one producer"));
            }
        }
        for node in &self.nodes {
            for t in &node.outputs {
                if !seen.insert(t) {
                    return Err(IrError::validation(
                        t,
                        format!("tensor has more than one producer (second is node {})", node.id),
                    ));
                }
            }
        }
        for node in &self.nodes {
            for t in &node.inputs {
                if !seen.contains(t.as_str()) {
                    return Err(IrError::validation(
                        t,
                        format!("node {} consumes undefined tensor {t}", node.id),
                    ));
                }
            }
        }
        for spec in &self.outputs {
            if !seen.contains(spec.name.as_str()) {
                return Err(IrError::validation(
                    &spec.name,
                    format!("graph output {} is never produced", spec.name),
                ));
            }
        }
        self.topological_order()?;
        Ok(())
    }

    /// Node ids such that every node comes after its producers; ready nodes
    /// are released in ascending id order.
    pub fn topological_order(&self) -> Result<Vec<String>, IrError> {
        Ok(self
            .topological_indices()?
            .into_iter()
            .map(|i| self.nodes[i].id.clone())
            .collect())
    }

    pub fn topological_indices(&self) -> Result<Vec<usize>, IrError> {
        let producers = self.producers();
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, node) in self.nodes.iter().enumerate() {
            for t in &node.inputs {
                if let Some(Producer::Node(i, _)) = producers.get(t.as_str()) {
                    succ[*i].push(j);
                    indegree[j] += 1;
                }
            }
        }
        let mut ready: BinaryHeap<Reverse<(&str, usize)>> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| Reverse((self.nodes[i].id.as_str(), i)))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &j in &succ[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(Reverse((self.nodes[j].id.as_str(), j)));
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| self.nodes[i].id.as_str())
                .min()
                .unwrap_or("?");
            return Err(IrError::Cycle(stuck.to_string()));
        }
        Ok(order)
    }

    /// Node connection matrix; rows and columns follow [`topological_order`].
    ///
    /// [`topological_order`]: ModelGraph::topological_order
    pub fn adjacency(&self) -> Result<Adjacency, IrError> {
        let order = self.topological_indices()?;
        let mut pos = vec![0usize; self.nodes.len()];
        for (p, &i) in order.iter().enumerate() {
            pos[i] = p;
        }
        let producers = self.producers();
        let mut edges = Vec::new();
        for (j, node) in self.nodes.iter().enumerate() {
            for t in &node.inputs {
                if let Some(Producer::Node(i, _)) = producers.get(t.as_str()) {
                    edges.push((pos[*i], pos[j]));
                }
            }
        }
        let ids = order.iter().map(|&i| self.nodes[i].id.clone()).collect();
        Ok(Adjacency::from_edges(ids, &edges))
    }

    /// Renames every consumer reference (and graph output) from `from` to `to`.
    pub(crate) fn rewire(&mut self, from: &str, to: &str) {
        for node in &mut self.nodes {
            for t in &mut node.inputs {
                if t == from {
                    *t = to.to_string();
                }
            }
        }
    }
}

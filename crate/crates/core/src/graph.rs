//! Directed acyclic graphs of layers with reverse-mode gradients.
//!
//! A [`Graph`] is assembled with a [`GraphBuilder`]: named input nodes, layer
//! nodes that reference earlier nodes, and a single output. Node ids are
//! indices into a topologically ordered list, so a node can only consume nodes
//! defined before it and the graph is acyclic by construction.
//!
//! Shapes declared on nodes are per-sample; the tensors that flow through
//! [`Graph::forward`] carry an extra leading batch dimension.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{self, Conv2d, Dense};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// What a node computes.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Input { name: String },
    Conv2d(Conv2d),
    MaxPool2x2,
    Relu,
    Flatten,
    Dense(Dense),
    Concat,
    /// Elementwise sum of all inputs.
    Add,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input { .. } => "input",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Concat => "concat",
            Layer::Add => "add",
        }
    }

    fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Conv2d(_) | Layer::Dense(_) => &["weight", "bias"],
            _ => &[],
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    pub layer: Layer,
    pub inputs: Vec<NodeId>,
    /// Per-sample output shape (no batch dimension).
    pub shape: Vec<usize>,
    grads: Vec<Tensor>,
}

impl Node {
    /// Gradients of this node's parameters from the last backward pass, in
    /// declaration order. Zero before any backward pass.
    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }
}

/// One trainable tensor as seen by [`Graph::parameters`].
#[derive(Debug, Clone, Copy)]
pub struct ParamRef<'a> {
    pub node: NodeId,
    pub node_label: &'a str,
    pub name: &'static str,
    pub value: &'a Tensor,
    pub grad: &'a Tensor,
}

/// Mutable access to a parameter and its gradient, for optimizers.
pub struct ParamMut<'a> {
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Pool(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    entries: Vec<(String, NodeId)>,
    output: NodeId,
    activations: Vec<Option<Tensor>>,
    caches: Vec<Cache>,
}

/// Glorot-uniform initialisation: weights ~ U(-l, l) with
/// l = sqrt(6 / (fan_in + fan_out)). Biases start at zero.
fn glorot_uniform(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-limit..=limit)).collect())
        .expect("shape matches")
}

#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    entries: Vec<(String, NodeId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(id)
            .map(|n| n.shape.as_slice())
            .ok_or_else(|| Error::Argument(format!("unknown node {id}")))
    }

    fn push(
        &mut self,
        label: impl Into<String>,
        layer: Layer,
        inputs: Vec<NodeId>,
        shape: Vec<usize>,
    ) -> NodeId {
        let id = self.nodes.len();
        let grads = layer
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        self.nodes.push(Node {
            id,
            label: label.into(),
            layer,
            inputs,
            shape,
            grads,
        });
        id
    }

    /// Declares a named entry point taking per-sample tensors of `shape`.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "input {name}: invalid shape {shape:?}"
            )));
        }
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Argument(format!("duplicate input name {name}")));
        }
        let id = self.push(
            name,
            Layer::Input { name: name.into() },
            vec![],
            shape.to_vec(),
        );
        self.entries.push((name.into(), id));
        Ok(id)
    }

    /// Adds a 3×3 same-padded convolution with He-initialised weights.
    pub fn conv2d(
        &mut self,
        label: &str,
        input: NodeId,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let [c, h, w] = *self.shape(input)? else {
            return Err(Error::Dimension(format!(
                "{label}: conv2d needs a C×H×W input, got {:?}",
                self.nodes[input].shape
            )));
        };
        let weight = glorot_uniform(vec![out_channels, c, 3, 3], c * 9, out_channels * 9, rng);
        let conv = Conv2d::new(weight, Tensor::zeros(vec![out_channels]))?;
        self.layer(label, Layer::Conv2d(conv), &[input], vec![out_channels, h, w])
    }

    pub fn maxpool(&mut self, label: &str, input: NodeId) -> Result<NodeId> {
        let [c, h, w] = *self.shape(input)? else {
            return Err(Error::Dimension(format!(
                "{label}: maxpool needs a C×H×W input, got {:?}",
                self.nodes[input].shape
            )));
        };
        if h < 2 || w < 2 {
            return Err(Error::Dimension(format!(
                "{label}: maxpool needs H, W >= 2, got {h}×{w}"
            )));
        }
        self.layer(label, Layer::MaxPool2x2, &[input], vec![c, h / 2, w / 2])
    }

    pub fn relu(&mut self, label: &str, input: NodeId) -> Result<NodeId> {
        let shape = self.shape(input)?.to_vec();
        self.layer(label, Layer::Relu, &[input], shape)
    }

    pub fn flatten(&mut self, label: &str, input: NodeId) -> Result<NodeId> {
        let n = self.shape(input)?.iter().product();
        self.layer(label, Layer::Flatten, &[input], vec![n])
    }

    /// Adds a dense layer with He-initialised weights.
    pub fn dense(
        &mut self,
        label: &str,
        input: NodeId,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let [d] = *self.shape(input)? else {
            return Err(Error::Dimension(format!(
                "{label}: dense needs a flat input, got {:?}",
                self.nodes[input].shape
            )));
        };
        let weight = glorot_uniform(vec![d, out_dim], d, out_dim, rng);
        let dense = Dense::new(weight, Tensor::zeros(vec![out_dim]))?;
        self.layer(label, Layer::Dense(dense), &[input], vec![out_dim])
    }

    pub fn concat(&mut self, label: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let mut total = 0;
        for &i in inputs {
            match self.shape(i)? {
                [d] => total += d,
                other => {
                    return Err(Error::Dimension(format!(
                        "{label}: concat inputs must be flat, node {i} is {other:?}"
                    )))
                }
            }
        }
        if inputs.is_empty() {
            return Err(Error::Argument(format!("{label}: concat of nothing")));
        }
        self.layer(label, Layer::Concat, inputs, vec![total])
    }

    pub fn add(&mut self, label: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Argument(format!("{label}: add of nothing")));
        };
        let shape = self.shape(first)?.to_vec();
        for &i in inputs {
            if self.shape(i)? != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "{label}: add inputs {:?} and {:?} differ",
                    shape, self.nodes[i].shape
                )));
            }
        }
        self.layer(label, Layer::Add, inputs, shape)
    }

    /// Adds an arbitrary layer after checking its inputs exist and, for
    /// parameterised layers, that the parameters fit the input shape.
    pub fn layer(
        &mut self,
        label: &str,
        layer: Layer,
        inputs: &[NodeId],
        shape: Vec<usize>,
    ) -> Result<NodeId> {
        for &i in inputs {
            if i >= self.nodes.len() {
                return Err(Error::Argument(format!(
                    "{label}: input node {i} is not defined yet"
                )));
            }
        }
        let input_shape = |k: usize| self.nodes[inputs[k]].shape.as_slice();
        match &layer {
            Layer::Input { .. } => {
                return Err(Error::Argument("use GraphBuilder::input for inputs".into()))
            }
            Layer::Conv2d(c) => {
                if inputs.len() != 1 || input_shape(0).first() != Some(&c.in_channels()) {
                    return Err(Error::Dimension(format!("{label}: conv input mismatch")));
                }
            }
            Layer::Dense(d) => {
                if inputs.len() != 1 || input_shape(0) != [d.in_dim()] {
                    return Err(Error::Dimension(format!(
                        "{label}: dense expects [{}], input is {:?}",
                        d.in_dim(),
                        input_shape(0)
                    )));
                }
            }
            _ => {}
        }
        Ok(self.push(label, layer, inputs.to_vec(), shape))
    }

    /// Finalises the graph with `output` as its single terminal node. Every other
    /// node must feed, directly or not, into the output.
    pub fn build(self, output: NodeId) -> Result<Graph> {
        if output >= self.nodes.len() {
            return Err(Error::Argument(format!("unknown output node {output}")));
        }
        let mut used = vec![false; self.nodes.len()];
        used[output] = true;
        for node in self.nodes.iter().rev() {
            if used[node.id] {
                for &i in &node.inputs {
                    used[i] = true;
                }
            }
        }
        if let Some(dangling) = self.nodes.iter().find(|n| !used[n.id]) {
            return Err(Error::Argument(format!(
                "node {} ({}) does not reach the output",
                dangling.id, dangling.label
            )));
        }
        let n = self.nodes.len();
        Ok(Graph {
            nodes: self.nodes,
            entries: self.entries,
            output,
            activations: vec![None; n],
            caches: vec![Cache::None; n],
        })
    }
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output].shape
    }

    /// Entry point names and their per-sample shapes, in declaration order.
    pub fn entry_points(&self) -> Vec<(&str, &[usize])> {
        self.entries
            .iter()
            .map(|(n, id)| (n.as_str(), self.nodes[*id].shape.as_slice()))
            .collect()
    }

    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.label == label).map(|n| n.id)
    }

    /// Every parameter with its gradient, ordered by node then declaration order.
    pub fn parameters(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            for ((name, value), grad) in node
                .layer
                .param_names()
                .iter()
                .zip(node.layer.params())
                .zip(&node.grads)
            {
                out.push(ParamRef {
                    node: node.id,
                    node_label: &node.label,
                    name,
                    value,
                    grad,
                });
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            for (value, grad) in node.layer.params_mut().into_iter().zip(&node.grads) {
                out.push(ParamMut { value, grad });
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    /// Stable description of the architecture: node kinds, wiring and shapes.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            s.push_str(&format!("{}:{}:{:?}:{:?}", n.id, n.layer.kind(), n.inputs, n.shape));
            if let Layer::Input { name } = &n.layer {
                s.push_str(&format!(":{name}"));
            }
            for p in n.layer.params() {
                s.push_str(&format!(":{:?}", p.shape()));
            }
            s.push(';');
        }
        s.push_str(&format!("out={}", self.output));
        s
    }

    fn check_entries(&self, inputs: &HashMap<String, Tensor>) -> Result<usize> {
        let mut batch = None;
        for (name, id) in &self.entries {
            let t = inputs
                .get(name)
                .ok_or_else(|| Error::Argument(format!("missing input tensor for entry {name}")))?;
            let shape = t.shape();
            if shape.len() != self.nodes[*id].shape.len() + 1
                || shape[1..] != self.nodes[*id].shape[..]
            {
                return Err(Error::Dimension(format!(
                    "entry {name}: expected [N, {:?}], got {:?}",
                    self.nodes[*id].shape, shape
                )));
            }
            match batch {
                None => batch = Some(shape[0]),
                Some(b) if b != shape[0] => {
                    return Err(Error::Dimension(format!(
                        "entry {name}: batch size {} differs from {b}",
                        shape[0]
                    )))
                }
                _ => {}
            }
        }
        batch.ok_or_else(|| Error::State("graph has no entry points".into()))
    }

    fn eval_node(
        &self,
        node: &Node,
        acts: &[Option<Tensor>],
        inputs: &HashMap<String, Tensor>,
        batch: usize,
    ) -> Result<(Tensor, Cache)> {
        let arg = |k: usize| -> &Tensor { acts[node.inputs[k]].as_ref().expect("topological order") };
        let named = |e: Error| match e {
            Error::Dimension(m) => Error::Dimension(format!("node {} ({}): {m}", node.id, node.label)),
            other => other,
        };
        let out = match &node.layer {
            Layer::Input { name } => (inputs[name].clone(), Cache::None),
            Layer::Conv2d(c) => (c.forward(arg(0)).map_err(named)?, Cache::None),
            Layer::MaxPool2x2 => {
                let p = layers::maxpool2x2_forward(arg(0)).map_err(named)?;
                (p.output, Cache::Pool(p.switches))
            }
            Layer::Relu => (layers::relu_forward(arg(0)), Cache::None),
            Layer::Flatten => {
                let x = arg(0);
                let width = x.len() / batch;
                (x.reshape(vec![batch, width]).map_err(named)?, Cache::None)
            }
            Layer::Dense(d) => (d.forward(arg(0)).map_err(named)?, Cache::None),
            Layer::Concat => {
                let xs: Vec<&Tensor> = (0..node.inputs.len()).map(arg).collect();
                (layers::concat_forward(&xs).map_err(named)?, Cache::None)
            }
            Layer::Add => {
                let mut acc = arg(0).clone();
                for k in 1..node.inputs.len() {
                    acc = acc.zip_map(arg(k), |a, b| a + b).map_err(named)?;
                }
                (acc, Cache::None)
            }
        };
        Ok(out)
    }

    /// Evaluates the graph and keeps every activation for a following
    /// [`Graph::backward`].
    pub fn forward(&mut self, inputs: &HashMap<String, Tensor>) -> Result<Tensor> {
        let batch = self.check_entries(inputs)?;
        let mut acts: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut caches = vec![Cache::None; self.nodes.len()];
        for node in &self.nodes {
            let (t, cache) = self.eval_node(node, &acts, inputs, batch)?;
            acts[node.id] = Some(t);
            caches[node.id] = cache;
        }
        let out = acts[self.output].clone().expect("output evaluated");
        self.activations = acts;
        self.caches = caches;
        Ok(out)
    }

    /// Evaluates the graph without touching the activation cache. Intermediate
    /// tensors are dropped as soon as nothing downstream needs them.
    pub fn infer(&self, inputs: &HashMap<String, Tensor>) -> Result<Tensor> {
        let batch = self.check_entries(inputs)?;
        let mut last_use = vec![0; self.nodes.len()];
        for node in &self.nodes {
            for &i in &node.inputs {
                last_use[i] = node.id;
            }
        }
        let mut acts: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for node in &self.nodes {
            let (t, _) = self.eval_node(node, &acts, inputs, batch)?;
            acts[node.id] = Some(t);
            for &i in &node.inputs {
                if last_use[i] == node.id && i != self.output {
                    acts[i] = None;
                }
            }
        }
        Ok(acts[self.output].take().expect("output evaluated"))
    }

    /// Evaluates the graph and returns the activation of `node` instead of the output.
    pub fn infer_at(&self, node: NodeId, inputs: &HashMap<String, Tensor>) -> Result<Tensor> {
        let batch = self.check_entries(inputs)?;
        if node >= self.nodes.len() {
            return Err(Error::Argument(format!("unknown node {node}")));
        }
        let mut acts: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for n in &self.nodes[..=node] {
            let (t, _) = self.eval_node(n, &acts, inputs, batch)?;
            acts[n.id] = Some(t);
        }
        Ok(acts[node].take().expect("node evaluated"))
    }

    /// Propagates `loss_grad` (the gradient of the loss with respect to the
    /// output) back through the graph. Parameter gradients are stored on the
    /// nodes, replacing those of any earlier pass; gradients with respect to the
    /// entry tensors are returned by entry name. Consumes the activation cache.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<HashMap<String, Tensor>> {
        if self.activations.iter().any(Option::is_none) {
            return Err(Error::State(
                "backward called without a matching forward".into(),
            ));
        }
        let acts = std::mem::replace(&mut self.activations, vec![None; self.nodes.len()]);
        let caches = std::mem::replace(&mut self.caches, vec![Cache::None; self.nodes.len()]);
        let act = |id: NodeId| acts[id].as_ref().expect("cached");
        if loss_grad.shape() != act(self.output).shape() {
            return Err(Error::Dimension(format!(
                "loss gradient {:?} does not match output {:?}",
                loss_grad.shape(),
                act(self.output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(loss_grad.clone());
        let mut entry_grads = HashMap::new();

        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            // Nodes off every path to the output get a zero upstream gradient.
            let g = grads[id]
                .take()
                .unwrap_or_else(|| Tensor::zeros(act(id).shape().to_vec()));
            let x = |k: usize| act(node.inputs[k]);
            let mut param_grads = Vec::new();
            let input_grads: Vec<Tensor> = match &node.layer {
                Layer::Input { name } => {
                    entry_grads.insert(name.clone(), g);
                    vec![]
                }
                Layer::Conv2d(c) => {
                    let r = c.backward(x(0), &g)?;
                    param_grads = vec![r.weight, r.bias];
                    vec![r.input]
                }
                Layer::MaxPool2x2 => {
                    let Cache::Pool(switches) = &caches[id] else {
                        return Err(Error::State(format!("node {id}: missing pool switches")));
                    };
                    vec![layers::maxpool2x2_backward(x(0).shape(), switches, &g)?]
                }
                Layer::Relu => vec![layers::relu_backward(x(0), &g)?],
                Layer::Flatten => vec![g.into_reshaped(x(0).shape().to_vec())?],
                Layer::Dense(d) => {
                    let r = d.backward(x(0), &g)?;
                    param_grads = vec![r.weight, r.bias];
                    vec![r.input]
                }
                Layer::Concat => {
                    let widths: Vec<usize> =
                        (0..node.inputs.len()).map(|k| x(k).shape()[1]).collect();
                    layers::concat_backward(&g, &widths)?
                }
                Layer::Add => vec![g; node.inputs.len()],
            };
            for (&src, dg) in node.inputs.iter().zip(input_grads) {
                grads[src] = Some(match grads[src].take() {
                    None => dg,
                    Some(acc) => acc.zip_map(&dg, |a, b| a + b)?,
                });
            }
            if !param_grads.is_empty() {
                self.nodes[id].grads = param_grads;
            }
        }
        Ok(entry_grads)
    }

    /// Copies parameter values from `other`, which must have the same architecture.
    pub fn load_parameters_from(&mut self, other: &Graph) -> Result<()> {
        if self.describe() != other.describe() {
            return Err(Error::Incompatible(
                "architectures differ; cannot copy parameters".into(),
            ));
        }
        for (dst, src) in self.nodes.iter_mut().zip(&other.nodes) {
            dst.layer = src.layer.clone();
        }
        Ok(())
    }

    /// Flattened copy of every parameter value, in [`Graph::parameters`] order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.param_count();
        if flat.len() != total {
            return Err(Error::Dimension(format!(
                "{} parameter values for a graph with {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.parameters_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Extracts the sub-graph that computes `node`, as a graph of its own whose
    /// output is that node. Parameters are copied.
    pub fn truncate_at(&self, node: NodeId) -> Result<Graph> {
        if node >= self.nodes.len() {
            return Err(Error::Argument(format!("unknown node {node}")));
        }
        let mut keep = vec![false; self.nodes.len()];
        keep[node] = true;
        for n in self.nodes[..=node].iter().rev() {
            if keep[n.id] {
                for &i in &n.inputs {
                    keep[i] = true;
                }
            }
        }
        let mut remap = BTreeMap::new();
        let mut b = GraphBuilder::new();
        for n in self.nodes.iter().filter(|n| keep[n.id]) {
            let new_id = match &n.layer {
                Layer::Input { name } => b.input(name, &n.shape)?,
                layer => {
                    let inputs: Vec<NodeId> = n.inputs.iter().map(|i| remap[i]).collect();
                    b.layer(&n.label, layer.clone(), &inputs, n.shape.clone())?
                }
            };
            remap.insert(n.id, new_id);
        }
        b.build(remap[&node])
    }

    /// Reopens the graph for extension. The previous output id stays valid.
    pub fn into_builder(self) -> GraphBuilder {
        GraphBuilder {
            nodes: self.nodes,
            entries: self.entries,
        }
    }
}

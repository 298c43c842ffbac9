use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::kernels::{self, ConvGeom};
use crate::layer::{Graph, Layer, Node, NodeId, Padding};
use crate::params::{Gradients, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Binding {
    None,
    Weighted { weight: usize, bias: usize },
}

/// A validated layer graph bound to its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    graph: Graph,
    params: ParamSet<T>,
    shapes: Vec<Vec<usize>>,
    bindings: Vec<Binding>,
}

/// Activations recorded by a forward pass, consumed by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Trace<T> {
    acts: Vec<Tensor<T>>,
    argmax: Vec<Option<Vec<u32>>>,
    output: NodeId,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.acts[self.output]
    }

    pub fn activation(&self, node: NodeId) -> &Tensor<T> {
        &self.acts[node]
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.acts.swap_remove(self.output)
    }
}

fn conv_geom(shape: &[usize], out_channels: usize, kernel: usize, padding: Padding) -> ConvGeom {
    ConvGeom {
        in_c: shape[0],
        out_c: out_channels,
        h: shape[1],
        w: shape[2],
        k: kernel,
        pad: match padding {
            Padding::Same => kernel / 2,
            Padding::Valid => 0,
        },
    }
}

fn infer_shape<T: Real>(
    id: NodeId,
    node: &Node,
    shapes: &[Vec<usize>],
    params: &ParamSet<T>,
) -> Result<(Vec<usize>, Binding)> {
    let ctx = |what: &str| format!("node {id} ({}) {what}", node.layer.kind());
    let arity_ok = match node.layer {
        Layer::Input { .. } => node.inputs.is_empty(),
        Layer::Concat => !node.inputs.is_empty(),
        _ => node.inputs.len() == 1,
    };
    if !arity_ok {
        return Err(NnError::InvalidGraph(ctx("has the wrong number of inputs")));
    }
    if node.inputs.iter().any(|&i| i >= id) {
        return Err(NnError::InvalidGraph(ctx("consumes a later node")));
    }
    let first = node.inputs.first().map(|&i| shapes[i].as_slice());
    let need3 = |s: &[usize]| -> Result<()> {
        if s.len() != 3 {
            return Err(NnError::shape(ctx("input"), &[0, 0, 0], s));
        }
        Ok(())
    };
    let check_param = |name: &str, expect: &[usize]| -> Result<usize> {
        let pid = params.id(name)?;
        let found = params.by_id(pid).value.shape();
        if found != expect {
            return Err(NnError::shape(format!("parameter `{name}`"), expect, found));
        }
        Ok(pid)
    };
    Ok(match &node.layer {
        Layer::Input { shape } => {
            if id != 0 {
                return Err(NnError::InvalidGraph("only node 0 may be an input".into()));
            }
            if shape.is_empty() || shape.contains(&0) {
                return Err(NnError::InvalidGraph("input shape must be non-empty".into()));
            }
            (shape.clone(), Binding::None)
        }
        Layer::Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            padding,
        } => {
            let s = first.unwrap();
            need3(s)?;
            if s[0] != *in_channels {
                return Err(NnError::shape(ctx("channels"), &[*in_channels], &[s[0]]));
            }
            if *kernel == 0 || (*padding == Padding::Same && kernel % 2 == 0) {
                return Err(NnError::InvalidGraph(ctx("needs an odd kernel for same padding")));
            }
            let g = conv_geom(s, *out_channels, *kernel, *padding);
            if s[1] + 2 * g.pad < *kernel || s[2] + 2 * g.pad < *kernel {
                return Err(NnError::InvalidGraph(ctx("kernel larger than input")));
            }
            let w = check_param(weight, &[*out_channels, *in_channels, *kernel, *kernel])?;
            let b = check_param(bias, &[*out_channels])?;
            (
                vec![*out_channels, g.out_h(), g.out_w()],
                Binding::Weighted { weight: w, bias: b },
            )
        }
        Layer::MaxPool2 => {
            let s = first.unwrap();
            need3(s)?;
            if s[1] < 2 || s[2] < 2 {
                return Err(NnError::InvalidGraph(ctx("input smaller than 2x2")));
            }
            (vec![s[0], s[1] / 2, s[2] / 2], Binding::None)
        }
        Layer::Upsample2 => {
            let s = first.unwrap();
            need3(s)?;
            (vec![s[0], s[1] * 2, s[2] * 2], Binding::None)
        }
        Layer::Concat => {
            let s0 = &shapes[node.inputs[0]];
            need3(s0)?;
            let mut c = 0;
            for &i in &node.inputs {
                let s = &shapes[i];
                need3(s)?;
                if s[1..] != s0[1..] {
                    return Err(NnError::shape(ctx("spatial size"), &s0[1..], &s[1..]));
                }
                c += s[0];
            }
            (vec![c, s0[1], s0[2]], Binding::None)
        }
        Layer::Flatten => (vec![first.unwrap().iter().product()], Binding::None),
        Layer::Dense {
            weight,
            bias,
            inputs,
            outputs,
        } => {
            let s = first.unwrap();
            if s != [*inputs] {
                return Err(NnError::shape(ctx("input"), &[*inputs], s));
            }
            let w = check_param(weight, &[*outputs, *inputs])?;
            let b = check_param(bias, &[*outputs])?;
            (vec![*outputs], Binding::Weighted { weight: w, bias: b })
        }
        Layer::Relu | Layer::Sigmoid => (first.unwrap().to_vec(), Binding::None),
    })
}

impl<T: Real> Network<T> {
    /// Validates the graph against the parameters and infers every node shape.
    pub fn new(graph: Graph, params: ParamSet<T>) -> Result<Self> {
        if graph.nodes.is_empty() || !matches!(graph.nodes[0].layer, Layer::Input { .. }) {
            return Err(NnError::InvalidGraph("node 0 must be an input".into()));
        }
        if graph.output >= graph.nodes.len() {
            return Err(NnError::InvalidGraph("output node out of range".into()));
        }
        let mut shapes = Vec::with_capacity(graph.nodes.len());
        let mut bindings = Vec::with_capacity(graph.nodes.len());
        for (id, node) in graph.nodes.iter().enumerate() {
            let (shape, binding) = infer_shape(id, node, &shapes, &params)?;
            shapes.push(shape);
            bindings.push(binding);
        }
        Ok(Network {
            graph,
            params,
            shapes,
            bindings,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_parts(self) -> (Graph, ParamSet<T>) {
        (self.graph, self.params)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.shapes[self.graph.output]
    }

    pub fn node_shape(&self, node: NodeId) -> &[usize] {
        &self.shapes[node]
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            graph: self.graph.clone(),
            params: self.params.cast(),
            shapes: self.shapes.clone(),
            bindings: self.bindings.clone(),
        }
    }

    fn weights(&self, node: NodeId) -> (&[T], &[T]) {
        match self.bindings[node] {
            Binding::Weighted { weight, bias } => (
                self.params.by_id(weight).value.data(),
                self.params.by_id(bias).value.data(),
            ),
            Binding::None => unreachable!("layer without parameters"),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        if input.shape() != self.shapes[0].as_slice() {
            return Err(NnError::shape("network input", &self.shapes[0], input.shape()));
        }
        // Only nodes feeding the output are evaluated.
        let mut live = vec![false; self.graph.nodes.len()];
        live[self.graph.output] = true;
        for id in (0..self.graph.nodes.len()).rev() {
            if live[id] {
                for &i in &self.graph.nodes[id].inputs {
                    live[i] = true;
                }
            }
        }
        let mut acts: Vec<Tensor<T>> = Vec::with_capacity(self.graph.nodes.len());
        let mut argmax = vec![None; self.graph.nodes.len()];
        for (id, node) in self.graph.nodes.iter().enumerate() {
            if !live[id] {
                acts.push(Tensor::zeros(&[1]));
                continue;
            }
            let mut out = Tensor::zeros(&self.shapes[id]);
            let src = node.inputs.first().map(|&i| &acts[i]);
            match &node.layer {
                Layer::Input { .. } => out = input.clone(),
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    padding,
                    ..
                } => {
                    let s = src.unwrap();
                    let g = conv_geom(s.shape(), *out_channels, *kernel, *padding);
                    let (w, b) = self.weights(id);
                    kernels::conv_forward(&g, s.data(), w, b, out.data_mut());
                }
                Layer::MaxPool2 => {
                    let s = src.unwrap();
                    let sh = s.shape();
                    argmax[id] = Some(kernels::max_pool_forward(sh[0], sh[1], sh[2], s.data(), out.data_mut()));
                }
                Layer::Upsample2 => {
                    let s = src.unwrap();
                    let sh = s.shape();
                    kernels::upsample_forward(sh[0], sh[1], sh[2], s.data(), out.data_mut());
                }
                Layer::Concat => {
                    let mut off = 0;
                    for &i in &node.inputs {
                        let d = acts[i].data();
                        out.data_mut()[off..off + d.len()].copy_from_slice(d);
                        off += d.len();
                    }
                }
                Layer::Flatten => out.data_mut().copy_from_slice(src.unwrap().data()),
                Layer::Dense { .. } => {
                    let (w, b) = self.weights(id);
                    kernels::dense_forward(src.unwrap().data(), w, b, out.data_mut());
                }
                Layer::Relu => {
                    for (o, &x) in out.data_mut().iter_mut().zip(src.unwrap().data()) {
                        *o = if x > T::zero() { x } else { T::zero() };
                    }
                }
                Layer::Sigmoid => {
                    for (o, &x) in out.data_mut().iter_mut().zip(src.unwrap().data()) {
                        *o = sigmoid(x);
                    }
                }
            }
            acts.push(out);
        }
        Ok(Trace {
            acts,
            argmax,
            output: self.graph.output,
        })
    }

    /// Inference-only forward pass.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(input)?.into_output())
    }

    fn trainable(&self, node: NodeId) -> bool {
        match self.bindings[node] {
            Binding::Weighted { weight, bias } => !self.params.by_id(weight).frozen || !self.params.by_id(bias).frozen,
            Binding::None => false,
        }
    }

    /// Back-propagates `upstream` (d loss / d output) through `trace`,
    /// accumulating into `grads`. Frozen tensors receive no gradient. The
    /// input gradient is computed only when `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: &Tensor<T>,
        grads: &mut Gradients<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let out_id = self.graph.output;
        if upstream.shape() != self.shapes[out_id].as_slice() {
            return Err(NnError::shape(
                "upstream gradient",
                &self.shapes[out_id],
                upstream.shape(),
            ));
        }
        if grads.tensors.len() != self.params.len() {
            return Err(NnError::shape(
                "gradient buffers",
                &[self.params.len()],
                &[grads.tensors.len()],
            ));
        }
        let n = self.graph.nodes.len();
        // A node needs an output gradient when it, or anything upstream of it, learns.
        let mut wants = vec![false; n];
        for id in 0..n {
            wants[id] = if id == 0 {
                want_input_grad
            } else {
                self.trainable(id) || self.graph.nodes[id].inputs.iter().any(|&i| wants[i])
            };
        }
        let mut g: Vec<Option<Tensor<T>>> = vec![None; n];
        g[out_id] = Some(upstream.clone());

        for id in (1..n).rev() {
            let Some(gout) = g[id].take() else { continue };
            if !wants[id] {
                continue;
            }
            let node = &self.graph.nodes[id];
            let act = &trace.acts[id];
            let src_id = node.inputs[0];
            let need_in = wants[src_id];
            let take_in = |g: &mut Vec<Option<Tensor<T>>>, i: NodeId| -> Tensor<T> {
                g[i].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[i]))
            };
            match &node.layer {
                Layer::Input { .. } => unreachable!(),
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    padding,
                    ..
                } => {
                    let src = &trace.acts[src_id];
                    let geom = conv_geom(src.shape(), *out_channels, *kernel, *padding);
                    let Binding::Weighted { weight, bias } = self.bindings[id] else {
                        unreachable!()
                    };
                    let w = self.params.by_id(weight).value.data();
                    let mut gin = need_in.then(|| take_in(&mut g, src_id));
                    let wgrad = if self.trainable(id) {
                        let (gw, gb) = two_mut(&mut grads.tensors, weight, bias);
                        Some((gw.data_mut(), gb.data_mut()))
                    } else {
                        None
                    };
                    kernels::conv_backward(
                        &geom,
                        src.data(),
                        w,
                        gout.data(),
                        wgrad,
                        gin.as_mut().map(|t| t.data_mut()),
                    );
                    if let Some(t) = gin {
                        g[src_id] = Some(t);
                    }
                }
                Layer::Dense { .. } => {
                    let src = &trace.acts[src_id];
                    let Binding::Weighted { weight, bias } = self.bindings[id] else {
                        unreachable!()
                    };
                    let w = self.params.by_id(weight).value.data();
                    let mut gin = need_in.then(|| take_in(&mut g, src_id));
                    let wgrad = if self.trainable(id) {
                        let (gw, gb) = two_mut(&mut grads.tensors, weight, bias);
                        Some((gw.data_mut(), gb.data_mut()))
                    } else {
                        None
                    };
                    kernels::dense_backward(src.data(), w, gout.data(), wgrad, gin.as_mut().map(|t| t.data_mut()));
                    if let Some(t) = gin {
                        g[src_id] = Some(t);
                    }
                }
                Layer::MaxPool2 => {
                    if need_in {
                        let mut gin = take_in(&mut g, src_id);
                        let arg = trace.argmax[id].as_ref().expect("pool indices recorded");
                        let gd = gin.data_mut();
                        for (&a, &v) in arg.iter().zip(gout.data()) {
                            gd[a as usize] += v;
                        }
                        g[src_id] = Some(gin);
                    }
                }
                Layer::Upsample2 => {
                    if need_in {
                        let mut gin = take_in(&mut g, src_id);
                        let sh = &self.shapes[src_id];
                        kernels::upsample_backward(sh[0], sh[1], sh[2], gout.data(), gin.data_mut());
                        g[src_id] = Some(gin);
                    }
                }
                Layer::Concat => {
                    let mut off = 0;
                    for &i in &node.inputs {
                        let len: usize = self.shapes[i].iter().product();
                        if wants[i] {
                            let mut gin = take_in(&mut g, i);
                            for (a, &b) in gin.data_mut().iter_mut().zip(&gout.data()[off..off + len]) {
                                *a += b;
                            }
                            g[i] = Some(gin);
                        }
                        off += len;
                    }
                }
                Layer::Flatten => {
                    if need_in {
                        let mut gin = take_in(&mut g, src_id);
                        for (a, &b) in gin.data_mut().iter_mut().zip(gout.data()) {
                            *a += b;
                        }
                        g[src_id] = Some(gin);
                    }
                }
                Layer::Relu => {
                    if need_in {
                        let mut gin = take_in(&mut g, src_id);
                        let x = trace.acts[src_id].data();
                        for ((a, &b), &xv) in gin.data_mut().iter_mut().zip(gout.data()).zip(x) {
                            if xv > T::zero() {
                                *a += b;
                            }
                        }
                        g[src_id] = Some(gin);
                    }
                }
                Layer::Sigmoid => {
                    if need_in {
                        let mut gin = take_in(&mut g, src_id);
                        for ((a, &b), &y) in gin.data_mut().iter_mut().zip(gout.data()).zip(act.data()) {
                            *a += b * y * (T::one() - y);
                        }
                        g[src_id] = Some(gin);
                    }
                }
            }
        }
        Ok(if want_input_grad {
            Some(g[0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[0])))
        } else {
            None
        })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn two_mut<X>(v: &mut [X], a: usize, b: usize) -> (&mut X, &mut X) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Incremental graph construction with seeded He-uniform initialization.
pub struct GraphBuilder<T> {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    params: ParamSet<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> GraphBuilder<T> {
    pub fn new(input_shape: &[usize], seed: u64) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                layer: Layer::Input {
                    shape: input_shape.to_vec(),
                },
                inputs: vec![],
            }],
            shapes: vec![input_shape.to_vec()],
            params: ParamSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        &self.shapes[node]
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn push(&mut self, layer: Layer, inputs: Vec<NodeId>) -> Result<NodeId> {
        let id = self.nodes.len();
        let node = Node { layer, inputs };
        let (shape, _) = infer_shape(id, &node, &self.shapes, &self.params)?;
        self.nodes.push(node);
        self.shapes.push(shape);
        Ok(id)
    }

    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.rng.gen_range(-bound..bound))).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }

    pub fn conv(
        &mut self,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        name: &str,
    ) -> Result<NodeId> {
        let in_channels = *self.shapes[x]
            .first()
            .ok_or_else(|| NnError::InvalidGraph("conv input has no channels".into()))?;
        let (wn, bn) = (format!("{name}.weight"), format!("{name}.bias"));
        let w = self.he_uniform(
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kernel * kernel,
        );
        self.params.insert(&wn, w, false)?;
        self.params.insert(&bn, Tensor::zeros(&[out_channels]), false)?;
        self.push(
            Layer::Conv2d {
                weight: wn,
                bias: bn,
                in_channels,
                out_channels,
                kernel,
                padding,
            },
            vec![x],
        )
    }

    pub fn conv_relu(&mut self, x: NodeId, out_channels: usize, kernel: usize, name: &str) -> Result<NodeId> {
        let c = self.conv(x, out_channels, kernel, Padding::Same, name)?;
        self.relu(c)
    }

    pub fn dense(&mut self, x: NodeId, outputs: usize, name: &str) -> Result<NodeId> {
        let inputs = match self.shapes[x].as_slice() {
            [n] => *n,
            other => return Err(NnError::shape("dense input", &[0], other)),
        };
        let (wn, bn) = (format!("{name}.weight"), format!("{name}.bias"));
        let w = self.he_uniform(&[outputs, inputs], inputs);
        self.params.insert(&wn, w, false)?;
        self.params.insert(&bn, Tensor::zeros(&[outputs]), false)?;
        self.push(
            Layer::Dense {
                weight: wn,
                bias: bn,
                inputs,
                outputs,
            },
            vec![x],
        )
    }

    pub fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Layer::MaxPool2, vec![x])
    }

    pub fn upsample(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Layer::Upsample2, vec![x])
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.push(Layer::Concat, xs.to_vec())
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Layer::Flatten, vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Layer::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Layer::Sigmoid, vec![x])
    }

    /// Sets the bias of a previously created layer, e.g. to start a sigmoid
    /// head at a chosen prior.
    pub fn set_bias(&mut self, name: &str, value: f64) -> Result<()> {
        let id = self.params.id(&format!("{name}.bias"))?;
        self.params.by_id_mut(id).value.fill(T::lit(value));
        Ok(())
    }

    pub fn finish(self, output: NodeId) -> Result<Network<T>> {
        Network::new(
            Graph {
                nodes: self.nodes,
                output,
            },
            self.params,
        )
    }
}

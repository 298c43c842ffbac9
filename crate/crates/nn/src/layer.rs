use serde::{Deserialize, Serialize};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding of `kernel / 2`; output keeps the input's spatial size.
    Same,
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
}

/// The closed layer catalogue. Parameterized layers refer to tensors in the
/// network's [`ParamSet`](crate::ParamSet) by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Graph input with a fixed per-sample shape.
    Input {
        shape: Vec<usize>,
    },
    /// Stride-1 2-D convolution. Weight layout `[out, in, k, k]`, bias `[out]`.
    Conv2d {
        weight: String,
        bias: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
    },
    /// 2x2 max pooling, stride 2 (odd trailing rows/columns are dropped).
    MaxPool2,
    /// x2 nearest-neighbour upsampling.
    Upsample2,
    /// Channel concatenation of all inputs, in input order.
    Concat,
    /// `[c, h, w]` to `[c * h * w]`.
    Flatten,
    /// Fully connected. Weight layout `[outputs, inputs]`, bias `[outputs]`.
    Dense {
        weight: String,
        bias: String,
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input { .. } => "input",
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool2 => "max_pool2",
            Layer::Upsample2 => "upsample2",
            Layer::Concat => "concat",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub layer: Layer,
    #[serde(default)]
    pub inputs: Vec<NodeId>,
}

/// Topologically ordered layer DAG. Node 0 is the single input; every node
/// only consumes nodes with smaller ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub output: NodeId,
}

//! Network graph description and the two architecture builders.

use crate::error::{Result, SnnError};
use crate::lif::LifConfig;
use crate::tensor::conv_output_size;

/// Default number of time steps per sample window.
pub const DEFAULT_WINDOW: usize = 10;

/// Dropout rate inside STS-ResNet sub-blocks.
pub const DEFAULT_BLOCK_DROPOUT: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// Synapse applied directly to the raw input frames.
    InputSynapse(LifConfig),
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    AvgPool {
        k: usize,
    },
    /// Mean over the spatial axes, `[C,H,W] -> [C]`.
    GlobalAvgPool,
    Flatten,
    Dropout {
        rate: f64,
    },
    /// Thresholding LIF activation.
    Synapse(LifConfig),
}

impl LayerKind {
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Linear { .. })
    }

    pub fn is_synapse(&self) -> bool {
        matches!(self, LayerKind::InputSynapse(_) | LayerKind::Synapse(_))
    }

    pub fn lif(&self) -> Option<&LifConfig> {
        match self {
            LayerKind::InputSynapse(c) | LayerKind::Synapse(c) => Some(c),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            LayerKind::InputSynapse(_) => "input_synapse".into(),
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => format!("conv{kernel}x{kernel}s{stride}_{in_channels}->{out_channels}"),
            LayerKind::Linear {
                in_features,
                out_features,
            } => format!("linear_{in_features}->{out_features}"),
            LayerKind::AvgPool { k } => format!("avg_pool{k}"),
            LayerKind::GlobalAvgPool => "global_avg_pool".into(),
            LayerKind::Flatten => "flatten".into(),
            LayerKind::Dropout { rate } => format!("dropout{rate}"),
            LayerKind::Synapse(_) => "synapse".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub kind: LayerKind,
    /// Producer of this node's input; `None` means the previous node, or the
    /// network input for node 0.
    pub input: Option<usize>,
    /// Layer sits on a residual shortcut and is not counted as a network layer.
    pub skip_path: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    Add,
    Concat,
}

/// Extra input merged into the input of `to`: `merge(input(to), output(from))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipEdge {
    pub from: usize,
    pub to: usize,
    pub merge: Merge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerNode>,
    pub skip_edges: Vec<SkipEdge>,
    pub num_classes: usize,
    pub window: usize,
    /// Per-step input shape `[C, H, W]`.
    pub input_shape: Vec<usize>,
}

impl NetworkSpec {
    /// Node feeding `idx`, or `None` for the network input.
    pub fn source_of(&self, idx: usize) -> Option<usize> {
        match self.layers[idx].input {
            Some(src) => Some(src),
            None if idx == 0 => None,
            None => Some(idx - 1),
        }
    }

    pub fn skip_into(&self, idx: usize) -> Option<&SkipEdge> {
        self.skip_edges.iter().find(|e| e.to == idx)
    }

    /// Indices of convolution and linear nodes in graph order, shortcut
    /// convolutions included. Parameters are stored in this order.
    pub fn weighted_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].kind.is_weighted())
            .collect()
    }

    /// Depth in the usual sense: weighted layers off the shortcut paths.
    pub fn weighted_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind.is_weighted() && !l.skip_path)
            .count()
    }

    pub fn synapse_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].kind.is_synapse())
            .collect()
    }

    pub fn output_node(&self) -> usize {
        self.layers.len() - 1
    }

    /// Replaces the LIF parameters of every synapse.
    pub fn set_lif(&mut self, cfg: LifConfig) {
        for layer in &mut self.layers {
            match &mut layer.kind {
                LayerKind::InputSynapse(c) | LayerKind::Synapse(c) => *c = cfg,
                _ => {}
            }
        }
    }

    pub fn with_lif(mut self, cfg: LifConfig) -> Self {
        self.set_lif(cfg);
        self
    }

    pub fn set_dropout(&mut self, rate: f64) {
        for layer in &mut self.layers {
            if let LayerKind::Dropout { rate: r } = &mut layer.kind {
                *r = rate;
            }
        }
    }

    /// Shape of each weight tensor, in [`NetworkSpec::weighted_layers`] order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.weighted_layers()
            .into_iter()
            .map(|i| match self.layers[i].kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => vec![out_channels, in_channels, kernel, kernel],
                LayerKind::Linear {
                    in_features,
                    out_features,
                } => vec![out_features, in_features],
                _ => unreachable!(),
            })
            .collect()
    }

    /// Checks the graph and returns the per-step output shape of every node.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(SnnError::contract("network has no layers"));
        }
        if self.window == 0 {
            return Err(SnnError::param("window must be at least 1"));
        }
        let inputs = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::InputSynapse(_)))
            .count();
        if inputs != 1 || !matches!(self.layers[0].kind, LayerKind::InputSynapse(_)) {
            return Err(SnnError::contract("network needs exactly one input synapse, at node 0"));
        }
        for layer in &self.layers {
            if let Some(cfg) = layer.kind.lif() {
                cfg.validate()?;
            }
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut input = match self.source_of(i) {
                None => self.input_shape.clone(),
                Some(src) if src < i => shapes[src].clone(),
                Some(src) => {
                    return Err(SnnError::contract(format!("node {i} reads from later node {src}")))
                }
            };
            if self.skip_edges.iter().filter(|e| e.to == i).count() > 1 {
                return Err(SnnError::contract(format!("node {i} has more than one skip edge")));
            }
            if let Some(edge) = self.skip_into(i) {
                if edge.from >= i {
                    return Err(SnnError::contract(format!(
                        "skip edge {} -> {i} does not point forward",
                        edge.from
                    )));
                }
                input = merged_shape(&input, &shapes[edge.from], edge.merge)
                    .map_err(|e| SnnError::dim(format!("skip {} -> {i}: {e}", edge.from)))?;
            }
            let out = layer_output_shape(&layer.kind, &input)
                .map_err(|e| SnnError::dim(format!("node {i} ({}): {e}", layer.kind.name())))?;
            shapes.push(out);
        }
        let last = self.layers.last().unwrap();
        if !matches!(last.kind, LayerKind::Synapse(_)) {
            return Err(SnnError::contract("output node must be a synapse"));
        }
        if shapes.last().unwrap() != &vec![self.num_classes] {
            return Err(SnnError::dim(format!(
                "output shape {:?} does not match {} classes",
                shapes.last().unwrap(),
                self.num_classes
            )));
        }
        Ok(shapes)
    }

    /// Per-step input shape of node `idx` after any merge.
    pub fn input_shape_of(&self, idx: usize, shapes: &[Vec<usize>]) -> Result<Vec<usize>> {
        let base = match self.source_of(idx) {
            None => self.input_shape.clone(),
            Some(src) => shapes[src].clone(),
        };
        match self.skip_into(idx) {
            Some(edge) => merged_shape(&base, &shapes[edge.from], edge.merge).map_err(SnnError::Dimension),
            None => Ok(base),
        }
    }
}

fn merged_shape(primary: &[usize], skip: &[usize], merge: Merge) -> std::result::Result<Vec<usize>, String> {
    match merge {
        Merge::Add if primary == skip => Ok(primary.to_vec()),
        Merge::Add => Err(format!("cannot add {primary:?} and {skip:?}")),
        Merge::Concat => {
            if primary.is_empty() || primary.len() != skip.len() || primary[1..] != skip[1..] {
                return Err(format!("cannot concatenate {primary:?} and {skip:?}"));
            }
            let mut out = primary.to_vec();
            out[0] += skip[0];
            Ok(out)
        }
    }
}

fn layer_output_shape(kind: &LayerKind, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
    match kind {
        LayerKind::InputSynapse(_) | LayerKind::Synapse(_) | LayerKind::Dropout { .. } => {
            if let LayerKind::Dropout { rate } = kind {
                if !(0.0..1.0).contains(rate) {
                    return Err(format!("dropout rate {rate} outside [0,1)"));
                }
            }
            Ok(input.to_vec())
        }
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        } => {
            let [c, h, w] = *input else {
                return Err(format!("conv needs [C,H,W] input, got {input:?}"));
            };
            if c != *in_channels {
                return Err(format!("expected {in_channels} input channels, got {c}"));
            }
            let ho = conv_output_size(h, *kernel, *stride, *pad).map_err(|e| e.to_string())?;
            let wo = conv_output_size(w, *kernel, *stride, *pad).map_err(|e| e.to_string())?;
            Ok(vec![*out_channels, ho, wo])
        }
        LayerKind::Linear {
            in_features,
            out_features,
        } => match *input {
            [f] if f == *in_features => Ok(vec![*out_features]),
            _ => Err(format!("linear expects [{in_features}], got {input:?}")),
        },
        LayerKind::AvgPool { k } => match *input {
            [c, h, w] if *k > 0 && h % k == 0 && w % k == 0 => Ok(vec![c, h / k, w / k]),
            _ => Err(format!("avg_pool{k} cannot tile {input:?}")),
        },
        LayerKind::GlobalAvgPool => match *input {
            [c, _, _] => Ok(vec![c]),
            _ => Err(format!("global pooling needs [C,H,W], got {input:?}")),
        },
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
    }
}

/// Incremental construction of a [`NetworkSpec`].
struct GraphBuilder {
    layers: Vec<LayerNode>,
    skip_edges: Vec<SkipEdge>,
}

impl GraphBuilder {
    fn new() -> Self {
        Self {
            layers: Vec::new(),
            skip_edges: Vec::new(),
        }
    }

    fn push(&mut self, kind: LayerKind) -> usize {
        self.layers.push(LayerNode {
            kind,
            input: None,
            skip_path: false,
        });
        self.layers.len() - 1
    }

    fn push_from(&mut self, from: usize, kind: LayerKind, skip_path: bool) -> usize {
        self.layers.push(LayerNode {
            kind,
            input: Some(from),
            skip_path,
        });
        self.layers.len() - 1
    }

    fn skip(&mut self, from: usize, to: usize, merge: Merge) {
        self.skip_edges.push(SkipEdge { from, to, merge });
    }

    fn finish(self, input_shape: &[usize], num_classes: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            layers: self.layers,
            skip_edges: self.skip_edges,
            num_classes,
            window: DEFAULT_WINDOW,
            input_shape: input_shape.to_vec(),
        };
        spec.infer_shapes()?;
        Ok(spec)
    }
}

fn conv3x3(in_channels: usize, out_channels: usize) -> LayerKind {
    LayerKind::Conv {
        in_channels,
        out_channels,
        kernel: 3,
        stride: 1,
        pad: 1,
    }
}

fn check_input(input_shape: &[usize], num_classes: usize, divisor: usize) -> Result<(usize, usize, usize)> {
    let [c, h, w] = *input_shape else {
        return Err(SnnError::dim(format!("input shape must be [C,H,W], got {input_shape:?}")));
    };
    if c == 0 || num_classes == 0 {
        return Err(SnnError::param("channels and class count must be positive"));
    }
    if h < divisor || w < divisor || h % divisor != 0 || w % divisor != 0 {
        return Err(SnnError::dim(format!(
            "input {h}x{w} cannot be halved {} times",
            divisor.trailing_zeros()
        )));
    }
    Ok((c, h, w))
}

/// Shallow convolutional SNN:
/// `input_synapse -> conv3x3(c1) -> synapse -> pool2 -> conv3x3(c2) -> synapse -> pool2 -> linear -> synapse`.
pub fn build_convsnn(channels: (usize, usize), input_shape: &[usize], num_classes: usize) -> Result<NetworkSpec> {
    let (c1, c2) = channels;
    if c1 == 0 || c2 == 0 {
        return Err(SnnError::param("ConvSNN channel counts must be positive"));
    }
    let (c, h, w) = check_input(input_shape, num_classes, 4)?;
    let lif = LifConfig::default();
    let mut g = GraphBuilder::new();
    g.push(LayerKind::InputSynapse(lif));
    g.push(conv3x3(c, c1));
    g.push(LayerKind::Synapse(lif));
    g.push(LayerKind::AvgPool { k: 2 });
    g.push(conv3x3(c1, c2));
    g.push(LayerKind::Synapse(lif));
    g.push(LayerKind::AvgPool { k: 2 });
    g.push(LayerKind::Flatten);
    g.push(LayerKind::Linear {
        in_features: c2 * (h / 4) * (w / 4),
        out_features: num_classes,
    });
    g.push(LayerKind::Synapse(lif));
    g.finish(input_shape, num_classes)
}

/// Channel widths of the four residual blocks at the given scale.
pub fn sts_resnet_widths(width_scale: f64) -> [usize; 4] {
    [64, 128, 256, 512].map(|w| ((w as f64 * width_scale).round() as usize).max(1))
}

/// 18-layer spatio-temporal spiking ResNet.
///
/// A stem convolution, four blocks of two residual sub-blocks
/// (`conv -> synapse -> dropout -> conv (+ shortcut) -> synapse`), and a
/// classifier over the concatenated global averages of the block-3 and
/// block-4 outputs. Blocks 2-4 halve the resolution at their first sub-block
/// by average pooling ahead of both the main and the shortcut convolution.
pub fn build_sts_resnet(width_scale: f64, input_shape: &[usize], num_classes: usize) -> Result<NetworkSpec> {
    if !(width_scale > 0.0) || !width_scale.is_finite() {
        return Err(SnnError::param(format!("width scale {width_scale} must be > 0")));
    }
    let (c, _, _) = check_input(input_shape, num_classes, 8)?;
    let widths = sts_resnet_widths(width_scale);
    let lif = LifConfig::default();
    let mut g = GraphBuilder::new();
    g.push(LayerKind::InputSynapse(lif));
    g.push(conv3x3(c, widths[0]));
    let mut current = g.push(LayerKind::Synapse(lif));
    let mut channels = widths[0];
    let mut block_outputs = Vec::with_capacity(4);

    for (block, &width) in widths.iter().enumerate() {
        for sub in 0..2 {
            let downsample = block > 0 && sub == 0;
            let (main_in, shortcut) = if downsample {
                let pooled = g.push_from(current, LayerKind::AvgPool { k: 2 }, false);
                g.push_from(
                    pooled,
                    LayerKind::Conv {
                        in_channels: channels,
                        out_channels: width,
                        kernel: 1,
                        stride: 1,
                        pad: 0,
                    },
                    true,
                );
                let short = g.push(LayerKind::Synapse(lif));
                g.layers[short].skip_path = true;
                (pooled, short)
            } else {
                (current, current)
            };
            g.push_from(main_in, conv3x3(channels, width), false);
            g.push(LayerKind::Synapse(lif));
            g.push(LayerKind::Dropout {
                rate: DEFAULT_BLOCK_DROPOUT,
            });
            g.push(conv3x3(width, width));
            let out = g.push(LayerKind::Synapse(lif));
            g.skip(shortcut, out, Merge::Add);
            current = out;
            channels = width;
        }
        block_outputs.push(current);
    }

    let pooled3 = g.push_from(block_outputs[2], LayerKind::GlobalAvgPool, false);
    let pooled4 = g.push_from(block_outputs[3], LayerKind::GlobalAvgPool, false);
    let fc = g.push_from(
        pooled4,
        LayerKind::Linear {
            in_features: widths[3] + widths[2],
            out_features: num_classes,
        },
        false,
    );
    g.skip(pooled3, fc, Merge::Concat);
    g.push(LayerKind::Synapse(lif));
    g.finish(input_shape, num_classes)
}

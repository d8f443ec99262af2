//! The conditional denoiser shared by the motion and content models.
//!
//! A network is a [`Layout`]: a table of parameterised layers plus a small
//! acyclic graph of nodes wiring them together (convolutions, SiLU, nearest
//! upsampling, additive skips and a timestep-embedding projection that is
//! broadcast-added to a feature map). All parameters live in one flat
//! vector so the optimizer and checkpoints can treat them uniformly.

use rand::Rng;

use super::ops::{self, ConvGeom, Feature};
use crate::image::{ImagePlane, MaskPlane};
use crate::rng::{stream_id, stream_rng, tag};
use crate::{Error, Result};

/// Channels of the conditioning planes: stitched image (3) + mask (1).
pub const COND_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv {
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    /// Linear map from a sinusoidal embedding of size `dim` to `out`
    /// per-channel offsets.
    TimeProj { dim: usize, out: usize },
}

impl LayerDesc {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerDesc::Conv {
                cin,
                cout,
                kernel,
                bias,
                ..
            } => cout * cin * kernel * kernel + if bias { cout } else { 0 },
            LayerDesc::TimeProj { dim, out } => dim * out + out,
        }
    }

    fn geom(&self) -> Option<ConvGeom> {
        match *self {
            LayerDesc::Conv {
                cin,
                cout,
                kernel,
                stride,
                pad,
                ..
            } => Some(ConvGeom {
                cin,
                cout,
                kernel,
                stride,
                pad,
            }),
            LayerDesc::TimeProj { .. } => None,
        }
    }
}

/// One node of the computation graph. Sources always refer to earlier
/// nodes; node 0 is the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeOp {
    Input,
    Conv { layer: usize, src: usize },
    Silu { src: usize },
    Upsample { src: usize },
    Add { a: usize, b: usize },
    TimeAdd { layer: usize, src: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    noisy_channels: usize,
    layers: Vec<LayerDesc>,
    nodes: Vec<NodeOp>,
    offsets: Vec<usize>,
    count: usize,
}

impl Layout {
    /// Validates the wiring and computes parameter offsets.
    pub fn new(noisy_channels: usize, layers: Vec<LayerDesc>, nodes: Vec<NodeOp>) -> Result<Self> {
        if nodes.first() != Some(&NodeOp::Input) {
            return Err(Error::Config("graph must start with the input node".into()));
        }
        let cin = noisy_channels + COND_CHANNELS;
        // channel count per node, checked as we go
        let mut chans: Vec<usize> = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            let check_src = |s: usize| {
                if s >= i {
                    Err(Error::Config(format!("node {i} reads from later node {s}")))
                } else {
                    Ok(())
                }
            };
            let c = match *node {
                NodeOp::Input => {
                    if i != 0 {
                        return Err(Error::Config("input node must be unique".into()));
                    }
                    cin
                }
                NodeOp::Conv { layer, src } => {
                    check_src(src)?;
                    match layers.get(layer) {
                        Some(LayerDesc::Conv { cin, cout, .. }) if *cin == chans[src] => *cout,
                        _ => return Err(Error::Config(format!("node {i}: bad conv layer {layer}"))),
                    }
                }
                NodeOp::Silu { src } | NodeOp::Upsample { src } => {
                    check_src(src)?;
                    chans[src]
                }
                NodeOp::Add { a, b } => {
                    check_src(a)?;
                    check_src(b)?;
                    if chans[a] != chans[b] {
                        return Err(Error::Config(format!("node {i}: adding mismatched channels")));
                    }
                    chans[a]
                }
                NodeOp::TimeAdd { layer, src } => {
                    check_src(src)?;
                    match layers.get(layer) {
                        Some(LayerDesc::TimeProj { out, .. }) if *out == chans[src] => *out,
                        _ => return Err(Error::Config(format!("node {i}: bad time layer {layer}"))),
                    }
                }
            };
            chans.push(c);
        }
        if *chans.last().unwrap() != noisy_channels {
            return Err(Error::Config(format!(
                "output has {} channels, expected {noisy_channels}",
                chans.last().unwrap()
            )));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut count = 0;
        for l in &layers {
            offsets.push(count);
            count += l.param_count();
        }
        Ok(Self {
            noisy_channels,
            layers,
            nodes,
            offsets,
            count,
        })
    }

    /// The three-level encoder-decoder: stride-2 downsampling, nearest
    /// upsampling, additive skips, a timestep embedding added at every
    /// level of both paths and a bias-free output convolution. `nonlinear = false` drops every SiLU.
    pub fn unet(noisy_channels: usize, widths: [usize; 3], time_dim: usize, nonlinear: bool) -> Result<Self> {
        let [c1, c2, c3] = widths;
        let cin = noisy_channels + COND_CHANNELS;
        let conv = |cin, cout, stride| LayerDesc::Conv {
            cin,
            cout,
            kernel: 3,
            stride,
            pad: 1,
            bias: true,
        };
        let time = |out| LayerDesc::TimeProj { dim: time_dim, out };
        let layers = vec![
            conv(cin, c1, 1),
            conv(c1, c1, 1),
            conv(c1, c2, 2),
            conv(c2, c2, 1),
            conv(c2, c3, 2),
            time(c3),
            conv(c3, c3, 1),
            conv(c3, c2, 1),
            conv(c2, c2, 1),
            conv(c2, c1, 1),
            conv(c1, c1, 1),
            LayerDesc::Conv {
                cin: c1,
                cout: noisy_channels,
                kernel: 3,
                stride: 1,
                pad: 1,
                bias: false,
            },
            time(c1),
            time(c2),
            time(c2),
            time(c1),
        ];

        let mut nodes = vec![NodeOp::Input];
        let mut last = 0usize;
        let push = |nodes: &mut Vec<NodeOp>, op: NodeOp| {
            nodes.push(op);
            nodes.len() - 1
        };
        let conv_act = |nodes: &mut Vec<NodeOp>, layer: usize, src: usize| {
            let c = push(nodes, NodeOp::Conv { layer, src });
            if nonlinear {
                push(nodes, NodeOp::Silu { src: c })
            } else {
                c
            }
        };
        let time_add = |nodes: &mut Vec<NodeOp>, layer: usize, src: usize| push(nodes, NodeOp::TimeAdd { layer, src });
        last = push(&mut nodes, NodeOp::Conv { layer: 0, src: last });
        last = time_add(&mut nodes, 12, last);
        if nonlinear {
            last = push(&mut nodes, NodeOp::Silu { src: last });
        }
        let skip1 = conv_act(&mut nodes, 1, last);
        last = push(&mut nodes, NodeOp::Conv { layer: 2, src: skip1 });
        last = time_add(&mut nodes, 13, last);
        if nonlinear {
            last = push(&mut nodes, NodeOp::Silu { src: last });
        }
        let skip2 = conv_act(&mut nodes, 3, last);
        last = conv_act(&mut nodes, 4, skip2);
        nodes.push(NodeOp::TimeAdd { layer: 5, src: last });
        last = nodes.len() - 1;
        last = conv_act(&mut nodes, 6, last);
        nodes.push(NodeOp::Upsample { src: last });
        last = nodes.len() - 1;
        last = conv_act(&mut nodes, 7, last);
        nodes.push(NodeOp::Add { a: last, b: skip2 });
        last = nodes.len() - 1;
        last = time_add(&mut nodes, 14, last);
        last = conv_act(&mut nodes, 8, last);
        nodes.push(NodeOp::Upsample { src: last });
        last = nodes.len() - 1;
        last = conv_act(&mut nodes, 9, last);
        nodes.push(NodeOp::Add { a: last, b: skip1 });
        last = nodes.len() - 1;
        last = time_add(&mut nodes, 15, last);
        last = conv_act(&mut nodes, 10, last);
        nodes.push(NodeOp::Conv { layer: 11, src: last });

        Self::new(noisy_channels, layers, nodes)
    }

    /// A single convolution from the stacked input planes to the output.
    pub fn single_conv(noisy_channels: usize, kernel: usize, bias: bool) -> Result<Self> {
        Self::new(
            noisy_channels,
            vec![LayerDesc::Conv {
                cin: noisy_channels + COND_CHANNELS,
                cout: noisy_channels,
                kernel,
                stride: 1,
                pad: kernel / 2,
                bias,
            }],
            vec![NodeOp::Input, NodeOp::Conv { layer: 0, src: 0 }],
        )
    }

    pub fn noisy_channels(&self) -> usize {
        self.noisy_channels
    }

    pub fn input_channels(&self) -> usize {
        self.noisy_channels + COND_CHANNELS
    }

    pub fn layers(&self) -> &[LayerDesc] {
        &self.layers
    }

    pub fn nodes(&self) -> &[NodeOp] {
        &self.nodes
    }

    pub fn param_count(&self) -> usize {
        self.count
    }

    pub fn layer_offset(&self, layer: usize) -> usize {
        self.offsets[layer]
    }

    /// Number of stride-2 halvings between input and bottleneck; spatial
    /// dimensions must be divisible by `2^depth`.
    pub fn depth(&self) -> u32 {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerDesc::Conv { stride: 2, .. }))
            .count() as u32
    }

    /// Compact byte description used for cache and checkpoint checks.
    pub fn descriptor_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        put(self.noisy_channels);
        put(self.layers.len());
        for l in &self.layers {
            match *l {
                LayerDesc::Conv {
                    cin,
                    cout,
                    kernel,
                    stride,
                    pad,
                    bias,
                } => {
                    put(0);
                    put(cin);
                    put(cout);
                    put(kernel);
                    put(stride);
                    put(pad);
                    put(bias as usize);
                }
                LayerDesc::TimeProj { dim, out } => {
                    put(1);
                    put(dim);
                    put(out);
                    for _ in 0..4 {
                        put(0);
                    }
                }
            }
        }
        put(self.nodes.len());
        for n in &self.nodes {
            let (k, a, b) = match *n {
                NodeOp::Input => (0, 0, 0),
                NodeOp::Conv { layer, src } => (1, layer, src),
                NodeOp::Silu { src } => (2, src, 0),
                NodeOp::Upsample { src } => (3, src, 0),
                NodeOp::Add { a, b } => (4, a, b),
                NodeOp::TimeAdd { layer, src } => (5, layer, src),
            };
            put(k);
            put(a);
            put(b);
        }
        out
    }

    pub fn fingerprint(&self) -> u32 {
        crc32fast::hash(&self.descriptor_bytes())
    }

    /// Inverse of [`Layout::descriptor_bytes`].
    pub fn from_descriptor_bytes(bytes: &[u8]) -> Result<Self> {
        let mut words = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize);
        let bad = || Error::Checkpoint("truncated layout table".into());
        let mut next = || words.next().ok_or_else(bad);
        let noisy = next()?;
        let n_layers = next()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let kind = next()?;
            let f: Vec<usize> = (0..6).map(|_| next()).collect::<Result<_>>()?;
            layers.push(match kind {
                0 => LayerDesc::Conv {
                    cin: f[0],
                    cout: f[1],
                    kernel: f[2],
                    stride: f[3],
                    pad: f[4],
                    bias: f[5] != 0,
                },
                1 => LayerDesc::TimeProj { dim: f[0], out: f[1] },
                k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
            });
        }
        let n_nodes = next()?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (k, a, b) = (next()?, next()?, next()?);
            nodes.push(match k {
                0 => NodeOp::Input,
                1 => NodeOp::Conv { layer: a, src: b },
                2 => NodeOp::Silu { src: a },
                3 => NodeOp::Upsample { src: a },
                4 => NodeOp::Add { a, b },
                5 => NodeOp::TimeAdd { layer: a, src: b },
                k => return Err(Error::Checkpoint(format!("unknown node kind {k}"))),
            });
        }
        Layout::new(noisy, layers, nodes).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Flat parameter vector bound to a layout. Every mutation bumps a
/// generation counter so activation caches from older parameters are
/// detected.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    layout: Layout,
    values: Vec<f64>,
    generation: u64,
}

impl DenoiserParams {
    /// Fan-in scaled uniform initialisation; the output layer (the layer
    /// feeding the last node) starts at zero.
    pub fn init(layout: Layout, seed: u64) -> Self {
        let mut values = vec![0.0; layout.param_count()];
        let out_layer = match layout.nodes.last() {
            Some(NodeOp::Conv { layer, .. }) => Some(*layer),
            _ => None,
        };
        for (li, l) in layout.layers.iter().enumerate() {
            if Some(li) == out_layer {
                continue;
            }
            let off = layout.offsets[li];
            let mut rng = stream_rng(seed, stream_id(tag::INIT, li as u64, 0));
            let (n_w, fan_in) = match *l {
                LayerDesc::Conv {
                    cin,
                    cout,
                    kernel,
                    ..
                } => (cout * cin * kernel * kernel, cin * kernel * kernel),
                LayerDesc::TimeProj { dim, out } => (dim * out, dim),
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut values[off..off + n_w] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Self {
            layout,
            values,
            generation: 0,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {} parameters",
                values.len(),
                layout.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(Self {
            layout,
            values,
            generation: 0,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mutable access; invalidates outstanding caches.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.values
    }

    fn layer_slices(&self, layer: usize) -> (&[f64], Option<&[f64]>) {
        let off = self.layout.offsets[layer];
        match self.layout.layers[layer] {
            LayerDesc::Conv {
                cin,
                cout,
                kernel,
                bias,
                ..
            } => {
                let nw = cout * cin * kernel * kernel;
                let w = &self.values[off..off + nw];
                let b = bias.then(|| &self.values[off + nw..off + nw + cout]);
                (w, b)
            }
            LayerDesc::TimeProj { dim, out } => {
                let nw = dim * out;
                (&self.values[off..off + nw], Some(&self.values[off + nw..off + nw + out]))
            }
        }
    }
}

/// One network evaluation's inputs. With `cond_dropped` the conditioning
/// planes are replaced by the all-zero null token.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub noisy: &'a ImagePlane,
    pub cond_image: &'a ImagePlane,
    pub cond_mask: &'a MaskPlane,
    pub t: usize,
    pub cond_dropped: bool,
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug)]
pub struct ForwardCache {
    generation: u64,
    fingerprint: u32,
    outputs: Vec<Feature>,
    cols: Vec<Option<Vec<f64>>>,
    embedding: Vec<f64>,
}

fn stack_input(layout: &Layout, input: &DenoiserInput) -> Result<Feature> {
    let (h, w, c) = input.noisy.shape();
    if c != layout.noisy_channels {
        return Err(Error::Shape(format!(
            "noisy plane has {c} channels, layout expects {}",
            layout.noisy_channels
        )));
    }
    if input.cond_image.shape() != (h, w, 3) {
        return Err(Error::Shape(format!(
            "condition image {:?} does not match {h}x{w}x3",
            input.cond_image.shape()
        )));
    }
    if input.cond_mask.dims() != (h, w) {
        return Err(Error::Shape("condition mask dimensions".into()));
    }
    let q = 1usize << layout.depth();
    if h % q != 0 || w % q != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not divisible by {q}")));
    }
    let cin = layout.input_channels();
    let hw = h * w;
    let mut f = Feature::zeros(cin, h, w);
    let noisy = input.noisy.as_slice();
    for ch in 0..c {
        for p in 0..hw {
            f.data[ch * hw + p] = noisy[p * c + ch];
        }
    }
    if !input.cond_dropped {
        let img = input.cond_image.as_slice();
        for ch in 0..3 {
            for p in 0..hw {
                f.data[(c + ch) * hw + p] = img[p * 3 + ch];
            }
        }
        f.data[(c + 3) * hw..(c + 4) * hw].copy_from_slice(input.cond_mask.as_slice());
    }
    Ok(f)
}

fn run(params: &DenoiserParams, input: &DenoiserInput, keep: bool) -> Result<(ImagePlane, Option<ForwardCache>)> {
    let layout = &params.layout;
    let x = stack_input(layout, input)?;
    let (h, w) = (x.h, x.w);
    let embedding_dim = layout
        .layers
        .iter()
        .find_map(|l| match l {
            LayerDesc::TimeProj { dim, .. } => Some(*dim),
            _ => None,
        })
        .unwrap_or(0);
    let embedding = ops::timestep_embedding(input.t, embedding_dim);

    let n = layout.nodes.len();
    let mut outputs: Vec<Feature> = Vec::with_capacity(n);
    let mut cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    outputs.push(x);
    cols.push(None);
    for node in &layout.nodes[1..] {
        let (out, col) = match *node {
            NodeOp::Input => unreachable!("validated by Layout::new"),
            NodeOp::Conv { layer, src } => {
                let g = layout.layers[layer].geom().expect("conv layer");
                let (wt, b) = params.layer_slices(layer);
                let (o, c) = ops::conv2d_forward(&outputs[src], &g, wt, b);
                (o, keep.then_some(c))
            }
            NodeOp::Silu { src } => (ops::silu_forward(&outputs[src]), None),
            NodeOp::Upsample { src } => (ops::upsample2_forward(&outputs[src]), None),
            NodeOp::Add { a, b } => {
                let (fa, fb) = (&outputs[a], &outputs[b]);
                if (fa.h, fa.w) != (fb.h, fb.w) {
                    return Err(Error::Shape("skip connection spatial mismatch".into()));
                }
                let mut o = fa.clone();
                for (v, u) in o.data.iter_mut().zip(&fb.data) {
                    *v += u;
                }
                (o, None)
            }
            NodeOp::TimeAdd { layer, src } => {
                let LayerDesc::TimeProj { dim, out } = layout.layers[layer] else {
                    unreachable!("validated by Layout::new")
                };
                let (wt, b) = params.layer_slices(layer);
                let b = b.expect("time projection has a bias");
                let mut o = outputs[src].clone();
                let hw = o.h * o.w;
                for c in 0..out {
                    let row = &wt[c * dim..(c + 1) * dim];
                    let shift = b[c] + row.iter().zip(&embedding).map(|(a, e)| a * e).sum::<f64>();
                    for v in &mut o.data[c * hw..(c + 1) * hw] {
                        *v += shift;
                    }
                }
                (o, None)
            }
        };
        outputs.push(out);
        cols.push(col);
    }

    let last = outputs.last().expect("graph has an output");
    if (last.h, last.w) != (h, w) {
        return Err(Error::Shape("network output resolution differs from input".into()));
    }
    let c = last.c;
    let hw = h * w;
    let mut pred = vec![0.0; hw * c];
    for ch in 0..c {
        for p in 0..hw {
            pred[p * c + ch] = last.data[ch * hw + p];
        }
    }
    let pred = ImagePlane::from_vec(h, w, c, pred)?;
    if !pred.all_finite() {
        return Err(Error::NonFinite("denoiser output".into()));
    }
    let cache = keep.then(|| ForwardCache {
        generation: params.generation,
        fingerprint: layout.fingerprint(),
        outputs,
        cols,
        embedding,
    });
    Ok((pred, cache))
}

/// Evaluates the network and keeps the activations needed for
/// [`backward`].
pub fn forward(params: &DenoiserParams, input: &DenoiserInput) -> Result<(ImagePlane, ForwardCache)> {
    let (pred, cache) = run(params, input, true)?;
    Ok((pred, cache.expect("cache requested")))
}

/// Evaluation without retaining activations.
pub fn predict(params: &DenoiserParams, input: &DenoiserInput) -> Result<ImagePlane> {
    Ok(run(params, input, false)?.0)
}

/// Parameter gradient of a scalar loss whose gradient with respect to the
/// prediction is `grad_pred`.
pub fn backward(params: &DenoiserParams, cache: &ForwardCache, grad_pred: &ImagePlane) -> Result<Vec<f64>> {
    let layout = &params.layout;
    if cache.generation != params.generation || cache.fingerprint != layout.fingerprint() {
        return Err(Error::StaleCache(format!(
            "cache from generation {} / layout {:08x}, params at {} / {:08x}",
            cache.generation,
            cache.fingerprint,
            params.generation,
            layout.fingerprint()
        )));
    }
    let n = layout.nodes.len();
    if cache.outputs.len() != n {
        return Err(Error::StaleCache("node count differs".into()));
    }
    let last = &cache.outputs[n - 1];
    if grad_pred.shape() != (last.h, last.w, last.c) {
        return Err(Error::Shape("prediction gradient shape".into()));
    }

    let mut grad = vec![0.0; layout.count];
    let mut node_grads: Vec<Option<Feature>> = vec![None; n];
    let hw = last.h * last.w;
    let mut g_out = Feature::zeros(last.c, last.h, last.w);
    for ch in 0..last.c {
        for p in 0..hw {
            g_out.data[ch * hw + p] = grad_pred.as_slice()[p * last.c + ch];
        }
    }
    node_grads[n - 1] = Some(g_out);

    fn accumulate(slot: &mut Option<Feature>, g: Feature) {
        match slot {
            Some(existing) => {
                for (a, b) in existing.data.iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
            None => *slot = Some(g),
        }
    }

    for i in (1..n).rev() {
        let Some(g) = node_grads[i].take() else {
            continue;
        };
        match layout.nodes[i] {
            NodeOp::Input => unreachable!(),
            NodeOp::Conv { layer, src } => {
                let geom = layout.layers[layer].geom().expect("conv layer");
                let off = layout.offsets[layer];
                let nw = geom.weight_len();
                let has_bias = matches!(layout.layers[layer], LayerDesc::Conv { bias: true, .. });
                let (wt, _) = params.layer_slices(layer);
                let cols = cache.cols[i]
                    .as_ref()
                    .ok_or_else(|| Error::StaleCache("missing patch matrix".into()))?;
                let input = &cache.outputs[src];
                let (dw, rest) = grad[off..].split_at_mut(nw);
                let db = has_bias.then(|| &mut rest[..geom.cout]);
                let dx = ops::conv2d_backward(&g, cols, &geom, wt, input.h, input.w, dw, db, src != 0);
                if let Some(dx) = dx {
                    accumulate(&mut node_grads[src], dx);
                }
            }
            NodeOp::Silu { src } => {
                let dx = ops::silu_backward(&cache.outputs[src], &g);
                if src != 0 {
                    accumulate(&mut node_grads[src], dx);
                }
            }
            NodeOp::Upsample { src } => {
                if src != 0 {
                    accumulate(&mut node_grads[src], ops::upsample2_backward(&g));
                }
            }
            NodeOp::Add { a, b } => {
                if b != 0 {
                    accumulate(&mut node_grads[b], g.clone());
                }
                if a != 0 {
                    accumulate(&mut node_grads[a], g);
                }
            }
            NodeOp::TimeAdd { layer, src } => {
                let LayerDesc::TimeProj { dim, out } = layout.layers[layer] else {
                    unreachable!()
                };
                let off = layout.offsets[layer];
                let hw = g.h * g.w;
                for c in 0..out {
                    let s: f64 = g.data[c * hw..(c + 1) * hw].iter().sum();
                    for (k, e) in cache.embedding.iter().enumerate().take(dim) {
                        grad[off + c * dim + k] += s * e;
                    }
                    grad[off + dim * out + c] += s;
                }
                if src != 0 {
                    accumulate(&mut node_grads[src], g);
                }
            }
        }
    }
    Ok(grad)
}

//! Reverse-mode automatic differentiation on a flat operation tape.
//!
//! A [`Tape`] records every primitive as a node holding its forward value;
//! node ids are indices, so creation order is already a topological order.
//! [`Tape::backward`] walks the tape once in reverse, accumulating gradients
//! additively at fan-out, and returns the gradients of all named parameter
//! leaves. Every forward op scans its output for non-finite values and fails
//! fast naming the op, so a diverging loss is caught at the first bad
//! intermediate rather than at the final scalar.

use std::collections::BTreeMap;

use super::conv;
use super::tensor::{numel, Shape5, Tensor5};
use super::NnError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    UpsampleNearest2(NodeId),
    DownsampleAvg2(NodeId),
    LeakyRelu {
        input: NodeId,
        slope: f64,
    },
    Sigmoid(NodeId),
    HardTanh(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale {
        input: NodeId,
        k: f64,
    },
    ConcatChannels(NodeId, NodeId),
    AffineChannel {
        input: NodeId,
        // Backward only needs the scales; shifts vanish in the gradient.
        scale: Vec<f64>,
    },
    Sym9To6(NodeId),
    GlobalMeanPool(NodeId),
    MeanAll(NodeId),
    L1Mean(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv3d { .. } => "conv3d",
            Op::UpsampleNearest2(_) => "upsample_nearest2",
            Op::DownsampleAvg2(_) => "downsample_avg2",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::HardTanh(_) => "hard_tanh",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale { .. } => "scale",
            Op::ConcatChannels(..) => "concat_channels",
            Op::AffineChannel { .. } => "affine_channel",
            Op::Sym9To6(_) => "sym9to6",
            Op::GlobalMeanPool(_) => "global_mean_pool",
            Op::MeanAll(_) => "mean_all",
            Op::L1Mean(..) => "l1_mean",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor5,
    requires_grad: bool,
}

/// Gradients of named parameters after a backward pass.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    map: BTreeMap<String, (Shape5, Vec<f64>)>,
}

impl Grads {
    pub fn get(&self, name: &str) -> Option<(&Shape5, &[f64])> {
        self.map.get(name).map(|(s, d)| (s, d.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Recording context for one forward/backward round.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    /// Self-test hook: when set, the sigmoid backward rule is deliberately
    /// scaled by 1.01 so gradient checks must fail, proving the checker has
    /// teeth. Never enabled outside diagnostics.
    corrupt_sigmoid: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), corrupt_sigmoid: false }
    }

    /// Enables the deliberate sigmoid-derivative corruption (self-test hook).
    pub fn set_sigmoid_corruption(&mut self, enabled: bool) {
        self.corrupt_sigmoid = enabled;
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor5 {
        &self.nodes[id.0].value
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, id: NodeId) -> Result<f64, NnError> {
        let t = &self.nodes[id.0].value;
        if t.shape() != [1, 1, 1, 1, 1] {
            return Err(NnError::NotScalarLoss { shape: t.shape() });
        }
        Ok(t.data()[0])
    }

    /// Records a constant leaf (no gradient flows into it).
    pub fn input(&mut self, value: Tensor5) -> Result<NodeId, NnError> {
        self.push(Op::Leaf, value, false)
    }

    /// Records a trainable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: &Tensor5) -> Result<NodeId, NnError> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(NnError::Graph(format!("parameter {name:?} bound twice")));
        }
        let id = self.push(Op::Leaf, value.clone(), true)?;
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    fn push(&mut self, op: Op, value: Tensor5, requires_grad: bool) -> Result<NodeId, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: op.name().to_string() });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, requires_grad });
        Ok(id)
    }

    fn shape(&self, id: NodeId) -> Shape5 {
        self.nodes[id.0].value.shape()
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    // ---- primitive ops -------------------------------------------------

    /// 3-D cross-correlation. `weight` shape is (out_c, in_c, k, k, k) with
    /// odd k; `bias` shape is (1, out_c, 1, 1, 1).
    pub fn conv3d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, NnError> {
        let ins = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        let [_, ic, ix, iy, iz] = ins;
        let [oc, wic, kx, ky, kz] = ws;
        if kx != ky || ky != kz || kx % 2 == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "conv3d kernel must be cubic with odd extent, got {kx}×{ky}×{kz}"
            )));
        }
        if wic != ic {
            return Err(NnError::ShapeMismatch(format!(
                "conv3d input has {ic} channels but weight expects {wic}"
            )));
        }
        if bs != [1, oc, 1, 1, 1] {
            return Err(NnError::ShapeMismatch(format!(
                "conv3d bias shape {bs:?}, want {:?}",
                [1, oc, 1, 1, 1]
            )));
        }
        if stride == 0 {
            return Err(NnError::ShapeMismatch("conv3d stride must be ≥ 1".into()));
        }
        let (Some(ox), Some(oy), Some(oz)) = (
            conv::out_extent(ix, kx, stride, padding),
            conv::out_extent(iy, ky, stride, padding),
            conv::out_extent(iz, kz, stride, padding),
        ) else {
            return Err(NnError::ShapeMismatch(format!(
                "conv3d kernel {kx} exceeds padded input {ins:?} (padding {padding})"
            )));
        };
        let out_shape = [ins[0], oc, ox, oy, oz];
        let mut out = Tensor5::zeros(out_shape);
        // A (1, oc, 1, 1, 1) bias tensor's storage is already the flat
        // per-channel slice the kernel expects.
        conv::forward(
            self.data(input),
            ins,
            self.data(weight),
            ws,
            self.data(bias),
            stride,
            padding,
            out.data_mut(),
            out_shape,
        );
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push(Op::Conv3d { input, weight, bias, stride, padding }, out, rg)
    }

    /// Nearest-neighbour ×2 upsampling of every spatial axis.
    pub fn upsample_nearest2(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let [b, c, nx, ny, nz] = self.shape(input);
        let out_shape = [b, c, 2 * nx, 2 * ny, 2 * nz];
        let mut out = Tensor5::zeros(out_shape);
        {
            let src = self.data(input);
            let dst = out.data_mut();
            let mut di = 0usize;
            for bc in 0..b * c {
                let base = bc * nx * ny * nz;
                for z in 0..2 * nz {
                    for y in 0..2 * ny {
                        let row = base + (z / 2) * nx * ny + (y / 2) * nx;
                        for x in 0..2 * nx {
                            dst[di] = src[row + x / 2];
                            di += 1;
                        }
                    }
                }
            }
        }
        let rg = self.rg(input);
        self.push(Op::UpsampleNearest2(input), out, rg)
    }

    /// Average-pool ×2 downsampling; spatial dims must be even. At factor 2
    /// this equals trilinear resampling with voxel-center alignment.
    pub fn downsample_avg2(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let [b, c, nx, ny, nz] = self.shape(input);
        if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
            return Err(NnError::OddDimension { op: "downsample_avg2", dims: (nx, ny, nz) });
        }
        let out_shape = [b, c, nx / 2, ny / 2, nz / 2];
        let mut out = Tensor5::zeros(out_shape);
        {
            let src = self.data(input);
            let dst = out.data_mut();
            let mut di = 0usize;
            for bc in 0..b * c {
                let base = bc * nx * ny * nz;
                for z in 0..nz / 2 {
                    for y in 0..ny / 2 {
                        let r00 = base + (2 * z) * nx * ny + (2 * y) * nx;
                        let r10 = r00 + nx;
                        let r01 = r00 + nx * ny;
                        let r11 = r01 + nx;
                        for x in 0..nx / 2 {
                            let i = 2 * x;
                            // Pairwise tree so eight equal values average to
                            // exactly that value (makes down∘up the identity).
                            let s = ((src[r00 + i] + src[r00 + i + 1])
                                + (src[r10 + i] + src[r10 + i + 1]))
                                + ((src[r01 + i] + src[r01 + i + 1])
                                    + (src[r11 + i] + src[r11 + i + 1]));
                            dst[di] = s * 0.125;
                            di += 1;
                        }
                    }
                }
            }
        }
        let rg = self.rg(input);
        self.push(Op::DownsampleAvg2(input), out, rg)
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> Result<NodeId, NnError> {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        let rg = self.rg(input);
        self.push(Op::LeakyRelu { input, slope }, out, rg)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        let rg = self.rg(input);
        self.push(Op::Sigmoid(input), out, rg)
    }

    /// Identity on [−1, 1], clamped outside.
    pub fn hard_tanh(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        let rg = self.rg(input);
        self.push(Op::HardTanh(input), out, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn zip_op(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::ShapeMismatch(format!(
                "{name}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = Tensor5::zeros(self.shape(a));
        for ((o, &x), &y) in out
            .data_mut()
            .iter_mut()
            .zip(self.nodes[a.0].value.data())
            .zip(self.nodes[b.0].value.data())
        {
            *o = f(x, y);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(op, out, rg)
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, input: NodeId, k: f64) -> Result<NodeId, NnError> {
        let mut out = self.nodes[input.0].value.clone();
        for v in out.data_mut() {
            *v *= k;
        }
        let rg = self.rg(input);
        self.push(Op::Scale { input, k }, out, rg)
    }

    /// Concatenates along the channel axis (equal batch and spatial dims).
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let [ba, ca, xa, ya, za] = self.shape(a);
        let [bb, cb, xb, yb, zb] = self.shape(b);
        if ba != bb || (xa, ya, za) != (xb, yb, zb) {
            return Err(NnError::ShapeMismatch(format!(
                "concat_channels: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out_shape = [ba, ca + cb, xa, ya, za];
        let nvox = xa * ya * za;
        let mut out = Tensor5::zeros(out_shape);
        {
            let dst = out.data_mut();
            let sa = self.nodes[a.0].value.data();
            let sb = self.nodes[b.0].value.data();
            for bi in 0..ba {
                let d0 = bi * (ca + cb) * nvox;
                dst[d0..d0 + ca * nvox]
                    .copy_from_slice(&sa[bi * ca * nvox..(bi + 1) * ca * nvox]);
                dst[d0 + ca * nvox..d0 + (ca + cb) * nvox]
                    .copy_from_slice(&sb[bi * cb * nvox..(bi + 1) * cb * nvox]);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::ConcatChannels(a, b), out, rg)
    }

    /// Per-channel affine map `y = scale[c]·x + shift[c]` with constant
    /// coefficients (used for value-range normalization).
    pub fn affine_channel(
        &mut self,
        input: NodeId,
        scale: &[f64],
        shift: &[f64],
    ) -> Result<NodeId, NnError> {
        let [b, c, nx, ny, nz] = self.shape(input);
        if scale.len() != c || shift.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "affine_channel: {} scales / {} shifts for {c} channels",
                scale.len(),
                shift.len()
            )));
        }
        let nvox = nx * ny * nz;
        let mut out = self.nodes[input.0].value.clone();
        {
            let dst = out.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * nvox;
                    for v in &mut dst[base..base + nvox] {
                        *v = scale[ci] * *v + shift[ci];
                    }
                }
            }
        }
        let rg = self.rg(input);
        self.push(Op::AffineChannel { input, scale: scale.to_vec() }, out, rg)
    }

    /// Per-voxel symmetrization of a 9-channel row-major 3×3 block into the
    /// 6-component form (m11, m22, m33, m12, m13, m23).
    pub fn sym9to6(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let [b, c, nx, ny, nz] = self.shape(input);
        if c != 9 {
            return Err(NnError::ShapeMismatch(format!(
                "sym9to6 expects 9 channels, got {c}"
            )));
        }
        let nvox = nx * ny * nz;
        let out_shape = [b, 6, nx, ny, nz];
        let mut out = Tensor5::zeros(out_shape);
        {
            let src = self.data(input);
            let dst = out.data_mut();
            for bi in 0..b {
                let s = bi * 9 * nvox;
                let d = bi * 6 * nvox;
                for i in 0..nvox {
                    let r = |ch: usize| src[s + ch * nvox + i];
                    dst[d + i] = r(0);
                    dst[d + nvox + i] = r(4);
                    dst[d + 2 * nvox + i] = r(8);
                    dst[d + 3 * nvox + i] = 0.5 * (r(1) + r(3));
                    dst[d + 4 * nvox + i] = 0.5 * (r(2) + r(6));
                    dst[d + 5 * nvox + i] = 0.5 * (r(5) + r(7));
                }
            }
        }
        let rg = self.rg(input);
        self.push(Op::Sym9To6(input), out, rg)
    }

    /// Spatial mean per (batch, channel): output shape (b, c, 1, 1, 1).
    pub fn global_mean_pool(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let [b, c, nx, ny, nz] = self.shape(input);
        let nvox = nx * ny * nz;
        let mut out = Tensor5::zeros([b, c, 1, 1, 1]);
        {
            let src = self.data(input);
            let dst = out.data_mut();
            for (bc, o) in dst.iter_mut().enumerate() {
                let base = bc * nvox;
                *o = src[base..base + nvox].iter().sum::<f64>() / nvox as f64;
            }
        }
        let rg = self.rg(input);
        self.push(Op::GlobalMeanPool(input), out, rg)
    }

    /// Mean over every element: scalar output.
    pub fn mean_all(&mut self, input: NodeId) -> Result<NodeId, NnError> {
        let n = self.nodes[input.0].value.numel();
        let mean = self.data(input).iter().sum::<f64>() / n as f64;
        let rg = self.rg(input);
        self.push(Op::MeanAll(input), Tensor5::filled([1, 1, 1, 1, 1], mean), rg)
    }

    /// Mean absolute difference over every element: scalar output.
    pub fn l1_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::ShapeMismatch(format!(
                "l1_mean: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = self.nodes[a.0].value.numel();
        let sum: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (x - y).abs())
            .sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::L1Mean(a, b), Tensor5::filled([1, 1, 1, 1, 1], sum / n as f64), rg)
    }

    // ---- backward ------------------------------------------------------

    /// Reverse pass from a scalar loss node. Returns the gradients of every
    /// named parameter reachable from `loss`; parameters the loss does not
    /// depend on are absent from the result.
    pub fn backward(&mut self, loss: NodeId) -> Result<Grads, NnError> {
        let loss_shape = self.shape(loss);
        if loss_shape != [1, 1, 1, 1, 1] {
            return Err(NnError::NotScalarLoss { shape: loss_shape });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.scatter(i, &g, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g); // keep leaf gradients for collection
            }
        }

        let mut out = Grads::default();
        for (name, id) in &self.params {
            if let Some(g) = grads[id.0].take() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::NonFinite {
                        op: format!("gradient of parameter {name:?}"),
                    });
                }
                out.map.insert(name.clone(), (self.shape(*id), g));
            }
        }
        Ok(out)
    }

    /// Routes the output gradient `g` of node `i` into its inputs.
    fn scatter(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<(), NnError> {
        // Gradient buffer accessor: allocates zeroed storage on first touch,
        // skipping inputs that need no gradient.
        macro_rules! gbuf {
            ($id:expr) => {{
                let id: NodeId = $id;
                if !self.rg(id) {
                    None
                } else {
                    let n = self.nodes[id.0].value.numel();
                    Some(grads[id.0].get_or_insert_with(|| vec![0.0; n]))
                }
            }};
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv3d { input, weight, bias, stride, padding } => {
                let out_shape = self.nodes[i].value.shape();
                let in_shape = self.shape(*input);
                let w_shape = self.shape(*weight);
                if self.rg(*input) {
                    let mut gin = vec![0.0; numel(&in_shape)];
                    conv::grad_input(
                        g,
                        out_shape,
                        self.data(*weight),
                        w_shape,
                        *stride,
                        *padding,
                        &mut gin,
                        in_shape,
                    );
                    acc_into(gbuf!(*input), &gin);
                }
                if self.rg(*weight) || self.rg(*bias) {
                    let mut gw = vec![0.0; numel(&w_shape)];
                    let mut gb = vec![0.0; w_shape[0]];
                    conv::grad_weight_bias(
                        g,
                        out_shape,
                        self.data(*input),
                        in_shape,
                        w_shape,
                        *stride,
                        *padding,
                        &mut gw,
                        &mut gb,
                    );
                    acc_into(gbuf!(*weight), &gw);
                    acc_into(gbuf!(*bias), &gb);
                }
            }
            Op::UpsampleNearest2(input) => {
                if let Some(gin) = gbuf!(*input) {
                    let [b, c, nx, ny, nz] = self.shape(*input);
                    let mut si = 0usize;
                    for bc in 0..b * c {
                        let base = bc * nx * ny * nz;
                        for z in 0..2 * nz {
                            for y in 0..2 * ny {
                                let row = base + (z / 2) * nx * ny + (y / 2) * nx;
                                for x in 0..2 * nx {
                                    gin[row + x / 2] += g[si];
                                    si += 1;
                                }
                            }
                        }
                    }
                }
            }
            Op::DownsampleAvg2(input) => {
                if let Some(gin) = gbuf!(*input) {
                    let [b, c, nx, ny, nz] = self.shape(*input);
                    let mut si = 0usize;
                    for bc in 0..b * c {
                        let base = bc * nx * ny * nz;
                        for z in 0..nz / 2 {
                            for y in 0..ny / 2 {
                                let r00 = base + (2 * z) * nx * ny + (2 * y) * nx;
                                for x in 0..nx / 2 {
                                    let gv = g[si] * 0.125;
                                    si += 1;
                                    let i = 2 * x;
                                    gin[r00 + i] += gv;
                                    gin[r00 + i + 1] += gv;
                                    gin[r00 + nx + i] += gv;
                                    gin[r00 + nx + i + 1] += gv;
                                    gin[r00 + nx * ny + i] += gv;
                                    gin[r00 + nx * ny + i + 1] += gv;
                                    gin[r00 + nx * ny + nx + i] += gv;
                                    gin[r00 + nx * ny + nx + i + 1] += gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { input, slope } => {
                if let Some(gin) = gbuf!(*input) {
                    for ((gi, &go), &x) in
                        gin.iter_mut().zip(g).zip(self.data(*input))
                    {
                        *gi += if x > 0.0 { go } else { go * slope };
                    }
                }
            }
            Op::Sigmoid(input) => {
                let fudge = if self.corrupt_sigmoid { 1.01 } else { 1.0 };
                if let Some(gin) = gbuf!(*input) {
                    for ((gi, &go), &y) in
                        gin.iter_mut().zip(g).zip(self.nodes[i].value.data())
                    {
                        *gi += fudge * go * y * (1.0 - y);
                    }
                }
            }
            Op::HardTanh(input) => {
                if let Some(gin) = gbuf!(*input) {
                    for ((gi, &go), &x) in
                        gin.iter_mut().zip(g).zip(self.data(*input))
                    {
                        if x.abs() < 1.0 {
                            *gi += go;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                acc_into(gbuf!(*a), g);
                acc_into(gbuf!(*b), g);
            }
            Op::Sub(a, b) => {
                acc_into(gbuf!(*a), g);
                if let Some(gb) = gbuf!(*b) {
                    for (gi, &go) in gb.iter_mut().zip(g) {
                        *gi -= go;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = gbuf!(*a) {
                    for ((gi, &go), &bv) in ga.iter_mut().zip(g).zip(self.data(*b)) {
                        *gi += go * bv;
                    }
                }
                if let Some(gb) = gbuf!(*b) {
                    for ((gi, &go), &av) in gb.iter_mut().zip(g).zip(self.data(*a)) {
                        *gi += go * av;
                    }
                }
            }
            Op::Scale { input, k } => {
                if let Some(gin) = gbuf!(*input) {
                    for (gi, &go) in gin.iter_mut().zip(g) {
                        *gi += k * go;
                    }
                }
            }
            Op::ConcatChannels(a, b) => {
                let [ba, ca, xa, ya, za] = self.shape(*a);
                let cb = self.shape(*b)[1];
                let nvox = xa * ya * za;
                if let Some(ga) = gbuf!(*a) {
                    for bi in 0..ba {
                        let d0 = bi * (ca + cb) * nvox;
                        for (gi, &go) in ga[bi * ca * nvox..(bi + 1) * ca * nvox]
                            .iter_mut()
                            .zip(&g[d0..d0 + ca * nvox])
                        {
                            *gi += go;
                        }
                    }
                }
                if let Some(gb) = gbuf!(*b) {
                    for bi in 0..ba {
                        let d0 = bi * (ca + cb) * nvox + ca * nvox;
                        for (gi, &go) in gb[bi * cb * nvox..(bi + 1) * cb * nvox]
                            .iter_mut()
                            .zip(&g[d0..d0 + cb * nvox])
                        {
                            *gi += go;
                        }
                    }
                }
            }
            Op::AffineChannel { input, scale } => {
                if let Some(gin) = gbuf!(*input) {
                    let [b, c, nx, ny, nz] = self.shape(*input);
                    let nvox = nx * ny * nz;
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * nvox;
                            for (gi, &go) in gin[base..base + nvox]
                                .iter_mut()
                                .zip(&g[base..base + nvox])
                            {
                                *gi += scale[ci] * go;
                            }
                        }
                    }
                }
            }
            Op::Sym9To6(input) => {
                if let Some(gin) = gbuf!(*input) {
                    let [b, _, nx, ny, nz] = self.shape(*input);
                    let nvox = nx * ny * nz;
                    for bi in 0..b {
                        let s = bi * 9 * nvox;
                        let d = bi * 6 * nvox;
                        for i in 0..nvox {
                            gin[s + i] += g[d + i];
                            gin[s + 4 * nvox + i] += g[d + nvox + i];
                            gin[s + 8 * nvox + i] += g[d + 2 * nvox + i];
                            let g12 = 0.5 * g[d + 3 * nvox + i];
                            gin[s + nvox + i] += g12;
                            gin[s + 3 * nvox + i] += g12;
                            let g13 = 0.5 * g[d + 4 * nvox + i];
                            gin[s + 2 * nvox + i] += g13;
                            gin[s + 6 * nvox + i] += g13;
                            let g23 = 0.5 * g[d + 5 * nvox + i];
                            gin[s + 5 * nvox + i] += g23;
                            gin[s + 7 * nvox + i] += g23;
                        }
                    }
                }
            }
            Op::GlobalMeanPool(input) => {
                if let Some(gin) = gbuf!(*input) {
                    let [b, c, nx, ny, nz] = self.shape(*input);
                    let nvox = nx * ny * nz;
                    for bc in 0..b * c {
                        let gv = g[bc] / nvox as f64;
                        for gi in &mut gin[bc * nvox..(bc + 1) * nvox] {
                            *gi += gv;
                        }
                    }
                }
            }
            Op::MeanAll(input) => {
                if let Some(gin) = gbuf!(*input) {
                    let gv = g[0] / gin.len() as f64;
                    for gi in gin.iter_mut() {
                        *gi += gv;
                    }
                }
            }
            Op::L1Mean(a, b) => {
                let n = self.nodes[a.0].value.numel() as f64;
                let gv = g[0] / n;
                let sa = self.data(*a);
                let sb = self.data(*b);
                if let Some(ga) = gbuf!(*a) {
                    for ((gi, &x), &y) in ga.iter_mut().zip(sa).zip(sb) {
                        *gi += gv * (x - y).signum_or_zero();
                    }
                }
                if let Some(gb) = gbuf!(*b) {
                    for ((gi, &x), &y) in gb.iter_mut().zip(sa).zip(sb) {
                        *gi -= gv * (x - y).signum_or_zero();
                    }
                }
            }
        }
        Ok(())
    }
}

fn acc_into(buf: Option<&mut Vec<f64>>, g: &[f64]) {
    if let Some(buf) = buf {
        debug_assert_eq!(buf.len(), g.len());
        for (a, &b) in buf.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// `signum` with the subgradient convention sign(0) = 0.
trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

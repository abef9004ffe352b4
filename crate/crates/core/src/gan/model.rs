//! Network architectures: 3-D U-Net generators and residual critics, built
//! as tape graphs so the same code path serves training, gradient checking,
//! and inference.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::field::{Domain, ScalarField, TensorField};
use crate::nn::{he_uniform_conv, zero_bias, NodeId, Params, Tape, Tensor5};

use super::data::{
    scalar_batch_to_tensor, tensor_batch_to_tensor, tensor_to_scalar_field,
    tensor_to_tangent_field, NormMap,
};
use super::GanError;

/// LeakyReLU slope used throughout both architectures.
const SLOPE: f64 = 0.2;

/// Translation direction of a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorRole {
    /// Structural intensities → tangent-space diffusion tensors (`G_Y`).
    StructToDti,
    /// Tangent-space diffusion tensors → structural intensities (`G_X`).
    DtiToStruct,
}

/// Output activation of a generator head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Clamp to `[-1, 1]`: tangent components in normalized range.
    HardTanh,
    /// Squash to `[0, 1]`: structural intensities.
    Sigmoid,
}

/// U-Net generator architecture.
///
/// `depth` levels of two 3×3×3 convolutions (LeakyReLU 0.2) with 2×
/// average-pool downsampling between them, a bottleneck, and a mirrored
/// decoder with nearest-neighbour upsampling and skip concatenation, closed
/// by a 1×1×1 head convolution and the head activation. The `G_Y` head
/// produces nine channels that are reshaped per voxel to 3×3 and
/// symmetrized to the six independent components.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub role: GeneratorRole,
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub head: Head,
}

impl GeneratorSpec {
    /// `G_Y`: one structural channel in, nine raw channels out (symmetrized
    /// to six), hard-tanh head.
    pub fn struct_to_dti(depth: usize, base_channels: usize) -> Self {
        GeneratorSpec {
            role: GeneratorRole::StructToDti,
            depth,
            base_channels,
            in_channels: 1,
            out_channels: 9,
            head: Head::HardTanh,
        }
    }

    /// `G_X`: six tangent channels in, one sigmoid intensity channel out.
    pub fn dti_to_struct(depth: usize, base_channels: usize) -> Self {
        GeneratorSpec {
            role: GeneratorRole::DtiToStruct,
            depth,
            base_channels,
            in_channels: 6,
            out_channels: 1,
            head: Head::Sigmoid,
        }
    }

    /// Spatial divisibility the U-Net needs: `2^depth`.
    pub fn divisor(&self) -> usize {
        1usize << self.depth
    }

    fn level_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }
}

/// A generator: architecture plus named parameters.
///
/// Parameter names are `{prefix}enc{i}.c0.w` … `{prefix}head.b`; the prefix
/// (`"gy."` / `"gx."`) keeps the four models of a run collision-free when
/// they share one tape or one checkpoint.
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub params: Params,
    prefix: String,
}

impl Generator {
    /// Seeded He-uniform initialization of all convolution weights (biases
    /// zero). Draw order is fixed, so equal seeds give equal parameters.
    pub fn init(spec: GeneratorSpec, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self, GanError> {
        let mut params = Params::new();
        let add = |params: &mut Params,
                       name: String,
                       oc: usize,
                       ic: usize,
                       k: usize,
                       rng: &mut ChaCha8Rng|
         -> Result<(), GanError> {
            params.insert(&format!("{name}.w"), he_uniform_conv(rng, oc, ic, k))?;
            params.insert(&format!("{name}.b"), zero_bias(oc))?;
            Ok(())
        };

        let mut ch = spec.in_channels;
        for i in 0..spec.depth {
            let out = spec.level_channels(i);
            add(&mut params, format!("{prefix}enc{i}.c0"), out, ch, 3, rng)?;
            add(&mut params, format!("{prefix}enc{i}.c1"), out, out, 3, rng)?;
            ch = out;
        }
        let bott = spec.level_channels(spec.depth);
        add(&mut params, format!("{prefix}bott.c0"), bott, ch, 3, rng)?;
        add(&mut params, format!("{prefix}bott.c1"), bott, bott, 3, rng)?;
        ch = bott;
        for i in (0..spec.depth).rev() {
            let out = spec.level_channels(i);
            let cat = ch + out; // upsampled previous level + skip
            add(&mut params, format!("{prefix}dec{i}.c0"), out, cat, 3, rng)?;
            add(&mut params, format!("{prefix}dec{i}.c1"), out, out, 3, rng)?;
            ch = out;
        }
        add(&mut params, format!("{prefix}head"), spec.out_channels, ch, 1, rng)?;
        Ok(Generator { spec, params, prefix: prefix.to_string() })
    }

    /// The parameter-name prefix of this model.
    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn id(&self, ids: &BTreeMap<String, NodeId>, local: &str) -> Result<NodeId, GanError> {
        ids.get(&format!("{}{local}", self.prefix)).copied().ok_or_else(|| {
            GanError::Checkpoint(format!("parameter {}{local} missing from graph", self.prefix))
        })
    }

    fn conv_block(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        name: &str,
        x: NodeId,
    ) -> Result<NodeId, GanError> {
        let w = self.id(ids, &format!("{name}.w"))?;
        let b = self.id(ids, &format!("{name}.b"))?;
        let c = tape.conv3d(x, w, b, 1, 1)?;
        Ok(tape.leaky_relu(c, SLOPE)?)
    }

    /// Builds the forward graph on `tape` from input node `x` to the
    /// post-activation output node (normalized tangent channels for
    /// hard-tanh heads, `[0, 1]` intensities for sigmoid heads).
    pub fn apply(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        x: NodeId,
    ) -> Result<NodeId, GanError> {
        let mut cur = x;
        let mut skips = Vec::with_capacity(self.spec.depth);
        for i in 0..self.spec.depth {
            cur = self.conv_block(tape, ids, &format!("enc{i}.c0"), cur)?;
            cur = self.conv_block(tape, ids, &format!("enc{i}.c1"), cur)?;
            skips.push(cur);
            cur = tape.downsample_avg2(cur)?;
        }
        cur = self.conv_block(tape, ids, "bott.c0", cur)?;
        cur = self.conv_block(tape, ids, "bott.c1", cur)?;
        for i in (0..self.spec.depth).rev() {
            cur = tape.upsample_nearest2(cur)?;
            cur = tape.concat_channels(cur, skips[i])?;
            cur = self.conv_block(tape, ids, &format!("dec{i}.c0"), cur)?;
            cur = self.conv_block(tape, ids, &format!("dec{i}.c1"), cur)?;
        }
        let w = self.id(ids, "head.w")?;
        let b = self.id(ids, "head.b")?;
        cur = tape.conv3d(cur, w, b, 1, 0)?;
        match self.spec.head {
            Head::HardTanh => {
                cur = tape.hard_tanh(cur)?;
                if self.spec.out_channels == 9 {
                    cur = tape.sym9to6(cur)?;
                }
            }
            Head::Sigmoid => {
                cur = tape.sigmoid(cur)?;
            }
        }
        Ok(cur)
    }

    /// One inference pass on a throwaway tape with frozen parameters.
    pub(crate) fn eval_frozen(&self, input: Tensor5) -> Result<Tensor5, GanError> {
        let mut tape = Tape::new();
        let ids = self.params.bind_frozen(&mut tape)?;
        let x = tape.input(input)?;
        let out = self.apply(&mut tape, &ids, x)?;
        Ok(tape.value(out).clone())
    }

    fn check_divisible(&self, dims: (usize, usize, usize)) -> Result<(), GanError> {
        let d = self.spec.divisor();
        if dims.0 % d != 0 || dims.1 % d != 0 || dims.2 % d != 0 {
            return Err(GanError::Shape(format!(
                "input dims {dims:?} not divisible by 2^depth = {d}"
            )));
        }
        Ok(())
    }
}

/// Residual Wasserstein critic architecture.
///
/// A 3×3×3 stem, then `stages` stages of a stride-2 entry convolution
/// (doubling channels) followed by `blocks_per_stage` residual blocks, then
/// global mean pooling and a 1×1×1 linear head producing one unbounded
/// score per batch item. Weight clipping keeps it Lipschitz-bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSpec {
    pub in_channels: usize,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub base_channels: usize,
}

impl CriticSpec {
    /// Critic on structural volumes (one channel).
    pub fn for_structural(stages: usize, blocks_per_stage: usize, base_channels: usize) -> Self {
        CriticSpec { in_channels: 1, stages, blocks_per_stage, base_channels }
    }

    /// Critic on tangent diffusion volumes (six channels).
    pub fn for_tangent(stages: usize, blocks_per_stage: usize, base_channels: usize) -> Self {
        CriticSpec { in_channels: 6, stages, blocks_per_stage, base_channels }
    }

    fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << (i + 1)
    }
}

/// A critic: architecture plus named parameters (prefix `"dy."` / `"dx."`).
#[derive(Debug, Clone)]
pub struct Critic {
    pub spec: CriticSpec,
    pub params: Params,
    prefix: String,
}

impl Critic {
    /// Seeded He-uniform initialization, fixed draw order.
    pub fn init(spec: CriticSpec, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self, GanError> {
        let mut params = Params::new();
        let add = |params: &mut Params,
                       name: String,
                       oc: usize,
                       ic: usize,
                       k: usize,
                       rng: &mut ChaCha8Rng|
         -> Result<(), GanError> {
            params.insert(&format!("{name}.w"), he_uniform_conv(rng, oc, ic, k))?;
            params.insert(&format!("{name}.b"), zero_bias(oc))?;
            Ok(())
        };

        add(&mut params, format!("{prefix}stem"), spec.base_channels, spec.in_channels, 3, rng)?;
        let mut ch = spec.base_channels;
        for i in 0..spec.stages {
            let out = spec.stage_channels(i);
            add(&mut params, format!("{prefix}st{i}.entry"), out, ch, 3, rng)?;
            for j in 0..spec.blocks_per_stage {
                add(&mut params, format!("{prefix}st{i}.r{j}.c0"), out, out, 3, rng)?;
                add(&mut params, format!("{prefix}st{i}.r{j}.c1"), out, out, 3, rng)?;
            }
            ch = out;
        }
        add(&mut params, format!("{prefix}head"), 1, ch, 1, rng)?;
        Ok(Critic { spec, params, prefix: prefix.to_string() })
    }

    /// The parameter-name prefix of this model.
    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn id(&self, ids: &BTreeMap<String, NodeId>, local: &str) -> Result<NodeId, GanError> {
        ids.get(&format!("{}{local}", self.prefix)).copied().ok_or_else(|| {
            GanError::Checkpoint(format!("parameter {}{local} missing from graph", self.prefix))
        })
    }

    fn conv(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        name: &str,
        x: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, GanError> {
        let w = self.id(ids, &format!("{name}.w"))?;
        let b = self.id(ids, &format!("{name}.b"))?;
        Ok(tape.conv3d(x, w, b, stride, padding)?)
    }

    /// Builds the scoring graph: input `(B, C, …)` → scores `(B, 1, 1, 1, 1)`.
    pub fn score(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        x: NodeId,
    ) -> Result<NodeId, GanError> {
        let mut cur = self.conv(tape, ids, "stem", x, 1, 1)?;
        cur = tape.leaky_relu(cur, SLOPE)?;
        for i in 0..self.spec.stages {
            cur = self.conv(tape, ids, &format!("st{i}.entry"), cur, 2, 1)?;
            cur = tape.leaky_relu(cur, SLOPE)?;
            for j in 0..self.spec.blocks_per_stage {
                let mut t = self.conv(tape, ids, &format!("st{i}.r{j}.c0"), cur, 1, 1)?;
                t = tape.leaky_relu(t, SLOPE)?;
                t = self.conv(tape, ids, &format!("st{i}.r{j}.c1"), t, 1, 1)?;
                let sum = tape.add(cur, t)?;
                cur = tape.leaky_relu(sum, SLOPE)?;
            }
        }
        cur = tape.global_mean_pool(cur)?;
        self.conv(tape, ids, "head", cur, 1, 0)
    }

    /// Builds the scoring graph and reduces to the batch-mean score
    /// (the Monte-Carlo expectation in the Wasserstein objective).
    pub fn mean_score(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, NodeId>,
        x: NodeId,
    ) -> Result<NodeId, GanError> {
        let s = self.score(tape, ids, x)?;
        Ok(tape.mean_all(s)?)
    }
}

/// Runs `G_Y` on a full structural volume: intensities in, *physical*
/// tangent-space tensors out (the normalization map is inverted on the way
/// out). Input dims must be divisible by `2^depth`.
///
/// With an all-zero final layer the output is the zero tangent field — the
/// identity tensor everywhere after the exponential.
pub fn gy_forward(
    gy: &Generator,
    x: &ScalarField,
    norm: &NormMap,
) -> Result<TensorField, GanError> {
    if gy.spec.role != GeneratorRole::StructToDti {
        return Err(GanError::Config(
            "gy_forward requires a structural-to-diffusion generator".into(),
        ));
    }
    gy.check_divisible(x.dims())?;
    let input = scalar_batch_to_tensor(&[x])?;
    let out = gy.eval_frozen(input)?;
    let mut field = tensor_to_tangent_field(&out, 0, x.spacing())?;
    norm.denormalize(field.data_mut());
    Ok(field)
}

/// Runs `G_X` on a full tangent volume: physical tangent tensors in
/// (normalized internally), `[0, 1]` intensities out. Manifold-tagged input
/// is refused — project with the matrix logarithm first.
///
/// With an all-zero final layer the output is 0.5 everywhere (sigmoid of
/// zero).
pub fn gx_forward(
    gx: &Generator,
    s: &TensorField,
    norm: &NormMap,
) -> Result<ScalarField, GanError> {
    if gx.spec.role != GeneratorRole::DtiToStruct {
        return Err(GanError::Config(
            "gx_forward requires a diffusion-to-structural generator".into(),
        ));
    }
    if s.domain() != Domain::Tangent {
        return Err(GanError::Domain { want: Domain::Tangent, got: s.domain() });
    }
    gx.check_divisible(s.dims())?;
    let mut data = s.data().to_vec();
    norm.normalize(&mut data);
    let normed = TensorField::new(s.dims(), s.spacing(), Domain::Tangent, data)?;
    let input = tensor_batch_to_tensor(&[&normed])?;
    let out = gx.eval_frozen(input)?;
    tensor_to_scalar_field(&out, 0, s.spacing())
}

#[cfg(test)]
pub(crate) fn zero_head(g: &mut Generator) {
    let prefix = g.prefix.clone();
    for suffix in ["head.w", "head.b"] {
        let t = g.params.get_mut(&format!("{prefix}{suffix}")).expect("head exists");
        t.data_mut().fill(0.0);
    }
}

/// Builds a test critic whose score is exactly the spatial mean of input
/// channel `channel`: a one-channel stem that copies the channel (plus a
/// large bias to keep LeakyReLU in its identity range) and a head that
/// subtracts the bias again. Available to sibling test modules.
#[cfg(test)]
pub(crate) fn probe_channel_mean_critic(
    in_channels: usize,
    channel: usize,
    prefix: &str,
) -> Critic {
    const BIG: f64 = 64.0;
    let spec = CriticSpec {
        in_channels,
        stages: 0,
        blocks_per_stage: 1,
        base_channels: 1,
    };
    let mut params = Params::new();
    let mut stem_w = Tensor5::zeros([1, in_channels, 3, 3, 3]);
    // Center tap of the probed channel.
    let center = (channel * 27) + 13;
    stem_w.data_mut()[center] = 1.0;
    let mut stem_b = zero_bias(1);
    stem_b.data_mut()[0] = BIG;
    let mut head_w = Tensor5::zeros([1, 1, 1, 1, 1]);
    head_w.data_mut()[0] = 1.0;
    let mut head_b = zero_bias(1);
    head_b.data_mut()[0] = -BIG;
    params.insert(&format!("{prefix}stem.w"), stem_w).unwrap();
    params.insert(&format!("{prefix}stem.b"), stem_b).unwrap();
    params.insert(&format!("{prefix}head.w"), head_w).unwrap();
    params.insert(&format!("{prefix}head.b"), head_b).unwrap();
    Critic { spec, params, prefix: prefix.to_string() }
}

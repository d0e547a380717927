use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numcore::{
    ArcTanSurrogate, BatchStats, BnMode, Gradients, ParamGrads, ParamId, ParamStore, Scalar, Tape, Tensor, Var,
    BN_EPS, BN_MOMENTUM, PLIF_THRESHOLD,
};

use super::config::{Activation, ChannelPlan, ConvSpec, S2E2Config};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neuron {
    /// Output blocks: no activation, floating-point output.
    Identity,
    Relu,
    /// Parametric LIF with decay `sigmoid(w)`.
    Plif { w: ParamId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub spec: ConvSpec,
}

/// Convolution, optional batchnorm and activation. Spiking blocks normalize
/// the convolution's input; formal blocks normalize its output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub name: String,
    pub conv: ConvLayer,
    pub bn: Option<BatchNormLayer<T>>,
    pub bn_before_conv: bool,
    pub neuron: Neuron,
}

/// Observes intermediate values of a forward pass.
pub trait ForwardHook<T: Scalar> {
    /// One PLIF update: charge `h`, spikes `s` and post-reset potential.
    fn on_plif(&mut self, _block: &str, _step: usize, _charge: &Tensor<T>, _spikes: &Tensor<T>, _next_v: &Tensor<T>) {}

    /// Output of every block; `spiking` is set for blocks that end in a PLIF.
    fn on_block(&mut self, _block: &str, _step: usize, _output: &Tensor<T>, _spiking: bool) {}
}

/// A hook that observes nothing.
pub struct NoHook;

impl<T: Scalar> ForwardHook<T> for NoHook {}

pub struct ForwardOutput {
    /// One `N x 6` prediction per frame: translation then rotation vector.
    pub poses: Vec<Var>,
    /// Tape variables of the parameters, aligned with the parameter store.
    pub params: Vec<Var>,
}

/// The small direct end-to-end pose network.
#[derive(Debug, Clone, PartialEq)]
pub struct S2E2Model<T> {
    config: S2E2Config,
    params: ParamStore<T>,
    stem: ConvBlock<T>,
    shared: Vec<ConvBlock<T>>,
    translation: Vec<ConvBlock<T>>,
    rotation: Vec<ConvBlock<T>>,
    training: bool,
}

struct Builder<'a, T> {
    params: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    config: &'a S2E2Config,
}

impl<T: Scalar> Builder<'_, T> {
    fn block(&mut self, name: &str, in_channels: usize, spec: ConvSpec, output: bool) -> ConvBlock<T> {
        let k = spec.kernel;
        let fan_in = in_channels * k * k;
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = spec.out_channels * fan_in;
        let w: Vec<T> = (0..n).map(|_| T::lit(self.rng.random_range(-bound..bound))).collect();
        let weight = self.params.add(
            format!("{name}.conv.weight"),
            Tensor::from_vec(&[spec.out_channels, in_channels, k, k], w).unwrap(),
        );
        let bias = self
            .params
            .add(format!("{name}.conv.bias"), Tensor::zeros(&[spec.out_channels]));
        let spiking = self.config.is_spiking();
        let bn = self.config.use_bn.then(|| {
            let c = if spiking { in_channels } else { spec.out_channels };
            BatchNormLayer {
                gamma: self.params.add(format!("{name}.bn.gamma"), Tensor::full(&[c], T::one())),
                beta: self.params.add(format!("{name}.bn.beta"), Tensor::zeros(&[c])),
                running_mean: vec![T::zero(); c],
                running_var: vec![T::one(); c],
            }
        });
        let neuron = match (output, self.config.activation) {
            (true, _) => Neuron::Identity,
            (false, Activation::Relu) => Neuron::Relu,
            (false, Activation::Plif) => Neuron::Plif {
                w: self.params.add(format!("{name}.plif.w"), Tensor::scalar(T::zero())),
            },
        };
        ConvBlock {
            name: name.to_string(),
            conv: ConvLayer {
                weight,
                bias,
                in_channels,
                spec,
            },
            bn,
            bn_before_conv: spiking,
            neuron,
        }
    }

    fn path(&mut self, prefix: &str, plan: &ChannelPlan) -> Vec<ConvBlock<T>> {
        let mut c = plan.shared[3].out_channels;
        let mut blocks = Vec::with_capacity(4);
        for (i, spec) in plan.path.iter().enumerate() {
            blocks.push(self.block(&format!("{prefix}.{i}"), c, *spec, false));
            c = spec.out_channels;
        }
        blocks.push(self.block(&format!("{prefix}.out"), c, plan.head, true));
        blocks
    }
}

impl<T: Scalar> S2E2Model<T> {
    /// Deterministic initialization: He-uniform convolution weights, zero
    /// biases, unit BN scale, zero PLIF decay parameter (decay 0.5).
    pub fn build(config: &S2E2Config, seed: u64) -> Result<Self, ModelError> {
        config.plan.validate()?;
        let mut params = ParamStore::new();
        let plan = config.plan;
        let mut b = Builder {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        };
        let stem = b.block("stem", plan.input_channels, plan.stem, false);
        let mut c = plan.stem.out_channels;
        let mut shared = Vec::with_capacity(4);
        for (i, spec) in plan.shared.iter().enumerate() {
            shared.push(b.block(&format!("shared.{i}"), c, *spec, false));
            c = spec.out_channels;
        }
        let translation = b.path("translation", &plan);
        let rotation = b.path("rotation", &plan);
        let model = Self {
            config: *config,
            params,
            stem,
            shared,
            translation,
            rotation,
            training: false,
        };
        if let Some((lo, hi)) = config.param_budget {
            let count = model.count_params();
            if count < lo || count > hi {
                return Err(ModelError::ParamBudget { count, lo, hi });
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &S2E2Config {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Trainable scalars: conv weights and biases, BN scale and shift, PLIF
    /// decay parameters.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn stem(&self) -> &ConvBlock<T> {
        &self.stem
    }

    pub fn shared(&self) -> &[ConvBlock<T>] {
        &self.shared
    }

    /// Three blocks and the output block.
    pub fn translation_path(&self) -> &[ConvBlock<T>] {
        &self.translation
    }

    pub fn rotation_path(&self) -> &[ConvBlock<T>] {
        &self.rotation
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ConvBlock<T>> {
        std::iter::once(&self.stem)
            .chain(&self.shared)
            .chain(&self.translation)
            .chain(&self.rotation)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ConvBlock<T>> {
        std::iter::once(&mut self.stem)
            .chain(&mut self.shared)
            .chain(&mut self.translation)
            .chain(&mut self.rotation)
    }

    pub fn plif_count(&self) -> usize {
        self.blocks()
            .filter(|b| matches!(b.neuron, Neuron::Plif { .. }))
            .count()
    }

    /// Forward pass over a sequence of `N x C x H x W` frames. Membrane
    /// potentials start at zero and persist across the sequence. In training
    /// mode the batchnorm statistics pool every frame of every sequence in the
    /// batch, and the running statistics are updated.
    pub fn forward_sequence(&mut self, tape: &mut Tape<T>, frames: &[Tensor<T>]) -> Result<ForwardOutput, ModelError> {
        self.forward_sequence_with_hook(tape, frames, &mut NoHook)
    }

    pub fn forward_sequence_with_hook(
        &mut self,
        tape: &mut Tape<T>,
        frames: &[Tensor<T>],
        hook: &mut dyn ForwardHook<T>,
    ) -> Result<ForwardOutput, ModelError> {
        let train = self.training;
        let (out, stats) = self.forward_impl(tape, frames, train, hook)?;
        if train {
            self.apply_batch_stats(stats);
        }
        Ok(out)
    }

    /// Inference with running statistics, whatever the training flag.
    pub fn predict_sequence(&self, frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, ModelError> {
        self.predict_sequence_with_hook(frames, &mut NoHook)
    }

    pub fn predict_sequence_with_hook(
        &self,
        frames: &[Tensor<T>],
        hook: &mut dyn ForwardHook<T>,
    ) -> Result<Vec<Tensor<T>>, ModelError> {
        let mut tape = Tape::new();
        let (out, _) = self.forward_impl(&mut tape, frames, false, hook)?;
        Ok(out.poses.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Collects parameter gradients after `tape.backward`.
    pub fn param_grads(&self, grads: &mut Gradients<T>, params: &[Var]) -> ParamGrads<T> {
        params.iter().map(|&v| grads.take(v)).collect()
    }

    fn forward_impl(
        &self,
        tape: &mut Tape<T>,
        frames: &[Tensor<T>],
        train: bool,
        hook: &mut dyn ForwardHook<T>,
    ) -> Result<(ForwardOutput, Vec<BatchStats<T>>), ModelError> {
        let first = frames
            .first()
            .ok_or_else(|| ModelError::Input("empty frame sequence".into()))?;
        let (_, c, _, _) = first.dims4("forward")?;
        if c != self.config.plan.input_channels {
            return Err(ModelError::Input(format!(
                "frames have {c} channels, model expects {}",
                self.config.plan.input_channels
            )));
        }
        if let Some(f) = frames.iter().find(|f| f.shape() != first.shape()) {
            return Err(ModelError::Input(format!(
                "frame shape {:?} differs from {:?} within the sequence",
                f.shape(),
                first.shape()
            )));
        }

        let params: Vec<Var> = self
            .params
            .iter()
            .map(|(_, p)| {
                if train {
                    tape.variable(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        let mut ctx = Ctx {
            tape,
            params: &params,
            train,
            stats: Vec::new(),
            hook,
        };
        // layer by layer over the whole sequence; membrane state still
        // advances step by step inside each spiking layer
        let mut xs: Vec<Var> = frames.iter().map(|f| ctx.tape.constant(f.clone())).collect();
        for block in std::iter::once(&self.stem).chain(&self.shared) {
            xs = ctx.block(block, &xs)?;
        }
        let mut heads: Vec<Vec<Var>> = Vec::with_capacity(2);
        for path in [&self.translation, &self.rotation] {
            let mut ys = xs.clone();
            for block in path {
                ys = ctx.block(block, &ys)?;
            }
            heads.push(
                ys.iter()
                    .map(|&y| ctx.tape.global_avg_pool(y))
                    .collect::<Result<_, _>>()?,
            );
        }
        let poses = (0..frames.len())
            .map(|t| ctx.tape.concat_features(&[heads[0][t], heads[1][t]]))
            .collect::<Result<Vec<_>, _>>()?;
        let stats = std::mem::take(&mut ctx.stats);
        Ok((ForwardOutput { poses, params }, stats))
    }

    /// Running-stat update, one entry per BN layer in block order; variance
    /// is stored unbiased.
    fn apply_batch_stats(&mut self, stats: Vec<BatchStats<T>>) {
        let m = T::lit(BN_MOMENTUM);
        let n_blocks = self.blocks().filter(|b| b.bn.is_some()).count();
        if n_blocks == 0 {
            return;
        }
        let mut layers: Vec<&mut BatchNormLayer<T>> = self.blocks_mut().filter_map(|b| b.bn.as_mut()).collect();
        for (i, s) in stats.into_iter().enumerate() {
            let bn = &mut layers[i % n_blocks];
            let unbias = if s.count > 1 {
                T::from_usize(s.count).unwrap() / T::from_usize(s.count - 1).unwrap()
            } else {
                T::one()
            };
            for c in 0..bn.running_mean.len() {
                bn.running_mean[c] = (T::one() - m) * bn.running_mean[c] + m * s.mean[c];
                bn.running_var[c] = (T::one() - m) * bn.running_var[c] + m * s.var[c] * unbias;
            }
        }
    }
}

struct Ctx<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    params: &'a [Var],
    train: bool,
    stats: Vec<BatchStats<T>>,
    hook: &'a mut dyn ForwardHook<T>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    fn bn(&mut self, bn: &BatchNormLayer<T>, x: Var) -> Result<Var, ModelError> {
        let eps = T::lit(BN_EPS);
        let mode = if self.train {
            BnMode::Train { eps }
        } else {
            BnMode::Eval {
                mean: bn.running_mean.clone(),
                var: bn.running_var.clone(),
                eps,
            }
        };
        let (y, stats) = self.tape.batchnorm(x, self.p(bn.gamma), self.p(bn.beta), &mode)?;
        self.stats.extend(stats);
        Ok(y)
    }

    /// Runs one block over every step. Batchnorm and convolution see all
    /// steps stacked along the batch axis, so train-mode statistics cover
    /// `T x N` samples.
    fn block(&mut self, block: &ConvBlock<T>, xs: &[Var]) -> Result<Vec<Var>, ModelError> {
        let steps = xs.len();
        let n = self.tape.value(xs[0]).shape()[0];
        let mut h = if steps == 1 { xs[0] } else { self.tape.concat_batch(xs)? };
        if let (Some(bn), true) = (&block.bn, block.bn_before_conv) {
            h = self.bn(bn, h)?;
        }
        let conv = &block.conv;
        h = self.tape.conv2d(
            h,
            self.p(conv.weight),
            Some(self.p(conv.bias)),
            conv.spec.stride,
            conv.spec.padding,
        )?;
        if let (Some(bn), false) = (&block.bn, block.bn_before_conv) {
            h = self.bn(bn, h)?;
        }
        if matches!(block.neuron, Neuron::Relu) {
            h = self.tape.relu(h);
        }
        let per_step: Vec<Var> = if steps == 1 {
            vec![h]
        } else {
            (0..steps)
                .map(|t| self.tape.slice_batch(h, t * n, n))
                .collect::<Result<_, _>>()?
        };
        let outs = match block.neuron {
            Neuron::Identity | Neuron::Relu => per_step,
            Neuron::Plif { w } => {
                let theta = T::lit(PLIF_THRESHOLD);
                let shape = self.tape.value(per_step[0]).shape().to_vec();
                let mut v = self.tape.constant(Tensor::zeros(&shape));
                let mut spikes_out = Vec::with_capacity(steps);
                for (step, &x) in per_step.iter().enumerate() {
                    let charge = self.tape.plif_charge(x, v, self.p(w))?;
                    let spikes = self.tape.spike(charge, theta, ArcTanSurrogate::default());
                    v = self.tape.soft_reset(charge, spikes, theta);
                    self.hook.on_plif(
                        &block.name,
                        step,
                        self.tape.value(charge),
                        self.tape.value(spikes),
                        self.tape.value(v),
                    );
                    spikes_out.push(spikes);
                }
                spikes_out
            }
        };
        let spiking = matches!(block.neuron, Neuron::Plif { .. });
        for (step, &out) in outs.iter().enumerate() {
            self.hook.on_block(&block.name, step, self.tape.value(out), spiking);
        }
        Ok(outs)
    }
}

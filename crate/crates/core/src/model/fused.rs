//! Batchnorm folded into the neighbouring convolution.
//!
//! With BN after the convolution (formal blocks) the fold is the usual
//! per-output-channel rescale: `W' = W * g / s`, `b' = (b - m) * g / s + beta`
//! with `s = sqrt(var + eps)`.
//!
//! With BN before the convolution (spiking blocks) each input channel `i` is
//! mapped affinely, `x -> a_i x + t_i`, so `W'[o,i] = W[o,i] * a_i` and every
//! kernel tap that reads a real input pixel adds `sum_i W[o,i,kh,kw] * t_i`.
//! Zero padding contributes nothing, so on padded borders fewer taps add to
//! the bias. That per-tap term is kept as `tap_bias` and summed over the
//! in-bounds taps of each output pixel, which keeps the fold exact and the
//! convolution input binary.

use crate::numcore::kernels::{self, plif_step_values};
use crate::numcore::{Scalar, Tensor, BN_EPS, PLIF_THRESHOLD};

use super::config::{Activation, S2E2Config};
use super::network::{ConvBlock, ForwardHook, Neuron, S2E2Model};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusedNeuron<T> {
    Identity,
    Relu,
    Plif { decay: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedConv<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    /// `O x K x K`, added for every in-bounds tap.
    pub tap_bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> FusedConv<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut y = kernels::conv2d_forward(x, &self.weight, Some(&self.bias), self.stride, self.padding)?;
        if let Some(taps) = &self.tap_bias {
            let (_, _, h, w) = x.dims4("fused_conv")?;
            let map = kernels::inbound_tap_sum(taps, h, w, self.stride, self.padding)?;
            for sample in y.data_mut().chunks_exact_mut(map.len()) {
                for (v, &m) in sample.iter_mut().zip(map.data()) {
                    *v = *v + m;
                }
            }
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedBlock<T> {
    pub name: String,
    pub conv: FusedConv<T>,
    pub neuron: FusedNeuron<T>,
}

/// Inference-only network without batchnorm layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedModel<T> {
    pub config: S2E2Config,
    pub stem: FusedBlock<T>,
    pub shared: Vec<FusedBlock<T>>,
    pub translation: Vec<FusedBlock<T>>,
    pub rotation: Vec<FusedBlock<T>>,
}

fn fuse_block<T: Scalar>(model: &S2E2Model<T>, block: &ConvBlock<T>) -> FusedBlock<T> {
    let p = model.params();
    let mut weight = p.get(block.conv.weight).clone();
    let mut bias = p.get(block.conv.bias).data().to_vec();
    let (o, c, k, _) = weight.dims4("fuse").expect("conv weights are rank 4");
    let kk = k * k;
    let mut tap_bias = None;

    if let Some(bn) = &block.bn {
        let gamma = p.get(bn.gamma).data();
        let beta = p.get(bn.beta).data();
        let eps = T::lit(BN_EPS);
        let scale: Vec<T> = (0..bn.channels())
            .map(|ch| gamma[ch] / (bn.running_var[ch] + eps).sqrt())
            .collect();
        let shift: Vec<T> = (0..bn.channels())
            .map(|ch| beta[ch] - bn.running_mean[ch] * scale[ch])
            .collect();

        if block.bn_before_conv {
            let mut taps = Tensor::zeros(&[o, k, k]);
            for oc in 0..o {
                for ic in 0..c {
                    for t in 0..kk {
                        let i = (oc * c + ic) * kk + t;
                        let w = weight.data()[i];
                        taps.data_mut()[oc * kk + t] = taps.data()[oc * kk + t] + w * shift[ic];
                        weight.data_mut()[i] = w * scale[ic];
                    }
                }
            }
            if block.conv.spec.padding == 0 {
                // every tap is always in bounds
                for (oc, b) in bias.iter_mut().enumerate() {
                    *b = *b + taps.data()[oc * kk..(oc + 1) * kk].iter().copied().sum::<T>();
                }
            } else {
                tap_bias = Some(taps);
            }
        } else {
            for oc in 0..o {
                for v in &mut weight.data_mut()[oc * c * kk..(oc + 1) * c * kk] {
                    *v = *v * scale[oc];
                }
                bias[oc] = (bias[oc] - bn.running_mean[oc]) * scale[oc] + beta[oc];
            }
        }
    }

    let neuron = match block.neuron {
        Neuron::Identity => FusedNeuron::Identity,
        Neuron::Relu => FusedNeuron::Relu,
        Neuron::Plif { w } => FusedNeuron::Plif {
            decay: kernels::sigmoid(p.get(w).data()[0]),
        },
    };
    FusedBlock {
        name: block.name.clone(),
        conv: FusedConv {
            weight,
            bias,
            tap_bias,
            stride: block.conv.spec.stride,
            padding: block.conv.spec.padding,
        },
        neuron,
    }
}

/// Folds every batchnorm into its convolution. The model must be in eval
/// mode so that its running statistics are final.
pub fn fuse_bn<T: Scalar>(model: &S2E2Model<T>) -> Result<FusedModel<T>, ModelError> {
    if model.is_training() {
        return Err(ModelError::TrainMode);
    }
    let fuse_all = |blocks: &[ConvBlock<T>]| blocks.iter().map(|b| fuse_block(model, b)).collect();
    Ok(FusedModel {
        config: *model.config(),
        stem: fuse_block(model, model.stem()),
        shared: fuse_all(model.shared()),
        translation: fuse_all(model.translation_path()),
        rotation: fuse_all(model.rotation_path()),
    })
}

impl<T: Scalar> FusedModel<T> {
    pub fn blocks(&self) -> impl Iterator<Item = &FusedBlock<T>> {
        std::iter::once(&self.stem)
            .chain(&self.shared)
            .chain(&self.translation)
            .chain(&self.rotation)
    }

    pub fn is_spiking(&self) -> bool {
        self.config.activation == Activation::Plif
    }

    pub fn predict_sequence(&self, frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, ModelError> {
        self.predict_sequence_with_hook(frames, &mut super::network::NoHook)
    }

    /// Same contract as [`S2E2Model::predict_sequence`].
    pub fn predict_sequence_with_hook(
        &self,
        frames: &[Tensor<T>],
        hook: &mut dyn ForwardHook<T>,
    ) -> Result<Vec<Tensor<T>>, ModelError> {
        let n_blocks = self.blocks().count();
        let mut states: Vec<Option<Vec<T>>> = vec![None; n_blocks];
        let mut out = Vec::with_capacity(frames.len());
        for (step, frame) in frames.iter().enumerate() {
            let mut slot = 0;
            let mut x = frame.clone();
            for block in std::iter::once(&self.stem).chain(&self.shared) {
                x = run_block(block, &x, &mut states[slot], step, hook)?;
                slot += 1;
            }
            let mut head_values = Vec::with_capacity(2);
            for path in [&self.translation, &self.rotation] {
                let mut y = x.clone();
                for block in path {
                    y = run_block(block, &y, &mut states[slot], step, hook)?;
                    slot += 1;
                }
                head_values.push(kernels::global_avg_pool(&y)?);
            }
            let n = head_values[0].shape()[0];
            let mut pose = Vec::with_capacity(n * 6);
            for row in 0..n {
                for h in &head_values {
                    pose.extend_from_slice(&h.data()[row * 3..row * 3 + 3]);
                }
            }
            out.push(Tensor::from_vec(&[n, 6], pose)?);
        }
        Ok(out)
    }
}

fn run_block<T: Scalar>(
    block: &FusedBlock<T>,
    x: &Tensor<T>,
    state: &mut Option<Vec<T>>,
    step: usize,
    hook: &mut dyn ForwardHook<T>,
) -> Result<Tensor<T>, ModelError> {
    let h = block.conv.forward(x)?;
    let out = match block.neuron {
        FusedNeuron::Identity => h,
        FusedNeuron::Relu => h.map(|v| if v > T::zero() { v } else { T::zero() }),
        FusedNeuron::Plif { decay } => {
            let v = state.take().unwrap_or_else(|| vec![T::zero(); h.len()]);
            let (charge, spikes, next) = plif_step_values(h.data(), &v, decay, T::lit(PLIF_THRESHOLD));
            let shape = h.shape().to_vec();
            let charge = Tensor::from_vec(&shape, charge)?;
            let spikes = Tensor::from_vec(&shape, spikes)?;
            let next = Tensor::from_vec(&shape, next)?;
            hook.on_plif(&block.name, step, &charge, &spikes, &next);
            *state = Some(next.into_data());
            spikes
        }
    };
    let spiking = matches!(block.neuron, FusedNeuron::Plif { .. });
    hook.on_block(&block.name, step, &out, spiking);
    Ok(out)
}

//! Checkpoints are an SPKW tensor archive plus a `key = value` model config
//! stored next to it as `<checkpoint>.cfg`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::kv::KvMap;
use crate::numcore::{Scalar, Tensor, TensorArchive};

use super::config::S2E2Config;
use super::fused::{fuse_bn, FusedModel, FusedNeuron};
use super::network::S2E2Model;
use super::ModelError;

/// Anything that maps a frame sequence to per-frame `N x 6` poses.
pub trait SequencePredictor<T: Scalar> {
    fn model_config(&self) -> &S2E2Config;
    fn predict(&self, frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, ModelError>;
}

impl<T: Scalar> SequencePredictor<T> for S2E2Model<T> {
    fn model_config(&self) -> &S2E2Config {
        self.config()
    }

    fn predict(&self, frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, ModelError> {
        self.predict_sequence(frames)
    }
}

impl<T: Scalar> SequencePredictor<T> for FusedModel<T> {
    fn model_config(&self) -> &S2E2Config {
        &self.config
    }

    fn predict(&self, frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, ModelError> {
        self.predict_sequence(frames)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Full(S2E2Model<f32>),
    Fused(FusedModel<f32>),
}

impl LoadedModel {
    pub fn is_fused(&self) -> bool {
        matches!(self, LoadedModel::Fused(_))
    }
}

impl SequencePredictor<f32> for LoadedModel {
    fn model_config(&self) -> &S2E2Config {
        match self {
            LoadedModel::Full(m) => m.config(),
            LoadedModel::Fused(m) => &m.config,
        }
    }

    fn predict(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>, ModelError> {
        match self {
            LoadedModel::Full(m) => m.predict_sequence(frames),
            LoadedModel::Fused(m) => m.predict_sequence(frames),
        }
    }
}

pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn write_pair(path: &Path, archive: &TensorArchive, config: &S2E2Config, fused: bool) -> Result<(), ModelError> {
    let mut kv = config.to_kv();
    kv.set("fused", fused);
    fs::write(path, archive.to_bytes())?;
    fs::write(config_path(path), kv.to_text())?;
    Ok(())
}

/// Saves parameters and batchnorm running statistics as f32.
pub fn save_checkpoint<T: Scalar>(model: &S2E2Model<T>, path: &Path) -> Result<(), ModelError> {
    let mut archive = TensorArchive::new();
    for (_, p) in model.params().iter() {
        archive.push(p.name.clone(), &p.value);
    }
    for block in model.blocks() {
        if let Some(bn) = &block.bn {
            let c = bn.channels();
            archive.push(
                format!("{}.bn.running_mean", block.name),
                &Tensor::from_vec(&[c], bn.running_mean.clone())?,
            );
            archive.push(
                format!("{}.bn.running_var", block.name),
                &Tensor::from_vec(&[c], bn.running_var.clone())?,
            );
        }
    }
    write_pair(path, &archive, model.config(), false)
}

pub fn save_fused<T: Scalar>(model: &FusedModel<T>, path: &Path) -> Result<(), ModelError> {
    let mut archive = TensorArchive::new();
    for block in model.blocks() {
        let conv = &block.conv;
        archive.push(format!("{}.weight", block.name), &conv.weight);
        archive.push(
            format!("{}.bias", block.name),
            &Tensor::from_vec(&[conv.bias.len()], conv.bias.clone())?,
        );
        if let Some(taps) = &conv.tap_bias {
            archive.push(format!("{}.tap_bias", block.name), taps);
        }
        if let FusedNeuron::Plif { decay } = block.neuron {
            archive.push(format!("{}.decay", block.name), &Tensor::scalar(decay));
        }
    }
    write_pair(path, &archive, &model.config, true)
}

fn take(archive: &TensorArchive, name: &str, shape: &[usize]) -> Result<Tensor<f32>, ModelError> {
    let t = archive.require(name)?;
    if t.shape() != shape {
        return Err(ModelError::Checkpoint(format!(
            "`{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedModel, ModelError> {
    let cfg_file = config_path(path);
    let text = fs::read_to_string(&cfg_file)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", cfg_file.display())))?;
    let kv = KvMap::parse(&text)?;
    let fused: bool = kv.get_or("fused", false)?;
    let config = S2E2Config::from_kv(&kv)?;
    let archive = TensorArchive::from_bytes(&fs::read(path)?)?;

    let mut model = S2E2Model::<f32>::build(&config, 0)?;
    if fused {
        let mut fm = fuse_bn(&model)?;
        let names: Vec<_> = fm.blocks().map(|b| b.name.clone()).collect();
        let blocks = std::iter::once(&mut fm.stem)
            .chain(&mut fm.shared)
            .chain(&mut fm.translation)
            .chain(&mut fm.rotation);
        for (block, name) in blocks.zip(names) {
            let conv = &mut block.conv;
            conv.weight = take(&archive, &format!("{name}.weight"), &conv.weight.shape().to_vec())?;
            conv.bias = take(&archive, &format!("{name}.bias"), &[conv.bias.len()])?.into_data();
            let (o, _, k, _) = conv.weight.dims4("load")?;
            conv.tap_bias = match archive.get(&format!("{name}.tap_bias")) {
                Some(_) => Some(take(&archive, &format!("{name}.tap_bias"), &[o, k, k])?),
                None => None,
            };
            if let FusedNeuron::Plif { decay } = &mut block.neuron {
                *decay = take(&archive, &format!("{name}.decay"), &[1])?.data()[0];
            }
        }
        return Ok(LoadedModel::Fused(fm));
    }

    let ids: Vec<_> = model.params().iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let shape = model.params().get(id).shape().to_vec();
        *model.params_mut().get_mut(id) = take(&archive, &name, &shape)?;
    }
    for block in model.blocks_mut() {
        if let Some(bn) = &mut block.bn {
            let c = bn.channels();
            bn.running_mean = take(&archive, &format!("{}.bn.running_mean", block.name), &[c])?.into_data();
            bn.running_var = take(&archive, &format!("{}.bn.running_var", block.name), &[c])?.into_data();
        }
    }
    Ok(LoadedModel::Full(model))
}

//! Architecture variants, parameter initialization and freeze policies.

pub mod checkpoint;
pub mod config;
pub mod meta;
pub mod params;
pub mod resnet;

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use config::{Depth, Freeze, ModelConfig, Variant, META_DIM, NUM_LABELS};
pub use meta::MetaFeatures;
pub use params::{Entry, EntryKind, ParamStore};
pub use resnet::StageTrace;

use crate::error::{Error, Result};
use crate::tensor::ops::{self, NormMode};
use crate::tensor::Tensor;

/// Hidden width of the non-image baseline classifier.
pub const META_MLP_HIDDEN: usize = 32;

/// Non-image attribute predicted by a probe on frozen image features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    Age,
    Gender,
    View,
}

impl ProbeTarget {
    pub fn is_regression(self) -> bool {
        matches!(self, ProbeTarget::Age)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeTarget::Age => "age",
            ProbeTarget::Gender => "gender",
            ProbeTarget::View => "view",
        }
    }
}

impl FromStr for ProbeTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "age" => Ok(ProbeTarget::Age),
            "gender" => Ok(ProbeTarget::Gender),
            "view" | "vp" | "view_position" => Ok(ProbeTarget::View),
            other => Err(Error::Config(format!("unknown probe target `{other}`"))),
        }
    }
}

/// Serializable description of a network; enough to rebuild its layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Resnet { config: ModelConfig },
    MetaMlp { hidden: usize, num_labels: usize },
    Probe { base: ModelConfig, target: ProbeTarget },
}

impl Architecture {
    pub fn num_outputs(&self) -> usize {
        match self {
            Architecture::Resnet { config } => config.num_labels,
            Architecture::MetaMlp { num_labels, .. } => *num_labels,
            Architecture::Probe { .. } => 1,
        }
    }

    /// Whether the output layer applies a sigmoid.
    pub fn sigmoid_output(&self) -> bool {
        !matches!(
            self,
            Architecture::Probe {
                target: ProbeTarget::Age,
                ..
            }
        )
    }

    pub fn image_config(&self) -> Option<&ModelConfig> {
        match self {
            Architecture::Resnet { config } => Some(config),
            Architecture::Probe { base, .. } => Some(base),
            Architecture::MetaMlp { .. } => None,
        }
    }

    pub fn uses_meta(&self) -> bool {
        match self {
            Architecture::Resnet { config } => config.use_meta,
            Architecture::MetaMlp { .. } => true,
            Architecture::Probe { .. } => false,
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Architecture::Resnet { config } => config.tag(),
            Architecture::MetaMlp { .. } => "MLP-meta".into(),
            Architecture::Probe { base, target } => {
                let mut t = ModelConfig { use_meta: false, ..*base }.tag();
                t.push('-');
                t.push_str(match target {
                    ProbeTarget::Age => "age",
                    ProbeTarget::Gender => "gender",
                    ProbeTarget::View => "VP",
                });
                t
            }
        }
    }
}

/// Tensors produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Final convolutional feature map, when the model has an image branch.
    pub features: Option<Tensor>,
    /// Spatially pooled image features `[N, F]`.
    pub pooled: Option<Tensor>,
    /// Pre-activation outputs `[N, outputs]`.
    pub logits: Tensor,
    /// Sigmoid probabilities, or the raw regression value for the age probe.
    pub output: Tensor,
}

#[derive(Clone, Debug)]
pub struct Model {
    arch: Architecture,
    params: ParamStore,
}

fn is_head(name: &str) -> bool {
    name.starts_with("head.")
}

fn dense_init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, inputs: usize, outputs: usize, gain: f32) {
    let dist = Normal::new(0.0f32, (gain / inputs as f32).sqrt()).expect("finite std");
    let w = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
    store.insert(format!("{prefix}.weight"), vec![inputs, outputs], w, EntryKind::Param, true);
    store.insert(format!("{prefix}.bias"), vec![outputs], vec![0.0; outputs], EntryKind::Param, true);
}

/// Realizes the ResNet described by `config` with seeded He initialization.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    resnet::init_backbone(&mut params, config, &mut rng);
    dense_init(&mut params, &mut rng, "head", config.head_input_dim(), config.num_labels, 1.0);
    let mut model = Model {
        arch: Architecture::Resnet { config: *config },
        params,
    };
    model.apply_freeze_policy()?;
    Ok(model)
}

/// Non-image baseline: 3 -> 32 (ReLU) -> 15 (sigmoid).
pub fn build_meta_mlp(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    dense_init(&mut params, &mut rng, "mlp.hidden", META_DIM, META_MLP_HIDDEN, 2.0);
    dense_init(&mut params, &mut rng, "head", META_MLP_HIDDEN, NUM_LABELS, 1.0);
    Model {
        arch: Architecture::MetaMlp {
            hidden: META_MLP_HIDDEN,
            num_labels: NUM_LABELS,
        },
        params,
    }
}

/// Frozen copy of `base`'s image branch with a fresh single-output head.
pub fn build_probe(base: &Model, target: ProbeTarget, seed: u64) -> Result<Model> {
    let config = match base.arch {
        Architecture::Resnet { config } => config,
        Architecture::Probe { base, .. } => base,
        Architecture::MetaMlp { .. } => {
            return Err(Error::usage("probe base must have a pooled image-feature layer"))
        }
    };
    let mut params = ParamStore::new();
    for (name, e) in base.params.iter() {
        if is_head(name) {
            continue;
        }
        params.insert(name, e.tensor.shape().to_vec(), e.tensor.to_vec(), e.kind, false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dense_init(&mut params, &mut rng, "head", config.feature_dim(), 1, 1.0);
    Ok(Model {
        arch: Architecture::Probe { base: config, target },
        params,
    })
}

impl Model {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn tag(&self) -> String {
        self.arch.tag()
    }

    pub fn zero_grad(&self) {
        self.params.zero_grad();
    }

    /// Sets trainable flags from the architecture: off-the-shelf models and
    /// probes adapt only the head.
    pub fn apply_freeze_policy(&mut self) -> Result<()> {
        let head_only = match self.arch {
            Architecture::Resnet { config } => config.freeze == Freeze::OffTheShelf,
            Architecture::Probe { .. } => true,
            Architecture::MetaMlp { .. } => false,
        };
        let names: Vec<String> = self.params.names().map(str::to_string).collect();
        for name in names {
            let trainable = !head_only || is_head(&name);
            self.params.set_trainable(&name, trainable)?;
        }
        Ok(())
    }

    /// Names of bottleneck blocks present in the parameter set
    /// (`conv{stage}.{index}`).
    pub fn bottleneck_blocks(&self) -> Vec<String> {
        let set: BTreeSet<(usize, usize)> = self
            .params
            .names()
            .filter_map(|n| {
                let mut parts = n.split('.');
                let stage = parts.next()?.strip_prefix("conv")?.parse().ok()?;
                let index = parts.next()?.parse().ok()?;
                Some((stage, index))
            })
            .collect();
        set.into_iter().map(|(s, i)| format!("conv{s}.{i}")).collect()
    }

    fn image_forward(&self, config: &ModelConfig, images: &Tensor, mode: NormMode, trace: Option<&mut Vec<StageTrace>>) -> Result<(Tensor, Tensor)> {
        let features = resnet::backbone_forward(&self.params, config, images, mode, trace)?;
        let pooled = ops::global_avgpool(&features)?;
        Ok((features, pooled))
    }

    /// Final convolutional activations and pooled features of the image
    /// branch.
    pub fn features(&self, images: &Tensor, mode: NormMode) -> Result<(Tensor, Tensor)> {
        let config = self
            .arch
            .image_config()
            .ok_or_else(|| Error::usage("model has no image branch"))?;
        let mode = match self.arch {
            Architecture::Probe { .. } => NormMode::Eval,
            _ => mode,
        };
        self.image_forward(config, images, mode, None)
    }

    /// Classifier head applied to pooled features (and metadata when the
    /// model fuses it). Returns logits.
    pub fn head(&self, pooled: &Tensor, meta: Option<&Tensor>) -> Result<Tensor> {
        self.head_with(pooled, meta, self.params.get("head.weight")?, self.params.get("head.bias")?)
    }

    /// Like [`Model::head`] but on copies of the head parameters, so a
    /// backward pass leaves the model's gradients untouched.
    pub fn head_detached(&self, pooled: &Tensor, meta: Option<&Tensor>) -> Result<Tensor> {
        let w = self.params.get("head.weight")?.detach();
        let b = self.params.get("head.bias")?.detach();
        self.head_with(pooled, meta, &w, &b)
    }

    fn head_with(&self, pooled: &Tensor, meta: Option<&Tensor>, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let input = match (self.arch.uses_meta(), meta) {
            (true, Some(m)) => {
                if m.shape().len() != 2 || m.shape()[1] != META_DIM {
                    return Err(Error::shape(format!("metadata must be [N, {META_DIM}], got {:?}", m.shape())));
                }
                ops::concat(pooled, m)?
            }
            (false, None) => pooled.clone(),
            (true, None) => return Err(Error::usage("model fuses metadata but none was supplied")),
            (false, Some(_)) => return Err(Error::usage("metadata supplied to a model without metadata fusion")),
        };
        ops::dense(&input, weight, bias)
    }

    fn activate(&self, logits: &Tensor) -> Tensor {
        if self.arch.sigmoid_output() {
            ops::sigmoid(logits)
        } else {
            logits.clone()
        }
    }

    /// Full forward pass. `images` is `[N, C, S, S]`, `meta` is `[N, 3]`.
    pub fn forward(&self, images: Option<&Tensor>, meta: Option<&Tensor>, mode: NormMode) -> Result<ForwardOutput> {
        match self.arch {
            Architecture::MetaMlp { .. } => {
                if images.is_some() {
                    return Err(Error::usage("the metadata classifier takes no images"));
                }
                let meta = meta.ok_or_else(|| Error::usage("the metadata classifier needs metadata"))?;
                let hidden = ops::relu(&ops::dense(
                    meta,
                    self.params.get("mlp.hidden.weight")?,
                    self.params.get("mlp.hidden.bias")?,
                )?);
                let logits = ops::dense(&hidden, self.params.get("head.weight")?, self.params.get("head.bias")?)?;
                let output = self.activate(&logits);
                Ok(ForwardOutput {
                    features: None,
                    pooled: None,
                    logits,
                    output,
                })
            }
            Architecture::Resnet { .. } | Architecture::Probe { .. } => {
                let images = images.ok_or_else(|| Error::usage("model needs images"))?;
                if meta.is_some() != self.arch.uses_meta() {
                    return Err(Error::usage(if self.arch.uses_meta() {
                        "model fuses metadata but none was supplied"
                    } else {
                        "metadata supplied to a model without metadata fusion"
                    }));
                }
                let (features, pooled) = self.features(images, mode)?;
                let logits = self.head(&pooled, meta)?;
                let output = self.activate(&logits);
                Ok(ForwardOutput {
                    features: Some(features),
                    pooled: Some(pooled),
                    logits,
                    output,
                })
            }
        }
    }

    /// Output shape after each named stage for a single input, without
    /// touching running statistics.
    pub fn trace_shapes(&self) -> Result<Vec<StageTrace>> {
        let config = *self
            .arch
            .image_config()
            .ok_or_else(|| Error::usage("model has no image branch"))?;
        // Work on a copy so tracing leaves the running statistics untouched.
        let scratch = Model {
            arch: self.arch,
            params: {
                let mut p = ParamStore::new();
                for (name, e) in self.params.iter() {
                    p.insert(name, e.tensor.shape().to_vec(), e.tensor.to_vec(), e.kind, true);
                }
                p
            },
        };
        let images = Tensor::zeros(vec![1, config.input_channels, config.input_size, config.input_size]);
        let mut trace = Vec::new();
        crate::tensor::no_grad(|| -> Result<()> {
            let (_, pooled) = scratch.image_forward(&config, &images, NormMode::Train, Some(&mut trace))?;
            trace.push(StageTrace {
                name: "pooling2".into(),
                shape: pooled.shape().to_vec(),
            });
            let meta = config.use_meta.then(|| Tensor::zeros(vec![1, META_DIM]));
            let logits = scratch.head(&pooled, meta.as_ref())?;
            trace.push(StageTrace {
                name: "dense".into(),
                shape: logits.shape().to_vec(),
            });
            Ok(())
        })?;
        Ok(trace)
    }

    /// Overwrites every non-head tensor with pretrained values. The head is
    /// left as initialized.
    pub fn import_pretrained(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let mut updates = Vec::new();
        for (name, e) in self.params.iter() {
            if is_head(name) {
                continue;
            }
            let (shape, values) = checkpoint.tensor(name).ok_or_else(|| Error::ParamMismatch {
                name: name.to_string(),
                detail: "missing from checkpoint".into(),
            })?;
            if shape != e.tensor.shape() {
                if name == "conv1.weight" && shape.len() == 4 && shape[1] != e.tensor.shape()[1] {
                    return Err(Error::Validation(format!(
                        "pretrained stem has {} input channels, model has {}; channel conversion is not supported",
                        shape[1],
                        e.tensor.shape()[1]
                    )));
                }
                return Err(Error::ParamMismatch {
                    name: name.to_string(),
                    detail: format!("checkpoint shape {:?}, model shape {:?}", shape, e.tensor.shape()),
                });
            }
            updates.push((e.tensor.clone(), values));
        }
        for (t, values) in updates {
            t.set_data(values)?;
        }
        Ok(())
    }

    /// Replaces every tensor with the checkpoint's values; names and shapes
    /// must match exactly.
    pub fn load_state(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let mut updates = Vec::new();
        for (name, e) in self.params.iter() {
            let (shape, values) = checkpoint.tensor(name).ok_or_else(|| Error::ParamMismatch {
                name: name.to_string(),
                detail: "missing from checkpoint".into(),
            })?;
            if shape != e.tensor.shape() {
                return Err(Error::ParamMismatch {
                    name: name.to_string(),
                    detail: format!("checkpoint shape {:?}, model shape {:?}", shape, e.tensor.shape()),
                });
            }
            updates.push((e.tensor.clone(), values));
        }
        if let Some(extra) = checkpoint.names().find(|n| !self.params.contains(n)) {
            return Err(Error::ParamMismatch {
                name: extra.to_string(),
                detail: "present in checkpoint but not in model".into(),
            });
        }
        for (t, values) in updates {
            t.set_data(values)?;
        }
        Ok(())
    }

    /// Rebuilds a model from a checkpoint, restoring values and trainable
    /// flags.
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Model> {
        let arch = checkpoint.architecture();
        let mut model = match arch {
            Architecture::Resnet { config } => build_model(&config, 0)?,
            Architecture::MetaMlp { .. } => build_meta_mlp(0),
            Architecture::Probe { base, target } => {
                let base_model = build_model(&ModelConfig { freeze: Freeze::None, ..base }, 0)?;
                build_probe(&base_model, target, 0)?
            }
        };
        model.load_state(checkpoint)?;
        for entry in checkpoint.entries() {
            model.params.set_trainable(&entry.name, entry.trainable)?;
        }
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(self)
    }
}

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{LriError, Result};
use crate::invariants::{enumerate_nonzero_triples, enumerate_triples, BispectrumTriple};
use crate::kernels::{check_kernel_size, radial_count_for, RadialProfileBank};
use crate::layer::{InvariantKind, LayerConfig, LriLayer, OutputGrid, Padding};
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sse,
    Ssb,
    Z3,
}

impl FromStr for ModelKind {
    type Err = LriError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sse" => Ok(ModelKind::Sse),
            "ssb" => Ok(ModelKind::Ssb),
            "z3" => Ok(ModelKind::Z3),
            other => Err(LriError::Config(format!("unknown model kind '{other}' (expected sse, ssb or z3)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Sse => "sse",
            ModelKind::Ssb => "ssb",
            ModelKind::Z3 => "z3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Maximal SH degree `N` (ignored for z3).
    pub max_degree: usize,
    /// Streams `Q` (filters for z3).
    pub streams: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub classes: usize,
    /// Drop the identically vanishing `(n, n, odd l)` bispectrum triples.
    #[serde(default)]
    pub prune_zero: bool,
}

impl ModelConfig {
    /// Synthetic-experiment defaults: c = 7, stride 1, Q = 2, N = 2.
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            max_degree: if kind == ModelKind::Z3 { 0 } else { 2 },
            streams: 2,
            kernel_size: 7,
            stride: 1,
            padding: Padding::Zero,
            classes: 2,
            prune_zero: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_kernel_size(self.kernel_size)?;
        if self.stride == 0 {
            return Err(LriError::Config("stride must be at least 1".into()));
        }
        if self.streams == 0 {
            return Err(LriError::Config("at least one stream/filter is required".into()));
        }
        if self.classes < 2 {
            return Err(LriError::Config("at least two classes are required".into()));
        }
        if self.kind == ModelKind::Z3 && self.max_degree != 0 {
            return Err(LriError::Config("z3 models take no SH degree".into()));
        }
        Ok(())
    }

    /// Bispectrum triples of an ssb model, empty otherwise.
    pub fn triples(&self) -> Vec<BispectrumTriple> {
        match (self.kind, self.prune_zero) {
            (ModelKind::Ssb, false) => enumerate_triples(self.max_degree),
            (ModelKind::Ssb, true) => enumerate_nonzero_triples(self.max_degree),
            _ => Vec::new(),
        }
    }

    pub fn radial_count(&self) -> usize {
        radial_count_for(self.kernel_size)
    }

    /// Pooled features per stream.
    pub fn channels_per_stream(&self) -> usize {
        match self.kind {
            ModelKind::Sse => self.max_degree + 1,
            ModelKind::Ssb => self.triples().len(),
            ModelKind::Z3 => 1,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.streams * self.channels_per_stream()
    }

    pub fn layer_parameter_count(&self) -> usize {
        match self.kind {
            ModelKind::Z3 => self.kernel_size.pow(3) * self.streams,
            _ => self.streams * (self.max_degree + 1) * self.radial_count(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        let f = self.feature_width();
        self.layer_parameter_count() + f + f * self.classes + self.classes
    }

    pub fn layout(&self) -> ParamLayout {
        let l = self.layer_parameter_count();
        let f = self.feature_width();
        let c = self.classes;
        ParamLayout {
            layer: 0..l,
            bias: l..l + f,
            fc_weight: l + f..l + f + f * c,
            fc_bias: l + f + f * c..l + f + f * c + c,
        }
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            kernel_size: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
            max_degree: self.max_degree,
        }
    }

    /// The LRI layer of an sse/ssb model.
    pub fn lri_layer(&self) -> Result<LriLayer> {
        let kind = match self.kind {
            ModelKind::Sse => InvariantKind::Spectrum,
            ModelKind::Ssb => InvariantKind::Bispectrum(self.triples()),
            ModelKind::Z3 => return Err(LriError::Config("z3 models have no LRI layer".into())),
        };
        LriLayer::new(self.layer_config(), kind, self.radial_count())
    }
}

/// Ranges of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    /// Radial weights `[Q][N+1][J+1]`, or z3 kernels `[Q][c][c][c]`.
    pub layer: Range<usize>,
    /// One bias per pooled feature.
    pub bias: Range<usize>,
    /// `[classes][features]`, row-major.
    pub fc_weight: Range<usize>,
    pub fc_bias: Range<usize>,
}

/// A shallow classifier: invariant (or z3 convolution) layer, global average
/// pooling, bias, ReLU and one fully-connected softmax layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    seed: u64,
    params: Vec<f64>,
}

/// Activations of the head for one sample.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> ParamLayout {
        self.config.layout()
    }

    pub fn from_params(config: ModelConfig, seed: u64, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.parameter_count() {
            return Err(LriError::Shape(format!(
                "model needs {} parameters, got {}",
                config.parameter_count(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(LriError::Numerical(format!("parameter {i} is not finite")));
        }
        Ok(Model { config, seed, params })
    }

    pub fn layer_params(&self) -> &[f64] {
        &self.params[self.layout().layer]
    }

    /// Radial bank view of the layer weights (sse/ssb only).
    pub fn radial_bank(&self) -> Result<RadialProfileBank> {
        if self.config.kind == ModelKind::Z3 {
            return Err(LriError::Config("z3 models have no radial bank".into()));
        }
        RadialProfileBank::from_weights(
            self.config.streams,
            self.config.max_degree,
            self.config.radial_count(),
            self.layer_params().to_vec(),
        )
    }

    /// Pooled features of one volume computed directly through the layer.
    pub fn pooled_features(&self, vol: &Volume3D) -> Result<Vec<f64>> {
        match self.config.kind {
            ModelKind::Z3 => z3_pooled(&self.config, self.layer_params(), vol),
            _ => {
                let layer = self.config.lri_layer()?;
                Ok(layer.forward(vol, &self.radial_bank()?)?.pooled)
            }
        }
    }

    pub fn head(&self, pooled: &[f64]) -> HeadOutput {
        let lay = self.layout();
        let f = self.config.feature_width();
        let bias = &self.params[lay.bias.clone()];
        let hidden: Vec<f64> = pooled.iter().zip(bias).map(|(p, b)| (p + b).max(0.0)).collect();
        let w = &self.params[lay.fc_weight.clone()];
        let b = &self.params[lay.fc_bias.clone()];
        let logits = (0..self.config.classes)
            .map(|k| b[k] + w[k * f..(k + 1) * f].iter().zip(&hidden).map(|(a, h)| a * h).sum::<f64>())
            .collect();
        HeadOutput { hidden, logits }
    }

    /// Class probabilities for one volume.
    pub fn predict_proba(&self, vol: &Volume3D) -> Result<Vec<f64>> {
        Ok(softmax(&self.head(&self.pooled_features(vol)?).logits))
    }

    /// Mean cross-entropy over a batch of pooled features; accumulates the
    /// gradient with respect to the head parameters into `grad` and returns
    /// the gradient with respect to each sample's pooled features.
    pub fn head_loss_backward(
        &self,
        pooled: &[Vec<f64>],
        labels: &[usize],
        grad: &mut [f64],
    ) -> (f64, Vec<Vec<f64>>) {
        let lay = self.layout();
        let f = self.config.feature_width();
        let classes = self.config.classes;
        let w = &self.params[lay.fc_weight.clone()];
        let inv_b = 1.0 / pooled.len() as f64;
        let mut loss = 0.0;
        let mut dpooled = Vec::with_capacity(pooled.len());
        for (p, &y) in pooled.iter().zip(labels) {
            let out = self.head(p);
            loss += cross_entropy(&out.logits, y);
            let mut dlogits = softmax(&out.logits);
            dlogits[y] -= 1.0;
            dlogits.iter_mut().for_each(|d| *d *= inv_b);
            let mut dhidden = vec![0.0; f];
            for k in 0..classes {
                grad[lay.fc_bias.start + k] += dlogits[k];
                let row = lay.fc_weight.start + k * f;
                for i in 0..f {
                    grad[row + i] += dlogits[k] * out.hidden[i];
                    dhidden[i] += dlogits[k] * w[k * f + i];
                }
            }
            let dp: Vec<f64> = dhidden
                .iter()
                .zip(&out.hidden)
                .map(|(d, h)| if *h > 0.0 { *d } else { 0.0 })
                .collect();
            for i in 0..f {
                grad[lay.bias.start + i] += dp[i];
            }
            dpooled.push(dp);
        }
        (loss * inv_b, dpooled)
    }

    /// Named arrays with shapes, as stored in model files.
    pub fn named_weights(&self) -> BTreeMap<String, NamedArray> {
        let c = &self.config;
        let lay = self.layout();
        let f = c.feature_width();
        let mut out = BTreeMap::new();
        let layer_shape = match c.kind {
            ModelKind::Z3 => vec![c.streams, c.kernel_size, c.kernel_size, c.kernel_size],
            _ => vec![c.streams, c.max_degree + 1, c.radial_count()],
        };
        let name = if c.kind == ModelKind::Z3 { "kernel" } else { "radial" };
        out.insert(name.to_string(), NamedArray::new(layer_shape, &self.params[lay.layer]));
        out.insert("bias".into(), NamedArray::new(vec![f], &self.params[lay.bias]));
        out.insert("fc_weight".into(), NamedArray::new(vec![c.classes, f], &self.params[lay.fc_weight]));
        out.insert("fc_bias".into(), NamedArray::new(vec![c.classes], &self.params[lay.fc_bias]));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config,
            seed: self.seed,
            weights: self.named_weights(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| LriError::Numerical(format!("cannot serialize model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| LriError::Config(format!("invalid model file: {e}")))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(LriError::Config(format!("unsupported model format_version {}", file.format_version)));
        }
        let layer_name = if file.config.kind == ModelKind::Z3 { "kernel" } else { "radial" };
        let mut params = Vec::with_capacity(file.config.parameter_count());
        for name in [layer_name, "bias", "fc_weight", "fc_bias"] {
            let arr = file
                .weights
                .get(name)
                .ok_or_else(|| LriError::Config(format!("model file lacks '{name}'")))?;
            if arr.shape.iter().product::<usize>() != arr.data.len() {
                return Err(LriError::Shape(format!("'{name}' shape does not match its data")));
            }
            params.extend_from_slice(&arr.data);
        }
        Model::from_params(file.config, file.seed, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| LriError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LriError::io(path, e))?;
        Model::from_json(&text).map_err(|e| match e {
            LriError::Config(m) | LriError::Shape(m) => LriError::Format {
                path: path.to_path_buf(),
                message: m,
            },
            other => other,
        })
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    fn new(shape: Vec<usize>, data: &[f64]) -> Self {
        NamedArray {
            shape,
            data: data.to_vec(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    weights: BTreeMap<String, NamedArray>,
}

/// Radial weights `N(0, 1)`; z3 kernels He-normal `N(0, 2 / c^3)`; biases
/// zero; fully-connected weights Glorot-uniform.
pub fn build_model<R: Rng + ?Sized>(config: ModelConfig, seed: u64, rng: &mut R) -> Result<Model> {
    config.validate()?;
    let lay = config.layout();
    let mut params = vec![0.0; config.parameter_count()];
    match config.kind {
        ModelKind::Z3 => {
            let fan_in = config.kernel_size.pow(3) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            params[lay.layer.clone()].iter_mut().for_each(|p| *p = normal.sample(rng));
        }
        _ => params[lay.layer.clone()].iter_mut().for_each(|p| *p = rng.sample(StandardNormal)),
    }
    let f = config.feature_width() as f64;
    let limit = (6.0 / (f + config.classes as f64)).sqrt();
    let uni = Uniform::new_inclusive(-limit, limit);
    params[lay.fc_weight.clone()].iter_mut().for_each(|p| *p = uni.sample(rng));
    Ok(Model { config, seed, params })
}

/// Trainable scalar count.
pub fn count_parameters(model: &Model) -> usize {
    model.params.len()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean softmax cross-entropy of a batch of logits.
pub fn loss(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    logits.iter().zip(labels).map(|(l, &y)| cross_entropy(l, y)).sum::<f64>() / logits.len() as f64
}

/// `p_q = mean_x sum_y I(x + y) K_q(y)` over the (masked) output grid.
pub(crate) fn z3_pooled(config: &ModelConfig, kernels: &[f64], vol: &Volume3D) -> Result<Vec<f64>> {
    let a = super::features::mean_patch(config, vol)?;
    let taps = config.kernel_size.pow(3);
    Ok((0..config.streams)
        .map(|q| kernels[q * taps..(q + 1) * taps].iter().zip(&a).map(|(k, v)| k * v).sum())
        .collect())
}

pub(crate) fn output_grid(config: &ModelConfig, vol: &Volume3D) -> Result<OutputGrid> {
    OutputGrid::new(vol.shape(), config.kernel_size, config.stride, config.padding)
}

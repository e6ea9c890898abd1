//! Fully-connected generators and critics.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{Array2, AutodiffError, Gradients, Graph, Var, NORMALIZE_EPS};
use crate::sampler::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LATENT_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("{what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },
    #[error("feature dimension mismatch: network has {network}, requested {requested}")]
    FeatureDim { network: usize, requested: usize },
    #[error("feature row {row} has norm {norm:e}; cannot project it onto the sphere")]
    DegenerateFeature { row: usize, norm: f64 },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Tanh,
    LeakyRelu(f64),
    Elu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("tanh"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
            Activation::Elu => f.write_str("elu"),
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            "leaky_relu" => Ok(Activation::LeakyRelu(LEAKY_SLOPE)),
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown activation '{s}'"))?;
                Ok(Activation::LeakyRelu(slope))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTransform {
    Linear,
    Tanh,
    L2Normalize,
}

impl fmt::Display for OutputTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputTransform::Linear => "linear",
            OutputTransform::Tanh => "tanh",
            OutputTransform::L2Normalize => "l2_normalize",
        })
    }
}

impl FromStr for OutputTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(OutputTransform::Linear),
            "tanh" => Ok(OutputTransform::Tanh),
            "l2_normalize" => Ok(OutputTransform::L2Normalize),
            other => Err(format!("unknown output transform '{other}'")),
        }
    }
}

/// Layer widths from input to output, the hidden activation and the output transform.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output: OutputTransform,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output: OutputTransform) -> Result<Self, ModelError> {
        if layer_sizes.len() < 3 {
            return Err(ModelError::InvalidSpec(format!(
                "need input, at least one hidden layer and output, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(ModelError::InvalidSpec(format!("zero-width layer in {layer_sizes:?}")));
        }
        if output == OutputTransform::L2Normalize && *layer_sizes.last().unwrap() < 2 {
            return Err(ModelError::InvalidSpec("l2_normalize needs an output of width >= 2".into()));
        }
        Ok(Self {
            layer_sizes,
            activation,
            output,
        })
    }

    /// Gaussian-ring generator: 128 -> 3 x 128 tanh -> 2.
    pub fn ring_generator() -> Self {
        Self::new(vec![LATENT_DIM, 128, 128, 128, 2], Activation::Tanh, OutputTransform::Linear).unwrap()
    }

    /// Gaussian-ring critic: 2 -> 3 x 32 tanh -> `feature_dim`, normalized onto the sphere.
    /// `feature_dim == 1` gives the vanilla discriminator with a linear logit.
    pub fn ring_critic(feature_dim: usize) -> Result<Self, ModelError> {
        Self::new(vec![2, 32, 32, 32, feature_dim], Activation::Tanh, critic_output(feature_dim))
    }

    /// MNIST generator: 128 -> 256 -> 512 -> 1024 leaky relu -> 1024 tanh.
    pub fn mnist_generator() -> Self {
        Self::new(
            vec![LATENT_DIM, 256, 512, 1024, 1024],
            Activation::LeakyRelu(LEAKY_SLOPE),
            OutputTransform::Tanh,
        )
        .unwrap()
    }

    /// MNIST critic: 1024 -> 1024 -> 512 -> 256 leaky relu -> `feature_dim`.
    pub fn mnist_critic(feature_dim: usize) -> Result<Self, ModelError> {
        Self::new(
            vec![1024, 1024, 512, 256, feature_dim],
            Activation::LeakyRelu(LEAKY_SLOPE),
            critic_output(feature_dim),
        )
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output(&self) -> OutputTransform {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `sizes=a,b,c activation=... output=...`, the form stored in checkpoints.
    pub fn describe(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        format!("sizes={} activation={} output={}", sizes.join(","), self.activation, self.output)
    }

    pub fn parse_description(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::InvalidSpec(format!("cannot parse network description '{s}'"));
        let mut sizes = None;
        let mut activation = None;
        let mut output = None;
        for part in s.split_whitespace() {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "sizes" => {
                    sizes = Some(v.split(',').map(|x| x.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad())?)
                }
                "activation" => activation = Some(v.parse::<Activation>().map_err(ModelError::InvalidSpec)?),
                "output" => output = Some(v.parse::<OutputTransform>().map_err(ModelError::InvalidSpec)?),
                _ => return Err(bad()),
            }
        }
        Self::new(sizes.ok_or_else(bad)?, activation.ok_or_else(bad)?, output.ok_or_else(bad)?)
    }
}

fn critic_output(feature_dim: usize) -> OutputTransform {
    if feature_dim == 1 {
        OutputTransform::Linear
    } else {
        OutputTransform::L2Normalize
    }
}

/// Weights (`fan_in x fan_out`) and `1 x fan_out` biases of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2>,
    pub biases: Vec<Array2>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let pairs = spec.layer_sizes.windows(2);
        Self {
            weights: pairs.clone().map(|w| Array2::zeros(w[0], w[1])).collect(),
            biases: pairs.map(|w| Array2::zeros(1, w[1])).collect(),
        }
    }

    /// Tensors in the order `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Array2> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensor_names(prefix: &str, n_layers: usize) -> Vec<String> {
        (0..n_layers).flat_map(|l| [format!("{prefix}.w{l}"), format!("{prefix}.b{l}")]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Checks every tensor shape against `spec`.
    pub fn check(&self, spec: &MlpSpec, what: &str) -> Result<(), ModelError> {
        if self.weights.len() != spec.n_layers() || self.biases.len() != spec.n_layers() {
            return Err(ModelError::Shape {
                what: format!("{what} layer count"),
                expected: spec.n_layers().to_string(),
                found: self.weights.len().to_string(),
            });
        }
        for (l, w) in spec.layer_sizes.windows(2).enumerate() {
            for (name, t, want) in [("w", &self.weights[l], (w[0], w[1])), ("b", &self.biases[l], (1, w[1]))] {
                if t.shape() != want {
                    return Err(ModelError::Shape {
                        what: format!("{what}.{name}{l}"),
                        expected: format!("{}x{}", want.0, want.1),
                        found: format!("{}x{}", t.rows(), t.cols()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Adds every tensor to `g` as a parameter (`trainable`) or a constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let mut add = |t: &Array2| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let weights = self.weights.iter().map(&mut add).collect();
        let biases = self.biases.iter().map(&mut add).collect();
        BoundParams { weights, biases }
    }
}

/// Graph handles for one network's tensors.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl BoundParams {
    /// Gradients in [`MlpParams::tensors`] order; tensors the loss never reached get zeros.
    pub fn grads(&self, g: &Graph, grads: &Gradients) -> Vec<Array2> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [grads.get_or_zeros(g, w), grads.get_or_zeros(g, b)])
            .collect()
    }
}

/// Glorot-normal weights `N(0, 2 / (fan_in + fan_out))` and zero biases.
pub fn build_mlp(spec: &MlpSpec, seed: u64) -> MlpParams {
    build_mlp_with(spec, &mut Rng::new(seed))
}

pub fn build_mlp_with(spec: &MlpSpec, rng: &mut Rng) -> MlpParams {
    let mut params = MlpParams::zeros(spec);
    for w in &mut params.weights {
        let std = (2.0 / (w.rows() + w.cols()) as f64).sqrt();
        for v in w.data_mut() {
            *v = std * rng.normal();
        }
    }
    params
}

fn check_input(g: &Graph, spec: &MlpSpec, x: Var, what: &str) -> Result<(), ModelError> {
    let cols = g.value(x).cols();
    if cols != spec.input_dim() {
        return Err(ModelError::Shape {
            what: format!("{what} input columns"),
            expected: spec.input_dim().to_string(),
            found: cols.to_string(),
        });
    }
    Ok(())
}

fn activate(g: &mut Graph, x: Var, a: Activation) -> Result<Var, AutodiffError> {
    match a {
        Activation::Tanh => g.tanh(x),
        Activation::LeakyRelu(s) => g.leaky_relu(x, s),
        Activation::Elu => g.elu(x),
    }
}

/// Affine layers with the hidden activation, before the output transform.
fn pre_output(g: &mut Graph, spec: &MlpSpec, p: &BoundParams, x: Var) -> Result<Var, ModelError> {
    let mut h = x;
    let last = spec.n_layers() - 1;
    for l in 0..spec.n_layers() {
        let z = g.matmul(h, p.weights[l])?;
        h = g.add_rowwise_bias(z, p.biases[l])?;
        if l < last {
            h = activate(g, h, spec.activation)?;
        }
    }
    Ok(h)
}

fn normalize_rows(g: &mut Graph, h: Var) -> Result<Var, ModelError> {
    let v = g.value(h);
    for r in 0..v.rows() {
        let norm = v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < NORMALIZE_EPS {
            return Err(ModelError::DegenerateFeature { row: r, norm });
        }
    }
    Ok(g.rowwise_normalize(h)?)
}

/// Runs the network and its output transform.
pub fn mlp_forward(g: &mut Graph, spec: &MlpSpec, p: &BoundParams, x: Var) -> Result<Var, ModelError> {
    check_input(g, spec, x, "network")?;
    let h = pre_output(g, spec, p, x)?;
    match spec.output {
        OutputTransform::Linear => Ok(h),
        OutputTransform::Tanh => Ok(g.tanh(h)?),
        OutputTransform::L2Normalize => normalize_rows(g, h),
    }
}

/// `B x latent` noise to `B x data_dim` samples.
pub fn generator_forward(g: &mut Graph, spec: &MlpSpec, p: &BoundParams, z: Var) -> Result<Var, ModelError> {
    check_input(g, spec, z, "generator")?;
    mlp_forward(g, spec, p, z)
}

/// `B x data_dim` inputs to `B x feature_dim` features, unit rows when `normalize`.
pub fn critic_forward(
    g: &mut Graph,
    spec: &MlpSpec,
    p: &BoundParams,
    x: Var,
    feature_dim: usize,
    normalize: bool,
) -> Result<Var, ModelError> {
    check_input(g, spec, x, "critic")?;
    if spec.output_dim() != feature_dim {
        return Err(ModelError::FeatureDim {
            network: spec.output_dim(),
            requested: feature_dim,
        });
    }
    if normalize && feature_dim < 2 {
        return Err(ModelError::InvalidSpec(format!("cannot normalize {feature_dim}-dim features")));
    }
    let h = pre_output(g, spec, p, x)?;
    match (normalize, spec.output) {
        (true, _) => normalize_rows(g, h),
        (false, OutputTransform::Tanh) => Ok(g.tanh(h)?),
        (false, _) => Ok(h),
    }
}

/// Forward pass on plain arrays, outside any training graph.
pub fn forward_values(spec: &MlpSpec, params: &MlpParams, x: &Array2) -> Result<Array2, ModelError> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = mlp_forward(&mut g, spec, &p, xv)?;
    Ok(g.value(y).clone())
}

/// A generator and its critic, with their specs.
#[derive(Debug, Clone, PartialEq)]
pub struct GanNetworks {
    pub generator_spec: MlpSpec,
    pub generator: MlpParams,
    pub critic_spec: MlpSpec,
    pub critic: MlpParams,
}

impl GanNetworks {
    /// Generator weights are drawn first, then critic weights, from the same stream.
    pub fn init(generator_spec: MlpSpec, critic_spec: MlpSpec, rng: &mut Rng) -> Result<Self, ModelError> {
        if generator_spec.output_dim() != critic_spec.input_dim() {
            return Err(ModelError::Shape {
                what: "critic input vs generator output".into(),
                expected: generator_spec.output_dim().to_string(),
                found: critic_spec.input_dim().to_string(),
            });
        }
        let generator = build_mlp_with(&generator_spec, rng);
        let critic = build_mlp_with(&critic_spec, rng);
        Ok(Self {
            generator_spec,
            generator,
            critic_spec,
            critic,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.critic_spec.output_dim()
    }

    /// Samples from the generator for a `n x latent` noise matrix.
    pub fn generate(&self, z: &Array2) -> Result<Array2, ModelError> {
        forward_values(&self.generator_spec, &self.generator, z)
    }

    /// Checkpoint holding both networks; `metadata` entries come first.
    pub fn to_checkpoint(&self, metadata: &[(&str, String)]) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        for (k, v) in metadata {
            ckpt.set_meta(k, v.clone());
        }
        ckpt.set_meta("generator", self.generator_spec.describe());
        ckpt.set_meta("critic", self.critic_spec.describe());
        for (prefix, spec, params) in [
            ("generator", &self.generator_spec, &self.generator),
            ("critic", &self.critic_spec, &self.critic),
        ] {
            for (name, t) in MlpParams::tensor_names(prefix, spec.n_layers()).into_iter().zip(params.tensors()) {
                ckpt.push(name, t.clone());
            }
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let load = |prefix: &str| -> Result<(MlpSpec, MlpParams), ModelError> {
            let desc = ckpt.meta(prefix).ok_or_else(|| ModelError::InvalidSpec(format!("checkpoint has no '{prefix}' description")))?;
            let spec = MlpSpec::parse_description(desc)?;
            let mut params = MlpParams::zeros(&spec);
            let names = MlpParams::tensor_names(prefix, spec.n_layers());
            for (name, slot) in names.iter().zip(params.tensors_mut()) {
                let t = ckpt.tensor(name).ok_or_else(|| ModelError::Shape {
                    what: name.clone(),
                    expected: format!("{}x{}", slot.rows(), slot.cols()),
                    found: "missing".into(),
                })?;
                if t.shape() != slot.shape() {
                    return Err(ModelError::Shape {
                        what: name.clone(),
                        expected: format!("{}x{}", slot.rows(), slot.cols()),
                        found: format!("{}x{}", t.rows(), t.cols()),
                    });
                }
                *slot = t.clone();
            }
            Ok((spec, params))
        };
        let (generator_spec, generator) = load("generator")?;
        let (critic_spec, critic) = load("critic")?;
        Ok(Self {
            generator_spec,
            generator,
            critic_spec,
            critic,
        })
    }
}

#[cfg(test)]
mod tests;

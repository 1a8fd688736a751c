//! Generator and discriminator networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    sgd_step, BatchNorm2d, Conv2d, Layer, LayerKind, LayerSpec, LeakyRelu, Linear, Mode, Relu,
    Sigmoid,
};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
}

/// Layout of the saliency generator: stride-1 same-padded 3×3 convolutions,
/// batchnorm + ReLU after every hidden layer, sigmoid output without batchnorm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub input_channels: usize,
    /// Output channels of the hidden convolutions, input side first.
    pub hidden_widths: Vec<usize>,
    /// Channels of the output map.
    pub map_dims: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            input_channels: 3,
            hidden_widths: vec![16, 32, 64, 96, 96, 64, 32, 16],
            map_dims: 9,
        }
    }
}

impl GeneratorSpec {
    pub fn conv_count(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.map_dims == 0 || self.input_channels == 0 {
            return Err(Error::invalid("generator channels must be positive"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("generator widths must be positive"));
        }
        Ok(())
    }
}

/// Layout of the discriminator: 3×3 convolutions where the listed stride-2
/// layers carry no batchnorm or activation and every other convolution is
/// followed by batchnorm + leaky ReLU; a final fully-connected layer emits
/// `num_classes` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_channels: usize,
    pub widths: Vec<usize>,
    /// 1-based positions of the stride-2 convolutions.
    pub stride2_layers: Vec<usize>,
    /// 1-based positions of the conv-comparison layers.
    pub comparison_layers: Vec<usize>,
    pub num_classes: usize,
    /// Input height and width.
    pub input_size: (usize, usize),
    pub leaky_slope: f64,
    pub alpha: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            input_channels: 9,
            widths: vec![
                16, 16, 32, 32, 32, 64, 64, 64, 96, 96, 96, 128, 128, 128, 128,
            ],
            stride2_layers: vec![3, 6, 9, 12],
            comparison_layers: vec![5, 10, 14],
            num_classes: 21,
            input_size: (64, 64),
            leaky_slope: 0.2,
            alpha: 0.8,
        }
    }
}

impl DiscriminatorSpec {
    pub fn downsampling(&self) -> usize {
        1 << self.stride2_layers.len()
    }

    /// Spatial size entering the fully-connected layer.
    pub fn final_size(&self) -> (usize, usize) {
        let f = self.downsampling();
        (self.input_size.0 / f, self.input_size.1 / f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("discriminator needs at least 2 classes"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("discriminator widths must be positive"));
        }
        let depth = self.widths.len();
        for &p in self.stride2_layers.iter().chain(&self.comparison_layers) {
            if p == 0 || p > depth {
                return Err(Error::invalid(format!(
                    "layer position {p} outside 1..={depth}"
                )));
            }
        }
        if let Some(p) = self
            .comparison_layers
            .iter()
            .find(|p| self.stride2_layers.contains(p))
        {
            return Err(Error::invalid(format!(
                "layer {p} cannot be both stride-2 and conv-comparison"
            )));
        }
        let f = self.downsampling();
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::invalid(format!(
                "input size {h}×{w} is not divisible by {f}"
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Ordered layers plus their parameters and step-local caches.
#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    role: Role,
    layers: Vec<Layer<T>>,
    input_channels: usize,
    mode: Mode,
    frozen: bool,
}

impl<T: Scalar> Network<T> {
    pub fn new(role: Role, input_channels: usize, layers: Vec<Layer<T>>) -> Self {
        Self {
            role,
            layers,
            input_channels,
            mode: Mode::Train,
            frozen: false,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// A frozen network back-propagates to its input but never accumulates
    /// parameter gradients and refuses SGD steps.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().c != self.input_channels {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {:?}",
                self.input_channels,
                x.shape()
            )));
        }
        let mode = self.mode;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Back-propagate the loss gradient at the output; returns the gradient at the input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let accumulate = !self.frozen;
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g, accumulate)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    /// Plain SGD over every parameter, then clears the gradients.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::invalid("sgd_step on a frozen network"));
        }
        crate::layers::check_lr(lr)?;
        let all_finite = self
            .layers
            .iter()
            .flat_map(|l| l.params())
            .all(|p| p.grad.all_finite());
        if !all_finite {
            return Err(Error::NonFinite("sgd_step gradient"));
        }
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                sgd_step(p.value.data_mut(), p.grad.data(), lr)?;
                p.zero_grad();
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.value.len())
            .sum()
    }

    /// Flattened copy of every parameter, in layer order.
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Flattened copy of every accumulated parameter gradient, in layer order.
    pub fn flat_grads(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut channels = self.input_channels;
        self.layers
            .iter()
            .map(|l| {
                let spec = l.spec(channels);
                channels = spec.channels_out;
                spec
            })
            .collect()
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| l.as_conv().is_some()).count()
    }

    /// Indices (into `layers`) of the conv-comparison layers.
    pub fn comparison_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.as_conv().is_some_and(|c| c.is_comparison()))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        for layer in &mut self.layers {
            if let Some(c) = layer.as_conv_mut() {
                c.set_alpha(alpha)?;
            }
        }
        Ok(())
    }

    pub fn clear_references(&mut self) {
        for layer in &mut self.layers {
            if let Some(c) = layer.as_conv_mut() {
                c.clear_reference();
            }
        }
    }

    /// Forward `ground_truth` and store every comparison layer's activation as
    /// its reference `C_g`. Running statistics are never updated by this pass.
    pub fn record_references(&mut self, ground_truth: &Tensor<T>) -> Result<()> {
        let saved = self.mode;
        if saved == Mode::Train {
            self.mode = Mode::BatchStats;
        }
        let result = self.forward(ground_truth);
        self.mode = saved;
        result?;
        for idx in self.comparison_indices() {
            let conv = self.layers[idx].as_conv_mut().expect("comparison index");
            let out = conv.last_output().expect("forward ran").clone();
            conv.record_reference(out)?;
        }
        Ok(())
    }

    /// Use the activations of the most recent forward pass as references:
    /// batch item `i` is compared against item `pairing[i]` of the same pass.
    pub fn record_paired_references(&mut self, pairing: &[usize]) -> Result<()> {
        for idx in self.comparison_indices() {
            let conv = self.layers[idx].as_conv_mut().expect("comparison index");
            let out = conv
                .last_output()
                .ok_or_else(|| Error::invalid("record_paired_references before forward"))?;
            if pairing.len() != out.shape().n {
                return Err(Error::shape(format!(
                    "pairing of {} for batch {}",
                    pairing.len(),
                    out.shape().n
                )));
            }
            let reference = out.select(pairing)?;
            conv.record_reference(reference)?;
        }
        Ok(())
    }

    /// `E_c` of each comparison layer from its last backward with a reference.
    pub fn comparison_losses(&self) -> Vec<Option<f64>> {
        self.comparison_indices()
            .into_iter()
            .map(|i| {
                self.layers[i]
                    .as_conv()
                    .and_then(|c| c.comparison())
                    .and_then(|cmp| cmp.last_loss())
            })
            .collect()
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.specs().iter().filter(|s| s.kind == kind).count()
    }
}

pub fn build_generator<T: Scalar>(spec: &GeneratorSpec, rng: &mut Prng) -> Result<Network<T>> {
    spec.validate()?;
    let mut layers = Vec::new();
    let mut channels = spec.input_channels;
    for &width in &spec.hidden_widths {
        layers.push(Layer::Conv(Conv2d::new(channels, width, KERNEL, 1, rng)?));
        layers.push(Layer::BatchNorm(BatchNorm2d::new(width)));
        layers.push(Layer::Relu(Relu::new()));
        channels = width;
    }
    layers.push(Layer::Conv(Conv2d::new(
        channels,
        spec.map_dims,
        KERNEL,
        1,
        rng,
    )?));
    layers.push(Layer::Sigmoid(Sigmoid::new()));
    Ok(Network::new(Role::Generator, spec.input_channels, layers))
}

pub fn build_discriminator<T: Scalar>(
    spec: &DiscriminatorSpec,
    rng: &mut Prng,
) -> Result<Network<T>> {
    spec.validate()?;
    let mut layers = Vec::new();
    let mut channels = spec.input_channels;
    for (i, &width) in spec.widths.iter().enumerate() {
        let position = i + 1;
        if spec.stride2_layers.contains(&position) {
            layers.push(Layer::Conv(Conv2d::new(channels, width, KERNEL, 2, rng)?));
        } else {
            let mut conv = Conv2d::new(channels, width, KERNEL, 1, rng)?;
            if spec.comparison_layers.contains(&position) {
                conv = conv.with_comparison(spec.alpha)?;
            }
            layers.push(Layer::Conv(conv));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(width)));
            layers.push(Layer::LeakyRelu(LeakyRelu::new(T::lit(spec.leaky_slope))));
        }
        channels = width;
    }
    let (fh, fw) = spec.final_size();
    layers.push(Layer::Linear(Linear::new(
        channels * fh * fw,
        spec.num_classes,
        rng,
    )));
    Ok(Network::new(
        Role::Discriminator,
        spec.input_channels,
        layers,
    ))
}

/// Default generator for `input_channels` → `map_dims` maps.
pub fn build_g_network<T: Scalar>(
    input_channels: usize,
    map_dims: usize,
    rng: &mut Prng,
) -> Result<Network<T>> {
    build_generator(
        &GeneratorSpec {
            input_channels,
            map_dims,
            ..GeneratorSpec::default()
        },
        rng,
    )
}

/// Default discriminator over `input_channels` maps of `input_size`.
pub fn build_d_network<T: Scalar>(
    input_channels: usize,
    num_classes: usize,
    input_size: (usize, usize),
    rng: &mut Prng,
) -> Result<Network<T>> {
    build_discriminator(
        &DiscriminatorSpec {
            input_channels,
            num_classes,
            input_size,
            ..DiscriminatorSpec::default()
        },
        rng,
    )
}

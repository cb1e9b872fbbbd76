//! Network layers and the multi-step forward pass.
//!
//! The stack is fixed: a convolutional spike-encoding layer fed with word
//! embeddings, `n_spiking_conv` spiking convolutional layers, and a
//! non-spiking per-token linear decoder. The same embeddings drive the
//! encoder at every timestep; the decoder's softmax outputs are summed over
//! the `T` steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{lif_step_with, Centering, Firing, NeuronParams, NeuronState, SpikeMode};
use crate::real::Real;
use crate::tensor::{affine_tokens, conv1d, softmax_last, ConvGeometry, Tensor};

/// Number of output classes: O, B, I.
pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub time_steps: usize,
    pub spike_mode: SpikeMode,
    pub channels: usize,
    pub kernel: usize,
    pub n_spiking_conv: usize,
    pub v_thr: f64,
    pub decay_init: f64,
    pub alpha: f64,
    pub embedding_dim: usize,
    pub surrogate_centering: Centering,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            time_steps: 6,
            spike_mode: SpikeMode::Ternary,
            channels: 128,
            kernel: 5,
            n_spiking_conv: 3,
            v_thr: 0.1,
            decay_init: 0.1,
            alpha: 2.0,
            embedding_dim: 300,
            surrogate_centering: Centering::Zero,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be ≥ 1".into()));
        }
        if !(1..=4).contains(&self.n_spiking_conv) {
            return Err(Error::Config(format!(
                "n_spiking_conv must be in 1..=4, got {}",
                self.n_spiking_conv
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel must be odd so the sequence length is preserved, got {}",
                self.kernel
            )));
        }
        if self.channels == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("channels and embedding_dim must be ≥ 1".into()));
        }
        if !(self.v_thr > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::Config("v_thr and alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::same(self.kernel)
    }

    /// Number of spiking layers (encoder included).
    pub fn spiking_layers(&self) -> usize {
        1 + self.n_spiking_conv
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Encoding,
    SpikingConv,
    Output,
}

/// Parameters of one layer. `kernels` is `Cout×Cin×K` for the convolutional
/// kinds and `3×C` for the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub kind: LayerKind,
    pub kernels: Tensor<F>,
    pub bias: Tensor<F>,
    pub neuron: Option<NeuronParams<F>>,
}

impl<F: Real> LayerParams<F> {
    fn neuron(&self) -> Result<&NeuronParams<F>> {
        self.neuron
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{:?} layer has no neurons", self.kind)))
    }
}

/// Which kind of trainable quantity a parameter is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Kernels,
    Bias,
    CurrentDecay,
    VoltageDecay,
    PositiveWeight,
    NegativeWeight,
}

impl ParamClass {
    pub const ALL: [ParamClass; 6] = [
        ParamClass::Kernels,
        ParamClass::Bias,
        ParamClass::CurrentDecay,
        ParamClass::VoltageDecay,
        ParamClass::PositiveWeight,
        ParamClass::NegativeWeight,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            ParamClass::Kernels => "kernels",
            ParamClass::Bias => "bias",
            ParamClass::CurrentDecay => "w_scd",
            ParamClass::VoltageDecay => "w_vd",
            ParamClass::PositiveWeight => "w_fv_pos",
            ParamClass::NegativeWeight => "w_fv_neg",
        }
    }
}

/// Classes trained for a layer of the given kind, in canonical order.
pub(crate) fn classes_for(kind: LayerKind) -> &'static [ParamClass] {
    match kind {
        LayerKind::Encoding => &ParamClass::ALL[..4],
        LayerKind::SpikingConv => &ParamClass::ALL,
        LayerKind::Output => &ParamClass::ALL[..2],
    }
}

pub fn param_name(layer: usize, class: ParamClass) -> String {
    format!("layer{layer}.{}", class.suffix())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<F> {
    pub layers: Vec<LayerParams<F>>,
}

fn glorot<F: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::lit(rng.gen_range(-limit..=limit)))
}

impl<F: Real> Network<F> {
    /// Fan-balanced uniform kernels, zero biases, decays at `decay_init`,
    /// unit postsynaptic weights.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (c, k, e) = (cfg.channels, cfg.kernel, cfg.embedding_dim);
        let neuron = || NeuronParams::uniform(c, F::lit(cfg.decay_init), F::lit(cfg.v_thr));
        let mut layers = vec![LayerParams {
            kind: LayerKind::Encoding,
            kernels: glorot(rng, &[c, e, k], e * k, c * k),
            bias: Tensor::zeros(&[c]),
            neuron: Some(neuron()),
        }];
        for _ in 0..cfg.n_spiking_conv {
            layers.push(LayerParams {
                kind: LayerKind::SpikingConv,
                kernels: glorot(rng, &[c, c, k], c * k, c * k),
                bias: Tensor::zeros(&[c]),
                neuron: Some(neuron()),
            });
        }
        layers.push(LayerParams {
            kind: LayerKind::Output,
            kernels: glorot(rng, &[NUM_CLASSES, c], c, NUM_CLASSES),
            bias: Tensor::zeros(&[NUM_CLASSES]),
            neuron: None,
        });
        Ok(Network { layers })
    }

    /// Checks layer order and shapes against `cfg`.
    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        cfg.validate()?;
        let n = self.layers.len();
        if n != cfg.n_spiking_conv + 2 {
            return Err(Error::Config(format!(
                "network has {n} layers, config implies {}",
                cfg.n_spiking_conv + 2
            )));
        }
        let (c, k, e) = (cfg.channels, cfg.kernel, cfg.embedding_dim);
        for (i, layer) in self.layers.iter().enumerate() {
            let (kind, kshape): (LayerKind, Vec<usize>) = if i == 0 {
                (LayerKind::Encoding, vec![c, e, k])
            } else if i == n - 1 {
                (LayerKind::Output, vec![NUM_CLASSES, c])
            } else {
                (LayerKind::SpikingConv, vec![c, c, k])
            };
            if layer.kind != kind || layer.kernels.shape() != &kshape[..] {
                return Err(Error::Config(format!(
                    "layer {i}: expected {kind:?} with kernels {kshape:?}, found {:?} with {:?}",
                    layer.kind,
                    layer.kernels.shape()
                )));
            }
            if layer.bias.shape() != [kshape[0]] {
                return Err(Error::Dimension(format!("layer {i}: bias shape")));
            }
            match (&layer.neuron, kind) {
                (None, LayerKind::Output) => {}
                (Some(p), LayerKind::Encoding | LayerKind::SpikingConv) => {
                    p.validate()?;
                    if p.channels() != c {
                        return Err(Error::Dimension(format!("layer {i}: decay shape")));
                    }
                }
                _ => return Err(Error::Config(format!("layer {i}: neuron parameters"))),
            }
        }
        Ok(())
    }

    pub fn spiking(&self) -> &[LayerParams<F>] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output(&self) -> &LayerParams<F> {
        self.layers.last().expect("network has layers")
    }

    /// Trainable parameters as `(name, class, values)` in canonical order.
    pub fn named_params(&self) -> Vec<(String, ParamClass, &[F])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for &class in classes_for(layer.kind) {
                let values: &[F] = match class {
                    ParamClass::Kernels => layer.kernels.data(),
                    ParamClass::Bias => layer.bias.data(),
                    ParamClass::CurrentDecay => layer.neuron.as_ref().unwrap().w_scd.data(),
                    ParamClass::VoltageDecay => layer.neuron.as_ref().unwrap().w_vd.data(),
                    ParamClass::PositiveWeight => {
                        std::slice::from_ref(&layer.neuron.as_ref().unwrap().w_fv_pos)
                    }
                    ParamClass::NegativeWeight => {
                        std::slice::from_ref(&layer.neuron.as_ref().unwrap().w_fv_neg)
                    }
                };
                out.push((param_name(i, class), class, values));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, ParamClass, &mut [F])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind;
            let LayerParams {
                kernels,
                bias,
                neuron,
                ..
            } = layer;
            out.push((param_name(i, ParamClass::Kernels), ParamClass::Kernels, kernels.data_mut()));
            out.push((param_name(i, ParamClass::Bias), ParamClass::Bias, bias.data_mut()));
            if let Some(p) = neuron {
                let NeuronParams {
                    w_scd,
                    w_vd,
                    w_fv_pos,
                    w_fv_neg,
                    ..
                } = p;
                out.push((param_name(i, ParamClass::CurrentDecay), ParamClass::CurrentDecay, w_scd.data_mut()));
                out.push((param_name(i, ParamClass::VoltageDecay), ParamClass::VoltageDecay, w_vd.data_mut()));
                if kind == LayerKind::SpikingConv {
                    out.push((
                        param_name(i, ParamClass::PositiveWeight),
                        ParamClass::PositiveWeight,
                        std::slice::from_mut(w_fv_pos),
                    ));
                    out.push((
                        param_name(i, ParamClass::NegativeWeight),
                        ParamClass::NegativeWeight,
                        std::slice::from_mut(w_fv_neg),
                    ));
                }
            }
        }
        out
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    kind: l.kind,
                    kernels: l.kernels.cast(),
                    bias: l.bias.cast(),
                    neuron: l.neuron.as_ref().map(|p| NeuronParams {
                        w_scd: p.w_scd.cast(),
                        w_vd: p.w_vd.cast(),
                        w_fv_pos: G::lit(p.w_fv_pos.to_f64_lossy()),
                        w_fv_neg: G::lit(p.w_fv_neg.to_f64_lossy()),
                        v_thr: G::lit(p.v_thr.to_f64_lossy()),
                    }),
                })
                .collect(),
        }
    }
}

/// Everything one spiking layer produced at one timestep.
#[derive(Clone, Debug)]
pub struct StepRecord<F> {
    pub spk: Tensor<F>,
    pub isc: Tensor<F>,
    pub v: Tensor<F>,
    /// Bias-free convolution of the positive (or, in binary mode, all)
    /// presynaptic spikes. Absent for the encoding layer.
    pub drive_pos: Option<Tensor<F>>,
    /// Bias-free convolution of the negative presynaptic spikes (ternary).
    pub drive_neg: Option<Tensor<F>>,
}

/// Cached forward state needed by the backward pass.
#[derive(Clone, Debug)]
pub struct StateTrace<F> {
    /// Embeddings with masked rows zeroed, `B×R×E`.
    pub input: Tensor<F>,
    /// One entry per token, `B·R` long.
    pub mask: Vec<F>,
    /// `layers[l][t]` for spiking layer `l` and step `t` (0-based).
    pub layers: Vec<Vec<StepRecord<F>>>,
    /// Per-step decoder softmax, each `B×R×3`.
    pub probs: Vec<Tensor<F>>,
    pub mode: SpikeMode,
    pub firing: Firing,
}

impl<F: Real> StateTrace<F> {
    pub fn time_steps(&self) -> usize {
        self.probs.len()
    }

    /// Spike tensors of spiking layer `l`, one per timestep.
    pub fn spikes(&self, l: usize) -> impl Iterator<Item = &Tensor<F>> {
        self.layers[l].iter().map(|r| &r.spk)
    }
}

/// Splits a spike tensor into positive and negative parts.
pub fn split_polarity<F: Real>(spikes: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
    let pos = spikes.map(|s| if s > F::zero() { s } else { F::zero() });
    let neg = spikes.map(|s| if s < F::zero() { s } else { F::zero() });
    (pos, neg)
}

/// Postsynaptic drive of a spiking convolutional layer. Returns
/// `(drive, conv(pos), conv(neg))`; the bias is added once, unweighted.
fn conv_drive<F: Real>(
    in_spikes: &Tensor<F>,
    layer: &LayerParams<F>,
    mode: SpikeMode,
    geom: ConvGeometry,
) -> Result<(Tensor<F>, Tensor<F>, Option<Tensor<F>>)> {
    let p = layer.neuron()?;
    let with_bias = |t: &Tensor<F>| -> Tensor<F> {
        let c = layer.bias.len();
        Tensor::from_fn(t.shape(), |i| t.data()[i] + layer.bias.data()[i % c])
    };
    match mode {
        SpikeMode::Binary => {
            let pos = conv1d(in_spikes, &layer.kernels, None, geom)?;
            let drive = with_bias(&pos.scale(p.w_fv_pos));
            Ok((drive, pos, None))
        }
        SpikeMode::Ternary => {
            let (sp, sn) = split_polarity(in_spikes);
            let pos = conv1d(&sp, &layer.kernels, None, geom)?;
            let neg = conv1d(&sn, &layer.kernels, None, geom)?;
            let drive = pos
                .zip_map(&neg, |a, b| p.w_fv_pos * a + p.w_fv_neg * b)?;
            Ok((with_bias(&drive), pos, Some(neg)))
        }
    }
}

fn check_alphabet<F: Real>(spikes: &Tensor<F>, mode: SpikeMode) -> Result<()> {
    let ok = |s: F| match mode {
        SpikeMode::Binary => s == F::zero() || s == F::one(),
        SpikeMode::Ternary => s == F::zero() || s == F::one() || s == -F::one(),
    };
    if let Some(bad) = spikes.data().iter().find(|&&s| !ok(s)) {
        return Err(Error::Validation(format!(
            "spike value {bad} outside the {} alphabet",
            mode.as_str()
        )));
    }
    Ok(())
}

/// One encoding-layer step: convolve the embeddings (bias included) and
/// run the LIF update on that drive.
pub fn encode_step<F: Real>(
    embeddings: &Tensor<F>,
    layer: &LayerParams<F>,
    prev: &NeuronState<F>,
    mode: SpikeMode,
) -> Result<(Tensor<F>, NeuronState<F>)> {
    if layer.kind != LayerKind::Encoding {
        return Err(Error::Config(format!("expected encoding layer, got {:?}", layer.kind)));
    }
    let geom = ConvGeometry::same(layer.kernels.dims3()?.2);
    let drive = conv1d(embeddings, &layer.kernels, Some(&layer.bias), geom)?;
    lif_step_with(prev, &drive, layer.neuron()?, mode, Firing::Hard, None)
}

/// One spiking-convolution step on step-function spikes.
pub fn spiking_conv_step<F: Real>(
    in_spikes: &Tensor<F>,
    layer: &LayerParams<F>,
    prev: &NeuronState<F>,
    mode: SpikeMode,
) -> Result<(Tensor<F>, NeuronState<F>)> {
    if layer.kind != LayerKind::SpikingConv {
        return Err(Error::Config(format!("expected spiking conv layer, got {:?}", layer.kind)));
    }
    check_alphabet(in_spikes, mode)?;
    let geom = ConvGeometry::same(layer.kernels.dims3()?.2);
    let (drive, _, _) = conv_drive(in_spikes, layer, mode, geom)?;
    lif_step_with(prev, &drive, layer.neuron()?, mode, Firing::Hard, None)
}

/// Per-token class logits from the last spiking layer's output.
pub fn output_logits<F: Real>(in_spikes: &Tensor<F>, layer: &LayerParams<F>) -> Result<Tensor<F>> {
    if layer.kind != LayerKind::Output {
        return Err(Error::Config(format!("expected output layer, got {:?}", layer.kind)));
    }
    affine_tokens(in_spikes, &layer.kernels, &layer.bias)
}

/// Runs the whole network for `cfg.time_steps` steps with step-function
/// spikes. Returns the per-token class scores summed over time (`B×R×3`)
/// and the trace needed for backpropagation.
pub fn forward<F: Real>(
    embeddings: &Tensor<F>,
    mask: Option<&Tensor<F>>,
    net: &Network<F>,
    cfg: &NetworkConfig,
) -> Result<(Tensor<F>, StateTrace<F>)> {
    forward_with(embeddings, mask, net, cfg, Firing::Hard)
}

pub fn forward_with<F: Real>(
    embeddings: &Tensor<F>,
    mask: Option<&Tensor<F>>,
    net: &Network<F>,
    cfg: &NetworkConfig,
    firing: Firing,
) -> Result<(Tensor<F>, StateTrace<F>)> {
    net.validate(cfg)?;
    let (b, r, e) = embeddings.dims3()?;
    if e != cfg.embedding_dim {
        return Err(Error::Dimension(format!(
            "embeddings have dim {e}, network expects {}",
            cfg.embedding_dim
        )));
    }
    let mask: Vec<F> = match mask {
        Some(m) => {
            if m.shape() != [b, r] {
                return Err(Error::Dimension(format!(
                    "mask shape {:?}, expected [{b}, {r}]",
                    m.shape()
                )));
            }
            m.data().to_vec()
        }
        None => vec![F::one(); b * r],
    };
    let input = Tensor::from_fn(embeddings.shape(), |i| {
        if mask[i / e] != F::zero() {
            embeddings.data()[i]
        } else {
            F::zero()
        }
    });

    let geom = cfg.geometry();
    let mode = cfg.spike_mode;
    let c = cfg.channels;
    let spiking = net.spiking();
    let state_shape = [b, r, c];

    // constant input, so the encoder drive is the same at every step
    let enc_drive = conv1d(&input, &spiking[0].kernels, Some(&spiking[0].bias), geom)?;

    let mut states: Vec<NeuronState<F>> = spiking.iter().map(|_| NeuronState::zeros(&state_shape)).collect();
    let mut records: Vec<Vec<StepRecord<F>>> = spiking.iter().map(|_| Vec::with_capacity(cfg.time_steps)).collect();
    let mut probs = Vec::with_capacity(cfg.time_steps);
    let mut prob_class = Tensor::zeros(&[b, r, NUM_CLASSES]);

    for _t in 0..cfg.time_steps {
        for (l, layer) in spiking.iter().enumerate() {
            let neuron = layer.neuron()?;
            let (drive, drive_pos, drive_neg) = if l == 0 {
                (enc_drive.clone(), None, None)
            } else {
                let prev_spikes = &states[l - 1].spk;
                if firing == Firing::Hard {
                    check_alphabet(prev_spikes, mode)?;
                }
                let (d, p, n) = conv_drive(prev_spikes, layer, mode, geom)?;
                (d, Some(p), n)
            };
            let (_, next) = lif_step_with(&states[l], &drive, neuron, mode, firing, Some(&mask))?;
            records[l].push(StepRecord {
                spk: next.spk.clone(),
                isc: next.isc.clone(),
                v: next.v.clone(),
                drive_pos,
                drive_neg,
            });
            states[l] = next;
        }
        let logits = output_logits(&states[spiking.len() - 1].spk, net.output())?;
        let p = softmax_last(&logits);
        prob_class.add_assign(&p)?;
        probs.push(p);
    }

    let trace = StateTrace {
        input,
        mask,
        layers: records,
        probs,
        mode,
        firing,
    };
    Ok((prob_class, trace))
}

/// Reads `centering`/`alpha` for a soft forward from the config.
pub fn soft_firing(cfg: &NetworkConfig) -> Firing {
    Firing::Soft {
        alpha: cfg.alpha,
        centering: cfg.surrogate_centering,
    }
}

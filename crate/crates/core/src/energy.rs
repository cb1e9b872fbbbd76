//! Analytic energy model: FLOP-costed dense layers, SOP-costed spiking
//! layers, and a per-operation sign cost for negative spikes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{forward, Network, NetworkConfig, NUM_CLASSES};
use crate::neuron::SpikeMode;
use crate::real::Real;
use crate::tensor::Tensor;

/// Joules per floating-point operation.
pub const FLOP_ENERGY: f64 = 12.5e-12;
/// Joules per synaptic operation.
pub const SOP_ENERGY: f64 = 77e-15;
/// Joules per sign operation.
pub const SIGN_ENERGY: f64 = 3.7e-12;

pub fn flops_conv(c: u64, d: u64, w_c: u64, h_c: u64, w_w: u64, h_w: u64) -> u64 {
    c * d * w_c * h_c * w_w * h_w * 2
}

pub fn flops_fc(u: u64, u_prev: u64) -> u64 {
    u * u_prev * 2
}

pub fn dnn_energy(flops: f64) -> f64 {
    FLOP_ENERGY * flops
}

/// Fraction of (live) neuron-steps with a non-zero spike. `mask` holds one
/// entry per position of the leading axes; masked positions are excluded.
pub fn firing_rate<F: Real>(steps: &[Tensor<F>], mask: Option<&[F]>) -> f64 {
    spike_fractions(steps, mask).0
}

/// `(any spike, negative spike)` fractions.
fn spike_fractions<F: Real>(steps: &[Tensor<F>], mask: Option<&[F]>) -> (f64, f64) {
    let (mut fired, mut negative, mut total) = (0usize, 0usize, 0usize);
    for s in steps {
        let c = s.shape().last().copied().unwrap_or(1).max(1);
        for (i, &v) in s.data().iter().enumerate() {
            if mask.is_some_and(|m| m[i / c] == F::zero()) {
                continue;
            }
            total += 1;
            if v != F::zero() {
                fired += 1;
            }
            if v < F::zero() {
                negative += 1;
            }
        }
    }
    if total == 0 {
        return (0.0, 0.0);
    }
    (fired as f64 / total as f64, negative as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerType {
    Conv,
    Fc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostModel {
    Snn,
    Dnn,
}

/// Per-sentence cost figures of one layer, averaged over the sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerProfile {
    pub name: String,
    pub kind: LayerType,
    pub flops: f64,
    /// Firing rate of the layer's own neurons; `None` for the decoder.
    pub gamma: Option<f64>,
    /// Zero for FLOP-costed layers.
    pub sops: f64,
    /// Synaptic operations triggered by negative spikes.
    pub neg_sops: f64,
    /// Joules, filled by [`layer_energy`] when the report is assembled.
    pub energy: f64,
}

/// Energy of a profiled layer under the given model.
pub fn layer_energy(profile: &LayerProfile, model: CostModel, mode: SpikeMode) -> f64 {
    match model {
        CostModel::Dnn => FLOP_ENERGY * profile.flops,
        CostModel::Snn if profile.sops == 0.0 => FLOP_ENERGY * profile.flops,
        CostModel::Snn => {
            let sign = match mode {
                SpikeMode::Binary => 0.0,
                SpikeMode::Ternary => SIGN_ENERGY * profile.neg_sops,
            };
            SOP_ENERGY * profile.sops + sign
        }
    }
}

fn sign_energy(profile: &LayerProfile, mode: SpikeMode) -> f64 {
    if mode == SpikeMode::Ternary && profile.sops > 0.0 {
        SIGN_ENERGY * profile.neg_sops
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub mode: SpikeMode,
    pub time_steps: usize,
    pub sentences: usize,
    pub layers: Vec<LayerProfile>,
    pub total_flops: f64,
    pub total_sops: f64,
    /// Joules.
    pub total_energy: f64,
    /// Joules for the same stack run as a conventional network.
    pub dnn_energy: f64,
}

pub const REPORT_HEADER: &str = "name\tkind\tflops\tgamma\tsops\tenergy_mJ\tneg_sops\tsign_mJ";

impl EnergyReport {
    fn assemble(mode: SpikeMode, time_steps: usize, sentences: usize, mut layers: Vec<LayerProfile>) -> Self {
        for l in &mut layers {
            l.energy = layer_energy(l, CostModel::Snn, mode);
        }
        EnergyReport {
            mode,
            time_steps,
            sentences,
            total_flops: layers.iter().filter(|l| l.sops == 0.0).map(|l| l.flops).sum(),
            total_sops: layers.iter().map(|l| l.sops).sum(),
            total_energy: layers.iter().map(|l| l.energy).sum(),
            dnn_energy: layers.iter().map(|l| layer_energy(l, CostModel::Dnn, mode)).sum(),
            layers,
        }
    }

    /// Tab-separated rows plus a `TOTAL` row.
    pub fn render(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        let kind = |k: LayerType| match k {
            LayerType::Conv => "conv",
            LayerType::Fc => "fc",
        };
        for l in &self.layers {
            let gamma = l.gamma.map_or("-".to_string(), |g| format!("{g:.6}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{:.1}\t{gamma}\t{:.1}\t{:.9}\t{:.1}\t{:.9}",
                l.name,
                kind(l.kind),
                l.flops,
                l.sops,
                l.energy * 1e3,
                l.neg_sops,
                sign_energy(l, self.mode) * 1e3
            );
        }
        let sign_total: f64 = self.layers.iter().map(|l| sign_energy(l, self.mode)).sum();
        let neg_total: f64 = self.layers.iter().map(|l| l.neg_sops).sum();
        let _ = writeln!(
            out,
            "TOTAL\t-\t{:.1}\t-\t{:.1}\t{:.9}\t{neg_total:.1}\t{:.9}",
            self.total_flops,
            self.total_sops,
            self.total_energy * 1e3,
            sign_total * 1e3
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the network on a sample batch, measures firing rates and assembles
/// per-sentence costs.
///
/// The encoder sees a constant input, so its convolution is costed once.
/// Each spiking convolution costs `T·γ·FLOPs` synaptic operations, with `γ`
/// the firing rate of the layer feeding it. The decoder runs densely at
/// every step.
pub fn profile_network<F: Real>(
    net: &Network<F>,
    embeddings: &Tensor<F>,
    mask: &Tensor<F>,
    cfg: &NetworkConfig,
) -> Result<EnergyReport> {
    let (b, _, e) = embeddings.dims3()?;
    let (_, trace) = forward(embeddings, Some(mask), net, cfg)?;
    let tokens = trace.mask.iter().filter(|&&m| m != F::zero()).count();
    if b == 0 || tokens == 0 {
        return Err(Error::Validation("energy profile needs at least one token".into()));
    }
    let sentences = b;
    let mean_len = tokens as f64 / sentences as f64;
    let (c, k, t) = (cfg.channels as u64, cfg.kernel as u64, cfg.time_steps as f64);
    let per_token_conv = |cin: u64| flops_conv(c, cin, 1, 1, k, 1) as f64;

    let rates: Vec<(f64, f64)> = trace
        .layers
        .iter()
        .map(|steps| {
            let s: Vec<Tensor<F>> = steps.iter().map(|r| r.spk.clone()).collect();
            spike_fractions(&s, Some(&trace.mask))
        })
        .collect();

    let mut layers = vec![LayerProfile {
        name: "encoding".into(),
        kind: LayerType::Conv,
        flops: per_token_conv(e as u64) * mean_len,
        gamma: Some(rates[0].0),
        sops: 0.0,
        neg_sops: 0.0,
        energy: 0.0,
    }];
    for l in 1..trace.layers.len() {
        let flops = per_token_conv(c) * mean_len;
        let (g_in, g_neg) = rates[l - 1];
        layers.push(LayerProfile {
            name: format!("conv{l}"),
            kind: LayerType::Conv,
            flops,
            gamma: Some(rates[l].0),
            sops: t * g_in * flops,
            neg_sops: t * g_neg * flops,
            energy: 0.0,
        });
    }
    layers.push(LayerProfile {
        name: "output".into(),
        kind: LayerType::Fc,
        flops: t * flops_fc(NUM_CLASSES as u64, c) as f64 * mean_len,
        gamma: None,
        sops: 0.0,
        neg_sops: 0.0,
        energy: 0.0,
    });
    Ok(EnergyReport::assemble(cfg.spike_mode, cfg.time_steps, sentences, layers))
}

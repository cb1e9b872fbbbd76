//! Central finite-difference validation of the analytic gradients.
//!
//! The check runs in 64-bit precision with smooth arctangent spikes, whose
//! exact derivative is the surrogate, so the backward pass must match the
//! numerical derivative of the loss to within truncation error.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{forward_with, soft_firing, Network, NetworkConfig, ParamClass};
use crate::neuron::{Centering, SpikeMode};
use crate::tensor::Tensor;

use super::backward::{backward, BackwardOptions, Mutation};
use super::loss::cross_entropy;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that parameters whose
/// gradient is numerically zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_class: BTreeMap<ParamClass, f64>,
    /// Name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// The tiny network used by the check: one sentence of 3 tokens, 2-d
/// embeddings, 2 channels, 3 steps, one spiking conv layer.
pub fn tiny_config(mode: SpikeMode, centering: Centering) -> NetworkConfig {
    NetworkConfig {
        time_steps: 3,
        spike_mode: mode,
        channels: 2,
        kernel: 3,
        n_spiking_conv: 1,
        embedding_dim: 2,
        surrogate_centering: centering,
        ..NetworkConfig::default()
    }
}

/// Randomised network and batch. Decays and postsynaptic weights are
/// spread out so every term of the backward recursion is exercised.
pub fn tiny_problem(cfg: &NetworkConfig, seed: u64) -> Result<(Network<f64>, Tensor<f64>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::init(cfg, &mut rng)?;
    for layer in &mut net.layers {
        for b in layer.bias.data_mut() {
            *b = rng.gen_range(-0.3..0.3);
        }
        if let Some(p) = layer.neuron.as_mut() {
            for w in p.w_scd.data_mut().iter_mut().chain(p.w_vd.data_mut()) {
                *w = rng.gen_range(0.2..0.9);
            }
            p.w_fv_pos = rng.gen_range(0.5..1.5);
            p.w_fv_neg = rng.gen_range(0.5..1.5);
        }
    }
    let r = 3;
    let emb = Tensor::from_fn(&[1, r, cfg.embedding_dim], |_| rng.gen_range(-1.0..1.0));
    let labels = (0..r).map(|_| rng.gen_range(0..3)).collect();
    Ok((net, emb, labels))
}

fn soft_loss(net: &Network<f64>, emb: &Tensor<f64>, labels: &[usize], cfg: &NetworkConfig) -> Result<f64> {
    let (prob, trace) = forward_with(emb, None, net, cfg, soft_firing(cfg))?;
    cross_entropy(&prob, labels, &trace.mask)
}

/// Compares every analytic parameter gradient with central differences.
pub fn grad_check_with(cfg: &NetworkConfig, seed: u64, mutation: Mutation) -> Result<GradCheckReport> {
    let (net, emb, labels) = tiny_problem(cfg, seed)?;
    let (_, trace) = forward_with(&emb, None, &net, cfg, soft_firing(cfg))?;
    let opts = BackwardOptions {
        mutation,
        normalize_by_steps: false,
    };
    let analytic = backward(&trace, &labels, &net, cfg, opts)?.grads;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_class: BTreeMap::new(),
        worst: (String::new(), 0),
        checked: 0,
    };
    let mut probe = net.clone();
    for (p_idx, entry) in analytic.entries.iter().enumerate() {
        for i in 0..entry.values.len() {
            let original = net.named_params()[p_idx].2[i];
            let mut eval_at = |x: f64| -> Result<f64> {
                probe.named_params_mut()[p_idx].2[i] = x;
                soft_loss(&probe, &emb, &labels, cfg)
            };
            let hi = eval_at(original + FD_STEP)?;
            let lo = eval_at(original - FD_STEP)?;
            eval_at(original)?;
            let numeric = (hi - lo) / (2.0 * FD_STEP);
            let err = rel_error(entry.values[i], numeric);
            let slot = report.per_class.entry(entry.class).or_insert(0.0);
            *slot = slot.max(err);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = err;
                report.worst = (entry.name.clone(), i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

pub fn grad_check(cfg: &NetworkConfig, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(cfg, seed, Mutation::None)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODES: [SpikeMode; 2] = [SpikeMode::Binary, SpikeMode::Ternary];
    const CENTERINGS: [Centering; 2] = [Centering::Zero, Centering::Threshold];

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for mode in MODES {
            for centering in CENTERINGS {
                let cfg = tiny_config(mode, centering);
                let rep = grad_check(&cfg, 3).unwrap();
                assert!(
                    rep.max_rel_error < 1e-4,
                    "{mode:?}/{centering:?}: {} at {:?}",
                    rep.max_rel_error,
                    rep.worst
                );
            }
        }
    }

    #[test]
    fn every_class_is_checked() {
        let rep = grad_check(&tiny_config(SpikeMode::Ternary, Centering::Zero), 0).unwrap();
        assert_eq!(rep.per_class.len(), 6);
    }

    #[test]
    fn mutations_are_detected() {
        for mutation in [
            Mutation::IscFromNextVoltage,
            Mutation::DropResetFactor,
            Mutation::DropCurrentRecurrence,
            Mutation::DropPostsynapticWeight,
        ] {
            let cfg = tiny_config(SpikeMode::Ternary, Centering::Zero);
            let rep = grad_check_with(&cfg, 3, mutation).unwrap();
            assert!(rep.max_rel_error > 1e-2, "{mutation:?}: {}", rep.max_rel_error);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((rel_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }
}

//! Spatio-temporal backpropagation through the cached forward trace.
//!
//! Per spiking layer, walking time backwards with zero adjoints past `T`:
//!
//! ```text
//! ∂L/∂V_t   = G(V_t)·∂L/∂Spk_t + w_vd·(1 - |Spk_t|)·∂L/∂V_{t+1}
//! ∂L/∂Isc_t = ∂L/∂V_t + w_scd·∂L/∂Isc_{t+1}
//! ```
//!
//! `∂L/∂Isc_t` is the gradient of the postsynaptic drive, from which the
//! kernel, bias and postsynaptic-weight gradients and the gradient of the
//! presynaptic spikes follow. Decay gradients accumulate
//! `Isc_{t-1}·∂L/∂Isc_t` and `V_{t-1}·(1 - |Spk_{t-1}|)·∂L/∂V_t`.
//!
//! With step-function spikes the reset factor `(1 - |Spk|)` is a constant.
//! With soft spikes it is differentiable and its path is included, so the
//! result is the exact gradient of the soft forward pass.

use crate::error::{Error, Result};
use crate::layers::{classes_for, param_name, split_polarity, Network, NetworkConfig, ParamClass, StateTrace, NUM_CLASSES};
use crate::neuron::{spike_slope, Firing, SpikeMode};
use crate::real::Real;
use crate::tensor::{conv1d_input_grad, conv1d_kernel_grad_acc, Tensor};

use super::loss::loss_and_grad;

/// Deliberate corruptions of the backward pass, used to show the gradient
/// check is sensitive to each term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// `∂L/∂Isc_t = ∂L/∂V_{t+1} + w_scd·∂L/∂Isc_{t+1}`.
    IscFromNextVoltage,
    /// Drops the `(1 - |Spk_t|)` factor from the voltage recursion.
    DropResetFactor,
    /// Drops `w_scd·∂L/∂Isc_{t+1}`.
    DropCurrentRecurrence,
    /// Backpropagates into presynaptic spikes without the postsynaptic
    /// weights.
    DropPostsynapticWeight,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BackwardOptions {
    pub mutation: Mutation,
    /// Divide the summed class scores by `T` inside the loss.
    pub normalize_by_steps: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry<F> {
    pub name: String,
    pub class: ParamClass,
    pub values: Vec<F>,
}

/// Parameter gradients, in the same order as [`Network::named_params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub entries: Vec<GradEntry<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, name: &str) -> Option<&[F]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.values.as_slice())
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.values.iter().all(|v| v.is_finite()))
    }

    pub fn zeros_like(net: &Network<F>) -> Self {
        Gradients {
            entries: net
                .named_params()
                .into_iter()
                .map(|(name, class, v)| GradEntry {
                    name,
                    class,
                    values: vec![F::zero(); v.len()],
                })
                .collect(),
        }
    }
}

struct LayerGrad<F> {
    kernels: Tensor<F>,
    bias: Vec<F>,
    w_scd: Vec<F>,
    w_vd: Vec<F>,
    w_fv_pos: F,
    w_fv_neg: F,
}

#[derive(Clone, Debug)]
pub struct BackwardOutput<F> {
    pub loss: F,
    pub grads: Gradients<F>,
}

/// Loss and parameter gradients for the batch the trace was produced from.
pub fn backward<F: Real>(
    trace: &StateTrace<F>,
    labels: &[usize],
    net: &Network<F>,
    cfg: &NetworkConfig,
    opts: BackwardOptions,
) -> Result<BackwardOutput<F>> {
    let t_steps = trace.time_steps();
    let n_spiking = trace.layers.len();
    if t_steps == 0
        || n_spiking != net.layers.len() - 1
        || trace.layers.iter().any(|l| l.len() != t_steps)
    {
        return Err(Error::Validation(
            "trace does not match the network it is differentiated against".into(),
        ));
    }
    let (b, r, _) = trace.input.dims3()?;
    let c = cfg.channels;
    if trace.layers[0][0].spk.shape() != [b, r, c] {
        return Err(Error::Validation("trace channel count differs from config".into()));
    }
    let n = b * r * c;
    let soft = matches!(trace.firing, Firing::Soft { .. });
    let mode = trace.mode;
    let alpha = F::lit(cfg.alpha);
    let centering = cfg.surrogate_centering;
    let geom = cfg.geometry();

    let mut prob = Tensor::zeros(&[b, r, NUM_CLASSES]);
    for p in &trace.probs {
        prob.add_assign(p)?;
    }
    let steps = opts.normalize_by_steps.then_some(t_steps);
    let (loss, g_prob) = loss_and_grad(&prob, labels, &trace.mask, steps)?;

    // decoder
    let out = net.output();
    let w_out = out.kernels.data();
    let mut g_w_out = vec![F::zero(); NUM_CLASSES * c];
    let mut g_b_out = vec![F::zero(); NUM_CLASSES];
    let mut g_spikes: Vec<Tensor<F>> = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let p = trace.probs[t].data();
        let s = trace.layers[n_spiking - 1][t].spk.data();
        let mut gs = vec![F::zero(); n];
        for tok in 0..b * r {
            let pt = &p[tok * NUM_CLASSES..(tok + 1) * NUM_CLASSES];
            let gp = &g_prob.data()[tok * NUM_CLASSES..(tok + 1) * NUM_CLASSES];
            let dot: F = pt.iter().zip(gp).map(|(&a, &g)| a * g).sum();
            let st = &s[tok * c..(tok + 1) * c];
            let gst = &mut gs[tok * c..(tok + 1) * c];
            for k in 0..NUM_CLASSES {
                let gl = pt[k] * (gp[k] - dot);
                if gl == F::zero() {
                    continue;
                }
                g_b_out[k] += gl;
                let wrow = &w_out[k * c..(k + 1) * c];
                let grow = &mut g_w_out[k * c..(k + 1) * c];
                for u in 0..c {
                    grow[u] += gl * st[u];
                    gst[u] += wrow[u] * gl;
                }
            }
        }
        g_spikes.push(Tensor::from_parts(vec![b, r, c], gs)?);
    }

    let mut layer_grads: Vec<LayerGrad<F>> = Vec::with_capacity(n_spiking);
    for l in (0..n_spiking).rev() {
        let layer = &net.spiking()[l];
        let p = layer.neuron.as_ref().expect("spiking layer");
        let scd = p.w_scd.data();
        let vd = p.w_vd.data();
        let mut lg = LayerGrad {
            kernels: Tensor::zeros(layer.kernels.shape()),
            bias: vec![F::zero(); c],
            w_scd: vec![F::zero(); c],
            w_vd: vec![F::zero(); c],
            w_fv_pos: F::zero(),
            w_fv_neg: F::zero(),
        };
        let mut a_v_next = vec![F::zero(); n];
        let mut a_i_next = vec![F::zero(); n];
        let mut g_lower: Vec<Tensor<F>> = vec![Tensor::zeros(&[b, r, c]); if l > 0 { t_steps } else { 0 }];

        for t in (0..t_steps).rev() {
            let rec = &trace.layers[l][t];
            let prev = (t > 0).then(|| &trace.layers[l][t - 1]);
            let (s, v, g_direct) = (rec.spk.data(), rec.v.data(), g_spikes[t].data());
            let mut a_i = vec![F::zero(); n];
            for j in 0..n {
                let ch = j % c;
                let live = trace.mask[j / c] != F::zero();
                let mut gs = g_direct[j];
                if soft && s[j] != F::zero() {
                    // v_{t+1} depends on spk_t through (1 - |spk_t|)
                    gs += a_v_next[j] * (-vd[ch] * v[j]) * s[j].signum();
                }
                let slope = if live {
                    spike_slope(v[j], mode, alpha, p.v_thr, centering)
                } else {
                    F::zero()
                };
                let keep = if opts.mutation == Mutation::DropResetFactor {
                    F::one()
                } else {
                    F::one() - s[j].abs()
                };
                let a_v = slope * gs + vd[ch] * keep * a_v_next[j];
                let carry = if opts.mutation == Mutation::DropCurrentRecurrence {
                    F::zero()
                } else {
                    scd[ch] * a_i_next[j]
                };
                let a_isc = if opts.mutation == Mutation::IscFromNextVoltage {
                    a_v_next[j] + carry
                } else {
                    a_v + carry
                };
                if let Some(prev) = prev {
                    lg.w_scd[ch] += prev.isc.data()[j] * a_isc;
                    lg.w_vd[ch] += prev.v.data()[j] * (F::one() - prev.spk.data()[j].abs()) * a_v;
                }
                lg.bias[ch] += a_isc;
                a_i[j] = a_isc;
                a_v_next[j] = a_v;
            }
            a_i_next.copy_from_slice(&a_i);
            let a_i = Tensor::from_parts(vec![b, r, c], a_i)?;

            if l == 0 {
                conv1d_kernel_grad_acc(&mut lg.kernels, &trace.input, &a_i, geom, F::one())?;
                continue;
            }
            let lower = &trace.layers[l - 1][t];
            let dot = |x: &Tensor<F>| -> F { x.data().iter().zip(a_i.data()).map(|(&d, &g)| d * g).sum() };
            let gx = conv1d_input_grad(&a_i, &layer.kernels, r, geom)?;
            let drop_w = opts.mutation == Mutation::DropPostsynapticWeight;
            match mode {
                SpikeMode::Binary => {
                    conv1d_kernel_grad_acc(&mut lg.kernels, &lower.spk, &a_i, geom, p.w_fv_pos)?;
                    lg.w_fv_pos += dot(rec.drive_pos.as_ref().expect("drive cached"));
                    g_lower[t] = if drop_w { gx } else { gx.scale(p.w_fv_pos) };
                }
                SpikeMode::Ternary => {
                    let (sp, sn) = split_polarity(&lower.spk);
                    let weighted = sp.zip_map(&sn, |a, b| p.w_fv_pos * a + p.w_fv_neg * b)?;
                    conv1d_kernel_grad_acc(&mut lg.kernels, &weighted, &a_i, geom, F::one())?;
                    lg.w_fv_pos += dot(rec.drive_pos.as_ref().expect("drive cached"));
                    lg.w_fv_neg += dot(rec.drive_neg.as_ref().expect("drive cached"));
                    // silent neurons take the weight of the polarity their
                    // membrane potential leans towards
                    let (ls, lv) = (lower.spk.data(), lower.v.data());
                    g_lower[t] = Tensor::from_fn(&[b, r, c], |j| {
                        let positive = ls[j] > F::zero() || (ls[j] == F::zero() && lv[j] >= F::zero());
                        let w = match (drop_w, positive) {
                            (true, _) => F::one(),
                            (false, true) => p.w_fv_pos,
                            (false, false) => p.w_fv_neg,
                        };
                        gx.data()[j] * w
                    });
                }
            }
        }
        if l > 0 {
            g_spikes = g_lower;
        }
        layer_grads.push(lg);
    }
    layer_grads.reverse();

    let mut entries = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        for &class in classes_for(layer.kind) {
            let values = if i == net.layers.len() - 1 {
                match class {
                    ParamClass::Kernels => g_w_out.clone(),
                    ParamClass::Bias => g_b_out.clone(),
                    _ => unreachable!("decoder has kernels and bias only"),
                }
            } else {
                let lg = &layer_grads[i];
                match class {
                    ParamClass::Kernels => lg.kernels.data().to_vec(),
                    ParamClass::Bias => lg.bias.clone(),
                    ParamClass::CurrentDecay => lg.w_scd.clone(),
                    ParamClass::VoltageDecay => lg.w_vd.clone(),
                    ParamClass::PositiveWeight => vec![lg.w_fv_pos],
                    ParamClass::NegativeWeight => vec![lg.w_fv_neg],
                }
            };
            entries.push(GradEntry {
                name: param_name(i, class),
                class,
                values,
            });
        }
    }
    Ok(BackwardOutput {
        loss,
        grads: Gradients { entries },
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::layers::{forward, forward_with, soft_firing};
    use crate::neuron::Centering;

    fn cfg(mode: SpikeMode, t: usize) -> NetworkConfig {
        NetworkConfig {
            time_steps: t,
            spike_mode: mode,
            channels: 3,
            kernel: 3,
            n_spiking_conv: 2,
            embedding_dim: 4,
            ..NetworkConfig::default()
        }
    }

    fn problem(cfg: &NetworkConfig, b: usize, r: usize, seed: u64) -> (Network<f64>, Tensor<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(cfg, &mut rng).unwrap();
        let emb = Tensor::from_fn(&[b, r, cfg.embedding_dim], |_| rng.gen_range(-1.5..1.5));
        let labels = (0..b * r).map(|_| rng.gen_range(0..3)).collect();
        (net, emb, labels)
    }

    fn grads(
        net: &Network<f64>,
        cfg: &NetworkConfig,
        emb: &Tensor<f64>,
        mask: Option<&Tensor<f64>>,
        labels: &[usize],
        normalize: bool,
    ) -> BackwardOutput<f64> {
        let (_, trace) = forward(emb, mask, net, cfg).unwrap();
        let opts = BackwardOptions {
            normalize_by_steps: normalize,
            ..BackwardOptions::default()
        };
        backward(&trace, labels, net, cfg, opts).unwrap()
    }

    #[test]
    fn scalar_network_matches_hand_derivation() {
        let cfg = NetworkConfig {
            time_steps: 2,
            spike_mode: SpikeMode::Binary,
            channels: 1,
            kernel: 1,
            n_spiking_conv: 1,
            embedding_dim: 1,
            ..NetworkConfig::default()
        };
        let mut net = Network::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (w0, b0, scd0, vd0) = (0.8, 0.05, 0.6, 0.7);
        let (w1, b1, scd1, vd1, wp1) = (1.3, -0.9, 0.5, 0.9, 0.75);
        let wo = [0.4, -0.9, 1.1];
        let bo = [0.1, 0.0, -0.3];
        let x = 0.5;
        let y = 1;
        {
            let l = &mut net.layers[0];
            l.kernels.data_mut()[0] = w0;
            l.bias.data_mut()[0] = b0;
            let p = l.neuron.as_mut().unwrap();
            p.w_scd.data_mut()[0] = scd0;
            p.w_vd.data_mut()[0] = vd0;
            let l = &mut net.layers[1];
            l.kernels.data_mut()[0] = w1;
            l.bias.data_mut()[0] = b1;
            let p = l.neuron.as_mut().unwrap();
            p.w_scd.data_mut()[0] = scd1;
            p.w_vd.data_mut()[0] = vd1;
            p.w_fv_pos = wp1;
            let l = &mut net.layers[2];
            l.kernels.data_mut().copy_from_slice(&wo);
            l.bias.data_mut().copy_from_slice(&bo);
        }
        let thr = 0.1;
        let h = |v: f64| if v >= thr { 1.0 } else { 0.0 };
        let g = |v: f64| 1.0 / (1.0 + (PI / 2.0 * 2.0 * v).powi(2));

        // forward
        let d0 = w0 * x + b0;
        let (i0, v0, s0) = {
            let i1 = d0;
            let v1 = d0;
            let s1 = h(v1);
            let i2 = scd0 * i1 + d0;
            let v2 = vd0 * v1 * (1.0 - s1) + i2;
            ([i1, i2], [v1, v2], [s1, h(v2)])
        };
        let u = [wp1 * w1 * s0[0] + b1, wp1 * w1 * s0[1] + b1];
        let i1_1 = u[0];
        let v1_1 = u[0];
        let s1_1 = h(v1_1);
        let i1_2 = scd1 * i1_1 + u[1];
        let v1_2 = vd1 * v1_1 * (1.0 - s1_1) + i1_2;
        let (i1, v1, s1) = ([i1_1, i1_2], [v1_1, v1_2], [s1_1, h(v1_2)]);
        assert_eq!((s0, s1), ([1.0, 1.0], [0.0, 1.0]), "fixture should exercise reset and leak");
        let p: Vec<[f64; 3]> = (0..2)
            .map(|t| {
                let z: Vec<f64> = (0..3).map(|k| (wo[k] * s1[t] + bo[k]).exp()).collect();
                let sum: f64 = z.iter().sum();
                [z[0] / sum, z[1] / sum, z[2] / sum]
            })
            .collect();
        let big_p = p[0][y] + p[1][y];

        // reverse
        let mut g_wo = [0.0; 3];
        let mut g_bo = [0.0; 3];
        let mut gs1 = [0.0; 2];
        for t in 0..2 {
            for k in 0..3 {
                let gl = (p[t][y] / big_p) * (p[t][k] - (k == y) as u8 as f64);
                g_bo[k] += gl;
                g_wo[k] += gl * s1[t];
                gs1[t] += wo[k] * gl;
            }
        }
        let av1_2 = g(v1[1]) * gs1[1];
        let ai1_2 = av1_2;
        let av1_1 = g(v1[0]) * gs1[0] + vd1 * (1.0 - s1[0]) * av1_2;
        let ai1_1 = av1_1 + scd1 * ai1_2;
        let ai1 = [ai1_1, ai1_2];
        let g_scd1 = i1[0] * ai1_2;
        let g_vd1 = v1[0] * (1.0 - s1[0]) * av1_2;
        let g_b1 = ai1_1 + ai1_2;
        let g_wp1: f64 = (0..2).map(|t| w1 * s0[t] * ai1[t]).sum();
        let g_w1: f64 = (0..2).map(|t| wp1 * s0[t] * ai1[t]).sum();
        let gs0 = [wp1 * w1 * ai1[0], wp1 * w1 * ai1[1]];
        let av0_2 = g(v0[1]) * gs0[1];
        let ai0_2 = av0_2;
        let av0_1 = g(v0[0]) * gs0[0] + vd0 * (1.0 - s0[0]) * av0_2;
        let ai0_1 = av0_1 + scd0 * ai0_2;
        let g_w0 = x * (ai0_1 + ai0_2);
        let g_b0 = ai0_1 + ai0_2;
        let g_scd0 = i0[0] * ai0_2;
        let g_vd0 = v0[0] * (1.0 - s0[0]) * av0_2;

        let emb = Tensor::new(vec![1, 1, 1], vec![x]).unwrap();
        let out = grads(&net, &cfg, &emb, None, &[y], false);
        assert!((out.loss + big_p.ln()).abs() < 1e-14);
        let expect: [(&str, Vec<f64>); 12] = [
            ("layer0.kernels", vec![g_w0]),
            ("layer0.bias", vec![g_b0]),
            ("layer0.w_scd", vec![g_scd0]),
            ("layer0.w_vd", vec![g_vd0]),
            ("layer1.kernels", vec![g_w1]),
            ("layer1.bias", vec![g_b1]),
            ("layer1.w_scd", vec![g_scd1]),
            ("layer1.w_vd", vec![g_vd1]),
            ("layer1.w_fv_pos", vec![g_wp1]),
            ("layer1.w_fv_neg", vec![0.0]),
            ("layer2.kernels", g_wo.to_vec()),
            ("layer2.bias", g_bo.to_vec()),
        ];
        assert_eq!(out.grads.entries.len(), expect.len());
        for (name, want) in expect {
            let got = out.grads.get(name).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{name}: {a} vs {b}");
            }
        }
        assert!(g_vd0 == 0.0 && g_vd1 != 0.0);
    }

    #[test]
    fn output_bias_gradient_is_softmax_minus_onehot_for_one_step() {
        let c = cfg(SpikeMode::Ternary, 1);
        let (net, emb, labels) = problem(&c, 1, 4, 8);
        let (_, trace) = forward(&emb, None, &net, &c).unwrap();
        let out = backward(&trace, &labels, &net, &c, BackwardOptions::default()).unwrap();
        let p = trace.probs[0].data();
        let mut want = [0.0; 3];
        for (tok, &y) in labels.iter().enumerate() {
            for k in 0..3 {
                want[k] += (p[tok * 3 + k] - (k == y) as u8 as f64) / 4.0;
            }
        }
        for (a, b) in out.grads.get("layer3.bias").unwrap().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_are_finite_and_shaped_like_parameters() {
        for mode in [SpikeMode::Binary, SpikeMode::Ternary] {
            let c = cfg(mode, 4);
            let (net, emb, labels) = problem(&c, 2, 6, 2);
            let out = grads(&net, &c, &emb, None, &labels, false);
            assert!(out.grads.all_finite());
            for (e, (name, class, p)) in out.grads.entries.iter().zip(net.named_params()) {
                assert_eq!((&e.name, e.class, e.values.len()), (&name, class, p.len()));
            }
        }
    }

    #[test]
    fn masked_tokens_do_not_influence_gradients() {
        let c = cfg(SpikeMode::Ternary, 3);
        let (net, emb, labels) = problem(&c, 2, 5, 4);
        let mask = Tensor::new(vec![2, 5], vec![1., 1., 1., 0., 0., 1., 1., 1., 1., 0.]).unwrap();
        let base = grads(&net, &c, &emb, Some(&mask), &labels, false);
        let mut other = emb.clone();
        for (i, v) in other.data_mut().iter_mut().enumerate() {
            if mask.data()[i / 4] == 0.0 {
                *v = 7.0 - *v;
            }
        }
        let mut other_labels = labels.clone();
        other_labels[3] = (labels[3] + 1) % 3;
        let perturbed = grads(&net, &c, &other, Some(&mask), &other_labels, false);
        assert_eq!(base.grads, perturbed.grads);
        assert_eq!(base.loss, perturbed.loss);
    }

    #[test]
    fn normalizing_by_steps_keeps_gradients() {
        for mode in [SpikeMode::Binary, SpikeMode::Ternary] {
            let c = cfg(mode, 6);
            let (net, emb, labels) = problem(&c, 2, 5, 6);
            let a = grads(&net, &c, &emb, None, &labels, false);
            let b = grads(&net, &c, &emb, None, &labels, true);
            assert!((b.loss - a.loss - 6f64.ln()).abs() < 1e-12);
            for (x, y) in a.grads.entries.iter().zip(&b.grads.entries) {
                for (p, q) in x.values.iter().zip(&y.values) {
                    assert!((p - q).abs() <= 1e-10, "{}", x.name);
                }
            }
        }
    }

    #[test]
    fn prefix_of_a_trace_matches_a_shorter_run() {
        let c3 = cfg(SpikeMode::Ternary, 3);
        let c1 = cfg(SpikeMode::Ternary, 1);
        let (net, emb, labels) = problem(&c3, 1, 6, 9);
        let (_, mut trace) = forward(&emb, None, &net, &c3).unwrap();
        for l in &mut trace.layers {
            l.truncate(1);
        }
        trace.probs.truncate(1);
        let prefix = backward(&trace, &labels, &net, &c1, BackwardOptions::default()).unwrap();
        let single = grads(&net, &c1, &emb, None, &labels, false);
        assert_eq!(prefix.grads, single.grads);
    }

    #[test]
    fn soft_mode_gradients_are_finite_for_both_centerings() {
        for centering in [Centering::Zero, Centering::Threshold] {
            let mut c = cfg(SpikeMode::Ternary, 3);
            c.surrogate_centering = centering;
            let (net, emb, labels) = problem(&c, 1, 4, 1);
            let (_, trace) = forward_with(&emb, None, &net, &c, soft_firing(&c)).unwrap();
            let out = backward(&trace, &labels, &net, &c, BackwardOptions::default()).unwrap();
            assert!(out.grads.all_finite());
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let c = cfg(SpikeMode::Binary, 2);
        let (net, emb, labels) = problem(&c, 1, 3, 0);
        let (_, mut trace) = forward(&emb, None, &net, &c).unwrap();
        let mut shallow = c.clone();
        shallow.n_spiking_conv = 1;
        let small = Network::init(&shallow, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            backward(&trace, &labels, &small, &shallow, BackwardOptions::default()),
            Err(Error::Validation(_))
        ));
        trace.layers[1].pop();
        assert!(matches!(
            backward(&trace, &labels, &net, &c, BackwardOptions::default()),
            Err(Error::Validation(_))
        ));
    }
}

//! Current-based leaky integrate-and-fire dynamics with binary or ternary
//! spikes, plus the arctangent surrogate derivative used in training.
//!
//! One step of a layer:
//!
//! ```text
//! isc_t = w_scd ⊙ isc_{t-1} + psp_t
//! v_t   = w_vd ⊙ v_{t-1} ⊙ (1 - |spk_{t-1}|) + isc_t
//! spk_t = H(v_t - v_thr)                       (binary)
//!       = +1 if v_t ≥ v_thr, -1 if v_t ≤ -v_thr, else 0   (ternary)
//! ```
//!
//! The reset is multiplicative and lands one step later: a neuron that fired
//! at `t-1` starts step `t` from `isc_t` alone.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeMode {
    Binary,
    Ternary,
}

impl SpikeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SpikeMode::Binary => "binary",
            SpikeMode::Ternary => "ternary",
        }
    }
}

impl std::str::FromStr for SpikeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(SpikeMode::Binary),
            "ternary" => Ok(SpikeMode::Ternary),
            other => Err(Error::Config(format!(
                "spike mode must be binary or ternary, got {other:?}"
            ))),
        }
    }
}

/// Where the surrogate derivative is centred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// `G(v)`: peak at zero membrane potential.
    Zero,
    /// `G(v - v_thr)` (binary) or `G(v - v_thr) + G(v + v_thr)` (ternary).
    Threshold,
}

impl Centering {
    pub fn as_str(self) -> &'static str {
        match self {
            Centering::Zero => "zero",
            Centering::Threshold => "threshold",
        }
    }
}

impl std::str::FromStr for Centering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Centering::Zero),
            "threshold" => Ok(Centering::Threshold),
            other => Err(Error::Config(format!(
                "surrogate centering must be zero or threshold, got {other:?}"
            ))),
        }
    }
}

/// How spikes are emitted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Firing {
    /// Step functions; the surrogate stands in for their derivative.
    Hard,
    /// Smooth arctangent spikes whose exact derivative is the surrogate.
    /// Only used to validate the backward pass by finite differences.
    Soft { alpha: f64, centering: Centering },
}

#[inline]
pub fn heaviside<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

#[inline]
pub fn ternary_threshold<F: Real>(v: F, v_thr: F) -> F {
    if v >= v_thr {
        F::one()
    } else if v <= -v_thr {
        -F::one()
    } else {
        F::zero()
    }
}

/// `Atan(v) = arctan(π/2·α·v)/π + 1/2`, a smooth step from 0 to 1.
#[inline]
pub fn atan_step<F: Real>(v: F, alpha: F) -> F {
    let pi = F::lit(PI);
    (pi / F::lit(2.0) * alpha * v).atan() / pi + F::lit(0.5)
}

/// Derivative of [`atan_step`]: `α/2 · 1/(1 + (π/2·α·v)²)`.
#[inline]
pub fn surrogate_grad<F: Real>(v: F, alpha: F) -> F {
    let z = F::lit(PI) / F::lit(2.0) * alpha * v;
    alpha / F::lit(2.0) / (F::one() + z * z)
}

pub fn surrogate_grad_ternary<F: Real>(v: F, alpha: F, v_thr: F, centering: Centering) -> F {
    match centering {
        Centering::Zero => surrogate_grad(v, alpha),
        Centering::Threshold => surrogate_grad(v - v_thr, alpha) + surrogate_grad(v + v_thr, alpha),
    }
}

/// Surrogate derivative d spk / d v for either spike alphabet.
#[inline]
pub fn spike_slope<F: Real>(v: F, mode: SpikeMode, alpha: F, v_thr: F, centering: Centering) -> F {
    match (mode, centering) {
        (_, Centering::Zero) => surrogate_grad(v, alpha),
        (SpikeMode::Binary, Centering::Threshold) => surrogate_grad(v - v_thr, alpha),
        (SpikeMode::Ternary, c) => surrogate_grad_ternary(v, alpha, v_thr, c),
    }
}

/// Smooth spike whose derivative is exactly [`spike_slope`].
#[inline]
pub fn soft_spike<F: Real>(v: F, mode: SpikeMode, alpha: F, v_thr: F, centering: Centering) -> F {
    let half = F::lit(0.5);
    match (mode, centering) {
        (SpikeMode::Binary, Centering::Zero) => atan_step(v, alpha),
        (SpikeMode::Binary, Centering::Threshold) => atan_step(v - v_thr, alpha),
        (SpikeMode::Ternary, Centering::Zero) => atan_step(v, alpha) - half,
        (SpikeMode::Ternary, Centering::Threshold) => {
            atan_step(v - v_thr, alpha) - atan_step(-v - v_thr, alpha)
        }
    }
}

#[inline]
pub fn fire<F: Real>(v: F, v_thr: F, mode: SpikeMode, firing: Firing) -> F {
    match firing {
        Firing::Hard => match mode {
            SpikeMode::Binary => heaviside(v - v_thr),
            SpikeMode::Ternary => ternary_threshold(v, v_thr),
        },
        Firing::Soft { alpha, centering } => soft_spike(v, mode, F::lit(alpha), v_thr, centering),
    }
}

/// Per-layer spike, synaptic current and membrane potential.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState<F> {
    pub spk: Tensor<F>,
    pub isc: Tensor<F>,
    pub v: Tensor<F>,
}

impl<F: Real> NeuronState<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        NeuronState {
            spk: Tensor::zeros(shape),
            isc: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }
}

/// Trainable neuron parameters of one layer.
///
/// The decay tensors hold one value per channel (the last axis of the
/// state), shared across batch and sequence positions. `w_fv_pos` and
/// `w_fv_neg` weight positive and negative presynaptic spikes; binary mode
/// and the encoding layer do not read `w_fv_neg`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronParams<F> {
    pub w_scd: Tensor<F>,
    pub w_vd: Tensor<F>,
    pub w_fv_pos: F,
    pub w_fv_neg: F,
    pub v_thr: F,
}

impl<F: Real> NeuronParams<F> {
    pub fn uniform(channels: usize, decay: F, v_thr: F) -> Self {
        NeuronParams {
            w_scd: Tensor::filled(&[channels], decay),
            w_vd: Tensor::filled(&[channels], decay),
            w_fv_pos: F::one(),
            w_fv_neg: F::one(),
            v_thr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_thr > F::zero()) {
            return Err(Error::Config(format!(
                "threshold must be positive, got {}",
                self.v_thr
            )));
        }
        if self.w_scd.shape() != self.w_vd.shape() || self.w_scd.shape().len() != 1 {
            return Err(Error::Dimension(
                "decay weights must be per-channel vectors of equal length".into(),
            ));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.w_scd.len()
    }
}

/// One update/fire step with step-function spikes.
pub fn lif_step<F: Real>(
    prev: &NeuronState<F>,
    input_psp: &Tensor<F>,
    params: &NeuronParams<F>,
    mode: SpikeMode,
) -> Result<(Tensor<F>, NeuronState<F>)> {
    lif_step_with(prev, input_psp, params, mode, Firing::Hard, None)
}

/// General step. `mask`, when given, holds one entry per position of the
/// leading axes (`state.len() / channels`); spikes at masked-out positions
/// are suppressed so those positions behave like zero padding downstream.
pub fn lif_step_with<F: Real>(
    prev: &NeuronState<F>,
    input_psp: &Tensor<F>,
    params: &NeuronParams<F>,
    mode: SpikeMode,
    firing: Firing,
    mask: Option<&[F]>,
) -> Result<(Tensor<F>, NeuronState<F>)> {
    prev.spk.expect_same_shape(input_psp)?;
    prev.isc.expect_same_shape(input_psp)?;
    prev.v.expect_same_shape(input_psp)?;
    let c = params.channels();
    let shape = input_psp.shape();
    if shape.last() != Some(&c) {
        return Err(Error::Dimension(format!(
            "state shape {shape:?} does not end in {c} channels"
        )));
    }
    if let Some(mask) = mask {
        if mask.len() * c != input_psp.len() {
            return Err(Error::Dimension("mask does not cover the state".into()));
        }
    }

    let n = input_psp.len();
    let (mut spk, mut isc, mut v) = (vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n]);
    let scd = params.w_scd.data();
    let vd = params.w_vd.data();
    for i in 0..n {
        let ch = i % c;
        let i_t = scd[ch] * prev.isc.data()[i] + input_psp.data()[i];
        let v_t = vd[ch] * prev.v.data()[i] * (F::one() - prev.spk.data()[i].abs()) + i_t;
        let live = mask.map_or(true, |m| m[i / c] != F::zero());
        spk[i] = if live {
            fire(v_t, params.v_thr, mode, firing)
        } else {
            F::zero()
        };
        isc[i] = i_t;
        v[i] = v_t;
    }
    let shape = shape.to_vec();
    let spikes = Tensor::from_parts(shape.clone(), spk)?;
    let next = NeuronState {
        spk: spikes.clone(),
        isc: Tensor::from_parts(shape.clone(), isc)?,
        v: Tensor::from_parts(shape, v)?,
    };
    Ok((spikes, next))
}

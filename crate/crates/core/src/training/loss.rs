use crate::error::{Error, Result};
use crate::layers::NUM_CLASSES;
use crate::real::Real;
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Token-averaged, then sentence-averaged negative log of the summed class
/// scores. Masked tokens contribute nothing; sentences with no live tokens
/// are not counted.
pub fn cross_entropy<F: Real>(prob_class: &Tensor<F>, labels: &[usize], mask: &[F]) -> Result<F> {
    Ok(loss_and_grad(prob_class, labels, mask, None)?.0)
}

/// Loss and `∂L/∂prob_class`. With `normalize_steps = Some(T)` the scores
/// are divided by `T` before the logarithm, which only shifts the loss by
/// `log T`.
pub fn loss_and_grad<F: Real>(
    prob_class: &Tensor<F>,
    labels: &[usize],
    mask: &[F],
    normalize_steps: Option<usize>,
) -> Result<(F, Tensor<F>)> {
    let (b, r, k) = prob_class.dims3()?;
    if k != NUM_CLASSES || labels.len() != b * r || mask.len() != b * r {
        return Err(Error::Dimension(format!(
            "loss: prob_class {:?}, {} labels, {} mask entries",
            prob_class.shape(),
            labels.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(Error::Validation(format!("label index {bad} out of range")));
    }
    let floor = F::lit(PROB_FLOOR);
    let scale = normalize_steps.map(|t| F::lit(t as f64));
    let live_per_sentence: Vec<usize> = mask
        .chunks(r)
        .map(|m| m.iter().filter(|&&x| x != F::zero()).count())
        .collect();
    let n = live_per_sentence.iter().filter(|&&c| c > 0).count();

    let p = prob_class.data();
    let mut grad = vec![F::zero(); p.len()];
    let mut total = F::zero();
    if n == 0 {
        return Ok((total, Tensor::from_parts(prob_class.shape().to_vec(), grad)?));
    }
    let n_f = F::lit(n as f64);
    for (i, &live) in live_per_sentence.iter().enumerate() {
        if live == 0 {
            continue;
        }
        let weight = F::one() / (n_f * F::lit(live as f64));
        let mut sentence = F::zero();
        for j in 0..r {
            let tok = i * r + j;
            if mask[tok] == F::zero() {
                continue;
            }
            let idx = tok * NUM_CLASSES + labels[tok];
            let raw = match scale {
                Some(s) => p[idx] / s,
                None => p[idx],
            };
            if !raw.is_finite() {
                return Err(Error::Numeric(format!("non-finite class score at token {tok}")));
            }
            sentence += -raw.max(floor).ln();
            if raw > floor {
                let g = -weight / raw;
                grad[idx] = match scale {
                    Some(s) => g / s,
                    None => g,
                };
            }
        }
        total += sentence / F::lit(live as f64);
    }
    Ok((total / n_f, Tensor::from_parts(prob_class.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::new(vec![1, rows.len(), 3], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero_loss() {
        let p = probs(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let l = cross_entropy(&p, &[0, 1, 2], &[1.0; 3]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn half_probability() {
        let p = probs(&[[0.5, 0.25, 0.25]]);
        let l = cross_entropy(&p, &[0], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn summed_scores_above_one_give_negative_terms() {
        let p = probs(&[[2.0, 0.5, 0.5]]);
        let l = cross_entropy(&p, &[0], &[1.0]).unwrap();
        assert!((l + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn masked_tokens_are_ignored() {
        let p = probs(&[[0.5, 0.25, 0.25], [1e-30, 0.5, 0.5]]);
        let (l, g) = loss_and_grad(&p, &[0, 0], &[1.0, 0.0], None).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g.data()[3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn averages_per_sentence_then_over_sentences() {
        // sentence 0: one token at p=0.5; sentence 1: two tokens at 0.25 and 1.0
        let p = Tensor::new(
            vec![2, 2, 3],
            vec![
                0.5, 0.0, 0.0, 9.0, 9.0, 9.0, //
                0.0, 0.25, 0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let l = cross_entropy(&p, &[0, 0, 1, 2], &[1.0, 0.0, 1.0, 1.0]).unwrap();
        let expected = 0.5 * (-(0.5f64).ln() + 0.5 * (-(0.25f64).ln() - 0.0));
        assert!((l - expected).abs() < 1e-15);
    }

    #[test]
    fn floor_guards_zero_probability() {
        let p = Tensor::new(vec![1, 1, 3], vec![0.0f32, 1.0, 0.0]).unwrap();
        let l = cross_entropy(&p, &[0], &[1.0]).unwrap();
        assert!(l.is_finite());
        assert!((l as f64 - 1e-12f64.ln().abs()).abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = probs(&[[0.3, 0.9, 1.8], [0.7, 0.2, 2.1]]);
        let labels = [2, 0];
        let (_, g) = loss_and_grad(&p, &labels, &[1.0, 1.0], None).unwrap();
        for i in 0..p.len() {
            let h = 1e-6;
            let mut hi = p.clone();
            hi.data_mut()[i] += h;
            let mut lo = p.clone();
            lo.data_mut()[i] -= h;
            let fd = (cross_entropy(&hi, &labels, &[1.0, 1.0]).unwrap()
                - cross_entropy(&lo, &labels, &[1.0, 1.0]).unwrap())
                / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn normalizing_by_steps_shifts_loss_only() {
        let p = probs(&[[0.3, 0.9, 1.8], [0.7, 0.2, 2.1]]);
        let (l, g) = loss_and_grad(&p, &[2, 0], &[1.0, 1.0], None).unwrap();
        let (ln, gn) = loss_and_grad(&p, &[2, 0], &[1.0, 1.0], Some(3)).unwrap();
        assert!((ln - (l + 3f64.ln())).abs() < 1e-12);
        for (a, b) in g.data().iter().zip(gn.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

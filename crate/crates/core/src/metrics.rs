//! BIO decoding and exact-match span precision/recall/F1.

use std::collections::HashSet;
use std::fmt;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::layers::NUM_CLASSES;
use crate::real::Real;
use crate::tensor::Tensor;

/// An aspect term: token indices `start..=end` of sentence `sentence`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

/// Per-token argmax, ties to the lowest class index. Returns one label
/// sequence per sentence holding only its unmasked positions.
pub fn decode_bio<F: Real>(prob_class: &Tensor<F>, mask: &Tensor<F>) -> Result<Vec<Vec<Label>>> {
    let (b, r, k) = prob_class.dims3()?;
    if k != NUM_CLASSES || mask.shape() != [b, r] {
        return Err(Error::Dimension(format!(
            "decode: scores {:?}, mask {:?}",
            prob_class.shape(),
            mask.shape()
        )));
    }
    let p = prob_class.data();
    Ok((0..b)
        .map(|i| {
            (0..r)
                .filter(|&j| mask.data()[i * r + j] != F::zero())
                .map(|j| {
                    let row = &p[(i * r + j) * k..(i * r + j + 1) * k];
                    let mut best = 0;
                    for c in 1..k {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    Label::from_index(best).expect("three classes")
                })
                .collect()
        })
        .collect())
}

/// Inclusive `(start, end)` spans. `B` opens a span, `I` extends it, `O`
/// closes it; an `I` with no open span starts one.
pub fn extract_spans(labels: &[Label]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        match l {
            Label::O => {
                if let Some(s) = open.take() {
                    spans.push((s, i - 1));
                }
            }
            Label::B => {
                if let Some(s) = open.replace(i) {
                    spans.push((s, i - 1));
                }
            }
            Label::I => {
                open.get_or_insert(i);
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, labels.len() - 1));
    }
    spans
}

/// Canonical BIO rendering of non-overlapping spans.
pub fn render_spans(len: usize, spans: &[(usize, usize)]) -> Vec<Label> {
    let mut out = vec![Label::O; len];
    for &(s, e) in spans {
        out[s] = Label::B;
        for l in &mut out[s + 1..=e] {
            *l = Label::I;
        }
    }
    out
}

pub fn corpus_spans<S: AsRef<[Label]>>(sentences: &[S]) -> Vec<Span> {
    sentences
        .iter()
        .enumerate()
        .flat_map(|(sentence, labels)| {
            extract_spans(labels.as_ref())
                .into_iter()
                .map(move |(start, end)| Span { sentence, start, end })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl fmt::Display for SpanScore {
    /// `P R F1 TP FP FN`, tab-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            self.precision, self.recall, self.f1, self.tp, self.fp, self.fn_
        )
    }
}

pub const REPORT_HEADER: &str = "precision\trecall\tf1\ttp\tfp\tfn";

/// Micro-averaged exact-match scores.
pub fn span_f1(gold: &[Span], pred: &[Span]) -> SpanScore {
    let g: HashSet<&Span> = gold.iter().collect();
    let p: HashSet<&Span> = pred.iter().collect();
    let tp = g.intersection(&p).count();
    let ratio = |num: usize, den: usize, other_empty: bool| {
        if den == 0 {
            if other_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, p.len(), g.is_empty());
    let recall = ratio(tp, g.len(), p.is_empty());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SpanScore {
        precision,
        recall,
        f1,
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
    }
}

/// Scores predicted label sequences against gold ones, sentence by sentence.
pub fn score_labels<G: AsRef<[Label]>, P: AsRef<[Label]>>(gold: &[G], pred: &[P]) -> Result<SpanScore> {
    if gold.len() != pred.len() {
        return Err(Error::Validation(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.as_ref().len() != p.as_ref().len() {
            return Err(Error::Validation(format!("sentence {i}: length differs")));
        }
    }
    Ok(span_f1(&corpus_spans(gold), &corpus_spans(pred)))
}

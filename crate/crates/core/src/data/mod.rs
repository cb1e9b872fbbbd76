//! Corpus and embedding ingestion, padding/masking into batches, and the
//! seeded train/validation split.
//!
//! Corpus files hold one `token<TAB>label` pair per line with a blank line
//! between sentences. Embedding files hold `token v1 … vE` per line with an
//! optional `count dim` header.

pub mod toy;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    O,
    B,
    I,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::O, Label::B, Label::I];

    pub fn index(self) -> usize {
        match self {
            Label::O => 0,
            Label::B => 1,
            Label::I => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::O => "O",
            Label::B => "B",
            Label::I => "I",
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "O" => Ok(Label::O),
            "B" => Ok(Label::B),
            "I" => Ok(Label::I),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub labels: Vec<Label>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// An `I` after `O` or at sentence start is an error.
    Strict,
    /// Such an `I` is rewritten to `B` and counted.
    Lenient,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<Example>,
    /// Number of `I` labels rewritten to `B` in lenient mode.
    pub repaired: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>, mode: LoadMode) -> Result<Corpus> {
    parse_corpus(&read(path.as_ref())?, mode)
}

pub fn parse_corpus(text: &str, mode: LoadMode) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut current = Example {
        tokens: Vec::new(),
        labels: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                corpus.examples.push(std::mem::replace(
                    &mut current,
                    Example {
                        tokens: Vec::new(),
                        labels: Vec::new(),
                    },
                ));
            }
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(token), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(line_no, format!("expected token<TAB>label, got {line:?}")));
        };
        if token.is_empty() {
            return Err(Error::parse(line_no, "empty token"));
        }
        let mut label: Label = label.trim().parse().map_err(|m| Error::parse(line_no, m))?;
        let follows_span = matches!(current.labels.last(), Some(Label::B | Label::I));
        if label == Label::I && !follows_span {
            match mode {
                LoadMode::Strict => {
                    return Err(Error::parse(line_no, "I label does not continue a span"));
                }
                LoadMode::Lenient => {
                    label = Label::B;
                    corpus.repaired += 1;
                }
            }
        }
        current.tokens.push(token.to_string());
        current.labels.push(label);
    }
    if !current.is_empty() {
        corpus.examples.push(current);
    }
    Ok(corpus)
}

pub fn render_corpus(examples: &[Example]) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, label) in ex.tokens.iter().zip(&ex.labels) {
            let _ = writeln!(out, "{tok}\t{}", label.as_str());
        }
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_corpus(examples)).map_err(|e| Error::io(path, e))
}

/// Unlabelled input: one token per line, blank line between sentences. Any
/// tab-separated trailing fields are ignored.
pub fn parse_tokens(text: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            continue;
        }
        current.push(line.split('\t').next().unwrap_or_default().to_string());
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    Ok(parse_tokens(&read(path.as_ref())?))
}

/// How a token was resolved against the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Exact,
    Lowercase,
    Oov,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Coverage {
    pub exact: usize,
    pub lowercase: usize,
    pub oov: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    unk: Vec<f32>,
    /// Later occurrences of already-seen tokens, which were skipped.
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn unk(&self) -> &[f32] {
        &self.unk
    }

    /// Case-sensitive match first, then the lowercased token, then unk.
    pub fn lookup(&self, token: &str) -> (&[f32], Lookup) {
        let row = |i: usize| &self.vectors[i * self.dim..(i + 1) * self.dim];
        if let Some(&i) = self.index.get(token) {
            return (row(i), Lookup::Exact);
        }
        if let Some(&i) = self.index.get(&token.to_lowercase()) {
            return (row(i), Lookup::Lowercase);
        }
        (&self.unk, Lookup::Oov)
    }

    pub fn coverage<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Coverage {
        let mut c = Coverage::default();
        for t in tokens {
            match self.lookup(t).1 {
                Lookup::Exact => c.exact += 1,
                Lookup::Lowercase => c.lowercase += 1,
                Lookup::Oov => c.oov += 1,
            }
        }
        c
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    parse_embeddings(&read(path.as_ref())?)
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut declared: Option<(usize, usize)> = None;
    let mut index = HashMap::new();
    let mut vectors: Vec<f32> = Vec::new();
    let mut duplicates = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 {
            if let (Ok(count), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                declared = Some((count, d));
                dim = Some(d);
                continue;
            }
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f32>().map_err(|_| Error::parse(line_no, format!("bad number {f:?}"))))
            .collect::<Result<Vec<f32>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(line_no, "non-finite embedding value"));
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(Error::parse(
                line_no,
                format!("vector has {} values, expected {d}", values.len()),
            ));
        }
        if index.contains_key(fields[0]) {
            duplicates += 1;
            continue;
        }
        index.insert(fields[0].to_string(), index.len());
        vectors.extend(values);
    }
    let dim = dim.ok_or_else(|| Error::parse(1, "embedding file has no vectors"))?;
    if index.is_empty() {
        return Err(Error::parse(1, "embedding file has no vectors"));
    }
    if let Some((count, _)) = declared {
        if count != index.len() + duplicates {
            return Err(Error::parse(
                1,
                format!("header declares {count} vectors, file has {}", index.len() + duplicates),
            ));
        }
    }
    let n = index.len();
    let mut sum = vec![0f64; dim];
    for row in vectors.chunks(dim) {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    let unk = sum.iter().map(|s| (s / n as f64) as f32).collect();
    Ok(EmbeddingTable {
        dim,
        index,
        vectors,
        unk,
        duplicates,
    })
}

/// A padded mini-batch. Padding rows have zero embeddings, label `O` and
/// mask 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B×R_max×E`.
    pub embeddings: Tensor<f32>,
    /// Class indices, `B·R_max`.
    pub labels: Vec<usize>,
    /// `B×R_max`.
    pub mask: Tensor<f32>,
    pub lengths: Vec<usize>,
    /// Position of each row's sentence in the source list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.mask.shape()[1]
    }
}

/// Builds one batch from the listed sentences.
pub fn make_batch(examples: &[Example], indices: &[usize], table: &EmbeddingTable) -> Result<Batch> {
    let sentences: Vec<(&[String], Option<&[Label]>)> = indices
        .iter()
        .map(|&i| (examples[i].tokens.as_slice(), Some(examples[i].labels.as_slice())))
        .collect();
    let mut batch = pack(&sentences, table)?;
    batch.indices = indices.to_vec();
    Ok(batch)
}

/// Builds one batch from unlabelled sentences; labels are all `O`.
pub fn make_token_batch(sentences: &[Vec<String>], table: &EmbeddingTable) -> Result<Batch> {
    let rows: Vec<(&[String], Option<&[Label]>)> = sentences.iter().map(|s| (s.as_slice(), None)).collect();
    pack(&rows, table)
}

fn pack(rows: &[(&[String], Option<&[Label]>)], table: &EmbeddingTable) -> Result<Batch> {
    if rows.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let b = rows.len();
    let r = rows.iter().map(|(t, _)| t.len()).max().unwrap_or(0).max(1);
    let e = table.dim();
    let mut emb = vec![0f32; b * r * e];
    let mut labels = vec![0usize; b * r];
    let mut mask = vec![0f32; b * r];
    for (bi, (tokens, tags)) in rows.iter().enumerate() {
        for (j, tok) in tokens.iter().enumerate() {
            let pos = bi * r + j;
            emb[pos * e..(pos + 1) * e].copy_from_slice(table.lookup(tok).0);
            mask[pos] = 1.0;
            if let Some(tags) = tags {
                labels[pos] = tags[j].index();
            }
        }
    }
    Ok(Batch {
        embeddings: Tensor::from_parts(vec![b, r, e], emb)?,
        labels,
        mask: Tensor::from_parts(vec![b, r], mask)?,
        lengths: rows.iter().map(|(t, _)| t.len()).collect(),
        indices: (0..b).collect(),
    })
}

/// Batches in file order.
pub fn batchify(examples: &[Example], table: &EmbeddingTable, batch_size: usize) -> Result<Vec<Batch>> {
    let order: Vec<usize> = (0..examples.len()).collect();
    batches_in_order(examples, table, batch_size, &order)
}

/// Batches over a seeded shuffle; the last batch may be short.
pub fn shuffled_batches<R: Rng + ?Sized>(
    examples: &[Example],
    table: &EmbeddingTable,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    batches_in_order(examples, table, batch_size, &order)
}

fn batches_in_order(
    examples: &[Example],
    table: &EmbeddingTable,
    batch_size: usize,
    order: &[usize],
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be ≥ 1".into()));
    }
    order
        .chunks(batch_size)
        .map(|idx| make_batch(examples, idx, table))
        .collect()
}

/// Holds out `n_val` sentences chosen uniformly without replacement. Both
/// parts keep file order.
pub fn split_validation<R: Rng + ?Sized>(
    examples: &[Example],
    n_val: usize,
    rng: &mut R,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if n_val == 0 {
        return Ok((examples.to_vec(), Vec::new()));
    }
    if n_val >= examples.len() {
        return Err(Error::Config(format!(
            "n_val = {n_val} leaves no training data in a corpus of {}",
            examples.len()
        )));
    }
    let mut held = vec![false; examples.len()];
    for i in index::sample(rng, examples.len(), n_val) {
        held[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (ex, &h) in examples.iter().zip(&held) {
        if h {
            val.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const REVIEW1: &str = "it\tO\nis\tO\nsuper\tO\nfast\tO\nand\tO\nhas\tO\noutstanding\tO\ngraphics\tB\n.\tO\n";

    fn ex(tokens: &[&str], labels: &[Label]) -> Example {
        Example {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn parses_review_fixture() {
        let c = parse_corpus(REVIEW1, LoadMode::Strict).unwrap();
        assert_eq!(c.examples.len(), 1);
        let e = &c.examples[0];
        assert_eq!(e.tokens, ["it", "is", "super", "fast", "and", "has", "outstanding", "graphics", "."]);
        use Label::*;
        assert_eq!(e.labels, [O, O, O, O, O, O, O, B, O]);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse_corpus("", LoadMode::Strict).unwrap().examples.is_empty());
        assert!(parse_corpus("\n\n", LoadMode::Strict).unwrap().examples.is_empty());
    }

    #[test]
    fn unknown_label_names_the_label_and_line() {
        let err = parse_corpus("a\tO\nfoo\tX\n", LoadMode::Strict).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("\"X\""), "{msg}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_lines() {
        for bad in ["lonely\n", "a\tO\tX\n", "\tO\n"] {
            assert!(matches!(parse_corpus(bad, LoadMode::Strict), Err(Error::Parse { line: 1, .. })));
        }
    }

    #[test]
    fn strict_rejects_and_lenient_repairs_dangling_inside() {
        let text = "a\tI\nb\tI\nc\tO\nd\tI\n";
        assert!(matches!(parse_corpus(text, LoadMode::Strict), Err(Error::Parse { line: 1, .. })));
        let c = parse_corpus(text, LoadMode::Lenient).unwrap();
        use Label::*;
        assert_eq!(c.examples[0].labels, [B, I, O, B]);
        assert_eq!(c.repaired, 2);
    }

    #[test]
    fn crlf_and_multiple_blank_lines() {
        let c = parse_corpus("a\tO\r\n\r\n\r\nb\tB\r\nc\tI\r\n", LoadMode::Strict).unwrap();
        assert_eq!(c.examples.len(), 2);
        assert_eq!(c.examples[1].tokens, ["b", "c"]);
    }

    #[test]
    fn embeddings_with_and_without_header() {
        for text in ["2 3\nfoo 1 2 3\nbar 4 5 6\n", "foo 1 2 3\nbar 4 5 6\n"] {
            let t = parse_embeddings(text).unwrap();
            assert_eq!(t.dim(), 3);
            assert_eq!(t.lookup("foo"), (&[1.0f32, 2.0, 3.0][..], Lookup::Exact));
            assert_eq!(t.lookup("bar").0, &[4.0f32, 5.0, 6.0]);
        }
    }

    #[test]
    fn unk_is_mean_and_flagged() {
        let t = parse_embeddings("a 1 0 3\nb 2 4 0\nc 0 2 3\n").unwrap();
        let (v, how) = t.lookup("zzz");
        assert_eq!(how, Lookup::Oov);
        assert_eq!(v, &[1.0f32, 2.0, 2.0]);
        let cov = t.coverage(["a", "A", "q"]);
        assert_eq!(cov, Coverage { exact: 1, lowercase: 1, oov: 1 });
    }

    #[test]
    fn duplicates_keep_first() {
        let t = parse_embeddings("a 1 1\na 2 2\nb 0 0\n").unwrap();
        assert_eq!(t.lookup("a").0, &[1.0f32, 1.0]);
        assert_eq!(t.duplicates, 1);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn inconsistent_dim_reports_line() {
        let err = parse_embeddings("a 1 2 3\nb 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn batch_padding_and_mask() {
        let table = parse_embeddings("x 1 1\ny 2 2\n").unwrap();
        use Label::*;
        let exs = vec![ex(&["x", "y", "x"], &[O, B, I]), ex(&["y", "y", "y", "x", "x"], &[B, O, O, O, B])];
        let batches = batchify(&exs, &table, 2).unwrap();
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!(b.max_len(), 5);
        let sums: Vec<f32> = b.mask.data().chunks(5).map(|r| r.iter().sum()).collect();
        assert_eq!(sums, [3.0, 5.0]);
        assert_eq!(&b.embeddings.data()[6..10], &[0.0; 4]);
        assert_eq!(&b.labels[3..5], &[0, 0]);

        let singles = batchify(&exs, &table, 1).unwrap();
        assert_eq!(singles.len(), 2);
        assert_eq!(singles[0].max_len(), 3);
        assert!(singles.iter().all(|b| b.mask.data().iter().all(|&m| m == 1.0)));
    }

    #[test]
    fn split_sizes_and_identity() {
        let exs: Vec<Example> = (0..3045).map(|i| ex(&[&i.to_string()], &[Label::O])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (train, val) = split_validation(&exs, 150, &mut rng).unwrap();
        assert_eq!((train.len(), val.len()), (2895, 150));
        let (train, val) = split_validation(&exs, 0, &mut rng).unwrap();
        assert_eq!(train, exs);
        assert!(val.is_empty());
        assert!(matches!(split_validation(&exs[..5], 5, &mut rng), Err(Error::Config(_))));
    }

    fn arb_example() -> impl Strategy<Value = Example> {
        prop::collection::vec(("[a-z]{1,6}", 0usize..3), 1..12).prop_map(|pairs| {
            let mut labels: Vec<Label> = Vec::new();
            let mut tokens = Vec::new();
            for (t, l) in pairs {
                let mut lab = Label::from_index(l).unwrap();
                if lab == Label::I && !matches!(labels.last(), Some(Label::B | Label::I)) {
                    lab = Label::B;
                }
                labels.push(lab);
                tokens.push(t);
            }
            Example { tokens, labels }
        })
    }

    proptest! {
        #[test]
        fn corpus_round_trip(exs in prop::collection::vec(arb_example(), 0..8)) {
            let back = parse_corpus(&render_corpus(&exs), LoadMode::Strict).unwrap();
            prop_assert_eq!(back.examples, exs);
        }

        #[test]
        fn batches_respect_mask(exs in prop::collection::vec(arb_example(), 1..10), bs in 1usize..5, seed: u64) {
            let table = parse_embeddings("q 0.5 -1\nw 2 3\n").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for b in shuffled_batches(&exs, &table, bs, &mut rng).unwrap() {
                let r = b.max_len();
                for (row, &idx) in b.indices.iter().enumerate() {
                    let live = b.mask.data()[row * r..(row + 1) * r].iter().filter(|&&m| m == 1.0).count();
                    prop_assert_eq!(live, exs[idx].len());
                    prop_assert_eq!(b.lengths[row], exs[idx].len());
                }
                for (pos, &m) in b.mask.data().iter().enumerate() {
                    if m == 0.0 {
                        prop_assert_eq!(b.labels[pos], 0);
                        prop_assert!(b.embeddings.data()[pos * 2..pos * 2 + 2].iter().all(|&x| x == 0.0));
                    }
                }
            }
        }

        #[test]
        fn split_is_deterministic_and_disjoint(n in 2usize..60, frac in 0.0f64..1.0, seed: u64) {
            let exs: Vec<Example> = (0..n).map(|i| ex(&[&i.to_string()], &[Label::O])).collect();
            let n_val = ((n - 1) as f64 * frac) as usize;
            let a = split_validation(&exs, n_val, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = split_validation(&exs, n_val, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            let mut all: Vec<&String> = a.0.iter().chain(&a.1).map(|e| &e.tokens[0]).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(a.1.len(), n_val);
        }
    }
}

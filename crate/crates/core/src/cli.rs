//! Command-line front end. Configuration comes from an optional flat
//! `key = value` file, overridden by flags.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_corpus, load_embeddings, load_tokens, make_token_batch, split_validation, Example, LoadMode};
use crate::energy::{dnn_energy, profile_network};
use crate::error::{Error, Result};
use crate::layers::{forward, NetworkConfig};
use crate::metrics::{score_labels, REPORT_HEADER};
use crate::neuron::{Centering, SpikeMode};
use crate::persistence::{self, Checkpoint};
use crate::seeds::{rng_for, Stream};
use crate::training::gradcheck::{grad_check, tiny_config};
use crate::training::{predict, train, OptimizerKind, TrainConfig, LOG_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_SEEDS: u64 = 5;

#[derive(Parser, Debug)]
#[command(name = "ternspike", version, about = "Spiking convolutional aspect-term tagger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a labelled corpus and write the best checkpoint
    Train(Common),
    /// Score a checkpoint (or a prediction file) against a labelled corpus
    Eval(Common),
    /// Label a token-per-line file
    Predict(Common),
    /// Estimate inference energy, or price a conventional network's FLOPs
    Energy(Common),
    /// Compare analytic gradients with finite differences
    Gradcheck(Common),
    /// Per-token spike counts of the last spiking layer for one sentence
    Inspect(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus (token<TAB>label) or, for predict, token-per-line input
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output directory (train, energy) or file (predict)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    spike_mode: Option<SpikeMode>,
    #[arg(long)]
    time_steps: Option<usize>,
    /// Print 12.5 pJ × FLOPs and exit
    #[arg(long)]
    dnn_flops: Option<f64>,
    /// Predicted corpus to score instead of running a checkpoint (eval)
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Whitespace-tokenised sentence (inspect)
    #[arg(long)]
    sentence: Option<String>,
    /// Continue training from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Effective configuration of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Take the embedding dimension from the embedding file.
    pub embedding_dim_auto: bool,
    pub corpus_mode: LoadMode,
    pub data: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            embedding_dim_auto: true,
            corpus_mode: LoadMode::Strict,
            data: None,
            embeddings: None,
            ckpt: None,
            out: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let n = &mut self.network;
        let t = &mut self.train;
        let path = || Some(PathBuf::from(value));
        match key {
            "time_steps" => n.time_steps = parse_value(key, value)?,
            "spike_mode" => n.spike_mode = value.parse()?,
            "channels" => n.channels = parse_value(key, value)?,
            "kernel" => n.kernel = parse_value(key, value)?,
            "n_spiking_conv" => n.n_spiking_conv = parse_value(key, value)?,
            "v_thr" => n.v_thr = parse_value(key, value)?,
            "decay_init" => n.decay_init = parse_value(key, value)?,
            "alpha" => n.alpha = parse_value(key, value)?,
            "surrogate_centering" => n.surrogate_centering = value.parse::<Centering>()?,
            "embedding_dim" => {
                if value == "auto" {
                    self.embedding_dim_auto = true;
                } else {
                    n.embedding_dim = parse_value(key, value)?;
                    self.embedding_dim_auto = false;
                }
            }
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "optimizer" => t.optimizer = value.parse::<OptimizerKind>()?,
            "beta1" => t.beta1 = parse_value(key, value)?,
            "beta2" => t.beta2 = parse_value(key, value)?,
            "eps" => t.eps = parse_value(key, value)?,
            "n_val" => t.n_val = parse_value(key, value)?,
            "normalize_by_steps" => t.normalize_by_steps = parse_value(key, value)?,
            "corpus_mode" => {
                self.corpus_mode = match value {
                    "strict" => LoadMode::Strict,
                    "lenient" => LoadMode::Lenient,
                    _ => return Err(Error::Config(format!("corpus_mode must be strict or lenient, got {value:?}"))),
                }
            }
            "data" => self.data = path(),
            "embeddings" => self.embeddings = path(),
            "ckpt" => self.ckpt = path(),
            "out" => self.out = path(),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// One `key = value` line per setting, in a fixed order.
    pub fn render(&self) -> String {
        let n = &self.network;
        let t = &self.train;
        let p = |x: &Option<PathBuf>| x.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let dim = if self.embedding_dim_auto {
            "auto".to_string()
        } else {
            n.embedding_dim.to_string()
        };
        let mode = match self.corpus_mode {
            LoadMode::Strict => "strict",
            LoadMode::Lenient => "lenient",
        };
        let mut s = String::new();
        for (k, v) in [
            ("time_steps", n.time_steps.to_string()),
            ("spike_mode", n.spike_mode.as_str().to_string()),
            ("channels", n.channels.to_string()),
            ("kernel", n.kernel.to_string()),
            ("n_spiking_conv", n.n_spiking_conv.to_string()),
            ("v_thr", n.v_thr.to_string()),
            ("decay_init", n.decay_init.to_string()),
            ("alpha", n.alpha.to_string()),
            ("surrogate_centering", n.surrogate_centering.as_str().to_string()),
            ("embedding_dim", dim),
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("optimizer", t.optimizer.as_str().to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("eps", format!("{:e}", t.eps)),
            ("n_val", t.n_val.to_string()),
            ("normalize_by_steps", t.normalize_by_steps.to_string()),
            ("corpus_mode", mode.to_string()),
            ("data", p(&self.data)),
            ("embeddings", p(&self.embeddings)),
            ("ckpt", p(&self.ckpt)),
            ("out", p(&self.out)),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(path) = &c.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        rc.apply_file_text(&text)?;
    }
    let over = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    over(&mut rc.data, &c.data);
    over(&mut rc.embeddings, &c.embeddings);
    over(&mut rc.ckpt, &c.ckpt);
    over(&mut rc.out, &c.out);
    if let Some(v) = c.seed {
        rc.train.seed = v;
    }
    if let Some(v) = c.lr {
        rc.train.learning_rate = v;
    }
    if let Some(v) = c.epochs {
        rc.train.epochs = v;
    }
    if let Some(v) = c.spike_mode {
        rc.network.spike_mode = v;
    }
    if let Some(v) = c.time_steps {
        rc.network.time_steps = v;
    }
    Ok(rc)
}

/// Effective configuration for an argument list, as `run` would use it.
pub fn effective_config<I, T>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    let (Command::Train(c)
    | Command::Eval(c)
    | Command::Predict(c)
    | Command::Energy(c)
    | Command::Gradcheck(c)
    | Command::Inspect(c)) = &cli.command;
    resolve(c)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Dimension(_) | Error::Validation(_) | Error::Parse { .. } | Error::Format(_) | Error::Io { .. } => {
            EXIT_DATA
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    let (Command::Train(c)
    | Command::Eval(c)
    | Command::Predict(c)
    | Command::Energy(c)
    | Command::Gradcheck(c)
    | Command::Inspect(c)) = &cli.command;
    let result = resolve(c).and_then(|rc| {
        let _ = write!(err, "{}", rc.render());
        match &cli.command {
            Command::Train(c) => cmd_train(&rc, c, out, err),
            Command::Eval(c) => cmd_eval(&rc, c, out),
            Command::Predict(_) => cmd_predict(&rc, out),
            Command::Energy(c) => cmd_energy(&rc, c, out),
            Command::Gradcheck(_) => cmd_gradcheck(&rc, out),
            Command::Inspect(c) => cmd_inspect(&rc, c, out),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing --{what}")))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn report<T: std::fmt::Display>(out: &mut dyn Write, text: T) -> Result<()> {
    write!(out, "{text}").map_err(io_err(Path::new("<stdout>")))
}

fn load_checkpoint(rc: &RunConfig) -> Result<Checkpoint> {
    persistence::load(required(&rc.ckpt, "ckpt")?)
}

fn load_examples(rc: &RunConfig, err: Option<&mut dyn Write>) -> Result<Vec<Example>> {
    let corpus = load_corpus(required(&rc.data, "data")?, rc.corpus_mode)?;
    if let (Some(err), true) = (err, corpus.repaired > 0) {
        let _ = writeln!(err, "repaired {} dangling I labels", corpus.repaired);
    }
    Ok(corpus.examples)
}

fn cmd_train(rc: &RunConfig, c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let ckpt_path = required(&rc.ckpt, "ckpt")?;
    let table = load_embeddings(required(&rc.embeddings, "embeddings")?)?;
    let examples = load_examples(rc, Some(&mut *err))?;
    let mut net_cfg = rc.network.clone();
    if rc.embedding_dim_auto {
        net_cfg.embedding_dim = table.dim();
    }
    let cov = table.coverage(examples.iter().flat_map(|e| e.tokens.iter().map(String::as_str)));
    let _ = writeln!(err, "tokens: {} exact, {} lowercase, {} oov", cov.exact, cov.lowercase, cov.oov);
    let (train_set, val_set) = split_validation(&examples, rc.train.n_val, &mut rng_for(rc.train.seed, Stream::Split))?;
    let resume = c.resume.as_ref().map(persistence::load).transpose()?;

    let mut log_text = format!("{LOG_HEADER}\n");
    report(out, &log_text)?;
    let outcome = train(&train_set, &val_set, &table, &rc.train, &net_cfg, resume, |entry| {
        let line = format!("{entry}\n");
        let _ = out.write_all(line.as_bytes());
        let _ = out.flush();
        log_text.push_str(&line);
    })?;
    persistence::save(&outcome.best, ckpt_path)?;
    if let Some(dir) = &rc.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log_path = dir.join("train_log.tsv");
        fs::write(&log_path, &log_text).map_err(io_err(&log_path))?;
        persistence::save(&outcome.last, dir.join("last.ckpt"))?;
    }
    let _ = writeln!(
        err,
        "best epoch {} (val F1 {:.6}) saved to {}",
        outcome.best.meta.epoch,
        outcome.best.meta.val_f1,
        ckpt_path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_eval(rc: &RunConfig, c: &Common, out: &mut dyn Write) -> Result<i32> {
    let gold = load_examples(rc, None)?;
    let pred: Vec<Vec<_>> = match &c.pred {
        Some(path) => {
            let pred = load_corpus(path, LoadMode::Lenient)?.examples;
            for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
                if g.tokens != p.tokens {
                    return Err(Error::Validation(format!("sentence {i}: tokens differ between gold and prediction")));
                }
            }
            pred.into_iter().map(|e| e.labels).collect()
        }
        None => {
            let ck = load_checkpoint(rc)?;
            let table = load_embeddings(required(&rc.embeddings, "embeddings")?)?;
            let sentences: Vec<Vec<String>> = gold.iter().map(|e| e.tokens.clone()).collect();
            predict(&ck.network, &ck.network_config, &sentences, &table, 32)?
        }
    };
    let gold_labels: Vec<_> = gold.iter().map(|e| e.labels.as_slice()).collect();
    let score = score_labels(&gold_labels, &pred)?;
    report(out, format!("{REPORT_HEADER}\n{score}\n"))?;
    Ok(EXIT_OK)
}

fn cmd_predict(rc: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint(rc)?;
    let table = load_embeddings(required(&rc.embeddings, "embeddings")?)?;
    let sentences = load_tokens(required(&rc.data, "data")?)?;
    let labels = predict(&ck.network, &ck.network_config, &sentences, &table, 32)?;
    let mut text = String::new();
    for (i, (toks, labs)) in sentences.iter().zip(&labels).enumerate() {
        if i > 0 {
            text.push('\n');
        }
        for (t, l) in toks.iter().zip(labs) {
            let _ = writeln!(text, "{t}\t{}", l.as_str());
        }
    }
    match &rc.out {
        Some(path) => fs::write(path, text).map_err(io_err(path))?,
        None => report(out, text)?,
    }
    Ok(EXIT_OK)
}

fn cmd_energy(rc: &RunConfig, c: &Common, out: &mut dyn Write) -> Result<i32> {
    if let Some(flops) = c.dnn_flops {
        if !(flops >= 0.0) || !flops.is_finite() {
            return Err(Error::Config(format!("--dnn-flops must be a non-negative count, got {flops}")));
        }
        report(out, format!("flops\tenergy_mJ\n{flops}\t{:.4}\n", dnn_energy(flops) * 1e3))?;
        return Ok(EXIT_OK);
    }
    let ck = load_checkpoint(rc)?;
    let table = load_embeddings(required(&rc.embeddings, "embeddings")?)?;
    let examples = load_examples(rc, None)?;
    let sample = if rc.train.n_val > 0 && rc.train.n_val < examples.len() {
        split_validation(&examples, rc.train.n_val, &mut rng_for(rc.train.seed, Stream::Split))?.1
    } else {
        examples
    };
    let sentences: Vec<Vec<String>> = sample.iter().map(|e| e.tokens.clone()).collect();
    let batch = make_token_batch(&sentences, &table)?;
    let rep = profile_network(&ck.network, &batch.embeddings, &batch.mask, &ck.network_config)?;
    report(out, rep.render())?;
    if let Some(dir) = &rc.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("energy.json");
        fs::write(&path, rep.to_json()).map_err(io_err(&path))?;
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(rc: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    report(out, "mode\tcentering\tseed\tmax_rel_error\tworst\n")?;
    let mut ok = true;
    for mode in [SpikeMode::Binary, SpikeMode::Ternary] {
        for centering in [Centering::Zero, Centering::Threshold] {
            let cfg = tiny_config(mode, centering);
            for seed in rc.train.seed..rc.train.seed + GRADCHECK_SEEDS {
                let r = grad_check(&cfg, seed)?;
                ok &= r.max_rel_error < GRADCHECK_TOLERANCE;
                report(
                    out,
                    format!(
                        "{}\t{}\t{seed}\t{:.3e}\t{}[{}]\n",
                        mode.as_str(),
                        centering.as_str(),
                        r.max_rel_error,
                        r.worst.0,
                        r.worst.1
                    ),
                )?;
            }
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_NUMERIC })
}

/// Positive and negative spike counts per token of the last spiking layer,
/// summed over channels and steps.
pub fn spike_counts(ck: &Checkpoint, tokens: &[String], table: &crate::data::EmbeddingTable) -> Result<Vec<(usize, usize)>> {
    let batch = make_token_batch(&[tokens.to_vec()], table)?;
    let (_, trace) = forward(&batch.embeddings, Some(&batch.mask), &ck.network, &ck.network_config)?;
    let c = ck.network_config.channels;
    let mut counts = vec![(0, 0); tokens.len()];
    for s in trace.spikes(trace.layers.len() - 1) {
        for (i, &v) in s.data().iter().enumerate() {
            let tok = i / c;
            if v > 0.0 {
                counts[tok].0 += 1;
            } else if v < 0.0 {
                counts[tok].1 += 1;
            }
        }
    }
    Ok(counts)
}

fn cmd_inspect(rc: &RunConfig, c: &Common, out: &mut dyn Write) -> Result<i32> {
    let sentence = c.sentence.as_deref().ok_or_else(|| Error::Config("missing --sentence".into()))?;
    let tokens: Vec<String> = sentence.split_whitespace().map(String::from).collect();
    if tokens.is_empty() {
        return Err(Error::Config("--sentence is empty".into()));
    }
    let ck = load_checkpoint(rc)?;
    let table = load_embeddings(required(&rc.embeddings, "embeddings")?)?;
    let mut text = String::from("token\tpositive\tnegative\n");
    for (t, (p, n)) in tokens.iter().zip(spike_counts(&ck, &tokens, &table)?) {
        let _ = writeln!(text, "{t}\t{p}\t{n}");
    }
    report(out, text)?;
    Ok(EXIT_OK)
}

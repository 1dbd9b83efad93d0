//! Minibatch training with Adam.
//!
//! Every run is a pure function of (config, corpora): initialization, batch
//! shuffling, and the update arithmetic are all seeded and order-fixed, so two
//! runs with the same inputs produce bit-identical parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{batchify, EncodedCorpus};
use crate::elman::{self, ModelParams};
use crate::error::{Error, Result};
use crate::eval_bench;
use crate::grad::{batch_gradients, GradMode, GradientSet};
use crate::numerics::Activation;

/// How batch gradients are normalized before the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossNorm {
    /// Divide by the number of scored tokens in the batch.
    PerWord,
    /// Divide by the number of sentences in the batch.
    PerSequence,
}

impl LossNorm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-word" => Ok(LossNorm::PerWord),
            "per-sequence" => Ok(LossNorm::PerSequence),
            other => Err(Error::Invalid {
                what: "loss normalization",
                detail: format!("expected per-word or per-sequence, got {other:?}"),
            }),
        }
    }
}

impl std::fmt::Display for LossNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossNorm::PerWord => "per-word",
            LossNorm::PerSequence => "per-sequence",
        })
    }
}

/// Everything a training run depends on besides the data.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub grad_mode: GradMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale gradients whose L2 norm exceeds this, when set.
    pub clip_norm: Option<f64>,
    pub loss_norm: LossNorm,
    pub hidden: usize,
    /// 0 keeps one-hot inputs; otherwise the embedding width.
    pub embed_dim: usize,
    pub activation: Activation,
    pub bias: bool,
    /// Parameters start uniform in [-init_range, init_range].
    pub init_range: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grad_mode: GradMode::Bptt,
            epochs: 20,
            batch_size: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            loss_norm: LossNorm::PerWord,
            hidden: 100,
            embed_dim: 0,
            activation: Activation::Tanh,
            bias: false,
            init_range: 0.05,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, detail: String| Err(Error::Invalid { what, detail });
        self.grad_mode.validate()?;
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", format!("{}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return bad("adam betas", format!("{name}={b} outside [0, 1)"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon", format!("{}", self.epsilon));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip_norm", format!("{c}"));
            }
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1".into());
        }
        if !(self.init_range.is_finite() && self.init_range >= 0.0) {
            return bad("init_range", format!("{}", self.init_range));
        }
        Ok(())
    }
}

/// Seeded uniform initialization of a fresh model for `vocab_size` tokens.
/// Tensors are filled in the fixed parameter order, so a seed pins every
/// weight exactly.
pub fn init_params(config: &TrainConfig, vocab_size: usize) -> Result<ModelParams> {
    config.validate()?;
    if vocab_size < 2 {
        return Err(Error::Invalid {
            what: "vocab size",
            detail: format!("{vocab_size} is too small (need the two reserved tokens)"),
        });
    }
    if config.embed_dim == vocab_size {
        return Err(Error::Invalid {
            what: "embed_dim",
            detail: format!(
                "embedding width {} must differ from the vocabulary size (0 selects one-hot inputs)",
                config.embed_dim
            ),
        });
    }
    let mut params = if config.embed_dim == 0 {
        ModelParams::one_hot(config.hidden, vocab_size, config.activation, config.bias)
    } else {
        ModelParams::embedded(
            config.hidden,
            config.embed_dim,
            vocab_size,
            config.activation,
            config.bias,
        )
    };
    if config.init_range > 0.0 {
        let r = config.init_range;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for s in params.param_slices_mut() {
            for x in s.iter_mut() {
                *x = rng.gen_range(-r..=r);
            }
        }
    }
    Ok(params)
}

/// Adam moment estimates, flat over the shared parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(param_count: usize) -> Self {
        OptimizerState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }
}

/// One Adam update, in place. The gradient must be finite everywhere; a
/// non-finite entry rejects the step without touching anything.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    opt: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if opt.m.len() != params.param_count() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters", params.param_count()),
            format!("{} moment entries", opt.m.len()),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    opt.step += 1;
    let c1 = 1.0 - config.beta1.powi(opt.step as i32);
    let c2 = 1.0 - config.beta2.powi(opt.step as i32);
    let (b1, b2, lr, eps) = (config.beta1, config.beta2, config.learning_rate, config.epsilon);

    let mut offset = 0;
    let grad_slices = grads.slices();
    let mut param_slices = params.param_slices_mut();
    if grad_slices.len() != param_slices.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameter tensors", param_slices.len()),
            format!("{} gradient tensors", grad_slices.len()),
        ));
    }
    for (ps, gs) in param_slices.iter_mut().zip(grad_slices) {
        if ps.len() != gs.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} entries", ps.len()),
                format!("{} entries", gs.len()),
            ));
        }
        for k in 0..ps.len() {
            let g = gs[k];
            let m = b1 * opt.m[offset + k] + (1.0 - b1) * g;
            let v = b2 * opt.v[offset + k] + (1.0 - b2) * g * g;
            opt.m[offset + k] = m;
            opt.v[offset + k] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            ps[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        offset += ps.len();
    }
    Ok(())
}

/// Per-epoch progress record.
#[derive(Clone, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss_nats_per_word: f64,
    pub valid_ppl: f64,
    pub seconds: f64,
}

/// Result of a training run: the parameters of the best validation epoch,
/// which epoch that was, and the full metrics history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

fn write_metrics_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&tmp, e);
        writeln!(w, "epoch,train_loss_nats_per_word,valid_ppl,seconds").map_err(io)?;
        for m in metrics {
            writeln!(
                w,
                "{},{},{},{:.3}",
                m.epoch, m.train_loss_nats_per_word, m.valid_ppl, m.seconds
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

const OPT_MAGIC: &str = "fixpoint-opt v1";

/// Serialize optimizer state next to a checkpoint: text header
/// `fixpoint-opt v1 <param_count> <step>` then both moment vectors raw.
pub fn write_opt_state(opt: &OptimizerState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("opt.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&tmp, e);
        writeln!(w, "{OPT_MAGIC} {} {}", opt.m.len(), opt.step).map_err(io)?;
        for &x in opt.m.iter().chain(opt.v.iter()) {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_opt_state(path: &Path) -> Result<OptimizerState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte).map_err(|e| Error::io(path, e))?;
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 128 {
            return Err(Error::format(path, "unterminated header".to_string()));
        }
    }
    let header = String::from_utf8(header).map_err(|_| Error::format(path, "non-utf8 header".to_string()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "fixpoint-opt" || fields[1] != "v1" {
        return Err(Error::format(path, format!("bad header {header:?}")));
    }
    let count: usize = fields[2]
        .parse()
        .map_err(|_| Error::format(path, format!("bad count {:?}", fields[2])))?;
    let step: u64 = fields[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad step {:?}", fields[3])))?;
    let mut buf = vec![0u8; count * 16];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let decode = |bytes: &[u8]| -> Vec<f64> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Ok(OptimizerState {
        m: decode(&buf[..count * 8]),
        v: decode(&buf[count * 8..]),
        step,
    })
}

/// Train a fresh model. When `out_dir` is given, every epoch writes
/// `epoch<N>.model`, `epoch<N>.opt`, and a refreshed `metrics.csv` there.
/// Aborts with [`Error::Diverged`] the moment a batch loss stops being
/// finite.
pub fn train(
    config: &TrainConfig,
    train_corpus: &EncodedCorpus,
    valid_corpus: &EncodedCorpus,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_corpus.is_empty() {
        return Err(Error::EmptyCorpus("training corpus".into()));
    }
    if valid_corpus.is_empty() {
        return Err(Error::EmptyCorpus("validation corpus".into()));
    }
    if train_corpus.vocab_size() != valid_corpus.vocab_size() {
        return Err(Error::Invalid {
            what: "corpora",
            detail: format!(
                "train vocab {} != valid vocab {}",
                train_corpus.vocab_size(),
                valid_corpus.vocab_size()
            ),
        });
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut params = init_params(config, train_corpus.vocab_size())?;
    let mut opt = OptimizerState::new(params.param_count());
    let engine = config.grad_mode.engine();

    let mut metrics: Vec<EpochMetrics> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = batchify(train_corpus, config.batch_size, config.seed.wrapping_add(epoch as u64))?;
        let mut epoch_nll = 0.0;
        let mut epoch_words = 0usize;

        for (bi, batch) in batches.iter().enumerate() {
            let (mut grads, nll) = match batch_gradients(batch, &params, config.grad_mode) {
                Ok(pair) => pair,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, batch: bi }),
                Err(e) => return Err(e),
            };
            if !nll.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            epoch_nll += nll;
            epoch_words += batch.token_count();

            let scale = match config.loss_norm {
                LossNorm::PerWord => 1.0 / batch.token_count() as f64,
                LossNorm::PerSequence => 1.0 / batch.rows() as f64,
            };
            grads.scale(scale);
            if let Some(limit) = config.clip_norm {
                let norm = grads.l2_norm();
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            match adam_step(&mut params, &grads, &mut opt, config) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, batch: bi }),
                Err(e) => return Err(e),
            }
        }

        // A non-finite validation perplexity is still divergence even when every
        // batch loss stayed finite (the final exp can be the first thing to
        // overflow); batch == batches.len() marks end-of-epoch detection.
        let valid_ppl = match eval_bench::perplexity(valid_corpus, &params, engine) {
            Ok(ppl) => ppl,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, batch: batches.len() }),
            Err(e) => return Err(e),
        };
        let entry = EpochMetrics {
            epoch,
            train_loss_nats_per_word: epoch_nll / epoch_words as f64,
            valid_ppl,
            seconds: started.elapsed().as_secs_f64(),
        };
        metrics.push(entry);

        let improved = match &best {
            None => true,
            Some((_, best_ppl, _)) => valid_ppl < *best_ppl,
        };
        if improved {
            best = Some((epoch, valid_ppl, params.clone()));
        }

        if let Some(dir) = out_dir {
            elman::write_model(&params, &dir.join(format!("epoch{epoch}.model")))?;
            write_opt_state(&opt, &dir.join(format!("epoch{epoch}.opt")))?;
            write_metrics_csv(&metrics, &dir.join("metrics.csv"))?;
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        metrics,
    })
}

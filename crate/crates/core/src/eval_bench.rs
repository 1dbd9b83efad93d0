//! Scoring, sweeps, and timing.
//!
//! Perplexity is `exp(total NLL / scored tokens)` over sentence-reset
//! evaluations. The sweep retrains one model per (sweep count, detach) pair
//! plus an exact-gradient reference, all from the same seed, so rows are
//! directly comparable. The forward benchmark times the two engines after
//! first proving they agree bit for bit on the benchmarked model.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodedCorpus, TokenId};
use crate::elman::{self, ModelParams};
use crate::error::{Error, Result};
use crate::fpi::{self, ForwardEngine, FpiInit};
use crate::grad::GradMode;
use crate::numerics::Vector;
use crate::parallel::{self, WorkerPool};
use crate::trainer::{self, TrainConfig};

/// Corpus perplexity under the chosen forward pass. Sentences are scored
/// independently from a zero initial state and summed in corpus order, so the
/// result is identical across worker counts.
pub fn perplexity(corpus: &EncodedCorpus, params: &ModelParams, forward: ForwardEngine) -> Result<f64> {
    params.validate_shapes()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("nothing to score".into()));
    }
    if corpus.vocab_size() != params.vocab {
        return Err(Error::Invalid {
            what: "corpus",
            detail: format!(
                "encoded against a vocabulary of {}, model expects {}",
                corpus.vocab_size(),
                params.vocab
            ),
        });
    }
    let h0 = Vector::zeros(params.hidden);
    let eos = corpus.eos_id();
    let scored: Vec<Result<f64>> = parallel::map_collect(corpus.sentences(), |sentence| {
        let inputs = elman::input_sequence(sentence, eos);
        let block = fpi::forward_block(&inputs, &h0, forward, params)?;
        elman::block_nll(&block, sentence, params)
    });
    let mut total_nll = 0.0;
    for r in scored {
        total_nll += r?;
    }
    let ppl = (total_nll / corpus.target_count() as f64).exp();
    if !ppl.is_finite() {
        return Err(Error::NonFinite("perplexity".into()));
    }
    Ok(ppl)
}

/// One retrained model in a sweep. `test_ppl` is NaN when that run diverged.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub rho: usize,
    pub detach: bool,
    pub test_ppl: f64,
    pub seconds: f64,
}

/// Sweep results plus the exact-gradient reference trained alongside.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub bptt_test_ppl: f64,
    pub bptt_seconds: f64,
}

/// Retrain from scratch for every sweep count in `rho_list`, once with full
/// unrolled gradients and once detached, plus one exact-gradient reference.
/// Everything shares `config`'s seed and hyperparameters; only the gradient
/// scheme changes. A diverging run yields a NaN row instead of aborting the
/// sweep.
pub fn sweep_rho(
    config: &TrainConfig,
    rho_list: &[usize],
    train_corpus: &EncodedCorpus,
    valid_corpus: &EncodedCorpus,
    test_corpus: &EncodedCorpus,
) -> Result<SweepOutcome> {
    if rho_list.is_empty() {
        return Err(Error::Invalid {
            what: "rho list",
            detail: "must name at least one sweep count".into(),
        });
    }
    let run = |mode: GradMode| -> Result<(f64, f64)> {
        let started = Instant::now();
        let cfg = TrainConfig {
            grad_mode: mode,
            ..config.clone()
        };
        match trainer::train(&cfg, train_corpus, valid_corpus, None) {
            Ok(outcome) => {
                let ppl = perplexity(test_corpus, &outcome.params, mode.engine())?;
                Ok((ppl, started.elapsed().as_secs_f64()))
            }
            Err(Error::Diverged { .. }) => Ok((f64::NAN, started.elapsed().as_secs_f64())),
            Err(e) => Err(e),
        }
    };

    let (bptt_test_ppl, bptt_seconds) = run(GradMode::Bptt)?;
    if bptt_test_ppl.is_nan() {
        return Err(Error::Invalid {
            what: "sweep reference",
            detail: "the exact-gradient reference run diverged; rescale the configuration".into(),
        });
    }

    let mut rows = Vec::with_capacity(rho_list.len() * 2);
    for &rho in rho_list {
        GradMode::FpiFull { rho }.validate()?;
        for detach in [false, true] {
            let mode = if detach {
                GradMode::FpiDetached { rho }
            } else {
                GradMode::FpiFull { rho }
            };
            let (test_ppl, seconds) = run(mode)?;
            rows.push(SweepRow {
                rho,
                detach,
                test_ppl,
                seconds,
            });
        }
    }
    Ok(SweepOutcome {
        rows,
        bptt_test_ppl,
        bptt_seconds,
    })
}

/// `rho,detach,test_ppl,seconds` with detach rendered as 0/1; the exact
/// reference is reported separately, not as a row.
pub fn write_sweep_csv(outcome: &SweepOutcome, path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&tmp, e);
        writeln!(w, "rho,detach,test_ppl,seconds").map_err(io)?;
        for r in &outcome.rows {
            writeln!(
                w,
                "{},{},{},{:.3}",
                r.rho,
                if r.detach { 1 } else { 0 },
                r.test_ppl,
                r.seconds
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// What to time in the forward benchmark.
#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub hidden: usize,
    pub vocab: usize,
    pub t_list: Vec<usize>,
    pub rho_list: Vec<usize>,
    /// Thread counts for the fixed-point engine; 1 is always measured and is
    /// the speedup reference.
    pub workers_list: Vec<usize>,
    /// Timed repetitions per configuration (median is reported); at least 3.
    pub trials: usize,
    pub seed: u64,
    /// Deliberately corrupt one value before the equivalence gate, to prove
    /// the gate fails loudly. For tests only.
    pub inject_fault: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            hidden: 64,
            vocab: 100,
            t_list: vec![64, 256],
            rho_list: vec![1, 2, 4, 8],
            workers_list: vec![1, 2, 4],
            trials: 5,
            seed: 42,
            inject_fault: false,
        }
    }
}

/// One timed configuration. The sequential engine is reported with `rho = 0`
/// and is its own speedup reference; fixed-point rows are normalized by the
/// single-worker median for the same `(t, rho)`.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub t: usize,
    pub rho: usize,
    pub workers: usize,
    pub median_seconds: f64,
    pub speedup: f64,
}

fn median_seconds(trials: usize, mut run: impl FnMut()) -> f64 {
    run(); // warmup
    let mut samples: Vec<f64> = (0..trials)
        .map(|_| {
            let started = Instant::now();
            run();
            started.elapsed().as_secs_f64()
        })
        .collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

/// Time the sequential and fixed-point forward passes on a seeded random
/// model. Before timing each sequence length, the two engines must agree
/// bit for bit; any discrepancy aborts the benchmark.
pub fn bench_forward(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.trials < 3 {
        return Err(Error::Invalid {
            what: "bench trials",
            detail: format!("{} is too few for a stable median (need 3+)", spec.trials),
        });
    }
    if spec.t_list.is_empty() || spec.rho_list.is_empty() {
        return Err(Error::Invalid {
            what: "bench spec",
            detail: "sequence lengths and sweep counts must be non-empty".into(),
        });
    }
    if spec.rho_list.contains(&0) {
        return Err(Error::Invalid {
            what: "bench spec",
            detail: "sweep counts must be at least 1".into(),
        });
    }
    if spec.workers_list.contains(&0) {
        return Err(Error::Invalid {
            what: "bench spec",
            detail: "worker counts must be explicit (at least 1)".into(),
        });
    }
    // the single-worker measurement anchors speedups, so make sure it exists
    let mut workers_list = spec.workers_list.clone();
    if !workers_list.contains(&1) {
        workers_list.insert(0, 1);
    }

    let cfg = TrainConfig {
        hidden: spec.hidden,
        seed: spec.seed,
        init_range: 0.4,
        ..TrainConfig::default()
    };
    let params = trainer::init_params(&cfg, spec.vocab)?;
    let h0 = Vector::zeros(spec.hidden);
    let mut rows = Vec::new();

    for &t in &spec.t_list {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(t as u64));
        let inputs: Vec<TokenId> = (0..t).map(|_| rng.gen_range(0..spec.vocab as TokenId)).collect();

        // equivalence gate: the fully converged fixed-point block must equal
        // the sequential recurrence exactly on this model
        let sequential = elman::sequential_forward(&inputs, &h0, &params)?;
        let mut converged = fpi::fpi_solve(&inputs, &h0, t, FpiInit::Zeros, &params)?.block;
        if spec.inject_fault {
            let mid = converged.rows() / 2;
            converged.row_mut(mid)[0] += 1e-9;
        }
        let gap = converged.sup_diff(&sequential);
        if gap != 0.0 {
            return Err(Error::Invalid {
                what: "bench equivalence gate",
                detail: format!("engines disagree by {gap:e} at T={t}; refusing to time them"),
            });
        }

        let sequential_median = median_seconds(spec.trials, || {
            let _ = elman::sequential_forward(&inputs, &h0, &params).unwrap();
        });
        rows.push(BenchRow {
            t,
            rho: 0,
            workers: 1,
            median_seconds: sequential_median,
            speedup: 1.0,
        });

        for &rho in &spec.rho_list {
            let mut single_worker_median = None;
            for &workers in &workers_list {
                let pool = WorkerPool::new(workers)?;
                let median = median_seconds(spec.trials, || {
                    pool.run(|| {
                        let _ = fpi::fpi_solve(&inputs, &h0, rho, FpiInit::Zeros, &params).unwrap();
                    });
                });
                let base = *single_worker_median.get_or_insert(median);
                rows.push(BenchRow {
                    t,
                    rho,
                    workers,
                    median_seconds: median,
                    speedup: base / median,
                });
            }
        }
    }
    Ok(rows)
}

/// `T,rho,workers,median_seconds,speedup`; sequential baselines are the
/// `rho = 0` rows.
pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&tmp, e);
        writeln!(w, "T,rho,workers,median_seconds,speedup").map_err(io)?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{:.9},{:.4}",
                r.t, r.rho, r.workers, r.median_seconds, r.speedup
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

//! Gradients of the sentence loss, three ways.
//!
//! * `Bptt` — exact backpropagation through the left-to-right recurrence.
//! * `FpiFull` — backpropagation through `rho` unrolled fixed-point sweeps.
//!   At `rho = T` the unrolled computation coincides with the recurrence, so
//!   its gradient matches backpropagation through time to rounding error.
//! * `FpiDetached` — the previous iterate entering each sweep is treated as a
//!   constant, so only the final sweep contributes recurrence and input-map
//!   gradients. Cheaper, and biased in a controlled way.
//!
//! Batches reduce per-sentence gradients along a fixed binary tree, so totals
//! are bit-identical whatever the worker count (and in the sequential build).

use crate::corpus::{Batch, TokenId};
use crate::elman::{self, HistoryBlock, ModelParams};
use crate::error::{Error, Result};
use crate::fpi::ForwardEngine;
use crate::numerics::{self, Matrix, Vector};
use crate::parallel;

/// Which differentiation scheme to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    Bptt,
    FpiFull { rho: usize },
    FpiDetached { rho: usize },
}

impl GradMode {
    /// Mode name without the sweep count (`bptt`, `fpi`, `fpi-detach`).
    pub fn name(self) -> &'static str {
        match self {
            GradMode::Bptt => "bptt",
            GradMode::FpiFull { .. } => "fpi",
            GradMode::FpiDetached { .. } => "fpi-detach",
        }
    }

    /// Assemble from a mode name and sweep count.
    pub fn parse(name: &str, rho: usize) -> Result<Self> {
        let mode = match name {
            "bptt" => GradMode::Bptt,
            "fpi" => GradMode::FpiFull { rho },
            "fpi-detach" => GradMode::FpiDetached { rho },
            other => {
                return Err(Error::Invalid {
                    what: "grad mode",
                    detail: format!("expected bptt, fpi, or fpi-detach, got {other:?}"),
                })
            }
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn rho(self) -> Option<usize> {
        match self {
            GradMode::Bptt => None,
            GradMode::FpiFull { rho } | GradMode::FpiDetached { rho } => Some(rho),
        }
    }

    /// The forward pass that matches this training scheme when scoring text.
    pub fn engine(self) -> ForwardEngine {
        match self {
            GradMode::Bptt => ForwardEngine::Sequential,
            GradMode::FpiFull { rho } | GradMode::FpiDetached { rho } => ForwardEngine::Fpi { rho },
        }
    }

    pub fn validate(self) -> Result<()> {
        if let Some(0) = self.rho() {
            return Err(Error::Invalid {
                what: "grad mode",
                detail: "sweep count must be at least 1".into(),
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for GradMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.rho() {
            None => f.write_str(self.name()),
            Some(r) => write!(f, "{}:{r}", self.name()),
        }
    }
}

/// Partial derivatives of the loss with respect to every parameter tensor,
/// laid out exactly like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub d_w_hh: Matrix,
    pub d_w_xh: Matrix,
    pub d_w_hy: Matrix,
    pub d_bias_h: Option<Vector>,
    pub d_bias_y: Option<Vector>,
    pub d_embedding: Option<Matrix>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            d_w_hh: Matrix::zeros(params.hidden, params.hidden),
            d_w_xh: Matrix::zeros(params.hidden, params.input_dim),
            d_w_hy: Matrix::zeros(params.vocab, params.hidden),
            d_bias_h: params.bias_h.as_ref().map(|b| Vector::zeros(b.dim())),
            d_bias_y: params.bias_y.as_ref().map(|b| Vector::zeros(b.dim())),
            d_embedding: params
                .embedding
                .as_ref()
                .map(|e| Matrix::zeros(e.rows(), e.cols())),
        }
    }

    /// Tensors in the shared flat order (recurrence, input map, output map,
    /// biases, embedding).
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.d_w_hh.data(), self.d_w_xh.data(), self.d_w_hy.data()];
        if let Some(b) = &self.d_bias_h {
            out.push(b.data());
        }
        if let Some(b) = &self.d_bias_y {
            out.push(b.data());
        }
        if let Some(e) = &self.d_embedding {
            out.push(e.data());
        }
        out
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.d_w_hh.data_mut(),
            self.d_w_xh.data_mut(),
            self.d_w_hy.data_mut(),
        ];
        if let Some(b) = &mut self.d_bias_h {
            out.push(b.data_mut());
        }
        if let Some(b) = &mut self.d_bias_y {
            out.push(b.data_mut());
        }
        if let Some(e) = &mut self.d_embedding {
            out.push(e.data_mut());
        }
        out
    }

    /// Gradient entry at a flat parameter index (the same ordering the
    /// optimizer and model files use).
    pub fn flat_get(&self, idx: usize) -> f64 {
        let mut rem = idx;
        for s in self.slices() {
            if rem < s.len() {
                return s[rem];
            }
            rem -= s.len();
        }
        panic!("gradient index {idx} out of range");
    }

    /// Elementwise accumulate; shapes must match.
    pub fn add_assign(&mut self, rhs: &GradientSet) {
        let theirs: Vec<&[f64]> = rhs.slices();
        let mut ours = self.slices_mut();
        assert_eq!(ours.len(), theirs.len(), "gradient layout mismatch");
        for (a, b) in ours.iter_mut().zip(theirs) {
            numerics::add_assign(a, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for x in s.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        let mut total = 0.0;
        for s in self.slices() {
            for &x in s {
                total += x * x;
            }
        }
        total.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        let mut worst = 0.0f64;
        for s in self.slices() {
            for &x in s {
                worst = worst.max(x.abs());
            }
        }
        worst
    }

    /// Largest absolute elementwise difference against another set.
    pub fn sup_diff(&self, other: &GradientSet) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.slices().iter().zip(other.slices()) {
            worst = worst.max(numerics::sup_diff(a, b));
        }
        worst
    }
}

/// Accumulate the gradient of the input map (and embedding, if present) for
/// one step's input token.
fn add_input_grad(params: &ModelParams, grads: &mut GradientSet, tok: TokenId, dz: &[f64]) {
    match &params.embedding {
        None => {
            let col = tok as usize;
            for (i, &dzi) in dz.iter().enumerate() {
                let cur = grads.d_w_xh.get(i, col);
                grads.d_w_xh.set(i, col, cur + dzi);
            }
        }
        Some(emb) => {
            numerics::outer_add(&mut grads.d_w_xh, dz, emb.row(tok as usize));
            let d_emb = grads
                .d_embedding
                .as_mut()
                .expect("embedding gradient buffer");
            numerics::matvec_t_add(&params.w_xh, dz, d_emb.row_mut(tok as usize));
        }
    }
}

/// Compute loss terms and softmax pullbacks for every position of a block.
/// Returns the (possibly filtered) total loss; `dlogits` row `t-1` holds
/// `softmax(logits_t) - onehot(target_t)`, zeroed for filtered positions.
fn loss_and_dlogits(
    params: &ModelParams,
    block: &HistoryBlock,
    sentence: &[TokenId],
    loss_filter: Option<usize>,
    dlogits: &mut Matrix,
) -> f64 {
    let mut loss = 0.0;
    for t in 1..=sentence.len() {
        let row = dlogits.row_mut(t - 1);
        let counted = loss_filter.is_none_or(|only| only == t);
        if !counted {
            row.fill(0.0);
            continue;
        }
        elman::logits_into(params, block.row(t), row);
        numerics::log_softmax_in_place(row);
        let target = sentence[t - 1] as usize;
        loss -= row[target];
        for x in row.iter_mut() {
            *x = x.exp();
        }
        row[target] -= 1.0;
    }
    loss
}

/// Output-layer gradients, shared by every mode.
fn add_output_grads(
    params: &ModelParams,
    grads: &mut GradientSet,
    block: &HistoryBlock,
    dlogits: &Matrix,
    t_len: usize,
) {
    for t in 1..=t_len {
        numerics::outer_add(&mut grads.d_w_hy, dlogits.row(t - 1), block.row(t));
        if let Some(db) = &mut grads.d_bias_y {
            numerics::add_assign(db.data_mut(), dlogits.row(t - 1));
        }
    }
    let _ = params;
}

/// Exact backpropagation through the recurrence for one sentence.
/// `loss_filter`, when set, restricts the loss to that single position
/// (1-based); used to isolate per-position contributions in tests.
fn sequence_bptt_into(
    params: &ModelParams,
    sentence: &[TokenId],
    boundary: TokenId,
    grads: &mut GradientSet,
    loss_filter: Option<usize>,
) -> f64 {
    let t_len = sentence.len();
    let h = params.hidden;
    let inputs = elman::input_sequence(sentence, boundary);

    let mut block = HistoryBlock::zeros(h, t_len + 1);
    for t in 1..=t_len {
        let (prev, cur) = block.prev_and_current_mut(t);
        elman::step_into(params, prev, inputs[t - 1], cur);
    }

    let mut dlogits = Matrix::zeros(t_len, params.vocab);
    let loss = loss_and_dlogits(params, &block, sentence, loss_filter, &mut dlogits);
    add_output_grads(params, grads, &block, &dlogits, t_len);

    let act = params.activation;
    let mut carry = vec![0.0; h]; // dL/dh_t flowing in from step t+1
    let mut dh = vec![0.0; h];
    let mut dz = vec![0.0; h];
    for t in (1..=t_len).rev() {
        dh.copy_from_slice(&carry);
        numerics::matvec_t_add(&params.w_hy, dlogits.row(t - 1), &mut dh);
        let state = block.row(t);
        for i in 0..h {
            dz[i] = dh[i] * act.deriv_from_output(state[i]);
        }
        numerics::outer_add(&mut grads.d_w_hh, &dz, block.row(t - 1));
        add_input_grad(params, grads, inputs[t - 1], &dz);
        if let Some(db) = &mut grads.d_bias_h {
            numerics::add_assign(db.data_mut(), &dz);
        }
        carry.fill(0.0);
        numerics::matvec_t_add(&params.w_hh, &dz, &mut carry);
    }
    loss
}

/// Backpropagation through `rho` unrolled sweeps (optionally detaching the
/// previous iterate at every sweep boundary) for one sentence. Initial state
/// and initial block are zero, matching the training configuration.
fn sequence_fpi_into(
    params: &ModelParams,
    sentence: &[TokenId],
    boundary: TokenId,
    rho: usize,
    detach: bool,
    grads: &mut GradientSet,
    loss_filter: Option<usize>,
) -> f64 {
    let t_len = sentence.len();
    let h = params.hidden;
    let inputs = elman::input_sequence(sentence, boundary);

    // forward: keep every iterate, B^(0) .. B^(rho)
    let mut blocks: Vec<HistoryBlock> = Vec::with_capacity(rho + 1);
    blocks.push(HistoryBlock::zeros(h, t_len + 1));
    for n in 1..=rho {
        let mut next = HistoryBlock::zeros(h, t_len + 1);
        let prev = &blocks[n - 1];
        for t in 1..=t_len {
            elman::step_into(params, prev.row(t - 1), inputs[t - 1], next.row_mut(t));
        }
        blocks.push(next);
    }
    let final_block = &blocks[rho];

    let mut dlogits = Matrix::zeros(t_len, params.vocab);
    let loss = loss_and_dlogits(params, final_block, sentence, loss_filter, &mut dlogits);
    add_output_grads(params, grads, final_block, &dlogits, t_len);

    // dL/dB^(rho), row by row
    let mut dblock = HistoryBlock::zeros(h, t_len + 1);
    for t in 1..=t_len {
        numerics::matvec_t_add(&params.w_hy, dlogits.row(t - 1), dblock.row_mut(t));
    }

    let act = params.activation;
    let mut dz = vec![0.0; h];
    for n in (1..=rho).rev() {
        let cur = &blocks[n];
        let prev = &blocks[n - 1];
        // row 0 of the previous iterate is the pinned initial state and the
        // zero-th iterate is a constant, so flow stops there either way
        let propagate = !detach && n >= 2;
        let mut dprev = propagate.then(|| HistoryBlock::zeros(h, t_len + 1));
        for t in 1..=t_len {
            let state = cur.row(t);
            let dout = dblock.row(t);
            for i in 0..h {
                dz[i] = dout[i] * act.deriv_from_output(state[i]);
            }
            numerics::outer_add(&mut grads.d_w_hh, &dz, prev.row(t - 1));
            add_input_grad(params, grads, inputs[t - 1], &dz);
            if let Some(db) = &mut grads.d_bias_h {
                numerics::add_assign(db.data_mut(), &dz);
            }
            if t >= 2 {
                if let Some(dp) = &mut dprev {
                    numerics::matvec_t_add(&params.w_hh, &dz, dp.row_mut(t - 1));
                }
            }
        }
        match dprev {
            Some(dp) => dblock = dp,
            None => break, // detached, or reached the constant iterate
        }
    }
    loss
}

fn sequence_grads_into(
    params: &ModelParams,
    sentence: &[TokenId],
    boundary: TokenId,
    mode: GradMode,
    grads: &mut GradientSet,
    loss_filter: Option<usize>,
) -> f64 {
    if sentence.is_empty() {
        return 0.0;
    }
    match mode {
        GradMode::Bptt => sequence_bptt_into(params, sentence, boundary, grads, loss_filter),
        GradMode::FpiFull { rho } => {
            sequence_fpi_into(params, sentence, boundary, rho, false, grads, loss_filter)
        }
        GradMode::FpiDetached { rho } => {
            sequence_fpi_into(params, sentence, boundary, rho, true, grads, loss_filter)
        }
    }
}

/// Test hook: gradient of the loss restricted to one 1-based position of a
/// single sentence.
#[cfg(test)]
fn position_gradient(
    params: &ModelParams,
    sentence: &[TokenId],
    boundary: TokenId,
    mode: GradMode,
    position: usize,
) -> (GradientSet, f64) {
    let mut grads = GradientSet::zeros_like(params);
    let loss = sequence_grads_into(params, sentence, boundary, mode, &mut grads, Some(position));
    (grads, loss)
}

/// Sum per-sentence gradients over `rows[lo..hi]` along a fixed binary tree.
/// The splits and the left-into-right accumulation order depend only on the
/// row range, never on scheduling, so results are bitwise reproducible.
fn reduce_rows(
    params: &ModelParams,
    batch: &Batch,
    mode: GradMode,
    lo: usize,
    hi: usize,
) -> (GradientSet, f64) {
    debug_assert!(lo < hi);
    if hi - lo == 1 {
        let mut grads = GradientSet::zeros_like(params);
        let loss = sequence_grads_into(
            params,
            batch.sentence(lo),
            batch.eos_id(),
            mode,
            &mut grads,
            None,
        );
        return (grads, loss);
    }
    let mid = lo + (hi - lo) / 2;
    let ((mut lg, ll), (rg, rl)) = parallel::join(
        || reduce_rows(params, batch, mode, lo, mid),
        || reduce_rows(params, batch, mode, mid, hi),
    );
    lg.add_assign(&rg);
    (lg, ll + rl)
}

/// Gradients and total loss (nats, unnormalized) of a batch under `mode`.
pub fn batch_gradients(batch: &Batch, params: &ModelParams, mode: GradMode) -> Result<(GradientSet, f64)> {
    params.validate_shapes()?;
    mode.validate()?;
    if batch.rows() == 0 {
        return Err(Error::EmptyCorpus("batch with no sentences".into()));
    }
    for r in 0..batch.rows() {
        for &t in batch.sentence(r) {
            if t as usize >= params.vocab {
                return Err(Error::Invalid {
                    what: "token id",
                    detail: format!("{t} out of range for vocabulary of {}", params.vocab),
                });
            }
        }
    }
    Ok(reduce_rows(params, batch, mode, 0, batch.rows()))
}

/// Exact backpropagation through time over a batch.
pub fn bptt_gradients(batch: &Batch, params: &ModelParams) -> Result<(GradientSet, f64)> {
    batch_gradients(batch, params, GradMode::Bptt)
}

/// Backpropagation through `rho` fixed-point sweeps over a batch.
pub fn fpi_gradients(
    batch: &Batch,
    params: &ModelParams,
    rho: usize,
    detach: bool,
) -> Result<(GradientSet, f64)> {
    let mode = if detach {
        GradMode::FpiDetached { rho }
    } else {
        GradMode::FpiFull { rho }
    };
    batch_gradients(batch, params, mode)
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    /// Worst relative error over the checked entries, denominators clamped
    /// at 1e-8.
    pub max_rel_err: f64,
    /// Flat parameter index where it occurred.
    pub worst_index: usize,
    /// How many entries were checked.
    pub checked: usize,
}

/// Entry count above which only a seeded random subset of parameters is
/// probed (two loss evaluations per entry add up quickly).
const FD_EXHAUSTIVE_LIMIT: usize = 2048;
const FD_SUBSET: usize = 512;

/// Compare an analytic gradient against central finite differences of
/// `loss_fn`. Every entry is probed up to [`FD_EXHAUSTIVE_LIMIT`] parameters;
/// beyond that, a deterministic random subset is used.
pub fn finite_difference_check(
    loss_fn: impl Fn(&ModelParams) -> Result<f64>,
    params: &ModelParams,
    analytic: &GradientSet,
    step: f64,
) -> Result<FdReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Invalid {
            what: "finite-difference step",
            detail: format!("{step}"),
        });
    }
    let n = params.param_count();
    let indices: Vec<usize> = if n <= FD_EXHAUSTIVE_LIMIT {
        (0..n).collect()
    } else {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xFD_17);
        let mut picked = rand::seq::index::sample(&mut rng, n, FD_SUBSET).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut work = params.clone();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: indices.len(),
    };
    for idx in indices {
        let orig = work.param_get(idx);
        work.param_set(idx, orig + step);
        let plus = loss_fn(&work)?;
        work.param_set(idx, orig - step);
        let minus = loss_fn(&work)?;
        work.param_set(idx, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss while probing parameter {idx}"
            )));
        }
        let fd = (plus - minus) / (2.0 * step);
        let an = analytic.flat_get(idx);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = idx;
        }
    }
    Ok(report)
}

//! Fixed-point view of the recurrence.
//!
//! Instead of stepping left to right, the whole state trajectory is treated as
//! one unknown block `B` satisfying `B[t] = phi(W_hh B[t-1] + W_xh x_{t-1} + b)`
//! for every `t >= 1`, with `B[0]` pinned to the initial state. One iteration
//! recomputes every row simultaneously from the previous iterate (a Jacobi
//! sweep), so all rows can be updated in parallel. Because row `t` only reads
//! row `t-1`, the map is nilpotent below the diagonal: after `n` sweeps rows
//! `0..=n` are exactly the sequential states, and `T` sweeps reproduce the
//! sequential forward pass bit for bit — the per-row arithmetic is the same
//! `step_into` code path in both engines.

use crate::corpus::TokenId;
use crate::elman::{self, HistoryBlock, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{self, Vector};

/// Starting block for the iteration. Row 0 is always overwritten with `h0`.
#[derive(Clone, Debug)]
pub enum FpiInit {
    /// All rows zero.
    Zeros,
    /// Every row set to `h0`.
    CopyH0,
    /// Caller-supplied block (shape must match).
    Given(HistoryBlock),
}

/// One iterate of the solver: the current block, how many sweeps produced it,
/// and the sup-norm of the last sweep's update (`infinity` before any sweep).
#[derive(Clone, Debug)]
pub struct FpiState {
    pub block: HistoryBlock,
    pub iteration: usize,
    pub residual: f64,
}

/// Recompute every row of `old` into `new` from the previous iterate only.
/// Returns the largest elementwise change. Rows are independent, so this is
/// the data-parallel kernel of the crate.
pub(crate) fn sweep_into(
    params: &ModelParams,
    inputs: &[TokenId],
    old: &HistoryBlock,
    new: &mut HistoryBlock,
) -> f64 {
    let h = old.hidden();
    debug_assert_eq!(old.rows(), inputs.len() + 1);
    debug_assert_eq!(new.rows(), old.rows());
    new.row_mut(0).copy_from_slice(old.row(0));
    if inputs.is_empty() {
        return 0.0;
    }

    let update_row = |i: usize, out: &mut [f64]| -> f64 {
        let t = i + 1;
        elman::step_into(params, old.row(t - 1), inputs[t - 1], out);
        numerics::sup_diff(out, old.row(t))
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        new.data_mut()[h..]
            .par_chunks_mut(h)
            .enumerate()
            .map(|(i, out)| update_row(i, out))
            .reduce(|| 0.0, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        new.data_mut()[h..]
            .chunks_mut(h)
            .enumerate()
            .map(|(i, out)| update_row(i, out))
            .fold(0.0, f64::max)
    }
}

fn check_inputs(inputs: &[TokenId], params: &ModelParams) -> Result<()> {
    params.validate_shapes()?;
    for &t in inputs {
        if t as usize >= params.vocab {
            return Err(Error::Invalid {
                what: "token id",
                detail: format!("{t} out of range for vocabulary of {}", params.vocab),
            });
        }
    }
    Ok(())
}

/// Apply one sweep to an existing state.
pub fn fpi_iterate(state: &FpiState, inputs: &[TokenId], params: &ModelParams) -> Result<FpiState> {
    check_inputs(inputs, params)?;
    if state.block.rows() != inputs.len() + 1 || state.block.hidden() != params.hidden {
        return Err(Error::shape(
            "fpi_iterate",
            format!("{} x {}", inputs.len() + 1, params.hidden),
            format!("{} x {}", state.block.rows(), state.block.hidden()),
        ));
    }
    let mut next = HistoryBlock::zeros(params.hidden, state.block.rows());
    let residual = sweep_into(params, inputs, &state.block, &mut next);
    Ok(FpiState {
        block: next,
        iteration: state.iteration + 1,
        residual,
    })
}

/// Build the initial state and run `rho` sweeps.
pub fn fpi_solve(
    inputs: &[TokenId],
    h0: &Vector,
    rho: usize,
    init: FpiInit,
    params: &ModelParams,
) -> Result<FpiState> {
    check_inputs(inputs, params)?;
    if h0.dim() != params.hidden {
        return Err(Error::shape(
            "fpi_solve",
            format!("hidden {}", params.hidden),
            format!("{}", h0.dim()),
        ));
    }
    let rows = inputs.len() + 1;
    let block = match init {
        FpiInit::Zeros => HistoryBlock::from_h0(h0, rows),
        FpiInit::CopyH0 => HistoryBlock::broadcast_h0(h0, rows),
        FpiInit::Given(mut b) => {
            if b.rows() != rows || b.hidden() != params.hidden {
                return Err(Error::shape(
                    "fpi_solve init",
                    format!("{rows} x {}", params.hidden),
                    format!("{} x {}", b.rows(), b.hidden()),
                ));
            }
            b.row_mut(0).copy_from_slice(h0.data());
            b
        }
    };
    let mut state = FpiState {
        block,
        iteration: 0,
        residual: f64::INFINITY,
    };
    for _ in 0..rho {
        state = fpi_iterate(&state, inputs, params)?;
    }
    Ok(state)
}

/// Residual after each of `n_max` sweeps from the zero initialization.
/// Entry `i` is the update norm of sweep `i + 1`; entries from index
/// `inputs.len()` onward are exactly zero because the iteration has converged.
pub fn residual_curve(
    inputs: &[TokenId],
    h0: &Vector,
    params: &ModelParams,
    n_max: usize,
) -> Result<Vec<f64>> {
    let mut state = fpi_solve(inputs, h0, 0, FpiInit::Zeros, params)?;
    let mut curve = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        state = fpi_iterate(&state, inputs, params)?;
        curve.push(state.residual);
    }
    Ok(curve)
}

/// Which forward pass to use when scoring text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardEngine {
    /// Exact left-to-right recurrence.
    Sequential,
    /// `rho` fixed-point sweeps from the zero initialization.
    Fpi { rho: usize },
}

impl ForwardEngine {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "sequential" {
            return Ok(ForwardEngine::Sequential);
        }
        if let Some(n) = s.strip_prefix("fpi:") {
            let rho: usize = n.parse().map_err(|_| Error::Invalid {
                what: "forward engine",
                detail: format!("bad sweep count in {s:?}"),
            })?;
            if rho == 0 {
                return Err(Error::Invalid {
                    what: "forward engine",
                    detail: "fpi sweep count must be at least 1".into(),
                });
            }
            return Ok(ForwardEngine::Fpi { rho });
        }
        Err(Error::Invalid {
            what: "forward engine",
            detail: format!("expected `sequential` or `fpi:N`, got {s:?}"),
        })
    }
}

impl std::fmt::Display for ForwardEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForwardEngine::Sequential => f.write_str("sequential"),
            ForwardEngine::Fpi { rho } => write!(f, "fpi:{rho}"),
        }
    }
}

/// Compute the state trajectory for `inputs` with the chosen engine.
pub fn forward_block(
    inputs: &[TokenId],
    h0: &Vector,
    engine: ForwardEngine,
    params: &ModelParams,
) -> Result<HistoryBlock> {
    match engine {
        ForwardEngine::Sequential => elman::sequential_forward(inputs, h0, params),
        ForwardEngine::Fpi { rho } => {
            if rho == 0 {
                return Err(Error::Invalid {
                    what: "forward engine",
                    detail: "fpi sweep count must be at least 1".into(),
                });
            }
            Ok(fpi_solve(inputs, h0, rho, FpiInit::Zeros, params)?.block)
        }
    }
}

//! Worker-pool plumbing.
//!
//! With the `parallel` feature enabled this wraps a rayon thread pool; without
//! it every entry point degrades to plain sequential execution with the same
//! observable results. Callers never branch on the feature themselves.

#[cfg(feature = "parallel")]
use crate::error::Error;
use crate::error::Result;

/// A handle scoping work onto a fixed number of worker threads.
///
/// `workers == 0` means "use the default pool" (all available cores when the
/// `parallel` feature is on, otherwise the current thread).
pub struct WorkerPool {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
    requested: usize,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let pool = if workers == 0 {
                None
            } else {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .build()
                        .map_err(|e| Error::Invalid {
                            what: "worker pool",
                            detail: e.to_string(),
                        })?,
                )
            };
            Ok(WorkerPool {
                pool,
                requested: workers,
            })
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(WorkerPool { requested: workers })
        }
    }

    /// Number of threads work submitted to this pool will run on.
    pub fn workers(&self) -> usize {
        #[cfg(feature = "parallel")]
        {
            match &self.pool {
                Some(p) => p.current_num_threads(),
                None => rayon::current_num_threads(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = self.requested;
            1
        }
    }

    /// Run `f` inside this pool so that nested parallel iterators use it.
    pub fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        {
            match &self.pool {
                Some(p) => p.install(f),
                None => f(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            f()
        }
    }
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool")
            .field("requested", &self.requested)
            .field("effective", &self.workers())
            .finish()
    }
}

/// Evaluate two closures, in parallel when the feature allows it.
///
/// The result is identical either way; only wall-clock time differs.
pub(crate) fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}

/// Order-preserving map over a slice, parallel when possible.
pub(crate) fn map_collect<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel map in the crate goes through [`map_range`], which collects
//! results in index order. Reductions are then performed by the caller over
//! that ordered vector, so results never depend on the thread schedule.
//!
//! With the `parallel` feature disabled everything runs on the calling
//! thread. With it enabled, [`with_exec`] can still force sequential execution
//! for a closure, which is what the benches use to compare both paths.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

thread_local! {
    static OVERRIDE: Cell<Option<Exec>> = const { Cell::new(None) };
}

impl Exec {
    /// The execution mode in effect on this thread.
    pub fn current() -> Exec {
        OVERRIDE.with(|o| o.get()).unwrap_or(if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        })
    }
}

/// Runs `f` with the given execution mode on the current thread.
pub fn with_exec<R>(exec: Exec, f: impl FnOnce() -> R) -> R {
    let prev = OVERRIDE.with(|o| o.replace(Some(exec)));
    let out = f();
    OVERRIDE.with(|o| o.set(prev));
    out
}

/// `(0..n).map(f).collect()`, possibly in parallel, always in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match Exec::current() {
        #[cfg(feature = "parallel")]
        Exec::Parallel if n > 1 => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Like [`map_range`] but short-circuits on the first error (by index order
/// when sequential; an arbitrary failing index when parallel).
pub fn try_map_range<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

/// Caps the global worker count. Returns false if the pool was already built.
pub fn set_jobs(jobs: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        true
    }
}

//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool
//! sized by [`Exec::jobs`]. Without it every call runs on the current thread.
//! Results are always returned in input order, so output never depends on
//! the number of workers.

/// Execution policy for the data-parallel inner loops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Exec {
    /// Worker bound; `None` uses the global pool (or all cores).
    pub jobs: Option<usize>,
}

impl Exec {
    pub const SEQUENTIAL: Exec = Exec { jobs: Some(1) };

    pub fn with_jobs(jobs: usize) -> Self {
        Exec {
            jobs: Some(jobs.max(1)),
        }
    }

    pub fn is_sequential(&self) -> bool {
        !cfg!(feature = "parallel") || self.jobs == Some(1)
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.is_sequential() || items.len() < 2 {
            return items.iter().map(f).collect();
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.install(|| items.par_iter().map(&f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }

    /// Map `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        if self.is_sequential() || n < 2 {
            return (0..n).map(f).collect();
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.install(|| (0..n).into_par_iter().map(&f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }

    #[cfg(feature = "parallel")]
    fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        match self.jobs {
            None => op(),
            Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(op),
                Err(e) => {
                    log::warn!("thread pool with {n} workers unavailable ({e}); using global pool");
                    op()
                }
            },
        }
    }
}

//! Data-parallel execution switch.
//!
//! Shot loops, batch energy evaluations and sweeps go through
//! [`Execution::map`]. With the `parallel` feature the `Parallel` variant
//! runs on the rayon pool; without it every variant runs sequentially.
//! Results are identical either way because each item owns its rng stream.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F>(self, n: u64, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(u64) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps then folds with an associative `reduce`; `identity` must be
    /// neutral for it.
    pub fn map_reduce<R, F, G, I>(self, n: u64, identity: I, f: F, reduce: G) -> R
    where
        R: Send,
        F: Fn(u64) -> R + Sync + Send,
        G: Fn(R, R) -> R + Sync + Send,
        I: Fn() -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).reduce(&identity, &reduce);
        }
        (0..n).map(f).fold(identity(), reduce)
    }
}

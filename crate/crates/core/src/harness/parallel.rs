//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the items run on a rayon pool whose size is
//! taken from `NSTACK_THREADS` (rayon's default when unset). Results always
//! come back in input order, so any reduction the caller does afterwards is
//! sequential and deterministic.

#[cfg(feature = "parallel")]
use std::sync::OnceLock;

pub const THREADS_ENV: &str = "NSTACK_THREADS";

/// Thread count requested through `NSTACK_THREADS`, if set and valid.
pub fn requested_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = requested_threads() {
            b = b.num_threads(n);
        }
        b.build().expect("thread pool")
    })
}

/// Number of workers `par_map` uses.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        pool().current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pool().install(|| items.par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential reference with the same contract as [`par_map`].
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_input_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = par_map(&xs, |x| x * x);
        assert_eq!(ys, seq_map(&xs, |x| x * x));
        assert!(threads() >= 1);
    }
}

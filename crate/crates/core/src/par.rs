//! Data-parallel map used for batches of independent work (episodes,
//! searches, forward passes). Output order always matches input order.

/// Maps `f` over `items`, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    if rayon::current_thread_index().is_some() {
        items.par_iter().map(&f).collect()
    } else {
        pool().install(|| items.par_iter().map(&f).collect())
    }
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    seq_map(items, f)
}

/// Sequential reference path.
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Worker count requested through `COOPMCTS_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var("COOPMCTS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    use std::sync::OnceLock;
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_limit() {
            b = b.num_threads(n);
        }
        b.build().expect("worker pool starts")
    })
}

/// Runs `f` on a dedicated pool with exactly `threads` workers.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("worker pool starts")
        .install(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..1000).collect();
        let out = par_map(&items, |x| x * x);
        assert_eq!(out, seq_map(&items, |x| x * x));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn with_threads_bounds_the_workers() {
        let items: Vec<u64> = (0..64).collect();
        let seen = with_threads(2, || par_map(&items, |_| rayon::current_num_threads()));
        assert!(seen.iter().all(|&n| n == 2));
    }
}

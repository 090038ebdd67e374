//! Independent-run execution: a rayon pool when the `parallel` feature is
//! on, a plain loop otherwise. `NAKASIM_THREADS` caps the worker count.

/// Worker cap from `NAKASIM_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("NAKASIM_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Maps `f` over `items` in order, one item per task.
pub fn map_runs<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f, thread_cap())
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

pub fn map_sequential<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Rayon map on a dedicated pool of `threads` workers (rayon's default when
/// `None`). A single thread falls back to the sequential path.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, R, F>(items: &[T], f: F, threads: Option<usize>) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if threads == Some(1) || items.len() < 2 {
        return map_sequential(items, f);
    }
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    match b.build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => map_sequential(items, f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let v: Vec<u64> = (0..100).collect();
        let out = map_runs(&v, |x| x * x);
        assert_eq!(out, map_sequential(&v, |x| x * x));
        #[cfg(feature = "parallel")]
        assert_eq!(map_parallel(&v, |x| x + 1, Some(3)), (1..101).collect::<Vec<_>>());
    }
}

//! Data-parallel map helpers with a sequential fallback.
//!
//! Per-sample work (corpus generation, point-cloud encoding, evaluation) is
//! embarrassingly parallel: each item derives its own RNG stream from its
//! index, so outputs are identical whether mapped in parallel or serially.
//! The `parallel` feature (default on) routes [`map_indexed`] through rayon;
//! without it the crate is dependency-free on rayon and runs sequentially.
//! Both explicit variants stay available so benchmarks can compare them.

/// Sequential indexed map.
pub fn map_indexed_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Parallel indexed map. Output order matches input order.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Indexed map over items; parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    map_indexed_par(items, f)
}

/// Indexed map over items; parallel when the `parallel` feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    map_indexed_seq(items, f)
}

/// Cap the global worker pool from the `GREENPLM_THREADS` environment
/// variable. No-op when the variable is unset, zero, or the pool already
/// exists. Call once at process start.
pub fn init_thread_cap_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("GREENPLM_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..100).collect();
        let seq = map_indexed_seq(&items, |i, x| i as u64 * 31 + x * x);
        let any = map_indexed(&items, |i, x| i as u64 * 31 + x * x);
        assert_eq!(seq, any);
    }
}

//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan out over rayon's global pool;
//! without it they run sequentially. [`set_sequential`] forces the sequential
//! path at runtime so both can be compared in one process (the benches do
//! this). Output order always matches input order.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force (or stop forcing) sequential execution of every helper.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when the helpers currently dispatch to rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Map over a slice, possibly in parallel.
pub fn map_slice<'a, S, T, F>(items: &'a [S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Apply `f` to each `(index, chunk)` of `data` split into `chunk_len`
/// pieces, possibly in parallel.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Deterministic parallel reduction: `n` items are grouped into fixed-size
/// chunks, each chunk is folded sequentially, and the chunk results are
/// combined left to right. The grouping never depends on the thread count.
pub fn chunked_reduce<T, M, R>(n: usize, chunk: usize, map: M, reduce: R) -> Option<T>
where
    T: Send,
    M: Fn(usize) -> T + Sync + Send,
    R: Fn(T, T) -> T + Sync + Send,
{
    assert!(chunk > 0);
    let n_chunks = n.div_ceil(chunk);
    let partials = map_range(n_chunks, |c| {
        let start = c * chunk;
        let end = (start + chunk).min(n);
        (start..end).map(&map).reduce(&reduce)
    });
    partials.into_iter().flatten().reduce(&reduce)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn chunked_reduce_is_exact_on_integers() {
        let s = chunked_reduce(1001, 7, |i| i as u64, |a, b| a + b).unwrap();
        assert_eq!(s, 1001 * 1000 / 2);
        assert!(chunked_reduce(0, 3, |i| i, |a, b| a + b).is_none());
    }

    #[test]
    fn chunk_mut_visits_every_chunk() {
        let mut v = vec![0usize; 10];
        for_each_chunk_mut(&mut v, 3, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
    }
}

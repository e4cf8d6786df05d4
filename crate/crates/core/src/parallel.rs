//! Deterministic fan-out over fixed chunks.
//!
//! Work is always cut into the same chunks regardless of how many cores are
//! present, and results come back in chunk order, so any reduction over them
//! is bit-identical between a threaded and a sequential run.

/// Number of chunks a batch is split into.
pub(crate) const CHUNKS: usize = 8;

/// Below this many items the thread start-up cost outweighs the work.
const MIN_PARALLEL_ITEMS: usize = 64;

pub(crate) fn chunk_ranges(n: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = chunks.max(1);
    (0..chunks)
        .map(|c| (c * n / chunks)..((c + 1) * n / chunks))
        .collect()
}

/// Applies `f` to each chunk of `items`, returning results in chunk order.
pub(crate) fn map_chunks<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync,
{
    let ranges = chunk_ranges(items.len(), CHUNKS);
    if !threads_available() || items.len() < MIN_PARALLEL_ITEMS {
        return ranges.into_iter().map(|r| f(&items[r])).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| {
                let f = &f;
                let slice = &items[r];
                scope.spawn(move || f(slice))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

#[cfg(target_arch = "wasm32")]
fn threads_available() -> bool {
    false
}

#[cfg(not(target_arch = "wasm32"))]
fn threads_available() -> bool {
    std::thread::available_parallelism().is_ok_and(|n| n.get() > 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_everything_once() {
        for n in [0, 1, 7, 8, 9, 100, 1023] {
            let r = chunk_ranges(n, CHUNKS);
            assert_eq!(r.len(), CHUNKS);
            assert_eq!(r[0].start, 0);
            assert_eq!(r.last().unwrap().end, n);
            assert!(r.windows(2).all(|w| w[0].end == w[1].start));
        }
    }

    #[test]
    fn results_keep_chunk_order() {
        let items: Vec<u64> = (0..1000).collect();
        let sums = map_chunks(&items, |c| c.iter().sum::<u64>());
        let expected: Vec<u64> = chunk_ranges(1000, CHUNKS)
            .into_iter()
            .map(|r| r.map(|i| i as u64).sum())
            .collect();
        assert_eq!(sums, expected);
    }
}

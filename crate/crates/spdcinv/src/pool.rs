//! Deterministic ensemble worker pool.
//!
//! Realizations are independent work items grouped into fixed-size chunks.
//! Workers race to claim chunk indices from an atomic counter, but results
//! are returned indexed by chunk, so any reduction folds in chunk order and
//! the outcome is independent of scheduling and worker count. Within a
//! chunk, items run sequentially, so per-chunk partials are bitwise stable
//! too.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Environment variable capping the worker count.
pub const WORKERS_ENV: &str = "SPDCINV_WORKERS";

/// Ensemble chunk width. Fixed (not derived from worker count) so that
/// per-chunk reduction boundaries, and therefore floating-point sums, never
/// move when the machine changes.
pub const CHUNK_SIZE: usize = 8;

fn parse_workers(raw: Option<String>) -> Option<usize> {
    raw.and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// Worker count: the environment variable if set and valid, otherwise the
/// machine's available parallelism.
pub fn worker_count() -> usize {
    parse_workers(std::env::var(WORKERS_ENV).ok()).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

/// Splits `n_items` into CHUNK_SIZE-wide ranges.
pub fn chunk_ranges(n_items: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n_items {
        let end = (start + CHUNK_SIZE).min(n_items);
        out.push(start..end);
        start = end;
    }
    out
}

/// Runs `work` over every chunk of `0..n_items` on up to `workers` threads
/// and returns the per-chunk results in chunk order. `make_state` builds
/// per-worker scratch (FFT plans, field buffers) once per thread.
pub fn run_chunked<S, P, MS, W>(n_items: usize, workers: usize, make_state: MS, work: W) -> Vec<P>
where
    P: Send,
    MS: Fn() -> S + Sync,
    W: Fn(&mut S, Range<usize>) -> P + Sync,
{
    let chunks = chunk_ranges(n_items);
    if chunks.is_empty() {
        return Vec::new();
    }
    let workers = workers.max(1).min(chunks.len());
    if workers == 1 {
        let mut state = make_state();
        return chunks.into_iter().map(|r| work(&mut state, r)).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<P>>> = Mutex::new((0..chunks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut state = make_state();
                loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= chunks.len() {
                        break;
                    }
                    let result = work(&mut state, chunks[idx].clone());
                    slots.lock().expect("pool poisoned")[idx] = Some(result);
                }
            });
        }
    });
    slots
        .into_inner()
        .expect("pool poisoned")
        .into_iter()
        .map(|p| p.expect("chunk never ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_without_overlap() {
        for n in [0, 1, 7, 8, 9, 100] {
            let chunks = chunk_ranges(n);
            let mut seen = vec![false; n];
            for r in &chunks {
                for i in r.clone() {
                    assert!(!seen[i], "item {i} covered twice");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "items missed for n={n}");
        }
    }

    #[test]
    fn results_arrive_in_chunk_order() {
        let got = run_chunked(35, 4, || (), |_, r| r.start);
        let expect: Vec<usize> = chunk_ranges(35).iter().map(|r| r.start).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn fold_is_bitwise_stable_across_worker_counts() {
        // chunk partials are sequential sums; folding them in order must
        // produce identical bits no matter how many threads ran
        let item = |i: usize| ((i as f64) * 0.731).sin() / (1.0 + i as f64);
        let total = |workers: usize| -> f64 {
            run_chunked(123, workers, || (), |_, r| r.map(item).sum::<f64>())
                .into_iter()
                .sum()
        };
        let t1 = total(1);
        for w in 2..=5 {
            assert_eq!(t1.to_bits(), total(w).to_bits(), "workers = {w}");
        }
    }

    #[test]
    fn per_worker_state_is_reused_within_a_thread() {
        // state counts how many chunks each worker handled; totals must
        // equal the chunk count regardless of distribution
        let counters: Vec<usize> = run_chunked(
            64,
            3,
            || 0usize,
            |state, _r| {
                *state += 1;
                *state
            },
        );
        assert_eq!(counters.len(), chunk_ranges(64).len());
        // every chunk got a positive per-thread sequence number
        assert!(counters.iter().all(|&c| c >= 1));
    }

    #[test]
    fn worker_env_parsing_accepts_only_positive_integers() {
        assert_eq!(parse_workers(Some("4".into())), Some(4));
        assert_eq!(parse_workers(Some(" 2 ".into())), Some(2));
        assert_eq!(parse_workers(Some("0".into())), None);
        assert_eq!(parse_workers(Some("-3".into())), None);
        assert_eq!(parse_workers(Some("many".into())), None);
        assert_eq!(parse_workers(None), None);
    }

    #[test]
    fn zero_items_runs_no_work() {
        let got: Vec<usize> = run_chunked(0, 4, || (), |_, r| r.start);
        assert!(got.is_empty());
    }
}

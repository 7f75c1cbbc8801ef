//! Deterministic parallel tree reductions.
//!
//! The index range is split at fixed midpoints down to leaf blocks, leaves are
//! folded sequentially and partial results are combined pairwise. The shape
//! of the tree depends only on the length of the range, so results are
//! bit-identical for any number of rayon threads.

const LEAF: usize = 512;
// Below this many elements the recursion stays on the current thread.
const PAR_CUTOFF: usize = 8 * LEAF;

/// Reduces `0..n` by mapping each leaf block with `leaf` and combining
/// neighbours with `merge`. `leaf` receives a half-open index range.
pub(crate) fn tree_reduce<T, L, M>(n: usize, leaf: &L, merge: &M) -> T
where
    T: Send,
    L: Fn(usize, usize) -> T + Sync,
    M: Fn(T, T) -> T + Sync,
{
    reduce_range(0, n, leaf, merge)
}

fn reduce_range<T, L, M>(lo: usize, hi: usize, leaf: &L, merge: &M) -> T
where
    T: Send,
    L: Fn(usize, usize) -> T + Sync,
    M: Fn(T, T) -> T + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        return leaf(lo, hi);
    }
    // Split on a multiple of LEAF so leaf boundaries do not depend on depth.
    let blocks = len.div_ceil(LEAF);
    let mid = lo + (blocks / 2) * LEAF;
    let (a, b) = if len >= PAR_CUTOFF {
        rayon::join(|| reduce_range(lo, mid, leaf, merge), || reduce_range(mid, hi, leaf, merge))
    } else {
        (reduce_range(lo, mid, leaf, merge), reduce_range(mid, hi, leaf, merge))
    };
    merge(a, b)
}

/// Pairwise sum of `f(i)` over `0..n`.
pub(crate) fn tree_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    tree_reduce(n, &|lo, hi| (lo..hi).map(&f).sum::<f64>(), &|a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_closed_form() {
        let n = 1_000_003;
        let s = tree_sum(n, |i| i as f64);
        assert_eq!(s, (n as f64) * (n as f64 - 1.0) / 2.0);
    }

    #[test]
    fn thread_count_independent() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| tree_sum(200_000, f));
        let b = four.install(|| tree_sum(200_000, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn empty_range() {
        assert_eq!(tree_sum(0, |_| 1.0), 0.0);
    }
}

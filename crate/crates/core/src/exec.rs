//! Parallel/sequential execution of embarrassingly-parallel loops.
//!
//! With the `parallel` feature (default) the map helpers dispatch to rayon;
//! without it they run sequentially. `force_sequential` flips the default-on
//! parallel path off at runtime so benchmarks can compare both code paths in
//! a single binary. Results are always collected in input order, so the two
//! paths produce identical output.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Globally disable (or re-enable) the rayon path.
pub fn force_sequential(yes: bool) {
    FORCE_SEQUENTIAL.store(yes, Ordering::SeqCst);
}

/// True when the rayon path is compiled in and not overridden.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Map `f` over `items`, in parallel when enabled, preserving order.
pub fn map_collect<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Sequential map with the same signature, for benchmark baselines.
pub fn map_collect_seq<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    F: Fn(&I) -> O,
{
    items.iter().map(f).collect()
}

/// Map over indices 0..count, in parallel when enabled, preserving order.
pub fn map_indices<O, F>(count: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return (0..count).into_par_iter().map(f).collect();
        }
    }
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let par = map_collect(&xs, |x| x * x);
        let seq = map_collect_seq(&xs, |x| x * x);
        assert_eq!(par, seq);
    }

    #[test]
    fn force_sequential_round_trips() {
        force_sequential(true);
        assert!(!parallel_enabled());
        force_sequential(false);
    }
}

//! Execution strategy for the data-parallel loops (time slices, histogram
//! chunks, sweep points). With the `parallel` feature off every strategy
//! runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// `(0..n).map(f).collect()`, possibly across threads. Output order is
/// always index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel if n > 1 => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Maps over items in parallel or sequentially, preserving order.
pub fn map_slice<I, T, F>(mode: ExecMode, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Send + Sync,
{
    map_indexed(mode, items.len(), |k| f(&items[k]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let seq = map_indexed(ExecMode::Sequential, 1000, |k| k * k);
        let par = map_indexed(ExecMode::Parallel, 1000, |k| k * k);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);
    }
}

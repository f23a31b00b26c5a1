//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the hot loops run on the rayon
//! global pool unless a caller asks for [`Parallelism::Sequential`]. Without
//! the feature every call runs sequentially. Results are identical either way:
//! each output slot is computed independently and collected in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for the data-parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// `Parallel` when compiled with the `parallel` feature, otherwise `Sequential`.
    pub fn available() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }

    #[cfg(feature = "parallel")]
    fn is_parallel(self) -> bool {
        self == Parallelism::Parallel
    }
}

/// Maps `f` over `0..len`, collecting results in index order.
pub fn map_range<R, F>(len: usize, mode: Parallelism, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..len).into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = mode;
    (0..len).map(f).collect()
}

/// Maps `f` over a slice, collecting results in input order.
pub fn map_slice<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = mode;
    items.iter().map(f).collect()
}

/// Fallible variant of [`map_slice`]; returns the first error in input order.
pub fn try_map_slice<T, R, E, F>(items: &[T], mode: Parallelism, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map_slice(items, mode, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_range(1000, Parallelism::Sequential, |i| (i as f64).sqrt());
        let par = map_range(1000, Parallelism::Parallel, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
    }

    #[test]
    fn try_map_reports_first_error() {
        let items: Vec<i32> = (0..100).collect();
        let r: Result<Vec<i32>, i32> =
            try_map_slice(&items, Parallelism::Parallel, |&x| if x % 30 == 29 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(29));
    }
}

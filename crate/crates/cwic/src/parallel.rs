//! Thin switch between rayon and sequential execution.
//!
//! Every parallel loop in the crate maps disjoint output elements, so the
//! result is bitwise identical for any thread count.  The `parallel` feature
//! selects whether rayon is available at all; the boolean argument selects
//! it per call so the command line can force sequential execution at
//! runtime.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(parallel: bool, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        (0..count).into_par_iter().map(f).collect()
    } else {
        (0..count).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(_parallel: bool, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_slice<'a, I, T, F>(parallel: bool, items: &'a [I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&'a I) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_slice<'a, I, T, F>(_parallel: bool, items: &'a [I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&'a I) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

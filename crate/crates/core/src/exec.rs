//! Execution strategy for the data-parallel inner loops.
//!
//! Every hot loop in the workspace (batch prediction, gradient partial sums,
//! per-site generation, per-fold training, per-prime NTT work, per-chunk
//! encryption) goes through [`Exec`]. With the `parallel` feature enabled the
//! `Parallel` variant dispatches to rayon; without it both variants run the
//! same sequential code path.
//!
//! Results never depend on the variant: work is split into fixed index ranges
//! and partial results are combined in index order, so floating-point sums are
//! bitwise identical between the two strategies and across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when this strategy will actually fan out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f` to every element in place.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }

    /// Maps `f` over consecutive chunks of `items` of length `chunk` (the last
    /// may be short), preserving chunk order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_chunks(chunk).map(f).collect();
        }
        items.chunks(chunk).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let sum = |e: Exec| -> f64 { e.map_chunks(&xs, 257, |c| c.iter().sum::<f64>()).iter().sum() };
        assert_eq!(sum(Exec::Sequential).to_bits(), sum(Exec::Parallel).to_bits());
        assert_eq!(
            Exec::Sequential.map_range(100, |i| i * i),
            Exec::Parallel.map_range(100, |i| i * i)
        );
    }

    #[test]
    fn for_each_mut_visits_every_index() {
        let mut v = vec![0usize; 64];
        Exec::Parallel.for_each_mut(&mut v, |i, x| *x = i + 1);
        assert!(v.iter().enumerate().all(|(i, x)| *x == i + 1));
    }
}

use memtrack_core::memnet::Executor;
use rayon::prelude::*;

/// [`Executor`] backed by a dedicated rayon pool. Results come back in index
/// order, so training is bit-identical for any thread count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    /// `threads == 0` lets rayon pick the number of available cores.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Parallel { pool: rayon::ThreadPoolBuilder::new().num_threads(threads).build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use memtrack_core::memnet::Sequential;

    #[test]
    fn matches_sequential_order() {
        let p = Parallel::new(3).unwrap();
        let f = |i: usize| (i * i) as f64 / 7.0;
        assert_eq!(p.map(100, f), Sequential.map(100, f));
        assert_eq!(p.threads(), 3);
    }
}

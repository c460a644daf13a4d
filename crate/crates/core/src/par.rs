//! Data-parallel helpers with a sequential fallback.
//!
//! Results are always returned in index order, so callers that fold them
//! sequentially get identical output whatever the thread count.

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    /// Rayon work-stealing pool when the `parallel` feature is on,
    /// sequential otherwise.
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    /// Evaluate `f(i)` for `i in 0..n` and collect in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_schedules_agree() {
        let a = Exec::Parallel.map(1000, |i| (i as f64).sqrt());
        let b = Exec::Sequential.map(1000, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }
}

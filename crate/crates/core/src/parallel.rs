//! Order-preserving map over independent jobs, parallel when the
//! `parallel` feature is enabled.

/// How a batch of independent jobs is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    /// Up to `workers` threads; `0` means one per available core.
    Parallel {
        workers: usize,
    },
    /// [`ExecPolicy::Parallel`] with all cores when compiled in, otherwise sequential.
    #[default]
    Auto,
}

impl ExecPolicy {
    pub fn with_workers(workers: usize) -> Self {
        if workers == 1 {
            ExecPolicy::Sequential
        } else {
            ExecPolicy::Parallel { workers }
        }
    }

    /// Whether this build can honour a parallel policy.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Applies `f` to every item; results keep the input order.
pub fn map<T, R, F>(policy: ExecPolicy, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match policy {
        ExecPolicy::Sequential => items.iter().map(f).collect(),
        ExecPolicy::Auto => par_map(items, f, 0),
        ExecPolicy::Parallel { workers } => par_map(items, f, workers),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F, workers: usize) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if workers == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        // a pool that cannot be built still leaves the global one
        Err(_) => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F, _workers: usize) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

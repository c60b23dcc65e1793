//! Data-parallel execution with a sequential fallback.
//!
//! Everything that fans out over independent work (runner plans, GA
//! generations, per-agent trip extraction) goes through [`Exec`]. Results are
//! always returned in input order, so output never depends on scheduling.
//! Without the `parallel` feature every mode runs on the calling thread.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Worker count; 0 means one per available core.
    Parallel(usize),
}

impl Default for Exec {
    fn default() -> Self {
        Exec::Parallel(0)
    }
}

impl Exec {
    pub fn with_workers(n: usize) -> Self {
        if n <= 1 {
            Exec::Sequential
        } else {
            Exec::Parallel(n)
        }
    }

    /// Whether work actually fans out (false when built without `parallel`).
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Exec::Parallel(_))
    }

    pub fn workers(self) -> usize {
        match self {
            Exec::Sequential => 1,
            Exec::Parallel(0) => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Exec::Parallel(n) => n,
        }
    }

    /// Order-preserving map with work stealing; suited to many small items.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return match self.pool() {
                Some(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
                None => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            };
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    /// Drains `items` through a FIFO queue served by `workers()` workers:
    /// item k starts no earlier than item k-1, and a worker picks the next
    /// item as soon as it is free.
    pub fn queue<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        self.queue_in(&self.make_pool(), items, &f)
    }

    /// Runs consecutive groups of `group_size` items through the queue, with a
    /// barrier between groups. The last group may be smaller.
    pub fn groups<T, R, F>(self, items: &[T], group_size: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        let pool = self.make_pool();
        let mut out = Vec::with_capacity(items.len());
        for (g, chunk) in items.chunks(group_size.max(1)).enumerate() {
            let base = g * group_size.max(1);
            out.extend(self.queue_in(&pool, chunk, &|i, t| f(base + i, t)));
        }
        out
    }

    #[cfg(feature = "parallel")]
    fn pool(self) -> Option<rayon::ThreadPool> {
        match self {
            Exec::Parallel(n) if n > 0 => rayon::ThreadPoolBuilder::new().num_threads(n).build().ok(),
            _ => None,
        }
    }

    fn make_pool(self) -> Pool {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return Pool { rayon: self.pool(), workers: self.workers() };
        }
        Pool {
            #[cfg(feature = "parallel")]
            rayon: None,
            workers: 1,
        }
    }

    fn queue_in<T, R, F>(self, pool: &Pool, items: &[T], f: &F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        let workers = pool.workers.min(items.len());
        if workers <= 1 {
            return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
        let work = || loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            if i >= items.len() {
                break;
            }
            let r = f(i, &items[i]);
            *slots[i].lock().expect("result slot") = Some(r);
        };
        pool.scope(workers, &work);
        slots.into_iter().map(|m| m.into_inner().expect("result slot").expect("every item ran")).collect()
    }
}

/// An optional dedicated rayon pool plus the number of queue workers.
struct Pool {
    #[cfg(feature = "parallel")]
    rayon: Option<rayon::ThreadPool>,
    workers: usize,
}

impl Pool {
    fn scope(&self, workers: usize, work: &(dyn Fn() + Sync)) {
        #[cfg(feature = "parallel")]
        {
            let spawn_all = || {
                rayon::scope(|s| {
                    for _ in 0..workers {
                        s.spawn(|_| work());
                    }
                })
            };
            match &self.rayon {
                Some(p) => p.install(spawn_all),
                None => spawn_all(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            work();
        }
    }
}

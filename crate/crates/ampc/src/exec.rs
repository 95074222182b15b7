use std::sync::atomic::{AtomicUsize, Ordering};

use ampc_core::exec::Executor;

/// Scoped worker threads pulling indices from a shared counter. Results come back in
/// index order, so output does not depend on the worker count.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    pub workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> Self {
        Self { workers: workers.max(1) }
    }
}

impl Executor for Threaded {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        if self.workers == 1 || n < 2 {
            return (0..n).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let mut parts: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..self.workers.min(n))
                .map(|_| {
                    s.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= n {
                                break out;
                            }
                            out.push((i, f(i)));
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut all: Vec<(usize, T)> = parts.drain(..).flatten().collect();
        all.sort_by_key(|(i, _)| *i);
        all.into_iter().map(|(_, t)| t).collect()
    }
}

//! Execution modes shared by the benches.
//!
//! With `parallel`, each benchmark runs inside a one-thread rayon pool and
//! inside the full pool. Without it there is a single `fallback` mode that
//! uses the sequential code paths. Compare the two builds with
//! `cargo bench` and `cargo bench --no-default-features`.

pub struct Mode {
    pub name: &'static str,
    #[cfg(feature = "parallel")]
    pool: rayon::ThreadPool,
}

impl Mode {
    pub fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        return self.pool.install(f);
        #[cfg(not(feature = "parallel"))]
        f()
    }
}

#[cfg(feature = "parallel")]
pub fn modes() -> Vec<Mode> {
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    vec![
        Mode { name: "rayon-1", pool: pool(1) },
        Mode { name: "rayon-all", pool: pool(0) },
    ]
}

#[cfg(not(feature = "parallel"))]
pub fn modes() -> Vec<Mode> {
    vec![Mode { name: "fallback" }]
}

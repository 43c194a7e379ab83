//! Bootstrap draws on a rayon pool. Draw `b` uses its own random stream, so
//! the result does not depend on the number of threads.

use cdep_core::inference::BootstrapSetup;
use cdep_core::{BootstrapDraws, Result};
use rayon::prelude::*;

pub fn thread_pool(threads: Option<usize>) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().expect("thread pool")
}

pub fn par_bootstrap(setup: &BootstrapSetup<'_>, draws: usize) -> Result<BootstrapDraws> {
    let outcomes = (0..draws).into_par_iter().map(|b| setup.draw(b)).collect::<Result<Vec<_>>>()?;
    Ok(setup.assemble(outcomes))
}

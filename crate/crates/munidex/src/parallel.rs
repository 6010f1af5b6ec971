//! Thread-pool drivers for the core's embarrassingly parallel loops. Every
//! driver returns exactly what the sequential core routine returns.

use munidex_core::backtest::{baseline_portfolio, summarize_baseline, BaselineSummary, StrategySpec, Universe};
use munidex_core::econometrics::{build_hedonic_index, HedonicConfig, HedonicIndex};
use munidex_core::forecaster::{ChunkResult, ChunkRunner};
use munidex_core::transactions::TransactionRecord;
use munidex_core::{AreaCode, Panel};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

pub fn pool(jobs: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

/// Gradient chunks evaluated on a thread pool; results keep chunk order.
pub struct PoolRunner<'a>(pub &'a ThreadPool);

impl ChunkRunner for PoolRunner<'_> {
    fn run(
        &self,
        n_chunks: usize,
        job: &(dyn Fn(usize) -> munidex_core::Result<ChunkResult> + Sync),
    ) -> Vec<munidex_core::Result<ChunkResult>> {
        self.0.install(|| (0..n_chunks).into_par_iter().map(job).collect())
    }
}

pub fn random_baseline(
    pool: &ThreadPool,
    spec: &StrategySpec,
    index: &Panel,
    universe: &Universe,
    n_portfolios: usize,
) -> Result<BaselineSummary> {
    let runs = pool.install(|| {
        (0..n_portfolios as u64)
            .into_par_iter()
            .map(|i| baseline_portfolio(spec, index, universe, i))
            .collect::<munidex_core::Result<Vec<_>>>()
    })?;
    Ok(summarize_baseline(&runs)?)
}

/// Hedonic index per municipality, in area order.
pub fn hedonic_indices(
    pool: &ThreadPool,
    groups: &[(AreaCode, Vec<TransactionRecord>)],
    config: &HedonicConfig,
) -> Vec<(AreaCode, munidex_core::Result<HedonicIndex>)> {
    pool.install(|| {
        groups
            .par_iter()
            .map(|(a, recs)| (*a, build_hedonic_index(recs, config)))
            .collect()
    })
}

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{IndexVec, PrefixSumTable, Rect};
use crate::models::{
    sample_into, ChannelSamplers, CompiledModel, FieldModel, FrozenPast, InnovationLattice,
    SeedRecord,
};
use crate::rng::{derive_seed, SeedRole};

/// Frozen past number `id`: the quadrant `{w <= 0}` filled from the stream
/// `derive_seed(base, Past, id)`.
pub fn frozen_past(dim: usize, base_seed: u64, id: u64) -> FrozenPast {
    FrozenPast::seeded(IndexVec::zeros(dim), derive_seed(base_seed, SeedRole::Past, id))
}

/// Replicate stream base for a run: the frozen-past key in quenched runs,
/// the run seed otherwise.
pub fn replicate_base(base_seed: u64, past: Option<&FrozenPast>) -> u64 {
    match past.map(|p| &p.source) {
        Some(crate::models::PastSource::Seeded(k)) => *k,
        _ => base_seed,
    }
}

/// Draws field values over a fixed window, one replicate at a time.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    pub model: FieldModel,
    pub compiled: CompiledModel,
    samplers: ChannelSamplers,
    pub window: Rect,
    pub lattice_window: Rect,
}

/// Per-worker buffers.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub lattice: InnovationLattice,
    pub values: Vec<f64>,
}

impl FieldSampler {
    pub fn new(model: &FieldModel, window: Rect) -> Result<Self> {
        model.validate()?;
        if window.dim() != model.dim {
            return Err(Error::Structural(format!(
                "window {window} does not match the model dimension {}",
                model.dim
            )));
        }
        if window.is_empty() {
            return Err(Error::Parameter(format!("window {window} is empty")));
        }
        let compiled = model.compile()?;
        let lattice_window = compiled.required_window(&window)?;
        let samplers = ChannelSamplers::new(&model.channel_specs()?)?;
        Ok(FieldSampler {
            model: model.clone(),
            compiled,
            samplers,
            window,
            lattice_window,
        })
    }

    /// Sampler over the origin box `[0, sizes)`.
    pub fn origin(model: &FieldModel, sizes: &[usize]) -> Result<Self> {
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::Parameter("sizes must be at least 1".into()));
        }
        Self::new(model, Rect::origin_box(sizes))
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            lattice: InnovationLattice {
                window: self.lattice_window.clone(),
                channels: Vec::new(),
                frozen: None,
                seed: SeedRecord {
                    base_seed: 0,
                    replicate: 0,
                },
            },
            values: vec![0.0; self.window.volume()],
        }
    }

    /// Field values over the window for one replicate, row-major.
    pub fn sample<'a>(
        &self,
        ws: &'a mut Workspace,
        base_seed: u64,
        replicate: u64,
        frozen: Option<&FrozenPast>,
    ) -> Result<&'a [f64]> {
        sample_into(&mut ws.lattice, &self.samplers, base_seed, replicate, frozen)?;
        self.compiled
            .field_values_into(&ws.lattice, &self.window, &mut ws.values)?;
        Ok(&ws.values)
    }

    pub fn prefix(
        &self,
        ws: &mut Workspace,
        base_seed: u64,
        replicate: u64,
        frozen: Option<&FrozenPast>,
    ) -> Result<PrefixSumTable> {
        self.sample(ws, base_seed, replicate, frozen)?;
        PrefixSumTable::from_row_major_with_max_dim(&self.window, &ws.values, 8)
    }
}

/// Run `count` independent tasks on `threads` workers (0 = all available)
/// and return their results in task order.
pub fn run_parallel<W, T, I, F>(threads: usize, count: usize, init: I, task: F) -> Result<Vec<T>>
where
    T: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..count)
            .into_par_iter()
            .map_init(&init, |w, i| task(w, i))
            .collect::<Result<Vec<T>>>()
    })
}

/// Thread count from an explicit request, then `ORTHOFIELD_THREADS`, then
/// every available core.
pub fn resolve_threads(requested: Option<usize>) -> usize {
    if let Some(t) = requested.filter(|&t| t > 0) {
        return t;
    }
    if let Some(t) = std::env::var("ORTHOFIELD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
    {
        return t;
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

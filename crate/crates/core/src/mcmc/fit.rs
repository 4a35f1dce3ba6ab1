use serde::{Deserialize, Serialize};

use super::model::{McmcControl, ModelSpec};
use super::sampler::Chain;
use crate::data::{Dataset, ExposureMatrix, ModifierTable};
use crate::error::Result;
use crate::tree::{MemberRecord, MoveKind};

/// Row-major draws: one row per retained iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawMatrix<T> {
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Copy> DrawMatrix<T> {
    pub fn new(cols: usize, values: Vec<T>) -> Self {
        assert!(cols == 0 && values.is_empty() || cols > 0 && values.len() % cols == 0);
        Self { cols, values }
    }

    pub fn with_capacity(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            values: Vec::with_capacity(cols * rows),
        }
    }

    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.values.len() / self.cols
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows()).map(|i| self.values[i * self.cols + j]).collect()
    }

    pub fn push_row(&mut self, row: &[T]) {
        assert_eq!(row.len(), self.cols);
        self.values.extend_from_slice(row);
    }
}

/// One constant cell of a lagged interaction surface: exposure pair `pair`
/// (index into [`FitMeta::pairs`]), lags `lags1` of the lower-indexed
/// exposure by lags `lags2` of the other, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionBlock {
    pub pair: usize,
    pub lags1: (usize, usize),
    pub lags2: (usize, usize),
    pub value: f64,
}

/// Proposal counts per move kind, indexed grow, prune, change.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveLedger {
    pub proposed: [u32; 3],
    pub accepted: [u32; 3],
    pub rejected: [u32; 3],
}

impl MoveLedger {
    pub fn add(&mut self, other: &MoveLedger) {
        for k in 0..3 {
            self.proposed[k] += other.proposed[k];
            self.accepted[k] += other.accepted[k];
            self.rejected[k] += other.rejected[k];
        }
    }

    pub fn acceptance(&self, kind: MoveKind) -> Option<f64> {
        let k = kind.index();
        (self.proposed[k] > 0).then(|| f64::from(self.accepted[k]) / f64::from(self.proposed[k]))
    }
}

/// Tree-move bookkeeping for one post-burn-in iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub dlm: MoveLedger,
    pub modifier: MoveLedger,
    pub mean_dlm_leaves: f64,
    pub mean_modifier_leaves: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub model_class: String,
    pub spec: ModelSpec,
    pub control: McmcControl,
    pub rows: usize,
    pub lags: usize,
    pub exposure_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub modifier_names: Vec<String>,
    /// Scale factor applied to each exposure before fitting.
    pub scale_factors: Vec<f64>,
    /// Interacting exposure pairs `(m1, m2)`, `m1 <= m2`.
    pub pairs: Vec<(usize, usize)>,
    pub data_hash: String,
}

impl FitMeta {
    pub fn new(spec: &ModelSpec, control: &McmcControl, data: &Dataset) -> Self {
        let pairs = if spec.has_interactions() {
            spec.interaction_mode.pairs(data.exposures().len())
        } else {
            Vec::new()
        };
        Self {
            model_class: spec.model_class().to_string(),
            spec: spec.clone(),
            control: control.clone(),
            rows: data.rows(),
            lags: data.lags(),
            exposure_names: data.exposure_names(),
            covariate_names: data.design().names().to_vec(),
            modifier_names: spec.modifiers.iter().map(|d| d.name.clone()).collect(),
            scale_factors: data.exposures().iter().map(ExposureMatrix::scale_factor).collect(),
            pairs,
            data_hash: data.content_hash(),
        }
    }
}

/// Retained posterior draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorFit {
    pub meta: FitMeta,
    pub gamma_draws: DrawMatrix<f64>,
    /// Empty for the logit family.
    pub sigma2_draws: Vec<f64>,
    pub tau2_draws: Vec<f64>,
    /// Per exposure, draws × lags. With modifier trees this is the average
    /// over rows of each row's lag effect.
    pub theta_draws: Vec<DrawMatrix<f64>>,
    /// Per draw, the interaction cells of every member (fixed-effect
    /// mixtures with interactions only).
    pub interaction_draws: Vec<Vec<InteractionBlock>>,
    /// Per draw, how many DLM-tree slots each exposure fills.
    pub exposure_selection_counts: DrawMatrix<u32>,
    /// Per draw, 1 when some modifier tree splits on the modifier.
    pub modifier_usage: DrawMatrix<u8>,
    /// Per draw, variance across rows of the total exposure contribution.
    pub contribution_var: Vec<f64>,
    /// Every post-burn-in iteration, thinned or not.
    pub tree_logs: Vec<IterationLog>,
    /// Per draw, every member's trees (modifier-tree models only).
    pub het_records: Vec<Vec<MemberRecord>>,
    pub invariant_violations: Vec<String>,
    pub violation_count: usize,
    /// Inputs kept for marginalization and individualized effects.
    pub exposures: Vec<ExposureMatrix>,
    pub modifiers: ModifierTable,
}

impl PosteriorFit {
    pub fn draws(&self) -> usize {
        self.tau2_draws.len()
    }

    /// Σ_t θ_m(t) per draw.
    pub fn cumulative_draws(&self, exposure: usize) -> Vec<f64> {
        let th = &self.theta_draws[exposure];
        (0..th.rows()).map(|i| th.row(i).iter().sum()).collect()
    }

    /// Acceptance totals over the retained window.
    pub fn move_totals(&self) -> (MoveLedger, MoveLedger) {
        let mut dlm = MoveLedger::default();
        let mut modifier = MoveLedger::default();
        for l in &self.tree_logs {
            dlm.add(&l.dlm);
            modifier.add(&l.modifier);
        }
        (dlm, modifier)
    }
}

/// Run one chain seeded with `control.seed`.
pub fn fit(data: &Dataset, spec: &ModelSpec, control: &McmcControl) -> Result<PosteriorFit> {
    Ok(Chain::new(data, spec, control, control.seed)?.run())
}

/// Worker threads for [`run_chains`]: `LAGGARD_THREADS` when set, otherwise
/// the available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("LAGGARD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run `control.n_chains` chains with seeds `seed, seed + 1, …`. Results do
/// not depend on how many threads run them.
pub fn run_chains(data: &Dataset, spec: &ModelSpec, control: &McmcControl) -> Result<Vec<PosteriorFit>> {
    spec.validate_for(data)?;
    control.validate()?;
    let chains = control.n_chains;
    let threads = thread_budget().min(chains).max(1);
    let controls: Vec<McmcControl> = (0..chains)
        .map(|c| McmcControl {
            seed: control.seed.wrapping_add(c as u64),
            n_chains: 1,
            ..control.clone()
        })
        .collect();
    if threads == 1 {
        return controls.iter().map(|c| fit(data, spec, c)).collect();
    }
    let mut results: Vec<Option<Result<PosteriorFit>>> = (0..chains).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let controls = &controls;
                s.spawn(move || {
                    (t..chains)
                        .step_by(threads)
                        .map(|c| (c, fit(data, spec, &controls[c])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("chain thread panicked") {
                results[c] = Some(r);
            }
        }
    });
    results.into_iter().map(|r| r.expect("every chain ran")).collect()
}

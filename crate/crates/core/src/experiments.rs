//! Experiment suites: homophily sweep, fake-edge robustness, depth sweep,
//! ablations, latent correlation, lemma checks and ICR sensitivity.
//!
//! Every suite returns plain rows; the CLI writes them as CSV next to a
//! run-record CSV and a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise;
use crate::error::{Error, Result};
use crate::graph::{homophily_ratio, inject_fake_edges, make_split, NodeSplit, SplitScheme};
use crate::io::{Dataset, FeatureNorm};
use crate::model::{EsGnn, ModelInput, ModelKind, Params, Variant};
use crate::synth::{appendix_param_table, generate, EdgeTag, SynthConfig};
use crate::tensor::CsrMatrix;
use crate::train::{train, RunRecord, TrainConfig, TrainResult};

/// Desk-scale training settings: short schedules, and for ES-GNN a
/// small residual weight, no dropout and a small ICR coefficient.
pub mod presets {
    use crate::io::FeatureNorm;
    use crate::model::ModelKind;
    use crate::train::TrainConfig;

    pub const EPOCHS: usize = 200;
    /// Feature preprocessing for the synthetic graphs.
    pub const SYNTH_FEATURE_NORM: FeatureNorm = FeatureNorm::RowL2;
    pub const PATIENCE: usize = 50;

    pub fn for_model(model: ModelKind) -> TrainConfig {
        let base = TrainConfig {
            model,
            epochs: EPOCHS,
            patience: PATIENCE,
            ..TrainConfig::default()
        };
        match model {
            ModelKind::Esgnn => TrainConfig {
                dropout: 0.0,
                eps_r: 0.1,
                eps_ir: 0.1,
                lambda_icr: 1e-4,
                ..base
            },
            _ => base,
        }
    }

    pub fn esgnn() -> TrainConfig {
        for_model(ModelKind::Esgnn)
    }
}

/// Worker count: `ESGNN_THREADS` if set, else the available parallelism.
pub fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("ESGNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(t) if t > 0 => t,
        _ => avail,
    }
}

/// Evaluates `f(0..count)` on a bounded pool, keeping index order.
pub fn run_parallel<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let threads = worker_threads().min(count.max(1));
    if threads <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Which (split, seed) pairs to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub splits: usize,
    pub seeds: Vec<u64>,
    /// Pair split `i` with `seeds[i]` instead of crossing them.
    pub paired: bool,
}

impl Plan {
    /// `count` runs, split `i` paired with seed `i`.
    pub fn paired(count: usize) -> Self {
        Plan {
            splits: count,
            seeds: (0..count as u64).collect(),
            paired: true,
        }
    }

    pub fn runs(&self) -> Result<Vec<(usize, u64)>> {
        if self.paired {
            if self.splits != self.seeds.len() {
                return Err(Error::Contract(format!(
                    "paired plan with {} splits and {} seeds",
                    self.splits,
                    self.seeds.len()
                )));
            }
            Ok(self
                .seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| (i, s))
                .collect())
        } else {
            Ok((0..self.splits)
                .flat_map(|i| self.seeds.iter().map(move |&s| (i, s)))
                .collect())
        }
    }
}

/// Split number `id` of a dataset, or the stored split of that name.
pub fn split_for(data: &Dataset, scheme: SplitScheme, id: usize) -> Result<NodeSplit> {
    if let Some(s) = data.splits.get(&format!("split{id}")) {
        return Ok(s.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5_0117 + id as u64);
    make_split(&data.labels, scheme, &mut rng)
}

pub fn run_id(dataset: &str, cfg: &TrainConfig, split_id: usize, extra: &str) -> String {
    format!(
        "{dataset}/{}/{}/K{}/s{}/p{split_id}{extra}",
        cfg.model,
        cfg.variant_label(),
        cfg.layers,
        cfg.seed
    )
}

/// A dataset ready for training, with its sparse feature copy if any.
pub struct Prepared {
    pub data: Dataset,
    pub sparse: Option<CsrMatrix>,
}

impl Prepared {
    pub fn new(data: Dataset) -> Self {
        let sparse = data.sparse_features();
        Prepared { data, sparse }
    }

    pub fn input(&self) -> ModelInput<'_> {
        let input = ModelInput::new(&self.data.graph, &self.data.features);
        match &self.sparse {
            Some(xs) => input.with_sparse(xs),
            None => input,
        }
    }

    pub fn train(&self, split: &NodeSplit, cfg: &TrainConfig) -> Result<TrainResult> {
        let model = cfg.build()?;
        train(model.as_ref(), &self.data, self.sparse.as_ref(), split, cfg)
    }
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..*cfg }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h_target: f64,
    pub h_measured: f64,
    pub model: String,
    pub variant: String,
    pub seed: u64,
    pub acc_val: f64,
    pub acc_test: f64,
    pub best_epoch: usize,
}

/// Every model on every appendix row; seed `s` draws the graph, the split
/// and the initialization.
pub fn sweep_homophily(
    base: &SynthConfig,
    norm: FeatureNorm,
    label_rate: f64,
    models: &[TrainConfig],
    seeds: &[u64],
) -> Result<(Vec<SweepRow>, Vec<RunRecord>)> {
    let table = appendix_param_table();
    let mut cells = Vec::new();
    for (r, _) in table.iter().enumerate() {
        for &s in seeds {
            cells.push((r, s));
        }
    }
    let out = run_parallel(cells.len(), |c| {
        let (r, seed) = cells[c];
        let row = table[r];
        let syn = generate(&SynthConfig {
            p_e: row.p_e,
            p_i: row.p_i,
            kappa: row.kappa,
            seed,
            ..*base
        })?;
        let name = format!("syn-h{:.1}", row.h_target);
        let prepared = Prepared::new(Dataset::from_synth(name.clone(), syn).normalized(norm));
        let h = homophily_ratio(&prepared.data.graph, &prepared.data.labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = make_split(
            &prepared.data.labels,
            SplitScheme::label_rate(label_rate),
            &mut rng,
        )?;
        let mut rows = Vec::new();
        for m in models {
            let cfg = with_seed(m, seed);
            let res = prepared.train(&split, &cfg)?;
            rows.push((
                SweepRow {
                    h_target: row.h_target,
                    h_measured: h,
                    model: cfg.model.to_string(),
                    variant: cfg.variant_label(),
                    seed,
                    acc_val: res.acc_val,
                    acc_test: res.acc_test,
                    best_epoch: res.best_epoch,
                },
                RunRecord::new(
                    run_id(&name, &cfg, seed as usize, ""),
                    &name,
                    seed as usize,
                    &cfg,
                    &res,
                ),
            ));
        }
        Ok(rows)
    })?;
    Ok(out.into_iter().flatten().unzip())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub rate: f64,
    pub model: String,
    pub variant: String,
    pub split_id: usize,
    pub seed: u64,
    pub injected: usize,
    pub acc_test: f64,
    /// Share of injected edges whose final-layer `a_R` is below 0.5
    /// (ES-GNN only, absent at rate 0).
    pub removal_fraction: Option<f64>,
    /// Same share over the original edges.
    pub original_below_half: Option<f64>,
}

/// Final-layer removal statistics: the share of `injected` edges with
/// `a_R < 0.5`, and the same share over the remaining (original) edges.
pub fn removal_stats(
    model: &EsGnn,
    params: &Params,
    input: &ModelInput<'_>,
    injected: &[(usize, usize)],
) -> Result<Option<(f64, f64)>> {
    if injected.is_empty() {
        return Ok(None);
    }
    let ins = model.inspect(params, input)?;
    let last = ins
        .splits
        .last()
        .ok_or_else(|| Error::Contract("model has no layers".into()))?;
    let mut fake = vec![false; input.graph.num_edges()];
    for &(u, v) in injected {
        let e = input
            .graph
            .edge_id(u, v)
            .ok_or_else(|| Error::Contract(format!("edge ({u}, {v}) not in graph")))?;
        fake[e] = true;
    }
    let (mut removed, mut dropped, mut original) = (0usize, 0usize, 0usize);
    for (e, &a) in last.a_r.iter().enumerate() {
        if fake[e] {
            removed += (a < 0.5) as usize;
        } else {
            original += 1;
            dropped += (a < 0.5) as usize;
        }
    }
    let removal = removed as f64 / injected.len() as f64;
    let collateral = if original == 0 {
        0.0
    } else {
        dropped as f64 / original as f64
    };
    Ok(Some((removal, collateral)))
}

pub fn robustness(
    data: &Dataset,
    scheme: SplitScheme,
    rates: &[f64],
    models: &[TrainConfig],
    plan: &Plan,
) -> Result<(Vec<RobustnessRow>, Vec<RunRecord>)> {
    let runs = plan.runs()?;
    let mut cells = Vec::new();
    for (ri, &rate) in rates.iter().enumerate() {
        for &(split_id, seed) in &runs {
            cells.push((ri, rate, split_id, seed));
        }
    }
    let out = run_parallel(cells.len(), |c| {
        let (ri, rate, split_id, seed) = cells[c];
        let split = split_for(data, scheme, split_id)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xFA4E_0000 + ri as u64));
        let (graph, injected) = inject_fake_edges(&data.graph, rate, &mut rng)?;
        let perturbed = Prepared::new(Dataset {
            graph,
            provenance: Vec::new(),
            ..data.clone()
        });
        let name = format!("{}+fake{rate}", data.name);
        let mut rows = Vec::new();
        for m in models {
            let cfg = with_seed(m, seed);
            let res = perturbed.train(&split, &cfg)?;
            let stats = if cfg.model == ModelKind::Esgnn {
                let model = EsGnn::new(cfg.esgnn())?;
                removal_stats(&model, &res.params, &perturbed.input(), &injected)?
            } else {
                None
            };
            rows.push((
                RobustnessRow {
                    rate,
                    model: cfg.model.to_string(),
                    variant: cfg.variant_label(),
                    split_id,
                    seed,
                    injected: injected.len(),
                    acc_test: res.acc_test,
                    removal_fraction: stats.map(|s| s.0),
                    original_below_half: stats.map(|s| s.1),
                },
                RunRecord::new(
                    run_id(&name, &cfg, split_id, ""),
                    &name,
                    split_id,
                    &cfg,
                    &res,
                ),
            ));
        }
        Ok(rows)
    })?;
    Ok(out.into_iter().flatten().unzip())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub model: String,
    pub variant: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub split_id: usize,
    pub seed: u64,
    pub acc_val: f64,
    pub acc_test: f64,
}

pub fn depth_sweep(
    data: &Dataset,
    scheme: SplitScheme,
    depths: &[usize],
    models: &[TrainConfig],
    plan: &Plan,
) -> Result<(Vec<DepthRow>, Vec<RunRecord>)> {
    let prepared = Prepared::new(data.clone());
    let runs = plan.runs()?;
    let mut cells = Vec::new();
    for m in models {
        for &k in depths {
            for &(split_id, seed) in &runs {
                cells.push((
                    TrainConfig {
                        layers: k,
                        seed,
                        ..*m
                    },
                    split_id,
                ));
            }
        }
    }
    let out = run_parallel(cells.len(), |c| {
        let (cfg, split_id) = &cells[c];
        let split = split_for(data, scheme, *split_id)?;
        let res = prepared.train(&split, cfg)?;
        Ok((
            DepthRow {
                model: cfg.model.to_string(),
                variant: cfg.variant_label(),
                k: cfg.layers,
                split_id: *split_id,
                seed: cfg.seed,
                acc_val: res.acc_val,
                acc_test: res.acc_test,
            },
            RunRecord::new(
                run_id(&data.name, cfg, *split_id, ""),
                &data.name,
                *split_id,
                cfg,
                &res,
            ),
        ))
    })?;
    Ok(out.into_iter().unzip())
}

/// Precision and recall of flagging task-irrelevant edges by
/// final-layer `a_IR > 0.5`, against generator tags (noise counts as
/// irrelevant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitQuality {
    pub precision: f64,
    pub recall: f64,
    pub flagged: usize,
    pub irrelevant: usize,
}

pub fn split_quality(a_ir: &[f64], tags: &[EdgeTag]) -> Option<SplitQuality> {
    if tags.is_empty() || tags.len() != a_ir.len() {
        return None;
    }
    let (mut tp, mut flagged, mut irrelevant) = (0usize, 0usize, 0usize);
    for (&a, &t) in a_ir.iter().zip(tags) {
        let truth = t != EdgeTag::Relevant;
        let pred = a > 0.5;
        irrelevant += truth as usize;
        flagged += pred as usize;
        tp += (truth && pred) as usize;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Some(SplitQuality {
        precision: ratio(tp, flagged),
        recall: ratio(tp, irrelevant),
        flagged,
        irrelevant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub split_id: usize,
    pub seed: u64,
    pub acc_val: f64,
    pub acc_test: f64,
    pub l_pred: f64,
    pub l_icr: Option<f64>,
    /// Coefficient applied to `l_icr` in the training loss.
    pub lambda_applied: f64,
    pub irrelevant_precision: Option<f64>,
    pub irrelevant_recall: Option<f64>,
}

pub fn ablate(
    data: &Dataset,
    scheme: SplitScheme,
    variants: &[Variant],
    base: &TrainConfig,
    plan: &Plan,
) -> Result<(Vec<AblationRow>, Vec<RunRecord>)> {
    let prepared = Prepared::new(data.clone());
    let runs = plan.runs()?;
    let mut cells = Vec::new();
    for &v in variants {
        for &(split_id, seed) in &runs {
            cells.push((
                TrainConfig {
                    model: ModelKind::Esgnn,
                    variant: v,
                    seed,
                    ..*base
                },
                split_id,
            ));
        }
    }
    let out = run_parallel(cells.len(), |c| {
        let (cfg, split_id) = &cells[c];
        let split = split_for(data, scheme, *split_id)?;
        let res = prepared.train(&split, cfg)?;
        let model = EsGnn::new(cfg.esgnn())?;
        let quality = if cfg.variant.edge_split {
            let ins = model.inspect(&res.params, &prepared.input())?;
            ins.splits
                .last()
                .and_then(|s| split_quality(&s.a_ir, &data.provenance))
        } else {
            None
        };
        Ok((
            AblationRow {
                variant: cfg.variant.name(),
                split_id: *split_id,
                seed: cfg.seed,
                acc_val: res.acc_val,
                acc_test: res.acc_test,
                l_pred: res.final_loss.pred,
                l_icr: res.final_loss.icr,
                lambda_applied: cfg.esgnn().effective_lambda(),
                irrelevant_precision: quality.map(|q| q.precision),
                irrelevant_recall: quality.map(|q| q.recall),
            },
            RunRecord::new(
                run_id(&data.name, cfg, *split_id, ""),
                &data.name,
                *split_id,
                cfg,
                &res,
            ),
        ))
    })?;
    Ok(out.into_iter().unzip())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub lambda_icr: f64,
    pub split_id: usize,
    pub seed: u64,
    pub acc_val: f64,
    pub acc_test: f64,
    pub l_icr: Option<f64>,
}

/// `count` log-spaced values from `lo` to `hi`, with a leading 0 when
/// `with_zero` is set.
pub fn log_grid(lo: f64, hi: f64, count: usize, with_zero: bool) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(Error::Contract(format!(
            "bad log grid [{lo}, {hi}] x {count}"
        )));
    }
    let mut out = Vec::with_capacity(count + 1);
    if with_zero {
        out.push(0.0);
    }
    if count == 1 {
        out.push(lo);
    } else {
        let (a, b) = (lo.ln(), hi.ln());
        out.extend((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()));
    }
    Ok(out)
}

pub fn sensitivity(
    data: &Dataset,
    scheme: SplitScheme,
    lambdas: &[f64],
    base: &TrainConfig,
    plan: &Plan,
) -> Result<(Vec<SensitivityRow>, Vec<RunRecord>)> {
    let prepared = Prepared::new(data.clone());
    let runs = plan.runs()?;
    let mut cells = Vec::new();
    for &l in lambdas {
        for &(split_id, seed) in &runs {
            cells.push((
                TrainConfig {
                    model: ModelKind::Esgnn,
                    lambda_icr: l,
                    seed,
                    ..*base
                },
                split_id,
            ));
        }
    }
    let out = run_parallel(cells.len(), |c| {
        let (cfg, split_id) = &cells[c];
        let split = split_for(data, scheme, *split_id)?;
        let res = prepared.train(&split, cfg)?;
        Ok((
            SensitivityRow {
                lambda_icr: cfg.lambda_icr,
                split_id: *split_id,
                seed: cfg.seed,
                acc_val: res.acc_val,
                acc_test: res.acc_test,
                l_icr: res.final_loss.icr,
            },
            RunRecord::new(
                run_id(&data.name, cfg, *split_id, ""),
                &data.name,
                *split_id,
                cfg,
                &res,
            ),
        ))
    })?;
    Ok(out.into_iter().unzip())
}

/// Pearson correlation between all column pairs; a constant column
/// correlates 0 with everything, itself included.
pub fn pearson_matrix(z: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows().max(1) as f64;
    let d = z.ncols();
    let mean = z.sum_axis(Axis(0)) / n;
    let centered = z - &mean;
    let norms: Vec<f64> = (0..d)
        .map(|j| centered.column(j).dot(&centered.column(j)).sqrt())
        .collect();
    let cov = centered.t().dot(&centered);
    Array2::from_shape_fn((d, d), |(i, j)| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else if i == j {
            1.0
        } else {
            (cov[[i, j]] / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockCorrelation {
    pub within_r: f64,
    pub within_ir: f64,
    pub across: f64,
}

/// Mean absolute off-diagonal correlation inside the first `split`
/// columns, inside the rest, and between the two groups.
pub fn block_correlation(corr: &Array2<f64>, split: usize) -> BlockCorrelation {
    let d = corr.nrows();
    let (mut acc, mut cnt) = ([0.0f64; 3], [0usize; 3]);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let slot = match (i < split, j < split) {
                (true, true) => 0,
                (false, false) => 1,
                _ => 2,
            };
            acc[slot] += corr[[i, j]].abs();
            cnt[slot] += 1;
        }
    }
    let mean = |k: usize| {
        if cnt[k] == 0 {
            0.0
        } else {
            acc[k] / cnt[k] as f64
        }
    };
    BlockCorrelation {
        within_r: mean(0),
        within_ir: mean(1),
        across: mean(2),
    }
}

/// Correlation matrix of the final `[Z_R | Z_IR]` of a trained ES-GNN.
pub fn latent_correlation(
    model: &EsGnn,
    params: &Params,
    input: &ModelInput<'_>,
) -> Result<(Array2<f64>, BlockCorrelation)> {
    let ins = model.inspect(params, input)?;
    let z = concatenate(Axis(1), &[ins.z_r.view(), ins.z_ir.view()])
        .map_err(|e| Error::shape("latent_correlation", e.to_string()))?;
    let corr = pearson_matrix(&z);
    let blocks = block_correlation(&corr, ins.z_r.ncols());
    Ok((corr, blocks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub max_dev: f64,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub trials: usize,
    pub worst_eps: f64,
}

/// `trials` random instances. With one trial the instance has exactly `n`
/// nodes and `d` columns; with more, sizes are drawn from `[2, n]` and
/// `[1, d]`. The first extra trial pins `eps = 1`.
pub fn lemma_trials(seed: u64, n: usize, d: usize, trials: usize) -> Result<LemmaReport> {
    if trials == 0 {
        return Err(Error::Contract("at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LemmaReport {
        max_dev: 0.0,
        n,
        d,
        seed,
        trials,
        worst_eps: f64::NAN,
    };
    for t in 0..trials {
        let (tn, td) = if trials == 1 {
            (n, d)
        } else {
            (
                rng.random_range(2..=n.max(2)),
                rng.random_range(1..=d.max(1)),
            )
        };
        let eps = if t == 1 { Some(1.0) } else { None };
        let (r, e) = denoise::lemma1_random(&mut rng, tn, td, eps)?;
        if r.max_dev > report.max_dev || report.worst_eps.is_nan() {
            report.max_dev = report.max_dev.max(r.max_dev);
            report.worst_eps = e;
        }
    }
    Ok(report)
}

/// Output directory of one subcommand invocation.
pub struct OutDir {
    pub path: PathBuf,
}

impl OutDir {
    /// Refuses a directory that already holds results unless `append`.
    pub fn prepare(path: &Path, append: bool) -> Result<Self> {
        if path.join("results.csv").exists() && !append {
            return Err(Error::Contract(format!(
                "{} already holds results; pass --append or choose another directory",
                path.display()
            )));
        }
        fs::create_dir_all(path)?;
        Ok(OutDir {
            path: path.to_path_buf(),
        })
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.path.join(name);
        let append = path.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(!append)
            .from_writer(file);
        for r in rows {
            w.serialize(r)
                .map_err(|e| Error::Contract(format!("{}: {e}", path.display())))?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn write_matrix(&self, name: &str, m: &Array2<f64>, header: &[String]) -> Result<PathBuf> {
        let path = self.path.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Contract(e.to_string()))?;
        w.write_record(header)
            .map_err(|e| Error::Contract(e.to_string()))?;
        for row in m.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| Error::Contract(e.to_string()))?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn write_manifest(
        &self,
        command: &str,
        config: serde_json::Value,
        seeds: &[u64],
    ) -> Result<PathBuf> {
        let manifest = Manifest {
            command: command.to_string(),
            git_describe: git_describe(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: seeds.to_vec(),
            threads: worker_threads(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let path = self.path.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub git_describe: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub created_unix: u64,
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Mean of `f` over rows selected by `keep`; NaN when none match.
pub fn mean_by<T>(rows: &[T], keep: impl Fn(&T) -> bool, f: impl Fn(&T) -> f64) -> f64 {
    let vals: Vec<f64> = rows.iter().filter(|r| keep(r)).map(f).collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Shared handle so suites can reuse one loaded dataset.
pub type SharedDataset = Arc<Dataset>;

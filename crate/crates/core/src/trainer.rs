//! Training orchestration: balanced sampling, margin loss, alignment
//! regularization, and the alternating adversarial schedule.
//!
//! Per round the combined gradient is ∂L_align/∂θ + λ·∂L_sim/∂θ, applied in
//! one sparse Adagrad step. With alignment disabled λ is fixed to 1 and the
//! trainer degenerates to plain margin-based embedding training.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::alignment::{dist_loss, AlignKind, AlignmentSpec, Sample};
use crate::error::{Error, Result};
use crate::graph::Hin;
use crate::nn::{self, Mlp, MlpSpec};
use crate::sampling::{sample_round, SamplerConfig};
use crate::scoring::{add_to_grad, energy, energy_grad, margin_loss, GradMap, ScoringModel};
use crate::store::{adagrad_step, init_store, EmbeddingStore, OptimizerConfig, TableId};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub model: ScoringModel,
    pub dim: usize,
    pub sampler: SamplerConfig,
    pub alignment: AlignmentSpec,
    pub optimizer: OptimizerConfig,
    /// Discriminator optimizer; the MLP gets its own configurable rate.
    pub mlp_optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub discriminator_steps_per_batch: usize,
    /// Hidden layer widths of the adversarial discriminator.
    pub discriminator_hidden: Vec<usize>,
    /// Cap on entity rows gathered per source for the alignment term
    /// (keeps the pairwise MMD tractable); 0 = no cap.
    pub alignment_sample_cap: usize,
}

impl TrainConfig {
    pub fn new(model: ScoringModel, dim: usize) -> Self {
        TrainConfig {
            model,
            dim,
            sampler: SamplerConfig::default(),
            alignment: AlignmentSpec::default(),
            optimizer: OptimizerConfig::default(),
            mlp_optimizer: OptimizerConfig {
                weight_decay: 0.0,
                ..OptimizerConfig::default()
            },
            epochs: 2000,
            checkpoint_every: 0,
            seed: 0,
            discriminator_steps_per_batch: 1,
            discriminator_hidden: vec![128, 128],
            alignment_sample_cap: 512,
        }
    }

    /// Rounds per epoch: ⌈max_i |E_i| / B⌉.
    pub fn rounds_per_epoch(&self, hin: &Hin) -> u64 {
        let max_edges = hin.sources.iter().map(|s| s.len()).max().unwrap_or(0);
        (max_edges as u64).div_ceil(self.sampler.batch_size as u64).max(1)
    }

    fn effective_kind(&self, hin: &Hin) -> AlignKind {
        if hin.num_sources() < 2 {
            AlignKind::None
        } else {
            self.alignment.kind
        }
    }

    pub fn discriminator_spec(&self, num_sources: usize) -> Result<MlpSpec> {
        let mut dims = vec![self.dim];
        dims.extend_from_slice(&self.discriminator_hidden);
        dims.push(num_sources);
        MlpSpec::new(dims, self.seed.wrapping_add(0x9e3779b9))
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub sim_loss: f64,
    pub align_loss: f64,
    pub disc_loss: f64,
    pub wall_secs: f64,
}

/// Rows gathered from one source's batch for the alignment term, with the
/// parameter rows they came from.
struct GatheredSamples {
    entity_rows: Vec<Vec<f64>>,
    entity_ids: Vec<u64>,
    relation_rows: Vec<Vec<f64>>,
    relation_ids: Vec<u32>,
}

fn gather_samples(
    store: &EmbeddingStore,
    batch: &crate::sampling::Batch,
    cap: usize,
) -> GatheredSamples {
    let mut entity_ids: Vec<u64> = Vec::new();
    for (pos, negs) in batch.positives.iter().zip(&batch.negatives) {
        entity_ids.push(pos.head);
        entity_ids.push(pos.tail);
        for neg in negs {
            // the corrupting entity is the slot that differs
            if neg.head != pos.head {
                entity_ids.push(neg.head);
            } else {
                entity_ids.push(neg.tail);
            }
        }
    }
    if cap > 0 && entity_ids.len() > cap {
        // deterministic evenly-strided subsample
        let stride = entity_ids.len() as f64 / cap as f64;
        entity_ids = (0..cap)
            .map(|i| entity_ids[(i as f64 * stride) as usize])
            .collect();
    }
    let entity_rows = entity_ids
        .iter()
        .map(|&id| store.entity.row(id as usize).to_vec())
        .collect();
    let mut relation_ids: Vec<u32> = batch.positives.iter().map(|t| t.relation).collect();
    relation_ids.sort_unstable();
    relation_ids.dedup();
    let relation_rows = relation_ids
        .iter()
        .map(|&id| store.relation.row(id as usize).to_vec())
        .collect();
    GatheredSamples {
        entity_rows,
        entity_ids,
        relation_rows,
        relation_ids,
    }
}

struct RoundOutcome {
    sim_loss: f64,
    align_loss: f64,
    disc_loss: f64,
}

fn train_round(
    hin: &Hin,
    store: &mut EmbeddingStore,
    discriminator: Option<&mut Mlp>,
    cfg: &TrainConfig,
    global_round: u64,
) -> Result<RoundOutcome> {
    let batches = sample_round(hin, &cfg.sampler, cfg.seed, global_round)?;
    let kind = cfg.effective_kind(hin);
    let lambda = if kind == AlignKind::None {
        1.0
    } else {
        cfg.alignment.lambda
    };

    let mut grads = GradMap::new();
    let mut sim_loss = 0.0;
    // mean over the round's positives, so the similarity and alignment
    // terms meet at comparable scale and lambda trades them off directly
    let total_positives = (batches.len() * cfg.sampler.batch_size) as f64;
    for batch in &batches {
        for (pos, negs) in batch.positives.iter().zip(&batch.negatives) {
            let pos_e = energy(&cfg.model, store, pos);
            let neg_es: Vec<f64> = negs.iter().map(|n| energy(&cfg.model, store, n)).collect();
            let (loss, dpos, dnegs) = margin_loss(cfg.model.margin, pos_e, &neg_es);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite similarity loss in source {} at round {global_round} (pos {pos:?})",
                    hin.source_names[batch.source]
                )));
            }
            sim_loss += loss / total_positives;
            if dpos != 0.0 {
                for ((id, row), g) in energy_grad(&cfg.model, store, pos) {
                    add_to_grad(&mut grads, id, row, &g, lambda * dpos / total_positives);
                }
            }
            for (neg, &dneg) in negs.iter().zip(&dnegs) {
                if dneg != 0.0 {
                    for ((id, row), g) in energy_grad(&cfg.model, store, neg) {
                        add_to_grad(&mut grads, id, row, &g, lambda * dneg / total_positives);
                    }
                }
            }
        }
    }

    let mut align_loss = 0.0;
    let mut disc_loss = 0.0;
    match kind {
        AlignKind::None => {}
        AlignKind::Kl | AlignKind::Js | AlignKind::Mmd => {
            let gathered: Vec<GatheredSamples> = batches
                .iter()
                .map(|b| gather_samples(store, b, cfg.alignment_sample_cap))
                .collect();
            let entity_samples: Vec<Sample> = gathered
                .iter()
                .map(|g| Sample::new(g.entity_rows.clone()))
                .collect();
            let relation_samples: Vec<Sample> = gathered
                .iter()
                .map(|g| Sample::new(g.relation_rows.clone()))
                .collect();
            let dl = dist_loss(&entity_samples, &relation_samples, &cfg.alignment)?;
            align_loss = dl.value;
            for (g, (egrads, rgrads)) in gathered
                .iter()
                .zip(dl.entity_grads.iter().zip(&dl.relation_grads))
            {
                for (&id, grad) in g.entity_ids.iter().zip(egrads) {
                    add_to_grad(&mut grads, TableId::Entity, id as usize, grad, 1.0);
                }
                for (&id, grad) in g.relation_ids.iter().zip(rgrads) {
                    add_to_grad(&mut grads, TableId::Relation, id as usize, grad, 1.0);
                }
            }
        }
        AlignKind::Adversarial => {
            let disc = discriminator.ok_or_else(|| {
                Error::Config("adversarial alignment requires a discriminator".to_string())
            })?;
            let k = hin.num_sources();
            let gathered: Vec<GatheredSamples> = batches
                .iter()
                .map(|b| gather_samples(store, b, cfg.alignment_sample_cap))
                .collect();
            let mut inputs = Vec::new();
            let mut true_targets = Vec::new();
            let mut row_keys: Vec<(TableId, usize)> = Vec::new();
            for (src, g) in gathered.iter().enumerate() {
                for (row, &id) in g.entity_rows.iter().zip(&g.entity_ids) {
                    inputs.push(row.clone());
                    true_targets.push(nn::one_hot(src, k));
                    row_keys.push((TableId::Entity, id as usize));
                }
                for (row, &id) in g.relation_rows.iter().zip(&g.relation_ids) {
                    inputs.push(row.clone());
                    true_targets.push(nn::one_hot(src, k));
                    row_keys.push((TableId::Relation, id as usize));
                }
            }
            // 1) discriminator learns the true source labels
            for _ in 0..cfg.discriminator_steps_per_batch {
                disc_loss = nn::cross_entropy_step(disc, &inputs, &true_targets, &cfg.mlp_optimizer)?;
            }
            // 2) embeddings move to fool it: uniform confusion target, or
            //    the opposite source's label when flip_targets is set (K=2)
            let flip = cfg.alignment.flip_targets && k == 2;
            let confusion: Vec<Vec<f64>> = true_targets
                .iter()
                .map(|y| {
                    if flip {
                        y.iter().map(|&v| 1.0 - v).collect()
                    } else {
                        vec![1.0 / k as f64; k]
                    }
                })
                .collect();
            let (adv, input_grads) = nn::input_gradient(disc, &inputs, &confusion)?;
            align_loss = adv;
            for ((id, row), grad) in row_keys.into_iter().zip(&input_grads) {
                add_to_grad(&mut grads, id, row, grad, 1.0);
            }
        }
    }

    adagrad_step(store, &grads, &cfg.optimizer)?;
    Ok(RoundOutcome {
        sim_loss,
        align_loss,
        disc_loss,
    })
}

/// One epoch = `rounds_per_epoch` balanced rounds. Losses in the record are
/// means over the epoch's rounds.
pub fn train_epoch(
    hin: &Hin,
    store: &mut EmbeddingStore,
    mut discriminator: Option<&mut Mlp>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<TrainLogRecord> {
    let start = Instant::now();
    let rounds = cfg.rounds_per_epoch(hin);
    let mut sim = 0.0;
    let mut align = 0.0;
    let mut disc = 0.0;
    for r in 0..rounds {
        let global_round = epoch as u64 * rounds + r;
        let outcome = train_round(
            hin,
            store,
            discriminator.as_deref_mut(),
            cfg,
            global_round,
        )?;
        sim += outcome.sim_loss;
        align += outcome.align_loss;
        disc += outcome.disc_loss;
    }
    let n = rounds as f64;
    Ok(TrainLogRecord {
        epoch,
        sim_loss: sim / n,
        align_loss: align / n,
        disc_loss: disc / n,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

pub struct TrainOutput {
    pub store: EmbeddingStore,
    pub discriminator: Option<Mlp>,
    pub log: Vec<TrainLogRecord>,
}

fn make_discriminator(hin: &Hin, cfg: &TrainConfig) -> Result<Option<Mlp>> {
    if cfg.effective_kind(hin) != AlignKind::Adversarial {
        return Ok(None);
    }
    let spec = cfg.discriminator_spec(hin.num_sources())?;
    Ok(Some(Mlp::new(&spec)?))
}

/// Run the full schedule from a fresh store.
pub fn train(hin: &Hin, cfg: &TrainConfig) -> Result<TrainOutput> {
    let store = init_store(
        cfg.model.kind,
        hin.vocab.num_entities(),
        hin.vocab.num_relations(),
        cfg.dim,
        cfg.seed,
    )?;
    let discriminator = make_discriminator(hin, cfg)?;
    train_from(hin, cfg, store, discriminator, 0, None)
}

/// Run the full schedule, writing periodic checkpoints under `out_dir`.
pub fn train_with_checkpoints(hin: &Hin, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutput> {
    let store = init_store(
        cfg.model.kind,
        hin.vocab.num_entities(),
        hin.vocab.num_relations(),
        cfg.dim,
        cfg.seed,
    )?;
    let discriminator = make_discriminator(hin, cfg)?;
    train_from(hin, cfg, store, discriminator, 0, Some(out_dir))
}

/// Resume from a checkpoint previously written by [`train_with_checkpoints`].
pub fn resume_from_checkpoint(hin: &Hin, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutput> {
    let sidecar_path = out_dir.join("checkpoint.json");
    let text = std::fs::read_to_string(&sidecar_path)
        .map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: CheckpointSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("bad checkpoint sidecar: {e}")))?;
    let store_path = out_dir.join("checkpoint.emb");
    let mut f = std::io::BufReader::new(
        std::fs::File::open(&store_path).map_err(|e| Error::io(&store_path, e))?,
    );
    let store = crate::store::load_store(&mut f)?;
    let discriminator = if cfg.effective_kind(hin) == AlignKind::Adversarial {
        let mlp_path = out_dir.join("checkpoint.mlp");
        let mut f = std::io::BufReader::new(
            std::fs::File::open(&mlp_path).map_err(|e| Error::io(&mlp_path, e))?,
        );
        Some(nn::load_mlp(&mut f)?)
    } else {
        None
    };
    train_from(hin, cfg, store, discriminator, sidecar.next_epoch, Some(out_dir))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointSidecar {
    next_epoch: usize,
    config: TrainConfig,
}

fn write_checkpoint(
    out_dir: &Path,
    store: &EmbeddingStore,
    discriminator: Option<&Mlp>,
    cfg: &TrainConfig,
    next_epoch: usize,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let store_path = out_dir.join("checkpoint.emb");
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&store_path).map_err(|e| Error::io(&store_path, e))?,
    );
    crate::store::save_store(store, &mut f)?;
    f.flush().map_err(|e| Error::io(&store_path, e))?;
    if let Some(mlp) = discriminator {
        let mlp_path = out_dir.join("checkpoint.mlp");
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&mlp_path).map_err(|e| Error::io(&mlp_path, e))?,
        );
        nn::save_mlp(mlp, &mut f)?;
        f.flush().map_err(|e| Error::io(&mlp_path, e))?;
    }
    let sidecar = CheckpointSidecar {
        next_epoch,
        config: cfg.clone(),
    };
    let sidecar_path = out_dir.join("checkpoint.json");
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).unwrap())
        .map_err(|e| Error::io(&sidecar_path, e))?;
    Ok(())
}

fn train_from(
    hin: &Hin,
    cfg: &TrainConfig,
    mut store: EmbeddingStore,
    mut discriminator: Option<Mlp>,
    start_epoch: usize,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    if cfg.alignment.kind != AlignKind::None && hin.num_sources() < 2 {
        eprintln!(
            "warning: alignment disabled (graph has {} source, need >= 2)",
            hin.num_sources()
        );
    }
    let mut log = Vec::with_capacity(cfg.epochs.saturating_sub(start_epoch));
    for epoch in start_epoch..cfg.epochs {
        let record = train_epoch(hin, &mut store, discriminator.as_mut(), cfg, epoch)?;
        log.push(record);
        if let Some(dir) = out_dir {
            let done = epoch + 1;
            if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.epochs
            {
                write_checkpoint(dir, &store, discriminator.as_ref(), cfg, done)?;
            }
        }
    }
    Ok(TrainOutput {
        store,
        discriminator,
        log,
    })
}

/// Training log as CSV with the record columns.
pub fn write_log_csv(log: &[TrainLogRecord], w: &mut impl std::io::Write) -> Result<()> {
    let io = |e| Error::Load(format!("write failed: {e}"));
    writeln!(w, "epoch,sim_loss,align_loss,disc_loss,wall_secs").map_err(io)?;
    for r in log {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.sim_loss, r.align_loss, r.disc_loss, r.wall_secs
        )
        .map_err(io)?;
    }
    Ok(())
}

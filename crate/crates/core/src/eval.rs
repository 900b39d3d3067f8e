//! Downstream-task harness: inductive link prediction with an MLP matcher,
//! ranking metrics, node classification, and the per-source divergence
//! report.

use rand::Rng;

use crate::alignment::{hist_js, Sample};
use crate::error::{Error, Result};
use crate::graph::{Hin, Triple};
use crate::nn::{self, Mlp, MlpSpec};
use crate::sampling::stream_rng;
use crate::store::{EmbeddingStore, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatcherConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    /// m: within-source corruptions per positive during matcher training.
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            hidden: vec![200, 200],
            epochs: 200,
            negatives_per_positive: 1,
            batch_size: 1024,
            optimizer: OptimizerConfig {
                weight_decay: 0.0,
                ..OptimizerConfig::default()
            },
            seed: 0,
        }
    }
}

fn edge_input(store: &EmbeddingStore, t: &Triple) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * store.dim);
    v.extend_from_slice(store.entity.row(t.head as usize));
    v.extend_from_slice(store.relation.row(t.relation as usize));
    v.extend_from_slice(store.entity.row(t.tail as usize));
    v
}

/// Probability that the edge exists according to the matcher (class 1).
pub fn link_probability(matcher: &Mlp, store: &EmbeddingStore, t: &Triple) -> Result<f64> {
    let probs = nn::forward(matcher, &[edge_input(store, t)])?;
    Ok(probs[0][1])
}

/// Train a binary link/no-link matcher on one source's edges. Embeddings
/// are frozen: the store is only read.
pub fn train_matcher(
    store: &EmbeddingStore,
    train_edges: &[Triple],
    source_entities: &[u64],
    cfg: &MatcherConfig,
) -> Result<Mlp> {
    if train_edges.is_empty() {
        return Err(Error::Config("matcher train source has no edges".to_string()));
    }
    if source_entities.len() < 2 {
        return Err(Error::Config(
            "matcher train source needs at least 2 entities".to_string(),
        ));
    }
    let mut dims = vec![3 * store.dim];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(2);
    let spec = MlpSpec::new(dims, cfg.seed)?;
    let mut mlp = Mlp::new(&spec)?;

    // build the fixed training set: positives plus m corruptions each
    let mut rng = stream_rng(cfg.seed, 0, u64::MAX);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for pos in train_edges {
        inputs.push(edge_input(store, pos));
        targets.push(nn::one_hot(1, 2));
        for _ in 0..cfg.negatives_per_positive {
            let corrupt_head = rng.gen_bool(0.5);
            let replaced = if corrupt_head { pos.head } else { pos.tail };
            let replacement = loop {
                let e = source_entities[rng.gen_range(0..source_entities.len())];
                if e != replaced {
                    break e;
                }
            };
            let neg = if corrupt_head {
                Triple {
                    head: replacement,
                    ..*pos
                }
            } else {
                Triple {
                    tail: replacement,
                    ..*pos
                }
            };
            inputs.push(edge_input(store, &neg));
            targets.push(nn::one_hot(0, 2));
        }
    }

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        // deterministic shuffle per epoch
        let mut shuffle_rng = stream_rng(cfg.seed, epoch as u64 + 1, u64::MAX);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch_in: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let batch_tg: Vec<Vec<f64>> = chunk.iter().map(|&i| targets[i].clone()).collect();
            nn::cross_entropy_step(&mut mlp, &batch_in, &batch_tg, &cfg.optimizer)?;
        }
    }
    Ok(mlp)
}

/// Ranks of true edges among their sampled corruptions. Each test edge
/// contributes two queries (head replacement and tail replacement).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingResult {
    pub ranks: Vec<usize>,
    /// Candidates per query including the true edge (rank upper bound).
    pub pool_size: usize,
}

/// Tie-averaged rank: 1 + #strictly-greater + ⌈#ties/2⌉.
pub fn rank_from_scores(true_score: f64, corruption_scores: &[f64]) -> usize {
    let greater = corruption_scores.iter().filter(|&&s| s > true_score).count();
    let ties = corruption_scores.iter().filter(|&&s| s == true_score).count();
    1 + greater + ties.div_ceil(2)
}

/// Rank every test edge against `n_negatives` corruption candidates drawn
/// without replacement from the candidate pool (the entire pool when it is
/// smaller). Scores come from the matcher's link probability.
pub fn rank_test_edges(
    matcher: &Mlp,
    store: &EmbeddingStore,
    test_edges: &[Triple],
    candidate_entities: &[u64],
    n_negatives: usize,
    eval_seed: u64,
) -> Result<RankingResult> {
    if test_edges.is_empty() {
        return Err(Error::Config("no test edges to rank".to_string()));
    }
    let mut ranks = Vec::with_capacity(test_edges.len() * 2);
    let mut max_drawn = 0;
    for (edge_idx, edge) in test_edges.iter().enumerate() {
        let true_score = link_probability(matcher, store, edge)?;
        for side in 0..2u64 {
            let replaced = if side == 0 { edge.head } else { edge.tail };
            let mut rng = stream_rng(eval_seed, edge_idx as u64, side);
            let candidates = sample_without_replacement(candidate_entities, replaced, n_negatives, &mut rng);
            max_drawn = max_drawn.max(candidates.len());
            let mut scores = Vec::with_capacity(candidates.len());
            for &c in &candidates {
                let corrupted = if side == 0 {
                    Triple { head: c, ..*edge }
                } else {
                    Triple { tail: c, ..*edge }
                };
                scores.push(link_probability(matcher, store, &corrupted)?);
            }
            ranks.push(rank_from_scores(true_score, &scores));
        }
    }
    Ok(RankingResult {
        ranks,
        pool_size: max_drawn + 1,
    })
}

/// Up to `n` distinct entities from the pool, excluding `exclude`.
fn sample_without_replacement(
    pool: &[u64],
    exclude: u64,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<u64> {
    let mut candidates: Vec<u64> = pool.iter().copied().filter(|&e| e != exclude).collect();
    let take = n.min(candidates.len());
    // partial Fisher-Yates
    for i in 0..take {
        let j = rng.gen_range(i..candidates.len());
        candidates.swap(i, j);
    }
    candidates.truncate(take);
    candidates
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub mr: f64,
    pub hits: Vec<(usize, f64)>,
}

/// MRR, MR, and Hits@n over the pooled head and tail queries.
pub fn metrics(result: &RankingResult, hits_ns: &[usize]) -> Result<Metrics> {
    if result.ranks.is_empty() {
        return Err(Error::Config("empty ranking result".to_string()));
    }
    let q = result.ranks.len() as f64;
    let mrr = result.ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / q;
    let mr = result.ranks.iter().map(|&r| r as f64).sum::<f64>() / q;
    let hits = hits_ns
        .iter()
        .map(|&n| {
            let frac = result.ranks.iter().filter(|&&r| r <= n).count() as f64 / q;
            (n, frac)
        })
        .collect();
    Ok(Metrics { mrr, mr, hits })
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let hits: Vec<String> = self
            .hits
            .iter()
            .map(|(n, v)| format!("\"{n}\": {v}"))
            .collect();
        format!(
            "{{\"mrr\": {}, \"mr\": {}, \"hits\": {{{}}}}}",
            self.mrr,
            self.mr,
            hits.join(", ")
        )
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["mrr".to_string(), "mr".to_string()];
        let mut row = vec![self.mrr.to_string(), self.mr.to_string()];
        for (n, v) in &self.hits {
            header.push(format!("hits@{n}"));
            row.push(v.to_string());
        }
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![200],
            epochs: 200,
            batch_size: 1024,
            optimizer: OptimizerConfig {
                weight_decay: 0.0,
                ..OptimizerConfig::default()
            },
            seed: 0,
        }
    }
}

/// Train an MLP on node embeddings and return test accuracy.
pub fn node_classification(
    store: &EmbeddingStore,
    train: &[(u64, usize)],
    test: &[(u64, usize)],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("node classification needs train and test rows".to_string()));
    }
    for &(id, label) in train.iter().chain(test) {
        if id as usize >= store.entity.rows {
            return Err(Error::Config(format!("node id {id} out of range")));
        }
        if label >= classes {
            return Err(Error::Config(format!("label {label} out of range for {classes} classes")));
        }
    }
    for c in 0..classes {
        if !train.iter().any(|&(_, l)| l == c) {
            eprintln!("warning: class {c} absent from node-classification training set");
        }
    }
    let mut dims = vec![store.dim];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(classes);
    let mut mlp = Mlp::new(&MlpSpec::new(dims, cfg.seed)?)?;
    let inputs: Vec<Vec<f64>> = train
        .iter()
        .map(|&(id, _)| store.entity.row(id as usize).to_vec())
        .collect();
    let targets: Vec<Vec<f64>> = train
        .iter()
        .map(|&(_, l)| nn::one_hot(l, classes))
        .collect();
    for _ in 0..cfg.epochs {
        for (chunk_in, chunk_tg) in inputs
            .chunks(cfg.batch_size)
            .zip(targets.chunks(cfg.batch_size))
        {
            nn::cross_entropy_step(&mut mlp, chunk_in, chunk_tg, &cfg.optimizer)?;
        }
    }
    let test_inputs: Vec<Vec<f64>> = test
        .iter()
        .map(|&(id, _)| store.entity.row(id as usize).to_vec())
        .collect();
    let labels: Vec<usize> = test.iter().map(|&(_, l)| l).collect();
    let probs = nn::forward(&mlp, &test_inputs)?;
    Ok(nn::accuracy(&probs, &labels))
}

/// Pairwise histogram-JS between per-source entity embedding sets. Shared
/// entities contribute rows to both sides of a pair.
pub fn divergence_report(
    store: &EmbeddingStore,
    hin: &Hin,
    bins: usize,
    smoothing: f64,
) -> Result<Vec<(String, String, f64)>> {
    if hin.num_sources() < 2 {
        return Err(Error::Config("divergence report needs at least 2 sources".to_string()));
    }
    let samples: Vec<Sample> = hin
        .per_source_entities
        .iter()
        .map(|ids| {
            Sample::new(
                ids.iter()
                    .map(|&id| store.entity.row(id as usize).to_vec())
                    .collect(),
            )
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let js = hist_js(&samples[i], &samples[j], bins, smoothing)?;
            out.push((hin.source_names[i].clone(), hin.source_names[j].clone(), js));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ModelKind;
    use crate::store::init_store;

    #[test]
    fn rank_perfect_matcher_all_ones() {
        // scores constructed directly: true edge strictly best
        assert_eq!(rank_from_scores(1.0, &[0.0, 0.2, 0.5]), 1);
    }

    #[test]
    fn rank_tie_handling() {
        // 1 strictly greater, 2 ties -> 1 + 1 + 1 = 3
        assert_eq!(rank_from_scores(0.5, &[0.9, 0.5, 0.5, 0.1]), 3);
        // 3 ties -> 1 + 0 + 2 = 3
        assert_eq!(rank_from_scores(0.5, &[0.5, 0.5, 0.5]), 3);
    }

    #[test]
    fn metrics_hand_computed() {
        let r = RankingResult {
            ranks: vec![1, 2, 4],
            pool_size: 10,
        };
        let m = metrics(&r, &[1, 3, 10]).unwrap();
        assert!((m.mrr - 7.0 / 12.0).abs() < 1e-15);
        assert!((m.mr - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.hits, vec![(1, 1.0 / 3.0), (3, 2.0 / 3.0), (10, 1.0)]);
    }

    #[test]
    fn metrics_hits_cases() {
        let r = RankingResult {
            ranks: vec![1, 5, 11, 200],
            pool_size: 1001,
        };
        let m = metrics(&r, &[10]).unwrap();
        assert_eq!(m.hits, vec![(10, 0.5)]);
        let perfect = RankingResult {
            ranks: vec![1, 1, 1],
            pool_size: 5,
        };
        let m = metrics(&perfect, &[1, 3]).unwrap();
        assert_eq!(m.mrr, 1.0);
        assert_eq!(m.hits, vec![(1, 1.0), (3, 1.0)]);
    }

    #[test]
    fn metrics_empty_is_error() {
        let r = RankingResult {
            ranks: vec![],
            pool_size: 0,
        };
        assert!(metrics(&r, &[10]).is_err());
    }

    #[test]
    fn metrics_invariant_under_rank_permutation() {
        let a = RankingResult {
            ranks: vec![3, 1, 7, 2],
            pool_size: 10,
        };
        let b = RankingResult {
            ranks: vec![7, 2, 3, 1],
            pool_size: 10,
        };
        assert_eq!(metrics(&a, &[3]).unwrap(), metrics(&b, &[3]).unwrap());
    }

    #[test]
    fn matcher_counts_and_freezes_store() {
        let store = init_store(ModelKind::TransE, 10, 2, 4, 3).unwrap();
        let before = store.clone();
        let edges: Vec<Triple> = (0..5)
            .map(|i| Triple {
                head: i,
                relation: 0,
                tail: (i + 1) % 10,
            })
            .collect();
        let entities: Vec<u64> = (0..10).collect();
        let cfg = MatcherConfig {
            epochs: 3,
            hidden: vec![8],
            ..Default::default()
        };
        let mlp = train_matcher(&store, &edges, &entities, &cfg).unwrap();
        assert_eq!(store, before);
        assert_eq!(mlp.input_dim(), 12);
    }

    #[test]
    fn matcher_learns_separable_embeddings() {
        // positives live along entity pairs with matching embeddings;
        // put linked entities in one half-space
        let mut store = init_store(ModelKind::TransE, 8, 1, 2, 5).unwrap();
        for i in 0..4 {
            store.entity.row_mut(i).copy_from_slice(&[2.0, 2.0]);
        }
        for i in 4..8 {
            store.entity.row_mut(i).copy_from_slice(&[-2.0, -2.0]);
        }
        store.relation.row_mut(0).copy_from_slice(&[0.0, 0.0]);
        // positives only among the first half
        let edges: Vec<Triple> = (0..4)
            .map(|i| Triple {
                head: i,
                relation: 0,
                tail: (i + 1) % 4,
            })
            .collect();
        let entities: Vec<u64> = (0..8).collect();
        let cfg = MatcherConfig {
            epochs: 200,
            hidden: vec![16],
            optimizer: OptimizerConfig {
                learning_rate: 0.05,
                weight_decay: 0.0,
                epsilon: 1e-10,
            },
            ..Default::default()
        };
        let mlp = train_matcher(&store, &edges, &entities, &cfg).unwrap();
        let mut correct = 0;
        for e in &edges {
            if link_probability(&mlp, &store, e).unwrap() > 0.5 {
                correct += 1;
            }
        }
        assert!(correct >= 3, "train accuracy too low: {correct}/4");
    }

    #[test]
    fn node_classification_memorizes_toy() {
        let mut store = init_store(ModelKind::TransE, 6, 1, 2, 7).unwrap();
        for i in 0..3 {
            store.entity.row_mut(i).copy_from_slice(&[3.0, 0.0]);
        }
        for i in 3..6 {
            store.entity.row_mut(i).copy_from_slice(&[-3.0, 0.0]);
        }
        let labeled: Vec<(u64, usize)> = (0..6).map(|i| (i, if i < 3 { 0 } else { 1 })).collect();
        let cfg = ClassifierConfig {
            hidden: vec![8],
            epochs: 300,
            optimizer: OptimizerConfig {
                learning_rate: 0.1,
                weight_decay: 0.0,
                epsilon: 1e-10,
            },
            ..Default::default()
        };
        let acc = node_classification(&store, &labeled, &labeled, 2, &cfg).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn single_correct_test_node_accuracy_one() {
        let mut store = init_store(ModelKind::TransE, 2, 1, 2, 7).unwrap();
        store.entity.row_mut(0).copy_from_slice(&[5.0, 0.0]);
        store.entity.row_mut(1).copy_from_slice(&[-5.0, 0.0]);
        let train = vec![(0u64, 0usize), (1, 1)];
        let cfg = ClassifierConfig {
            hidden: vec![4],
            epochs: 200,
            optimizer: OptimizerConfig {
                learning_rate: 0.1,
                weight_decay: 0.0,
                epsilon: 1e-10,
            },
            ..Default::default()
        };
        let acc = node_classification(&store, &train, &[(0, 0)], 2, &cfg).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn divergence_report_identical_embeddings_zero() {
        use crate::graph::{build_hin, RawTriple};
        use std::collections::BTreeMap;
        let raw = |h: &str, r: &str, t: &str| RawTriple {
            head: h.to_string(),
            relation: r.to_string(),
            tail: t.to_string(),
        };
        let mut manifest = BTreeMap::new();
        manifest.insert("a".to_string(), vec![raw("x", "r", "y")]);
        manifest.insert("b".to_string(), vec![raw("x", "r", "y")]);
        manifest.insert("c".to_string(), vec![raw("x", "r", "y")]);
        let hin = build_hin(&manifest).unwrap();
        let store = init_store(ModelKind::TransE, 2, 1, 4, 0).unwrap();
        let report = divergence_report(&store, &hin, 16, 1e-8).unwrap();
        assert_eq!(report.len(), 3); // C(3,2) pairs
        for (_, _, js) in report {
            assert!(js.abs() < 1e-12);
        }
    }
}

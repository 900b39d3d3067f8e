//! Source-balanced positive sampling and within-source negative corruption.
//!
//! Every round draws exactly `batch_size` positives from each source
//! uniformly with replacement, so small sources are oversampled rather than
//! underrepresented. Negatives replace one of head/tail with an entity drawn
//! from the same source's entity set.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::{Hin, Triple};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub head_tail_prob: f64,
    pub filter_true: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            batch_size: 1024,
            negatives_per_positive: 4,
            head_tail_prob: 0.5,
            filter_true: false,
        }
    }
}

/// One source's contribution to a training round.
#[derive(Debug, Clone)]
pub struct Batch {
    pub source: usize,
    pub positives: Vec<Triple>,
    /// negatives[i] are the corruptions of positives[i].
    pub negatives: Vec<Vec<Triple>>,
}

/// Derive an independent per-source RNG stream so the K samplers are
/// decoupled and the round is reproducible from (seed, round, source).
pub fn stream_rng(seed: u64, round: u64, source: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&round.to_le_bytes());
    key[16..24].copy_from_slice(&source.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Corrupt one triple: flip a coin for which side to replace, then draw the
/// replacement uniformly from `entities \ {replaced}`. With `filter_true`,
/// negatives colliding with `known` are resampled up to 100 times.
pub fn corrupt(
    triple: &Triple,
    entities: &[u64],
    k: usize,
    cfg: &SamplerConfig,
    known: Option<&HashSet<Triple>>,
    rng: &mut impl Rng,
) -> Vec<Triple> {
    debug_assert!(entities.len() >= 2);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut candidate = *triple;
        for _attempt in 0..100 {
            let corrupt_head = rng.gen_bool(cfg.head_tail_prob);
            let replaced = if corrupt_head { triple.head } else { triple.tail };
            // rejection-sample from entities \ {replaced}
            let replacement = loop {
                let e = entities[rng.gen_range(0..entities.len())];
                if e != replaced {
                    break e;
                }
            };
            candidate = if corrupt_head {
                Triple {
                    head: replacement,
                    ..*triple
                }
            } else {
                Triple {
                    tail: replacement,
                    ..*triple
                }
            };
            match known {
                Some(set) if cfg.filter_true && set.contains(&candidate) => continue,
                _ => break,
            }
        }
        out.push(candidate);
    }
    out
}

/// One balanced round: exactly `batch_size` positives per source, each with
/// `negatives_per_positive` corruptions. Batches come back ordered by source
/// index.
pub fn sample_round(hin: &Hin, cfg: &SamplerConfig, seed: u64, round: u64) -> Result<Vec<Batch>> {
    let known_sets: Vec<Option<HashSet<Triple>>> = if cfg.filter_true {
        hin.sources
            .iter()
            .map(|s| Some(s.iter().copied().collect()))
            .collect()
    } else {
        hin.sources.iter().map(|_| None).collect()
    };
    let mut batches = Vec::with_capacity(hin.num_sources());
    for (i, triples) in hin.sources.iter().enumerate() {
        if triples.is_empty() {
            return Err(Error::Sampler(format!(
                "source {:?} has no triples",
                hin.source_names[i]
            )));
        }
        let entities = &hin.per_source_entities[i];
        if entities.len() < 2 {
            return Err(Error::Sampler(format!(
                "source {:?} has fewer than 2 entities, cannot corrupt",
                hin.source_names[i]
            )));
        }
        let mut rng = stream_rng(seed, round, i as u64);
        let mut positives = Vec::with_capacity(cfg.batch_size);
        let mut negatives = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let pos = triples[rng.gen_range(0..triples.len())];
            let negs = corrupt(
                &pos,
                entities,
                cfg.negatives_per_positive,
                cfg,
                known_sets[i].as_ref(),
                &mut rng,
            );
            positives.push(pos);
            negatives.push(negs);
        }
        batches.push(Batch {
            source: i,
            positives,
            negatives,
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_hin, RawTriple};
    use std::collections::BTreeMap;

    fn raw(h: &str, r: &str, t: &str) -> RawTriple {
        RawTriple {
            head: h.to_string(),
            relation: r.to_string(),
            tail: t.to_string(),
        }
    }

    fn two_source_hin() -> Hin {
        let mut manifest = BTreeMap::new();
        manifest.insert(
            "big".to_string(),
            (0..10)
                .map(|i| raw(&format!("b{i}"), "r", &format!("b{}", (i + 1) % 10)))
                .collect(),
        );
        manifest.insert("small".to_string(), vec![raw("x", "q", "y")]);
        build_hin(&manifest).unwrap()
    }

    #[test]
    fn balanced_batches_regardless_of_size_ratio() {
        let hin = two_source_hin();
        let cfg = SamplerConfig {
            batch_size: 4,
            ..Default::default()
        };
        let batches = sample_round(&hin, &cfg, 1, 0).unwrap();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(b.positives.len(), 4);
            assert!(b.negatives.iter().all(|n| n.len() == 4));
        }
    }

    #[test]
    fn negatives_differ_in_exactly_one_slot() {
        let hin = two_source_hin();
        let cfg = SamplerConfig {
            batch_size: 32,
            ..Default::default()
        };
        for round in 0..10 {
            for b in sample_round(&hin, &cfg, 3, round).unwrap() {
                for (pos, negs) in b.positives.iter().zip(&b.negatives) {
                    for neg in negs {
                        assert_eq!(neg.relation, pos.relation);
                        let head_changed = neg.head != pos.head;
                        let tail_changed = neg.tail != pos.tail;
                        assert!(head_changed ^ tail_changed, "{pos:?} -> {neg:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn corrupting_entities_stay_in_source() {
        let hin = two_source_hin();
        let cfg = SamplerConfig {
            batch_size: 64,
            ..Default::default()
        };
        let batches = sample_round(&hin, &cfg, 5, 0).unwrap();
        for b in &batches {
            let allowed: HashSet<u64> = hin.per_source_entities[b.source].iter().copied().collect();
            for negs in &b.negatives {
                for neg in negs {
                    assert!(allowed.contains(&neg.head));
                    assert!(allowed.contains(&neg.tail));
                }
            }
        }
    }

    #[test]
    fn two_entity_source_forces_the_only_candidate() {
        let t = Triple {
            head: 0,
            relation: 0,
            tail: 1,
        };
        let entities = vec![0u64, 1];
        let cfg = SamplerConfig {
            head_tail_prob: 1.0, // always corrupt the head
            ..Default::default()
        };
        let mut rng = stream_rng(0, 0, 0);
        let negs = corrupt(&t, &entities, 4, &cfg, None, &mut rng);
        for neg in negs {
            assert_eq!(
                neg,
                Triple {
                    head: 1,
                    relation: 0,
                    tail: 1
                }
            );
        }
    }

    #[test]
    fn filter_true_avoids_known_triples_when_possible() {
        // source: (0,r,1) plus every head corruption of it; only tail
        // corruptions remain as unseen negatives.
        let entities = vec![0u64, 1, 2, 3];
        let pos = Triple {
            head: 0,
            relation: 0,
            tail: 1,
        };
        let mut known = HashSet::new();
        known.insert(pos);
        for h in [1u64, 2, 3] {
            known.insert(Triple {
                head: h,
                relation: 0,
                tail: 1,
            });
        }
        let cfg = SamplerConfig {
            filter_true: true,
            ..Default::default()
        };
        let mut rng = stream_rng(9, 0, 0);
        let negs = corrupt(&pos, &entities, 50, &cfg, Some(&known), &mut rng);
        for neg in negs {
            assert!(!known.contains(&neg), "{neg:?} is a known triple");
        }
    }

    #[test]
    fn determinism_same_seed_same_stream() {
        let hin = two_source_hin();
        let cfg = SamplerConfig {
            batch_size: 16,
            ..Default::default()
        };
        for round in 0..3 {
            let a = sample_round(&hin, &cfg, 7, round).unwrap();
            let b = sample_round(&hin, &cfg, 7, round).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.positives, y.positives);
                assert_eq!(x.negatives, y.negatives);
            }
        }
    }

    #[test]
    fn single_entity_source_errors() {
        let mut manifest = BTreeMap::new();
        manifest.insert("s".to_string(), vec![raw("a", "r", "a")]);
        let hin = build_hin(&manifest).unwrap();
        let cfg = SamplerConfig::default();
        assert!(sample_round(&hin, &cfg, 0, 0).is_err());
    }

    #[test]
    fn head_tail_ratio_near_half() {
        let hin = two_source_hin();
        let cfg = SamplerConfig {
            batch_size: 2000,
            negatives_per_positive: 1,
            ..Default::default()
        };
        let batches = sample_round(&hin, &cfg, 13, 0).unwrap();
        let mut heads = 0usize;
        let mut total = 0usize;
        for b in &batches {
            for (pos, negs) in b.positives.iter().zip(&b.negatives) {
                for neg in negs {
                    total += 1;
                    if neg.head != pos.head {
                        heads += 1;
                    }
                }
            }
        }
        let p = heads as f64 / total as f64;
        // 3σ band around 0.5 for n=4000
        let sigma = (0.25 / total as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma, "p={p}");
    }
}

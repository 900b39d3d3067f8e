//! Shared helpers for the integration suites: finite differences, a
//! synthetic two-source graph generator, and an independently coded plain
//! margin-loss reference trainer.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use hinembed::graph::{build_hin, Hin, RawTriple};
use hinembed::sampling::{sample_round, SamplerConfig};
use hinembed::store::{EmbeddingStore, OptimizerConfig};

/// Central finite difference of `f` around 0 with step `h`; `f` receives
/// the perturbation to apply.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn raw(h: &str, r: &str, t: &str) -> RawTriple {
    RawTriple {
        head: h.to_string(),
        relation: r.to_string(),
        tail: t.to_string(),
    }
}

/// Entity names for one source: the shared 200-entity core plus 200
/// exclusive entities, all assigned to 4 communities of 100 (50 core + 50
/// exclusive each).
fn source_entities(prefix: &str) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for i in 0..200 {
        out.push((format!("c{i}"), i / 50));
    }
    for i in 0..200 {
        out.push((format!("{prefix}{i}"), i / 50));
    }
    out
}

/// Community-structured edges: 90% of edges stay within a community. With
/// probability `excl_bias` both endpoints come from the source's exclusive
/// entities (indices 200..) only, decoupling that source's geometry from
/// the shared core.
fn gen_edges(
    entities: &[(String, usize)],
    relations: &[&str],
    n_edges: usize,
    excl_bias: f64,
    rng: &mut ChaCha20Rng,
) -> Vec<RawTriple> {
    let pools: Vec<&[(String, usize)]> = vec![entities, &entities[200..]];
    let by_comm: Vec<Vec<Vec<&str>>> = pools
        .iter()
        .map(|pool| {
            let mut bc: Vec<Vec<&str>> = vec![Vec::new(); 4];
            for (name, comm) in pool.iter() {
                bc[*comm].push(name);
            }
            bc
        })
        .collect();
    let mut edges = Vec::with_capacity(n_edges);
    while edges.len() < n_edges {
        let which = usize::from(rng.gen_bool(excl_bias));
        let pool = pools[which];
        let rel = relations[rng.gen_range(0..relations.len())];
        let (h, t) = if rng.gen_bool(0.9) {
            let comm = &by_comm[which][rng.gen_range(0..4)];
            (comm[rng.gen_range(0..comm.len())], comm[rng.gen_range(0..comm.len())])
        } else {
            (
                pool[rng.gen_range(0..pool.len())].0.as_str(),
                pool[rng.gen_range(0..pool.len())].0.as_str(),
            )
        };
        if h == t {
            continue;
        }
        edges.push(raw(h, rel, t));
    }
    edges
}

/// Two-source synthetic graph: a shared 200-entity core plus 200 exclusive
/// entities per source, in 4 communities. The "dense" source has mean
/// degree >= 10, the "sparse" source <= 3. The sparse source wires 80% of
/// its edges among its own exclusive entities, so its geometry drifts away
/// from the core-anchored dense source unless alignment pulls them
/// together; each source has its own relation vocabulary.
pub fn synthetic_two_source(seed: u64) -> Hin {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dense_entities = source_entities("d");
    let sparse_entities = source_entities("s");
    // 2100 edges over 400 entities -> mean degree 10.5
    let dense = gen_edges(&dense_entities, &["rd0", "rd1"], 2100, 0.0, &mut rng);
    // 570 edges over 400 entities -> mean degree 2.85
    let sparse = gen_edges(&sparse_entities, &["rs0", "rs1"], 570, 0.8, &mut rng);
    let mut manifest = BTreeMap::new();
    manifest.insert("dense".to_string(), dense);
    manifest.insert("sparse".to_string(), sparse);
    build_hin(&manifest).unwrap()
}

/// Independently coded plain TransE-L2 margin-loss trainer with sparse
/// Adagrad, sharing only the batch sampler with the engine. Used to check
/// the kind=none trainer against a second implementation.
pub struct ReferenceTrainer {
    pub entity: Vec<Vec<f64>>,
    pub relation: Vec<Vec<f64>>,
    entity_accum: Vec<Vec<f64>>,
    relation_accum: Vec<Vec<f64>>,
    margin: f64,
    opt: OptimizerConfig,
}

impl ReferenceTrainer {
    /// Start from the same initial tables as the engine's store.
    pub fn from_store(store: &EmbeddingStore, margin: f64, opt: OptimizerConfig) -> Self {
        let to_rows = |t: &hinembed::store::Table| {
            (0..t.rows).map(|i| t.row(i).to_vec()).collect::<Vec<_>>()
        };
        ReferenceTrainer {
            entity: to_rows(&store.entity),
            relation: to_rows(&store.relation),
            entity_accum: vec![vec![0.0; store.dim]; store.entity.rows],
            relation_accum: vec![vec![0.0; store.dim]; store.relation.rows],
            margin,
            opt,
        }
    }

    fn energy(&self, h: u64, r: u32, t: u64) -> (f64, Vec<f64>) {
        let hv = &self.entity[h as usize];
        let rv = &self.relation[r as usize];
        let tv = &self.entity[t as usize];
        let u: Vec<f64> = (0..hv.len()).map(|i| hv[i] + rv[i] - tv[i]).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        (n, u)
    }

    /// d||u||/du, with the subgradient 0 at u = 0.
    fn norm_grad(n: f64, u: &[f64]) -> Vec<f64> {
        if n == 0.0 {
            vec![0.0; u.len()]
        } else {
            u.iter().map(|x| x / n).collect()
        }
    }

    /// One balanced round, mirroring the engine's batch order and single
    /// end-of-round Adagrad application.
    pub fn round(&mut self, hin: &Hin, sampler: &SamplerConfig, seed: u64, round: u64) {
        let batches = sample_round(hin, sampler, seed, round).unwrap();
        let total_positives = (batches.len() * sampler.batch_size) as f64;
        // (table, row) -> accumulated gradient; table 0 = entity, 1 = relation
        let mut grads: BTreeMap<(u8, usize), Vec<f64>> = BTreeMap::new();
        let dim = self.entity[0].len();
        let add = |grads: &mut BTreeMap<(u8, usize), Vec<f64>>, key: (u8, usize), g: &[f64], scale: f64| {
            let entry = grads.entry(key).or_insert_with(|| vec![0.0; dim]);
            for (a, &b) in entry.iter_mut().zip(g) {
                *a += scale * b;
            }
        };
        for batch in &batches {
            for (pos, negs) in batch.positives.iter().zip(&batch.negatives) {
                let (pos_e, pos_u) = self.energy(pos.head, pos.relation, pos.tail);
                let neg_es: Vec<(f64, Vec<f64>)> = negs
                    .iter()
                    .map(|n| self.energy(n.head, n.relation, n.tail))
                    .collect();
                let mut dpos = 0.0;
                let mut dnegs = vec![0.0; negs.len()];
                for (i, (ne, _)) in neg_es.iter().enumerate() {
                    if pos_e - ne + self.margin > 0.0 {
                        dpos += 1.0;
                        dnegs[i] = -1.0;
                    }
                }
                let dpos = 1.0 * dpos / total_positives;
                if dpos != 0.0 {
                    let s = Self::norm_grad(pos_e, &pos_u);
                    let neg_s: Vec<f64> = s.iter().map(|x| -x).collect();
                    // per-triple merge: head and tail cancel exactly on
                    // self-loops, leaving a zero entry for that row
                    if pos.head == pos.tail {
                        add(&mut grads, (0, pos.head as usize), &vec![0.0; dim], dpos);
                        add(&mut grads, (1, pos.relation as usize), &s, dpos);
                    } else {
                        add(&mut grads, (0, pos.head as usize), &s, dpos);
                        add(&mut grads, (1, pos.relation as usize), &s, dpos);
                        add(&mut grads, (0, pos.tail as usize), &neg_s, dpos);
                    }
                }
                for ((neg, &dneg), (ne, nu)) in negs.iter().zip(&dnegs).zip(&neg_es) {
                    let dneg = 1.0 * dneg / total_positives;
                    if dneg != 0.0 {
                        let s = Self::norm_grad(*ne, nu);
                        let neg_s: Vec<f64> = s.iter().map(|x| -x).collect();
                        if neg.head == neg.tail {
                            add(&mut grads, (0, neg.head as usize), &vec![0.0; dim], dneg);
                            add(&mut grads, (1, neg.relation as usize), &s, dneg);
                        } else {
                            add(&mut grads, (0, neg.head as usize), &s, dneg);
                            add(&mut grads, (1, neg.relation as usize), &s, dneg);
                            add(&mut grads, (0, neg.tail as usize), &neg_s, dneg);
                        }
                    }
                }
            }
        }
        for ((table, row), grad) in &grads {
            let (params, accums) = if *table == 0 {
                (&mut self.entity[*row], &mut self.entity_accum[*row])
            } else {
                (&mut self.relation[*row], &mut self.relation_accum[*row])
            };
            for ((p, a), &g0) in params.iter_mut().zip(accums.iter_mut()).zip(grad) {
                let g = g0 + self.opt.weight_decay * *p;
                *a += g * g;
                *p -= self.opt.learning_rate * g / (a.sqrt() + self.opt.epsilon);
            }
        }
    }
}

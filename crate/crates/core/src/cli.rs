//! Command implementations behind the `hinembed` binary. Each command takes
//! the resolved run config plus global-flag overrides and writes its
//! artifacts under the output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{parse_arrow, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{self, divergence_report, metrics, rank_test_edges, train_matcher};
use crate::graph::{self, build_hin, load_hin, save_hin, split_by_relation, Hin, RawTriple};
use crate::store::{export_csv, load_store, save_store, EmbeddingStore};
use crate::trainer::{train_with_checkpoints, write_log_csv};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Global flag overrides: `--out`, `--seed`, `--threads`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Advisory; execution is sequential and deterministic regardless.
    pub threads: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(out) = &self.out {
            cfg.output.dir = out.display().to_string();
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Machine-readable provenance: resolved config, seed, and code version.
fn write_echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("run_config.toml");
    let mut w = open_out(&path)?;
    writeln!(w, "# resolved config echo — seed {}, hinembed {}", cfg.train.seed, VERSION)
        .map_err(|e| Error::io(&path, e))?;
    w.write_all(cfg.echo_toml()?.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn read_triples(path: &str) -> Result<Vec<RawTriple>> {
    let f = File::open(path).map_err(|e| Error::io(Path::new(path), e))?;
    graph::parse_triple_file(BufReader::new(f), path)
}

/// Build the in-memory HIN from the dataset section (explicit sources or a
/// relation split of one file), applying any entity-type map.
pub fn ingest(cfg: &RunConfig) -> Result<Hin> {
    let manifest: BTreeMap<String, Vec<RawTriple>> = if !cfg.dataset.sources.is_empty() {
        cfg.dataset
            .sources
            .iter()
            .map(|(name, path)| Ok((name.clone(), read_triples(path)?)))
            .collect::<Result<_>>()?
    } else {
        let path = cfg.dataset.triples.as_ref().expect("validated");
        let all = read_triples(path)?;
        split_by_relation(&all, &cfg.dataset.groups)?
    };
    let mut hin = build_hin(&manifest)?;
    if let Some(types_path) = &cfg.dataset.entity_types {
        let text = std::fs::read_to_string(types_path)
            .map_err(|e| Error::io(Path::new(types_path), e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            match (it.next(), it.next()) {
                (Some(e), Some(t)) => pairs.push((e.to_string(), t.to_string())),
                _ => {
                    return Err(Error::Parse {
                        path: types_path.clone(),
                        line: lineno + 1,
                        message: "expected entity<TAB>type".to_string(),
                    })
                }
            }
        }
        hin.vocab.apply_entity_types(&pairs);
    }
    Ok(hin)
}

fn write_stats_csv(hin: &Hin, path: &Path) -> Result<String> {
    let rows = graph::stats(hin);
    let mut text = String::from("source,entities,relations,edges,entity_types\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.entities, r.relations, r.edges, r.entity_types
        ));
    }
    let mut w = open_out(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(text)
}

/// `prepare`: ingest, serialize the HIN, and print/write the stats table.
pub fn cmd_prepare(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::from_path(config_path)?;
    ov.apply(&mut cfg);
    let out_dir = PathBuf::from(&cfg.output.dir);
    create_dir(&out_dir)?;
    let hin = ingest(&cfg)?;
    let hin_path = out_dir.join("hin.bin");
    let mut w = open_out(&hin_path)?;
    save_hin(&hin, &mut w)?;
    w.flush().map_err(|e| Error::io(&hin_path, e))?;
    let stats_text = write_stats_csv(&hin, &out_dir.join("stats.csv"))?;
    write_echo(&cfg, &out_dir)?;
    print!("{stats_text}");
    Ok(())
}

fn load_or_ingest(cfg: &RunConfig, out_dir: &Path) -> Result<Hin> {
    let hin_path = out_dir.join("hin.bin");
    if hin_path.exists() {
        let f = File::open(&hin_path).map_err(|e| Error::io(&hin_path, e))?;
        load_hin(&mut BufReader::new(f))
    } else {
        ingest(cfg)
    }
}

/// `train`: one run per λ grid value. Writes `final.emb`, `log.csv`, and a
/// config echo into each run directory.
pub fn cmd_train(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::from_path(config_path)?;
    ov.apply(&mut cfg);
    let out_dir = PathBuf::from(&cfg.output.dir);
    create_dir(&out_dir)?;
    let hin = load_or_ingest(&cfg, &out_dir)?;
    for (sub, train_cfg) in cfg.train_grid()? {
        let run_dir = if sub.is_empty() {
            out_dir.clone()
        } else {
            out_dir.join(&sub)
        };
        create_dir(&run_dir)?;
        let output = train_with_checkpoints(&hin, &train_cfg, &run_dir)?;
        let emb_path = run_dir.join("final.emb");
        let mut w = open_out(&emb_path)?;
        save_store(&output.store, &mut w)?;
        w.flush().map_err(|e| Error::io(&emb_path, e))?;
        let log_path = run_dir.join("log.csv");
        let mut w = open_out(&log_path)?;
        write_log_csv(&output.log, &mut w)?;
        w.flush().map_err(|e| Error::io(&log_path, e))?;
        write_echo(&cfg, &run_dir)?;
        if let Some(last) = output.log.last() {
            println!(
                "trained{} {} epochs: sim_loss {:.6} align_loss {:.6}",
                if sub.is_empty() { String::new() } else { format!(" [{sub}]") },
                train_cfg.epochs,
                last.sim_loss,
                last.align_loss
            );
        }
    }
    Ok(())
}

fn load_store_file(path: &Path) -> Result<EmbeddingStore> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    load_store(&mut BufReader::new(f))
}

fn source_index(hin: &Hin, name: &str) -> Result<usize> {
    hin.source_names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Config(format!("arrow references unknown source {name:?}")))
}

/// `evaluate`: train the matcher on the arrow's left source, rank the right
/// source's edges, and optionally run node classification from a label file.
pub fn cmd_evaluate(config_path: &Path, store_path: Option<&Path>, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::from_path(config_path)?;
    ov.apply(&mut cfg);
    let eval_cfg = cfg
        .evaluation
        .clone()
        .ok_or_else(|| Error::Config("evaluate requires an [evaluation] section".to_string()))?;
    let out_dir = PathBuf::from(&cfg.output.dir);
    create_dir(&out_dir)?;
    let hin = load_or_ingest(&cfg, &out_dir)?;
    let store_path = store_path.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("final.emb"));
    let store = load_store_file(&store_path)?;
    if store.entity.rows != hin.vocab.num_entities() {
        return Err(Error::Shape(format!(
            "store has {} entities but graph has {}",
            store.entity.rows,
            hin.vocab.num_entities()
        )));
    }

    let (left, right) = parse_arrow(&eval_cfg.arrow)?;
    let li = source_index(&hin, &left)?;
    let ri = source_index(&hin, &right)?;
    if li == ri {
        eprintln!("warning: transductive override — arrow trains and tests on {left:?}");
    }
    let matcher_cfg = eval_cfg.matcher_config(
        crate::store::OptimizerConfig {
            learning_rate: cfg.mlp_optimizer.learning_rate,
            weight_decay: cfg.mlp_optimizer.weight_decay,
            epsilon: cfg.mlp_optimizer.epsilon,
        },
        cfg.train.seed,
    );
    let matcher = train_matcher(&store, &hin.sources[li], &hin.per_source_entities[li], &matcher_cfg)?;
    let ranking = rank_test_edges(
        &matcher,
        &store,
        &hin.sources[ri],
        &hin.per_source_entities[ri],
        eval_cfg.n_negatives,
        eval_cfg.eval_seed,
    )?;
    let m = metrics(&ranking, &eval_cfg.hits_ns)?;
    let json = m.to_json();
    let json_path = out_dir.join("metrics.json");
    std::fs::write(&json_path, format!("{json}\n")).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = out_dir.join("metrics.csv");
    std::fs::write(&csv_path, m.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    println!("{json}");

    if let Some(labels_path) = &eval_cfg.labels {
        let acc = run_node_classification(&cfg, &eval_cfg, &hin, &store, labels_path)?;
        let nc_path = out_dir.join("node_classification.json");
        std::fs::write(&nc_path, format!("{{\"accuracy\": {acc}}}\n"))
            .map_err(|e| Error::io(&nc_path, e))?;
        println!("node classification accuracy: {acc}");
    }
    write_echo(&cfg, &out_dir)?;
    Ok(())
}

/// Label file is `entity<TAB>class`; unknown entities are skipped with a
/// count. Rows alternate into train/test deterministically.
fn run_node_classification(
    cfg: &RunConfig,
    eval_cfg: &crate::config::EvalSection,
    hin: &Hin,
    store: &EmbeddingStore,
    labels_path: &str,
) -> Result<f64> {
    let text = std::fs::read_to_string(labels_path)
        .map_err(|e| Error::io(Path::new(labels_path), e))?;
    let mut class_names: Vec<String> = Vec::new();
    let mut labeled: Vec<(u64, usize)> = Vec::new();
    let mut skipped = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (entity, class) = match (it.next(), it.next()) {
            (Some(e), Some(c)) => (e, c),
            _ => {
                return Err(Error::Parse {
                    path: labels_path.to_string(),
                    line: lineno + 1,
                    message: "expected entity<TAB>class".to_string(),
                })
            }
        };
        match hin.vocab.entity_id(entity) {
            Some(id) => {
                let class_id = match class_names.iter().position(|c| c == class) {
                    Some(i) => i,
                    None => {
                        class_names.push(class.to_string());
                        class_names.len() - 1
                    }
                };
                labeled.push((id, class_id));
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} label rows with unknown entities");
    }
    let train: Vec<(u64, usize)> = labeled.iter().step_by(2).copied().collect();
    let test: Vec<(u64, usize)> = labeled.iter().skip(1).step_by(2).copied().collect();
    let classifier_cfg = eval_cfg.classifier_config(
        crate::store::OptimizerConfig {
            learning_rate: cfg.mlp_optimizer.learning_rate,
            weight_decay: cfg.mlp_optimizer.weight_decay,
            epsilon: cfg.mlp_optimizer.epsilon,
        },
        cfg.train.seed,
    );
    eval::node_classification(store, &train, &test, class_names.len(), &classifier_cfg)
}

/// `report`: divergence CSV plus a source-labeled entity embedding CSV for
/// external projection/plotting.
pub fn cmd_report(config_path: &Path, store_path: Option<&Path>, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::from_path(config_path)?;
    ov.apply(&mut cfg);
    let out_dir = PathBuf::from(&cfg.output.dir);
    create_dir(&out_dir)?;
    let hin = load_or_ingest(&cfg, &out_dir)?;
    let store_path = store_path.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("final.emb"));
    let store = load_store_file(&store_path)?;
    let report = divergence_report(&store, &hin, cfg.alignment.hist_bins, cfg.alignment.hist_smoothing)?;
    let div_path = out_dir.join("divergence.csv");
    let mut w = open_out(&div_path)?;
    writeln!(w, "source_a,source_b,js").map_err(|e| Error::io(&div_path, e))?;
    for (a, b, js) in &report {
        writeln!(w, "{a},{b},{js}").map_err(|e| Error::io(&div_path, e))?;
        println!("hist_js({a}, {b}) = {js}");
    }
    w.flush().map_err(|e| Error::io(&div_path, e))?;

    let lbl_path = out_dir.join("entities_labeled.csv");
    let mut w = open_out(&lbl_path)?;
    let io = |e| Error::io(&lbl_path, e);
    write!(w, "id,name,sources").map_err(io)?;
    for j in 0..store.dim {
        write!(w, ",v{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for id in 0..hin.vocab.num_entities() {
        let member: Vec<&str> = hin
            .per_source_entities
            .iter()
            .enumerate()
            .filter(|(_, ids)| ids.binary_search(&(id as u64)).is_ok())
            .map(|(i, _)| hin.source_names[i].as_str())
            .collect();
        let name = &hin.vocab.entity_names[id];
        let quoted = if name.contains(',') || name.contains('"') {
            format!("\"{}\"", name.replace('"', "\"\""))
        } else {
            name.clone()
        };
        write!(w, "{id},{quoted},{}", member.join("|")).map_err(io)?;
        for v in store.entity.row(id) {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// `export`: plain entity and relation embedding CSVs.
pub fn cmd_export(config_path: &Path, store_path: Option<&Path>, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::from_path(config_path)?;
    ov.apply(&mut cfg);
    let out_dir = PathBuf::from(&cfg.output.dir);
    create_dir(&out_dir)?;
    let hin = load_or_ingest(&cfg, &out_dir)?;
    let store_path = store_path.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("final.emb"));
    let store = load_store_file(&store_path)?;
    let ent_path = out_dir.join("entities.csv");
    let mut w = open_out(&ent_path)?;
    export_csv(&store.entity, &hin.vocab.entity_names, &mut w)?;
    w.flush().map_err(|e| Error::io(&ent_path, e))?;
    let rel_path = out_dir.join("relations.csv");
    let mut w = open_out(&rel_path)?;
    export_csv(&store.relation, &hin.vocab.relation_names, &mut w)?;
    w.flush().map_err(|e| Error::io(&rel_path, e))?;
    println!(
        "exported {} entity and {} relation rows",
        store.entity.rows, store.relation.rows
    );
    Ok(())
}

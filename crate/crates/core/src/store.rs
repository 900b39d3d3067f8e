//! Learnable parameter tables, Adagrad updates, and persistence.

use std::io::{Read, Write};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::scoring::{GradMap, ModelKind};

/// Which parameter table a sparse-gradient row addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TableId {
    Entity,
    Relation,
    /// TransD per-entity projection vectors.
    EntityProj,
    /// TransD per-relation projection vectors.
    RelationProj,
    /// TransR / RESCAL per-relation d×d matrices (row-major).
    RelationMatrix,
}

impl TableId {
    fn tag(self) -> u8 {
        match self {
            TableId::Entity => 0,
            TableId::Relation => 1,
            TableId::EntityProj => 2,
            TableId::RelationProj => 3,
            TableId::RelationMatrix => 4,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => TableId::Entity,
            1 => TableId::Relation,
            2 => TableId::EntityProj,
            3 => TableId::RelationProj,
            4 => TableId::RelationMatrix,
            other => return Err(Error::Load(format!("unknown table tag {other}"))),
        })
    }
}

/// Dense parameter table with its Adagrad accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub accum: Vec<f64>,
}

impl Table {
    fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            accum: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.005,
            weight_decay: 0.001,
            epsilon: 1e-10,
        }
    }
}

/// All learnable parameters for one scoring model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub kind: ModelKind,
    pub dim: usize,
    pub seed: u64,
    pub entity: Table,
    pub relation: Table,
    pub entity_proj: Option<Table>,
    pub relation_proj: Option<Table>,
    pub relation_matrix: Option<Table>,
}

impl EmbeddingStore {
    pub fn table(&self, id: TableId) -> Option<&Table> {
        match id {
            TableId::Entity => Some(&self.entity),
            TableId::Relation => Some(&self.relation),
            TableId::EntityProj => self.entity_proj.as_ref(),
            TableId::RelationProj => self.relation_proj.as_ref(),
            TableId::RelationMatrix => self.relation_matrix.as_ref(),
        }
    }

    pub fn table_mut(&mut self, id: TableId) -> Option<&mut Table> {
        match id {
            TableId::Entity => Some(&mut self.entity),
            TableId::Relation => Some(&mut self.relation),
            TableId::EntityProj => self.entity_proj.as_mut(),
            TableId::RelationProj => self.relation_proj.as_mut(),
            TableId::RelationMatrix => self.relation_matrix.as_mut(),
        }
    }

    fn tables(&self) -> Vec<(TableId, &Table)> {
        let mut out = vec![(TableId::Entity, &self.entity), (TableId::Relation, &self.relation)];
        if let Some(t) = &self.entity_proj {
            out.push((TableId::EntityProj, t));
        }
        if let Some(t) = &self.relation_proj {
            out.push((TableId::RelationProj, t));
        }
        if let Some(t) = &self.relation_matrix {
            out.push((TableId::RelationMatrix, t));
        }
        out
    }
}

/// Initialize parameters: vectors i.i.d. uniform on [−6/√d, 6/√d], square
/// matrices identity plus uniform [−0.01, 0.01] noise. Deterministic for a
/// fixed seed.
pub fn init_store(
    kind: ModelKind,
    num_entities: usize,
    num_relations: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingStore> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be >= 1".to_string()));
    }
    if kind == ModelKind::ComplEx && dim % 2 != 0 {
        return Err(Error::Config(format!(
            "complex embeddings need even dimension, got {dim}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bound = 6.0 / (dim as f64).sqrt();
    let vec_dist = Uniform::new_inclusive(-bound, bound);
    let noise_dist = Uniform::new_inclusive(-0.01, 0.01);

    let mut fill_vectors = |rows: usize| {
        let mut t = Table::zeros(rows, dim);
        for v in t.data.iter_mut() {
            *v = vec_dist.sample(&mut rng);
        }
        t
    };

    let entity = fill_vectors(num_entities);
    let relation = fill_vectors(num_relations);
    let mut entity_proj = None;
    let mut relation_proj = None;
    let mut relation_matrix = None;
    match kind {
        ModelKind::TransD => {
            entity_proj = Some(fill_vectors(num_entities));
            relation_proj = Some(fill_vectors(num_relations));
        }
        ModelKind::TransR | ModelKind::Rescal => {
            let mut t = Table::zeros(num_relations, dim * dim);
            for r in 0..num_relations {
                for i in 0..dim {
                    for j in 0..dim {
                        let base = if i == j { 1.0 } else { 0.0 };
                        t.data[r * dim * dim + i * dim + j] = base + noise_dist.sample(&mut rng);
                    }
                }
            }
            relation_matrix = Some(t);
        }
        _ => {}
    }
    Ok(EmbeddingStore {
        kind,
        dim,
        seed,
        entity,
        relation,
        entity_proj,
        relation_proj,
        relation_matrix,
    })
}

/// One sparse Adagrad step. For each touched entry:
/// g ← grad + weight_decay·param; accum += g²; param −= lr·g/(√accum + ε).
/// A non-finite gradient rejects the whole update.
pub fn adagrad_step(
    store: &mut EmbeddingStore,
    grads: &GradMap,
    cfg: &OptimizerConfig,
) -> Result<()> {
    for ((id, row), grad) in grads {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {id:?} row {row}"
            )));
        }
        let table = store
            .table_mut(*id)
            .ok_or_else(|| Error::Shape(format!("model has no {id:?} table")))?;
        if *row >= table.rows || grad.len() != table.cols {
            return Err(Error::Shape(format!(
                "gradient shape mismatch for {id:?} row {row}"
            )));
        }
        let start = row * table.cols;
        for (k, &g0) in grad.iter().enumerate() {
            let idx = start + k;
            let g = g0 + cfg.weight_decay * table.data[idx];
            table.accum[idx] += g * g;
            table.data[idx] -= cfg.learning_rate * g / (table.accum[idx].sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const EMB_VERSION: u32 = 1;
/// Container tag for an embedding store (MLPs reuse the container with
/// their own tag).
pub(crate) const CONTAINER_TAG_STORE: u8 = 0;
pub(crate) const CONTAINER_TAG_MLP: u8 = 1;

pub(crate) fn write_container_header(w: &mut impl Write, tag: u8) -> std::io::Result<()> {
    w.write_all(EMB_MAGIC)?;
    w.write_all(&EMB_VERSION.to_le_bytes())?;
    w.write_all(&[tag])
}

pub(crate) fn read_container_header(r: &mut impl Read, expect_tag: u8) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Load(format!("truncated header: {e}")))?;
    if &magic != EMB_MAGIC {
        return Err(Error::Load(format!(
            "bad magic {magic:?}, expected {EMB_MAGIC:?}"
        )));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)
        .map_err(|e| Error::Load(format!("truncated version: {e}")))?;
    let version = u32::from_le_bytes(version);
    if version != EMB_VERSION {
        return Err(Error::Load(format!("unsupported version {version}")));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|e| Error::Load(format!("truncated tag: {e}")))?;
    if tag[0] != expect_tag {
        return Err(Error::Load(format!(
            "container tag {} does not match expected {expect_tag}",
            tag[0]
        )));
    }
    Ok(())
}

pub(crate) fn write_table(w: &mut impl Write, t: &Table) -> std::io::Result<()> {
    w.write_all(&(t.rows as u64).to_le_bytes())?;
    w.write_all(&(t.cols as u64).to_le_bytes())?;
    for &v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in &t.accum {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_table(r: &mut impl Read) -> Result<Table> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated table header: {e}")))?;
    let rows = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated table header: {e}")))?;
    let cols = u64::from_le_bytes(buf) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Load("table size overflow".to_string()))?;
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Load(format!("truncated table data: {e}")))?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let data = read_vec(n)?;
    let accum = read_vec(n)?;
    Ok(Table {
        rows,
        cols,
        data,
        accum,
    })
}

/// Lossless store serialization, accumulators included.
pub fn save_store(store: &EmbeddingStore, w: &mut impl Write) -> Result<()> {
    let io = |e| Error::Load(format!("write failed: {e}"));
    write_container_header(w, CONTAINER_TAG_STORE).map_err(io)?;
    let kind_tag = match store.kind {
        ModelKind::TransE => 0u8,
        ModelKind::TransR => 1,
        ModelKind::TransD => 2,
        ModelKind::Rescal => 3,
        ModelKind::DistMult => 4,
        ModelKind::ComplEx => 5,
    };
    w.write_all(&[kind_tag]).map_err(io)?;
    w.write_all(&(store.dim as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&store.seed.to_le_bytes()).map_err(io)?;
    let tables = store.tables();
    w.write_all(&[tables.len() as u8]).map_err(io)?;
    for (id, t) in tables {
        w.write_all(&[id.tag()]).map_err(io)?;
        write_table(w, t).map_err(io)?;
    }
    Ok(())
}

pub fn load_store(r: &mut impl Read) -> Result<EmbeddingStore> {
    read_container_header(r, CONTAINER_TAG_STORE)?;
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|e| Error::Load(format!("truncated model tag: {e}")))?;
    let kind = match b[0] {
        0 => ModelKind::TransE,
        1 => ModelKind::TransR,
        2 => ModelKind::TransD,
        3 => ModelKind::Rescal,
        4 => ModelKind::DistMult,
        5 => ModelKind::ComplEx,
        other => return Err(Error::Load(format!("unknown model tag {other}"))),
    };
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated dims: {e}")))?;
    let dim = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)
        .map_err(|e| Error::Load(format!("truncated seed: {e}")))?;
    let seed = u64::from_le_bytes(buf);
    r.read_exact(&mut b)
        .map_err(|e| Error::Load(format!("truncated table count: {e}")))?;
    let n_tables = b[0] as usize;
    let mut entity = None;
    let mut relation = None;
    let mut entity_proj = None;
    let mut relation_proj = None;
    let mut relation_matrix = None;
    for _ in 0..n_tables {
        r.read_exact(&mut b)
            .map_err(|e| Error::Load(format!("truncated table tag: {e}")))?;
        let id = TableId::from_tag(b[0])?;
        let t = read_table(r)?;
        match id {
            TableId::Entity => entity = Some(t),
            TableId::Relation => relation = Some(t),
            TableId::EntityProj => entity_proj = Some(t),
            TableId::RelationProj => relation_proj = Some(t),
            TableId::RelationMatrix => relation_matrix = Some(t),
        }
    }
    Ok(EmbeddingStore {
        kind,
        dim,
        seed,
        entity: entity.ok_or_else(|| Error::Load("missing entity table".to_string()))?,
        relation: relation.ok_or_else(|| Error::Load("missing relation table".to_string()))?,
        entity_proj,
        relation_proj,
        relation_matrix,
    })
}

/// CSV export of a vector table: `id,name,v0,...,v{d−1}`. Names with commas
/// or quotes are quoted.
pub fn export_csv(table: &Table, names: &[String], w: &mut impl Write) -> Result<()> {
    let io = |e| Error::Load(format!("write failed: {e}"));
    write!(w, "id,name").map_err(io)?;
    for j in 0..table.cols {
        write!(w, ",v{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for i in 0..table.rows {
        let name = names.get(i).map(String::as_str).unwrap_or("");
        let name = if name.contains(',') || name.contains('"') {
            format!("\"{}\"", name.replace('"', "\"\""))
        } else {
            name.to_string()
        };
        write!(w, "{i},{name}").map_err(io)?;
        for &v in table.row(i) {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

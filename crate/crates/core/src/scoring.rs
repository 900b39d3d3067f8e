//! The six scoring functions and their analytic gradients.
//!
//! Everything is expressed as an energy: lower = more plausible edge.
//! Translational models already are distances; bilinear scores (RESCAL,
//! DistMult, ComplEx) are negated so the same margin loss applies to all
//! kinds.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Triple;
use crate::store::{EmbeddingStore, TableId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelKind {
    TransE,
    TransR,
    TransD,
    Rescal,
    DistMult,
    ComplEx,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<ModelKind> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "transr" => Ok(ModelKind::TransR),
            "transd" => Ok(ModelKind::TransD),
            "rescal" => Ok(ModelKind::Rescal),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            other => Err(Error::Config(format!("unknown scoring model {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::TransR => "transr",
            ModelKind::TransD => "transd",
            ModelKind::Rescal => "rescal",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
        }
    }

    pub fn is_translational(&self) -> bool {
        matches!(self, ModelKind::TransE | ModelKind::TransR | ModelKind::TransD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormOrder {
    L1,
    L2,
}

/// Model choice plus the margin γ and norm order p for translational kinds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoringModel {
    pub kind: ModelKind,
    pub norm_order: NormOrder,
    pub margin: f64,
}

impl ScoringModel {
    pub fn new(kind: ModelKind, norm_order: NormOrder, margin: f64) -> Result<Self> {
        if margin <= 0.0 {
            return Err(Error::Config(format!("margin must be positive, got {margin}")));
        }
        Ok(ScoringModel {
            kind,
            norm_order,
            margin,
        })
    }
}

/// Sparse gradient: parameter row -> gradient vector for that row.
pub type GradMap = BTreeMap<(TableId, usize), Vec<f64>>;

pub fn add_to_grad(map: &mut GradMap, id: TableId, row: usize, grad: &[f64], scale: f64) {
    let entry = map
        .entry((id, row))
        .or_insert_with(|| vec![0.0; grad.len()]);
    for (e, g) in entry.iter_mut().zip(grad) {
        *e += scale * g;
    }
}

fn norm(u: &[f64], order: NormOrder) -> f64 {
    match order {
        NormOrder::L1 => u.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => u.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// d‖u‖/du with the subgradient choices sign(0)=0 and ∇‖0‖₂ = 0.
fn norm_grad(u: &[f64], order: NormOrder) -> Vec<f64> {
    match order {
        NormOrder::L1 => u
            .iter()
            .map(|&x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        NormOrder::L2 => {
            let n = norm(u, NormOrder::L2);
            if n == 0.0 {
                vec![0.0; u.len()]
            } else {
                u.iter().map(|&x| x / n).collect()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y = M x for a row-major d×d matrix.
fn matvec(m: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], x)).collect()
}

/// y = Mᵀ x.
fn matvec_t(m: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        for (o, &r) in out.iter_mut().zip(row) {
            *o += x[i] * r;
        }
    }
    out
}

/// TransD projection: h + m_r (m_e · e), i.e. (M_r M_eᵀ + I) e.
fn transd_project(e: &[f64], m_e: &[f64], m_r: &[f64]) -> Vec<f64> {
    let alpha = dot(m_e, e);
    e.iter().zip(m_r).map(|(&x, &mr)| x + mr * alpha).collect()
}

/// Energy of a triple under the store's model: lower = more plausible.
pub fn energy(model: &ScoringModel, store: &EmbeddingStore, triple: &Triple) -> f64 {
    let d = store.dim;
    let h = store.entity.row(triple.head as usize);
    let t = store.entity.row(triple.tail as usize);
    let r = store.relation.row(triple.relation as usize);
    match model.kind {
        ModelKind::TransE => {
            let u: Vec<f64> = (0..d).map(|i| h[i] + r[i] - t[i]).collect();
            norm(&u, model.norm_order)
        }
        ModelKind::TransR => {
            let m = store.relation_matrix.as_ref().unwrap().row(triple.relation as usize);
            let mh = matvec(m, h, d);
            let mt = matvec(m, t, d);
            let u: Vec<f64> = (0..d).map(|i| mh[i] + r[i] - mt[i]).collect();
            norm(&u, model.norm_order)
        }
        ModelKind::TransD => {
            let mh = store.entity_proj.as_ref().unwrap().row(triple.head as usize);
            let mt = store.entity_proj.as_ref().unwrap().row(triple.tail as usize);
            let mr = store.relation_proj.as_ref().unwrap().row(triple.relation as usize);
            let ph = transd_project(h, mh, mr);
            let pt = transd_project(t, mt, mr);
            let u: Vec<f64> = (0..d).map(|i| ph[i] + r[i] - pt[i]).collect();
            norm(&u, model.norm_order)
        }
        ModelKind::Rescal => {
            let m = store.relation_matrix.as_ref().unwrap().row(triple.relation as usize);
            let mt = matvec(m, t, d);
            -dot(h, &mt)
        }
        // r*(h*t) keeps the float evaluation symmetric under h/t swap
        ModelKind::DistMult => -(0..d).map(|i| r[i] * (h[i] * t[i])).sum::<f64>(),
        ModelKind::ComplEx => {
            // (re, im) interleaved pairs; tail conjugated.
            let mut s = 0.0;
            for k in 0..d / 2 {
                let (a, b) = (h[2 * k], h[2 * k + 1]);
                let (c, dd) = (r[2 * k], r[2 * k + 1]);
                let (e, f) = (t[2 * k], t[2 * k + 1]);
                s += (a * c - b * dd) * e + (a * dd + b * c) * f;
            }
            -s
        }
    }
}

/// Analytic gradient of [`energy`] w.r.t. every parameter row the triple
/// touches. Self-loop triples (head == tail) accumulate both contributions
/// into the single shared row.
pub fn energy_grad(model: &ScoringModel, store: &EmbeddingStore, triple: &Triple) -> GradMap {
    let d = store.dim;
    let h_id = triple.head as usize;
    let t_id = triple.tail as usize;
    let r_id = triple.relation as usize;
    let h = store.entity.row(h_id);
    let t = store.entity.row(t_id);
    let r = store.relation.row(r_id);
    let mut grads = GradMap::new();
    match model.kind {
        ModelKind::TransE => {
            let u: Vec<f64> = (0..d).map(|i| h[i] + r[i] - t[i]).collect();
            let s = norm_grad(&u, model.norm_order);
            let neg_s: Vec<f64> = s.iter().map(|x| -x).collect();
            add_to_grad(&mut grads, TableId::Entity, h_id, &s, 1.0);
            add_to_grad(&mut grads, TableId::Relation, r_id, &s, 1.0);
            add_to_grad(&mut grads, TableId::Entity, t_id, &neg_s, 1.0);
        }
        ModelKind::TransR => {
            let m = store.relation_matrix.as_ref().unwrap().row(r_id);
            let mh = matvec(m, h, d);
            let mt = matvec(m, t, d);
            let u: Vec<f64> = (0..d).map(|i| mh[i] + r[i] - mt[i]).collect();
            let s = norm_grad(&u, model.norm_order);
            let mts = matvec_t(m, &s, d);
            let neg_mts: Vec<f64> = mts.iter().map(|x| -x).collect();
            add_to_grad(&mut grads, TableId::Entity, h_id, &mts, 1.0);
            add_to_grad(&mut grads, TableId::Entity, t_id, &neg_mts, 1.0);
            add_to_grad(&mut grads, TableId::Relation, r_id, &s, 1.0);
            // dE/dM = s (h - t)ᵀ
            let mut gm = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    gm[i * d + j] = s[i] * (h[j] - t[j]);
                }
            }
            add_to_grad(&mut grads, TableId::RelationMatrix, r_id, &gm, 1.0);
        }
        ModelKind::TransD => {
            let mh = store.entity_proj.as_ref().unwrap().row(h_id);
            let mt = store.entity_proj.as_ref().unwrap().row(t_id);
            let mr = store.relation_proj.as_ref().unwrap().row(r_id);
            let ph = transd_project(h, mh, mr);
            let pt = transd_project(t, mt, mr);
            let u: Vec<f64> = (0..d).map(|i| ph[i] + r[i] - pt[i]).collect();
            let s = norm_grad(&u, model.norm_order);
            let mrs = dot(mr, &s);
            // ∂E/∂h = s + m_h (m_r·s); ∂E/∂t = −(s + m_t (m_r·s))
            let gh: Vec<f64> = (0..d).map(|i| s[i] + mh[i] * mrs).collect();
            let gt: Vec<f64> = (0..d).map(|i| -(s[i] + mt[i] * mrs)).collect();
            add_to_grad(&mut grads, TableId::Entity, h_id, &gh, 1.0);
            add_to_grad(&mut grads, TableId::Entity, t_id, &gt, 1.0);
            add_to_grad(&mut grads, TableId::Relation, r_id, &s, 1.0);
            let gmh: Vec<f64> = h.iter().map(|&x| x * mrs).collect();
            let gmt: Vec<f64> = t.iter().map(|&x| -x * mrs).collect();
            add_to_grad(&mut grads, TableId::EntityProj, h_id, &gmh, 1.0);
            add_to_grad(&mut grads, TableId::EntityProj, t_id, &gmt, 1.0);
            let alpha_h = dot(mh, h);
            let alpha_t = dot(mt, t);
            let gmr: Vec<f64> = s.iter().map(|&si| si * (alpha_h - alpha_t)).collect();
            add_to_grad(&mut grads, TableId::RelationProj, r_id, &gmr, 1.0);
        }
        ModelKind::Rescal => {
            let m = store.relation_matrix.as_ref().unwrap().row(r_id);
            let mt = matvec(m, t, d);
            let mth = matvec_t(m, h, d);
            let gh: Vec<f64> = mt.iter().map(|x| -x).collect();
            let gt: Vec<f64> = mth.iter().map(|x| -x).collect();
            add_to_grad(&mut grads, TableId::Entity, h_id, &gh, 1.0);
            add_to_grad(&mut grads, TableId::Entity, t_id, &gt, 1.0);
            let mut gm = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    gm[i * d + j] = -h[i] * t[j];
                }
            }
            add_to_grad(&mut grads, TableId::RelationMatrix, r_id, &gm, 1.0);
        }
        ModelKind::DistMult => {
            let gh: Vec<f64> = (0..d).map(|i| -r[i] * t[i]).collect();
            let gr: Vec<f64> = (0..d).map(|i| -h[i] * t[i]).collect();
            let gt: Vec<f64> = (0..d).map(|i| -h[i] * r[i]).collect();
            add_to_grad(&mut grads, TableId::Entity, h_id, &gh, 1.0);
            add_to_grad(&mut grads, TableId::Relation, r_id, &gr, 1.0);
            add_to_grad(&mut grads, TableId::Entity, t_id, &gt, 1.0);
        }
        ModelKind::ComplEx => {
            let mut gh = vec![0.0; d];
            let mut gr = vec![0.0; d];
            let mut gt = vec![0.0; d];
            for k in 0..d / 2 {
                let (a, b) = (h[2 * k], h[2 * k + 1]);
                let (c, dd) = (r[2 * k], r[2 * k + 1]);
                let (e, f) = (t[2 * k], t[2 * k + 1]);
                gh[2 * k] = -(c * e + dd * f);
                gh[2 * k + 1] = -(c * f - dd * e);
                gr[2 * k] = -(a * e + b * f);
                gr[2 * k + 1] = -(a * f - b * e);
                gt[2 * k] = -(a * c - b * dd);
                gt[2 * k + 1] = -(a * dd + b * c);
            }
            add_to_grad(&mut grads, TableId::Entity, h_id, &gh, 1.0);
            add_to_grad(&mut grads, TableId::Relation, r_id, &gr, 1.0);
            add_to_grad(&mut grads, TableId::Entity, t_id, &gt, 1.0);
        }
    }
    grads
}

/// Margin ranking loss over one positive and its negatives, and the loss
/// derivative w.r.t. each energy: +1 toward the positive and −1 toward each
/// negative where the hinge is active.
pub fn margin_loss(margin: f64, pos: f64, negs: &[f64]) -> (f64, f64, Vec<f64>) {
    debug_assert!(!negs.is_empty());
    let mut loss = 0.0;
    let mut dpos = 0.0;
    let mut dnegs = vec![0.0; negs.len()];
    for (i, &neg) in negs.iter().enumerate() {
        let hinge = pos - neg + margin;
        if hinge > 0.0 {
            loss += hinge;
            dpos += 1.0;
            dnegs[i] = -1.0;
        }
    }
    (loss, dpos, dnegs)
}

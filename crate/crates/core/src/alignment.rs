//! Cross-source distribution discrepancy measures.
//!
//! The training losses (MMD², diagonal-Gaussian KL and its symmetrization)
//! are differentiable through the sample rows. The histogram JS estimator is
//! a diagnostic only and carries no gradients.

use crate::error::{Error, Result};

/// Rows gathered from one source's batch: an n × d sample of its embedding
/// distribution.
#[derive(Debug, Clone, Default)]
pub struct Sample {
    pub rows: Vec<Vec<f64>>,
}

impl Sample {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Sample { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Bandwidth {
    /// σ recomputed per call as the median pairwise distance of the pooled
    /// sample (treated as a constant for gradients).
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AlignKind {
    None,
    Kl,
    Js,
    Mmd,
    Adversarial,
}

impl AlignKind {
    pub fn parse(s: &str) -> Result<AlignKind> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AlignKind::None),
            "kl" => Ok(AlignKind::Kl),
            "js" => Ok(AlignKind::Js),
            "mmd" => Ok(AlignKind::Mmd),
            "adversarial" | "adv" => Ok(AlignKind::Adversarial),
            other => Err(Error::Config(format!("unknown alignment kind {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlignKind::None => "none",
            AlignKind::Kl => "kl",
            AlignKind::Js => "js",
            AlignKind::Mmd => "mmd",
            AlignKind::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlignmentSpec {
    pub kind: AlignKind,
    pub bandwidth: Bandwidth,
    pub hist_bins: usize,
    pub hist_smoothing: f64,
    pub lambda: f64,
    /// Adversarial only: with exactly two sources, target the *other*
    /// source's label instead of the uniform confusion distribution.
    pub flip_targets: bool,
}

impl Default for AlignmentSpec {
    fn default() -> Self {
        AlignmentSpec {
            kind: AlignKind::None,
            bandwidth: Bandwidth::MedianHeuristic,
            hist_bins: 64,
            hist_smoothing: 1e-8,
            flip_targets: false,
            lambda: 1.0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows.
pub fn median_heuristic(p: &Sample, q: &Sample) -> f64 {
    let pooled: Vec<&[f64]> = p
        .rows
        .iter()
        .chain(q.rows.iter())
        .map(|r| r.as_slice())
        .collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = dists[dists.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct MeasureResult {
    /// The loss value used for training (clamped to be >= 0 for MMD).
    pub value: f64,
    /// Unclamped estimate (can dip below zero for the unbiased MMD²).
    pub raw: f64,
    pub grad_p: Vec<Vec<f64>>,
    pub grad_q: Vec<Vec<f64>>,
}

/// Squared MMD, unbiased U-statistic, Gaussian kernel
/// k(x,y) = exp(−‖x−y‖²/(2σ²)). Gradients are analytic through the kernel;
/// a median-heuristic σ is treated as a constant.
pub fn mmd2(p: &Sample, q: &Sample, bandwidth: Bandwidth) -> Result<MeasureResult> {
    let m = p.len();
    let n = q.len();
    if m < 2 || n < 2 {
        return Err(Error::Config(format!(
            "mmd2 needs at least 2 rows per sample, got {m} and {n}"
        )));
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => {
            if s <= 0.0 {
                return Err(Error::Config(format!("bandwidth must be positive, got {s}")));
            }
            s
        }
        Bandwidth::MedianHeuristic => median_heuristic(p, q),
    };
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let inv_sigma2 = 1.0 / (sigma * sigma);
    let kernel = |a: &[f64], b: &[f64]| (-sq_dist(a, b) * inv_two_sigma2).exp();

    let mut grad_p = vec![vec![0.0; p.rows[0].len()]; m];
    let mut grad_q = vec![vec![0.0; q.rows[0].len()]; n];

    let mut term_pp = 0.0;
    let w_pp = 1.0 / (m as f64 * (m as f64 - 1.0));
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let k = kernel(&p.rows[i], &p.rows[j]);
            term_pp += k;
            // dk/dx_i = -k (x_i - x_j)/σ²; x_i appears in both ordered
            // pairs (i,j) and (j,i), hence the factor 2
            for (g, (a, b)) in grad_p[i].iter_mut().zip(p.rows[i].iter().zip(&p.rows[j])) {
                *g += 2.0 * w_pp * (-k) * (a - b) * inv_sigma2;
            }
        }
    }
    term_pp *= w_pp;

    let mut term_qq = 0.0;
    let w_qq = 1.0 / (n as f64 * (n as f64 - 1.0));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = kernel(&q.rows[i], &q.rows[j]);
            term_qq += k;
            for (g, (a, b)) in grad_q[i].iter_mut().zip(q.rows[i].iter().zip(&q.rows[j])) {
                *g += 2.0 * w_qq * (-k) * (a - b) * inv_sigma2;
            }
        }
    }
    term_qq *= w_qq;

    let mut term_pq = 0.0;
    let w_pq = 2.0 / (m as f64 * n as f64);
    for i in 0..m {
        for j in 0..n {
            let k = kernel(&p.rows[i], &q.rows[j]);
            term_pq += k;
            for (g, (a, b)) in grad_p[i].iter_mut().zip(p.rows[i].iter().zip(&q.rows[j])) {
                *g -= w_pq * (-k) * (a - b) * inv_sigma2;
            }
            for (g, (a, b)) in grad_q[j].iter_mut().zip(q.rows[j].iter().zip(&p.rows[i])) {
                *g -= w_pq * (-k) * (a - b) * inv_sigma2;
            }
        }
    }
    term_pq *= w_pq;

    let raw = term_pp + term_qq - term_pq;
    if raw <= 0.0 {
        // clamp: flat region, no gradient
        for g in grad_p.iter_mut().chain(grad_q.iter_mut()) {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        return Ok(MeasureResult {
            value: 0.0,
            raw,
            grad_p,
            grad_q,
        });
    }
    Ok(MeasureResult {
        value: raw,
        raw,
        grad_p,
        grad_q,
    })
}

const VAR_FLOOR: f64 = 1e-6;

struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
    /// true where the raw variance fell below the floor (gradient through
    /// the variance path is cut there)
    floored: Vec<bool>,
}

fn fit_diag_gaussian(s: &Sample) -> DiagGaussian {
    let n = s.len() as f64;
    let d = s.rows[0].len();
    let mut mean = vec![0.0; d];
    for row in &s.rows {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in &s.rows {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let floored: Vec<bool> = var.iter().map(|&v| v < VAR_FLOOR).collect();
    for (v, &f) in var.iter_mut().zip(&floored) {
        if f {
            *v = VAR_FLOOR;
        }
    }
    DiagGaussian { mean, var, floored }
}

/// KL(N_P ‖ N_Q) between diagonal Gaussians fitted to the two samples
/// (population moments, variances floored at 1e-6), summed over dimensions.
pub fn gaussian_kl(p: &Sample, q: &Sample) -> Result<MeasureResult> {
    let m = p.len();
    let n = q.len();
    if m < 2 || n < 2 {
        return Err(Error::Config(format!(
            "gaussian_kl needs at least 2 rows per sample, got {m} and {n}"
        )));
    }
    let d = p.rows[0].len();
    let gp = fit_diag_gaussian(p);
    let gq = fit_diag_gaussian(q);

    let mut value = 0.0;
    // per-dimension partials w.r.t. the four moments
    let mut d_mu_p = vec![0.0; d];
    let mut d_mu_q = vec![0.0; d];
    let mut d_var_p = vec![0.0; d];
    let mut d_var_q = vec![0.0; d];
    for k in 0..d {
        let diff = gp.mean[k] - gq.mean[k];
        let vp = gp.var[k];
        let vq = gq.var[k];
        value += 0.5 * (vq / vp).ln() + (vp + diff * diff) / (2.0 * vq) - 0.5;
        d_mu_p[k] = diff / vq;
        d_mu_q[k] = -diff / vq;
        d_var_p[k] = if gp.floored[k] {
            0.0
        } else {
            -0.5 / vp + 0.5 / vq
        };
        d_var_q[k] = if gq.floored[k] {
            0.0
        } else {
            0.5 / vq - (vp + diff * diff) / (2.0 * vq * vq)
        };
    }

    // chain through mean and population variance:
    // ∂μ/∂x_i = 1/n, ∂σ²/∂x_i = 2(x_i − μ)/n
    let chain = |s: &Sample, g: &DiagGaussian, d_mu: &[f64], d_var: &[f64]| -> Vec<Vec<f64>> {
        let n = s.len() as f64;
        s.rows
            .iter()
            .map(|row| {
                (0..row.len())
                    .map(|k| d_mu[k] / n + d_var[k] * 2.0 * (row[k] - g.mean[k]) / n)
                    .collect()
            })
            .collect()
    };
    let grad_p = chain(p, &gp, &d_mu_p, &d_var_p);
    let grad_q = chain(q, &gq, &d_mu_q, &d_var_q);
    Ok(MeasureResult {
        value,
        raw: value,
        grad_p,
        grad_q,
    })
}

/// ½(KL(P‖Q) + KL(Q‖P)) on the fitted Gaussians; symmetric by construction.
pub fn sym_js(p: &Sample, q: &Sample) -> Result<MeasureResult> {
    let fwd = gaussian_kl(p, q)?;
    let bwd = gaussian_kl(q, p)?;
    let value = 0.5 * (fwd.value + bwd.value);
    let combine = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| 0.5 * (u + v)).collect())
            .collect()
    };
    Ok(MeasureResult {
        value,
        raw: value,
        grad_p: combine(&fwd.grad_p, &bwd.grad_q),
        grad_q: combine(&fwd.grad_q, &bwd.grad_p),
    })
}

/// Histogram JS diagnostic: per dimension, shared equal-width bins over the
/// pooled min/max, ε-smoothed normalized counts, symmetrized discrete KL,
/// averaged over dimensions. All-constant pooled dimensions contribute 0.
pub fn hist_js(p: &Sample, q: &Sample, bins: usize, smoothing: f64) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Config("hist_js needs at least 1 row per sample".to_string()));
    }
    if bins < 2 {
        return Err(Error::Config(format!("hist_js needs >= 2 bins, got {bins}")));
    }
    let d = p.rows[0].len();
    let mut total = 0.0;
    for k in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in p.rows.iter().chain(q.rows.iter()) {
            lo = lo.min(row[k]);
            hi = hi.max(row[k]);
        }
        if hi <= lo {
            continue; // constant dimension
        }
        let width = (hi - lo) / bins as f64;
        let histogram = |rows: &[Vec<f64>]| -> Vec<f64> {
            let mut counts = vec![0.0; bins];
            for row in rows {
                let mut b = ((row[k] - lo) / width) as usize;
                if b >= bins {
                    b = bins - 1;
                }
                counts[b] += 1.0;
            }
            let mass: f64 = counts.iter().map(|c| c + smoothing).sum();
            counts.iter().map(|c| (c + smoothing) / mass).collect()
        };
        let hp = histogram(&p.rows);
        let hq = histogram(&q.rows);
        let kl = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(&x, &y)| x * (x / y).ln()).sum()
        };
        total += 0.5 * (kl(&hp, &hq) + kl(&hq, &hp));
    }
    Ok(total / d as f64)
}

/// Pairwise regularization loss: sum over unordered source pairs of
/// measure(entity_i, entity_j) + measure(relation_i, relation_j). The
/// relation term for a pair is skipped when either side has fewer than 2
/// rows. Gradient matrices are aligned with the input samples.
pub struct DistLoss {
    pub value: f64,
    pub entity_grads: Vec<Vec<Vec<f64>>>,
    pub relation_grads: Vec<Vec<Vec<f64>>>,
}

pub fn dist_loss(
    entity_samples: &[Sample],
    relation_samples: &[Sample],
    spec: &AlignmentSpec,
) -> Result<DistLoss> {
    let k = entity_samples.len();
    if relation_samples.len() != k {
        return Err(Error::Shape(
            "entity and relation sample counts differ".to_string(),
        ));
    }
    let measure = |p: &Sample, q: &Sample| -> Result<MeasureResult> {
        match spec.kind {
            AlignKind::Kl => gaussian_kl(p, q),
            AlignKind::Js => sym_js(p, q),
            AlignKind::Mmd => mmd2(p, q, spec.bandwidth),
            other => Err(Error::Config(format!(
                "dist_loss does not apply to alignment kind {:?}",
                other.name()
            ))),
        }
    };
    let mut value = 0.0;
    let mut entity_grads: Vec<Vec<Vec<f64>>> = entity_samples
        .iter()
        .map(|s| s.rows.iter().map(|r| vec![0.0; r.len()]).collect())
        .collect();
    let mut relation_grads: Vec<Vec<Vec<f64>>> = relation_samples
        .iter()
        .map(|s| s.rows.iter().map(|r| vec![0.0; r.len()]).collect())
        .collect();
    let accumulate = |dst: &mut Vec<Vec<f64>>, src: &[Vec<f64>]| {
        for (d, s) in dst.iter_mut().zip(src) {
            for (x, y) in d.iter_mut().zip(s) {
                *x += y;
            }
        }
    };
    for i in 0..k {
        for j in (i + 1)..k {
            let r = measure(&entity_samples[i], &entity_samples[j])?;
            value += r.value;
            accumulate(&mut entity_grads[i], &r.grad_p);
            accumulate(&mut entity_grads[j], &r.grad_q);
            if relation_samples[i].len() >= 2 && relation_samples[j].len() >= 2 {
                let r = measure(&relation_samples[i], &relation_samples[j])?;
                value += r.value;
                accumulate(&mut relation_grads[i], &r.grad_p);
                accumulate(&mut relation_grads[j], &r.grad_q);
            }
        }
    }
    Ok(DistLoss {
        value,
        entity_grads,
        relation_grads,
    })
}

//! Triplet loss for source pretraining, the non-parametric softmax with its
//! entropy, and the anchor-neighborhood loss for target adaptation. Every
//! loss returns exact gradients with respect to the embeddings it consumes.

use crate::discovery::MemoryBank;
use crate::error::{GaitError, Result};
use crate::numerics::{dot, euclidean_distance, scaled_softmax};

/// `[d_ap - d_an + margin]_+` for one triple.
pub fn triplet_hinge(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    /// Mean hinge over all valid triples (inactive ones included).
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub triples: usize,
    pub active: usize,
}

/// Batch-all triplet loss.
///
/// Every `(a, p, n)` with `label[a] == label[p]`, `a != p` and
/// `label[n] != label[a]` contributes; the sum of hinges is divided by the
/// total triple count. Distances are Euclidean. The gradient of a distance
/// at zero is taken as zero.
pub fn triplet_loss<E: AsRef<[f64]>>(
    embeddings: &[E],
    labels: &[usize],
    margin: f64,
) -> Result<TripletOutput> {
    if embeddings.len() != labels.len() {
        return Err(GaitError::param(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if !(margin > 0.0) {
        return Err(GaitError::param(format!(
            "margin must be > 0, got {margin}"
        )));
    }
    let n = embeddings.len();
    let dim = embeddings.first().map_or(0, |e| e.as_ref().len());
    if embeddings.iter().any(|e| e.as_ref().len() != dim) {
        return Err(GaitError::param("embeddings of different dimensions"));
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean_distance(embeddings[i].as_ref(), embeddings[j].as_ref());
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    // d|x_i - x_j| / dx_i, scaled by `w`, added to x_i and subtracted from x_j
    let push_pair = |grads: &mut Vec<Vec<f64>>, i: usize, j: usize, w: f64| {
        let d = dist[i * n + j];
        if d == 0.0 {
            return;
        }
        let (xi, xj) = (embeddings[i].as_ref(), embeddings[j].as_ref());
        for k in 0..dim {
            let u = w * (xi[k] - xj[k]) / d;
            grads[i][k] += u;
            grads[j][k] -= u;
        }
    };

    let mut grads = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut triples = 0usize;
    let mut active = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                triples += 1;
                let h = triplet_hinge(dist[a * n + p], dist[a * n + neg], margin);
                if h > 0.0 {
                    total += h;
                    active.push((a, p, neg));
                }
            }
        }
    }
    if triples == 0 {
        return Err(GaitError::EmptyTriplet);
    }
    let scale = 1.0 / triples as f64;
    for &(a, p, neg) in &active {
        push_pair(&mut grads, a, p, scale);
        push_pair(&mut grads, a, neg, -scale);
    }
    Ok(TripletOutput {
        loss: total * scale,
        grads,
        triples,
        active: active.len(),
    })
}

/// One anchor's non-parametric softmax over the memory bank.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRow {
    pub anchor: usize,
    pub tau: f64,
    /// One probability per bank entry. The excluded entry, if any, holds 0.
    pub probs: Vec<f64>,
    pub excluded: Option<usize>,
}

impl SoftmaxRow {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probabilities of the entries that take part in the softmax.
    pub fn members(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .copied()
            .enumerate()
            .filter(move |(j, _)| Some(*j) != self.excluded)
    }
}

/// `p_j = exp(x . X_j / tau) / sum_k exp(x . X_k / tau)` over the bank.
///
/// With `exclude_self` the anchor's own bank entry is left out of the
/// denominator.
pub fn softmax_row(
    anchor_index: usize,
    anchor: &[f64],
    bank: &MemoryBank,
    tau: f64,
    exclude_self: bool,
) -> Result<SoftmaxRow> {
    if bank.is_empty() {
        return Err(GaitError::param("softmax over an empty memory bank"));
    }
    if anchor.len() != bank.dim() {
        return Err(GaitError::param(format!(
            "anchor dim {} does not match bank dim {}",
            anchor.len(),
            bank.dim()
        )));
    }
    if anchor_index >= bank.len() {
        return Err(GaitError::param(format!(
            "anchor index {anchor_index} outside bank of {}",
            bank.len()
        )));
    }
    let excluded = exclude_self.then_some(anchor_index);
    if excluded.is_some() && bank.len() < 2 {
        return Err(GaitError::param(
            "self-excluded softmax needs at least 2 bank entries",
        ));
    }
    let scores: Vec<f64> = bank
        .entries()
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != excluded)
        .map(|(_, e)| dot(anchor, e))
        .collect();
    let mut p = scaled_softmax(&scores, tau)?.into_iter();
    let probs = (0..bank.len())
        .map(|j| {
            if Some(j) == excluded {
                0.0
            } else {
                p.next().expect("one probability per member")
            }
        })
        .collect();
    Ok(SoftmaxRow {
        anchor: anchor_index,
        tau,
        probs,
        excluded,
    })
}

/// Natural-log entropy `-sum p log p` of a row.
pub fn entropy(row: &SoftmaxRow) -> f64 {
    -row.members()
        .filter(|&(_, p)| p > 0.0)
        .map(|(_, p)| p * p.ln())
        .sum::<f64>()
}

/// One term of the anchor-neighborhood loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTerm {
    pub anchor: Vec<f64>,
    pub row: SoftmaxRow,
    /// Bank indices whose probability mass the anchor should capture. The
    /// anchor's own index belongs here unless it is excluded from the row.
    pub neighborhood: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnOutput {
    pub loss: f64,
    /// Gradient with respect to each fresh anchor embedding, in input order.
    pub grads: Vec<Vec<f64>>,
}

/// `L = -sum_i log(sum_{j in N_i} p_ij)`.
///
/// Bank entries are constants; only the fresh anchor embeddings receive
/// gradient:
/// `dL/dx_i = (sum_j p_ij X_j - sum_{j in N_i} q_ij X_j) / tau` with `q` the
/// row renormalized over the neighborhood.
pub fn an_loss(terms: &[AnchorTerm], bank: &MemoryBank) -> Result<AnOutput> {
    if terms.is_empty() {
        return Err(GaitError::EmptyAnchors);
    }
    let dim = bank.dim();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(terms.len());
    for term in terms {
        let row = &term.row;
        if row.len() != bank.len() {
            return Err(GaitError::param("softmax row does not span the bank"));
        }
        if term.neighborhood.is_empty() {
            return Err(GaitError::param(format!(
                "anchor {} has an empty neighborhood",
                row.anchor
            )));
        }
        if let Some(&j) = term
            .neighborhood
            .iter()
            .find(|&&j| j >= bank.len() || Some(j) == row.excluded)
        {
            return Err(GaitError::param(format!(
                "neighbor {j} of anchor {} is not in its softmax row",
                row.anchor
            )));
        }
        let mass: f64 = term.neighborhood.iter().map(|&j| row.probs[j]).sum();
        loss -= mass.ln();

        let mut g = vec![0.0; dim];
        for (j, p) in row.members() {
            for (gk, xk) in g.iter_mut().zip(bank.entry(j)) {
                *gk += p * xk;
            }
        }
        for &j in &term.neighborhood {
            let q = row.probs[j] / mass;
            for (gk, xk) in g.iter_mut().zip(bank.entry(j)) {
                *gk -= q * xk;
            }
        }
        for gk in &mut g {
            *gk /= row.tau;
        }
        grads.push(g);
    }
    Ok(AnOutput { loss, grads })
}

//! Scalar and vector kernels shared by the encoder, the losses and the
//! neighborhood machinery. Everything here is `f64`.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GaitError, Result};

/// Norms at or below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// Numerical slack allowed on cosine similarities outside `[-1, 1]`.
pub const COSINE_SLACK: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GaitError::param(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na <= MIN_NORM || nb <= MIN_NORM {
        return Err(GaitError::Degenerate(format!(
            "cosine similarity of a zero-norm vector (norms {na:e}, {nb:e})"
        )));
    }
    Ok(dot(a, b) / (na * nb))
}

pub fn l2_normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n <= MIN_NORM || !n.is_finite() {
        return Err(GaitError::Degenerate(format!(
            "cannot normalize vector with norm {n:e}"
        )));
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// `exp(s_j / tau) / sum_k exp(s_k / tau)`, evaluated with max subtraction.
pub fn scaled_softmax(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(GaitError::param(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    if scores.is_empty() {
        return Err(GaitError::param("softmax over an empty score list"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Dense row-major similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl SimMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }
}

/// Cosine similarity of every row vector against every column vector.
///
/// Inputs are expected to be unit-normalized already, so each entry is a
/// plain dot product. Rows are computed in parallel; each entry has a fixed
/// reduction order so the result does not depend on the thread count.
pub fn pairwise_similarity<R, C>(rows: &[R], cols: &[C]) -> Result<SimMatrix>
where
    R: AsRef<[f64]> + Sync,
    C: AsRef<[f64]> + Sync,
{
    let dim = rows
        .first()
        .map(|r| r.as_ref().len())
        .or_else(|| cols.first().map(|c| c.as_ref().len()))
        .unwrap_or(0);
    if let Some(bad) = rows
        .iter()
        .map(|r| r.as_ref().len())
        .chain(cols.iter().map(|c| c.as_ref().len()))
        .find(|&len| len != dim)
    {
        return Err(GaitError::param(format!(
            "dimension mismatch in pairwise similarity: {bad} vs {dim}"
        )));
    }
    let entries: Vec<f64> = rows
        .par_iter()
        .flat_map_iter(|r| cols.iter().map(move |c| dot(r.as_ref(), c.as_ref())))
        .collect();
    Ok(SimMatrix {
        rows: rows.len(),
        cols: cols.len(),
        entries,
    })
}

/// Seeded pseudo-random generator. ChaCha8 keeps streams identical across
/// platforms for a given seed.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator derived from `seed` and a stream label, so that
    /// separate stages do not consume each other's draws.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..len`, uniformly.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, len, amount).into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let c = cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert!((c - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(GaitError::Degenerate(_))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(GaitError::Parameter(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(GaitError::Degenerate(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = scaled_softmax(&[0.3; 4], 0.7).unwrap();
        for x in &p {
            assert!((x - 0.25).abs() < 1e-15);
        }
        // exp(10) / (exp(10) + exp(5)) = 1 / (1 + exp(-5))
        let p = scaled_softmax(&[1.0, 0.5], 0.1).unwrap();
        assert!((p[0] - 0.993_307_149_075_715_2).abs() < 1e-6);
        assert!((p[1] - 0.006_692_850_924_284_856).abs() < 1e-6);
        let p = scaled_softmax(&[0.9, 0.9, 0.1], 0.1).unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn softmax_rejects_bad_tau() {
        assert!(scaled_softmax(&[1.0], 0.0).is_err());
        assert!(scaled_softmax(&[1.0], -1.0).is_err());
        assert!(scaled_softmax(&[], 1.0).is_err());
    }

    #[test]
    fn pairwise_basis_is_identity() {
        let basis = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = pairwise_similarity(&basis, &basis).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
        let one = vec![vec![0.6, 0.8]];
        assert_eq!(pairwise_similarity(&one, &one).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn pairwise_matches_loop_oracle() {
        let mut rng = Rng::new(7);
        let unit = |rng: &mut Rng| {
            let v: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            l2_normalize(&v).unwrap()
        };
        let rows: Vec<_> = (0..5).map(|_| unit(&mut rng)).collect();
        let cols: Vec<_> = (0..7).map(|_| unit(&mut rng)).collect();
        let m = pairwise_similarity(&rows, &cols).unwrap();
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..6 {
                    s += r[k] * c[k];
                }
                assert!((m.get(i, j) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pairwise_dimension_mismatch() {
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![1.0, 0.0, 0.0]];
        assert!(pairwise_similarity(&a, &b).is_err());
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::derived(42, 1);
        let mut d = Rng::derived(42, 2);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    mod props {
        use super::*;
        use crate::numerics::Rng;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one(scores in prop::collection::vec(-50.0f64..50.0, 1..40), tau in 1e-3f64..=10.0) {
                let p = scaled_softmax(&scores, tau).unwrap();
                let total: f64 = p.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn softmax_shift_invariant(scores in prop::collection::vec(-5.0f64..5.0, 1..20), shift in -100.0f64..100.0, tau in 0.05f64..=10.0) {
                let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
                let a = scaled_softmax(&scores, tau).unwrap();
                let b = scaled_softmax(&shifted, tau).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }

            #[test]
            fn softmax_preserves_order(scores in prop::collection::vec(-1.0f64..1.0, 2..20), tau in 0.05f64..=10.0) {
                let p = scaled_softmax(&scores, tau).unwrap();
                for i in 0..scores.len() {
                    for j in 0..scores.len() {
                        if scores[i] > scores[j] {
                            prop_assert!(p[i] >= p[j]);
                        }
                    }
                }
            }

            #[test]
            fn pairwise_self_is_symmetric(seed in 0u64..1000, n in 1usize..12) {
                let mut rng = Rng::new(seed);
                let vs: Vec<Vec<f64>> = (0..n)
                    .map(|_| l2_normalize(&(0..5).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap())
                    .collect();
                let m = pairwise_similarity(&vs, &vs).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        prop_assert_eq!(m.get(i, j), m.get(j, i));
                        prop_assert!(m.get(i, j).abs() <= 1.0 + COSINE_SLACK);
                    }
                }
            }
        }
    }
}

//! Gallery/probe rank-1 identification.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequenceRecord;
use crate::encoder::Condition;
use crate::error::{GaitError, Result};
use crate::numerics::squared_distance;

/// How sequences of each test identity are split into gallery and probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Convention {
    /// Normal-condition runs `1..=n` (all views) form the gallery; every
    /// other sequence of the identity is a probe.
    FirstNGallery { n: u32 },
    /// The identity's first sequence goes to the gallery and the rest are
    /// probes, or the reverse when `probe_first` is set.
    FirstSequenceGallery { probe_first: bool },
}

impl Default for Convention {
    fn default() -> Self {
        Convention::FirstNGallery { n: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Indices into the record list.
    pub gallery: Vec<usize>,
    pub probes: Vec<usize>,
    pub exclude_identical_view: bool,
    /// Identities left out because they cannot satisfy the convention.
    pub skipped_identities: Vec<String>,
}

impl EvalProtocol {
    pub fn with_view_exclusion(&self, exclude: bool) -> Self {
        Self {
            exclude_identical_view: exclude,
            ..self.clone()
        }
    }
}

/// Builds a gallery/probe split; a pure function of the records.
pub fn make_protocol(records: &[SequenceRecord], convention: Convention) -> Result<EvalProtocol> {
    let mut by_identity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_identity.entry(r.identity.as_str()).or_default().push(i);
    }
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    let mut skipped = Vec::new();
    for (identity, members) in by_identity {
        let sequences: BTreeSet<(Condition, u32)> = members
            .iter()
            .map(|&i| (records[i].condition, records[i].run))
            .collect();
        let in_gallery: Box<dyn Fn(&SequenceRecord) -> bool> = match convention {
            Convention::FirstNGallery { n } => {
                let normal_runs = sequences
                    .iter()
                    .filter(|(c, r)| *c == Condition::Normal && *r <= n)
                    .count();
                if normal_runs < n as usize || n == 0 {
                    warn!("identity {identity}: {normal_runs} normal runs, gallery needs {n}; skipped");
                    skipped.push(identity.to_string());
                    continue;
                }
                Box::new(move |r: &SequenceRecord| r.condition == Condition::Normal && r.run <= n)
            }
            Convention::FirstSequenceGallery { probe_first } => {
                if sequences.len() < 2 {
                    warn!("identity {identity}: a single sequence cannot form gallery and probe; skipped");
                    skipped.push(identity.to_string());
                    continue;
                }
                let first = *sequences.iter().next().expect("non-empty");
                Box::new(move |r: &SequenceRecord| ((r.condition, r.run) == first) != probe_first)
            }
        };
        for i in members {
            if in_gallery(&records[i]) {
                gallery.push(i);
            } else {
                probes.push(i);
            }
        }
    }
    gallery.sort_unstable();
    probes.sort_unstable();
    Ok(EvalProtocol {
        gallery,
        probes,
        exclude_identical_view: false,
        skipped_identities: skipped,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub correct: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub accuracy: f64,
}

impl Score {
    fn finish(mut self) -> Self {
        self.accuracy = if self.evaluated == 0 {
            0.0
        } else {
            self.correct as f64 / self.evaluated as f64
        };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1 {
    pub overall: Score,
    pub per_condition: BTreeMap<Condition, Score>,
}

/// Nearest gallery entry for one probe, or `None` when view exclusion
/// empties its gallery. Ties go to the lower gallery index.
fn nearest<E: AsRef<[f64]>>(
    probe: usize,
    embeddings: &[E],
    records: &[SequenceRecord],
    protocol: &EvalProtocol,
) -> Option<usize> {
    let q = embeddings[probe].as_ref();
    let mut best: Option<(usize, f64)> = None;
    for &g in &protocol.gallery {
        if protocol.exclude_identical_view && records[g].view == records[probe].view {
            continue;
        }
        let d = squared_distance(q, embeddings[g].as_ref());
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((g, d));
        }
    }
    best.map(|(g, _)| g)
}

/// Rank-1 accuracy by Euclidean distance. Probes whose gallery is empty
/// after view exclusion are skipped and counted, not scored.
pub fn rank1<E: AsRef<[f64]> + Sync>(
    embeddings: &[E],
    records: &[SequenceRecord],
    protocol: &EvalProtocol,
) -> Result<Rank1> {
    if embeddings.len() != records.len() {
        return Err(GaitError::Protocol(format!(
            "{} embeddings for {} records",
            embeddings.len(),
            records.len()
        )));
    }
    if protocol.gallery.is_empty() {
        return Err(GaitError::Protocol("gallery is empty".into()));
    }
    if let Some(&bad) = protocol
        .gallery
        .iter()
        .chain(&protocol.probes)
        .find(|&&i| i >= records.len())
    {
        return Err(GaitError::Protocol(format!(
            "index {bad} outside record list"
        )));
    }
    let outcomes: Vec<Option<bool>> = protocol
        .probes
        .par_iter()
        .map(|&p| {
            nearest(p, embeddings, records, protocol)
                .map(|g| records[g].identity == records[p].identity)
        })
        .collect();

    let mut overall = Score::default();
    let mut per_condition: BTreeMap<Condition, Score> = BTreeMap::new();
    for (&p, outcome) in protocol.probes.iter().zip(outcomes) {
        let cond = per_condition.entry(records[p].condition).or_default();
        for s in [&mut overall, cond] {
            match outcome {
                Some(hit) => {
                    s.evaluated += 1;
                    s.correct += usize::from(hit);
                }
                None => s.skipped += 1,
            }
        }
    }
    Ok(Rank1 {
        overall: overall.finish(),
        per_condition: per_condition
            .into_iter()
            .map(|(c, s)| (c, s.finish()))
            .collect(),
    })
}

/// Both rank-1 variants for one set of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rank1: Rank1,
    pub rank1_excl: Rank1,
    pub gallery_size: usize,
    pub probe_count: usize,
    pub skipped_identities: Vec<String>,
}

impl EvalSummary {
    /// `NM`, `BG`, `CL` cells as `acc (acc_excl)` in percent.
    pub fn table_row(&self) -> BTreeMap<Condition, String> {
        self.rank1
            .per_condition
            .iter()
            .map(|(c, s)| {
                let excl = self
                    .rank1_excl
                    .per_condition
                    .get(c)
                    .map_or(0.0, |e| e.accuracy);
                (
                    *c,
                    format!("{:.1} ({:.1})", 100.0 * s.accuracy, 100.0 * excl),
                )
            })
            .collect()
    }
}

pub fn evaluate<E: AsRef<[f64]> + Sync>(
    embeddings: &[E],
    records: &[SequenceRecord],
    protocol: &EvalProtocol,
) -> Result<EvalSummary> {
    Ok(EvalSummary {
        rank1: rank1(embeddings, records, &protocol.with_view_exclusion(false))?,
        rank1_excl: rank1(embeddings, records, &protocol.with_view_exclusion(true))?,
        gallery_size: protocol.gallery.len(),
        probe_count: protocol.probes.len(),
        skipped_identities: protocol.skipped_identities.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::numerics::{l2_normalize, Rng};

    fn rec(identity: &str, condition: Condition, run: u32, view: u32) -> SequenceRecord {
        SequenceRecord {
            sample_id: format!("{identity}/{condition}-{run:02}/{view:03}"),
            identity: identity.into(),
            condition,
            run,
            view,
            split: Split::Test,
            frame_count: 1,
            path: String::new(),
        }
    }

    #[test]
    fn exact_match_is_correct() {
        let records = vec![
            rec("a", Condition::Normal, 1, 90),
            rec("b", Condition::Normal, 1, 90),
            rec("a", Condition::Bag, 1, 90),
        ];
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let protocol = make_protocol(&records, Convention::FirstNGallery { n: 1 }).unwrap();
        assert_eq!(protocol.gallery, vec![0, 1]);
        assert_eq!(protocol.probes, vec![2]);
        let r = rank1(&e, &records, &protocol).unwrap();
        assert_eq!(r.overall.accuracy, 1.0);
        assert_eq!(r.per_condition[&Condition::Bag].correct, 1);
    }

    #[test]
    fn exclusion_can_skip_a_probe() {
        let records = vec![
            rec("a", Condition::Normal, 1, 90),
            rec("a", Condition::Normal, 2, 90),
        ];
        let e = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let p = make_protocol(&records, Convention::FirstNGallery { n: 1 }).unwrap();
        let r = rank1(&e, &records, &p.with_view_exclusion(true)).unwrap();
        assert_eq!(r.overall.evaluated, 0);
        assert_eq!(r.overall.skipped, 1);
        assert_eq!(r.overall.accuracy, 0.0);
    }

    #[test]
    fn empty_gallery_is_an_error() {
        let records = vec![rec("a", Condition::Bag, 1, 90)];
        let p = EvalProtocol {
            gallery: vec![],
            probes: vec![0],
            exclude_identical_view: false,
            skipped_identities: vec![],
        };
        assert!(matches!(
            rank1(&[vec![1.0]], &records, &p),
            Err(GaitError::Protocol(_))
        ));
    }

    #[test]
    fn two_sequence_convention() {
        let mut records = Vec::new();
        for id in ["x", "y"] {
            for run in 1..=2 {
                for view in [55, 85] {
                    records.push(rec(id, Condition::Normal, run, view));
                }
            }
        }
        records.push(rec("z", Condition::Normal, 1, 55));
        let p = make_protocol(
            &records,
            Convention::FirstSequenceGallery { probe_first: false },
        )
        .unwrap();
        assert!(p.gallery.iter().all(|&i| records[i].run == 1));
        assert!(p.probes.iter().all(|&i| records[i].run == 2));
        assert_eq!(p.skipped_identities, vec!["z".to_string()]);
        let q = make_protocol(
            &records,
            Convention::FirstSequenceGallery { probe_first: true },
        )
        .unwrap();
        assert_eq!(q.gallery, p.probes);
        assert_eq!(
            make_protocol(
                &records,
                Convention::FirstSequenceGallery { probe_first: false }
            )
            .unwrap(),
            p
        );
    }

    #[test]
    fn too_few_normal_runs_skipped() {
        let records = vec![
            rec("solo", Condition::Normal, 1, 90),
            rec("solo", Condition::Coat, 1, 90),
        ];
        let p = make_protocol(&records, Convention::FirstNGallery { n: 4 }).unwrap();
        assert_eq!(p.skipped_identities, vec!["solo".to_string()]);
        assert!(p.gallery.is_empty() && p.probes.is_empty());
    }

    #[test]
    fn rotation_does_not_change_accuracy() {
        let mut rng = Rng::new(3);
        let mut records = Vec::new();
        let mut e = Vec::new();
        for id in 0..6 {
            for run in 1..=3 {
                records.push(rec(&format!("i{id}"), Condition::Normal, run, 90));
                e.push(l2_normalize(&[rng.normal(), rng.normal()]).unwrap());
            }
        }
        let p = make_protocol(&records, Convention::FirstNGallery { n: 1 }).unwrap();
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let rotated: Vec<Vec<f64>> = e
            .iter()
            .map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]])
            .collect();
        let a = rank1(&e, &records, &p).unwrap();
        let b = rank1(&rotated, &records, &p).unwrap();
        assert_eq!(a.overall.correct, b.overall.correct);
    }
}

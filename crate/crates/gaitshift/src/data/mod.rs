//! Synthetic cross-domain benchmark: generation to disk, loading, and the
//! p x k identity batch sampler used for pretraining.
//!
//! On-disk layout under a domain root:
//!
//! ```text
//! manifest.json
//! <split>/<identity>/<condition>-<run>/<view>/frameNNNN.pgm
//! ```

mod generate;
mod pgm;

pub use generate::{
    render_domain, render_sequence, sample_identities, BodyShape, DomainSpec, GeneratedSequence,
    Split,
};
pub use pgm::{decode_pgm, encode_pgm};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Condition, SilhouetteSequence};
use crate::error::{GaitError, Result};
use crate::numerics::Rng;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub sample_id: String,
    pub identity: String,
    pub condition: Condition,
    pub run: u32,
    pub view: u32,
    pub split: Split,
    pub frame_count: usize,
    /// Directory holding the frames, relative to the dataset root.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub domain: String,
    pub height: usize,
    pub width: usize,
    pub records: Vec<SequenceRecord>,
}

impl DatasetManifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| GaitError::io(&path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| GaitError::Format {
            what: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(GaitError::Format {
                what: path.display().to_string(),
                reason: format!("unsupported format version {}", manifest.format_version),
            });
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = manifest.records.iter().find(|r| !seen.insert(&r.sample_id)) {
            return Err(GaitError::Format {
                what: path.display().to_string(),
                reason: format!("duplicate sample id {}", dup.sample_id),
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| GaitError::io(&path, e))
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SequenceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

fn frame_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame{k:04}.pgm"))
}

/// Renders a domain and writes its frames and manifest under `root`. The
/// manifest is written last, only after every frame file succeeded.
pub fn generate_domain(spec: &DomainSpec, seed: u64, root: &Path) -> Result<DatasetManifest> {
    let generated = render_domain(spec, seed)?;
    fs::create_dir_all(root).map_err(|e| GaitError::io(root, e))?;
    let records: Vec<SequenceRecord> = generated
        .par_iter()
        .map(|g| {
            let s = &g.sequence;
            let rel = format!("{}/{}", g.split.name(), s.id);
            let dir = root.join(&rel);
            fs::create_dir_all(&dir).map_err(|e| GaitError::io(&dir, e))?;
            for (k, frame) in s.frames.iter().enumerate() {
                let file = frame_file(&dir, k);
                fs::write(&file, encode_pgm(frame)).map_err(|e| GaitError::io(&file, e))?;
            }
            Ok(SequenceRecord {
                sample_id: s.id.clone(),
                identity: s.identity.clone().expect("generated data is labeled"),
                condition: s.condition,
                run: s.run,
                view: s.view,
                split: g.split,
                frame_count: s.frames.len(),
                path: rel,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        domain: spec.name.clone(),
        height: spec.height,
        width: spec.width,
        records,
    };
    manifest.write(root)?;
    Ok(manifest)
}

/// A loaded dataset; `sequences[i]` belongs to `manifest.records[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub sequences: Vec<SilhouetteSequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// The records and sequences of one split, in manifest order.
    pub fn split(&self, split: Split) -> Dataset {
        let (records, sequences) = self
            .manifest
            .records
            .iter()
            .zip(&self.sequences)
            .filter(|(r, _)| r.split == split)
            .map(|(r, s)| (r.clone(), s.clone()))
            .unzip();
        Dataset {
            root: self.root.clone(),
            manifest: DatasetManifest {
                records,
                ..self.manifest.clone()
            },
            sequences,
        }
    }

    /// Dense identity index per sequence, in order of first appearance.
    pub fn label_indices(&self) -> Vec<usize> {
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut next = 0;
        self.manifest
            .records
            .iter()
            .map(|r| {
                *ids.entry(r.identity.as_str()).or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.manifest
            .records
            .iter()
            .map(|r| r.sample_id.clone())
            .collect()
    }
}

fn load_record(
    root: &Path,
    manifest: &DatasetManifest,
    rec: &SequenceRecord,
) -> Result<SilhouetteSequence> {
    let fail = |reason: String| GaitError::Load {
        sample: rec.sample_id.clone(),
        reason,
    };
    if rec.frame_count == 0 {
        return Err(fail("manifest lists zero frames".into()));
    }
    let dir = root.join(&rec.path);
    let frames = (0..rec.frame_count)
        .map(|k| {
            let file = frame_file(&dir, k);
            let bytes = fs::read(&file).map_err(|e| fail(format!("{}: {e}", file.display())))?;
            let frame = decode_pgm(&bytes).map_err(|e| fail(format!("{}: {e}", file.display())))?;
            if frame.height() != manifest.height || frame.width() != manifest.width {
                return Err(fail(format!(
                    "{} is {}x{}, manifest says {}x{}",
                    file.display(),
                    frame.height(),
                    frame.width(),
                    manifest.height,
                    manifest.width
                )));
            }
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    if frame_file(&dir, rec.frame_count).exists() {
        return Err(fail(format!(
            "directory {} holds more frames than the manifest's {}",
            dir.display(),
            rec.frame_count
        )));
    }
    Ok(SilhouetteSequence {
        id: rec.sample_id.clone(),
        frames,
        identity: Some(rec.identity.clone()),
        condition: rec.condition,
        run: rec.run,
        view: rec.view,
        domain: manifest.domain.clone(),
    })
}

/// Loads every sequence listed in `root/manifest.json`, validating frames.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(root)?;
    let sequences = manifest
        .records
        .par_iter()
        .map(|rec| load_record(root, &manifest, rec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
        sequences,
    })
}

/// Picks `p` distinct identities and `k` distinct sequences of each,
/// uniformly given the generator state. Returns indices into `labels`.
pub fn sample_pk_batch(labels: &[usize], p: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut by_identity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_identity.entry(l).or_default().push(i);
    }
    let eligible: Vec<&Vec<usize>> = by_identity.values().filter(|v| v.len() >= k).collect();
    if p == 0 || k == 0 || eligible.len() < p {
        let counts: Vec<String> = by_identity
            .iter()
            .map(|(id, v)| format!("{id}:{}", v.len()))
            .collect();
        return Err(GaitError::InfeasibleBatch {
            p,
            k,
            available: format!(
                "{} of {} identities have >= {k} sequences (per-identity counts {})",
                eligible.len(),
                by_identity.len(),
                counts.join(" ")
            ),
        });
    }
    let mut batch = Vec::with_capacity(p * k);
    for pick in rng.sample_indices(eligible.len(), p) {
        let members = eligible[pick];
        batch.extend(
            rng.sample_indices(members.len(), k)
                .into_iter()
                .map(|j| members[j]),
        );
    }
    Ok(batch)
}

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use gaitshift::data::{generate_domain, load_dataset, render_domain, DomainSpec, Split};
use gaitshift::encoder::Condition;
use gaitshift::GaitError;

fn small(name: &str) -> DomainSpec {
    DomainSpec {
        name: name.into(),
        frames: 5,
        views: vec![90, 126],
        runs: BTreeMap::from([(Condition::Normal, 2), (Condition::Bag, 1)]),
        train_identities: 3,
        test_identities: 2,
        ..DomainSpec::source()
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn written_domain_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small("src");
    let manifest = generate_domain(&spec, 9, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.manifest, manifest);

    let rendered = render_domain(&spec, 9).unwrap();
    assert_eq!(rendered.len(), 5 * 3 * 2);
    for (g, seq) in rendered.iter().zip(&loaded.sequences) {
        assert_eq!(&g.sequence.frames, &seq.frames, "{}", seq.id);
        assert_eq!(g.sequence.identity, seq.identity);
    }
}

#[test]
fn generation_is_byte_identical_and_seed_sensitive() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let spec = small("src");
    generate_domain(&spec, 4, dirs[0].path()).unwrap();
    generate_domain(&spec, 4, dirs[1].path()).unwrap();
    generate_domain(&spec, 5, dirs[2].path()).unwrap();
    let trees: Vec<_> = dirs.iter().map(|d| tree(d.path())).collect();
    assert_eq!(trees[0], trees[1]);
    assert_ne!(trees[0], trees[2]);
}

#[test]
fn splits_hold_disjoint_identities() {
    let rendered = render_domain(&small("src"), 2).unwrap();
    let ids = |split: Split| -> BTreeSet<String> {
        rendered
            .iter()
            .filter(|g| g.split == split)
            .map(|g| g.sequence.identity.clone().unwrap())
            .collect()
    };
    let (train, test) = (ids(Split::Train), ids(Split::Test));
    assert_eq!((train.len(), test.len()), (3, 2));
    assert!(train.is_disjoint(&test));
}

#[test]
fn split_view_keeps_records_and_sequences_aligned() {
    let dir = tempfile::tempdir().unwrap();
    generate_domain(&small("src"), 1, dir.path()).unwrap();
    let all = load_dataset(dir.path()).unwrap();
    let test = all.split(Split::Test);
    assert_eq!(test.len(), 2 * 3 * 2);
    for (rec, seq) in test.manifest.records.iter().zip(&test.sequences) {
        assert_eq!(rec.split, Split::Test);
        assert_eq!(rec.sample_id, seq.id);
    }
    let labels = test.label_indices();
    assert_eq!(labels.iter().max(), Some(&1));
}

#[test]
fn corrupt_frame_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_domain(&small("src"), 3, dir.path()).unwrap();
    let victim = &manifest.records[7];
    let file = dir
        .path()
        .join(&victim.path)
        .read_dir()
        .unwrap()
        .map(|e| e.unwrap().path())
        .min()
        .unwrap();
    let mut bytes = fs::read(&file).unwrap();
    let last = bytes.len() - 1;
    bytes[last] = 7; // neither background nor foreground
    fs::write(&file, bytes).unwrap();
    match load_dataset(dir.path()) {
        Err(GaitError::Load { sample, .. }) => assert_eq!(sample, victim.sample_id),
        other => panic!("expected a load error, got {other:?}"),
    }
}

#[test]
fn missing_and_extra_frames_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_domain(&small("src"), 3, dir.path()).unwrap();
    let seq_dir = dir.path().join(&manifest.records[0].path);
    let mut frames: Vec<_> = seq_dir
        .read_dir()
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    frames.sort();
    let last = frames.pop().unwrap();
    let extra = last.with_file_name("extra");
    fs::rename(&last, &extra).unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(GaitError::Load { .. })
    ));

    fs::rename(&extra, &last).unwrap();
    let next = format!("frame{:04}.pgm", manifest.records[0].frame_count);
    fs::copy(&last, last.with_file_name(next)).unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(GaitError::Load { .. })
    ));
}

mod common;

use std::path::Path;

use common::{herding_oracle, rng, tiny_stream};
use diverse_replay::data::{
    images_to_tensor, ingest_image_folder, make_triplet_batches, split_protocol, FolderData, ImageShape,
    LabeledSample, TaskStream, UnlabeledPool,
};
use diverse_replay::memory::{herding_select, ExemplarMemory};
use diverse_replay::Error;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;
use rand::Rng;

fn gray(path: &Path, value: u8) {
    GrayImage::from_pixel(4, 4, Luma([value])).save(path).unwrap();
}

#[test]
fn labeled_folder_is_read_in_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    for (class, values) in [("b_cat", [10u8, 20]), ("a_dog", [200, 100])] {
        std::fs::create_dir(dir.path().join(class)).unwrap();
        for (i, v) in values.iter().enumerate() {
            gray(&dir.path().join(class).join(format!("{i}.png")), *v);
        }
    }
    std::fs::write(dir.path().join("a_dog/broken.png"), b"not an image").unwrap();
    let shape = ImageShape { channels: 1, size: 2 };
    let FolderData::Labeled { samples, class_names } = ingest_image_folder(dir.path(), shape).unwrap() else {
        panic!("expected labeled data");
    };
    assert_eq!(class_names, ["a_dog", "b_cat"]);
    assert_eq!(samples.len(), 4);
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    assert_eq!(labels, [0, 0, 1, 1]);
    assert_eq!(samples.iter().map(|s| s.id).collect::<Vec<_>>(), [0, 1, 2, 3]);
    assert!(samples.iter().all(|s| s.image.len() == 4));
    assert!((samples[0].image[0] - 200.0 / 255.0).abs() < 1e-6);
    assert!((samples[2].image[0] - 10.0 / 255.0).abs() < 1e-6);
}

#[test]
fn flat_folder_is_unlabeled_and_rgb_is_channel_major() {
    let dir = tempfile::tempdir().unwrap();
    RgbImage::from_pixel(3, 3, Rgb([255, 0, 51])).save(dir.path().join("x.png")).unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"skip me").unwrap();
    let shape = ImageShape { channels: 3, size: 3 };
    let FolderData::Unlabeled(images) = ingest_image_folder(dir.path(), shape).unwrap() else {
        panic!("expected unlabeled data");
    };
    assert_eq!(images.len(), 1);
    let img = &images[0];
    assert!(img[..9].iter().all(|&v| v == 1.0));
    assert!(img[9..18].iter().all(|&v| v == 0.0));
    assert!(img[18..].iter().all(|&v| (v - 0.2).abs() < 1e-6));
}

#[test]
fn empty_class_folder_and_bad_channels_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("full")).unwrap();
    gray(&dir.path().join("full/0.png"), 5);
    std::fs::create_dir(dir.path().join("hollow")).unwrap();
    std::fs::write(dir.path().join("hollow/junk.png"), b"nope").unwrap();
    let shape = ImageShape { channels: 1, size: 2 };
    assert!(matches!(ingest_image_folder(dir.path(), shape), Err(Error::Format(_))));
    let bad = ImageShape { channels: 2, size: 2 };
    assert!(matches!(ingest_image_folder(dir.path(), bad), Err(Error::Config { .. })));
    assert!(ingest_image_folder(&dir.path().join("missing"), shape).is_err());
}

#[test]
fn protocol_splits() {
    assert_eq!(split_protocol(100, 5).unwrap(), [50, 10, 10, 10, 10, 10]);
    assert_eq!(split_protocol(100, 2).unwrap(), [50, 25, 25]);
    assert_eq!(split_protocol(6, 3).unwrap(), [3, 1, 1, 1]);
    for (k, s) in [(7, 1), (100, 3), (100, 0), (0, 1)] {
        assert!(matches!(split_protocol(k, s), Err(Error::Config { .. })));
    }
}

#[test]
fn stream_rejects_bad_labels_and_duplicate_ids() {
    let shape = ImageShape { channels: 1, size: 1 };
    let s = |id, label| LabeledSample { id, label, image: vec![0.0] };
    assert!(TaskStream::from_datasets(shape, vec![s(0, 0), s(1, 1)], vec![], &[1, 1]).is_ok());
    assert!(matches!(
        TaskStream::from_datasets(shape, vec![s(0, 2)], vec![], &[1, 1]),
        Err(Error::Index(_))
    ));
    assert!(TaskStream::from_datasets(shape, vec![s(0, 0), s(0, 1)], vec![], &[1, 1]).is_err());
    assert!(images_to_tensor::<f64, _>(shape, std::iter::empty()).is_err());
    assert!(images_to_tensor::<f64, _>(shape, [[0.0f32, 1.0].as_slice()]).is_err());
}

#[test]
fn triplets_pair_exemplars_with_same_class_references() {
    let (stream, pool) = tiny_stream(0);
    let task = stream.task(0).unwrap();
    let exemplars: Vec<&LabeledSample> = task.train.iter().step_by(5).collect();
    let batches = make_triplet_batches(&exemplars, &task.train, &pool, 3, &mut rng(1)).unwrap();
    let flat: Vec<_> = batches.iter().flatten().collect();
    assert_eq!(flat.len(), exemplars.len());
    assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == 3));
    let mut ids: Vec<usize> = flat.iter().map(|t| t.exemplar.id).collect();
    ids.sort_unstable();
    let mut want: Vec<usize> = exemplars.iter().map(|e| e.id).collect();
    want.sort_unstable();
    assert_eq!(ids, want);
    for t in flat {
        assert_eq!(t.exemplar.label, t.reference.label);
        assert!(t.unlabeled < pool.len());
    }
    let empty = UnlabeledPool::new(vec![]);
    assert!(make_triplet_batches(&exemplars, &task.train, &empty, 3, &mut rng(1)).is_err());
    let other = stream.task(1).unwrap();
    assert!(make_triplet_batches(&exemplars, &other.train, &pool, 3, &mut rng(1)).is_err());
}

#[test]
fn memory_rebalances_to_quota_and_round_trips_manifest() {
    let (stream, _) = tiny_stream(3);
    let feats = |xs: &[&LabeledSample]| Ok(xs.iter().map(|s| s.image.iter().map(|&v| v as f64).collect()).collect());
    let mut mem = ExemplarMemory::new(8);
    let t0 = stream.task(0).unwrap();
    mem.add_task_exemplars(&t0.train, &t0.classes, 2, feats).unwrap();
    assert_eq!(mem.class(0).len(), 4);
    let first_ranks: Vec<usize> = mem.class(0).iter().map(|s| s.id).collect();
    let t1 = stream.task(1).unwrap();
    mem.add_task_exemplars(&t1.train, &t1.classes, 3, feats).unwrap();
    for c in 0..3 {
        assert_eq!(mem.class(c).len(), 2);
    }
    // rebalancing drops the lowest-priority exemplars
    let kept: Vec<usize> = mem.class(0).iter().map(|s| s.id).collect();
    assert_eq!(kept, first_ranks[..2]);
    assert!(mem.len() <= mem.budget());

    let manifest = mem.manifest();
    let back = ExemplarMemory::from_manifest(&manifest, |id| stream.train_sample(id).cloned()).unwrap();
    assert_eq!(back, mem);
    assert!(matches!(ExemplarMemory::from_manifest(&manifest, |_| None), Err(Error::Lookup(_))));
    assert!(mem.rebalance(0).is_err());
}

#[test]
fn herding_handles_edge_quotas() {
    let f = vec![vec![1.0], vec![3.0], vec![2.0]];
    assert_eq!(herding_select(&f, 0), Vec::<usize>::new());
    assert_eq!(herding_select(&[], 3), Vec::<usize>::new());
    assert_eq!(herding_select(&f, 1), [2]);
    let mut all = herding_select(&f, 10);
    all.sort_unstable();
    assert_eq!(all, [0, 1, 2]);
    // identical rows tie: lowest index first
    assert_eq!(herding_select(&[vec![0.5], vec![0.5], vec![0.5]], 2), [0, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn herding_matches_brute_force(seed in 0u64..10_000, n in 1usize..=10, d in 1usize..5, quota in 0usize..12) {
        let mut r = rng(seed);
        let f: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let got = herding_select(&f, quota);
        prop_assert_eq!(&got, &herding_oracle(&f, quota));
        prop_assert_eq!(got.len(), quota.min(n));
        let mut u = got.clone();
        u.sort_unstable();
        u.dedup();
        prop_assert_eq!(u.len(), got.len());
    }

    #[test]
    fn pool_draws_stay_in_range(seed in 0u64..1000, size in 1usize..20, n in 0usize..30) {
        let pool = UnlabeledPool::new(vec![vec![0.0]; size]);
        let idx = pool.sample_indices(n, &mut rng(seed)).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| i < size));
        prop_assert_eq!(pool.truncated(size / 2 + 1).len(), size / 2 + 1);
    }
}

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use qaxnet::data::{
    encode_cifar10_batch, load_cifar10_batch, load_cifar10_binary, load_manifest, subsample_imagenet300k,
    synthetic_classification_dataset, write_cifar10_batch, write_ppm, AugmentationPolicy, Dataset, Split, CIFAR_RECORD,
    CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
};
use qaxnet::recon::{color_reconstruction_experiment, grayscale, ReconConfig};
use qaxnet::{Error, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cifar_bytes(records: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0u8; records * CIFAR_RECORD];
    rng.fill_bytes(&mut out);
    for r in 0..records {
        out[r * CIFAR_RECORD] = rng.random_range(0..10);
    }
    out
}

#[test]
fn cifar_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    let bytes = cifar_bytes(37, 1);
    fs::write(&path, &bytes).unwrap();
    let data = load_cifar10_batch(&path, Split::Train).unwrap();
    assert_eq!(data.len(), 37);
    assert_eq!(encode_cifar10_batch(&data).unwrap(), bytes);
    let again = dir.path().join("again.bin");
    write_cifar10_batch(&again, &data).unwrap();
    assert_eq!(fs::read(again).unwrap(), bytes);
}

#[test]
fn cifar_label_and_pixel_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
    bytes[0] = 7;
    bytes[1] = 255; // R(0,0)
    bytes[1 + 1024 + 33] = 51; // G(1,1)
    bytes[CIFAR_RECORD] = 3;
    let path = dir.path().join("b.bin");
    fs::write(&path, bytes).unwrap();
    let data = load_cifar10_batch(&path, Split::Test).unwrap();
    assert_eq!(data.labels(), &[7, 3]);
    assert_eq!(data.class_count(), 10);
    assert_eq!(data.shape(), [3, 32, 32]);
    assert_eq!(data.image(0)[0], 1.0);
    assert_eq!(data.image(0)[1024 + 33], 0.2);
    assert!(data.image(0).iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn cifar_directory_and_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in CIFAR_TRAIN_FILES.iter().enumerate() {
        fs::write(dir.path().join(name), cifar_bytes(4, i as u64)).unwrap();
    }
    let missing = load_cifar10_binary(dir.path());
    assert!(matches!(missing, Err(Error::Format { ref path, .. }) if path.ends_with(CIFAR_TEST_FILE)));
    fs::write(dir.path().join(CIFAR_TEST_FILE), cifar_bytes(3, 9)).unwrap();
    let (train, test) = load_cifar10_binary(dir.path()).unwrap();
    assert_eq!((train.len(), test.len()), (20, 3));
    assert_eq!((train.split, test.split), (Split::Train, Split::Test));

    let mut truncated = cifar_bytes(2, 0);
    truncated.truncate(CIFAR_RECORD + 100);
    fs::write(dir.path().join(CIFAR_TRAIN_FILES[2]), &truncated).unwrap();
    match load_cifar10_binary(dir.path()) {
        Err(Error::Format { path, .. }) => assert!(path.ends_with(CIFAR_TRAIN_FILES[2])),
        other => panic!("expected a format error, got {other:?}"),
    }
    let mut bad_label = cifar_bytes(1, 0);
    bad_label[0] = 10;
    let p = dir.path().join("label.bin");
    fs::write(&p, bad_label).unwrap();
    assert!(matches!(
        load_cifar10_batch(&p, Split::Train),
        Err(Error::Format { .. })
    ));
}

fn tree(root: &Path, classes: &[(&str, usize)]) {
    for (class, n) in classes {
        let d = root.join(class);
        fs::create_dir_all(&d).unwrap();
        for i in 0..*n {
            fs::write(d.join(format!("img_{i:04}.ppm")), b"").unwrap();
        }
    }
}

#[test]
fn subsample_takes_first_files_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    tree(dir.path(), &[("n02", 3), ("n01", 2), ("n03", 4)]);
    fs::write(dir.path().join("n01").join("a_first.ppm"), b"").unwrap();
    let m = subsample_imagenet300k(dir.path(), 1).unwrap();
    assert_eq!(
        m.entries,
        vec!["n01/a_first.ppm", "n02/img_0000.ppm", "n03/img_0000.ppm"]
    );
    assert!(m.warnings.is_empty());
    assert_eq!(m.render(), "n01/a_first.ppm\nn02/img_0000.ppm\nn03/img_0000.ppm\n");
    assert_eq!(subsample_imagenet300k(dir.path(), 1).unwrap(), m);
}

#[test]
fn subsample_flags_short_classes() {
    let dir = tempfile::tempdir().unwrap();
    tree(dir.path(), &[("a", 100), ("b", 400)]);
    let m = subsample_imagenet300k(dir.path(), 300).unwrap();
    assert_eq!(m.entries.iter().filter(|e| e.starts_with("a/")).count(), 100);
    assert_eq!(m.entries.iter().filter(|e| e.starts_with("b/")).count(), 300);
    assert_eq!(m.warnings, vec!["class a: 100 files, wanted 300"]);
    assert!(m
        .render()
        .starts_with("# class a: 100 files, wanted 300\na/img_0000.ppm\n"));
    assert_eq!(m.entries.last().unwrap(), "b/img_0299.ppm");
}

#[test]
fn subsample_full_scale_line_count() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = (0..1000).map(|c| format!("n{c:08}")).collect();
    let classes: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), 301)).collect();
    tree(dir.path(), &classes);
    let m = subsample_imagenet300k(dir.path(), 300).unwrap();
    assert_eq!(m.entries.len(), 300_000);
    assert_eq!(m.render().lines().count(), 300_000);
}

#[test]
fn subsample_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(subsample_imagenet300k(dir.path(), 300), Err(Error::Config(_))));
    assert!(matches!(
        subsample_imagenet300k(&dir.path().join("nope"), 300),
        Err(Error::Config(_))
    ));
    tree(dir.path(), &[("a", 1)]);
    assert!(matches!(subsample_imagenet300k(dir.path(), 0), Err(Error::Config(_))));
}

#[test]
fn manifest_loads_ppm_images_with_sorted_labels() {
    let dir = tempfile::tempdir().unwrap();
    for (class, shade) in [("zebra", 0.25f32), ("apple", 0.75)] {
        fs::create_dir_all(dir.path().join(class)).unwrap();
        for i in 0..2 {
            let img = Tensor::full(&[3, 4, 5], shade);
            write_ppm(&dir.path().join(class).join(format!("{i}.ppm")), &img).unwrap();
        }
    }
    let m = subsample_imagenet300k(dir.path(), 5).unwrap();
    assert_eq!(m.warnings.len(), 2);
    let path = dir.path().join("manifest.txt");
    fs::write(&path, m.render()).unwrap();
    let data = load_manifest(&path).unwrap();
    assert_eq!(data.labels(), &[0, 0, 1, 1]);
    assert_eq!(data.shape(), [3, 4, 5]);
    assert!((data.image(0)[0] - 0.75).abs() < 1.0 / 255.0);
    assert!((data.image(3)[0] - 0.25).abs() < 1.0 / 255.0);
}

#[test]
fn synthetic_dataset_shape_and_determinism() {
    let a = synthetic_classification_dataset(10, 50, 32, 3).unwrap();
    assert_eq!(a.len(), 500);
    assert_eq!(a.shape(), [3, 32, 32]);
    assert_eq!(a.class_count(), 10);
    let b = synthetic_classification_dataset(10, 50, 32, 3).unwrap();
    assert_eq!(a, b);
    let c = synthetic_classification_dataset(10, 50, 32, 4).unwrap();
    assert_ne!(a, c);
    for c in 0..10 {
        assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 50);
    }
    assert!(synthetic_classification_dataset(0, 1, 8, 0).is_err());
}

#[test]
fn dataset_invariants_are_enforced() {
    assert!(matches!(
        Dataset::new(vec![0.0; 11], vec![0], [3, 2, 2], 2, Split::Train),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        Dataset::new(vec![0.0; 12], vec![2], [3, 2, 2], 2, Split::Train),
        Err(Error::Index(_))
    ));
}

#[test]
fn evaluation_batches_are_deterministic() {
    let data = synthetic_classification_dataset(3, 4, 8, 0).unwrap();
    let policy = AugmentationPolicy {
        mean: vec![0.5, 0.5, 0.5],
        std: vec![0.25, 0.25, 0.25],
        ..AugmentationPolicy::default()
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let (a, la) = data.batch::<f32>(&idx, &policy, None).unwrap();
    let (b, lb) = data.batch::<f32>(&idx, &policy, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(a.data()[0], (data.image(0)[0] - 0.5) / 0.25);
}

proptest! {
    #[test]
    fn augmentation_only_moves_pixels(seed in 0u64..1000, pad in 0usize..5) {
        let data = synthetic_classification_dataset(2, 1, 8, seed).unwrap();
        let policy = AugmentationPolicy { crop_padding: pad, flip_probability: 0.5, ..AugmentationPolicy::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _) = data.batch::<f64>(&[0, 1], &policy, Some(&mut rng)).unwrap();
        prop_assert_eq!(x.shape(), &[2, 3, 8, 8]);
        let plane = 64;
        for i in 0..2 {
            let img = data.image(i);
            for ch in 0..3 {
                let src = &img[ch * plane..(ch + 1) * plane];
                let out = &x.data()[(i * 3 + ch) * plane..(i * 3 + ch + 1) * plane];
                for v in out {
                    prop_assert!(*v == 0.0 || src.iter().any(|s| f64::from(*s) == *v));
                }
            }
        }
        if pad == 0 {
            let flipped = (0..3 * plane).all(|j| {
                let (ch, r, c) = (j / plane, (j % plane) / 8, j % 8);
                x.data()[j] == f64::from(data.image(0)[ch * plane + r * 8 + 7 - c])
            });
            let same = (0..3 * plane).all(|j| x.data()[j] == f64::from(data.image(0)[j]));
            prop_assert!(flipped || same);
        }
    }
}

#[test]
fn grayscale_uses_luminance() {
    let rgb = Tensor::new(&[1, 3, 1, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let g = grayscale(&rgb).unwrap();
    assert_eq!(g.shape(), &[1, 1, 1, 2]);
    assert!((g.data()[0] - 0.299).abs() < 1e-7);
    assert!((g.data()[1] - 0.587).abs() < 1e-7);
}

#[test]
fn recon_models_start_at_the_target_variance() {
    let data = synthetic_classification_dataset(10, 20, 12, 1).unwrap();
    let cfg = ReconConfig {
        epochs: 0,
        ..ReconConfig::default()
    };
    let o = color_reconstruction_experiment(&data, &cfg, 0).unwrap();
    assert_eq!((o.quat_params, o.real_params), (576, 576));
    assert_eq!((o.train_samples, o.test_samples), (160, 40));
    for mse in [o.quat_test_mse, o.real_test_mse] {
        assert!(
            (mse / o.target_variance - 1.0).abs() < 0.10,
            "{mse} vs {}",
            o.target_variance
        );
    }
}

#[test]
fn recon_is_repeatable_and_checks_budgets() {
    let data = synthetic_classification_dataset(4, 10, 8, 2).unwrap();
    let cfg = ReconConfig {
        epochs: 2,
        ..ReconConfig::default()
    };
    let a = color_reconstruction_experiment(&data, &cfg, 5).unwrap();
    let b = color_reconstruction_experiment(&data, &cfg, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.quat_test_mse.is_finite() && a.real_test_mse.is_finite());
    // One extra hidden channel adds 36 weights, a 5.9% gap.
    let unmatched = ReconConfig { real_hidden: 17, ..cfg };
    assert!(matches!(
        color_reconstruction_experiment(&data, &unmatched, 5),
        Err(Error::Config(_))
    ));
}

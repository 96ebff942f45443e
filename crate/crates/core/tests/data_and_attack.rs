use std::fs::File;

use imb_core::attack::robustness_eval;
use imb_core::data::{gen_binary_task, load_csv, load_mnist_dir, split, write_idx_images, write_idx_labels};
use imb_core::training::train;
use imb_core::{AttackConfig, ImbConfig, LabelRule, OptimizerConfig, SplitRule};

#[test]
fn idx_fixture_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 2 * 2).map(|i| (i * 20) as u8).collect();
    write_idx_images(File::create(dir.path().join("train-images-idx3-ubyte")).unwrap(), 2, 2, &pixels).unwrap();
    write_idx_labels(File::create(dir.path().join("train-labels-idx1-ubyte")).unwrap(), &[3, 0, 9]).unwrap();
    let d = load_mnist_dir(dir.path(), true).unwrap();
    assert_eq!((d.len(), d.dim(), d.n_classes), (3, 4, 10));
    assert_eq!(d.labels, vec![3, 0, 9]);
    assert_eq!(d.input(1), &[80.0 / 255.0, 100.0 / 255.0, 120.0 / 255.0, 140.0 / 255.0]);
}

#[test]
fn gzip_and_plain_idx_agree() {
    let dir = tempfile::tempdir().unwrap();
    let gz = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..5 * 9).map(|i| (i * 7 % 256) as u8).collect();
    let labels = [1u8, 2, 3, 4, 5];
    write_idx_images(File::create(dir.path().join("t10k-images-idx3-ubyte")).unwrap(), 3, 3, &pixels).unwrap();
    write_idx_labels(File::create(dir.path().join("t10k-labels-idx1-ubyte")).unwrap(), &labels).unwrap();
    for name in ["t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"] {
        let raw = std::fs::read(dir.path().join(name)).unwrap();
        let mut enc = flate2::write::GzEncoder::new(File::create(gz.path().join(format!("{name}.gz"))).unwrap(), flate2::Compression::default());
        std::io::Write::write_all(&mut enc, &raw).unwrap();
        enc.finish().unwrap();
    }
    assert_eq!(load_mnist_dir(dir.path(), false).unwrap(), load_mnist_dir(gz.path(), false).unwrap());
}

#[test]
fn truncated_idx_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut buf = Vec::new();
    write_idx_images(&mut buf, 2, 2, &[0; 8]).unwrap();
    buf.truncate(buf.len() - 3);
    std::fs::write(dir.path().join("train-images-idx3-ubyte"), buf).unwrap();
    write_idx_labels(File::create(dir.path().join("train-labels-idx1-ubyte")).unwrap(), &[0, 1]).unwrap();
    let e = load_mnist_dir(dir.path(), true).unwrap_err().to_string();
    assert!(e.contains("train-images-idx3-ubyte"), "{e}");
}

#[test]
fn synthetic_task_csv_roundtrip_and_split() {
    let d = gen_binary_task(3, 6, LabelRule::Ranked).unwrap();
    assert_eq!(d.len(), 64);
    assert_eq!(d.class_counts(), vec![32, 32]);
    let file = tempfile::NamedTempFile::new().unwrap();
    d.write_csv(File::create(file.path()).unwrap()).unwrap();
    let back = load_csv(file.path(), Some(2)).unwrap();
    assert_eq!(back.labels, d.labels);
    assert_eq!(back.inputs, d.inputs);

    let (a, b) = split(&d, 0.2, SplitRule::Shuffled, 5).unwrap();
    assert_eq!((a.len(), b.len()), (52, 12));
    assert_eq!(split(&d, 0.2, SplitRule::Shuffled, 5).unwrap().0, a);
    let mut all: Vec<Vec<f64>> = (0..a.len()).map(|i| a.input(i).to_vec()).chain((0..b.len()).map(|i| b.input(i).to_vec())).collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut orig: Vec<Vec<f64>> = (0..d.len()).map(|i| d.input(i).to_vec()).collect();
    orig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    assert_eq!(all, orig);
}

#[test]
fn robustness_does_not_grow_with_radius() {
    let d = gen_binary_task(1, 8, LabelRule::Ranked).unwrap();
    let cfg = ImbConfig {
        optimizer: OptimizerConfig::sgd(2.0),
        batch_size: 32,
        samples: 4,
        ..ImbConfig::new(vec![8], 40)
    };
    let params = train(&d, None, &cfg).unwrap().final_params;
    let subset = d.head(120);
    let rob = |r: f64| robustness_eval(&params, &subset, &AttackConfig::untargeted(30, 0.05, r, 8), false, 0).unwrap();
    let small = rob(0.1);
    let mid = rob(0.5);
    let large = rob(2.0);
    assert!(small.clean_accuracy_pct > 60.0, "model did not learn: {}", small.clean_accuracy_pct);
    assert!(mid.robustness_pct <= small.robustness_pct + 1.0, "{} > {}", mid.robustness_pct, small.robustness_pct);
    assert!(large.robustness_pct <= mid.robustness_pct + 1.0, "{} > {}", large.robustness_pct, mid.robustness_pct);
    assert!(small.robustness_pct <= small.clean_accuracy_pct);
    for row in &large.rows {
        assert!(row.l2_norm <= 2.0 + 1e-9);
    }
}

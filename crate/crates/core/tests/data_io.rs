mod common;

use common::*;
use proptest::prelude::*;
use saliency_lab::data::{load_csv, parse_idx, synth_blobs, DatasetManifest, LabeledDataset};
use saliency_lab::Error;

#[test]
fn csv_round_trip_is_exact() {
    let mut r = rng(71);
    let x = random_vec(&mut r, 40 * 5, 3.0);
    let y = (0..40).map(|i| (i * 7) % 4).collect();
    let ds = LabeledDataset::new(x, y, 5, 4, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    ds.write_csv(&p).unwrap();
    let back = load_csv(&p, "label").unwrap();
    assert_eq!(back.features(), ds.features());
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.num_classes(), 4);
}

#[test]
fn csv_label_column_may_sit_anywhere() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    std::fs::write(&p, "a,y,b\n1.5,0,2\n-1,2,0.25\n0,1,0\n").unwrap();
    let ds = load_csv(&p, "y").unwrap();
    assert_eq!(ds.dim(), 2);
    assert_eq!(ds.row(1), &[-1.0, 0.25]);
    assert_eq!(ds.labels(), &[0, 2, 1]);
}

#[test]
fn csv_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let missing = write("m.csv", "a,b\n1,2\n");
    assert!(matches!(load_csv(&missing, "label"), Err(Error::Parse { .. })));
    let text = write("t.csv", "a,label\nx,1\n");
    assert!(matches!(load_csv(&text, "label"), Err(Error::Parse { .. })));
    let frac = write("f.csv", "a,label\n1,0.5\n");
    assert!(matches!(load_csv(&frac, "label"), Err(Error::Parse { .. })));
    let ragged = write("r.csv", "a,b,label\n1,2,0\n1,0\n");
    assert!(load_csv(&ragged, "label").is_err());
    let empty = write("e.csv", "a,label\n");
    assert!(load_csv(&empty, "label").is_err());
}

#[test]
fn synthetic_blobs_are_separable() {
    let ds = synth_blobs(1000, 20, 4, 10.0, 3).unwrap();
    // Class centroids estimated from the data, then nearest-centroid labels.
    let mut centroids = vec![vec![0.0; 20]; 4];
    let mut counts = [0usize; 4];
    for (x, y) in ds.iter() {
        centroids[y].iter_mut().zip(x).for_each(|(c, v)| *c += v);
        counts[y] += 1;
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = ds
        .iter()
        .filter(|(x, y)| {
            let best = (0..4)
                .min_by(|&a, &b| diff_norm(x, &centroids[a]).total_cmp(&diff_norm(x, &centroids[b])))
                .unwrap();
            best == *y
        })
        .count();
    assert!(correct as f64 / 1000.0 >= 0.99, "{correct} / 1000");
    assert_eq!(counts, [250; 4]);
}

#[test]
fn manifest_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "f0,f1,label\n3,4,0\n0,1,1\n").unwrap();
    let manifest = r#"{"path": "d.csv", "format": "csv", "C": 1.0}"#;
    std::fs::write(dir.path().join("m.json"), manifest).unwrap();
    let m = DatasetManifest::read(&dir.path().join("m.json")).unwrap();
    let ds = m.load(dir.path()).unwrap();
    assert!(ds.max_row_norm() <= 1.0 + 1e-12);
    assert_eq!(ds.c_cap(), 1.0);
}

#[test]
fn idx_round_trip_through_files() {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    images.extend([0u8, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 255]);
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 1];
    let ds = parse_idx(&images, &labels).unwrap();
    assert_eq!(ds.grid(), Some((2, 3)));
    assert_eq!(ds.row(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    assert_eq!(ds.labels(), &[7, 1]);
    assert_eq!(ds.num_classes(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_bounds_every_row(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x = random_vec(&mut r, 30 * 4, 5.0);
        let ds = LabeledDataset::new(x, vec![0; 30], 4, 1, None).unwrap();
        let out = ds.normalize(c).unwrap();
        prop_assert!(out.max_row_norm() <= c * (1.0 + 1e-12));
        prop_assert_eq!(out.c_cap(), c);
        for i in 0..30 {
            let (a, b) = (ds.row(i), out.row(i));
            if norm(a) <= c {
                prop_assert_eq!(a, b);
            } else {
                // Rescaling keeps the direction.
                let cos: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (norm(a) * norm(b));
                prop_assert!((cos - 1.0).abs() < 1e-12);
            }
        }
        prop_assert_eq!(out.normalize(c).unwrap(), out);
    }

    #[test]
    fn idx_parser_never_panics(images in proptest::collection::vec(any::<u8>(), 0..64),
                               labels in proptest::collection::vec(any::<u8>(), 0..16)) {
        let _ = parse_idx(&images, &labels);
    }
}

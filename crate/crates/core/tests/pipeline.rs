mod common;

use dmlann_core::bench::{split_dataset, QuerySelection};
use dmlann_core::formats::{IndexBundle, IndexSpec, SplitInfo};
use dmlann_core::synth::{generate_synthetic, SyntheticSpec};
use dmlann_core::{extract_directory, extract_hog, load_image, search_dmlann, HogParams, SearchParams};

#[test]
fn face_directory_to_index_and_back() {
    let tmp = tempfile::tempdir().unwrap();
    let faces = tmp.path().join("faces");
    common::write_face_directory(&faces, 4, 3, 9);
    let hog = HogParams::default();
    let records = extract_directory(&faces, &hog).unwrap();
    assert_eq!(records.len(), 12);
    assert_eq!(records[0].label, "person00");
    assert_eq!(records[0].vector.len(), hog.descriptor_len(64, 64).unwrap());
    assert_eq!(records, extract_directory(&faces, &hog).unwrap());

    let (refs, queries) = split_dataset(&records, QuerySelection::PerClass(1), 3, false).unwrap();
    assert_eq!((refs.len(), queries.len()), (8, 4));
    let spec = IndexSpec {
        k_list: vec![3, 1, 2],
        cluster_seed: 4,
        hog: Some(hog),
        split: Some(SplitInfo { seed: 3, query_count: 4, resubstitution: false }),
    };
    let a = IndexBundle::create(tmp.path().join("a"), refs.clone(), Some(queries.clone()), &spec).unwrap();
    let b = IndexBundle::create(tmp.path().join("b"), refs, Some(queries), &spec).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.manifest.k_list, vec![1, 2, 3]);

    let loaded = IndexBundle::load(tmp.path().join("a")).unwrap();
    assert_eq!(loaded.manifest, a.manifest);
    assert_eq!(loaded.matrix, a.matrix);
    assert_eq!(loaded.models, a.models);
    assert_eq!(loaded.queries, a.queries);
    for p in loaded.artifact_paths(&tmp.path().join("a")) {
        assert!(p.is_file(), "{}", p.display());
    }

    // a reference image is found with any positive threshold
    let img = load_image(faces.join("person02").join("img01.pgm")).unwrap();
    let x = extract_hog(&img, &hog).unwrap();
    let t =
        search_dmlann(&x, &loaded.refs, &loaded.matrix, loaded.model(3).unwrap(), &SearchParams::new(1e-9, 8).unwrap())
            .unwrap();
    assert_eq!(t.result_label, "person02");
}

#[test]
fn degenerate_single_reference_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let one =
        generate_synthetic(&SyntheticSpec { class_count: 1, refs_per_class: 1, dimension: 8, ..Default::default() });
    let spec = IndexSpec { k_list: vec![1], cluster_seed: 0, hog: None, split: None };
    IndexBundle::create(tmp.path(), one.clone(), None, &spec).unwrap();
    let b = IndexBundle::load(tmp.path()).unwrap();
    assert_eq!(b.refs.len(), 1);
    assert_eq!(b.model(1).unwrap().medoid(0), 0);
    assert!(b.model(2).is_err());

    let spec = IndexSpec { k_list: vec![2], ..spec };
    assert!(IndexBundle::create(tmp.path().join("bad"), one, None, &spec).is_err());
}

#[test]
fn png_and_pgm_decode_to_the_same_features() {
    let tmp = tempfile::tempdir().unwrap();
    let (w, h) = (40u32, 33u32);
    let pixel = |x: u32, y: u32| ((x * 7 + y * 13) % 256) as u8;
    let gray = image::GrayImage::from_fn(w, h, |x, y| image::Luma([pixel(x, y)]));
    gray.save(tmp.path().join("a.png")).unwrap();
    let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            pgm.push(pixel(x, y));
        }
    }
    std::fs::write(tmp.path().join("a.pgm"), pgm).unwrap();
    let a = load_image(tmp.path().join("a.png")).unwrap();
    let b = load_image(tmp.path().join("a.pgm")).unwrap();
    assert_eq!(a, b);
    let hog = HogParams::default();
    assert_eq!(extract_hog(&a, &hog).unwrap(), extract_hog(&b, &hog).unwrap());
}

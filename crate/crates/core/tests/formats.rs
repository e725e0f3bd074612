use analogica_core::dataset::{self, DatasetError};
use analogica_core::difficulty::{cos_dist, parse_vectors, SourceTag, VectorError, VectorStore};
use analogica_core::listfn::{self, Registry};
use analogica_core::model::{DatasetKind, TaskFormat};
use analogica_core::raven::{self, Configuration};
use analogica_core::salt::{self, Catalog, Lexicon};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1e-6..1e-6f64, Just(0.0), Just(-0.0)]
}

proptest! {
    #[test]
    fn vector_text_round_trips(rows in prop::collection::btree_map("[a-z_]{1,8}( [a-z]{1,5})?", prop::collection::vec(finite(), 5), 1..20)) {
        let mut store = VectorStore::new(5, SourceTag::WordEmbedding);
        for (k, v) in &rows {
            store.insert(k, v.clone()).unwrap();
        }
        let back = parse_vectors(&store.to_text()).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (k, v) in &rows {
            prop_assert_eq!(back.get(k).unwrap(), v.as_slice());
        }
    }

    #[test]
    fn cosine_distance_is_bounded_and_symmetric(u in prop::collection::vec(-10.0..10.0f64, 4), v in prop::collection::vec(-10.0..10.0f64, 4)) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let d = cos_dist(&u, &v).unwrap();
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
        prop_assert!((d - cos_dist(&v, &u).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn reads_files_written_by_other_tools() {
    let text = "# exported vectors\nDIM 3\n# comment between rows\nking\t0.5 -2e-3 1\nred car\t1.0E2 0 -0.25\n\n";
    let store = parse_vectors(text).unwrap();
    assert_eq!(store.dim(), 3);
    assert_eq!(store.get("king").unwrap(), &[0.5, -0.002, 1.0]);
    assert_eq!(store.get("red car").unwrap(), &[100.0, 0.0, -0.25]);
}

#[test]
fn rejects_malformed_vector_files() {
    assert!(matches!(
        parse_vectors("king\t1 2"),
        Err(VectorError::Format { .. })
    ));
    assert!(matches!(
        parse_vectors("DIM 0\n"),
        Err(VectorError::Format { .. })
    ));
    assert!(matches!(
        parse_vectors("DIM 2\na\t1 2 3\n"),
        Err(VectorError::Dimension {
            found: 3,
            expected: 2,
            ..
        })
    ));
    assert!(matches!(
        parse_vectors("DIM 1\na\t1\na\t2\n"),
        Err(VectorError::DuplicateKey(_))
    ));
    assert!(matches!(
        parse_vectors("DIM 2\na\t1 NaN\n"),
        Err(VectorError::Format { line: 2, .. })
    ));
    assert!(matches!(
        parse_vectors("DIM 2\na 1 2\n"),
        Err(VectorError::Format { .. })
    ));
}

#[test]
fn generated_datasets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let lists = listfn::generate_batch(Registry::bundled(), 12, 3, 1, TaskFormat::Mcq);
    let tasks = salt::generate_batch(&Catalog::bundled(), Lexicon::bundled(), 9, 1).unwrap();
    let sentences: Vec<_> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| t.to_instance(&format!("s{i}"), TaskFormat::Ftg, 1))
        .collect();
    let puzzles: Vec<_> = raven::generate_batch(&Configuration::ALL, 14, 1)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, p)| p.to_instance(&format!("r{i}"), TaskFormat::Mcq))
        .collect();
    for (kind, set) in [
        (DatasetKind::Listfn, lists),
        (DatasetKind::Salt, sentences),
        (DatasetKind::Raven, puzzles),
    ] {
        let path = dir.path().join(format!("{kind}.jsonl"));
        assert_eq!(dataset::write_dataset(&set, &path).unwrap(), set.len());
        assert_eq!(dataset::load_dataset(&path, kind).unwrap(), set);
    }
}

#[test]
fn dataset_kind_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.jsonl");
    let set = listfn::generate_batch(Registry::bundled(), 2, 3, 1, TaskFormat::Ftg);
    dataset::write_dataset(&set, &path).unwrap();
    assert!(matches!(
        dataset::load_dataset(&path, DatasetKind::Salt),
        Err(DatasetError::KindMismatch { line: 1, .. })
    ));
}

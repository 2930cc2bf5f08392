use praaline_core::{check_annotation, parse_textgrid, write_textgrid, CheckConfig};

#[test]
fn synthetic_corpus_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let store = praaline_bench::store(&dir.path().join("s.corpus"), 2, 40);
    for comm in ["c000", "c001"] {
        assert!(check_annotation(&store, comm, &CheckConfig::default()).unwrap().is_empty());
    }
    assert_eq!(store.count_elements("tok", None).unwrap(), 80);
}

#[test]
fn synthetic_textgrid_round_trips() {
    let doc = praaline_bench::textgrid(25);
    assert_eq!(parse_textgrid(&write_textgrid(&doc)).unwrap(), doc);
}

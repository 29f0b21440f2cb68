use std::fs;
use std::path::Path;

use rolecast::corpus::{load_documents, CorpusError, Party, Source};
use rolecast::jsonl::JsonlError;

#[test]
fn empty_directory_is_an_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_documents(dir.path(), Source::Article, None).unwrap();
    assert!(corpus.is_empty());
    assert_eq!(corpus.stats().doc_count, 0);
    assert_eq!(corpus.stats().mean_word_count, None);
}

#[test]
fn text_files_load_in_id_order() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["c", "a", "b"] {
        fs::write(dir.path().join(format!("{name}.txt")), format!("text of {name}")).unwrap();
    }
    fs::write(dir.path().join("notes.md"), "ignored").unwrap();
    let corpus = load_documents(dir.path(), Source::Plot, None).unwrap();
    let ids: Vec<&str> = corpus.documents().iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert!(corpus.documents().iter().all(|d| d.source == Source::Plot));
}

#[test]
fn duplicate_jsonl_id_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("docs.jsonl");
    fs::write(
        &path,
        "{\"id\":\"x\",\"body\":\"one\",\"source\":\"article\"}\n{\"id\":\"x\",\"body\":\"two\",\"source\":\"article\"}\n",
    )
    .unwrap();
    match load_documents(&path, Source::Article, None) {
        Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "x"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("docs.jsonl");
    fs::write(
        &path,
        "{\"id\":\"a\",\"body\":\"ok\",\"source\":\"article\"}\n\n{not json\n",
    )
    .unwrap();
    let err = load_documents(&path, Source::Article, None).unwrap_err();
    match &err {
        CorpusError::Jsonl(JsonlError::Malformed { line, .. }) => assert_eq!(*line, 3),
        other => panic!("{other:?}"),
    }
    assert!(err.to_string().contains("docs.jsonl:3:"), "{err}");
    assert!(!err.to_string().contains("line 1"), "{err}");
}

#[test]
fn missing_path_is_an_io_error() {
    let err = load_documents(Path::new("/nonexistent/rolecast"), Source::Article, None).unwrap_err();
    assert!(matches!(err, CorpusError::Io { .. }));
}

#[test]
fn bundled_speech_subset_counts() {
    // Frozen from an independent count over the same 15 files: NFC text,
    // paragraphs split at blank lines, at least 20 words each.
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sotu");
    let speeches = load_documents(&dir.join("speeches"), Source::Other, Some(&dir.join("metadata.jsonl"))).unwrap();
    assert_eq!(speeches.len(), 15);
    let paragraphs = speeches.split_speeches(20).unwrap();
    let stats = paragraphs.stats();
    assert_eq!(stats.doc_count, 1163);
    assert!((stats.mean_word_count.unwrap() - 76.617).abs() < 1e-3);

    let first = &paragraphs.documents()[0];
    assert_eq!(first.id, "2002-Bush-1:0");
    assert_eq!(first.party, Some(Party::Republican));
    assert_eq!(first.year, Some(2002));
    assert_eq!(paragraphs.get("2010-Obama-1:0").unwrap().party, Some(Party::Democratic));
}

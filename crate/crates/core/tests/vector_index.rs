mod common;

use proptest::prelude::*;

use kbagent::corpus::ChunkRef;
use kbagent::vector_index::{Embedder, EmbeddingVector, HashEmbedder, IndexError, VectorIndex};

#[test]
fn persist_and_reopen() {
    let e = HashEmbedder::new(64);
    let mut index = VectorIndex::for_embedder(&e);
    index.upsert_chunks(&common::sample_chunks(), &e).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    index.persist(&path).unwrap();
    let reopened = VectorIndex::open_for(&path, &e).unwrap();
    assert_eq!(reopened, index);
    let q = e.embed("rc4 keystream").unwrap();
    assert_eq!(reopened.search_top_k(&q, 3).unwrap(), index.search_top_k(&q, 3).unwrap());
}

#[test]
fn reopening_with_another_embedder_fails() {
    let e = HashEmbedder::new(64);
    let mut index = VectorIndex::for_embedder(&e);
    index.upsert_chunks(&common::sample_chunks(), &e).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    index.persist(&path).unwrap();
    assert!(matches!(
        VectorIndex::open_for(&path, &HashEmbedder::new(32)),
        Err(IndexError::DimensionMismatch { .. })
    ));
}

#[test]
fn query_dimension_mismatch() {
    let index = {
        let mut i = VectorIndex::new(3, "t");
        i.upsert_vector(ChunkRef::new("a", 0), "a".into(), &EmbeddingVector::normalized(vec![1.0, 0.0, 0.0]).unwrap())
            .unwrap();
        i
    };
    let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
    assert!(matches!(index.search_top_k(&q, 1), Err(IndexError::DimensionMismatch { .. })));
    assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_err());
}

#[test]
fn related_text_ranks_first() {
    let e = HashEmbedder::default();
    let mut index = VectorIndex::for_embedder(&e);
    index.upsert_chunks(&common::sample_chunks(), &e).unwrap();
    let hits = index.search_top_k(&e.embed("single byte xor key brute force").unwrap(), 1).unwrap();
    assert!(hits[0].chunk.doc_id.contains("single-byte-xor"), "{:?}", hits[0]);
}

#[test]
fn zero_scores_tie_regardless_of_sign() {
    let mut index = VectorIndex::new(2, "t");
    let a = EmbeddingVector::normalized(vec![-1.0, 0.0]).unwrap();
    let b = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
    index.upsert_vector(ChunkRef::new("d", 1), String::new(), &b).unwrap();
    index.upsert_vector(ChunkRef::new("d", 0), String::new(), &a).unwrap();
    let q = EmbeddingVector::normalized(vec![0.0, 1.0]).unwrap();
    let hits = index.search_top_k(&q, 2).unwrap();
    assert_eq!(hits[0].chunk, ChunkRef::new("d", 0));
    assert!(hits.iter().all(|h| h.score.to_bits() == 0));
}

proptest! {
    #[test]
    fn top_k_is_sorted_prefix(vectors in prop::collection::vec(prop::collection::vec(-3i8..=3, 4), 1..60), q in prop::collection::vec(-3i8..=3, 4), k in 1usize..80) {
        prop_assume!(q.iter().any(|x| *x != 0));
        let mut index = VectorIndex::new(4, "t");
        for (i, v) in vectors.iter().enumerate() {
            if v.iter().all(|x| *x == 0) {
                continue;
            }
            let v = EmbeddingVector::normalized(v.iter().map(|x| f64::from(*x)).collect()).unwrap();
            index.upsert_vector(ChunkRef::new("d", i), String::new(), &v).unwrap();
        }
        let q = EmbeddingVector::normalized(q.iter().map(|x| f64::from(*x)).collect()).unwrap();
        let hits = index.search_top_k(&q, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(index.len()));
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].chunk < w[1].chunk));
        }
        let longer = index.search_top_k(&q, k + 5).unwrap();
        prop_assert_eq!(&longer[..hits.len()], &hits[..]);
    }

    #[test]
    fn upsert_replaces(texts in prop::collection::vec("[a-z ]{1,30}", 1..10)) {
        let e = HashEmbedder::new(16);
        let mut index = VectorIndex::for_embedder(&e);
        for t in &texts {
            index.upsert_vector(ChunkRef::new("same", 0), t.clone(), &e.embed(t).unwrap()).unwrap();
        }
        prop_assert_eq!(index.len(), 1);
        prop_assert_eq!(index.text(&ChunkRef::new("same", 0)), Some(texts.last().unwrap().as_str()));
    }
}

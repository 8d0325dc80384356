use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use extractor_core::corpus::{chunk, ChunkConfig, Document, DocumentFormat, PassageRef};
use extractor_core::eval::{is_stoichiometry, score_field};
use extractor_core::vecindex::{mmr_select, EmbeddingVector, IndexEntry, MmrConfig};

fn selection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = 64;
    let vector = |rng: &mut ChaCha8Rng| {
        EmbeddingVector::new(
            (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect(),
            "bench",
        )
    };
    let query = vector(&mut rng);
    let candidates: Vec<IndexEntry> = (0..512)
        .map(|i| IndexEntry {
            passage_ref: PassageRef {
                doc_id: "bench".into(),
                ordinal: i,
            },
            vector: vector(&mut rng),
        })
        .collect();
    let cfg = MmrConfig::default();
    c.bench_function("mmr_select_512x64_k9", |b| {
        b.iter(|| mmr_select(black_box(&query), black_box(&candidates), &cfg, 128).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let entities = ["Bi2Te3 thin film", "Se", "GaN layer", "MoS2 monolayer", "Cu3(BTC)2"];
    let sample = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.random_range(1..4usize))
            .map(|_| entities[rng.random_range(0..entities.len())].to_string())
            .collect()
    };
    let truths: Vec<Vec<String>> = (0..100).map(|_| sample(&mut rng)).collect();
    let preds: Vec<Vec<String>> = (0..100).map(|_| sample(&mut rng)).collect();
    c.bench_function("score_field_100_samples", |b| {
        b.iter(|| score_field(black_box(&truths), black_box(&preds), true).unwrap())
    });

    let words = ["Bi2Te3", "film", "Zn4O(BDC)3", "doped", "H2O", "sample", "Cu3(BTC)2"];
    c.bench_function("is_stoichiometry_mixed", |b| {
        b.iter(|| {
            words
                .iter()
                .filter(|w| is_stoichiometry(black_box(w)))
                .count()
        })
    });
}

fn chunking(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::new();
    while text.len() < 100_000 {
        let len = rng.random_range(2..12usize);
        for _ in 0..len {
            text.push((b'a' + rng.random_range(0..26u8)) as char);
        }
        text.push(' ');
    }
    let text = text.trim_end().to_string();
    let doc = Document {
        id: "bench0000000000ff".into(),
        source_path: PathBuf::from("bench.txt"),
        format: DocumentFormat::PlainText,
        char_count: text.chars().count(),
        text,
    };
    let cfg = ChunkConfig::default();
    c.bench_function("chunk_100k_chars", |b| {
        b.iter(|| chunk(black_box(&doc), &cfg).unwrap())
    });
}

criterion_group!(benches, selection, scoring, chunking);
criterion_main!(benches);

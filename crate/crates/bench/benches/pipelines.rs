use std::hint::black_box;

use chrono::{TimeZone, Utc};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use interfaze_core::audio::{cluster_speakers, log_mel, vad_spans, MelConfig, SpeakerSegment, SpeechSpan, VadParams, Waveform};
use interfaze_core::compiler::{compile_context, CompileInput};
use interfaze_core::document::{reading_order_indices, DocumentParams, Line};
use interfaze_core::retrieval::{build_index, search, segments_from_file, IndexKind};
use interfaze_core::vision::{group_regions, relevance_map, TextEmbedding, VisualTokens};
use interfaze_core::{BoundingBox, ContextState, Observation, Provenance, TokenBudget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 12] = [
    "red", "button", "invoice", "total", "speaker", "meeting", "table", "chart", "python", "error", "page", "report",
];

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn audio(c: &mut Criterion) {
    let mut rng = rng();
    let cfg = MelConfig::default_16k();
    let mut group = c.benchmark_group("audio");
    for secs in [1usize, 5] {
        let samples: Vec<f64> = (0..secs * 16_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let wave = Waveform::new(samples, 16_000).unwrap();
        group.bench_with_input(BenchmarkId::new("log_mel", secs), &wave, |b, w| b.iter(|| log_mel(black_box(w), &cfg).unwrap()));
    }
    let probs: Vec<f64> = (0..6_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let params = VadParams { threshold: 0.5, merge_gap_frames: 3, min_len_frames: 5 };
    group.bench_function("vad_spans", |b| b.iter(|| vad_spans(black_box(&probs), 0.01, &params)));
    let segments: Vec<SpeakerSegment> = (0..64)
        .map(|i| {
            let v = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            SpeakerSegment::new(SpeechSpan::new(i as f64, i as f64 + 0.8), v).unwrap()
        })
        .collect();
    group.bench_function("cluster_speakers_64", |b| b.iter(|| cluster_speakers(black_box(&segments), 0.3)));
    group.finish();
}

fn document(c: &mut Criterion) {
    let mut rng = rng();
    let lines: Vec<Line> = (0..200)
        .map(|i| {
            let x = if i % 2 == 0 { 40.0 } else { 420.0 };
            let y = (i / 2) as f64 * 12.0;
            Line::simple(&sentence(&mut rng, 4), BoundingBox::new(x, y, x + rng.gen_range(100.0..330.0), y + 10.0), 0.9)
        })
        .collect();
    let edge = DocumentParams::default().edge_threshold;
    c.bench_function("document/reading_order_200", |b| b.iter(|| reading_order_indices(black_box(&lines), 800.0, edge)));
}

fn vision(c: &mut Criterion) {
    let mut rng = rng();
    let (rows, cols) = (32, 32);
    let tokens = VisualTokens {
        rows,
        cols,
        grid: (0..rows * cols).map(|_| (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        patch_size: 14.0,
        image_width: 448.0,
        image_height: 448.0,
    };
    let text = TextEmbedding { vector: (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect(), prompt: String::new(), temperature: 0.07 };
    c.bench_function("vision/relevance_map_32x32", |b| b.iter(|| relevance_map(black_box(&tokens), &text).unwrap()));
    let map = relevance_map(&tokens, &text).unwrap();
    c.bench_function("vision/group_regions_32x32", |b| b.iter(|| group_regions(black_box(&map), 0.5)));
}

fn retrieval(c: &mut Criterion) {
    let mut rng = rng();
    let t0 = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    let segments: Vec<_> = (0..200)
        .flat_map(|i| segments_from_file(&format!("doc{i}.txt"), sentence(&mut rng, 80).as_bytes(), t0))
        .collect();
    c.bench_function("retrieval/build_index_200", |b| b.iter(|| build_index(IndexKind::Docs, black_box(&segments)).unwrap()));
    let index = build_index(IndexKind::Docs, &segments).unwrap();
    c.bench_function("retrieval/search_k5", |b| b.iter(|| search(&index, black_box("invoice total error"), 5).unwrap()));
}

fn compiler(c: &mut Criterion) {
    let mut rng = rng();
    let t0 = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    let fragments: Vec<ContextState> = (0..8)
        .map(|f| {
            let mut state = ContextState::new();
            for i in 0..40 {
                state.observations.push(Observation {
                    id: format!("f{f}-o{i}"),
                    text: sentence(&mut rng, 12),
                    score: 0.0,
                    provenance: vec![Provenance::for_bytes(format!("src-{f}"), &[f as u8], t0)],
                });
            }
            state
        })
        .collect();
    let input = CompileInput { fragments, query: "invoice total".into(), budgets: TokenBudget::default(), floors: Default::default() };
    c.bench_function("compiler/compile_8x40", |b| b.iter(|| compile_context(black_box(&input)).unwrap()));
}

criterion_group!(benches, audio, document, vision, retrieval, compiler);
criterion_main!(benches);

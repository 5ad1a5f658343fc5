use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use agescope_core::fixtures::{aggregate_records, REPLY_CORRECT, REPLY_HALLUCINATION, REPLY_INCORRECT};
use agescope_core::parsing::parse_reply_text;
use agescope_core::render_prompt;

fn bench_parsing(c: &mut Criterion) {
    c.bench_function("parse reference replies", |b| {
        b.iter(|| {
            for text in [REPLY_CORRECT, REPLY_INCORRECT, REPLY_HALLUCINATION] {
                black_box(parse_reply_text(1, black_box(text)));
            }
        })
    });
    let replies: Vec<String> = aggregate_records().into_iter().map(|r| r.reply).collect();
    c.bench_function("parse 131 replies", |b| {
        b.iter(|| {
            for (i, text) in replies.iter().enumerate() {
                black_box(parse_reply_text(i as u64, text));
            }
        })
    });
    c.bench_function("render prompt", |b| {
        b.iter(|| render_prompt(black_box("London")).unwrap())
    });
}

criterion_group!(benches, bench_parsing);
criterion_main!(benches);

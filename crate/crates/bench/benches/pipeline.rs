use criterion::{criterion_group, criterion_main, Criterion};
use mirage_core::asm::parse_function;
use mirage_core::cfg::Cfg;
use mirage_core::explain::{explain_sequence, LimeConfig};
use mirage_core::{FunctionUnit, Model, ModelKind};

fn fixture(blocks: usize, per_block: usize) -> FunctionUnit {
    let mut src = String::from("fn bench:\n");
    for b in 0..blocks {
        src.push_str(&format!("b{b}:\n"));
        for i in 0..per_block {
            src.push_str(&format!("  add r{}, {}\n", (b + i) % 16, i + 1));
        }
        if b + 1 == blocks {
            src.push_str("  ret\n");
        } else {
            src.push_str(&format!("  jmp b{}\n", b + 1));
        }
    }
    parse_function(&src).unwrap()
}

fn bench_embed(c: &mut Criterion) {
    let f = fixture(8, 12);
    for kind in [ModelKind::SeqToken, ModelKind::SeqInstr, ModelKind::Graph] {
        let m = Model::new(kind, 1);
        c.bench_function(&format!("embed/{}", kind.name()), |b| {
            b.iter(|| m.embed(std::hint::black_box(&f)))
        });
    }
}

fn bench_betweenness(c: &mut Criterion) {
    let f = fixture(32, 3);
    let cfg = Cfg::build(&f).unwrap();
    c.bench_function("betweenness/32-blocks", |b| {
        b.iter(|| mirage_core::cfg::betweenness(std::hint::black_box(&cfg.succs)))
    });
}

fn bench_lime(c: &mut Criterion) {
    let f = fixture(4, 16);
    let m = Model::new(ModelKind::SeqInstr, 1);
    let view = m.feature_view(&f);
    let target = m.embed(&fixture(3, 10));
    let cfg = LimeConfig {
        samples: Some(200),
        ..LimeConfig::default()
    };
    c.bench_function("lime/explain-64-instrs", |b| {
        b.iter(|| explain_sequence(&m, &view, &target, &cfg).unwrap())
    });
}

fn bench_attack_step(c: &mut Criterion) {
    use mirage_core::attack::{run_attack, AttackConfig};
    let f = fixture(4, 8);
    let targets = vec![fixture(3, 6)];
    let m = Model::with_shape(ModelKind::SeqInstr, 1, 16, 2);
    let cfg = AttackConfig {
        max_iter: 1,
        budget: 64,
        oracle_trials: 8,
        lime: LimeConfig {
            samples: Some(100),
            ..LimeConfig::default()
        },
        ..AttackConfig::default()
    };
    c.bench_function("attack/one-iteration", |b| {
        b.iter(|| run_attack(&f, &targets, &cfg, &m).unwrap())
    });
}

criterion_group!(benches, bench_embed, bench_betweenness, bench_lime, bench_attack_step);
criterion_main!(benches);

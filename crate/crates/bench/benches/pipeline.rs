use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use num_rational::Ratio;

use ranscope::dci::trace::TraceRecord;
use ranscope::dci::{recover_rnti, riv_encode, Dci, DciEnvelope, DciFormat, Direction, PrbRange, Rnti};
use ranscope::eval::perf::primed_observer;
use ranscope::tbs::{compute_tbs, table_entries};

fn tbs(c: &mut Criterion) {
    let mut g = c.benchmark_group("tbs");
    let rate = Ratio::new(948, 1024);
    g.bench_function("table_path", |b| b.iter(|| compute_tbs(black_box(Ratio::from_integer(3199)), rate)));
    g.bench_function("formula_path", |b| b.iter(|| compute_tbs(black_box(Ratio::from_integer(184_320)), rate)));
    let inputs: Vec<Ratio<i64>> = (1..200_000i64).step_by(997).map(Ratio::from_integer).collect();
    g.throughput(Throughput::Elements(inputs.len() as u64));
    g.bench_function("sweep", |b| b.iter(|| inputs.iter().map(|&n| compute_tbs(n, rate).unwrap()).sum::<u32>()));
    g.finish();
    black_box(table_entries());
}

fn envelope(c: &mut Criterion) {
    let mut d = Dci::zeroed(DciFormat::F1_1);
    d.freq_riv = riv_encode(PrbRange { start: 0, len: 12 }, 51) as u16;
    d.mcs = 20;
    let env = DciEnvelope::from_dci(&d, Rnti(0x4296)).unwrap();
    let mut g = c.benchmark_group("envelope");
    g.bench_function("build", |b| b.iter(|| DciEnvelope::from_dci(black_box(&d), Rnti(0x4296))));
    g.bench_function("recover_rnti", |b| b.iter(|| recover_rnti(black_box(&env))));
    g.bench_function("unpack", |b| b.iter(|| black_box(&env).dci()));
    g.finish();
}

fn slot(k: usize, rntis: &[Rnti], harq: u8, ndi: u8) -> Vec<TraceRecord> {
    let share = 51 / k as u16;
    rntis
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rnti)| {
            let mut d = Dci::zeroed(DciFormat::F1_1);
            d.freq_riv = riv_encode(PrbRange { start: i as u16 * share, len: share }, 51) as u16;
            d.mcs = 20;
            d.harq_id = harq;
            d.ndi = ndi;
            TraceRecord { tti: 0, direction: Direction::Dl, envelope: DciEnvelope::from_dci(&d, rnti).unwrap() }
        })
        .collect()
}

fn per_tti(c: &mut Criterion) {
    let mut g = c.benchmark_group("process_tti");
    for k in 1..=4 {
        let (mut obs, _, rntis, mut tti) = primed_observer(k).unwrap();
        // alternate NDI across 16 HARQ processes so every DCI is new data
        let slots: Vec<Vec<TraceRecord>> = (0..32u8).map(|i| slot(k, &rntis, i % 16, (i / 16) % 2)).collect();
        let mut i = 0;
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| {
                let rec = obs.process_tti(tti, &slots[i % slots.len()]).unwrap();
                tti += 1;
                i += 1;
                black_box(rec)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, tbs, envelope, per_tti);
criterion_main!(benches);

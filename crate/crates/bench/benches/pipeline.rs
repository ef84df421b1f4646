use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use strobe_bench::{config, run_tags};
use strobe_core::coinc::match_coincidences;
use strobe_core::session::{analyze_tags, plan_runs, simulate_run};
use strobe_core::sync::{align_pulse_numbering, assign_to_pulses, PeriodSeries};
use strobe_core::tagfmt::{read_tags, write_tags, TagFileHeader};
use strobe_core::{s_to_ps, trigger_times, Station, TimeTag};

const PULSES: usize = 100_000;

fn simulate(c: &mut Criterion) {
    let cfg = config(PULSES);
    let plan = plan_runs(&cfg).remove(0);
    let mut g = c.benchmark_group("simulate");
    g.throughput(Throughput::Elements(PULSES as u64));
    g.bench_function("run_100k_pulses", |b| b.iter(|| simulate_run(&cfg, black_box(&plan)).unwrap()));
    g.finish();
}

fn tagfmt(c: &mut Criterion) {
    let [a, _] = run_tags(&config(PULSES));
    let header = TagFileHeader::new(Station::A, a.len() as u64);
    let mut bytes = Vec::new();
    write_tags(&header, &a, &mut bytes).unwrap();
    let mut g = c.benchmark_group("tagfmt");
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("write", |b| {
        b.iter(|| {
            let mut out = Vec::with_capacity(bytes.len());
            write_tags(&header, black_box(&a), &mut out).unwrap();
            out
        })
    });
    g.bench_function("read", |b| {
        b.iter(|| {
            let (_, r) = read_tags(black_box(bytes.as_slice())).unwrap();
            r.collect::<Result<Vec<TimeTag>, _>>().unwrap()
        })
    });
    g.finish();
}

fn sync_and_match(c: &mut Criterion) {
    let cfg = config(PULSES);
    let [a, b] = run_tags(&cfg);
    let (ta, tb) = (trigger_times(&a), trigger_times(&b));
    let (sa, sb) = (PeriodSeries::from_times(&ta).unwrap(), PeriodSeries::from_times(&tb).unwrap());
    let align = cfg.align_config();
    c.bench_function("align_pulse_numbering", |bch| {
        bch.iter(|| align_pulse_numbering(black_box(&sa), black_box(&sb), &align).unwrap())
    });
    let offset = align_pulse_numbering(&sa, &sb, &align).unwrap().pulse_offset;
    let ev_a = assign_to_pulses(Station::A, &a, &ta, s_to_ps(cfg.station_a.trigger_delay));
    let mut ev_b = assign_to_pulses(Station::B, &b, &tb, s_to_ps(cfg.station_b.trigger_delay));
    ev_b.renumber(offset);
    c.bench_function("match_coincidences", |bch| {
        bch.iter(|| match_coincidences(black_box(&ev_a.events), black_box(&ev_b.events), 4_000))
    });
    c.bench_function("analyze_run_100k_pulses", |bch| {
        bch.iter(|| analyze_tags(&cfg, 0, 0, black_box(&a), black_box(&b)).unwrap())
    });
}

criterion_group!(benches, simulate, tagfmt, sync_and_match);
criterion_main!(benches);

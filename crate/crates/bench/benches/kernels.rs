use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use deepsleep::data::edf::{parse_edf, write_edf};
use deepsleep::data::synthetic::{random_edf, synthetic_subjects, SyntheticConfig};
use deepsleep::eval::{ConfusionMatrix, MetricsReport};
use deepsleep::nn::{BiLstm, Binder, LaneLayout, ParamStore, Session};
use deepsleep::{DeepSleepNet, Graph, ModelConfig, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn tensor_ops(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(&mut rng, &[256, 256]);
    let b = random(&mut rng, &[256, 256]);
    c.bench_function("matmul 256x256 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.parameter(a.clone());
            let y = g.parameter(b.clone());
            let z = g.matmul(x, y).unwrap();
            let loss = g.sum(z);
            g.backward(loss).unwrap();
            black_box(g.grad(x).is_some())
        })
    });

    // First layer of the small-filter branch on a batch of 100 Hz epochs.
    let input = random(&mut rng, &[8, 3000, 1]);
    let filters = random(&mut rng, &[50, 1, 64]);
    c.bench_function("conv1d 8x3000 width 50 stride 6 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let w = g.parameter(filters.clone());
            let y = g.conv1d(x, w, 6, Padding::Same).unwrap();
            let loss = g.sum_squares(y);
            g.backward(loss).unwrap();
            black_box(g.grad(w).is_some())
        })
    });
}

fn lstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let net = BiLstm::new(&mut store, &mut rng, "bilstm", 64, 64, 2, 0.0);
    // Ten lanes of 25 steps, as in one fine-tuning batch.
    let layout = LaneLayout::new(vec![25; 10]).unwrap();
    let input = random(&mut rng, &[250, 64]);
    c.bench_function("bilstm 2x64 over 10 lanes x 25 steps forward", |bench| {
        bench.iter(|| {
            let mut s = Session::eval();
            let mut p = Binder::new(&store, false);
            let x = s.graph.constant(input.clone());
            let out = net.forward(&mut s, &mut p, x, &layout, &net.zero_state(10)).unwrap();
            black_box(out.output)
        })
    });
}

fn inference(c: &mut Criterion) {
    let model = DeepSleepNet::build(ModelConfig::for_sampling_rate(100).unwrap(), 0).unwrap();
    let cfg = SyntheticConfig { epochs_per_subject: 25, ..SyntheticConfig::default() };
    let subject = synthetic_subjects(&cfg, 1, 2).remove(0);
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("predict 25 epochs at 100 Hz, full size", |bench| {
        bench.iter(|| black_box(model.predict(&subject).unwrap()))
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = [[0u64; 5]; 5];
    for row in counts.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(0..5000);
        }
    }
    let cm = ConfusionMatrix::from_counts(counts);
    c.bench_function("metrics report", |bench| {
        bench.iter(|| black_box(MetricsReport::new(black_box(&cm)).unwrap()))
    });
}

fn edf(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bytes = write_edf(&random_edf(&mut rng, 4, 200)).unwrap();
    c.bench_function("parse EDF, 4 signals x 200 records", |bench| {
        bench.iter_batched(|| bytes.clone(), |b| black_box(parse_edf(&b).unwrap()), BatchSize::SmallInput)
    });
}

criterion_group!(benches, tensor_ops, lstm, inference, metrics, edf);
criterion_main!(benches);

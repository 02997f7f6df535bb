//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod grad_cases;

use deepsleep::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares analytic gradients of a scalar function against central finite
/// differences for every coordinate of every input. Returns the worst
/// relative error seen.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars);
        g.value(loss).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let numeric = central_difference(inputs, i, j, &eval);
            let err = rel_err(analytic[i].data()[j], numeric);
            worst = worst.max(err);
        }
    }
    worst
}

/// Central difference of `eval` along coordinate `j` of input `i`.
pub fn central_difference(
    inputs: &[Tensor],
    i: usize,
    j: usize,
    eval: &dyn Fn(&[Tensor]) -> f64,
) -> f64 {
    let mut plus = inputs.to_vec();
    plus[i].data_mut()[j] += FD_STEP;
    let mut minus = inputs.to_vec();
    minus[i].data_mut()[j] -= FD_STEP;
    (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP)
}

/// A fixed random projection that turns any tensor into a scalar with
/// non-uniform upstream gradients.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let w = random_tensor(&mut rng(seed), &shape, 1.0);
    let w = g.constant(w);
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

/// A miniature network at 16 Hz with a handful of units per layer.
pub fn tiny_config() -> deepsleep::ModelConfig {
    let mut c = deepsleep::ModelConfig::for_sampling_rate(16).unwrap();
    for b in [&mut c.small, &mut c.large] {
        b.conv1_filters = 2;
        b.conv_filters = 2;
        b.n_convs = 1;
    }
    c.lstm_hidden = 3;
    c.lstm_layers = 1;
    c.shortcut_width = 6;
    c.seq_length = 4;
    c
}

pub fn tiny_subjects(n: usize, epochs: usize, seed: u64) -> Vec<deepsleep::SubjectRecording> {
    use deepsleep::data::synthetic::{synthetic_subjects, SyntheticConfig};
    let cfg = SyntheticConfig {
        fs: 16,
        epochs_per_subject: epochs,
        ..SyntheticConfig::default()
    };
    synthetic_subjects(&cfg, n, seed)
}

/// Denominator floor for elementwise comparisons on the full model. Its
/// loss sums thousands of terms, so central differences carry about 1e-11
/// of absolute round-off; gradients below this floor are compared on an
/// absolute scale instead.
pub const MODEL_REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default)]
pub struct ModelGradientError {
    /// Worst `|a - n| / max(|a|, |n|, MODEL_REL_FLOOR)` over all weights.
    pub elementwise: f64,
    /// Worst `||a - n|| / max(||a||, ||n||)` over parameter tensors.
    pub normwise: f64,
}

/// Compares analytic parameter gradients of the full model's training loss
/// (dropout off, batch statistics on) with central differences over every
/// weight of `model`.
pub fn model_gradient_error(
    model: &deepsleep::DeepSleepNet,
    epochs: &[deepsleep::EpochRecord],
) -> ModelGradientError {
    use deepsleep::model::epochs_tensor;
    use deepsleep::nn::{Binder, LaneLayout, Mode, ParamKind, ParamStore, Session};

    assert_eq!(model.config.dropout, 0.0, "dropout makes the loss random");
    let targets: Vec<usize> = epochs.iter().map(|e| e.stage.index()).collect();
    let x = epochs_tensor(epochs, model.config.epoch_len()).unwrap();
    let layout = LaneLayout::single(epochs.len()).unwrap();
    let loss_of = |params: &ParamStore, track: bool| {
        let mut s = Session::with_mode(Mode::Train, None);
        let mut p = Binder::new(params, track);
        let xv = s.graph.constant(x.clone());
        let state = model.reset_states(1);
        let out = model.forward(&mut s, &mut p, xv, &layout, &state).unwrap();
        let loss = s.graph.softmax_cross_entropy(out.logits, &targets).unwrap();
        let value = s.graph.value(loss).data()[0];
        let grads = track.then(|| {
            s.graph.backward(loss).unwrap();
            p.gradients(&s.graph)
        });
        (value, grads)
    };
    let grads = loss_of(&model.params, true).1.unwrap();
    let mut params = model.params.clone();
    let mut out = ModelGradientError::default();
    for id in model.params.ids() {
        if model.params.entry(id).kind != ParamKind::Weight {
            continue;
        }
        let analytic = grads.get(id).cloned();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = loss_of(&params, false).0;
            params.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = loss_of(&params, false).0;
            params.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.as_ref().map_or(0.0, |t| t.data()[j]);
            let denom = a.abs().max(numeric.abs()).max(MODEL_REL_FLOOR);
            out.elementwise = out.elementwise.max((a - numeric).abs() / denom);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.max(n2).sqrt();
        if scale > 0.0 {
            out.normwise = out.normwise.max(diff2.sqrt() / scale);
        }
    }
    out
}

/// A random EDF+ file: `n_signals - 1` ordinary signals plus an annotation
/// channel carrying a time-keeping TAL and up to three random annotations
/// per record. Returns the file and the injected annotations.
pub fn random_edf_plus(
    rng: &mut ChaCha8Rng,
    n_signals: usize,
    n_records: usize,
) -> (deepsleep::data::edf::EdfFile, Vec<deepsleep::data::Annotation>) {
    use deepsleep::data::annotations::encode_tals;
    use deepsleep::data::edf::{bytes_to_samples, SignalHeader};
    use deepsleep::data::synthetic::random_edf;
    use deepsleep::data::Annotation;

    assert!(n_signals >= 1);
    let mut file = random_edf(rng, n_signals - 1, n_records);
    let dur = file.header.record_duration;
    let mut injected = Vec::new();
    let mut records = Vec::with_capacity(n_records);
    for r in 0..n_records {
        let start = r as f64 * dur;
        let mut bytes = format!("+{start}\x14\x14\x00").into_bytes();
        let anns: Vec<Annotation> = (0..rng.gen_range(0..=3))
            .map(|_| Annotation {
                onset: start + f64::from(rng.gen_range(0..1000u32)) / 100.0,
                duration: rng.gen_bool(0.5).then(|| f64::from(rng.gen_range(1..600u32)) / 2.0),
                text: (0..rng.gen_range(1..12))
                    .map(|_| rng.gen_range(b'!'..=b'~') as char)
                    .collect(),
            })
            .collect();
        bytes.extend(encode_tals(&anns));
        injected.extend(anns);
        records.push(bytes);
    }
    let spr = records.iter().map(|b| b.len().div_ceil(2)).max().unwrap_or(1).max(1);
    let samples = records.iter().flat_map(|b| bytes_to_samples(b, spr)).collect();
    file.header.signals.push(SignalHeader::annotations(spr));
    file.header.header_bytes += 256;
    file.header.reserved = "EDF+C".into();
    file.signals.push(samples);
    (file, injected)
}

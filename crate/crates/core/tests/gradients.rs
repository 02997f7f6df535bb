//! Finite-difference checks for every differentiable tensor operation and
//! for the miniature model end to end.

mod common;

use common::grad_cases::CASES;
use common::{project, random_tensor, rng};
use deepsleep::{Padding, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    for (name, case) in CASES {
        let err = case();
        assert!(err < 1e-5, "{name}: relative error {err:e}");
    }
}

#[test]
fn double_backward_doubles_gradients() {
    let mut r = rng(9);
    let mut g = deepsleep::Graph::new();
    let x = g.parameter(random_tensor(&mut r, &[2, 8, 2], 1.0));
    let f = g.parameter(random_tensor(&mut r, &[3, 2, 3], 1.0));
    let y = g.conv1d(x, f, 1, Padding::Same).unwrap();
    let y = g.relu(y);
    let loss = project(&mut g, y, 15);
    g.backward(loss).unwrap();
    let once: Vec<Tensor> = [x, f].iter().map(|v| g.grad(*v).unwrap().clone()).collect();
    g.backward(loss).unwrap();
    for (v, first) in [x, f].iter().zip(&once) {
        let twice = g.grad(*v).unwrap();
        for (a, b) in twice.data().iter().zip(first.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }
}

#[test]
fn miniature_model_end_to_end() {
    let mut config = common::tiny_config();
    config.dropout = 0.0;
    let model = deepsleep::DeepSleepNet::build(config, 3).unwrap();
    let subject = &common::tiny_subjects(1, 2, 5)[0];
    let err = common::model_gradient_error(&model, &subject.epochs);
    assert!(err.elementwise <= 1e-4 && err.normwise <= 1e-4, "{err:?}");
}

//! Finite-difference cases for every differentiable graph operation. Each
//! returns the worst relative error between analytic and numeric gradients.

use deepsleep::tensor::Binary;
use deepsleep::Padding;

use super::{check_gradients, project, random_tensor, rng};

pub type Case = (&'static str, fn() -> f64);

pub const CASES: &[Case] = &[
    ("matmul", matmul),
    ("conv1d", conv1d),
    ("maxpool1d", maxpool),
    ("binary and row-broadcast ops", elementwise),
    ("relu, tanh, sigmoid, scale", unary_chain),
    ("concat, gather, narrow, reshape, sum of squares", structural),
    ("softmax cross-entropy", cross_entropy),
    ("batch norm (batch statistics)", batch_norm),
    ("dropout mask", mask),
];

fn matmul() -> f64 {
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[3, 4], 1.0);
    let b = random_tensor(&mut r, &[4, 2], 1.0);
    check_gradients(&[a, b], |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        g.sum(c)
    })
}

fn conv1d() -> f64 {
    let mut r = rng(2);
    let x = random_tensor(&mut r, &[2, 16, 3], 1.0);
    let f = random_tensor(&mut r, &[5, 3, 4], 1.0);
    [Padding::Same, Padding::Valid]
        .into_iter()
        .map(|padding| {
            check_gradients(&[x.clone(), f.clone()], |g, v| {
                let y = g.conv1d(v[0], v[1], 2, padding).unwrap();
                project(g, y, 7)
            })
        })
        .fold(0.0, f64::max)
}

/// Random inputs keep the window maxima away from ties.
fn maxpool() -> f64 {
    let mut r = rng(3);
    let x = random_tensor(&mut r, &[2, 11, 3], 1.0);
    check_gradients(&[x], |g, v| {
        let y = g.maxpool1d(v[0], 3, 2).unwrap();
        project(g, y, 8)
    })
}

fn elementwise() -> f64 {
    let mut r = rng(4);
    let a = random_tensor(&mut r, &[3, 5], 2.0);
    let b = random_tensor(&mut r, &[3, 5], 2.0);
    let row = random_tensor(&mut r, &[5], 2.0);
    let mut worst: f64 = 0.0;
    for kind in [Binary::Add, Binary::Sub, Binary::Mul] {
        worst = worst.max(check_gradients(&[a.clone(), b.clone()], |g, v| {
            let c = g.binary(kind, v[0], v[1]).unwrap();
            project(g, c, 9)
        }));
        worst = worst.max(check_gradients(&[a.clone(), row.clone()], |g, v| {
            let c = g.row_binary(kind, v[0], v[1]).unwrap();
            project(g, c, 10)
        }));
    }
    worst
}

fn unary_chain() -> f64 {
    let mut r = rng(4);
    let a = random_tensor(&mut r, &[3, 5], 2.0);
    check_gradients(&[a], |g, v| {
        let r = g.relu(v[0]);
        let t = g.tanh(r);
        let s = g.sigmoid(v[0]);
        let m = g.mul(t, s).unwrap();
        let k = g.scale(m, -1.5);
        project(g, k, 11)
    })
}

fn structural() -> f64 {
    let mut r = rng(5);
    let a = random_tensor(&mut r, &[4, 3], 1.0);
    let b = random_tensor(&mut r, &[4, 2], 1.0);
    check_gradients(&[a, b], |g, v| {
        let c = g.concat(&[v[0], v[1]], 1).unwrap();
        let gathered = g.gather_rows(c, &[3, 1, 1, 0]).unwrap();
        let n = g.narrow_cols(gathered, 1, 3).unwrap();
        let rs = g.reshape(n, [3, 4]).unwrap();
        let sq = g.sum_squares(rs);
        let p = project(g, rs, 12);
        g.add(sq, p).unwrap()
    })
}

fn cross_entropy() -> f64 {
    let mut r = rng(6);
    let logits = random_tensor(&mut r, &[6, 5], 3.0);
    let targets = [0, 4, 2, 2, 1, 3];
    check_gradients(&[logits], |g, v| g.softmax_cross_entropy(v[0], &targets).unwrap())
}

fn batch_norm() -> f64 {
    let mut r = rng(7);
    let x = random_tensor(&mut r, &[3, 4, 2], 2.0);
    let gamma = random_tensor(&mut r, &[2], 1.5);
    let beta = random_tensor(&mut r, &[2], 1.0);
    check_gradients(&[x, gamma, beta], |g, v| {
        let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap();
        project(g, y, 13)
    })
}

fn mask() -> f64 {
    let mut r = rng(8);
    let a = random_tensor(&mut r, &[2, 3], 1.0);
    let m = std::rc::Rc::new(vec![0.0, 2.0, 2.0, 0.0, 2.0, 0.0]);
    check_gradients(&[a], |g, v| {
        let y = g.mask(v[0], m.clone()).unwrap();
        project(g, y, 14)
    })
}

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Var;

use super::Session;

/// Inverted dropout: in training, zero each unit with probability `p` and
/// scale survivors by `1 / (1 - p)`; identity otherwise.
pub fn dropout(s: &mut Session, x: Var, p: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(
            "dropout",
            format!("probability must be in [0, 1), got {p}"),
        ));
    }
    if !s.is_train() || p == 0.0 {
        return Ok(x);
    }
    let n = s.graph.value(x).len();
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let rng = s
        .rng()
        .ok_or_else(|| Error::invalid("dropout", "training session without a random source"))?;
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect();
    s.graph.mask(x, Rc::new(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_and_zero_rate_are_identity() {
        let t = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut s = Session::eval();
        let x = s.graph.constant(t.clone());
        let y = dropout(&mut s, x, 0.5).unwrap();
        assert_eq!(s.graph.value(y), &t);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = Session::train(&mut rng);
        let x = s.graph.constant(t.clone());
        let y = dropout(&mut s, x, 0.0).unwrap();
        assert_eq!(s.graph.value(y), &t);
        assert!(dropout(&mut s, x, 1.0).is_err());
    }

    #[test]
    fn survivor_fraction_and_mean_over_many_units() {
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = Session::train(&mut rng);
        let x = s.graph.constant(Tensor::full([n], 1.0));
        let y = dropout(&mut s, x, 0.5).unwrap();
        let v = s.graph.value(y).data();
        let survivors = v.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "survivors {survivors}");
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }
}

//! Finite-difference sweep over every differentiable tape primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, GradCheckOptions, GradCheckReport};
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "transpose",
    "add",
    "sub",
    "add_bias",
    "scale",
    "add_scalar",
    "softmax_rows",
    "relu",
    "gelu",
    "layer_norm",
    "embedding",
    "concat_rows",
    "concat_cols",
    "slice_cols",
    "select_rows",
    "sum",
    "mean",
    "row_dot",
    "l2_normalize",
    "cosine_sim",
    "cross_entropy_rows",
    "linear",
];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// `Σ w ⊙ y` with fixed weights, so every output entry reaches the root.
fn reduce(t: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    if t.value(y).numel() == 1 {
        return Ok(y);
    }
    let w = t.constant(w.clone());
    let d = t.row_dot(y, w)?;
    Ok(t.sum(d))
}

/// Gradient check of one primitive on seeded random inputs.
pub fn check_primitive(name: &str, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: Vec<usize>| rand_tensor(&mut rng, s);
    let (a34, b34, b45, row4, w33, w35) = (
        r(vec![3, 4]),
        r(vec![3, 4]),
        r(vec![4, 5]),
        r(vec![4]),
        r(vec![3, 4]),
        r(vec![3, 5]),
    );
    let (w43, w24, w32, w38, w36) = (
        r(vec![4, 3]),
        r(vec![2, 4]),
        r(vec![3, 2]),
        r(vec![3, 8]),
        r(vec![3, 6]),
    );
    let table = r(vec![6, 4]);
    let from = |v: &Tensor<f64>, f: fn(f64) -> f64| v.map(f);
    type F = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;
    let (inputs, f): (Vec<Tensor<f64>>, F) = match name {
        "matmul" => (
            vec![a34.clone(), b45],
            Box::new(move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                reduce(t, y, &w35)
            }),
        ),
        "transpose" => (
            vec![a34.clone()],
            Box::new(move |t, v| {
                let y = t.transpose(v[0])?;
                reduce(t, y, &w43)
            }),
        ),
        "add" => (
            vec![a34.clone(), b34],
            Box::new(move |t, v| {
                let y = t.add(v[0], v[1])?;
                reduce(t, y, &w33)
            }),
        ),
        "sub" => (
            vec![a34.clone(), b34],
            Box::new(move |t, v| {
                let y = t.sub(v[0], v[1])?;
                reduce(t, y, &w33)
            }),
        ),
        "add_bias" => (
            vec![a34.clone(), row4],
            Box::new(move |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                reduce(t, y, &w33)
            }),
        ),
        "scale" => (
            vec![a34.clone()],
            Box::new(move |t, v| {
                let y = t.scale(v[0], -1.7);
                reduce(t, y, &w33)
            }),
        ),
        "add_scalar" => (
            vec![a34.clone()],
            Box::new(move |t, v| {
                let y = t.add_scalar(v[0], 0.3);
                reduce(t, y, &w33)
            }),
        ),
        "softmax_rows" => (
            vec![from(&a34, |x| 3.0 * x)],
            Box::new(move |t, v| {
                let y = t.softmax_rows(v[0])?;
                reduce(t, y, &w33)
            }),
        ),
        // Inputs are kept away from the kink at zero.
        "relu" => (
            vec![from(&a34, |x| if x.abs() < 1e-2 { 0.5 } else { x })],
            Box::new(move |t, v| {
                let y = t.relu(v[0]);
                reduce(t, y, &w33)
            }),
        ),
        "gelu" => (
            vec![from(&a34, |x| 3.0 * x)],
            Box::new(move |t, v| {
                let y = t.gelu(v[0]);
                reduce(t, y, &w33)
            }),
        ),
        "layer_norm" => (
            vec![a34.clone(), row4.clone(), from(&row4, |x| 0.5 * x)],
            Box::new(move |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2])?;
                reduce(t, y, &w33)
            }),
        ),
        "embedding" => (
            vec![table],
            Box::new(move |t, v| {
                let y = t.embedding(v[0], &[4, 1, 4])?;
                reduce(t, y, &w33)
            }),
        ),
        "concat_rows" => (
            vec![a34.clone(), b34],
            Box::new(move |t, v| {
                let y = t.concat_rows(&[v[0], v[1]])?;
                let z = t.concat_cols(&[y, y])?;
                let s = t.select_rows(z, &[0, 2, 5])?;
                reduce(t, s, &w38)
            }),
        ),
        "concat_cols" => (
            vec![a34.clone(), w32],
            Box::new(move |t, v| {
                let y = t.concat_cols(&[v[0], v[1]])?;
                reduce(t, y, &w36)
            }),
        ),
        "slice_cols" => (
            vec![a34.clone()],
            Box::new(move |t, v| {
                let y = t.slice_cols(v[0], 1, 2)?;
                let w = w32.clone();
                reduce(t, y, &w)
            }),
        ),
        "select_rows" => (
            vec![a34.clone()],
            Box::new(move |t, v| {
                let y = t.select_rows(v[0], &[2, 0])?;
                reduce(t, y, &w24)
            }),
        ),
        "sum" => (vec![a34.clone()], Box::new(|t, v| Ok(t.sum(v[0])))),
        "mean" => (vec![a34.clone()], Box::new(|t, v| Ok(t.mean(v[0])))),
        "row_dot" => (
            vec![a34.clone(), b34],
            Box::new(|t, v| {
                let y = t.row_dot(v[0], v[1])?;
                let w = t.constant(Tensor::new(vec![3, 1], vec![0.7, -1.1, 0.4]).expect("3×1"));
                let d = t.row_dot(y, w)?;
                Ok(t.sum(d))
            }),
        ),
        "l2_normalize" => (
            vec![a34.clone()],
            Box::new(move |t, v| {
                let y = t.l2_normalize(v[0])?;
                reduce(t, y, &w33)
            }),
        ),
        "cosine_sim" => (vec![a34.clone(), b34], Box::new(|t, v| Ok(t.cosine_sim(v[0], v[1])?))),
        "cross_entropy_rows" => (
            vec![from(&a34, |x| 2.0 * x)],
            Box::new(|t, v| Ok(t.cross_entropy_rows(v[0], &[1, 0, 3])?)),
        ),
        "linear" => (
            vec![
                a34.clone(),
                b45.clone(),
                rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), vec![5]),
            ],
            Box::new(move |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                reduce(t, y, &w35)
            }),
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown primitive {other:?}; expected one of {}",
                PRIMITIVES.join(", ")
            )))
        }
    };
    check_inputs(&inputs, f, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for p in PRIMITIVES {
            let r = check_primitive(p, 7, &GradCheckOptions::default()).unwrap();
            assert!(r.passes(1e-6), "{p}: {:?}", r.worst);
        }
        assert!(check_primitive("nope", 0, &GradCheckOptions::default()).is_err());
    }
}

use cir_core::losses::{
    cc_loss, cc_loss_graph, contrastive_loss, contrastive_loss_graph, CcConfig, CcInputs, CcPhrase, RowAlignment,
};
use cir_core::model::AttnMap;
use cir_core::tensor::gradcheck::{check_inputs, GradCheckOptions};
use cir_core::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut d = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let r: Vec<f64> = (0..cols).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = r.iter().sum();
        d.extend(r.into_iter().map(|v| v / s));
    }
    Tensor::new(vec![rows, cols], d).unwrap()
}

fn attn(w: Tensor<f64>) -> AttnMap<f64> {
    AttnMap {
        weights: w,
        heads: 1,
        layer: "t".into(),
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
    let mut out = Vec::new();
    for _ in 0..n {
        let r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nrm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(r.into_iter().map(|x| x / nrm));
    }
    Tensor::new(vec![n, d], out).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Direct transcription of the per-sample term, no log-sum-exp shift.
fn oracle_contrastive(q: &Tensor<f64>, t: &Tensor<f64>, qn: &Tensor<f64>, tau: f64) -> f64 {
    let n = q.rows();
    let mut total = 0.0;
    for i in 0..n {
        let num = (cos(q.row(i), t.row(i)) / tau).exp();
        let mut den = (cos(q.row(i), qn.row(i)) / tau).exp();
        for j in 0..n {
            den += (cos(q.row(i), t.row(j)) / tau).exp();
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

#[test]
fn contrastive_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(1..9);
        let d = rng.random_range(2..17);
        let tau = rng.random_range(0.05..2.0);
        let (q, t, qn) = (
            unit_rows(&mut rng, n, d),
            unit_rows(&mut rng, n, d),
            unit_rows(&mut rng, n, d),
        );
        let got = contrastive_loss(&q, &t, Some(&qn), tau).unwrap();
        let want = oracle_contrastive(&q, &t, &qn, tau);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn contrastive_worked_example() {
    let q = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let qn = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
    let l = contrastive_loss(&q, &q, Some(&qn), 1.0).unwrap();
    assert!((l - 0.31326168751822286).abs() < 1e-9);
}

#[test]
fn contrastive_decreases_with_positive_similarity() {
    // Positive target rotates toward q while the negatives stay put.
    let q = Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
    let qn = Tensor::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
    let mut prev = f64::INFINITY;
    for k in 0..50 {
        let a = std::f64::consts::PI * (1.0 - k as f64 / 49.0);
        let t = Tensor::from_rows(&[vec![a.cos(), a.sin(), 0.0]]).unwrap();
        let l = contrastive_loss(&q, &t, Some(&qn), 0.07).unwrap();
        assert!(l < prev);
        prev = l;
    }
}

fn oracle_cc(full: &Tensor<f64>, phrases: &[(Tensor<f64>, Vec<usize>, Vec<usize>)], eps: f64) -> f64 {
    let mut s = 0.0;
    for (iso, fr, ir) in phrases {
        for k in 0..fr.len() {
            for c in 0..full.cols() {
                s += (full.get2(fr[k], c) - iso.get2(ir[k], c) - eps).max(0.0);
            }
        }
    }
    s
}

#[test]
fn cc_matches_hinge_sum_on_crafted_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..50 {
        let cols = rng.random_range(1..10);
        let rows = rng.random_range(3..12);
        let full = stochastic(&mut rng, rows, cols);
        let n_np = rng.random_range(0..4);
        let mut phrases = Vec::new();
        for _ in 0..n_np {
            let len = rng.random_range(1..rows.min(4));
            let start = rng.random_range(1..rows - len + 1).min(rows - len);
            let fr: Vec<usize> = (start..start + len).collect();
            let iso = stochastic(&mut rng, len + 2, cols);
            phrases.push((iso, fr, (1..=len).collect::<Vec<_>>()));
        }
        let eps = if case % 5 == 0 { 0.0 } else { rng.random_range(0.0..0.2) };
        let inputs = CcInputs {
            full_map: attn(full.clone()),
            phrases: phrases
                .iter()
                .map(|(iso, fr, ir)| CcPhrase {
                    isolated_map: attn(iso.clone()),
                    rows: RowAlignment {
                        full_rows: fr.clone(),
                        iso_rows: ir.clone(),
                    },
                })
                .collect(),
            epsilon: eps,
        };
        let cfg = CcConfig {
            epsilon: eps,
            ..CcConfig::default()
        };
        let want = oracle_cc(&full, &phrases, eps);
        let plain = cc_loss(&inputs, &cfg).unwrap();
        assert!((plain - want).abs() < 1e-12);

        let mut t = Tape::new();
        let fv = t.constant(full.clone());
        let gp: Vec<_> = phrases
            .iter()
            .map(|(iso, fr, ir)| {
                (
                    iso.clone(),
                    RowAlignment {
                        full_rows: fr.clone(),
                        iso_rows: ir.clone(),
                    },
                )
            })
            .collect();
        let g = cc_loss_graph(&mut t, fv, &gp, &cfg).unwrap();
        assert!((t.value(g).item() - want).abs() < 1e-12);
    }
}

#[test]
fn cc_gradient_flows_only_into_full_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let full = stochastic(&mut rng, 6, 5);
    let iso = stochastic(&mut rng, 4, 5);
    let rows = RowAlignment {
        full_rows: vec![2, 3],
        iso_rows: vec![1, 2],
    };
    let cfg = CcConfig {
        epsilon: 0.0,
        ..CcConfig::default()
    };
    let report = check_inputs(
        &[full],
        |t, v| cc_loss_graph(t, v[0], &[(iso.clone(), rows.clone())], &cfg),
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-6), "{:?}", report.worst);
}

#[test]
fn contrastive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [
        unit_rows(&mut rng, 3, 5),
        unit_rows(&mut rng, 3, 5),
        unit_rows(&mut rng, 3, 5),
    ];
    let report = check_inputs(
        &inputs,
        |t, v| contrastive_loss_graph(t, v[0], v[1], Some(v[2]), 0.5),
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-6), "{:?}", report.worst);
}

fn random_inputs(seed: u64) -> (CcInputs<f64>, CcConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = rng.random_range(1..6);
    let full = stochastic(&mut rng, 6, cols);
    let phrases = (0..rng.random_range(1..3))
        .map(|_| CcPhrase {
            isolated_map: attn(stochastic(&mut rng, 4, cols)),
            rows: RowAlignment {
                full_rows: vec![1, 2],
                iso_rows: vec![1, 2],
            },
        })
        .collect();
    let eps = rng.random_range(0.0..0.3);
    (
        CcInputs {
            full_map: attn(full),
            phrases,
            epsilon: eps,
        },
        CcConfig {
            epsilon: eps,
            ..CcConfig::default()
        },
    )
}

proptest! {
    #[test]
    fn cc_nonnegative_and_monotone_in_epsilon(seed in any::<u64>(), bump in 0.0f64..0.5) {
        let (mut c, cfg) = random_inputs(seed);
        let base = cc_loss(&c, &cfg).unwrap();
        prop_assert!(base >= 0.0);
        c.epsilon += bump;
        prop_assert!(cc_loss(&c, &cfg).unwrap() <= base);
    }

    #[test]
    fn raising_isolated_entry_never_raises_cc(seed in any::<u64>(), r in 0usize..4, amount in 0.0f64..1.0) {
        let (mut c, cfg) = random_inputs(seed);
        let base = cc_loss(&c, &cfg).unwrap();
        let w = &mut c.phrases[0].isolated_map.weights;
        let cols = w.cols();
        w.data_mut()[r * cols] += amount;
        prop_assert!(cc_loss(&c, &cfg).unwrap() <= base);
    }

    #[test]
    fn single_phrase_equal_rows_is_zero(seed in any::<u64>(), eps in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let iso = stochastic(&mut rng, 4, 5);
        let mut rows = vec![vec![0.2; 5]];
        rows.extend((1..3).map(|i| iso.row(i).to_vec()));
        rows.push(vec![0.2; 5]);
        let c = CcInputs {
            full_map: attn(Tensor::from_rows(&rows).unwrap()),
            phrases: vec![CcPhrase { isolated_map: attn(iso), rows: RowAlignment { full_rows: vec![1, 2], iso_rows: vec![1, 2] } }],
            epsilon: eps,
        };
        prop_assert_eq!(cc_loss(&c, &CcConfig { epsilon: eps, ..CcConfig::default() }).unwrap(), 0.0);
    }

    #[test]
    fn contrastive_nonnegative_and_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..6);
        let (q, t, qn) = (unit_rows(&mut rng, n, 4), unit_rows(&mut rng, n, 4), unit_rows(&mut rng, n, 4));
        let l = contrastive_loss(&q, &t, Some(&qn), 0.07).unwrap();
        prop_assert!(l >= 0.0);
        let qs = q.map(|v| v * c);
        let ls = contrastive_loss(&qs, &t, Some(&qn), 0.07).unwrap();
        prop_assert!((l - ls).abs() < 1e-9 * l.max(1.0));
    }
}

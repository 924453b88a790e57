use cir_core::datagen::synthetic::{gen_synthetic, SynthConfig};
use cir_core::error::Error;
use cir_core::model::{ImageGrid, ModelConfig, HIST_BINS};
use cir_core::retrieval::*;
use cir_core::text::{Lexicon, TokenizedText};
use cir_core::Model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.extend(v.iter().map(|x| x / norm));
    }
    out
}

fn random_index(seed: u64, n: usize, d: usize) -> GalleryIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..n).map(|i| format!("img{:04}", (i * 7919) % 10007)).collect();
    GalleryIndex::from_parts(d, ids, unit_rows(&mut rng, n, d), "fp".into()).unwrap()
}

#[test]
fn ranking_matches_brute_force() {
    let idx = random_index(3, 200, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let q = unit_rows(&mut rng, 1, 16);
        let mut oracle: Vec<(String, f64)> = (0..idx.len())
            .map(|i| {
                let mut s = 0.0;
                for j in 0..16 {
                    s += idx.vector(i)[j] * q[j];
                }
                (idx.ids()[i].clone(), s)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got = idx.rank(&q).unwrap();
        assert_eq!(got.len(), oracle.len());
        for (h, (id, s)) in got.iter().zip(&oracle) {
            assert_eq!(&h.id, id);
            assert!((h.score - s).abs() < 1e-12);
        }
        let top = idx.topk(&q, 10).unwrap();
        assert_eq!(top, got[..10].to_vec());
    }
}

#[test]
fn ties_break_by_ascending_id() {
    let v = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let idx = GalleryIndex::from_parts(2, vec!["b".into(), "a".into(), "c".into()], v, String::new()).unwrap();
    let ids: Vec<String> = idx.topk(&[1.0, 0.0], 5).unwrap().into_iter().map(|h| h.id).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[test]
fn empty_and_duplicate_errors() {
    let idx = GalleryIndex::from_parts(4, vec![], vec![], String::new()).unwrap();
    assert!(idx.is_empty());
    assert!(idx.topk(&[0.0; 4], 1).is_err());
    let dup = GalleryIndex::from_parts(1, vec!["a".into(), "a".into()], vec![1.0, 1.0], String::new());
    assert!(matches!(dup, Err(Error::Contract(_))));
    let idx = random_index(1, 3, 4);
    assert!(matches!(idx.topk(&[0.5; 4], 0), Err(Error::Parameter(_))));
}

#[test]
fn model_index_self_retrieval_and_round_trip() {
    let lex = Lexicon::builtin();
    let cfg = SynthConfig {
        n: 12,
        seed: 5,
        ..SynthConfig::default()
    };
    let set = gen_synthetic(&cfg, &lex).unwrap();
    let model = Model::new(ModelConfig::default()).unwrap();
    let grids: Vec<&ImageGrid> = set.dataset.grids.iter().collect();
    let idx = build_index(&model, grids.iter().copied()).unwrap();
    assert_eq!(idx.len(), grids.len());
    for i in 0..idx.len() {
        let n: f64 = idx.vector(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    assert_eq!(build_index(&model, grids.iter().copied()).unwrap(), idx);

    let blank = TokenizedText::blank();
    for g in grids.iter().take(5) {
        let hits = query_topk(&idx, &model, g, &blank, 3).unwrap();
        assert_eq!(hits[0].id, g.id);
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }
    let all = query_topk(&idx, &model, grids[0], &blank, 10_000).unwrap();
    assert_eq!(all.len(), idx.len());
    assert!(all.windows(2).all(|w| w[0].score >= w[1].score));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gallery.idx");
    idx.save(&p).unwrap();
    let back = GalleryIndex::load(&p).unwrap();
    assert_eq!(back.fingerprint, model.fingerprint());
    let q = idx.vector(3).to_vec();
    for (a, b) in idx.rank(&q).unwrap().iter().zip(back.rank(&q).unwrap()) {
        assert_eq!(a.id, b.id);
        assert!((a.score - b.score).abs() < 1e-9);
    }
}

#[test]
fn duplicate_gallery_id_is_contract_error() {
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let g = ImageGrid::new("x", 2, vec![0.1; 4 * HIST_BINS]).unwrap();
    assert!(matches!(build_index(&model, [&g, &g]), Err(Error::Contract(_))));
}

#[test]
fn thousand_image_gallery_builds_quickly() {
    let model = Model::new(ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grids: Vec<ImageGrid> = (0..1000)
        .map(|i| {
            let f = (0..16 * HIST_BINS).map(|_| rng.random_range(0.0..1.0)).collect();
            ImageGrid::new(format!("g{i}"), 4, f).unwrap()
        })
        .collect();
    let t0 = std::time::Instant::now();
    let idx = build_index(&model, &grids).unwrap();
    assert_eq!(idx.len(), 1000);
    assert!(t0.elapsed().as_secs() < 60);
}

fn record(rng: &mut ChaCha8Rng, n: usize, with_subset: bool) -> EvalRecord {
    record_gt(rng, n, with_subset, 4)
}

fn record_gt(rng: &mut ChaCha8Rng, n: usize, with_subset: bool, max_gt: usize) -> EvalRecord {
    let mut ids: Vec<String> = (0..n).map(|i| format!("c{i:03}")).collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ranked: Vec<(String, f64)> = ids.drain(..).zip(scores).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let n_gt = rng.random_range(1..=max_gt);
    let mut gt = Vec::new();
    while gt.len() < n_gt {
        let c = format!("c{:03}", rng.random_range(0..n));
        if !gt.contains(&c) {
            gt.push(c);
        }
    }
    let subset = with_subset.then(|| {
        let mut s = vec![gt[0].clone()];
        while s.len() < 6 {
            let c = format!("c{:03}", rng.random_range(0..n));
            if !s.contains(&c) {
                s.push(c);
            }
        }
        s
    });
    EvalRecord {
        query_id: "q".into(),
        ranked,
        gt_ids: gt,
        subset_ids: subset,
    }
}

fn oracle_recall(rs: &[EvalRecord], k: usize) -> f64 {
    let mut hit = 0;
    for r in rs {
        let top: Vec<&String> = r.ranked.iter().take(k).map(|x| &x.0).collect();
        if r.gt_ids.iter().any(|g| top.contains(&g)) {
            hit += 1;
        }
    }
    hit as f64 / rs.len() as f64
}

fn oracle_subset(rs: &[EvalRecord], k: usize) -> f64 {
    let mut hit = 0;
    for r in rs {
        let sub = r.subset_ids.as_ref().unwrap();
        let mut scored: Vec<(String, f64)> = r.ranked.iter().filter(|x| sub.contains(&x.0)).cloned().collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        if scored.iter().take(k).any(|x| r.gt_ids.contains(&x.0)) {
            hit += 1;
        }
    }
    hit as f64 / rs.len() as f64
}

fn oracle_map(rs: &[EvalRecord], k: usize) -> f64 {
    let mut total = 0.0;
    for r in rs {
        let rel: Vec<f64> = r.ranked.iter().map(|x| r.gt_ids.contains(&x.0) as u8 as f64).collect();
        let mut ap = 0.0;
        for i in 1..=k.min(rel.len()) {
            let prec = rel[..i].iter().sum::<f64>() / i as f64;
            ap += prec * rel[i - 1];
        }
        total += ap / r.gt_ids.len().min(k) as f64;
    }
    total / rs.len() as f64
}

#[test]
fn metrics_match_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let n_rec = rng.random_range(1..12);
        let rs: Vec<EvalRecord> = (0..n_rec).map(|_| record(&mut rng, 40, true)).collect();
        for k in [1, 2, 3, 5, 10, 25, 50] {
            assert!((recall_at_k(&rs, k).unwrap() - oracle_recall(&rs, k)).abs() < 1e-12);
            assert!((map_at_k(&rs, k).unwrap() - oracle_map(&rs, k)).abs() < 1e-12);
            assert!((recall_subset_at_k(&rs, k).unwrap() - oracle_subset(&rs, k)).abs() < 1e-12);
        }
    }
}

#[test]
fn subset_of_six_gt_third() {
    let ranked: Vec<(String, f64)> = ["x1", "a", "x2", "b", "g", "c", "d"]
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), 1.0 - i as f64 / 10.0))
        .collect();
    let r = EvalRecord {
        query_id: "q".into(),
        ranked,
        gt_ids: vec!["g".into()],
        subset_ids: Some(["a", "b", "g", "c", "d", "x9"].iter().map(|s| s.to_string()).collect()),
    };
    assert_eq!(recall_subset_at_k(std::slice::from_ref(&r), 3).unwrap(), 1.0);
    assert_eq!(recall_subset_at_k(std::slice::from_ref(&r), 2).unwrap(), 0.0);
    let only_gt = EvalRecord {
        subset_ids: Some(vec!["g".into()]),
        ..r
    };
    assert_eq!(recall_subset_at_k(&[only_gt], 1).unwrap(), 1.0);
}

#[test]
fn report_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rs: Vec<EvalRecord> = (0..5).map(|_| record(&mut rng, 60, true)).collect();
    let rep = evaluate(&rs).unwrap();
    let keys: Vec<(String, usize)> = rep.rows.iter().map(|r| (r.metric.clone(), r.k)).collect();
    assert_eq!(keys.len(), 11);
    assert_eq!(rep.get("Recall", 50), Some(oracle_recall(&rs, 50)));
    assert!(rep.to_tsv().starts_with("metric\tK\tvalue\n"));
    assert!(rep.summary().contains("Recall_subset"));
    let back: EvalReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
    assert!(matches!(evaluate(&[]), Err(Error::Data(_))));
}

proptest! {
    #[test]
    fn metric_properties(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rs: Vec<EvalRecord> = (0..6).map(|_| record(&mut rng, 30, true)).collect();
        let single: Vec<EvalRecord> = (0..6).map(|_| record_gt(&mut rng, 30, true, 1)).collect();
        let mut prev = 0.0;
        for k in 1..=30 {
            let r = recall_at_k(&rs, k).unwrap();
            prop_assert!(r >= prev);
            prev = r;
            prop_assert!(recall_subset_at_k(&single, k).unwrap() >= recall_at_k(&single, k).unwrap());
            let m = map_at_k(&rs, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            for rec in &rs {
                let ap = rec.average_precision(k);
                let any = rec.ranked.iter().take(k).any(|x| rec.gt_ids.contains(&x.0));
                prop_assert_eq!(ap > 0.0, any);
            }
        }
        prop_assert_eq!(recall_at_k(&rs, 30).unwrap(), 1.0);
    }
}

mod common;

use common::*;
use dsg_core::model::RelaxedCodes;
use dsg_core::{
    average_precision, batch_loss, evaluate, load_codes, pseudo_label, rank_by_hamming, save_codes,
    smooth_weight, CodeSet, DistanceStats, EvalConfig, HashModel, HashModelConfig, LabelSet,
};
use proptest::prelude::*;

fn thresholds() -> impl Strategy<Value = DistanceStats> {
    (0.01f64..0.5, 0.01f64..0.5, 0.01f64..0.9).prop_map(|(a, b, c)| stats(a * 0.5, a * 0.5 + b, a * 0.5 + b + c))
}

fn relaxed(m: usize, l: usize) -> impl Strategy<Value = RelaxedCodes> {
    prop::collection::vec(-0.999f64..0.999, m * l).prop_map(move |v| RelaxedCodes::new(m, l, v).unwrap())
}

fn symmetric_pairs(m: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(any::<bool>(), m * m), prop::collection::vec(0.0f64..1.0, m * m)).prop_map(
        move |(sb, wv)| {
            let mut s = vec![0.0; m * m];
            let mut w = vec![0.0; m * m];
            for i in 0..m {
                for j in i..m {
                    let sv = if i == j || sb[i * m + j] { 1.0 } else { -1.0 };
                    let ww = if i == j { 1.0 } else { wv[i * m + j] };
                    s[i * m + j] = sv;
                    s[j * m + i] = sv;
                    w[i * m + j] = ww;
                    w[j * m + i] = ww;
                }
            }
            (s, w)
        },
    )
}

fn sign_codes(n: usize, l: usize) -> impl Strategy<Value = CodeSet> {
    prop::collection::vec(any::<bool>(), n * l).prop_map(move |bits| {
        let signs: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        CodeSet::from_signs((0..n).map(|i| format!("c{i:03}")).collect(), l, &signs).unwrap()
    })
}

proptest! {
    #[test]
    fn smooth_weight_in_unit_interval(st in thresholds(), d in 0.0f64..=2.0) {
        let w = smooth_weight(d, &st);
        prop_assert!((0.0..=1.0).contains(&w));
    }

    #[test]
    fn smooth_weight_monotone_on_each_side(st in thresholds(), a in 0.0f64..=2.0, b in 0.0f64..=2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if hi <= st.t {
            prop_assert!(smooth_weight(lo, &st) >= smooth_weight(hi, &st));
        }
        if lo > st.t {
            prop_assert!(smooth_weight(lo, &st) <= smooth_weight(hi, &st));
        }
    }

    #[test]
    fn smooth_weight_continuous(st in thresholds(), d in 0.0f64..=2.0) {
        let eps = 1e-9;
        let gap = (smooth_weight(d, &st) - smooth_weight((d + eps).min(2.0), &st)).abs();
        let slope = 2.0 / (st.t - st.d_l).min(st.d_r - st.t);
        prop_assert!(gap <= slope * eps + 1e-12, "jump {gap} at {d}");
    }

    #[test]
    fn pseudo_label_is_threshold_sign(st in thresholds(), d in 0.0f64..=2.0) {
        let s = pseudo_label(d, &st);
        prop_assert_eq!(s == 1, d <= st.t);
        prop_assert!(s == 1 || s == -1);
    }

    #[test]
    fn loss_invariant_under_batch_permutation(
        v in relaxed(5, 4),
        (s, w) in symmetric_pairs(5),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let m = 5;
        let pv: Vec<f64> = perm.iter().flat_map(|&i| v.row(i).to_vec()).collect();
        let pv = RelaxedCodes::new(m, 4, pv).unwrap();
        let mut ps = vec![0.0; m * m];
        let mut pw = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                ps[a * m + b] = s[perm[a] * m + perm[b]];
                pw[a * m + b] = w[perm[a] * m + perm[b]];
            }
        }
        let l0 = batch_loss(&v, &s, &w).unwrap();
        let l1 = batch_loss(&pv, &ps, &pw).unwrap();
        prop_assert!((l0 - l1).abs() <= 1e-12);
    }

    #[test]
    fn unit_weights_give_unweighted_loss(v in relaxed(4, 6), (s, _) in symmetric_pairs(4)) {
        let m = 4;
        let ones = vec![1.0; m * m];
        let mut plain = 0.0;
        for i in 0..m {
            for j in 0..m {
                let h: f64 = v.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum::<f64>() / 6.0;
                plain += (h - s[i * m + j]).powi(2);
            }
        }
        plain /= (m * m) as f64;
        prop_assert!((batch_loss(&v, &s, &ones).unwrap() - plain).abs() <= 1e-12);
    }

    #[test]
    fn code_file_round_trip(codes in (8usize..70).prop_flat_map(|l| sign_codes(9, l))) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.dsgc");
        save_codes(&codes, &path).unwrap();
        prop_assert_eq!(load_codes(&path).unwrap(), codes);
    }

    #[test]
    fn ranking_is_a_permutation(db in sign_codes(40, 24), q in sign_codes(1, 24)) {
        let mut order = rank_by_hamming(q.code(0), &db).unwrap();
        order.sort_unstable();
        prop_assert_eq!(order, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn average_precision_in_unit_interval(rel in prop::collection::vec(any::<bool>(), 1..60), r in 1usize..80) {
        let ap = average_precision(&rel, r);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn pr_recall_monotone_and_eval_shuffle_invariant(
        db in sign_codes(30, 16),
        q in sign_codes(6, 16),
        classes in prop::collection::vec(0u32..3, 36),
        perm in Just((0..30).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let db_labels = LabelSet::new(db.ids().to_vec(), classes[..30].iter().map(|&c| vec![c]).collect()).unwrap();
        let q_labels = LabelSet::new(q.ids().to_vec(), classes[30..].iter().map(|&c| vec![c]).collect()).unwrap();
        let config = EvalConfig { r_cutoff: 20, topn_max: 30, topn_step: 5, multi_label: false };
        let report = evaluate(&q, &db, &q_labels, &db_labels, &config).unwrap();
        for pair in report.pr_curve.windows(2) {
            prop_assert!(pair[1].recall >= pair[0].recall);
        }

        let ids: Vec<String> = perm.iter().map(|&i| db.ids()[i].clone()).collect();
        let shuffled = db.select(&ids).unwrap();
        let shuffled_labels = db_labels.align_to(&ids).unwrap();
        let again = evaluate(&q, &shuffled, &q_labels, &shuffled_labels, &config).unwrap();
        prop_assert_eq!(report, again);
    }
}

#[test]
fn sign_of_relaxed_code_matches_sign_of_output() {
    let fs = random_features(1000, 8, 6);
    let mut config = HashModelConfig::new(8, 12);
    config.seed = 3;
    let model = HashModel::init(config).unwrap();
    let raw = model.raw_outputs(fs.data()).unwrap();
    let relaxed = model.forward(fs.data()).unwrap();
    for (f, v) in raw.iter().zip(&relaxed.values) {
        assert_eq!(*f >= 0.0, *v >= 0.0);
    }
}

use pitnet::metrics::{classification_metrics, normalize_confusion, rank_auc, ConfusionMatrix};
use pitnet::ops::{conv2d_forward, ConvGeometry, ConvParams};
use pitnet::Tensor;
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, values: Vec<f64>) -> Tensor<f64> {
    Tensor::from_f64(shape, &values).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_in_its_input(
        x in values(2 * 7 * 7),
        y in values(2 * 7 * 7),
        w in values(3 * 2 * 9),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        stride in 1usize..3,
        dilation in 1usize..3,
    ) {
        let params = ConvParams {
            in_channels: 2,
            out_channels: 3,
            geometry: ConvGeometry::new(3, stride, 1, dilation),
            weight: tensor(vec![3, 2, 3, 3], w),
            bias: None,
        };
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let shape = vec![1, 2, 7, 7];
        let fx = conv2d_forward(&tensor(shape.clone(), x), &params).unwrap();
        let fy = conv2d_forward(&tensor(shape.clone(), y), &params).unwrap();
        let fm = conv2d_forward(&tensor(shape, mix), &params).unwrap();
        for ((m, p), q) in fm.data().iter().zip(fx.data()).zip(fy.data()) {
            prop_assert!((m - (a * p + b * q)).abs() < 1e-10);
        }
    }

    #[test]
    fn dilated_kernel_equals_zero_interspersed_kernel(
        x in values(2 * 9 * 9),
        w in values(2 * 2 * 9),
    ) {
        let dilated = ConvParams {
            in_channels: 2,
            out_channels: 2,
            geometry: ConvGeometry::new(3, 1, 2, 2),
            weight: tensor(vec![2, 2, 3, 3], w.clone()),
            bias: None,
        };
        let mut spread = vec![0.0; 2 * 2 * 25];
        for oc_ic in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    spread[oc_ic * 25 + 2 * i * 5 + 2 * j] = w[oc_ic * 9 + i * 3 + j];
                }
            }
        }
        let wide = ConvParams {
            in_channels: 2,
            out_channels: 2,
            geometry: ConvGeometry::new(5, 1, 2, 1),
            weight: tensor(vec![2, 2, 5, 5], spread),
            bias: None,
        };
        let input = tensor(vec![1, 2, 9, 9], x);
        let a = conv2d_forward(&input, &dilated).unwrap();
        let b = conv2d_forward(&input, &wide).unwrap();
        prop_assert_eq!(a.shape(), b.shape());
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms(
        scores in prop::collection::vec(-5.0f64..5.0, 12),
        positive in prop::collection::vec(any::<bool>(), 12),
    ) {
        let base = rank_auc(&scores, &positive);
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-3.0 * s).exp()) + 7.0).collect();
        prop_assert_eq!(base, rank_auc(&squashed, &positive));
        if let Some(auc) = base {
            prop_assert!((0.0..=1.0).contains(&auc));
            let flipped: Vec<bool> = positive.iter().map(|p| !p).collect();
            prop_assert!((rank_auc(&scores, &flipped).unwrap() - (1.0 - auc)).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_matches_pair_counting(
        scores in prop::collection::vec(0u8..6, 14),
        positive in prop::collection::vec(any::<bool>(), 14),
    ) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..14 {
            for j in 0..14 {
                if positive[i] && !positive[j] {
                    pairs += 1.0;
                    wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let expected = (pairs > 0.0).then(|| wins / pairs);
        match (rank_auc(&s, &positive), expected) {
            (Some(a), Some(e)) => prop_assert!((a - e).abs() < 1e-12),
            (a, e) => prop_assert_eq!(a, e),
        }
    }

    #[test]
    fn metrics_agree_with_a_per_sample_loop(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
    ) {
        let (mut predicted, mut truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        predicted.extend(0..4);
        truth.extend(0..4);
        let n = truth.len();
        let cm = ConfusionMatrix::from_predictions(&predicted, &truth, 4).unwrap();
        let m = classification_metrics(&cm).unwrap();

        let correct = predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert!((m.accuracy - correct as f64 / n as f64).abs() < 1e-12);
        let mut sens = 0.0;
        let mut spec = 0.0;
        for c in 0..4 {
            let (mut tp, mut fn_, mut fp, mut tn) = (0.0, 0.0, 0.0, 0.0);
            for (&p, &t) in predicted.iter().zip(&truth) {
                match (p == c, t == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fn_ += 1.0,
                    (true, false) => fp += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
            prop_assert!((m.per_class[c].sensitivity - tp / (tp + fn_)).abs() < 1e-12);
            prop_assert!((m.per_class[c].specificity - tn / (tn + fp)).abs() < 1e-12);
            prop_assert!((m.per_class[c].precision - tp / (tp + fp)).abs() < 1e-12);
            sens += tp / (tp + fn_) / 4.0;
            spec += tn / (tn + fp) / 4.0;
        }
        prop_assert!((m.sensitivity - sens).abs() < 1e-12);
        prop_assert!((m.specificity - spec).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_sample_order(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 4..40),
        rotate in 0usize..40,
    ) {
        let (predicted, truth): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let k = rotate % pairs.len();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let (p2, t2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let a = ConfusionMatrix::from_predictions(&predicted, &truth, 4).unwrap();
        let b = ConfusionMatrix::from_predictions(&p2, &t2, 4).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(classification_metrics(&a).unwrap(), classification_metrics(&b).unwrap());
    }

    #[test]
    fn normalized_columns_sum_to_one(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
    ) {
        let (mut predicted, mut truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        predicted.extend(0..4);
        truth.extend(0..4);
        let cm = ConfusionMatrix::from_predictions(&predicted, &truth, 4).unwrap();
        prop_assert_eq!(cm.total(), truth.len() as u64);
        let norm = normalize_confusion(&cm).unwrap();
        for t in 0..4 {
            let col: f64 = (0..4).map(|p| norm[p][t]).sum();
            prop_assert!((col - 1.0).abs() < 1e-12);
        }
    }
}

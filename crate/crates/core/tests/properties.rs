use ecn::eval::{iou, levenshtein, mcnemar, BoxRecord};
use ecn::inference::{avg_softmax, fc7_sum};
use ecn::net::Checkpoint;
use ecn::sampler::patches::{large_count, small_count, window_origins, PatchSet};
use ecn::sampler::{extract_all, make_ensemble_dataset, preprocess, synth_images, SynthConfig};
use ecn::train::{ecn_loss, ecn_samples, finetune_ecn, EcnConfig, Trainer};
use ecn::{PatchNet, Phase, Tensor};
use proptest::prelude::*;

fn logits(k: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-30.0f64..30.0, k), n)
}

fn sets_with_sizes(sizes: &[usize]) -> Vec<PatchSet<f32>> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &m)| PatchSet {
            patches: (0..m).map(|_| Tensor::zeros(&[1, 32, 32])).collect(),
            origins: vec![],
            label: i % 2,
            source_id: format!("s{i}"),
            width: 40,
        })
        .collect()
}

proptest! {
    #[test]
    fn ecn_loss_ignores_branch_order(z in (2usize..8, 1usize..6).prop_flat_map(|(k, n)| logits(k, n)), rot in 0usize..6) {
        let n = z.len();
        let label = rot % z[0].len();
        let a = ecn_loss(&z, label, n).unwrap();
        let mut r = z.clone();
        r.rotate_left(rot % n);
        r.reverse();
        let b = ecn_loss(&r, label, n).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-12 * a.loss.abs().max(1.0));
        for (x, y) in a.grad.iter().zip(&b.grad) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!(a.loss >= 0.0);
        prop_assert!((a.grad.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn window_counts_agree(w in 40usize..6000) {
        let origins = window_origins(w);
        prop_assert_eq!(origins.len(), large_count(w) + small_count(w));
        prop_assert!(origins.iter().all(|o| o.x % 8 == 0 && o.x + o.scale <= w && o.y + o.scale <= 40));
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[abc]{0,7}", b in "[abc]{0,7}", c in "[abc]{0,7}") {
        let d = levenshtein(&a, &b);
        prop_assert_eq!(d, levenshtein(&b, &a));
        prop_assert_eq!(d == 0, a == b);
        prop_assert!(d <= a.chars().count().max(b.chars().count()));
        prop_assert!(levenshtein(&a, &c) <= d + levenshtein(&b, &c));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        p in (0.0f64..50.0, 0.0f64..50.0, 1.0f64..40.0, 1.0f64..40.0),
        q in (0.0f64..50.0, 0.0f64..50.0, 1.0f64..40.0, 1.0f64..40.0),
    ) {
        let a = BoxRecord::new("i", p.0, p.1, p.2, p.3, "x");
        let b = BoxRecord::new("i", q.0, q.1, q.2, q.3, "x");
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn avg_softmax_is_a_distribution(z in (2usize..10, 1usize..20).prop_flat_map(|(k, n)| logits(k, n))) {
        let s = avg_softmax(&z).unwrap();
        prop_assert!((s.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(s.values.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn fc7_sum_ignores_patch_order(z in (2usize..10, 1usize..20).prop_flat_map(|(k, n)| logits(k, n))) {
        let mut r = z.clone();
        r.reverse();
        prop_assert_eq!(fc7_sum(&z).unwrap().predicted, fc7_sum(&r).unwrap().predicted);
    }

    #[test]
    fn mcnemar_swap_invariant(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
        let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let ab = mcnemar(&a, &b).unwrap();
        let ba = mcnemar(&b, &a).unwrap();
        prop_assert_eq!((ab.b, ab.c), (ba.c, ba.b));
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn ensemble_size_is_twice_patch_count(sizes in prop::collection::vec(0usize..25, 1..20), n in 1usize..12, seed in any::<u64>()) {
        let sets = sets_with_sizes(&sizes);
        let ens = make_ensemble_dataset(&sets, n, seed).unwrap();
        prop_assert_eq!(ens.samples.len(), 2 * sizes.iter().sum::<usize>());
        prop_assert_eq!(ens.skipped, sizes.iter().filter(|&&m| m == 0).count());
        prop_assert!(ens.samples.iter().all(|s| s.members.len() == n && s.members.iter().all(|&m| m < sizes[s.image])));
    }
}

#[test]
fn single_branch_finetune_matches_plain_training() {
    let cfg = SynthConfig {
        train_count: 16,
        test_count: 4,
        ..SynthConfig::default()
    };
    let data = synth_images(&cfg).unwrap();
    let lines: Vec<_> = data
        .train
        .iter()
        .map(|i| preprocess(&i.image, i.label, i.name.clone()).unwrap())
        .collect();
    let sets = extract_all::<f32>(&lines).unwrap();
    let ensemble = make_ensemble_dataset(&sets, 1, 5).unwrap();
    let samples = ecn_samples(&sets, &ensemble);

    let mut ecn = EcnConfig { n: 1, ..EcnConfig::default() };
    ecn.sgd.batch_size = 8;
    ecn.sgd.max_iterations = 25;
    ecn.sgd.seed = 6;

    let mut warm = PatchNet::<f32>::build("mini", 4, 4).unwrap();
    warm.val_accuracy = Some(0.5);
    let (tuned, vel, reports) = finetune_ecn(Checkpoint { net: warm.clone(), velocity: None }, &samples, &ecn, 0.52, |_, _| Ok(())).unwrap();

    warm.phase = Phase::Ecn;
    let mut plain = Trainer::new(warm, None, &samples, ecn.sgd.clone(), 1).unwrap();
    let plain_reports = plain.run_until(25, |_, _| Ok(())).unwrap();
    let (net, plain_vel) = plain.into_parts();

    assert_eq!(reports.len(), 25);
    for (a, b) in reports.iter().zip(&plain_reports) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
    assert!(tuned.bit_eq(&net));
    assert_eq!(vel, plain_vel);
}

use std::collections::BTreeSet;

use l1sa::experiment::{run_confounding_ablation, summarize, GroupRun};
use l1sa::synth::{
    assemble_group, generate_all_scenes, make_confounding_cases, separable_toy, Case, GroupLayout, Label, RobotSpec, SceneKind,
};
use l1sa::train::{evaluate, split_train_val, train, ConfusionMatrix, TrainConfig};
use l1sa::{LevelOneConfig, LevelOneParams, Tensor};
use proptest::prelude::*;

fn label(i: usize) -> Label {
    Label::from_index(i).unwrap()
}

proptest! {
    #[test]
    fn confusion_rows_sum_to_class_counts(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..400)) {
        let m = ConfusionMatrix::from_pairs(pairs.iter().map(|&(t, p)| (label(t), label(p))));
        for t in 0..2 {
            let expected = pairs.iter().filter(|&&(x, _)| x == t).count() as u64;
            prop_assert_eq!(m.counts[t][0] + m.counts[t][1], expected);
            prop_assert_eq!(m.true_count(label(t)), expected);
        }
        let agree = pairs.iter().filter(|&&(t, p)| t == p).count() as f64;
        prop_assert_eq!(m.accuracy(), agree / pairs.len() as f64);
        prop_assert_eq!(ConfusionMatrix::from_csv(&m.to_csv()).unwrap(), m);
    }

    #[test]
    fn split_is_a_stratified_partition(n in 10usize..300, seed in any::<u64>(), fraction in 0.3f64..0.9) {
        let kinds = [SceneKind::PlainA, SceneKind::ClutterB];
        let data = separable_toy(n, (8, 8), seed, &kinds);
        prop_assume!(kinds.iter().all(|&k| [Label::SelfBody, Label::Environment]
            .iter()
            .all(|&l| data.samples.iter().filter(|s| s.scene_kind == k && s.label == l).count() >= 2)));
        let (tr, va) = split_train_val(&data, fraction, seed).unwrap();
        let a: BTreeSet<u64> = tr.samples.iter().map(|s| s.sample_id).collect();
        let b: BTreeSet<u64> = va.samples.iter().map(|s| s.sample_id).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), n);
        for k in kinds {
            for l in [Label::SelfBody, Label::Environment] {
                let total = data.samples.iter().filter(|s| s.scene_kind == k && s.label == l).count() as f64;
                let got = tr.samples.iter().filter(|s| s.scene_kind == k && s.label == l).count() as f64;
                prop_assert!((got - fraction * total).abs() <= 1.0);
            }
        }
    }
}

#[test]
fn separable_toy_converges_with_default_config() {
    let data = separable_toy(640, (16, 16), 21, &[SceneKind::PlainA]);
    let (tr, va) = split_train_val(&data, 0.8, 1).unwrap();
    let mut model = LevelOneParams::init(LevelOneConfig { image_size: (16, 16), ..LevelOneConfig::default() }).unwrap();
    let report = train(&mut model, &tr, &va, &TrainConfig::default()).unwrap();
    assert_eq!(report.epochs.len(), 24);
    assert_eq!(report.best_val_accuracy, 1.0, "{:?}", report.epochs);
    assert_eq!(evaluate(&model, &va).unwrap().accuracy(), 1.0);

    let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
    let increases: Vec<f64> = losses[2..].windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    assert!(increases.len() <= 1 && increases.iter().all(|&r| r <= 0.05), "losses {losses:?}");
}

#[test]
fn zero_learning_rate_is_a_bitwise_no_op() {
    let data = separable_toy(96, (16, 16), 3, &[SceneKind::PlainB]);
    let (tr, va) = split_train_val(&data, 0.8, 0).unwrap();
    let mut model = LevelOneParams::init(LevelOneConfig { image_size: (16, 16), seed: 5, ..LevelOneConfig::default() }).unwrap();
    let before = model.clone();
    let cfg = TrainConfig { epochs: 2, batch_size: 16, learning_rate: 0.0, ..TrainConfig::default() };
    let report = train(&mut model, &tr, &va, &cfg).unwrap();
    assert!(report.parameters_unchanged);
    for (a, b) in model.tensors().iter().zip(before.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

fn small_scenes() -> Vec<l1sa::synth::Dataset> {
    generate_all_scenes(&RobotSpec::default(), (16, 16), 40, 8).unwrap()
}

#[test]
fn held_out_scene_never_enters_training() {
    let scenes = small_scenes();
    for layout in GroupLayout::all() {
        let g = assemble_group(layout.group, &scenes).unwrap();
        let test: BTreeSet<u64> = g.test.samples.iter().map(|s| s.sample_id).collect();
        assert!(g.train_pool.samples.iter().all(|s| !test.contains(&s.sample_id) && s.scene_kind != layout.test));
        assert_eq!(g.train_pool.len(), 120);
        let kinds: BTreeSet<SceneKind> = g.train_pool.samples.iter().map(|s| s.scene_kind).collect();
        assert_eq!(kinds, layout.train.iter().copied().collect());
    }
}

#[test]
fn table_of_groups() {
    use SceneKind::*;
    let held: Vec<SceneKind> = GroupLayout::all().iter().map(|l| l.test).collect();
    assert_eq!(held, [ClutterA, PlainA, ClutterB, PlainB]);
    assert_eq!(GroupLayout::new(3).unwrap().train, [ClutterA, PlainB, PlainA]);
    assert!(GroupLayout::new(5).is_err());
}

/// Re-derives every case accuracy by predicting samples one at a time.
#[test]
fn ablation_matches_per_sample_recount() {
    let scenes = small_scenes();
    let g = assemble_group(1, &scenes).unwrap();
    let mut model = LevelOneParams::init(LevelOneConfig { image_size: (16, 16), seed: 2, ..LevelOneConfig::default() }).unwrap();
    let (tr, va) = split_train_val(&g.train_pool, 0.8, 0).unwrap();
    train(&mut model, &tr, &va, &TrainConfig { epochs: 2, batch_size: 16, ..TrainConfig::default() }).unwrap();

    let report = run_confounding_ablation(&model, &g.layout, &g.test, 17).unwrap();
    let cases = make_confounding_cases(&g.test, 17).unwrap();
    for case in Case::ALL {
        let data = cases.get(case);
        let expected = if case == Case::Case1 { Label::SelfBody } else { Label::Environment };
        let mut correct = 0;
        for s in &data.samples {
            assert_eq!(s.label, expected);
            let img = Tensor::new(&[1, 3, 16, 16], s.image.clone()).unwrap();
            let pro = Tensor::new(&[1, 18], s.proprio.clone()).unwrap();
            correct += usize::from(model.predict(&img, &pro).unwrap()[0].label == expected);
        }
        let r = report.case(case);
        assert_eq!(r.n, data.len());
        assert_eq!(r.accuracy, correct as f64 / data.len() as f64, "{case:?}");
    }
    let accs: Vec<f64> = Case::ALL.iter().map(|&c| report.case(c).accuracy).collect();
    assert_eq!(report.case4_most_misclassified, accs[..3].iter().all(|&a| accs[3] <= a));
}

#[test]
fn environment_oracle_scores_perfectly_on_case_two() {
    let scenes = small_scenes();
    let cases = make_confounding_cases(&scenes[0], 1).unwrap();
    let m = ConfusionMatrix::from_pairs(cases.get(Case::Case2).samples.iter().map(|s| (s.label, Label::Environment)));
    assert_eq!(m.accuracy(), 1.0);
    let ids = |c: Case| cases.get(c).samples.iter().map(|s| s.sample_id).collect::<BTreeSet<_>>();
    let union: BTreeSet<u64> = ids(Case::Case1).union(&ids(Case::Case2)).copied().collect();
    assert_eq!(union, scenes[0].samples.iter().map(|s| s.sample_id).collect());
}

#[test]
fn summary_mean_is_mean_of_group_medians() {
    let scenes = small_scenes();
    let mut runs = Vec::new();
    for seed in [0u64, 1] {
        for layout in GroupLayout::all() {
            let g = assemble_group(layout.group, &scenes).unwrap();
            let model = LevelOneParams::init(LevelOneConfig { image_size: (16, 16), seed, ..LevelOneConfig::default() }).unwrap();
            let confusion = evaluate(&model, &g.test).unwrap();
            let ablation = run_confounding_ablation(&model, &layout, &g.test, seed).unwrap();
            let train_report = l1sa::train::TrainReport {
                config: TrainConfig::default(),
                train_samples: 0,
                val_samples: 0,
                steps: 0,
                epochs: vec![],
                best_epoch: 0,
                best_val_accuracy: 0.0,
                parameters_unchanged: true,
                checkpoint: None,
                wall_clock_seconds: None,
            };
            runs.push(GroupRun { layout, seed, model, train_report, confusion, ablation });
        }
    }
    let s = summarize(&runs).unwrap();
    assert_eq!(s.seeds, vec![0, 1]);
    let medians: Vec<f64> = s.groups.iter().map(|g| g.accuracy.median).collect();
    assert_eq!(s.mean_accuracy, medians.iter().sum::<f64>() / 4.0);
    for g in &s.groups {
        assert_eq!(g.accuracy.median, (g.accuracies[0] + g.accuracies[1]) / 2.0);
    }
}

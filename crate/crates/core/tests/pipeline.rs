//! Synthetic scenes, batch sampling, training and evaluation end to end.

use contextdesc::keypoints::Category;
use contextdesc::losses::CorrespondenceMask;
use contextdesc::matching::{density_sweep, eval_recall, nn_match, tune_ratio, EvalInstance, DEFAULT_THRESHOLD_PX};
use contextdesc::model::{Model, ModelConfig};
use contextdesc::numerics::{Forward, Mode};
use contextdesc::synthetic::{gen_scene, verify_scene, write_scene, Scene, SceneSpec, SCENE_FILES};
use contextdesc::trainer::{batch_objective, sample_batch, sample_batch_with, train, PreparedScene, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64) -> Scene {
    gen_scene(&SceneSpec { seed, ..SceneSpec::default() }).unwrap()
}

fn pool(n: u64) -> Vec<PreparedScene> {
    (0..n).map(|s| PreparedScene::new(&scene(s)).unwrap()).collect()
}

#[test]
fn generated_scenes_verify_cleanly() {
    for seed in 0..6 {
        let rep = verify_scene(&scene(seed));
        assert!(rep.is_ok(), "seed {seed}: {:?}", rep.violations);
        assert!(rep.mean_residual <= 0.5);
    }
}

#[test]
fn one_offset_correspondence_is_flagged_exactly_once() {
    let mut s = scene(0);
    let (_, j) = s
        .matches()
        .into_iter()
        .find(|&(_, j)| {
            let p = s.keypoints_b.points[j].pos;
            p.0 > 10.0 && p.0 < 240.0
        })
        .unwrap();
    s.keypoints_b.points[j].pos.0 += 5.0;
    let rep = verify_scene(&s);
    assert_eq!(rep.residual_violations(), 1, "{:?}", rep.violations);
}

#[test]
fn category_counts_follow_the_requested_fractions() {
    for spec in [
        SceneSpec::default(),
        SceneSpec { keypoints: 100, undiscovered: 0.25, unrepeatable: 0.05, seed: 3, ..SceneSpec::default() },
    ] {
        let s = gen_scene(&spec).unwrap();
        let rep = verify_scene(&s);
        let k = spec.keypoints as f64;
        let expect = [
            (Category::Undiscovered, k * spec.undiscovered),
            (Category::Unrepeatable, k * spec.unrepeatable),
            (Category::Matchable, k * (1.0 - spec.undiscovered - spec.unrepeatable)),
        ];
        for counts in [&rep.counts_a, &rep.counts_b] {
            for (c, e) in expect {
                let found = counts.get(&c).copied().unwrap_or(0) as f64;
                assert!((found - e).abs() <= 1.0, "{c}: {found} vs {e}");
            }
        }
    }
}

#[test]
fn noiseless_ambiguity_groups_defeat_raw_matching() {
    let spec = SceneSpec { sigma: 0.0, seed: 7, ..SceneSpec::default() };
    let s = gen_scene(&spec).unwrap();
    let dup = |i: usize| (0..s.desc_a.rows()).any(|k| k != i && s.desc_a.row(k) == s.desc_a.row(i));
    let members: Vec<(usize, usize)> = s.matches().into_iter().filter(|&(i, _)| dup(i)).collect();
    assert!(members.len() >= 16);
    let m = nn_match(&s.desc_a, &s.desc_b, None, false).unwrap();
    let correct = members.iter().filter(|&&(i, j)| m.matches[i].reference == j).count();
    let recall = correct as f64 / members.len() as f64;
    assert!(recall < 1.0 / spec.group_size as f64 + 0.1, "group recall {recall}");
}

#[test]
fn clean_scene_matches_perfectly() {
    let spec = SceneSpec { groups: 0, sigma: 0.0, undiscovered: 0.0, unrepeatable: 0.0, seed: 2, ..SceneSpec::default() };
    let s = gen_scene(&spec).unwrap();
    let m = nn_match(&s.desc_a, &s.desc_b, None, false).unwrap();
    let rep = eval_recall(&m, &s.keypoints_a, &s.keypoints_b, &s.h_ab, DEFAULT_THRESHOLD_PX).unwrap();
    assert_eq!((rep.recall, rep.precision), (Some(1.0), Some(1.0)));

    let inst = [EvalInstance { desc_a: &s.desc_a, desc_b: &s.desc_b, kp_a: &s.keypoints_a, kp_b: &s.keypoints_b, h: &s.h_ab }];
    assert_eq!(tune_ratio(&inst, 0.95, DEFAULT_THRESHOLD_PX).unwrap().ratio, 1.0);
    assert_eq!(tune_ratio(&inst, 0.0, DEFAULT_THRESHOLD_PX).unwrap().ratio, 1.0);

    let sweep = density_sweep(&s.keypoints_a, &s.keypoints_b, &s.h_ab, &[4, 256], 0, DEFAULT_THRESHOLD_PX, None, false, |sub| {
        Ok((s.desc_a.select_rows(&sub.rows_a), s.desc_b.select_rows(&sub.rows_b)))
    })
    .unwrap();
    assert_eq!(sweep[0].1.recall, Some(1.0));
    assert_eq!(sweep[1].1, rep);
}

#[test]
fn full_density_equals_plain_evaluation() {
    let s = scene(4);
    let plain = eval_recall(&nn_match(&s.desc_a, &s.desc_b, Some(0.9), true).unwrap(), &s.keypoints_a, &s.keypoints_b, &s.h_ab, 2.5).unwrap();
    let sweep = density_sweep(&s.keypoints_a, &s.keypoints_b, &s.h_ab, &[256], 9, 2.5, Some(0.9), true, |sub| {
        Ok((s.desc_a.select_rows(&sub.rows_a), s.desc_b.select_rows(&sub.rows_b)))
    })
    .unwrap();
    assert_eq!(sweep[0].1, plain);
}

#[test]
fn regenerated_scene_is_byte_identical() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_scene(d1.path(), &scene(0)).unwrap();
    write_scene(d2.path(), &scene(0)).unwrap();
    for f in SCENE_FILES {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn batches_replay_under_a_fixed_seed() {
    let p = pool(3);
    let cfg = TrainConfig::default();
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sample_batch(&p, &cfg, &mut rng).unwrap().into_iter().map(|b| (b.scene, b.rows_a, b.rows_b, b.mask)).collect::<Vec<_>>()
    };
    let (a, b) = (draw(), draw());
    assert_eq!(a, b);
    for (_, ra, rb, mask) in &a {
        assert_eq!((ra.len(), rb.len()), (cfg.keypoints_per_pair, cfg.keypoints_per_pair));
        assert!(mask.matchable().len() * 2 >= cfg.keypoints_per_pair);
    }
}

#[test]
fn all_matchable_batch_has_no_noisy_rows() {
    let p = pool(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = TrainConfig { keypoints_per_pair: 4, ..TrainConfig::default() };
    for b in sample_batch_with(&p, &cfg, &mut rng, Some(1.0)).unwrap() {
        assert_eq!(b.mask, CorrespondenceMask::all(4).unwrap());
        // each sampled pair is a ground-truth correspondence
        for (&i, &j) in b.rows_a.iter().zip(&b.rows_b) {
            assert!(p[b.scene].matches.contains(&(i, j)));
        }
    }
    let model = Model::init(ModelConfig::default(), 0).unwrap();
    let batch = sample_batch_with(&p, &cfg, &mut rng, Some(1.0)).unwrap();
    let mut fwd = Forward::new(&model.params, Mode::Train);
    let l = batch_objective(&model, &mut fwd, &p, &batch, &cfg, &mut rng).unwrap();
    assert!(l.quad > 0.0 && fwd.value(l.objective).is_finite());
}

#[test]
fn zero_steps_returns_the_initial_model() {
    let p = pool(2);
    let init = Model::init(ModelConfig::default(), 3).unwrap();
    let (trained, log) = train(&TrainConfig { max_steps: 0, ..TrainConfig::default() }, &p, &init).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(trained.to_bytes(), init.to_bytes());
}

#[test]
fn training_is_deterministic_and_leaves_inputs_untouched() {
    let p = pool(3);
    let before: Vec<_> = p.iter().map(|s| (s.view_a.clone(), s.view_b.clone())).collect();
    let init = Model::init(ModelConfig::default(), 0).unwrap();
    let cfg = TrainConfig { max_steps: 15, ..TrainConfig::default() };
    let (m1, l1) = train(&cfg, &p, &init).unwrap();
    let (m2, l2) = train(&cfg, &p, &init).unwrap();
    assert_eq!(l1.to_csv(), l2.to_csv());
    assert_eq!(m1.to_bytes(), m2.to_bytes());
    assert_ne!(m1.to_bytes(), init.to_bytes());
    let after: Vec<_> = p.iter().map(|s| (s.view_a.clone(), s.view_b.clone())).collect();
    assert_eq!(before, after);
}

#[test]
fn two_hundred_steps_reduce_the_loss() {
    let p = pool(8);
    let init = Model::init(ModelConfig::default(), 0).unwrap();
    let cfg = TrainConfig { max_steps: 200, ..TrainConfig::default() };
    let (_, log) = train(&cfg, &p, &init).unwrap();
    let t = log.totals();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&t[150..]) < mean(&t[..50]), "{} vs {}", mean(&t[150..]), mean(&t[..50]));
    assert!(t[199] < t[0]);
    let steps: Vec<usize> = log.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, (0..200).collect::<Vec<_>>());
}

#[test]
fn frozen_temperature_stays_at_its_initial_value() {
    let p = pool(2);
    let init = Model::init(ModelConfig::default(), 0).unwrap();
    let cfg = TrainConfig { max_steps: 10, train_temperature: false, ..TrainConfig::default() };
    let (trained, log) = train(&cfg, &p, &init).unwrap();
    assert_eq!(trained.temperature().value(), 1.0);
    assert!(log.alphas().iter().all(|&a| a == 1.0));
}

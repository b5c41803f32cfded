//! Subcommands driven through the library entry points and the built binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use contextdesc::io::{read_matrix, write_matrix};
use contextdesc::losses::{aggregate, Streams};
use contextdesc::model::{Model, ModelConfig};
use contextdesc::pipeline::{matchability_scores, ViewInput};
use contextdesc::geometric_context::encode_geometric;
use contextdesc::numerics::{Matrix, Mode};
use contextdesc::synthetic::{gen_scene, read_scene, verify_scene, write_scene, SceneSpec, SCENE_FILES};
use contextdesc_cli::commands::*;
use contextdesc_cli::config::{RunConfig, DEFAULT_SCENE_COUNT};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contextdesc"))
}

fn gen(out: &Path, seed: Option<u64>, count: usize) -> Vec<u8> {
    let mut log = Vec::new();
    assert!(cmd_gen(&GenArgs { seed, count: Some(count), out: out.to_path_buf(), ..GenArgs::default() }, &mut log).unwrap());
    log
}

fn train(scenes: &Path, model: &Path, steps: usize) {
    let args = TrainArgs {
        scenes: Some(scenes.to_path_buf()),
        out: Some(model.to_path_buf()),
        max_steps: Some(steps),
        ..TrainArgs::default()
    };
    assert!(cmd_train(&args, &mut Vec::new()).unwrap());
}

#[test]
fn default_gen_writes_sixteen_verified_scenes() {
    let d = tempfile::tempdir().unwrap();
    let out = bin().args(["gen", "--out"]).arg(d.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs: Vec<_> = fs::read_dir(d.path()).unwrap().collect();
    assert_eq!(dirs.len(), DEFAULT_SCENE_COUNT);
    for i in 0..DEFAULT_SCENE_COUNT {
        let scene = read_scene(&d.path().join(scene_dir_name(i))).unwrap();
        assert_eq!(scene.spec.seed, i as u64);
        assert!(verify_scene(&scene).is_ok());
    }
    let verify = bin().args(["verify", "--scenes"]).arg(d.path()).output().unwrap();
    assert!(verify.status.success());
}

#[test]
fn every_command_prints_its_effective_config_first() {
    let d = tempfile::tempdir().unwrap();
    let log = String::from_utf8(gen(d.path(), None, 1)).unwrap();
    assert!(log.starts_with("# effective config\n"));
    for key in RunConfig::default().to_text().lines() {
        let name = key.split('=').next().unwrap();
        assert!(log.lines().any(|l| l.starts_with(&format!("{name}="))), "{name}");
    }
    let mut out = Vec::new();
    cmd_verify(&VerifyArgs { scenes: d.path().to_path_buf() }, &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with("# effective config\n"));
}

#[test]
fn seed_override_changes_bytes_not_schema() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path(), None, 1);
    gen(b.path(), Some(77), 1);
    let (sa, sb) = (a.path().join(scene_dir_name(0)), b.path().join(scene_dir_name(0)));
    let mut differing = 0;
    for f in SCENE_FILES {
        let (x, y) = (fs::read(sa.join(f)).unwrap(), fs::read(sb.join(f)).unwrap());
        differing += usize::from(x != y);
    }
    assert!(differing > 0);
    let (x, y) = (read_scene(&sa).unwrap(), read_scene(&sb).unwrap());
    assert_eq!((x.desc_a.shape(), x.grid_a.cells()), (y.desc_a.shape(), y.grid_a.cells()));
    assert_eq!(y.spec.seed, 77);
}

#[test]
fn gen_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path(), Some(5), 2);
    gen(b.path(), Some(5), 2);
    for i in 0..2 {
        for f in SCENE_FILES {
            let p = Path::new(&scene_dir_name(i)).join(f);
            assert_eq!(fs::read(a.path().join(&p)).unwrap(), fs::read(b.path().join(&p)).unwrap(), "{}", p.display());
        }
    }
}

#[test]
fn malformed_key_exits_nonzero_naming_it() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    for bad in ["train.learning_rat=0.1", "scene.keypoints=many", "frobnicate=1"] {
        fs::write(&cfg, format!("# comment\n{bad}\n")).unwrap();
        let out = bin().args(["gen", "--config"]).arg(&cfg).arg("--out").arg(d.path().join("s")).output().unwrap();
        assert!(!out.status.success());
        let key = bad.split('=').next().unwrap();
        assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("`{key}`")), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn zero_steps_writes_the_serialized_init() {
    let d = tempfile::tempdir().unwrap();
    gen(&d.path().join("s"), None, 2);
    let model = d.path().join("m.ctxp");
    train(&d.path().join("s"), &model, 0);
    let init = Model::init(ModelConfig::default(), RunConfig::default().train.seed).unwrap();
    assert_eq!(fs::read(&model).unwrap(), init.to_bytes());
    let (log, meta) = train_outputs(&model);
    assert_eq!(fs::read_to_string(log).unwrap().lines().count(), 1);
    assert!(fs::read_to_string(meta).unwrap().contains(NPAIR_LOG_NOTE));
}

#[test]
fn training_reruns_are_byte_identical_with_a_monotone_log() {
    let d = tempfile::tempdir().unwrap();
    gen(&d.path().join("s"), None, 3);
    let (m1, m2) = (d.path().join("a.ctxp"), d.path().join("b.ctxp"));
    train(&d.path().join("s"), &m1, 12);
    train(&d.path().join("s"), &m2, 12);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let (l1, l2) = (fs::read(train_outputs(&m1).0).unwrap(), fs::read(train_outputs(&m2).0).unwrap());
    assert_eq!(l1, l2);
    let text = String::from_utf8(l1).unwrap();
    let steps: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (0..12).collect::<Vec<_>>());
}

#[test]
fn train_rejects_scenes_of_another_width() {
    let d = tempfile::tempdir().unwrap();
    let spec = SceneSpec { desc_dim: 32, ..SceneSpec::default() };
    write_scene(&d.path().join("s").join(scene_dir_name(0)), &gen_scene(&spec).unwrap()).unwrap();
    let args = TrainArgs {
        scenes: Some(d.path().join("s")),
        out: Some(d.path().join("m.ctxp")),
        max_steps: Some(1),
        ..TrainArgs::default()
    };
    let err = cmd_train(&args, &mut Vec::new()).unwrap_err();
    assert!(format!("{err:#}").contains("descriptor width 32"));
}

fn scene_and_model(d: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    gen(&d.join("s"), None, 1);
    let model = d.join("m.ctxp");
    Model::init(ModelConfig::default(), 4).unwrap().save(&model).unwrap();
    (d.join("s").join(scene_dir_name(0)), model)
}

#[test]
fn raw_augmentation_is_the_identity() {
    let d = tempfile::tempdir().unwrap();
    let (scene, model) = scene_and_model(d.path());
    let args = AugmentArgs { model, scene: scene.clone(), streams: Streams::RAW, out: d.path().join("aug") };
    assert!(cmd_augment(&args, &mut Vec::new()).unwrap());
    for f in ["desc_a.ctxm", "desc_b.ctxm"] {
        assert_eq!(fs::read(scene.join(f)).unwrap(), fs::read(d.path().join("aug").join(f)).unwrap());
    }
}

#[test]
fn geo_augmentation_equals_manual_aggregate() {
    let d = tempfile::tempdir().unwrap();
    let (scene_dir, model_path) = scene_and_model(d.path());
    let args = AugmentArgs { model: model_path.clone(), scene: scene_dir.clone(), streams: Streams::GEO, out: d.path().join("aug") };
    assert!(cmd_augment(&args, &mut Vec::new()).unwrap());

    let model = Model::load(&model_path).unwrap();
    let scene = read_scene(&scene_dir).unwrap();
    for (kp, desc, grid, f) in [
        (&scene.keypoints_a, &scene.desc_a, &scene.grid_a, "desc_a.ctxm"),
        (&scene.keypoints_b, &scene.desc_b, &scene.grid_b, "desc_b.ctxm"),
    ] {
        let view = ViewInput::from_view(kp, desc, grid).unwrap();
        let m = Matrix::from_vec(kp.len(), 1, matchability_scores(&model, desc).unwrap()).unwrap();
        let geo = encode_geometric(&model.geo, &model.params, &view.coords, &m, Mode::Infer).unwrap();
        let manual = d.path().join(format!("manual_{f}"));
        write_matrix(&manual, &aggregate(desc, Some(&geo), None).unwrap()).unwrap();
        assert_eq!(fs::read(&manual).unwrap(), fs::read(d.path().join("aug").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn full_augmentation_runs_on_a_single_keypoint_scene() {
    let d = tempfile::tempdir().unwrap();
    let spec = SceneSpec { keypoints: 1, groups: 0, undiscovered: 0.0, unrepeatable: 0.0, ..SceneSpec::default() };
    let dir = d.path().join("one");
    write_scene(&dir, &gen_scene(&spec).unwrap()).unwrap();
    let model = d.path().join("m.ctxp");
    Model::init(ModelConfig::default(), 0).unwrap().save(&model).unwrap();
    let args = AugmentArgs { model, scene: dir, streams: Streams::BOTH, out: d.path().join("aug") };
    assert!(cmd_augment(&args, &mut Vec::new()).unwrap());
    let a = read_matrix(&d.path().join("aug/desc_a.ctxm")).unwrap();
    assert_eq!(a.shape(), (1, 128));
    let n: f64 = a.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() < 1e-6);
}

#[test]
fn densities_give_one_row_each() {
    let d = tempfile::tempdir().unwrap();
    gen(&d.path().join("s"), None, 2);
    let csv = d.path().join("eval.csv");
    let out = bin()
        .args(["eval", "--scene"])
        .arg(d.path().join("s"))
        .args(["--densities", "32,64,256", "--ratio", "0.9", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], contextdesc::matching::EvalReport::CSV_HEADER);
    let ks: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(ks, ["32", "64", "256", "32", "64", "256"]);
    assert!(!text.contains('\r'));
}

#[test]
fn clean_scene_recalls_everything() {
    let d = tempfile::tempdir().unwrap();
    let spec = SceneSpec { groups: 0, sigma: 0.0, undiscovered: 0.0, unrepeatable: 0.0, seed: 2, ..SceneSpec::default() };
    write_scene(d.path(), &gen_scene(&spec).unwrap()).unwrap();
    let rows = evaluate(&EvalArgs { scene: d.path().to_path_buf(), ..EvalArgs::default() }).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].report.recall, Some(1.0));
}

#[test]
fn descriptor_files_replace_scene_descriptors() {
    let d = tempfile::tempdir().unwrap();
    let (scene, model) = scene_and_model(d.path());
    let aug = d.path().join("aug");
    cmd_augment(&AugmentArgs { model: model.clone(), scene: scene.clone(), streams: Streams::BOTH, out: aug.clone() }, &mut Vec::new()).unwrap();
    let from_files = evaluate(&EvalArgs { scene: scene.clone(), descriptors: Some(aug), ..EvalArgs::default() }).unwrap();
    let on_the_fly = evaluate(&EvalArgs { scene, model: Some(model), streams: Streams::BOTH, ..EvalArgs::default() }).unwrap();
    assert_eq!(from_files[0].report, on_the_fly[0].report);
}

#[test]
fn gradcheck_passes_and_detects_a_corrupted_rule() {
    let ok = bin().args(["gradcheck", "--seeds", "2"]).output().unwrap();
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.contains("step,median_rel_err"));
    assert!(!text.contains("FAIL"));
    let bad = bin().args(["gradcheck", "--seeds", "2", "--fault", "--no-sweep"]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8(bad.stdout).unwrap().contains("FAIL"));
}

#[test]
fn verify_flags_a_tampered_scene() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), None, 1);
    let dir = d.path().join(scene_dir_name(0));
    let mut scene = read_scene(&dir).unwrap();
    let (_, j) = scene.matches()[0];
    scene.keypoints_b.points[j].pos.0 += 5.0;
    write_scene(&dir, &scene).unwrap();
    let mut out = Vec::new();
    assert!(!cmd_verify(&VerifyArgs { scenes: d.path().to_path_buf() }, &mut out).unwrap());
}

//! One function per subcommand; each writes its report to `out` and returns
//! whether every checked invariant held.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use contextdesc::diagnostics::{run_gradcheck, step_sweep, GradcheckOptions};
use contextdesc::io::{read_matrix, write_matrix};
use contextdesc::losses::Streams;
use contextdesc::matching::{density_sweep, eval_recall, nn_match, EvalReport};
use contextdesc::model::Model;
use contextdesc::numerics::{Fault, Matrix};
use contextdesc::pipeline::{augment_descriptors, ViewInput};
use contextdesc::synthetic::{gen_scene, list_scenes, read_scene, verify_scene, write_scene, Scene};
use contextdesc::trainer::{train_with, PreparedScene};

use crate::config::RunConfig;

/// Logged N-pair values are per matchable keypoint.
pub const NPAIR_LOG_NOTE: &str = "npair column = N-pair loss divided by the number of matchable keypoints, averaged over the batch pairs";

fn print_config(out: &mut dyn Write, entries: &[(&str, String)]) -> Result<()> {
    writeln!(out, "# effective config")?;
    for (k, v) in entries {
        writeln!(out, "{k}={v}")?;
    }
    writeln!(out, "# end config")?;
    Ok(())
}

fn print_run_config(out: &mut dyn Write, cfg: &RunConfig) -> Result<()> {
    writeln!(out, "# effective config")?;
    write!(out, "{}", cfg.to_text())?;
    writeln!(out, "# end config")?;
    Ok(())
}

pub fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:03}")
}

/// A single scene directory, or every scene directory under a root.
pub fn resolve_scenes(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join("spec.txt").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dirs = list_scenes(path).with_context(|| format!("listing scenes under {}", path.display()))?;
    if dirs.is_empty() {
        bail!("no scene directories under {}", path.display());
    }
    Ok(dirs)
}

fn scene_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[derive(Clone, Debug, Default)]
pub struct GenArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub out: PathBuf,
}

/// Writes `count` scenes; scene `i` uses seed `scene.seed + i`.
pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<bool> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.scene.seed = s;
    }
    if let Some(c) = args.count {
        cfg.count = c;
    }
    cfg.validate()?;
    print_run_config(out, &cfg)?;
    let mut ok = true;
    for i in 0..cfg.count {
        let mut spec = cfg.scene.clone();
        spec.seed = cfg.scene.seed.wrapping_add(i as u64);
        let scene = gen_scene(&spec)?;
        let rep = verify_scene(&scene);
        let dir = args.out.join(scene_dir_name(i));
        write_scene(&dir, &scene).with_context(|| format!("writing {}", dir.display()))?;
        writeln!(out, "{} seed={} violations={} mean_residual_px={:.4}", dir.display(), spec.seed, rep.violations.len(), rep.mean_residual)?;
        for v in &rep.violations {
            writeln!(out, "  violation: {v:?}")?;
        }
        ok &= rep.is_ok();
    }
    Ok(ok)
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scenes: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_steps: Option<usize>,
}

/// Companion files written next to a model: the training log and the run metadata.
pub fn train_outputs(model: &Path) -> (PathBuf, PathBuf) {
    (model.with_extension("log.csv"), model.with_extension("meta.txt"))
}

pub fn load_pool(dirs: &[PathBuf]) -> Result<Vec<PreparedScene>> {
    dirs.iter()
        .map(|d| {
            let s = read_scene(d).with_context(|| format!("reading scene {}", d.display()))?;
            Ok(PreparedScene::new(&s)?)
        })
        .collect()
}

/// Trains from a seeded init on every scene under the scenes directory.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<bool> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = args.max_steps {
        cfg.train.max_steps = n;
    }
    if let Some(p) = &args.scenes {
        cfg.scenes_dir = Some(p.clone());
    }
    if let Some(p) = &args.out {
        cfg.model_path = Some(p.clone());
    }
    cfg.validate()?;
    let (Some(scenes), Some(model_path)) = (cfg.scenes_dir.clone(), cfg.model_path.clone()) else {
        bail!("train needs a scenes directory (--scenes or `scenes_dir`) and an output model (--out or `model_path`)");
    };
    print_run_config(out, &cfg)?;
    let dirs = resolve_scenes(&scenes)?;
    let pool = load_pool(&dirs)?;
    for (d, p) in dirs.iter().zip(&pool) {
        let (dd, rd) = (p.view_a.descriptors.cols(), p.view_a.regional.cols());
        if dd != cfg.model.desc_dim || rd != cfg.model.regional_depth {
            bail!(
                "scene {} has descriptor width {dd} and regional depth {rd}; model expects {} and {}",
                d.display(),
                cfg.model.desc_dim,
                cfg.model.regional_depth
            );
        }
    }
    let init = Model::init(cfg.model.clone(), cfg.train.seed)?;
    writeln!(out, "training on {} scenes for {} steps", pool.len(), cfg.train.max_steps)?;
    let every = (cfg.train.max_steps / 10).max(1);
    let (model, log) = train_with(&cfg.train, &pool, &init, |row, _| {
        if row.step % every == 0 || row.step + 1 == cfg.train.max_steps {
            let _ = writeln!(
                out,
                "step={} lr={:.5} total={:.4} npair={:.4} quad={:.4} alpha={:.4}",
                row.step, row.lr, row.total, row.npair, row.quad, row.alpha
            );
        }
    })?;
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    model.save(&model_path)?;
    let (log_path, meta_path) = train_outputs(&model_path);
    fs::write(&log_path, log.to_csv())?;
    let meta = format!(
        "{}scenes={}\nfinal_alpha={}\nnote={NPAIR_LOG_NOTE}\n",
        cfg.to_text(),
        dirs.iter().map(|d| scene_name(d)).collect::<Vec<_>>().join(";"),
        model.temperature().value()
    );
    fs::write(&meta_path, meta)?;
    writeln!(out, "model={}\nlog={}\nmeta={}", model_path.display(), log_path.display(), meta_path.display())?;
    writeln!(out, "final_alpha={}", model.temperature().value())?;
    Ok(true)
}

#[derive(Clone, Debug)]
pub struct AugmentArgs {
    pub model: PathBuf,
    pub scene: PathBuf,
    pub streams: Streams,
    pub out: PathBuf,
}

/// Both views' descriptors after augmentation with `streams`; `raw` returns them unchanged.
pub fn augment_scene(model: &Model, scene: &Scene, streams: Streams) -> Result<(Matrix, Matrix)> {
    if streams == Streams::RAW {
        return Ok((scene.desc_a.clone(), scene.desc_b.clone()));
    }
    let va = ViewInput::from_view(&scene.keypoints_a, &scene.desc_a, &scene.grid_a)?;
    let vb = ViewInput::from_view(&scene.keypoints_b, &scene.desc_b, &scene.grid_b)?;
    Ok((augment_descriptors(model, &va, streams)?, augment_descriptors(model, &vb, streams)?))
}

pub fn cmd_augment(args: &AugmentArgs, out: &mut dyn Write) -> Result<bool> {
    print_config(
        out,
        &[
            ("model", args.model.display().to_string()),
            ("scene", args.scene.display().to_string()),
            ("streams", args.streams.to_string()),
            ("out", args.out.display().to_string()),
        ],
    )?;
    let model = Model::load(&args.model)?;
    let scene = read_scene(&args.scene).with_context(|| format!("reading scene {}", args.scene.display()))?;
    let (a, b) = augment_scene(&model, &scene, args.streams)?;
    fs::create_dir_all(&args.out)?;
    write_matrix(&args.out.join("desc_a.ctxm"), &a)?;
    write_matrix(&args.out.join("desc_b.ctxm"), &b)?;
    writeln!(out, "wrote {} and {} rows to {}", a.rows(), b.rows(), args.out.display())?;
    Ok(true)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    /// A scene directory or a root of scene directories.
    pub scene: PathBuf,
    /// Directory with `desc_a.ctxm` / `desc_b.ctxm` replacing the scene's own descriptors.
    pub descriptors: Option<PathBuf>,
    /// Augments on the fly with this model.
    pub model: Option<PathBuf>,
    pub streams: Streams,
    pub ratio: Option<f64>,
    pub mutual: bool,
    pub densities: Vec<usize>,
    pub threshold_px: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EvalArgs {
    fn default() -> Self {
        Self {
            scene: PathBuf::new(),
            descriptors: None,
            model: None,
            streams: Streams::RAW,
            ratio: None,
            mutual: false,
            densities: Vec::new(),
            threshold_px: contextdesc::matching::DEFAULT_THRESHOLD_PX,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub scene: String,
    pub method: String,
    pub k: usize,
    pub report: EvalReport,
}

/// One row per scene, or per scene and density when densities are given.
pub fn evaluate(args: &EvalArgs) -> Result<Vec<EvalRow>> {
    if !(args.threshold_px > 0.0) {
        bail!("--threshold-px must be positive");
    }
    if args.descriptors.is_some() && args.model.is_some() {
        bail!("give either descriptor files or a model, not both");
    }
    let model = args.model.as_deref().map(Model::load).transpose()?;
    let streams = if model.is_some() { args.streams } else { Streams::RAW };
    let method = match (&args.descriptors, &model) {
        (Some(_), _) => "files".to_string(),
        _ => streams.name().to_string(),
    };
    let mut rows = Vec::new();
    for dir in resolve_scenes(&args.scene)? {
        let mut scene = read_scene(&dir).with_context(|| format!("reading scene {}", dir.display()))?;
        if let Some(d) = &args.descriptors {
            let sub = if args.scene == dir { d.clone() } else { d.join(scene_name(&dir)) };
            scene.desc_a = read_matrix(&sub.join("desc_a.ctxm"))?;
            scene.desc_b = read_matrix(&sub.join("desc_b.ctxm"))?;
        }
        let name = scene_name(&dir);
        let describe = |rows_a: &[usize], rows_b: &[usize]| -> contextdesc::Result<(Matrix, Matrix)> {
            let (da, db) = (scene.desc_a.select_rows(rows_a), scene.desc_b.select_rows(rows_b));
            match &model {
                Some(m) if streams != Streams::RAW => {
                    let va = ViewInput::from_view(&scene.keypoints_a, &scene.desc_a, &scene.grid_a)?.select(rows_a);
                    let vb = ViewInput::from_view(&scene.keypoints_b, &scene.desc_b, &scene.grid_b)?.select(rows_b);
                    Ok((augment_descriptors(m, &va, streams)?, augment_descriptors(m, &vb, streams)?))
                }
                _ => Ok((da, db)),
            }
        };
        if args.densities.is_empty() {
            let all_a: Vec<usize> = (0..scene.keypoints_a.len()).collect();
            let all_b: Vec<usize> = (0..scene.keypoints_b.len()).collect();
            let (da, db) = describe(&all_a, &all_b)?;
            let m = nn_match(&da, &db, args.ratio, args.mutual)?;
            let report = eval_recall(&m, &scene.keypoints_a, &scene.keypoints_b, &scene.h_ab, args.threshold_px)?;
            rows.push(EvalRow { scene: name, method: method.clone(), k: scene.keypoints_a.len(), report });
        } else {
            let sweep = density_sweep(
                &scene.keypoints_a,
                &scene.keypoints_b,
                &scene.h_ab,
                &args.densities,
                args.seed,
                args.threshold_px,
                args.ratio,
                args.mutual,
                |sub| describe(&sub.rows_a, &sub.rows_b),
            )?;
            for (k, report) in sweep {
                rows.push(EvalRow { scene: name.clone(), method: method.clone(), k, report });
            }
        }
    }
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow], ratio: Option<f64>) -> String {
    let mut s = format!("{}\n", EvalReport::CSV_HEADER);
    for r in rows {
        s.push_str(&r.report.csv_row(&r.scene, &r.method, r.k, ratio));
        s.push('\n');
    }
    s
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<bool> {
    let opt = |v: &Option<PathBuf>| v.as_ref().map_or(String::new(), |p| p.display().to_string());
    print_config(
        out,
        &[
            ("scene", args.scene.display().to_string()),
            ("descriptors", opt(&args.descriptors)),
            ("model", opt(&args.model)),
            ("streams", args.streams.to_string()),
            ("ratio", args.ratio.map_or("none".into(), |r| r.to_string())),
            ("mutual", args.mutual.to_string()),
            ("densities", args.densities.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
            ("threshold_px", args.threshold_px.to_string()),
            ("seed", args.seed.to_string()),
            ("out", opt(&args.out)),
        ],
    )?;
    let rows = evaluate(args)?;
    if let [single] = rows.as_slice() {
        write!(out, "{}", single.report.to_kv())?;
    }
    let csv = eval_csv(&rows, args.ratio);
    write!(out, "{csv}")?;
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.report.recall).collect();
    if !defined.is_empty() {
        writeln!(out, "mean_recall={:.6}", defined.iter().sum::<f64>() / defined.len() as f64)?;
    }
    if rows.iter().any(|r| r.report.recall.is_none()) {
        writeln!(out, "warning: some rows have no correspondences; their recall is undefined")?;
    }
    if let Some(p) = &args.out {
        fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(true)
}

#[derive(Clone, Debug)]
pub struct GradcheckArgs {
    pub seed: u64,
    pub seeds: u64,
    /// Corrupts the tanh derivative to show that a wrong rule is caught.
    pub fault: bool,
    pub sweep: bool,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        Self { seed: 0, seeds: 20, fault: false, sweep: true }
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    print_config(
        out,
        &[
            ("seed", args.seed.to_string()),
            ("seeds", args.seeds.to_string()),
            ("fault", args.fault.to_string()),
            ("sweep", args.sweep.to_string()),
            ("step", contextdesc::numerics::gradcheck::DEFAULT_STEP.to_string()),
            ("tolerance", contextdesc::numerics::gradcheck::REL_TOL.to_string()),
        ],
    )?;
    let seeds = args.seed..args.seed + args.seeds;
    let opts = GradcheckOptions { fault: args.fault.then_some(Fault::TanhDerivative), ..Default::default() };
    let results = run_gradcheck(seeds.clone(), &opts)?;
    writeln!(out, "case,max_rel_err,median_rel_err,checked,skipped,result")?;
    for r in &results {
        writeln!(
            out,
            "{},{:.3e},{:.3e},{},{},{}",
            r.case,
            r.max_rel_err(),
            r.median_rel_err(),
            r.checked(),
            r.skipped,
            if r.passed() { "PASS" } else { "FAIL" }
        )?;
    }
    if args.sweep {
        writeln!(out, "step,median_rel_err")?;
        for (h, e) in step_sweep(seeds)? {
            writeln!(out, "{h:e},{e:.3e}")?;
        }
    }
    Ok(results.iter().all(|r| r.passed()))
}

#[derive(Clone, Debug)]
pub struct VerifyArgs {
    pub scenes: PathBuf,
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<bool> {
    print_config(out, &[("scenes", args.scenes.display().to_string())])?;
    let mut ok = true;
    for dir in resolve_scenes(&args.scenes)? {
        let scene = read_scene(&dir).with_context(|| format!("reading scene {}", dir.display()))?;
        let rep = verify_scene(&scene);
        let count = |m: &std::collections::BTreeMap<_, usize>| {
            m.iter().map(|(c, n)| format!("{c}:{n}")).collect::<Vec<_>>().join(" ")
        };
        writeln!(
            out,
            "{} a=[{}] b=[{}] mean_residual_px={:.4} violations={}",
            scene_name(&dir),
            count(&rep.counts_a),
            count(&rep.counts_b),
            rep.mean_residual,
            rep.violations.len()
        )?;
        for v in &rep.violations {
            writeln!(out, "  violation: {v:?}")?;
        }
        ok &= rep.is_ok();
    }
    Ok(ok)
}

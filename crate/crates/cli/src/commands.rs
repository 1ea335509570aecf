use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use l1sa::config::RunConfig;
use l1sa::experiment::{run_confounding_ablation, train_group, AblationReport};
use l1sa::interpret::{arm_enrichment, compare_group_models, joint_histogram_render, saliency, weight_mutual_information, HistogramSidecar};
use l1sa::json::to_canonical_pretty;
use l1sa::pnm::chw_to_ppm;
use l1sa::synth::dataset::{sha256_hex, MANIFEST_FILE};
use l1sa::synth::{generate_scene, read_dataset, write_dataset, Case, Dataset, GroupLayout, SceneKind};
use l1sa::train::{evaluate, ConfusionMatrix};
use l1sa::{LayerId, LevelOneParams};

use crate::{Command, Common};

/// A command-line input that fails validation.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// `report` found some but not all expected inputs.
#[derive(Debug)]
pub struct Partial(pub Vec<String>);

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "partial summary, missing: {}", self.0.join(", "))
    }
}

impl std::error::Error for Partial {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Invalid>().is_some() || e.downcast_ref::<Partial>().is_some() {
        return 1;
    }
    match e.downcast_ref::<l1sa::Error>() {
        Some(err) if err.is_validation() => 1,
        _ => 2,
    }
}

struct Ctx {
    config: RunConfig,
    data_dir: PathBuf,
    ckpt_dir: PathBuf,
    report_dir: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Ctx> {
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        config.deterministic |= common.deterministic;
        config.train.deterministic = config.deterministic;
        config.validate()?;
        let out = &common.out;
        let data_dir = common.data.clone().or_else(|| config.paths.dataset_dir.clone()).unwrap_or_else(|| out.join("data"));
        let ckpt_dir = config.paths.checkpoint_dir.clone().unwrap_or_else(|| out.clone());
        let report_dir = config.paths.report_dir.clone().unwrap_or_else(|| out.clone());
        Ok(Ctx { config, data_dir, ckpt_dir, report_dir })
    }

    fn log(&self, msg: &str) {
        if self.config.verbosity > 0 {
            eprintln!("{msg}");
        }
    }

    fn scene(&self, kind: SceneKind) -> Result<Dataset> {
        let dir = self.data_dir.join(kind.name());
        let ds = read_dataset(&dir).with_context(|| format!("reading dataset {}", dir.display()))?;
        if ds.is_empty() {
            return Err(l1sa::Error::Size(format!("dataset {} is empty", dir.display())).into());
        }
        Ok(ds)
    }

    fn manifest_sha(&self, kind: SceneKind) -> Result<String> {
        Ok(sha256_hex(&fs::read(self.data_dir.join(kind.name()).join(MANIFEST_FILE))?))
    }

    fn checkpoint_path(&self, layout: &GroupLayout, given: &Option<PathBuf>) -> PathBuf {
        given.clone().unwrap_or_else(|| self.ckpt_dir.join(format!("{}.ckpt", layout.name())))
    }

    fn load_model(&self, path: &Path, data: &Dataset) -> Result<LevelOneParams> {
        let model = LevelOneParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        if model.config.image_size != data.image_size || model.config.proprio_input_dim != data.proprio_dim {
            return Err(l1sa::Error::Dimension(format!(
                "checkpoint expects {:?} images and {} proprio values; dataset has {:?} and {}",
                model.config.image_size, model.config.proprio_input_dim, data.image_size, data.proprio_dim
            ))
            .into());
        }
        Ok(model)
    }

    fn write_report<T: Serialize>(&self, name: &str, command: &str, result: &T) -> Result<PathBuf> {
        fs::create_dir_all(&self.report_dir)?;
        let value = json!({ "command": command, "config": &self.config, "result": result });
        let path = self.report_dir.join(name);
        fs::write(&path, to_canonical_pretty(&value)?)?;
        Ok(path)
    }

    fn write_file(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        fs::create_dir_all(&self.report_dir)?;
        let path = self.report_dir.join(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

fn layout(group: u8) -> Result<GroupLayout> {
    GroupLayout::new(group).map_err(|_| Invalid(format!("--group must be 1..4, got {group}")).into())
}

pub fn run(common: &Common, command: &Command) -> Result<()> {
    match command {
        Command::Report { run_dir } => {
            let mut ctx = Ctx::new(common)?;
            if let Some(dir) = run_dir {
                ctx.report_dir = dir.clone();
            }
            let dir = ctx.report_dir.clone();
            cmd_report(&ctx, &dir)
        }
        Command::Gen { group, samples_per_scene } => {
            let mut ctx = Ctx::new(common)?;
            if let Some(n) = samples_per_scene {
                ctx.config.samples_per_scene = *n;
            }
            cmd_gen(&ctx, group)
        }
        Command::Train { group, epochs, batch, lr } => {
            let mut ctx = Ctx::new(common)?;
            let t = &mut ctx.config.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.batch_size = batch.unwrap_or(t.batch_size);
            t.learning_rate = lr.unwrap_or(t.learning_rate);
            ctx.config.validate()?;
            cmd_train(&ctx, layout(*group)?)
        }
        Command::Eval { group, checkpoint } => cmd_eval(&Ctx::new(common)?, layout(*group)?, checkpoint),
        Command::Ablate { group, checkpoint } => cmd_ablate(&Ctx::new(common)?, layout(*group)?, checkpoint),
        Command::Saliency { group, checkpoint, count } => {
            let mut ctx = Ctx::new(common)?;
            if let Some(c) = count {
                ctx.config.interpret.saliency_samples = *c;
            }
            cmd_saliency(&ctx, layout(*group)?, checkpoint)
        }
        Command::Mi { checkpoints, bins, layer } => {
            let mut ctx = Ctx::new(common)?;
            if let Some(b) = bins {
                ctx.config.interpret.bins = *b;
            }
            if let Some(l) = layer {
                ctx.config.interpret.layer = LayerId::parse(l).ok_or_else(|| Invalid(format!("unknown layer {l:?}")))?;
            }
            ctx.config.validate()?;
            cmd_mi(&ctx, checkpoints)
        }
    }
}

fn cmd_gen(ctx: &Ctx, group: &str) -> Result<()> {
    let layouts: Vec<GroupLayout> = match group {
        "all" => GroupLayout::all().to_vec(),
        g => {
            let id: u8 = g.parse().map_err(|_| Invalid(format!("--group must be 1..4 or all, got {g:?}")))?;
            vec![layout(id)?]
        }
    };
    let cfg = &ctx.config;
    let mut hashes = serde_json::Map::new();
    for spec in cfg.scene_specs() {
        ctx.log(&format!("generating {} ({} samples)", spec.scene_kind.name(), cfg.samples_per_scene));
        let ds = generate_scene(&spec, &cfg.robot, cfg.samples_per_scene)?;
        let hash = write_dataset(&ds, &ctx.data_dir.join(spec.scene_kind.name()))?;
        println!("{} {}", spec.scene_kind.name(), hash);
        hashes.insert(spec.scene_kind.name().to_string(), Value::String(hash));
    }
    ctx.write_report("gen.json", "gen", &json!({ "groups": layouts, "manifest_sha256": hashes }))?;
    Ok(())
}

fn cmd_train(ctx: &Ctx, layout: GroupLayout) -> Result<()> {
    let parts = layout.train.iter().map(|&k| ctx.scene(k)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Dataset> = parts.iter().collect();
    let pool = Dataset::concat(&refs)?;
    let mut model_cfg = ctx.config.model.clone();
    model_cfg.image_size = pool.image_size;
    model_cfg.proprio_input_dim = pool.proprio_dim;
    ctx.log(&format!("training {} on {} samples", layout.name(), pool.len()));
    let (model, mut report) = train_group(&pool, &layout, &model_cfg, &ctx.config.train, ctx.config.seed)?;
    fs::create_dir_all(&ctx.ckpt_dir)?;
    let ckpt = ctx.ckpt_dir.join(format!("{}.ckpt", layout.name()));
    model.save(&ckpt)?;
    report.checkpoint = Some(ckpt.file_name().expect("file name").to_string_lossy().into_owned());
    let hashes: serde_json::Map<String, Value> =
        layout.train.iter().map(|&k| Ok((k.name().to_string(), Value::String(ctx.manifest_sha(k)?)))).collect::<Result<_>>()?;
    let result = json!({
        "group": layout,
        "parameter_count": model.param_count(),
        "checkpoint_sha256": sha256_hex(&fs::read(&ckpt)?),
        "train_manifest_sha256": hashes,
        "report": report,
    });
    ctx.write_report(&format!("train_{}.json", layout.name()), "train", &result)?;
    println!(
        "{}: best epoch {} val accuracy {:.4} -> {}",
        layout.name(),
        report.best_epoch,
        report.best_val_accuracy,
        ckpt.display()
    );
    Ok(())
}

fn confusion_json(m: &ConfusionMatrix) -> Value {
    json!({
        "counts": m.counts,
        "total": m.total(),
        "accuracy": m.accuracy(),
        "environment_rate": m.class_rate(l1sa::synth::Label::Environment),
        "self_rate": m.class_rate(l1sa::synth::Label::SelfBody),
    })
}

fn cmd_eval(ctx: &Ctx, layout: GroupLayout, checkpoint: &Option<PathBuf>) -> Result<()> {
    let test = ctx.scene(layout.test)?;
    let path = ctx.checkpoint_path(&layout, checkpoint);
    let model = ctx.load_model(&path, &test)?;
    let m = evaluate(&model, &test)?;
    ctx.write_file(&format!("confusion_{}.csv", layout.name()), m.to_csv())?;
    let result = json!({
        "group": layout,
        "checkpoint_sha256": sha256_hex(&fs::read(&path)?),
        "test_manifest_sha256": ctx.manifest_sha(layout.test)?,
        "confusion": confusion_json(&m),
    });
    ctx.write_report(&format!("eval_{}.json", layout.name()), "eval", &result)?;
    println!("{}: held-out {} accuracy {:.4} ({} samples)", layout.name(), layout.test.name(), m.accuracy(), m.total());
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, layout: GroupLayout, checkpoint: &Option<PathBuf>) -> Result<()> {
    let test = ctx.scene(layout.test)?;
    let model = ctx.load_model(&ctx.checkpoint_path(&layout, checkpoint), &test)?;
    let report = run_confounding_ablation(&model, &layout, &test, ctx.config.seed)?;
    ctx.write_file(&format!("ablation_{}.csv", layout.name()), report.to_csv())?;
    ctx.write_report(&format!("ablation_{}.json", layout.name()), "ablate", &report)?;
    for c in &report.cases {
        println!("{} case{} n={} accuracy={:.4}", layout.name(), c.case.number(), c.n, c.accuracy);
    }
    Ok(())
}

fn cmd_saliency(ctx: &Ctx, layout: GroupLayout, checkpoint: &Option<PathBuf>) -> Result<()> {
    let test = ctx.scene(layout.test)?;
    let model = ctx.load_model(&ctx.checkpoint_path(&layout, checkpoint), &test)?;
    let (h, w) = test.image_size;
    let mut sidecars = Vec::new();
    fs::create_dir_all(ctx.report_dir.join("saliency"))?;
    for s in test.samples.iter().take(ctx.config.interpret.saliency_samples) {
        let map = saliency(&model, &s.image, &s.proprio, s.sample_id)?;
        let stem = format!("saliency/{}_{:016x}", layout.name(), s.sample_id);
        ctx.write_file(&format!("{stem}.pgm"), map.to_pgm())?;
        ctx.write_file(&format!("{stem}.input.ppm"), chw_to_ppm(&s.image, h, w)?)?;
        let sidecar = map.sidecar();
        ctx.write_file(&format!("{stem}.json"), to_canonical_pretty(&sidecar)?)?;
        sidecars.push(sidecar);
    }
    let enrichment = arm_enrichment(&model, &test, ctx.config.interpret.enrichment_samples)?;
    ctx.write_report(
        &format!("saliency_{}.json", layout.name()),
        "saliency",
        &json!({ "group": layout, "maps": sidecars, "arm_enrichment": enrichment }),
    )?;
    println!("{}: {} maps, arm enrichment {:.3}", layout.name(), sidecars.len(), enrichment.enrichment);
    Ok(())
}

fn cmd_mi(ctx: &Ctx, paths: &[PathBuf]) -> Result<()> {
    let models = paths
        .iter()
        .map(|p| LevelOneParams::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<String> =
        paths.iter().map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()).collect();
    if names.iter().enumerate().any(|(i, n)| names[..i].contains(n)) {
        names = names.iter().enumerate().map(|(i, n)| format!("{i}-{n}")).collect();
    }
    let named: Vec<(String, &LevelOneParams)> = names.iter().cloned().zip(&models).collect();
    let ic = &ctx.config.interpret;
    let pairwise = compare_group_models(&named, ic.layer, ic.bins)?;
    let mut k = 0;
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let swapped = weight_mutual_information(&models[j], &models[i], ic.layer, ic.bins)?;
            let forward = &pairwise.pairs[k];
            if (swapped.mi_bits - forward.mi_bits).abs() > 1e-9 {
                bail!("MI is not symmetric for {} / {}", names[i], names[j]);
            }
            let stem = format!("mi_{}_{}", names[i], names[j]);
            ctx.write_file(&format!("{stem}.pgm"), joint_histogram_render(forward))?;
            ctx.write_file(&format!("{stem}.json"), to_canonical_pretty(&HistogramSidecar::from(forward))?)?;
            println!("{} {} mi={:.6} bits", names[i], names[j], forward.mi_bits);
            k += 1;
        }
    }
    ctx.write_file("mi.csv", pairwise.to_csv())?;
    ctx.write_report(
        "mi.json",
        "mi",
        &json!({
            "models": pairwise.models,
            "layer": pairwise.layer,
            "bins": pairwise.bins,
            "matrix": pairwise.matrix(),
            "min": pairwise.min,
            "max": pairwise.max,
            "mean": pairwise.mean,
        }),
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GroupRow {
    group: String,
    held_out: SceneKind,
    accuracy: Option<f64>,
    total: Option<u64>,
    cases: Vec<Option<f64>>,
}

fn cmd_report(ctx: &Ctx, dir: &Path) -> Result<()> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for layout in GroupLayout::all() {
        let name = layout.name();
        let conf_path = dir.join(format!("confusion_{name}.csv"));
        let (accuracy, total) = match fs::read_to_string(&conf_path) {
            Ok(text) => {
                let m = ConfusionMatrix::from_csv(&text)?;
                (Some(m.accuracy()), Some(m.total()))
            }
            Err(_) => {
                missing.push(conf_path.display().to_string());
                (None, None)
            }
        };
        let abl_path = dir.join(format!("ablation_{name}.csv"));
        let mut cases = vec![None; 4];
        match fs::read_to_string(&abl_path) {
            Ok(text) => {
                for (case, _, acc) in AblationReport::parse_csv(&text)? {
                    if !(1..=4).contains(&case) {
                        return Err(l1sa::Error::Format(format!("case {case} in {}", abl_path.display())).into());
                    }
                    cases[case - 1] = Some(acc);
                }
                for (i, c) in cases.iter().enumerate() {
                    if c.is_none() {
                        missing.push(format!("{} case{}", abl_path.display(), i + 1));
                    }
                }
            }
            Err(_) => missing.push(abl_path.display().to_string()),
        }
        rows.push(GroupRow { group: name, held_out: layout.test, accuracy, total, cases });
    }
    let present: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    if present.is_empty() && rows.iter().all(|r| r.cases.iter().all(Option::is_none)) {
        for m in &missing {
            eprintln!("missing: {m}");
        }
        return Err(l1sa::Error::Missing(format!("no results in {}", dir.display())).into());
    }
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);

    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut table = format!("{:<8} {:<10} {:>8}", "group", "held-out", "overall");
    for c in Case::ALL {
        table.push_str(&format!(" {:>8}", c.name()));
    }
    table.push('\n');
    for r in &rows {
        table.push_str(&format!("{:<8} {:<10} {:>8}", r.group, r.held_out.name(), fmt(r.accuracy)));
        for c in &r.cases {
            table.push_str(&format!(" {:>8}", fmt(*c)));
        }
        table.push('\n');
    }
    table.push_str(&format!("mean accuracy {}\n", fmt(mean)));

    let summary = json!({ "groups": rows, "mean_accuracy": mean, "missing": missing, "complete": missing.is_empty() });
    fs::create_dir_all(&ctx.report_dir)?;
    ctx.write_report("summary.json", "report", &summary)?;
    ctx.write_file("summary.txt", &table)?;
    print!("{table}");
    if !missing.is_empty() {
        for m in &missing {
            eprintln!("warning: missing {m}");
        }
        return Err(Partial(missing).into());
    }
    Ok(())
}

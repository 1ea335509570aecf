//! Leave-one-group-out runs and the four-case confounding ablation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::to_canonical_pretty;
use crate::model::{LevelOneConfig, LevelOneParams};
use crate::synth::{assemble_group, derive_seed, make_confounding_cases, Case, Dataset, GroupLayout, Label, SceneKind};
use crate::train::{evaluate_batched, split_train_val, train, ConfusionMatrix, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: Case,
    pub n: usize,
    pub accuracy: f64,
    pub expected_label: Label,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub group: String,
    pub held_out: SceneKind,
    pub seed: u64,
    pub cases: Vec<CaseResult>,
    /// Whether case 4 has the lowest accuracy of the four cases.
    pub case4_most_misclassified: bool,
}

impl AblationReport {
    pub fn case(&self, case: Case) -> &CaseResult {
        &self.cases[case as usize]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,n,accuracy\n");
        for c in &self.cases {
            out.push_str(&format!("{},{},{}\n", c.case.number(), c.n, c.accuracy));
        }
        out
    }

    /// Parses `case,n,accuracy` rows into `(case number, n, accuracy)`.
    pub fn parse_csv(text: &str) -> Result<Vec<(usize, usize, f64)>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("case,n,accuracy") {
            return Err(Error::Format("ablation CSV header must be case,n,accuracy".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.trim().split(',').collect();
                let bad = || Error::Format(format!("bad ablation row {l:?}"));
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?))
            })
            .collect()
    }
}

/// Builds cases 1-4 from `test` and evaluates `model` on each.
pub fn run_confounding_ablation(
    model: &LevelOneParams,
    layout: &GroupLayout,
    test: &Dataset,
    seed: u64,
) -> Result<AblationReport> {
    let cases = make_confounding_cases(test, seed)?;
    let mut results = Vec::with_capacity(4);
    for case in Case::ALL {
        let data = cases.get(case);
        let confusion = evaluate_batched(model, data, 256)?;
        let expected_label = if case == Case::Case1 { Label::SelfBody } else { Label::Environment };
        results.push(CaseResult { case, n: data.len(), accuracy: confusion.accuracy(), expected_label, confusion });
    }
    let a4 = results[3].accuracy;
    let case4_most_misclassified = results[..3].iter().all(|r| a4 <= r.accuracy);
    Ok(AblationReport { group: layout.name(), held_out: layout.test, seed, cases: results, case4_most_misclassified })
}

/// Everything produced by training and testing one group under one seed.
#[derive(Debug, Clone)]
pub struct GroupRun {
    pub layout: GroupLayout,
    pub seed: u64,
    pub model: LevelOneParams,
    pub train_report: TrainReport,
    pub confusion: ConfusionMatrix,
    pub ablation: AblationReport,
}

/// Splits a group's training pool 80/20 and trains a fresh model initialised
/// from `seed`; every group shares that initialisation.
pub fn train_group(
    train_pool: &Dataset,
    layout: &GroupLayout,
    model_config: &LevelOneConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<(LevelOneParams, TrainReport)> {
    let group = layout.group as u64;
    let (train_set, val_set) = split_train_val(train_pool, train_config.split_fraction, derive_seed(seed, group))?;
    let mut model = LevelOneParams::init(LevelOneConfig { seed, ..model_config.clone() })?;
    let cfg = TrainConfig { shuffle_seed: derive_seed(seed, 0x5EED_0000 | group), ..train_config.clone() };
    let report = train(&mut model, &train_set, &val_set, &cfg)?;
    Ok((model, report))
}

/// Trains on the group's three scenes and tests on the held-out one.
pub fn run_group(
    scenes: &[Dataset],
    group: u8,
    model_config: &LevelOneConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<GroupRun> {
    let data = assemble_group(group, scenes)?;
    let test_ids: BTreeSet<u64> = data.test.samples.iter().map(|s| s.sample_id).collect();
    if data.train_pool.samples.iter().any(|s| test_ids.contains(&s.sample_id)) {
        return Err(Error::Stratification(format!("group {group}: held-out samples leaked into training")));
    }
    let (model, train_report) = train_group(&data.train_pool, &data.layout, model_config, train_config, seed)?;
    let confusion = evaluate_batched(&model, &data.test, train_config.eval_batch_size)?;
    let ablation = run_confounding_ablation(&model, &data.layout, &data.test, seed)?;
    Ok(GroupRun { layout: data.layout, seed, model, train_report, confusion, ablation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        assert!(!values.is_empty(), "spread of no values");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Spread { median, min: v[0], max: v[n - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub train_scenes: Vec<SceneKind>,
    pub held_out: SceneKind,
    pub accuracies: Vec<f64>,
    pub accuracy: Spread,
    pub case_accuracies: Vec<Vec<f64>>,
    pub cases: Vec<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOutReport {
    pub seeds: Vec<u64>,
    pub groups: Vec<GroupSummary>,
    /// Arithmetic mean of the per-group median accuracies.
    pub mean_accuracy: f64,
}

pub fn summarize(runs: &[GroupRun]) -> Result<LeaveOneOutReport> {
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut groups = Vec::new();
    for layout in GroupLayout::all() {
        let mine: Vec<&GroupRun> = runs.iter().filter(|r| r.layout.group == layout.group).collect();
        if mine.is_empty() {
            continue;
        }
        let accuracies: Vec<f64> = mine.iter().map(|r| r.confusion.accuracy()).collect();
        let case_accuracies: Vec<Vec<f64>> =
            Case::ALL.iter().map(|&c| mine.iter().map(|r| r.ablation.case(c).accuracy).collect()).collect();
        groups.push(GroupSummary {
            group: layout.name(),
            train_scenes: layout.train.to_vec(),
            held_out: layout.test,
            accuracy: Spread::of(&accuracies),
            accuracies,
            cases: case_accuracies.iter().map(|a| Spread::of(a)).collect(),
            case_accuracies,
        });
    }
    if groups.is_empty() {
        return Err(Error::Missing("no group runs to summarise".into()));
    }
    let mean_accuracy = groups.iter().map(|g| g.accuracy.median).sum::<f64>() / groups.len() as f64;
    Ok(LeaveOneOutReport { seeds, groups, mean_accuracy })
}

/// Runs every group for every seed, then summarises medians across seeds.
pub fn run_leave_one_out(
    scenes: &[Dataset],
    model_config: &LevelOneConfig,
    train_config: &TrainConfig,
    seeds: &[u64],
) -> Result<(LeaveOneOutReport, Vec<GroupRun>)> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    for kind in SceneKind::ALL {
        if !scenes.iter().any(|d| d.scenes.len() == 1 && d.scenes[0].scene_kind == kind) {
            return Err(Error::Missing(format!("scene dataset {}", kind.name())));
        }
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        for layout in GroupLayout::all() {
            runs.push(run_group(scenes, layout.group, model_config, train_config, seed)?);
        }
    }
    Ok((summarize(&runs)?, runs))
}

impl LeaveOneOutReport {
    /// Groups as rows; overall accuracy then cases 1-4 as columns (medians).
    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:<10} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "group", "held-out", "overall", "case1", "case2", "case3", "case4");
        for g in &self.groups {
            out.push_str(&format!("{:<8} {:<10} {:>8.4}", g.group, g.held_out.name(), g.accuracy.median));
            for c in &g.cases {
                out.push_str(&format!(" {:>8.4}", c.median));
            }
            out.push('\n');
        }
        out.push_str(&format!("mean {:.4}\n", self.mean_accuracy));
        out
    }
}

/// Writes `confusion_<group>.csv`, `ablation_<group>.csv`, the train report
/// and the checkpoint for one run into `dir`.
pub fn write_group_run(run: &GroupRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let name = run.layout.name();
    fs::write(dir.join(format!("confusion_{name}.csv")), run.confusion.to_csv())?;
    fs::write(dir.join(format!("ablation_{name}.csv")), run.ablation.to_csv())?;
    let ckpt = format!("{name}.ckpt");
    run.model.save(&dir.join(&ckpt))?;
    let mut report = run.train_report.clone();
    report.checkpoint = Some(ckpt);
    fs::write(dir.join(format!("train_{name}.json")), to_canonical_pretty(&report)?)?;
    fs::write(dir.join(format!("ablation_{name}.json")), to_canonical_pretty(&run.ablation)?)?;
    Ok(())
}

//! Sample generation, experimental groups, confounding cases and the
//! on-disk dataset format (`manifest.json` + `samples.bin`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::robot::{previous_pose, sample_pose, synthesize_proprio, Label, RobotSpec};
use super::scene::{render_scene, ArmMask, SceneKind, SceneSpec};
use crate::error::{Error, Result};
use crate::json::to_canonical_string;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    Case1,
    Case2,
    Case3,
    Case4,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::Case1, Case::Case2, Case::Case3, Case::Case4];

    pub fn name(self) -> &'static str {
        match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
            Case::Case3 => "case3",
            Case::Case4 => "case4",
        }
    }

    pub fn number(self) -> usize {
        self as usize + 1
    }
}

/// splitmix64 finaliser over `(seed, stream)`; seeds every per-sample RNG.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// One synchronised observation. `image` is stored channel-major (`3 x H x W`).
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Vec<f32>,
    pub proprio: Vec<f32>,
    pub label: Label,
    pub scene_kind: SceneKind,
    pub case_tag: Option<Case>,
    pub sample_id: u64,
    pub seed: u64,
    pub mask: ArmMask,
    pub distractors: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub robot: RobotSpec,
    pub scenes: Vec<SceneSpec>,
    /// `(height, width)`.
    pub image_size: (usize, usize),
    pub proprio_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_len(&self) -> usize {
        3 * self.image_size.0 * self.image_size.1
    }

    pub fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            robot: self.robot.clone(),
            scenes: self.scenes.clone(),
            image_size: self.image_size,
            proprio_dim: self.proprio_dim,
            samples,
        }
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Concatenates datasets that share robot, image size and proprio width.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Size("nothing to concatenate".into()))?;
        let mut out = first.with_samples(Vec::new());
        out.scenes.clear();
        for p in parts {
            if p.image_size != first.image_size || p.proprio_dim != first.proprio_dim || p.robot != first.robot {
                return Err(Error::Dimension("datasets disagree on robot, image size or proprio width".into()));
            }
            out.scenes.extend(p.scenes.iter().cloned());
            out.samples.extend(p.samples.iter().cloned());
        }
        Ok(out)
    }

    pub fn proprio_stats(&self) -> (Vec<f32>, Vec<f32>) {
        proprio_stats(self.samples.iter().map(|s| s.proprio.as_slice()), self.proprio_dim)
    }
}

/// Per-dimension mean and standard deviation (f64 accumulation; a zero
/// deviation is reported as 1 so it can be used for z-scoring directly).
pub fn proprio_stats<'a, I: Iterator<Item = &'a [f32]>>(rows: I, dim: usize) -> (Vec<f32>, Vec<f32>) {
    let mut sum = vec![0.0f64; dim];
    let mut sum2 = vec![0.0f64; dim];
    let mut n = 0usize;
    for r in rows {
        for (i, &v) in r.iter().enumerate() {
            sum[i] += v as f64;
            sum2[i] += (v as f64) * (v as f64);
        }
        n += 1;
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = sum2
        .iter()
        .zip(&mean)
        .map(|(s2, m)| {
            let sd = (s2 / n as f64 - m * m).max(0.0).sqrt();
            if sd > 1e-8 {
                sd as f32
            } else {
                1.0
            }
        })
        .collect();
    (mean.iter().map(|&m| m as f32).collect(), std)
}

pub fn sample_id(kind: SceneKind, index: usize) -> u64 {
    ((kind.index() as u64 + 1) << 32) | index as u64
}

/// Generates one sample from its own RNG stream, so any generation order
/// yields identical bytes.
pub fn generate_sample(scene: &SceneSpec, robot: &RobotSpec, label: Label, id: u64) -> Result<Sample> {
    let seed = derive_seed(scene.seed, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles = sample_pose(robot, label, scene.image_size, &mut rng)?;
    let previous = previous_pose(robot, label, &angles, &mut rng);
    let proprio = synthesize_proprio(robot, &angles, &previous, &mut rng)?;
    let rendered = render_scene(scene, robot, &angles, &mut rng)?;
    Ok(Sample {
        image: rendered.image,
        proprio: proprio.0,
        label,
        scene_kind: scene.scene_kind,
        case_tag: None,
        sample_id: id,
        seed,
        mask: rendered.mask,
        distractors: rendered.distractors,
    })
}

/// Exactly balanced scene dataset: even indices are self, odd are environment.
pub fn generate_scene(scene: &SceneSpec, robot: &RobotSpec, samples: usize) -> Result<Dataset> {
    scene.validate()?;
    robot.validate()?;
    if samples < 2 || samples % 2 != 0 {
        return Err(Error::Size(format!("samples per scene must be even and >= 2, got {samples}")));
    }
    let samples = (0..samples)
        .map(|i| {
            let label = if i % 2 == 0 { Label::SelfBody } else { Label::Environment };
            generate_sample(scene, robot, label, sample_id(scene.scene_kind, i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        robot: robot.clone(),
        scenes: vec![scene.clone()],
        image_size: scene.image_size,
        proprio_dim: robot.proprio_dim(),
        samples,
    })
}

pub fn generate_all_scenes(
    robot: &RobotSpec,
    image_size: (usize, usize),
    samples_per_scene: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    SceneKind::ALL
        .iter()
        .map(|&k| generate_scene(&SceneSpec::new(k, image_size, seed), robot, samples_per_scene))
        .collect()
}

/// Leave-one-scene-out layout of an experimental group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub group: u8,
    pub train: [SceneKind; 3],
    pub test: SceneKind,
}

impl GroupLayout {
    pub fn new(group: u8) -> Result<GroupLayout> {
        use SceneKind::*;
        let (train, test) = match group {
            1 => ([ClutterB, PlainB, PlainA], ClutterA),
            2 => ([ClutterA, ClutterB, PlainB], PlainA),
            3 => ([ClutterA, PlainB, PlainA], ClutterB),
            4 => ([ClutterA, ClutterB, PlainA], PlainB),
            _ => return Err(Error::Config(format!("group id must be 1..=4, got {group}"))),
        };
        Ok(GroupLayout { group, train, test })
    }

    pub fn all() -> [GroupLayout; 4] {
        [1, 2, 3, 4].map(|g| GroupLayout::new(g).expect("valid group"))
    }

    pub fn name(&self) -> String {
        format!("group{}", self.group)
    }
}

#[derive(Debug, Clone)]
pub struct GroupData {
    pub layout: GroupLayout,
    pub train_pool: Dataset,
    pub test: Dataset,
}

/// Assembles a group from per-scene datasets (any order).
pub fn assemble_group(group: u8, scenes: &[Dataset]) -> Result<GroupData> {
    let layout = GroupLayout::new(group)?;
    let find = |k: SceneKind| {
        scenes
            .iter()
            .find(|d| d.scenes.len() == 1 && d.scenes[0].scene_kind == k)
            .ok_or_else(|| Error::Missing(format!("no dataset for scene {}", k.name())))
    };
    let parts = layout.train.iter().map(|&k| find(k)).collect::<Result<Vec<_>>>()?;
    Ok(GroupData { layout, train_pool: Dataset::concat(&parts)?, test: find(layout.test)?.clone() })
}

pub fn generate_group(
    group: u8,
    samples_per_scene: usize,
    seed: u64,
    robot: &RobotSpec,
    image_size: (usize, usize),
) -> Result<GroupData> {
    GroupLayout::new(group)?;
    let scenes = generate_all_scenes(robot, image_size, samples_per_scene, seed)?;
    assemble_group(group, &scenes)
}

#[derive(Debug, Clone)]
pub struct ConfoundingCases {
    pub cases: [Dataset; 4],
}

impl ConfoundingCases {
    pub fn get(&self, case: Case) -> &Dataset {
        &self.cases[case as usize]
    }
}

/// Builds the four matched / mismatched vision-proprioception test sets.
///
/// Cases 3 and 4 pair each image with the proprioception of a sample of the
/// opposite class, chosen through a seeded permutation; both are labelled
/// environment.
pub fn make_confounding_cases(test: &Dataset, seed: u64) -> Result<ConfoundingCases> {
    let selfs: Vec<&Sample> = test.samples.iter().filter(|s| s.label == Label::SelfBody).collect();
    let envs: Vec<&Sample> = test.samples.iter().filter(|s| s.label == Label::Environment).collect();
    if selfs.is_empty() || envs.is_empty() {
        return Err(Error::Pairing(format!(
            "confounding cases need both classes (self: {}, environment: {})",
            selfs.len(),
            envs.len()
        )));
    }
    let mut rng = rng_for(seed, 0xC0F0_0000);
    let mut env_perm: Vec<usize> = (0..envs.len()).collect();
    env_perm.shuffle(&mut rng);
    let mut self_perm: Vec<usize> = (0..selfs.len()).collect();
    self_perm.shuffle(&mut rng);

    let tag = |s: &Sample, case: Case| {
        let mut s = s.clone();
        s.case_tag = Some(case);
        s
    };
    let case1 = selfs.iter().map(|s| tag(s, Case::Case1)).collect();
    let case2 = envs.iter().map(|s| tag(s, Case::Case2)).collect();
    let case3 = selfs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut c = tag(s, Case::Case3);
            c.proprio = envs[env_perm[i % envs.len()]].proprio.clone();
            c.label = Label::Environment;
            c
        })
        .collect();
    let case4 = envs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut c = tag(s, Case::Case4);
            c.proprio = selfs[self_perm[i % selfs.len()]].proprio.clone();
            c.label = Label::Environment;
            c
        })
        .collect();
    Ok(ConfoundingCases {
        cases: [test.with_samples(case1), test.with_samples(case2), test.with_samples(case3), test.with_samples(case4)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub offset: u64,
    pub label: Label,
    pub scene_kind: SceneKind,
    pub case_tag: Option<Case>,
    pub seed: u64,
    pub distractors: usize,
    pub arm_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub proprio_mean: Vec<f32>,
    pub proprio_std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub label_map: std::collections::BTreeMap<String, usize>,
    pub robot: RobotSpec,
    pub scenes: Vec<SceneSpec>,
    pub image_size: (usize, usize),
    pub channels: usize,
    pub proprio_dim: usize,
    pub record_stride: u64,
    pub count: usize,
    pub normalization: Normalization,
    pub samples_sha256: String,
    pub records: Vec<SampleRecord>,
}

pub fn label_map() -> std::collections::BTreeMap<String, usize> {
    [Label::Environment, Label::SelfBody].iter().map(|l| (l.name().to_string(), l.index())).collect()
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dataset format version {}", self.format_version)));
        }
        if self.records.len() != self.count {
            return Err(Error::Format(format!("manifest declares {} records but lists {}", self.count, self.records.len())));
        }
        if self.records.windows(2).any(|w| w[1].offset <= w[0].offset) {
            return Err(Error::Format("record offsets must be strictly increasing".into()));
        }
        let stride = 4 * (self.channels * self.image_size.0 * self.image_size.1 + self.proprio_dim) as u64;
        if stride != self.record_stride {
            return Err(Error::Format(format!("record stride {} does not match layout ({stride})", self.record_stride)));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn samples_payload(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::with_capacity(ds.len() * 4 * (ds.image_len() + ds.proprio_dim));
    for s in &ds.samples {
        for v in s.image.iter().chain(&s.proprio) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn build_manifest(ds: &Dataset, payload: &[u8]) -> DatasetManifest {
    let stride = 4 * (ds.image_len() + ds.proprio_dim) as u64;
    let (mean, std) = ds.proprio_stats();
    DatasetManifest {
        format_version: FORMAT_VERSION,
        label_map: label_map(),
        robot: ds.robot.clone(),
        scenes: ds.scenes.clone(),
        image_size: ds.image_size,
        channels: 3,
        proprio_dim: ds.proprio_dim,
        record_stride: stride,
        count: ds.len(),
        normalization: Normalization { proprio_mean: mean, proprio_std: std },
        samples_sha256: sha256_hex(payload),
        records: ds
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| SampleRecord {
                sample_id: s.sample_id,
                offset: i as u64 * stride,
                label: s.label,
                scene_kind: s.scene_kind,
                case_tag: s.case_tag,
                seed: s.seed,
                distractors: s.distractors,
                arm_pixels: s.mask.count(),
            })
            .collect(),
    }
}

/// Writes `manifest.json` and `samples.bin` into `dir`; returns the SHA-256
/// of the manifest bytes.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir)?;
    let payload = samples_payload(ds);
    let manifest = build_manifest(ds, &payload);
    let text = to_canonical_string(&manifest)?;
    let mut f = BufWriter::new(fs::File::create(dir.join(SAMPLES_FILE))?);
    f.write_all(&payload)?;
    f.flush()?;
    fs::write(dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Hash a dataset would get on disk, without writing it.
pub fn manifest_hash(ds: &Dataset) -> Result<String> {
    let payload = samples_payload(ds);
    Ok(sha256_hex(to_canonical_string(&build_manifest(ds, &payload))?.as_bytes()))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    m.validate()?;
    Ok(m)
}

/// Loads a dataset written by [`write_dataset`]. Arm masks are not stored on
/// disk; they are re-rendered from each record's seed.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(SAMPLES_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    if sha256_hex(&bytes) != manifest.samples_sha256 {
        return Err(Error::Format(format!("{} does not match the manifest checksum", path.display())));
    }
    let stride = manifest.record_stride as usize;
    let image_len = 3 * manifest.image_size.0 * manifest.image_size.1;
    if bytes.len() != stride * manifest.count {
        return Err(Error::Format("samples.bin length does not match the manifest".into()));
    }
    let floats = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
    };
    let samples = manifest
        .records
        .iter()
        .map(|r| {
            let off = r.offset as usize;
            let rec = &bytes[off..off + stride];
            let scene = manifest
                .scenes
                .iter()
                .find(|s| s.scene_kind == r.scene_kind)
                .ok_or_else(|| Error::Format(format!("record {} names an unlisted scene", r.sample_id)))?;
            let mask = if r.arm_pixels == 0 {
                ArmMask::new(manifest.image_size.0, manifest.image_size.1)
            } else {
                generate_sample(scene, &manifest.robot, r.label, r.sample_id)?.mask
            };
            Ok(Sample {
                image: floats(&rec[..4 * image_len]),
                proprio: floats(&rec[4 * image_len..]),
                label: r.label,
                scene_kind: r.scene_kind,
                case_tag: r.case_tag,
                sample_id: r.sample_id,
                seed: r.seed,
                mask,
                distractors: r.distractors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        robot: manifest.robot,
        scenes: manifest.scenes,
        image_size: manifest.image_size,
        proprio_dim: manifest.proprio_dim,
        samples,
    })
}

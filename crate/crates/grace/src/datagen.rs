//! Synthetic dataset generation: participants x mobility conditions with
//! correlated functional-assessment scores and sampled range-of-motion
//! configurations, plus dataset file I/O.
//!
//! Each condition archetype is an axis-aligned box of per-joint intervals plus
//! a coupling penalty that forbids simultaneous high elevation and elbow
//! flexion. A user realizes the archetype with Gaussian-perturbed endpoints,
//! draws joint samples inside the realized set, and gets assessment scores
//! from quantized monotone functions of what that set can reach.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::JointConfig;
use crate::Membership;

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Joint index order used throughout: plane, elevation, rotation, elbow.
pub const JOINT_NAMES: [&str; 4] = ["plane", "elev", "rot", "elbow"];

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {file}: {message}")]
    Format { file: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One of the four emulated mobility conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionArchetype {
    pub condition_id: u32,
    /// Mean (lo, hi) per joint, radians, in [`JOINT_NAMES`] order.
    pub joint_interval_means: [(f64, f64); 4],
    /// Cross-joint restriction strength; reduces simultaneous elevation and
    /// elbow flexion.
    pub coupling_penalty: f64,
}

/// The four fixed archetypes. Condition 1 is the unrestricted range;
/// conditions 2-4 nest inside it, with 3 the most severe shoulder
/// restriction and 4 the mildest.
pub fn make_archetypes() -> Vec<ConditionArchetype> {
    let deg = |lo: f64, hi: f64| (lo * DEG, hi * DEG);
    vec![
        ConditionArchetype {
            condition_id: 1,
            joint_interval_means: [
                deg(0.0, 120.0),
                deg(0.0, 160.0),
                deg(0.0, 100.0),
                deg(0.0, 150.0),
            ],
            coupling_penalty: 0.0,
        },
        ConditionArchetype {
            condition_id: 2,
            joint_interval_means: [
                deg(0.0, 100.0),
                deg(0.0, 90.0),
                deg(0.0, 80.0),
                deg(0.0, 110.0),
            ],
            coupling_penalty: 0.35,
        },
        ConditionArchetype {
            condition_id: 3,
            joint_interval_means: [
                deg(0.0, 80.0),
                deg(0.0, 50.0),
                deg(0.0, 50.0),
                deg(0.0, 95.0),
            ],
            coupling_penalty: 0.6,
        },
        ConditionArchetype {
            condition_id: 4,
            joint_interval_means: [
                deg(0.0, 110.0),
                deg(0.0, 120.0),
                deg(0.0, 90.0),
                deg(0.0, 140.0),
            ],
            coupling_penalty: 0.2,
        },
    ]
}

/// A user's realized ground-truth range of motion: per-joint intervals plus
/// the realized coupling penalty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueFrom {
    /// Realized (lo, hi) per joint, radians.
    pub intervals: [(f64, f64); 4],
    pub coupling: f64,
}

impl TrueFrom {
    /// Fraction of the elevation/elbow interval used by a value, in [0, 1+].
    fn frac(&self, joint: usize, value: f64) -> f64 {
        let (lo, hi) = self.intervals[joint];
        (value - lo) / (hi - lo)
    }

    /// Zero inside the set; otherwise a radians-scale measure of how far the
    /// configuration violates the intervals or the coupling constraint.
    pub fn violation(&self, cfg: &JointConfig) -> f64 {
        let vals = cfg.as_array();
        let mut v = 0.0;
        for (j, &(lo, hi)) in self.intervals.iter().enumerate() {
            v += (lo - vals[j]).max(0.0) + (vals[j] - hi).max(0.0);
        }
        let budget = 2.0 - self.coupling;
        let used = self.frac(1, vals[1]).clamp(0.0, 1.0) + self.frac(3, vals[3]).clamp(0.0, 1.0);
        v += (used - budget).max(0.0) * 0.5;
        v
    }

    pub fn contains_with_tolerance(&self, cfg: &JointConfig, tol: f64) -> bool {
        self.violation(cfg) <= tol
    }
}

impl Membership for TrueFrom {
    fn contains(&self, cfg: &JointConfig) -> bool {
        self.violation(cfg) == 0.0
    }
}

/// Normalized functional-assessment scores, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub arat_grasp: f64,
    pub arat_grip: f64,
    pub arat_gross: f64,
    pub fma_ue_a: f64,
    pub fma_ue_b: f64,
    pub fma_ue_coord: f64,
}

pub const SCORE_FIELDS: [&str; 6] = [
    "arat_grasp",
    "arat_grip",
    "arat_gross",
    "fma_ue_a",
    "fma_ue_b",
    "fma_ue_coord",
];

impl ScoreVector {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.arat_grasp,
            self.arat_grip,
            self.arat_gross,
            self.fma_ue_a,
            self.fma_ue_b,
            self.fma_ue_coord,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            arat_grasp: a[0],
            arat_grip: a[1],
            arat_gross: a[2],
            fma_ue_a: a[3],
            fma_ue_b: a[4],
            fma_ue_coord: a[5],
        }
    }

    /// Name of the first component outside [0, 1], if any.
    pub fn invalid_field(&self) -> Option<&'static str> {
        self.as_array()
            .iter()
            .zip(SCORE_FIELDS)
            .find(|(v, _)| !(0.0..=1.0).contains(*v))
            .map(|(_, name)| name)
    }
}

/// One participant-condition cell of the dataset.
#[derive(Debug, Clone)]
pub struct UserRecord {
    pub participant_id: u32,
    pub condition_id: u32,
    pub scores: ScoreVector,
    pub from_samples: Vec<JointConfig>,
    pub true_from: TrueFrom,
}

impl UserRecord {
    pub fn key(&self) -> (u32, u32) {
        (self.participant_id, self.condition_id)
    }
}

/// Generation settings; defaults give the 43-user layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub n_participants: u32,
    pub samples_per_user: usize,
    /// Endpoint perturbation, degrees.
    pub interval_noise_deg: f64,
    pub coupling_noise: f64,
    /// Score noise applied per item on the normalized scale.
    pub score_noise: f64,
    /// Fraction of samples biased toward the realized limits.
    pub boundary_fraction: f64,
    /// Width of the boundary band, degrees.
    pub boundary_band_deg: f64,
    /// Cell removed to mirror the 43-user layout; None keeps all cells.
    pub drop_cell: Option<(u32, u32)>,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            n_participants: 11,
            samples_per_user: 2000,
            interval_noise_deg: 5.0,
            coupling_noise: 0.05,
            score_noise: 0.04,
            boundary_fraction: 0.3,
            boundary_band_deg: 5.0,
            drop_cell: Some((11, 4)),
        }
    }
}

/// The generated dataset plus the inputs that produced it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub master_seed: u64,
    pub config: DatagenConfig,
    pub archetypes: Vec<ConditionArchetype>,
    pub records: Vec<UserRecord>,
}

impl Dataset {
    pub fn find(&self, key: (u32, u32)) -> Option<&UserRecord> {
        self.records.iter().find(|r| r.key() == key)
    }

    pub fn condition_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.condition_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Independent per-user RNG stream derived from the master seed and cell key,
/// so generation order cannot affect the output.
pub fn stream_rng(master_seed: u64, a: u64, b: u64, tag: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&a.to_le_bytes());
    seed[16..24].copy_from_slice(&b.to_le_bytes());
    seed[24..32].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Realizes intervals from the archetype, draws the sample cloud, and scores
/// the user. Deterministic in (participant_id, archetype, master_seed).
pub fn sample_user(
    participant_id: u32,
    archetype: &ConditionArchetype,
    master_seed: u64,
    config: &DatagenConfig,
) -> UserRecord {
    let mut rng = stream_rng(
        master_seed,
        participant_id as u64,
        archetype.condition_id as u64,
        0,
    );
    let noise = Normal::new(0.0, config.interval_noise_deg * DEG).unwrap();
    let mut intervals = [(0.0, 0.0); 4];
    for (j, &(lo, hi)) in archetype.joint_interval_means.iter().enumerate() {
        // Severity varies through the upper endpoints; the lower endpoints
        // stay put so the hanging rest pose remains reachable for everyone.
        let mut hi2 = hi + noise.sample(&mut rng);
        hi2 = hi2.max(lo + 5.0 * DEG);
        intervals[j] = (lo, hi2);
    }
    let coupling_noise = Normal::new(0.0, config.coupling_noise).unwrap();
    let coupling = (archetype.coupling_penalty + coupling_noise.sample(&mut rng)).max(0.0);
    let true_from = TrueFrom {
        intervals,
        coupling,
    };

    let band = config.boundary_band_deg * DEG;
    let n = config.samples_per_user;
    let mut from_samples = Vec::with_capacity(n);
    while from_samples.len() < n {
        let boundary_biased = rng.random_range(0.0..1.0) < config.boundary_fraction;
        let mut vals = [0.0; 4];
        for (j, &(lo, hi)) in intervals.iter().enumerate() {
            vals[j] = rng.random_range(lo..hi);
        }
        if boundary_biased {
            let j = rng.random_range(0..4usize);
            let (lo, hi) = intervals[j];
            let w = (hi - lo).min(band);
            vals[j] = if rng.random_range(0..2u32) == 0 {
                rng.random_range(lo..lo + w)
            } else {
                rng.random_range(hi - w..hi)
            };
        }
        let cfg = JointConfig::from_array(vals);
        if true_from.contains(&cfg) {
            from_samples.push(cfg);
        }
    }

    let scores = score_model(&true_from, config.score_noise, &mut rng);

    UserRecord {
        participant_id,
        condition_id: archetype.condition_id,
        scores,
        from_samples,
        true_from,
    }
}

/// Reach decay scale for partially-out-of-range task targets, radians.
const ITEM_DECAY: f64 = 0.3;

fn cfg_deg(plane: f64, elev: f64, rot: f64, elbow: f64) -> JointConfig {
    JointConfig::new(plane * DEG, elev * DEG, rot * DEG, elbow * DEG)
}

/// Grasp sub-test items: object lifts from table height to the box top.
fn grasp_targets() -> Vec<JointConfig> {
    vec![
        cfg_deg(20.0, 30.0, 10.0, 80.0),
        cfg_deg(30.0, 45.0, 15.0, 70.0),
        cfg_deg(15.0, 55.0, 20.0, 90.0),
        cfg_deg(35.0, 40.0, 5.0, 60.0),
        cfg_deg(25.0, 65.0, 10.0, 75.0),
        cfg_deg(20.0, 50.0, 25.0, 85.0),
    ]
}

/// Grip sub-test items: pouring and placing, rotation-heavy.
fn grip_targets() -> Vec<JointConfig> {
    vec![
        cfg_deg(30.0, 45.0, 60.0, 90.0),
        cfg_deg(25.0, 35.0, 75.0, 100.0),
        cfg_deg(40.0, 50.0, 50.0, 80.0),
        cfg_deg(20.0, 60.0, 70.0, 95.0),
    ]
}

/// Gross-movement items: touch the top of the head, the back of the head,
/// and the mouth. The head targets need elevation well above 60 degrees.
fn gross_targets() -> Vec<JointConfig> {
    vec![
        cfg_deg(40.0, 120.0, 30.0, 120.0),
        cfg_deg(60.0, 100.0, 40.0, 130.0),
        cfg_deg(30.0, 50.0, 20.0, 140.0),
    ]
}

fn quantize(x: f64, levels: u32) -> f64 {
    let steps = (levels - 1) as f64;
    ((x * steps).round() / steps).clamp(0.0, 1.0)
}

/// Mean of quantized noisy items; `levels` is the instrument's grid.
fn item_mean(raws: &[f64], levels: u32, noise: f64, rng: &mut impl Rng) -> f64 {
    let normal = Normal::new(0.0, noise.max(1e-12)).unwrap();
    let mut acc = 0.0;
    for &r in raws {
        let noisy = if noise > 0.0 {
            r + normal.sample(rng)
        } else {
            r
        };
        acc += quantize(noisy.clamp(0.0, 1.0), levels);
    }
    acc / raws.len() as f64
}

/// Scores a realized range of motion. Each sub-score is a quantized monotone
/// function of task-relevant reach: ARAT items from target-config
/// feasibility (4-level grid), FMA items from normalized interval widths and
/// coupling (3-level grid).
pub fn score_model(true_from: &TrueFrom, score_noise: f64, rng: &mut impl Rng) -> ScoreVector {
    let reach_item = |t: &JointConfig| (-true_from.violation(t) / ITEM_DECAY).exp();
    let grasp: Vec<f64> = grasp_targets().iter().map(&reach_item).collect();
    let grip: Vec<f64> = grip_targets().iter().map(&reach_item).collect();
    let gross: Vec<f64> = gross_targets().iter().map(&reach_item).collect();

    let normative = &make_archetypes()[0].joint_interval_means;
    let width_frac = |j: usize| {
        let (lo, hi) = true_from.intervals[j];
        let (nlo, nhi) = normative[j];
        ((hi - lo) / (nhi - nlo)).clamp(0.0, 1.0)
    };
    let fma_a = [width_frac(0), width_frac(1), width_frac(2)];
    let fma_b = [width_frac(3), (1.0 - true_from.coupling).clamp(0.0, 1.0)];
    // Coordination: overall usable volume plus a simultaneous
    // elevation-and-flexion probe that the coupling penalty degrades.
    let volume = (width_frac(0) * width_frac(1) * width_frac(2) * width_frac(3)).powf(0.25);
    let corner = cfg_deg(48.0, 112.0, 40.0, 105.0);
    let fma_coord = [volume, reach_item(&corner)];

    ScoreVector {
        arat_grasp: item_mean(&grasp, 4, score_noise, rng),
        arat_grip: item_mean(&grip, 4, score_noise, rng),
        arat_gross: item_mean(&gross, 4, score_noise, rng),
        fma_ue_a: item_mean(&fma_a, 3, score_noise, rng),
        fma_ue_b: item_mean(&fma_b, 3, score_noise, rng),
        fma_ue_coord: item_mean(&fma_coord, 3, score_noise, rng),
    }
}

/// Generates the full dataset; a pure function of the master seed and config.
pub fn generate_dataset(config: &DatagenConfig, master_seed: u64) -> Dataset {
    let archetypes = make_archetypes();
    let mut cells: Vec<(u32, u32)> = Vec::new();
    for pid in 1..=config.n_participants {
        for arch in &archetypes {
            if config.drop_cell == Some((pid, arch.condition_id)) {
                continue;
            }
            cells.push((pid, arch.condition_id));
        }
    }
    use rayon::prelude::*;
    let mut records: Vec<UserRecord> = cells
        .par_iter()
        .map(|&(pid, cid)| {
            let arch = archetypes
                .iter()
                .find(|a| a.condition_id == cid)
                .expect("archetype exists");
            sample_user(pid, arch, master_seed, config)
        })
        .collect();
    records.sort_by_key(|r| r.key());
    Dataset {
        master_seed,
        config: config.clone(),
        archetypes,
        records,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    master_seed: u64,
    config: DatagenConfig,
    archetypes: Vec<ConditionArchetype>,
    users: Vec<UserIndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct UserIndexEntry {
    participant_id: u32,
    condition_id: u32,
    scores: ScoreVector,
    true_from: TrueFrom,
    n_samples: usize,
    file: String,
}

pub fn user_file_name(pid: u32, cid: u32) -> String {
    format!("user_{pid}_{cid}.csv")
}

/// Writes `dataset.json` plus one CSV of joint samples per user (radians,
/// 9 decimal places). Re-reading and re-writing is byte-identical.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DatagenError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut users = Vec::with_capacity(dataset.records.len());
    for rec in &dataset.records {
        let file = user_file_name(rec.participant_id, rec.condition_id);
        let path = dir.join(&file);
        let mut text = String::with_capacity(rec.from_samples.len() * 48 + 32);
        text.push_str("plane,elev,rot,elbow\n");
        for s in &rec.from_samples {
            let a = s.as_array();
            writeln!(text, "{:.9},{:.9},{:.9},{:.9}", a[0], a[1], a[2], a[3]).unwrap();
        }
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))?;
        users.push(UserIndexEntry {
            participant_id: rec.participant_id,
            condition_id: rec.condition_id,
            scores: rec.scores,
            true_from: rec.true_from.clone(),
            n_samples: rec.from_samples.len(),
            file,
        });
    }
    let manifest = DatasetManifest {
        master_seed: dataset.master_seed,
        config: dataset.config.clone(),
        archetypes: dataset.archetypes.clone(),
        users,
    };
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(())
}

/// Reads a dataset directory back, validating scores, sample membership, and
/// file structure; errors carry the offending file and record.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DatagenError> {
    let manifest_path = dir.join("dataset.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    if text.trim().is_empty() {
        return Err(DatagenError::Format {
            file: manifest_path.display().to_string(),
            message: "no records".into(),
        });
    }
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DatagenError::Format {
            file: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;
    if manifest.users.is_empty() {
        return Err(DatagenError::Format {
            file: manifest_path.display().to_string(),
            message: "no records".into(),
        });
    }
    let mut records = Vec::with_capacity(manifest.users.len());
    for entry in &manifest.users {
        if let Some(field) = entry.scores.invalid_field() {
            return Err(DatagenError::Format {
                file: manifest_path.display().to_string(),
                message: format!(
                    "user ({}, {}): score component {field} outside [0, 1]",
                    entry.participant_id, entry.condition_id
                ),
            });
        }
        let csv_path = dir.join(&entry.file);
        let csv = std::fs::read_to_string(&csv_path).map_err(|e| io_err(&csv_path, e))?;
        let mut lines = csv.lines();
        match lines.next() {
            Some("plane,elev,rot,elbow") => {}
            other => {
                return Err(DatagenError::Format {
                    file: entry.file.clone(),
                    message: format!("bad header: {other:?}"),
                });
            }
        }
        let mut from_samples = Vec::with_capacity(entry.n_samples);
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut vals = [0.0; 4];
            let mut parts = line.split(',');
            for v in vals.iter_mut() {
                let tok = parts.next().ok_or_else(|| DatagenError::Format {
                    file: entry.file.clone(),
                    message: format!("line {}: expected 4 columns", lineno + 2),
                })?;
                *v = tok.parse().map_err(|_| DatagenError::Format {
                    file: entry.file.clone(),
                    message: format!("line {}: bad number {tok:?}", lineno + 2),
                })?;
            }
            if parts.next().is_some() {
                return Err(DatagenError::Format {
                    file: entry.file.clone(),
                    message: format!("line {}: expected 4 columns", lineno + 2),
                });
            }
            let cfg = JointConfig::from_array(vals);
            // 9-decimal quantization can push a boundary sample just outside.
            if !entry.true_from.contains_with_tolerance(&cfg, 1e-8) {
                return Err(DatagenError::Format {
                    file: entry.file.clone(),
                    message: format!("line {}: sample outside the realized set", lineno + 2),
                });
            }
            from_samples.push(cfg);
        }
        if from_samples.is_empty() {
            return Err(DatagenError::Format {
                file: entry.file.clone(),
                message: "no records".into(),
            });
        }
        records.push(UserRecord {
            participant_id: entry.participant_id,
            condition_id: entry.condition_id,
            scores: entry.scores,
            from_samples,
            true_from: entry.true_from.clone(),
        });
    }
    Ok(Dataset {
        master_seed: manifest.master_seed,
        config: manifest.config,
        archetypes: manifest.archetypes,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DatagenConfig {
        DatagenConfig {
            n_participants: 3,
            samples_per_user: 120,
            drop_cell: None,
            ..DatagenConfig::default()
        }
    }

    #[test]
    fn archetype_geometry_invariants() {
        let arch = make_archetypes();
        assert_eq!(arch.len(), 4);
        assert_eq!(arch[0].joint_interval_means[1], (0.0, 160.0 * DEG));
        // Severity ordering on elevation: condition 3 below condition 2.
        assert!(arch[2].joint_interval_means[1].1 < arch[1].joint_interval_means[1].1);
        // Conditions 2-4 nest inside condition 1 on every joint.
        for a in &arch[1..] {
            for (j, &(lo, hi)) in a.joint_interval_means.iter().enumerate() {
                let (nlo, nhi) = arch[0].joint_interval_means[j];
                assert!(lo >= nlo && hi <= nhi, "condition {} joint {j}", a.condition_id);
                assert!(lo < hi);
            }
        }
    }

    #[test]
    fn sample_user_is_deterministic() {
        let cfg = small_config();
        let arch = &make_archetypes()[1];
        let a = sample_user(4, arch, 99, &cfg);
        let b = sample_user(4, arch, 99, &cfg);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.from_samples, b.from_samples);
        assert_eq!(a.true_from.intervals, b.true_from.intervals);
        let c = sample_user(4, arch, 100, &cfg);
        assert_ne!(a.from_samples, c.from_samples);
    }

    #[test]
    fn samples_live_inside_the_realized_set() {
        let cfg = small_config();
        for arch in &make_archetypes() {
            let rec = sample_user(1, arch, 7, &cfg);
            assert_eq!(rec.from_samples.len(), cfg.samples_per_user);
            for s in &rec.from_samples {
                assert!(rec.true_from.contains(s));
            }
        }
    }

    #[test]
    fn unrestricted_condition_scores_near_ceiling() {
        let cfg = DatagenConfig::default();
        for pid in 1..=cfg.n_participants {
            let rec = sample_user(pid, &make_archetypes()[0], 42, &cfg);
            for (v, name) in rec.scores.as_array().iter().zip(SCORE_FIELDS) {
                assert!(*v >= 0.9, "participant {pid} {name} = {v}");
            }
        }
    }

    #[test]
    fn noiseless_normative_intervals_score_one() {
        let normative = TrueFrom {
            intervals: make_archetypes()[0].joint_interval_means,
            coupling: 0.0,
        };
        let mut rng = stream_rng(0, 0, 0, 0);
        let s = score_model(&normative, 0.0, &mut rng);
        assert_eq!(s.as_array(), [1.0; 6]);
    }

    #[test]
    fn capped_elevation_limits_gross_movement() {
        let mut intervals = make_archetypes()[0].joint_interval_means;
        intervals[1] = (0.0, 60.0 * DEG);
        let capped = TrueFrom {
            intervals,
            coupling: 0.0,
        };
        let mut rng = stream_rng(1, 2, 3, 4);
        let s = score_model(&capped, 0.04, &mut rng);
        assert!(s.arat_gross < 0.5, "arat_gross = {}", s.arat_gross);
    }

    #[test]
    fn widening_intervals_never_lowers_expected_scores() {
        // Paired samples with shared noise: widen one joint interval and
        // compare componentwise.
        let arch = make_archetypes();
        for trial in 0..100u64 {
            let base_arch = &arch[(trial % 3 + 1) as usize];
            let cfg = small_config();
            let rec = sample_user(1, base_arch, trial, &cfg);
            let narrow = rec.true_from.clone();
            let mut wide = narrow.clone();
            let j = (trial % 4) as usize;
            wide.intervals[j].1 += 20.0 * DEG;
            let mut rng_a = stream_rng(trial, 1, 1, 1);
            let mut rng_b = stream_rng(trial, 1, 1, 1);
            let sa = score_model(&narrow, 0.04, &mut rng_a).as_array();
            let sb = score_model(&wide, 0.04, &mut rng_b).as_array();
            for (k, (a, b)) in sa.iter().zip(sb.iter()).enumerate() {
                assert!(
                    b + 1e-12 >= *a,
                    "trial {trial}: widening joint {j} lowered {} from {a} to {b}",
                    SCORE_FIELDS[k]
                );
            }
        }
    }

    #[test]
    fn default_dataset_layout_and_dominance() {
        let mut cfg = small_config();
        cfg.n_participants = 11;
        cfg.drop_cell = Some((11, 4));
        let ds = generate_dataset(&cfg, 42);
        assert_eq!(ds.records.len(), 43);
        assert!(ds.find((11, 4)).is_none());
        // Mean score vector for condition 1 dominates condition 3.
        let mean = |cid: u32| -> [f64; 6] {
            let rows: Vec<[f64; 6]> = ds
                .records
                .iter()
                .filter(|r| r.condition_id == cid)
                .map(|r| r.scores.as_array())
                .collect();
            let mut m = [0.0; 6];
            for row in &rows {
                for k in 0..6 {
                    m[k] += row[k] / rows.len() as f64;
                }
            }
            m
        };
        let (m1, m3) = (mean(1), mean(3));
        for k in 0..6 {
            assert!(m1[k] > m3[k], "component {k}: {} vs {}", m1[k], m3[k]);
        }
    }

    #[test]
    fn generation_is_order_independent() {
        let cfg = small_config();
        let a = generate_dataset(&cfg, 5);
        let b = generate_dataset(&cfg, 5);
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            assert_eq!(ra.key(), rb.key());
            assert_eq!(ra.from_samples, rb.from_samples);
            assert_eq!(ra.scores, rb.scores);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small_config(), 11);
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.records.len(), ds.records.len());
        for (a, b) in ds.records.iter().zip(back.records.iter()) {
            assert_eq!(a.key(), b.key());
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.true_from.intervals, b.true_from.intervals);
            assert_eq!(a.from_samples.len(), b.from_samples.len());
            for (sa, sb) in a.from_samples.iter().zip(b.from_samples.iter()) {
                assert!(sa.distance(sb) < 1e-8);
            }
        }
        // Writing what was read reproduces the files byte for byte.
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(&back, dir2.path()).unwrap();
        for rec in &back.records {
            let name = user_file_name(rec.participant_id, rec.condition_id);
            let x = std::fs::read(dir.path().join(&name)).unwrap();
            let y = std::fs::read(dir2.path().join(&name)).unwrap();
            assert_eq!(x, y, "{name} differs");
        }
    }

    #[test]
    fn read_rejects_out_of_range_score() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small_config(), 3);
        write_dataset(&ds, dir.path()).unwrap();
        let manifest_path = dir.path().join("dataset.json");
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["users"][0]["scores"]["arat_grip"] = serde_json::json!(1.2);
        std::fs::write(&manifest_path, serde_json::to_string(&value).unwrap()).unwrap();
        match read_dataset(dir.path()) {
            Err(DatagenError::Format { message, .. }) => {
                assert!(message.contains("arat_grip"), "message: {message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("dataset.json"), "").unwrap();
        match read_dataset(dir.path()) {
            Err(DatagenError::Format { message, .. }) => assert_eq!(message, "no records"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn read_reports_malformed_csv_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.n_participants = 1;
        cfg.samples_per_user = 5;
        let ds = generate_dataset(&cfg, 3);
        write_dataset(&ds, dir.path()).unwrap();
        let csv_path = dir.path().join(user_file_name(1, 1));
        let mut text = std::fs::read_to_string(&csv_path).unwrap();
        text.push_str("0.1,huh,0.2,0.3\n");
        std::fs::write(&csv_path, text).unwrap();
        match read_dataset(dir.path()) {
            Err(DatagenError::Format { file, message }) => {
                assert_eq!(file, user_file_name(1, 1));
                assert!(message.contains("line 7"), "message: {message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }
}

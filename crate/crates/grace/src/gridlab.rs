//! Builds the binary-classification dataset over joint space: the bounding
//! box of all observed samples, an endpoint-inclusive mesh grid over it, the
//! union of per-user feasible grid points, and per-user labels paired with
//! functional scores.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{ScoreVector, UserRecord};
use crate::kinematics::JointConfig;
use crate::Membership;

#[derive(Debug, Error)]
pub enum GridlabError {
    #[error("empty dataset: cannot compute a bounding volume")]
    EmptyDataset,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {file}: {message}")]
    Format { file: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> GridlabError {
    GridlabError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// An endpoint-inclusive mesh grid over a joint-space box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
    pub samples_per_dim: usize,
}

impl GridSpec {
    pub fn new(lo: [f64; 4], hi: [f64; 4], samples_per_dim: usize) -> Self {
        assert!(samples_per_dim >= 2, "need at least 2 samples per dim");
        for j in 0..4 {
            assert!(lo[j] < hi[j], "joint {j}: lo {} >= hi {}", lo[j], hi[j]);
        }
        Self {
            lo,
            hi,
            samples_per_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.samples_per_dim.pow(4)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn coord(&self, joint: usize, step: usize) -> f64 {
        let t = step as f64 / (self.samples_per_dim - 1) as f64;
        self.lo[joint] + (self.hi[joint] - self.lo[joint]) * t
    }

    /// Grid point at a row-major index (plane fastest-varying last).
    pub fn point(&self, index: usize) -> JointConfig {
        debug_assert!(index < self.len());
        let n = self.samples_per_dim;
        let i3 = index % n;
        let i2 = (index / n) % n;
        let i1 = (index / (n * n)) % n;
        let i0 = index / (n * n * n);
        JointConfig::from_array([
            self.coord(0, i0),
            self.coord(1, i1),
            self.coord(2, i2),
            self.coord(3, i3),
        ])
    }

    pub fn points(&self) -> impl Iterator<Item = JointConfig> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

/// Bounding volume over every user's samples: per-joint min/max, discretized
/// at the requested resolution.
pub fn compute_bound(
    records: &[UserRecord],
    samples_per_dim: usize,
) -> Result<GridSpec, GridlabError> {
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    let mut any = false;
    for rec in records {
        for s in &rec.from_samples {
            any = true;
            let a = s.as_array();
            for j in 0..4 {
                lo[j] = lo[j].min(a[j]);
                hi[j] = hi[j].max(a[j]);
            }
        }
    }
    if !any {
        return Err(GridlabError::EmptyDataset);
    }
    Ok(GridSpec::new(lo, hi, samples_per_dim))
}

/// Evaluates one membership function at every grid point, in index order.
pub fn membership_mask(grid: &GridSpec, membership: &(impl Membership + Sync)) -> Vec<bool> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| membership.contains(&grid.point(i)))
        .collect()
}

/// Indices of grid points feasible for at least one mask.
pub fn union_indices(masks: &[Vec<bool>]) -> Vec<u32> {
    assert!(!masks.is_empty(), "need at least one membership");
    let n = masks[0].len();
    (0..n)
        .filter(|&i| masks.iter().any(|m| m[i]))
        .map(|i| i as u32)
        .collect()
}

/// Grid points feasible for at least one user, in deterministic row-major
/// order.
pub fn compute_union(grid: &GridSpec, memberships: &[&(dyn Membership + Sync)]) -> Vec<JointConfig> {
    assert!(!memberships.is_empty(), "need at least one membership");
    let masks: Vec<Vec<bool>> = memberships
        .iter()
        .map(|m| {
            (0..grid.len())
                .into_par_iter()
                .map(|i| m.contains(&grid.point(i)))
                .collect()
        })
        .collect();
    union_indices(&masks)
        .into_iter()
        .map(|i| grid.point(i as usize))
        .collect()
}

/// One classification row: functional scores concatenated with a joint
/// configuration, labeled by one user's membership.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    /// [six scores; four joint angles].
    pub x: [f64; 10],
    pub y: bool,
    pub user_key: (u32, u32),
}

/// Labels every union point for one user.
pub fn label_user(
    union_points: &[JointConfig],
    membership: &dyn Membership,
    scores: &ScoreVector,
    user_key: (u32, u32),
) -> Vec<LabeledExample> {
    let s = scores.as_array();
    union_points
        .iter()
        .map(|theta| {
            let t = theta.as_array();
            let mut x = [0.0; 10];
            x[..6].copy_from_slice(&s);
            x[6..].copy_from_slice(&t);
            LabeledExample {
                x,
                y: membership.contains(theta),
                user_key,
            }
        })
        .collect()
}

/// Per-user labels over the shared union support.
#[derive(Debug, Clone)]
pub struct UserLabels {
    pub user_key: (u32, u32),
    pub condition_id: u32,
    pub scores: ScoreVector,
    /// One label per union point, in union order.
    pub labels: Vec<bool>,
}

/// The assembled classification dataset: a shared grid/union support plus one
/// label row-block per user, indexable by user key.
#[derive(Debug, Clone)]
pub struct ClassificationDataset {
    pub grid: GridSpec,
    pub union_indices: Vec<u32>,
    pub union_configs: Vec<JointConfig>,
    pub users: Vec<UserLabels>,
}

impl ClassificationDataset {
    pub fn user(&self, key: (u32, u32)) -> Option<&UserLabels> {
        self.users.iter().find(|u| u.user_key == key)
    }

    pub fn rows(&self) -> usize {
        self.users.len() * self.union_configs.len()
    }

    pub fn positive_fraction(&self) -> f64 {
        let total = self.rows();
        if total == 0 {
            return 0.0;
        }
        let pos: usize = self
            .users
            .iter()
            .map(|u| u.labels.iter().filter(|&&y| y).count())
            .sum();
        pos as f64 / total as f64
    }

    /// Expands one user's block into labeled examples.
    pub fn examples_for(&self, key: (u32, u32)) -> Option<Vec<LabeledExample>> {
        let user = self.user(key)?;
        let s = user.scores.as_array();
        Some(
            self.union_configs
                .iter()
                .zip(&user.labels)
                .map(|(theta, &y)| {
                    let t = theta.as_array();
                    let mut x = [0.0; 10];
                    x[..6].copy_from_slice(&s);
                    x[6..].copy_from_slice(&t);
                    LabeledExample {
                        x,
                        y,
                        user_key: key,
                    }
                })
                .collect(),
        )
    }
}

/// Builds the labeled dataset from records and their membership masks over
/// `grid`. `masks[i]` must correspond to `records[i]`.
pub fn assemble_from_masks(
    grid: &GridSpec,
    records: &[UserRecord],
    masks: &[Vec<bool>],
) -> ClassificationDataset {
    assert_eq!(records.len(), masks.len(), "one mask per record");
    let union = union_indices(masks);
    let union_configs: Vec<JointConfig> =
        union.iter().map(|&i| grid.point(i as usize)).collect();
    let users = records
        .iter()
        .zip(masks)
        .map(|(rec, mask)| UserLabels {
            user_key: rec.key(),
            condition_id: rec.condition_id,
            scores: rec.scores,
            labels: union.iter().map(|&i| mask[i as usize]).collect(),
        })
        .collect();
    ClassificationDataset {
        grid: grid.clone(),
        union_indices: union,
        union_configs,
        users,
    }
}

/// Computes masks and assembles in one step; memberships pair with records.
pub fn assemble(
    records: &[UserRecord],
    memberships: &[&(dyn Membership + Sync)],
    samples_per_dim: usize,
) -> Result<ClassificationDataset, GridlabError> {
    assert_eq!(records.len(), memberships.len(), "one membership per record");
    let grid = compute_bound(records, samples_per_dim)?;
    let masks: Vec<Vec<bool>> = memberships
        .iter()
        .map(|m| {
            (0..grid.len())
                .into_par_iter()
                .map(|i| m.contains(&grid.point(i)))
                .collect()
        })
        .collect();
    Ok(assemble_from_masks(&grid, records, masks.as_slice()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShardManifest {
    pub grid: GridSpec,
    pub dataset_hash: String,
    pub n_rows: usize,
    pub n_union_points: usize,
    pub positive_fraction: f64,
    pub shards: Vec<String>,
}

/// Streams the dataset to sharded CSV files plus a manifest. Rows are grouped
/// by user, `rows_per_shard` per file; floats use the shortest exact decimal
/// form.
pub fn write_shards(
    dataset: &ClassificationDataset,
    dir: &Path,
    rows_per_shard: usize,
    dataset_hash: &str,
) -> Result<ShardManifest, GridlabError> {
    assert!(rows_per_shard > 0);
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    const HEADER: &str = "pid,cid,s1,s2,s3,s4,s5,s6,plane,elev,rot,elbow,y\n";
    let mut shards = Vec::new();
    let mut buffer = String::new();
    let mut rows_in_shard = 0usize;
    let flush = |buffer: &mut String, shards: &mut Vec<String>| -> Result<(), GridlabError> {
        if buffer.is_empty() {
            return Ok(());
        }
        let name = format!("shard_{:04}.csv", shards.len());
        let path = dir.join(&name);
        let mut text = String::with_capacity(HEADER.len() + buffer.len());
        text.push_str(HEADER);
        text.push_str(buffer);
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        shards.push(name);
        buffer.clear();
        Ok(())
    };
    for user in &dataset.users {
        let (pid, cid) = user.user_key;
        let s = user.scores.as_array();
        for (theta, &y) in dataset.union_configs.iter().zip(&user.labels) {
            let t = theta.as_array();
            write!(
                buffer,
                "{pid},{cid},{},{},{},{},{},{},{},{},{},{},{}\n",
                s[0],
                s[1],
                s[2],
                s[3],
                s[4],
                s[5],
                t[0],
                t[1],
                t[2],
                t[3],
                u8::from(y)
            )
            .unwrap();
            rows_in_shard += 1;
            if rows_in_shard == rows_per_shard {
                flush(&mut buffer, &mut shards)?;
                rows_in_shard = 0;
            }
        }
    }
    flush(&mut buffer, &mut shards)?;
    let manifest = ShardManifest {
        grid: dataset.grid.clone(),
        dataset_hash: dataset_hash.to_string(),
        n_rows: dataset.rows(),
        n_union_points: dataset.union_configs.len(),
        positive_fraction: dataset.positive_fraction(),
        shards,
    };
    let path = dir.join("grid_manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

/// Reads sharded rows back as labeled examples, in shard order.
pub fn read_shards(dir: &Path) -> Result<(ShardManifest, Vec<LabeledExample>), GridlabError> {
    let manifest_path = dir.join("grid_manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: ShardManifest =
        serde_json::from_str(&text).map_err(|e| GridlabError::Format {
            file: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut rows = Vec::with_capacity(manifest.n_rows);
    for shard in &manifest.shards {
        let path = dir.join(shard);
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 13 {
                return Err(GridlabError::Format {
                    file: shard.clone(),
                    message: format!("line {}: expected 13 columns", lineno + 1),
                });
            }
            let parse = |tok: &str| -> Result<f64, GridlabError> {
                tok.parse().map_err(|_| GridlabError::Format {
                    file: shard.clone(),
                    message: format!("line {}: bad number {tok:?}", lineno + 1),
                })
            };
            let pid = parts[0].parse().map_err(|_| GridlabError::Format {
                file: shard.clone(),
                message: format!("line {}: bad participant id", lineno + 1),
            })?;
            let cid = parts[1].parse().map_err(|_| GridlabError::Format {
                file: shard.clone(),
                message: format!("line {}: bad condition id", lineno + 1),
            })?;
            let mut x = [0.0; 10];
            for (k, v) in x.iter_mut().enumerate() {
                *v = parse(parts[2 + k])?;
            }
            let y = match parts[12] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(GridlabError::Format {
                        file: shard.clone(),
                        message: format!("line {}: bad label {other:?}", lineno + 1),
                    });
                }
            };
            rows.push(LabeledExample {
                x,
                y,
                user_key: (pid, cid),
            });
        }
    }
    Ok((manifest, rows))
}

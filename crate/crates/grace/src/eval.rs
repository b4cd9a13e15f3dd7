//! Cross-validation scenarios over the labeled grid: normalized Matthews
//! correlation, fold enumeration (leave-one-user/participant/condition-out
//! and within-condition), per-fold retraining with the union support rebuilt
//! from training users only, and a label-noise oracle comparing each user's
//! sample completion against the synthetic ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{stream_rng, Dataset};
use crate::gridlab::{assemble_from_masks, compute_bound, membership_mask, union_indices, GridSpec};
use crate::model::{
    train_method, ClassifierConfig, EncoderConfig, FeasibilityModel, Method, UserInfo,
};
use crate::ocsvm::{fit_detailed, FromModel, OcsvmError, OcsvmParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scenario {scenario} needs {needed}, found {found}")]
    InsufficientFolds {
        scenario: &'static str,
        needed: &'static str,
        found: usize,
    },
    #[error("sample completion failed for user ({0}, {1}): {2}")]
    Completion(u32, u32, OcsvmError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Grid(#[from] crate::gridlab::GridlabError),
}

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }
}

/// Normalized Matthews correlation: 1.0 perfect, 0.5 chance-level. The
/// `degenerate` flag marks inputs where the coefficient is undefined (a
/// single ground-truth class or a constant predictor), reported as 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmcc {
    pub value: f64,
    pub degenerate: bool,
}

pub fn nmcc(c: &ConfusionCounts) -> Nmcc {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let denom2 = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if c.total() == 0 || denom2 == 0.0 {
        return Nmcc {
            value: 0.5,
            degenerate: true,
        };
    }
    let mcc = (tp * tn - fp * fn_) / denom2.sqrt();
    Nmcc {
        value: (mcc + 1.0) / 2.0,
        degenerate: false,
    }
}

/// Convenience over parallel prediction/truth masks.
pub fn nmcc_of_masks(predicted: &[bool], actual: &[bool]) -> Nmcc {
    assert_eq!(predicted.len(), actual.len());
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        c.add(p, a);
    }
    nmcc(&c)
}

/// The cross-validation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    LooUser,
    LooParticipant,
    LooCondition,
    WithinCondition,
}

impl Scenario {
    pub fn tag(&self) -> &'static str {
        match self {
            Scenario::LooUser => "loo-user",
            Scenario::LooParticipant => "loo-participant",
            Scenario::LooCondition => "loo-condition",
            Scenario::WithinCondition => "within-condition",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "loo-user" => Some(Scenario::LooUser),
            "loo-participant" => Some(Scenario::LooParticipant),
            "loo-condition" => Some(Scenario::LooCondition),
            "within-condition" => Some(Scenario::WithinCondition),
            _ => None,
        }
    }

    pub fn all() -> [Scenario; 4] {
        [
            Scenario::LooUser,
            Scenario::LooParticipant,
            Scenario::LooCondition,
            Scenario::WithinCondition,
        ]
    }

    fn index(&self) -> u64 {
        Scenario::all().iter().position(|s| s == self).unwrap() as u64
    }
}

/// One train/test split over record indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Enumerates folds from (participant, condition) keys, in deterministic
/// order.
pub fn enumerate_folds(keys: &[(u32, u32)], scenario: Scenario) -> Result<Vec<Fold>, EvalError> {
    let all: Vec<usize> = (0..keys.len()).collect();
    let folds: Vec<Fold> = match scenario {
        Scenario::LooUser => all
            .iter()
            .map(|&i| Fold {
                train: all.iter().copied().filter(|&j| j != i).collect(),
                test: vec![i],
            })
            .collect(),
        Scenario::LooParticipant => {
            let mut pids: Vec<u32> = keys.iter().map(|k| k.0).collect();
            pids.sort_unstable();
            pids.dedup();
            pids.iter()
                .map(|&pid| Fold {
                    train: all.iter().copied().filter(|&j| keys[j].0 != pid).collect(),
                    test: all.iter().copied().filter(|&j| keys[j].0 == pid).collect(),
                })
                .collect()
        }
        Scenario::LooCondition => {
            let mut cids: Vec<u32> = keys.iter().map(|k| k.1).collect();
            cids.sort_unstable();
            cids.dedup();
            cids.iter()
                .map(|&cid| Fold {
                    train: all.iter().copied().filter(|&j| keys[j].1 != cid).collect(),
                    test: all.iter().copied().filter(|&j| keys[j].1 == cid).collect(),
                })
                .collect()
        }
        Scenario::WithinCondition => {
            let mut cids: Vec<u32> = keys.iter().map(|k| k.1).collect();
            cids.sort_unstable();
            cids.dedup();
            let mut out = Vec::new();
            for cid in cids {
                let members: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&j| keys[j].1 == cid)
                    .collect();
                if members.len() < 2 {
                    continue;
                }
                for &held in &members {
                    out.push(Fold {
                        train: members.iter().copied().filter(|&j| j != held).collect(),
                        test: vec![held],
                    });
                }
            }
            out
        }
    };
    let ok = match scenario {
        Scenario::LooUser | Scenario::LooParticipant => folds.len() >= 2,
        Scenario::LooCondition => folds.len() >= 2,
        Scenario::WithinCondition => !folds.is_empty(),
    };
    if !ok || folds.iter().any(|f| f.train.is_empty() || f.test.is_empty()) {
        return Err(EvalError::InsufficientFolds {
            scenario: scenario.tag(),
            needed: "at least two non-empty train/test splits",
            found: folds.len(),
        });
    }
    Ok(folds)
}

/// Dataset plus the expensive per-user precomputations shared across folds
/// and seeds: sample completions, their grid masks, and ground-truth masks.
pub struct EvalContext {
    pub dataset: Dataset,
    pub grid: GridSpec,
    pub completions: Vec<FromModel>,
    /// Completion membership per record over the full grid.
    pub masks: Vec<Vec<bool>>,
    /// Synthetic ground-truth membership per record over the full grid.
    pub true_masks: Vec<Vec<bool>>,
}

impl EvalContext {
    /// Fits every user's completion and evaluates the grid masks. The grid
    /// geometry comes from the full dataset; union supports are rebuilt per
    /// training split from these cached masks.
    pub fn build(
        dataset: Dataset,
        samples_per_dim: usize,
        ocsvm: &OcsvmParams,
    ) -> Result<Self, EvalError> {
        let grid = compute_bound(&dataset.records, samples_per_dim)?;
        let completions: Vec<FromModel> = dataset
            .records
            .par_iter()
            .map(|rec| {
                fit_detailed(&rec.from_samples, ocsvm)
                    .map(|(m, _)| m)
                    .map_err(|e| EvalError::Completion(rec.participant_id, rec.condition_id, e))
            })
            .collect::<Result<_, _>>()?;
        let masks: Vec<Vec<bool>> = completions
            .par_iter()
            .map(|m| membership_mask(&grid, m))
            .collect();
        let true_masks: Vec<Vec<bool>> = dataset
            .records
            .par_iter()
            .map(|rec| membership_mask(&grid, &rec.true_from))
            .collect();
        Ok(Self {
            dataset,
            grid,
            completions,
            masks,
            true_masks,
        })
    }

    /// Test-only constructor from precomputed parts.
    pub fn from_parts(
        dataset: Dataset,
        grid: GridSpec,
        completions: Vec<FromModel>,
        masks: Vec<Vec<bool>>,
        true_masks: Vec<Vec<bool>>,
    ) -> Self {
        Self {
            dataset,
            grid,
            completions,
            masks,
            true_masks,
        }
    }

    pub fn keys(&self) -> Vec<(u32, u32)> {
        self.dataset.records.iter().map(|r| r.key()).collect()
    }
}

/// One fold x seed measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub nmcc: f64,
    pub degenerate: bool,
    pub n_test: u64,
    pub positives: u64,
}

/// All measurements for one (scenario, method) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    pub std: f64,
}

impl ScenarioResult {
    fn from_folds(
        scenario: &str,
        method: &str,
        seeds: &[u64],
        mut folds: Vec<FoldResult>,
    ) -> Self {
        folds.sort_by_key(|f| (f.seed, f.fold));
        let n = folds.len() as f64;
        let mean = folds.iter().map(|f| f.nmcc).sum::<f64>() / n;
        let var = folds.iter().map(|f| (f.nmcc - mean).powi(2)).sum::<f64>() / n;
        Self {
            scenario: scenario.to_string(),
            method: method.to_string(),
            seeds: seeds.to_vec(),
            folds,
            mean,
            std: var.sqrt(),
        }
    }

    /// Mean nMCC per fold across seeds, keyed by fold index.
    pub fn per_fold_means(&self) -> Vec<(usize, f64)> {
        let mut fold_ids: Vec<usize> = self.folds.iter().map(|f| f.fold).collect();
        fold_ids.sort_unstable();
        fold_ids.dedup();
        fold_ids
            .into_iter()
            .map(|fid| {
                let vals: Vec<f64> = self
                    .folds
                    .iter()
                    .filter(|f| f.fold == fid)
                    .map(|f| f.nmcc)
                    .collect();
                (fid, vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// CSV rows matching the results-file schema.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("fold,seed,nmcc,n_test,positives\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.fold, f.seed, f.nmcc, f.n_test, f.positives
            ));
        }
        out
    }
}

/// Runs one scenario for one method: per seed and fold, rebuild the union
/// support from training users, retrain, and score the held-out users' grid
/// labels at the 0.5 operating point.
pub fn run_scenario(
    ctx: &EvalContext,
    scenario: Scenario,
    method: Method,
    seeds: &[u64],
    encoder_config: &EncoderConfig,
    classifier_config: &ClassifierConfig,
) -> Result<ScenarioResult, EvalError> {
    let keys = ctx.keys();
    let folds = enumerate_folds(&keys, scenario)?;
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&s| (0..folds.len()).map(move |f| (s, f)))
        .collect();
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(seed, fold_idx)| {
            let fold = &folds[fold_idx];
            run_fold(
                ctx,
                scenario,
                method,
                seed,
                fold_idx,
                fold,
                encoder_config,
                classifier_config,
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(ScenarioResult::from_folds(
        scenario.tag(),
        method.tag(),
        seeds,
        results,
    ))
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    ctx: &EvalContext,
    scenario: Scenario,
    method: Method,
    seed: u64,
    fold_idx: usize,
    fold: &Fold,
    encoder_config: &EncoderConfig,
    classifier_config: &ClassifierConfig,
) -> Result<FoldResult, EvalError> {
    let train_records: Vec<crate::datagen::UserRecord> = fold
        .train
        .iter()
        .map(|&i| ctx.dataset.records[i].clone())
        .collect();
    let train_masks: Vec<Vec<bool>> =
        fold.train.iter().map(|&i| ctx.masks[i].clone()).collect();
    let cd = assemble_from_masks(&ctx.grid, &train_records, &train_masks);
    if cd.union_configs.is_empty() {
        return Err(EvalError::Model(crate::model::ModelError::EmptyDataset));
    }
    // Distinct stream per (scenario, fold, seed) so scheduling cannot matter.
    let mut rng = stream_rng(seed, scenario.index(), fold_idx as u64, 1);
    let train_seed: u64 = rand::Rng::random(&mut rng);
    let model = train_method(&cd, method, encoder_config, classifier_config, train_seed)?;

    let mut counts = ConfusionCounts::default();
    for &t in &fold.test {
        let rec = &ctx.dataset.records[t];
        let user = UserInfo {
            scores: rec.scores,
            condition_id: rec.condition_id,
        };
        let probs = model.probs(&user, &cd.union_configs);
        let truth = &ctx.masks[t];
        for (k, &idx) in cd.union_indices.iter().enumerate() {
            counts.add(probs[k] >= 0.5, truth[idx as usize]);
        }
    }
    let m = nmcc(&counts);
    Ok(FoldResult {
        fold: fold_idx,
        seed,
        nmcc: m.value,
        degenerate: m.degenerate,
        n_test: counts.total(),
        positives: counts.positives(),
    })
}

/// Label-noise reference: each user's sample completion scored against the
/// synthetic ground truth over the all-users union support. Quantifies the
/// noise the completion step introduces into the grid labels; deterministic,
/// so no seed axis.
pub fn oracle_nmcc(ctx: &EvalContext) -> ScenarioResult {
    let union = union_indices(&ctx.masks);
    let folds: Vec<FoldResult> = ctx
        .dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, _rec)| {
            let mut counts = ConfusionCounts::default();
            for &idx in &union {
                counts.add(ctx.masks[i][idx as usize], ctx.true_masks[i][idx as usize]);
            }
            let m = nmcc(&counts);
            FoldResult {
                fold: i,
                seed: 0,
                nmcc: m.value,
                degenerate: m.degenerate,
                n_test: counts.total(),
                positives: counts.positives(),
            }
        })
        .collect();
    ScenarioResult::from_folds("completion-oracle", "ocsvm-vs-truth", &[0], folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn nmcc_examples() {
        let perfect = ConfusionCounts {
            tp: 40,
            fp: 0,
            tn: 60,
            fn_: 0,
        };
        assert_eq!(nmcc(&perfect).value, 1.0);

        let coin = ConfusionCounts {
            tp: 25,
            fp: 25,
            tn: 25,
            fn_: 25,
        };
        assert_eq!(nmcc(&coin).value, 0.5);
        assert!(!nmcc(&coin).degenerate);

        let inverted = ConfusionCounts {
            tp: 0,
            fp: 50,
            tn: 0,
            fn_: 50,
        };
        assert_eq!(nmcc(&inverted).value, 0.0);
    }

    #[test]
    fn nmcc_degenerate_inputs_report_half() {
        let single_class = ConfusionCounts {
            tp: 10,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        let m = nmcc(&single_class);
        assert_eq!(m.value, 0.5);
        assert!(m.degenerate);
        let empty = ConfusionCounts::default();
        assert!(nmcc(&empty).degenerate);
    }

    #[test]
    fn nmcc_is_invariant_under_class_swap() {
        let mut rng = stream_rng(5, 0, 0, 0);
        for _ in 0..200 {
            let c = ConfusionCounts {
                tp: rng.random_range(0..100),
                fp: rng.random_range(0..100),
                tn: rng.random_range(0..100),
                fn_: rng.random_range(0..100),
            };
            let swapped = ConfusionCounts {
                tp: c.tn,
                fp: c.fn_,
                tn: c.tp,
                fn_: c.fp,
            };
            let a = nmcc(&c);
            let b = nmcc(&swapped);
            assert!((a.value - b.value).abs() < 1e-12);
            assert_eq!(a.degenerate, b.degenerate);
        }
    }

    #[test]
    fn random_predictor_scores_near_half() {
        for seed in 0..5u64 {
            let mut rng = stream_rng(seed, 1, 2, 3);
            let actual: Vec<bool> = (0..2000).map(|_| rng.random_range(0.0..1.0) < 0.3).collect();
            let predicted: Vec<bool> = (0..2000).map(|_| rng.random_range(0..2u32) == 1).collect();
            let m = nmcc_of_masks(&predicted, &actual);
            assert!(
                (m.value - 0.5).abs() < 0.05,
                "seed {seed}: nmcc {}",
                m.value
            );
        }
    }

    fn toy_keys() -> Vec<(u32, u32)> {
        let mut keys = Vec::new();
        for pid in 1..=11u32 {
            for cid in 1..=4u32 {
                if (pid, cid) == (11, 4) {
                    continue;
                }
                keys.push((pid, cid));
            }
        }
        keys
    }

    #[test]
    fn fold_enumeration_counts() {
        let keys = toy_keys();
        assert_eq!(enumerate_folds(&keys, Scenario::LooUser).unwrap().len(), 43);
        assert_eq!(
            enumerate_folds(&keys, Scenario::LooParticipant).unwrap().len(),
            11
        );
        assert_eq!(
            enumerate_folds(&keys, Scenario::LooCondition).unwrap().len(),
            4
        );
        // 11 folds for conditions 1-3, 10 for the condition missing a cell.
        assert_eq!(
            enumerate_folds(&keys, Scenario::WithinCondition).unwrap().len(),
            43
        );
    }

    #[test]
    fn folds_partition_users_disjointly() {
        let keys = toy_keys();
        for scenario in Scenario::all() {
            let folds = enumerate_folds(&keys, scenario).unwrap();
            let mut test_seen = vec![0usize; keys.len()];
            for f in &folds {
                for &t in &f.test {
                    test_seen[t] += 1;
                    assert!(!f.train.contains(&t), "{}: train/test overlap", scenario.tag());
                }
            }
            match scenario {
                Scenario::WithinCondition | Scenario::LooUser => {
                    assert!(test_seen.iter().all(|&c| c == 1), "{}", scenario.tag());
                }
                _ => {
                    assert!(test_seen.iter().all(|&c| c == 1), "{}", scenario.tag());
                }
            }
        }
    }

    #[test]
    fn insufficient_structure_is_reported() {
        let keys = vec![(1, 1), (2, 1)];
        assert!(matches!(
            enumerate_folds(&keys, Scenario::LooCondition),
            Err(EvalError::InsufficientFolds { .. })
        ));
        let single = vec![(1, 1)];
        assert!(matches!(
            enumerate_folds(&single, Scenario::LooUser),
            Err(EvalError::InsufficientFolds { .. })
        ));
    }

    #[test]
    fn scenario_and_method_tags_parse() {
        for s in Scenario::all() {
            assert_eq!(Scenario::parse(s.tag()), Some(s));
        }
        assert_eq!(Scenario::parse("bogus"), None);
    }

    #[test]
    fn csv_rows_are_sorted_and_complete() {
        let folds = vec![
            FoldResult {
                fold: 1,
                seed: 7,
                nmcc: 0.75,
                degenerate: false,
                n_test: 100,
                positives: 40,
            },
            FoldResult {
                fold: 0,
                seed: 7,
                nmcc: 0.5,
                degenerate: false,
                n_test: 100,
                positives: 50,
            },
        ];
        let r = ScenarioResult::from_folds("loo-user", "grace", &[7], folds);
        assert_eq!(r.folds[0].fold, 0);
        let csv = r.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "fold,seed,nmcc,n_test,positives");
        assert_eq!(lines[1], "0,7,0.5,100,50");
        assert!((r.mean - 0.625).abs() < 1e-12);
    }
}

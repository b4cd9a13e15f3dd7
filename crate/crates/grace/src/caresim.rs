//! Four simulated caregiving tasks (handover, rehab, dressing, bathing) with
//! policies that consume feasibility predictions. Policies pick the candidate
//! that maximizes the user's excursion from rest subject to predicted
//! reachability; the synthetic ground-truth set plays the role of the real
//! world when scoring success, and agency is normalized against an oracle
//! policy granted that ground truth.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{stream_rng, UserRecord};
use crate::gridlab::GridSpec;
use crate::kinematics::{forward_hand_position, point_distance, ArmGeometry, JointConfig};
use crate::model::{FeasibilityModel, GracePredictor, UserInfo};
use crate::Membership;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Env {
    Handover,
    Rehab,
    Dressing,
    Bathing,
}

impl Env {
    pub fn tag(&self) -> &'static str {
        match self {
            Env::Handover => "handover",
            Env::Rehab => "rehab",
            Env::Dressing => "dressing",
            Env::Bathing => "bathing",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "handover" => Some(Env::Handover),
            "rehab" => Some(Env::Rehab),
            "dressing" => Some(Env::Dressing),
            "bathing" => Some(Env::Bathing),
            _ => None,
        }
    }

    pub fn all() -> [Env; 4] {
        [Env::Handover, Env::Rehab, Env::Dressing, Env::Bathing]
    }

    fn index(&self) -> u64 {
        Env::all().iter().position(|e| e == self).unwrap() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    GraceOptimistic,
    GraceConservative,
    HeuristicOptimistic,
    HeuristicConservative,
    Oracle,
}

impl PolicyKind {
    pub fn tag(&self) -> &'static str {
        match self {
            PolicyKind::GraceOptimistic => "grace-opt",
            PolicyKind::GraceConservative => "grace-cons",
            PolicyKind::HeuristicOptimistic => "heur-opt",
            PolicyKind::HeuristicConservative => "heur-cons",
            PolicyKind::Oracle => "oracle",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "grace-opt" => Some(PolicyKind::GraceOptimistic),
            "grace-cons" => Some(PolicyKind::GraceConservative),
            "heur-opt" => Some(PolicyKind::HeuristicOptimistic),
            "heur-cons" => Some(PolicyKind::HeuristicConservative),
            "oracle" => Some(PolicyKind::Oracle),
            _ => None,
        }
    }

    pub fn all() -> [PolicyKind; 5] {
        [
            PolicyKind::GraceOptimistic,
            PolicyKind::GraceConservative,
            PolicyKind::HeuristicOptimistic,
            PolicyKind::HeuristicConservative,
            PolicyKind::Oracle,
        ]
    }
}

/// Task payload per environment: workspace positions for handover/dressing,
/// joint configurations for rehab, a single target configuration for bathing.
#[derive(Debug, Clone)]
pub enum TaskKind {
    Positions(Vec<[f64; 3]>),
    Configs(Vec<JointConfig>),
    Target(JointConfig),
}

#[derive(Debug, Clone)]
pub struct SimTask {
    pub env: Env,
    pub user_key: (u32, u32),
    pub seed: u64,
    pub index: usize,
    pub kind: TaskKind,
}

/// What a policy decided for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Candidate(usize),
    Ask,
    Move,
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyDecision {
    pub policy: PolicyKind,
    pub choice: Choice,
}

#[derive(Debug, Clone, Copy)]
pub struct TrialResult {
    pub decision: PolicyDecision,
    pub success: bool,
    pub agency_raw: f64,
    /// Present only when the oracle achieved positive agency on this task.
    pub agency_norm: Option<f64>,
}

/// Spatial hash over workspace points for nearest-within-tolerance queries.
pub struct WorkspaceIndex {
    cell: f64,
    map: HashMap<(i64, i64, i64), Vec<u32>>,
    points: Vec<[f64; 3]>,
}

impl WorkspaceIndex {
    pub fn build(points: Vec<[f64; 3]>, cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut map: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, map, points }
    }

    fn key(p: &[f64; 3], cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when any indexed point lies within `tol` of `pos`. Exact as long
    /// as `tol` does not exceed the cell size.
    pub fn any_within(&self, pos: &[f64; 3], tol: f64) -> bool {
        debug_assert!(tol <= self.cell + 1e-12);
        let (kx, ky, kz) = Self::key(pos, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.map.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in bucket {
                            if point_distance(&self.points[i as usize], pos) <= tol {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

/// True when some probe configuration accepted by `membership` puts the
/// wrist within `tol` of `position`. Brute-force reference form of the
/// workspace query.
pub fn reachable_position(
    membership: &dyn Membership,
    probe: &[JointConfig],
    position: &[f64; 3],
    geom: &ArmGeometry,
    tol: f64,
) -> bool {
    assert!(tol > 0.0);
    probe.iter().any(|theta| {
        membership.contains(theta)
            && point_distance(&forward_hand_position(theta, geom), position) <= tol
    })
}

/// A policy's view of one user's reach, in joint space and workspace.
pub trait ReachView {
    fn feasible_config(&self, theta: &JointConfig) -> bool;
    fn reachable_position(&self, pos: &[f64; 3]) -> bool;
}

/// Reach view backed by a probe set filtered through a predicate, with the
/// accepted wrist positions spatially indexed.
pub struct ProbeReach<F: Fn(&JointConfig) -> bool> {
    accept: F,
    index: WorkspaceIndex,
    tol: f64,
}

impl<F: Fn(&JointConfig) -> bool> ProbeReach<F> {
    pub fn build(probe_fk: &[(JointConfig, [f64; 3])], accept: F, tol: f64) -> Self {
        let accepted: Vec<[f64; 3]> = probe_fk
            .iter()
            .filter(|(cfg, _)| accept(cfg))
            .map(|(_, p)| *p)
            .collect();
        Self {
            accept,
            index: WorkspaceIndex::build(accepted, tol),
            tol,
        }
    }
}

impl<F: Fn(&JointConfig) -> bool> ReachView for ProbeReach<F> {
    fn feasible_config(&self, theta: &JointConfig) -> bool {
        (self.accept)(theta)
    }

    fn reachable_position(&self, pos: &[f64; 3]) -> bool {
        self.index.any_within(pos, self.tol)
    }
}

/// Spherical heuristic around the rest wrist position: workspace membership
/// is the sphere itself, joint membership maps through forward kinematics.
pub struct SphereReach {
    pub rest_wrist: [f64; 3],
    pub radius: f64,
    geom: ArmGeometry,
}

impl SphereReach {
    pub fn new(radius: f64, geom: ArmGeometry) -> Self {
        Self {
            rest_wrist: forward_hand_position(&JointConfig::rest(), &geom),
            radius,
            geom,
        }
    }
}

impl ReachView for SphereReach {
    fn feasible_config(&self, theta: &JointConfig) -> bool {
        let p = forward_hand_position(theta, &self.geom);
        point_distance(&p, &self.rest_wrist) <= self.radius
    }

    fn reachable_position(&self, pos: &[f64; 3]) -> bool {
        point_distance(pos, &self.rest_wrist) <= self.radius
    }
}

/// Simulation settings; distances in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_tasks: usize,
    pub candidates_per_task: usize,
    pub position_tolerance: f64,
    pub annulus_min: f64,
    pub annulus_max: f64,
    pub heuristic_optimistic_radius: f64,
    pub heuristic_conservative_radius: f64,
    /// Bathing targets are drawn from arm poses whose wrist excursion from
    /// rest falls in this band (bed bathing repositions the arm locally).
    pub bathing_min_excursion: f64,
    pub bathing_max_excursion: f64,
    pub geometry: ArmGeometry,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tasks: 100,
            candidates_per_task: 8,
            position_tolerance: 0.05,
            annulus_min: 0.05,
            annulus_max: 0.55,
            heuristic_optimistic_radius: 0.30,
            heuristic_conservative_radius: 0.10,
            bathing_min_excursion: 0.05,
            bathing_max_excursion: 0.35,
            geometry: ArmGeometry::default(),
        }
    }
}

fn rest_wrist(geom: &ArmGeometry) -> [f64; 3] {
    forward_hand_position(&JointConfig::rest(), geom)
}

fn uniform_sphere_dir(rng: &mut impl rand::Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Candidate directions for handover/dressing: objects are presented in
/// front of the user at or above hand height, never underneath or behind
/// the resting hand. Forward is -z in the arm frame.
fn presentation_dir(rng: &mut impl rand::Rng) -> [f64; 3] {
    loop {
        let d = uniform_sphere_dir(rng);
        if d[1] >= -0.25 && d[2] <= 0.1 {
            return d;
        }
    }
}

/// Attempts after which dressing task generation stops demanding a truly
/// dressable candidate (a user whose arm cannot straighten has none).
const DRESSING_RESAMPLE_CAP: usize = 60;

/// Builds the tasks for one (env, user, seed) triple. Handover/dressing and
/// rehab candidate sets are resampled until at least one candidate is truly
/// available to the user, so the oracle policy always has a workable option;
/// dressing additionally requires a candidate the user can extend through
/// (up to a resample cap), and the rehab set always includes the rest
/// configuration. Rehab stretches are drawn from `union_indices` (the
/// labeled support: poses someone can hold) and bathing poses from
/// `bathing_targets`.
pub fn make_tasks(
    env: Env,
    user: &UserRecord,
    world: &dyn ReachView,
    grid: &GridSpec,
    union_indices: &[u32],
    bathing_targets: &[u32],
    config: &SimConfig,
    seed: u64,
) -> Vec<SimTask> {
    let user_idx = ((user.participant_id as u64) << 8) | user.condition_id as u64;
    let rest = rest_wrist(&config.geometry);
    let reach = config.geometry.reach();
    let shoulder = config.geometry.shoulder_origin;
    (0..config.n_tasks)
        .map(|task_idx| {
            let mut rng = stream_rng(seed, env.index(), (user_idx << 20) | task_idx as u64, 2);
            let kind = match env {
                Env::Handover | Env::Dressing => {
                    let dressable = |p: &[f64; 3]| {
                        world.reachable_position(p)
                            && world.feasible_config(&straight_arm_config(p, &config.geometry))
                    };
                    let mut positions;
                    let mut attempts = 0usize;
                    loop {
                        attempts += 1;
                        positions = Vec::with_capacity(config.candidates_per_task);
                        while positions.len() < config.candidates_per_task {
                            let dir = presentation_dir(&mut rng);
                            let r = rng.random_range(config.annulus_min..config.annulus_max);
                            let p = [
                                rest[0] + r * dir[0],
                                rest[1] + r * dir[1],
                                rest[2] + r * dir[2],
                            ];
                            if point_distance(&p, &shoulder) <= reach {
                                positions.push(p);
                            }
                        }
                        let workable = if env == Env::Dressing && attempts <= DRESSING_RESAMPLE_CAP
                        {
                            positions.iter().any(|p| dressable(p))
                        } else {
                            positions.iter().any(|p| world.reachable_position(p))
                        };
                        if workable {
                            break;
                        }
                    }
                    TaskKind::Positions(positions)
                }
                Env::Rehab => {
                    let mut configs;
                    loop {
                        configs = Vec::with_capacity(config.candidates_per_task);
                        configs.push(JointConfig::rest());
                        while configs.len() < config.candidates_per_task {
                            let pick = rng.random_range(0..union_indices.len());
                            configs.push(grid.point(union_indices[pick] as usize));
                        }
                        if configs.iter().any(|c| world.feasible_config(c)) {
                            break;
                        }
                    }
                    TaskKind::Configs(configs)
                }
                Env::Bathing => {
                    let pick = rng.random_range(0..bathing_targets.len());
                    TaskKind::Target(grid.point(bathing_targets[pick] as usize))
                }
            };
            SimTask {
                env,
                user_key: user.key(),
                seed,
                index: task_idx,
                kind,
            }
        })
        .collect()
}

fn pick_max_by(
    candidates: usize,
    feasible: impl Fn(usize) -> bool,
    score: impl Fn(usize) -> f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..candidates {
        if !feasible(i) {
            continue;
        }
        let s = score(i);
        if best.map_or(true, |(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best
}

fn pick_min_by(candidates: usize, score: impl Fn(usize) -> f64) -> (usize, f64) {
    let mut best = (0, score(0));
    for i in 1..candidates {
        let s = score(i);
        if s < best.1 {
            best = (i, s);
        }
    }
    best
}

/// Handover: choose the predicted-reachable position farthest from rest;
/// fall back to the closest position (agency 0) when none is predicted
/// reachable. Success is true reachability of the chosen position.
pub fn run_handover(
    task: &SimTask,
    policy: PolicyKind,
    view: &dyn ReachView,
    world: &dyn ReachView,
    config: &SimConfig,
) -> TrialResult {
    let TaskKind::Positions(positions) = &task.kind else {
        panic!("handover task must carry positions");
    };
    let rest = rest_wrist(&config.geometry);
    let excursion = |i: usize| point_distance(&positions[i], &rest);
    let (choice, agency_raw) =
        match pick_max_by(positions.len(), |i| view.reachable_position(&positions[i]), excursion) {
            Some(pick) => pick,
            None => (pick_min_by(positions.len(), excursion).0, 0.0),
        };
    TrialResult {
        decision: PolicyDecision {
            policy,
            choice: Choice::Candidate(choice),
        },
        success: world.reachable_position(&positions[choice]),
        agency_raw,
        agency_norm: None,
    }
}

/// Rehab: choose the predicted-feasible configuration with maximal
/// joint-space excursion from rest; fall back to the closest candidate.
/// Success is true membership of the chosen configuration.
pub fn run_rehab(
    task: &SimTask,
    policy: PolicyKind,
    view: &dyn ReachView,
    world: &dyn ReachView,
    _config: &SimConfig,
) -> TrialResult {
    let TaskKind::Configs(configs) = &task.kind else {
        panic!("rehab task must carry joint configurations");
    };
    let rest = JointConfig::rest();
    let excursion = |i: usize| configs[i].distance(&rest);
    let (choice, agency_raw) =
        match pick_max_by(configs.len(), |i| view.feasible_config(&configs[i]), excursion) {
            Some(pick) => pick,
            None => (pick_min_by(configs.len(), excursion).0, 0.0),
        };
    TrialResult {
        decision: PolicyDecision {
            policy,
            choice: Choice::Candidate(choice),
        },
        success: world.feasible_config(&configs[choice]),
        agency_raw,
        agency_norm: None,
    }
}

/// The straightened-arm configuration (elbow at zero, neutral rotation)
/// pointing from the shoulder through `pos`.
pub fn straight_arm_config(pos: &[f64; 3], geom: &ArmGeometry) -> JointConfig {
    let o = geom.shoulder_origin;
    let d = [pos[0] - o[0], pos[1] - o[1], pos[2] - o[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n < 1e-12 {
        return JointConfig::rest();
    }
    let dir = [d[0] / n, d[1] / n, d[2] / n];
    let elevation = (-dir[1]).clamp(-1.0, 1.0).acos();
    let plane = if elevation.sin().abs() < 1e-8 {
        0.0
    } else {
        f64::atan2(-dir[0], -dir[2])
    };
    JointConfig::new(plane, elevation, 0.0, 0.0)
}

/// Dressing: handover-style position choice, but success additionally
/// requires the straightened-arm configuration through the chosen position
/// to be truly feasible (the user must extend through the sleeve).
pub fn run_dressing(
    task: &SimTask,
    policy: PolicyKind,
    view: &dyn ReachView,
    world: &dyn ReachView,
    config: &SimConfig,
) -> TrialResult {
    let TaskKind::Positions(positions) = &task.kind else {
        panic!("dressing task must carry positions");
    };
    let base = run_handover(task, policy, view, world, config);
    let Choice::Candidate(choice) = base.decision.choice else {
        unreachable!()
    };
    let extended = straight_arm_config(&positions[choice], &config.geometry);
    TrialResult {
        success: base.success && world.feasible_config(&extended),
        ..base
    }
}

/// Bathing: ask the user to move iff the target is predicted feasible.
/// Asking earns agency 1 and succeeds iff the target is truly feasible;
/// moving for them always succeeds with agency 0.
pub fn run_bathing(
    task: &SimTask,
    policy: PolicyKind,
    view: &dyn ReachView,
    world: &dyn ReachView,
    _config: &SimConfig,
) -> TrialResult {
    let TaskKind::Target(target) = &task.kind else {
        panic!("bathing task must carry a single target");
    };
    if view.feasible_config(target) {
        TrialResult {
            decision: PolicyDecision {
                policy,
                choice: Choice::Ask,
            },
            success: world.feasible_config(target),
            agency_raw: 1.0,
            agency_norm: None,
        }
    } else {
        TrialResult {
            decision: PolicyDecision {
                policy,
                choice: Choice::Move,
            },
            success: true,
            agency_raw: 0.0,
            agency_norm: None,
        }
    }
}

pub fn run_task(
    task: &SimTask,
    policy: PolicyKind,
    view: &dyn ReachView,
    world: &dyn ReachView,
    config: &SimConfig,
) -> TrialResult {
    match task.env {
        Env::Handover => run_handover(task, policy, view, world, config),
        Env::Rehab => run_rehab(task, policy, view, world, config),
        Env::Dressing => run_dressing(task, policy, view, world, config),
        Env::Bathing => run_bathing(task, policy, view, world, config),
    }
}

/// One exported trial row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRow {
    pub env: String,
    pub policy: String,
    pub user: String,
    pub task: usize,
    pub seed: u64,
    pub success: bool,
    pub agency_raw: f64,
    pub agency_norm: Option<f64>,
}

/// Mean success and mean normalized agency for a slice of rows.
pub fn summarize(rows: &[TrialRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    let success = rows.iter().filter(|r| r.success).count() as f64 / n;
    let norms: Vec<f64> = rows.iter().filter_map(|r| r.agency_norm).collect();
    let agency = if norms.is_empty() {
        0.0
    } else {
        norms.iter().sum::<f64>() / norms.len() as f64
    };
    (success, agency)
}

/// Everything the suite needs about one held-out user.
pub struct SuiteUser<'a> {
    pub record: &'a UserRecord,
}

/// Inputs shared across the whole suite run.
pub struct SuiteInput<'a> {
    pub grid: &'a GridSpec,
    /// Union support of the trained bundle (probe set for predictions).
    pub union_indices: &'a [u32],
    pub predictor: &'a GracePredictor,
    pub users: Vec<SuiteUser<'a>>,
    pub config: SimConfig,
}

/// Runs every policy on every task for the requested environments and seeds.
/// Output row order is deterministic: env, user, seed, task, policy.
pub fn run_suite(input: &SuiteInput, envs: &[Env], seeds: &[u64]) -> Vec<TrialRow> {
    let config = &input.config;
    let geom = &config.geometry;
    let tol = config.position_tolerance;

    // Forward kinematics of the probe grid, computed once.
    let grid_fk: Vec<(JointConfig, [f64; 3])> = (0..input.grid.len())
        .map(|i| {
            let cfg = input.grid.point(i);
            let p = forward_hand_position(&cfg, geom);
            (cfg, p)
        })
        .collect();
    let union_fk: Vec<(JointConfig, [f64; 3])> = input
        .union_indices
        .iter()
        .map(|&i| grid_fk[i as usize])
        .collect();

    // Bathing draws from poses with a modest wrist excursion; fall back to
    // the whole union if the band is empty at this grid resolution.
    let rest = rest_wrist(geom);
    let mut bathing_targets: Vec<u32> = input
        .union_indices
        .iter()
        .copied()
        .filter(|&i| {
            let d = point_distance(&grid_fk[i as usize].1, &rest);
            (config.bathing_min_excursion..=config.bathing_max_excursion).contains(&d)
        })
        .collect();
    if bathing_targets.is_empty() {
        bathing_targets = input.union_indices.to_vec();
    }

    let mut rows = Vec::new();
    for user in &input.users {
        let rec = user.record;
        let info = UserInfo {
            scores: rec.scores,
            condition_id: rec.condition_id,
        };
        // The world: synthetic ground truth over the dense probe grid.
        let truth = rec.true_from.clone();
        let world = ProbeReach::build(&grid_fk, move |cfg| truth.contains(cfg), tol);

        // Predicted reach at both operating points, over the union support.
        let union_configs: Vec<JointConfig> = union_fk.iter().map(|(c, _)| *c).collect();
        let probs = input.predictor.probs(&info, &union_configs);
        let prob_of: HashMap<u64, f64> = union_configs
            .iter()
            .zip(&probs)
            .enumerate()
            .map(|(k, (_, &p))| (k as u64, p))
            .collect();
        let _ = &prob_of;
        let predictor = input.predictor;
        let make_grace_view = |threshold: f64| {
            let accepted: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
            let pairs: Vec<(JointConfig, [f64; 3])> = union_fk
                .iter()
                .zip(&accepted)
                .filter(|(_, &a)| a)
                .map(|(pair, _)| *pair)
                .collect();
            let index = WorkspaceIndex::build(pairs.iter().map(|(_, p)| *p).collect(), tol);
            GraceView {
                predictor,
                info,
                threshold,
                index,
                tol,
            }
        };
        let grace_opt = make_grace_view(crate::model::OPTIMISTIC_THRESHOLD);
        let grace_cons = make_grace_view(crate::model::CONSERVATIVE_THRESHOLD);
        let heur_opt = SphereReach::new(config.heuristic_optimistic_radius, *geom);
        let heur_cons = SphereReach::new(config.heuristic_conservative_radius, *geom);

        for &env in envs {
            for &seed in seeds {
                let tasks = make_tasks(
                    env,
                    rec,
                    &world,
                    input.grid,
                    input.union_indices,
                    &bathing_targets,
                    config,
                    seed,
                );
                for task in &tasks {
                    let oracle = run_task(task, PolicyKind::Oracle, &world, &world, config);
                    for policy in PolicyKind::all() {
                        let result = match policy {
                            PolicyKind::Oracle => oracle,
                            PolicyKind::GraceOptimistic => {
                                run_task(task, policy, &grace_opt, &world, config)
                            }
                            PolicyKind::GraceConservative => {
                                run_task(task, policy, &grace_cons, &world, config)
                            }
                            PolicyKind::HeuristicOptimistic => {
                                run_task(task, policy, &heur_opt, &world, config)
                            }
                            PolicyKind::HeuristicConservative => {
                                run_task(task, policy, &heur_cons, &world, config)
                            }
                        };
                        let agency_norm = if oracle.agency_raw > 0.0 {
                            Some(result.agency_raw / oracle.agency_raw)
                        } else {
                            None
                        };
                        rows.push(TrialRow {
                            env: env.tag().to_string(),
                            policy: policy.tag().to_string(),
                            user: format!("{}_{}", rec.participant_id, rec.condition_id),
                            task: task.index,
                            seed,
                            success: result.success,
                            agency_raw: result.agency_raw,
                            agency_norm,
                        });
                    }
                }
            }
        }
    }
    rows
}

/// Reach view for a trained predictor: joint feasibility by thresholded
/// probability, workspace reachability through the accepted probe points.
struct GraceView<'a> {
    predictor: &'a GracePredictor,
    info: UserInfo,
    threshold: f64,
    index: WorkspaceIndex,
    tol: f64,
}

impl ReachView for GraceView<'_> {
    fn feasible_config(&self, theta: &JointConfig) -> bool {
        self.predictor.prob(&self.info, theta) >= self.threshold
    }

    fn reachable_position(&self, pos: &[f64; 3]) -> bool {
        self.index.any_within(pos, self.tol)
    }
}

/// Serializes rows for one environment in the results-file schema.
pub fn env_csv(rows: &[TrialRow], env: Env) -> String {
    let mut out = String::from("policy,user,task,seed,success,agency_raw,agency_norm\n");
    for r in rows.iter().filter(|r| r.env == env.tag()) {
        let norm = r
            .agency_norm
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.policy,
            r.user,
            r.task,
            r.seed,
            u8::from(r.success),
            r.agency_raw,
            norm
        ));
    }
    out
}

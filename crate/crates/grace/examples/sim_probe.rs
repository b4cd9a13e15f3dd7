// scratch probe: per-policy fallback/success structure in handover + rehab
use grace::caresim::*;
use grace::config::Config;
use grace::datagen::{generate_dataset, DatagenConfig, ScoreVector, UserRecord};
use grace::gridlab::{assemble_from_masks, compute_bound, membership_mask};
use grace::kinematics::{forward_hand_position, JointConfig};
use grace::model::{train_encoder, train_feasibility, FeasibilityModel, GracePredictor, UserInfo};
use grace::ocsvm::{fit, OcsvmParams};
use grace::Membership;

fn main() {
    for dims in [16usize, 20] {
        let config = Config::test_profile();
        let dg = DatagenConfig { samples_per_user: 500, ..DatagenConfig::default() };
        let dataset = generate_dataset(&dg, 42);
        let holdout = config.holdout_users.clone();
        let train_records: Vec<UserRecord> = dataset.records.iter().filter(|r| !holdout.contains(&r.key())).cloned().collect();
        let completions: Vec<_> = train_records.iter().map(|r| fit(&r.from_samples, &OcsvmParams::default()).unwrap()).collect();
        let grid = compute_bound(&train_records, dims).unwrap();
        let masks: Vec<Vec<bool>> = completions.iter().map(|m| membership_mask(&grid, m)).collect();
        let cd = assemble_from_masks(&grid, &train_records, &masks);
        let users: Vec<(ScoreVector, u32)> = cd.users.iter().map(|u| (u.scores, u.condition_id)).collect();
        let (enc, _d, _l) = train_encoder(&users, &config.encoder, 42).unwrap();
        let (net, _c) = train_feasibility(&cd, &enc, &config.classifier, 42).unwrap();
        let predictor = GracePredictor::new(enc, net).unwrap();
        let sim = SimConfig::default();
        let geom = sim.geometry;
        let tol = sim.position_tolerance;

        // Per-user diagnostics over handover and rehab.
        for key in &holdout {
            let rec = dataset.records.iter().find(|r| r.key() == *key).unwrap();
            let info = UserInfo { scores: rec.scores, condition_id: rec.condition_id };
            let grid_fk: Vec<(JointConfig, [f64;3])> = (0..grid.len()).map(|i| { let c = grid.point(i); (c, forward_hand_position(&c, &geom)) }).collect();
            let truth = rec.true_from.clone();
            let world = ProbeReach::build(&grid_fk, move |c: &JointConfig| truth.contains(c), tol);
            let union_cfg: Vec<JointConfig> = cd.union_indices.iter().map(|&i| grid.point(i as usize)).collect();
            let probs = predictor.probs(&info, &union_cfg);
            // own-completion ceiling policy
            let own = fit(&rec.from_samples, &OcsvmParams::default()).unwrap();
            let own_pairs: Vec<(JointConfig, [f64;3])> = cd.union_indices.iter().map(|&i| grid_fk[i as usize]).collect();
            let own_view = ProbeReach::build(&own_pairs, move |c: &JointConfig| own.contains(c), tol);

            for (tag, thr) in [("opt", 0.5f64), ("cons", 0.95)] {
                let pairs: Vec<(JointConfig, [f64;3])> = cd.union_indices.iter().enumerate().filter(|(k, _)| probs[*k] >= thr).map(|(_, &i)| grid_fk[i as usize]).collect();
                let accepted: std::collections::HashSet<u64> = cd.union_indices.iter().enumerate().filter(|(k, _)| probs[*k] >= thr).map(|(_, &i)| i as u64).collect();
                let idx = WorkspaceIndex::build(pairs.iter().map(|(_, p)| *p).collect(), tol);
                let _ = &accepted;
                struct V<'a> { probs: &'a [f64], cfgs: &'a [JointConfig], thr: f64, idx: WorkspaceIndex, tol: f64 }
                impl ReachView for V<'_> {
                    fn feasible_config(&self, theta: &JointConfig) -> bool {
                        // nearest union config match by exact equality fallback to prob lookup
                        for (c, p) in self.cfgs.iter().zip(self.probs) { if c == theta { return *p >= self.thr; } }
                        false
                    }
                    fn reachable_position(&self, pos: &[f64;3]) -> bool { self.idx.any_within(pos, self.tol) }
                }
                let view = V { probs: &probs, cfgs: &union_cfg, thr, idx, tol };
                let mut h_fallback = 0; let mut h_fb_succ = 0; let mut h_pick_succ = 0; let mut h_picks = 0;
                let mut r_fallback = 0; let mut r_fb_succ = 0; let mut r_pick_succ = 0; let mut r_picks = 0;
                for seed in 1..=5u64 {
                    for task in make_tasks(Env::Handover, rec, &world, &grid, &cd.union_indices, &cd.union_indices, &sim, seed) {
                        let r = run_handover(&task, PolicyKind::GraceOptimistic, &view, &world, &sim);
                        if r.agency_raw == 0.0 { h_fallback += 1; h_fb_succ += usize::from(r.success); }
                        else { h_picks += 1; h_pick_succ += usize::from(r.success); }
                    }
                    for task in make_tasks(Env::Rehab, rec, &world, &grid, &cd.union_indices, &cd.union_indices, &sim, seed) {
                        let r = run_rehab(&task, PolicyKind::GraceOptimistic, &view, &world, &sim);
                        if r.agency_raw == 0.0 { r_fallback += 1; r_fb_succ += usize::from(r.success); }
                        else { r_picks += 1; r_pick_succ += usize::from(r.success); }
                    }
                }
                let _ = &own_view;
                println!("dims {dims} u{}_{} {tag}: handover picks {h_picks} (succ {:.2}) fallback {h_fallback} (succ {:.2}) | rehab picks {r_picks} (succ {:.2}) fallback {r_fallback} (succ {:.2})",
                    key.0, key.1,
                    h_pick_succ as f64 / h_picks.max(1) as f64, h_fb_succ as f64 / h_fallback.max(1) as f64,
                    r_pick_succ as f64 / r_picks.max(1) as f64, r_fb_succ as f64 / r_fallback.max(1) as f64);
            }
            // ceiling: own completion as the policy, rehab
            let mut c_succ = 0usize; let mut c_n = 0usize;
            for seed in 1..=5u64 {
                for task in make_tasks(Env::Rehab, rec, &world, &grid, &cd.union_indices, &cd.union_indices, &sim, seed) {
                    let r = run_rehab(&task, PolicyKind::Oracle, &own_view, &world, &sim);
                    c_succ += usize::from(r.success); c_n += 1;
                }
            }
            println!("dims {dims} u{}_{} own-completion rehab success {:.3}", key.0, key.1, c_succ as f64 / c_n as f64);
        }
    }
}

//! Personalized functional range-of-motion (fROM) prediction toolkit.
//!
//! The pipeline generates a synthetic dataset of users with emulated upper-limb
//! mobility limitations, completes each user's sampled fROM into a dense
//! membership function with a one-class SVM, discretizes the joint space into a
//! labeled classification dataset, trains a latent functional-score embedding
//! plus a feasibility classifier, and evaluates the resulting predictors both
//! with cross-validation scenarios and in four simulated caregiving tasks.

pub mod caresim;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod gridlab;
pub mod kinematics;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod ocsvm;

use kinematics::JointConfig;

/// A queryable set of joint configurations.
///
/// Implemented by the one-class SVM completion of sampled data and by the
/// synthetic ground-truth intervals, so grid labeling and the simulators can
/// consume either interchangeably.
pub trait Membership {
    fn contains(&self, cfg: &JointConfig) -> bool;
}

impl<F: Fn(&JointConfig) -> bool> Membership for F {
    fn contains(&self, cfg: &JointConfig) -> bool {
        self(cfg)
    }
}

//! The feasibility-prediction models: a functional-score autoencoder trained
//! with reconstruction plus contrastive losses, a classifier from latent user
//! embeddings and joint configurations to reachability probability, and the
//! two reference baselines (ground-truth condition one-hot, user-agnostic).
//!
//! Training is two-stage: the encoder is frozen before the classifier trains.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{stream_rng, ScoreVector};
use crate::gridlab::ClassificationDataset;
use crate::kinematics::JointConfig;
use crate::nn::{
    adam_step, backward, forward, predict, Activation, AdamState, MlpParams, NnError, WeightFile,
};

pub const SCORE_DIM: usize = 6;
pub const LATENT_DIM: usize = 4;
pub const JOINT_DIM: usize = 4;
pub const N_CONDITIONS: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("architecture mismatch: expected dims {expected:?}, got {got:?}")]
    ArchitectureMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("encoder training needs at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("classification dataset has no union points")]
    EmptyDataset,
}

/// Autoencoder training settings. The loss is MSE + lambda * contrastive
/// over all user pairs, full batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub latent: usize,
    pub lr: f64,
    pub epochs: usize,
    pub lambda_contrastive: f64,
    pub margin: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            latent: LATENT_DIM,
            lr: 1e-3,
            epochs: 500,
            lambda_contrastive: 0.5,
            margin: 1.0,
        }
    }
}

/// Feasibility classifier training settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            lr: 5e-4,
            batch_size: 4096,
            epochs: 10,
        }
    }
}

fn validate_dims(params: &MlpParams, expected: &[usize]) -> Result<(), ModelError> {
    let got = params.dims();
    if got != expected {
        return Err(ModelError::ArchitectureMismatch {
            expected: expected.to_vec(),
            got,
        });
    }
    Ok(())
}

/// Score encoder: scores (6) -> hidden -> latent (4), linear latent output.
#[derive(Debug, Clone)]
pub struct Encoder {
    params: MlpParams,
}

impl Encoder {
    pub fn new(params: MlpParams, hidden: usize, latent: usize) -> Result<Self, ModelError> {
        validate_dims(&params, &[SCORE_DIM, hidden, latent])?;
        Ok(Self { params })
    }

    pub fn latent_dim(&self) -> usize {
        self.params.output_dim()
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn embed(&self, scores: &ScoreVector) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, SCORE_DIM), scores.as_array().to_vec()).unwrap();
        predict(&self.params, &x)
            .expect("validated dims")
            .row(0)
            .to_vec()
    }

    pub fn embed_batch(&self, scores: &[ScoreVector]) -> Array2<f64> {
        let mut x = Array2::zeros((scores.len(), SCORE_DIM));
        for (i, s) in scores.iter().enumerate() {
            x.row_mut(i)
                .assign(&Array1::from_vec(s.as_array().to_vec()));
        }
        predict(&self.params, &x).expect("validated dims")
    }
}

/// Latent decoder: latent (4) -> hidden -> scores (6), sigmoid output.
#[derive(Debug, Clone)]
pub struct Decoder {
    params: MlpParams,
}

impl Decoder {
    pub fn new(params: MlpParams, hidden: usize, latent: usize) -> Result<Self, ModelError> {
        validate_dims(&params, &[latent, hidden, SCORE_DIM])?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn reconstruct(&self, z: &Array2<f64>) -> Array2<f64> {
        predict(&self.params, z).expect("validated dims")
    }
}

/// Per-epoch training record for the autoencoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderTrainLog {
    pub mse: Vec<f64>,
    pub contrastive: Vec<f64>,
    /// Set when fewer than two distinct conditions were present, in which
    /// case training used the reconstruction loss only.
    pub contrastive_undefined: bool,
}

/// Trains the autoencoder on (scores, condition) pairs.
pub fn train_encoder(
    users: &[(ScoreVector, u32)],
    config: &EncoderConfig,
    seed: u64,
) -> Result<(Encoder, Decoder, EncoderTrainLog), ModelError> {
    if users.len() < 2 {
        return Err(ModelError::TooFewUsers(users.len()));
    }
    let mut rng = stream_rng(seed, 0xE0C0DE, 0, 0);
    let mut enc = MlpParams::init(
        &[SCORE_DIM, config.hidden, config.latent],
        &[Activation::Relu, Activation::Linear],
        &mut rng,
    );
    let mut dec = MlpParams::init(
        &[config.latent, config.hidden, SCORE_DIM],
        &[Activation::Relu, Activation::Sigmoid],
        &mut rng,
    );
    let mut enc_opt = AdamState::new(&enc, config.lr);
    let mut dec_opt = AdamState::new(&dec, config.lr);

    let n = users.len();
    let mut x = Array2::zeros((n, SCORE_DIM));
    for (i, (s, _)) in users.iter().enumerate() {
        x.row_mut(i).assign(&Array1::from_vec(s.as_array().to_vec()));
    }
    let conditions: Vec<u32> = users.iter().map(|(_, c)| *c).collect();
    let distinct = {
        let mut c = conditions.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    };
    let contrastive_undefined = distinct < 2;
    if contrastive_undefined {
        log::warn!(
            "contrastive loss undefined: {distinct} distinct condition(s); training with reconstruction loss only"
        );
    }

    let mut log = EncoderTrainLog {
        mse: Vec::with_capacity(config.epochs),
        contrastive: Vec::with_capacity(config.epochs),
        contrastive_undefined,
    };
    for _ in 0..config.epochs {
        let enc_cache = forward(&enc, &x)?;
        let z = enc_cache.output().clone();
        let dec_cache = forward(&dec, &z)?;
        let (mse, mse_grad) = crate::nn::mse_loss(dec_cache.output(), &x);
        let dec_grads = backward(&dec, &dec_cache, &mse_grad)?;

        let mut dz = dec_grads.input.clone();
        let contrastive = if contrastive_undefined {
            0.0
        } else {
            let (c_loss, c_grad) =
                crate::nn::contrastive_loss(&z, &conditions, config.margin);
            dz = dz + c_grad.mapv(|v| v * config.lambda_contrastive);
            c_loss
        };
        let enc_grads = backward(&enc, &enc_cache, &dz)?;
        adam_step(&mut dec, &dec_grads, &mut dec_opt)?;
        adam_step(&mut enc, &enc_grads, &mut enc_opt)?;
        log.mse.push(mse);
        log.contrastive.push(contrastive);
    }

    Ok((
        Encoder::new(enc, config.hidden, config.latent)?,
        Decoder::new(dec, config.hidden, config.latent)?,
        log,
    ))
}

/// Feasibility classifier: context ++ joints -> hidden -> hidden -> 1,
/// sigmoid output. The context is the latent embedding, a condition one-hot,
/// or empty for the user-agnostic baseline.
#[derive(Debug, Clone)]
pub struct FeasibilityNet {
    params: MlpParams,
    context_width: usize,
}

impl FeasibilityNet {
    pub fn new(params: MlpParams, context_width: usize, hidden: usize) -> Result<Self, ModelError> {
        validate_dims(&params, &[context_width + JOINT_DIM, hidden, hidden, 1])?;
        Ok(Self {
            params,
            context_width,
        })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn context_width(&self) -> usize {
        self.context_width
    }

    /// Batch probability for one user context over many configurations.
    pub fn probs(&self, context: &[f64], thetas: &[JointConfig]) -> Vec<f64> {
        assert_eq!(context.len(), self.context_width);
        let w = self.context_width + JOINT_DIM;
        let mut x = Array2::zeros((thetas.len(), w));
        for (i, theta) in thetas.iter().enumerate() {
            let mut row = x.row_mut(i);
            for (k, &c) in context.iter().enumerate() {
                row[k] = c;
            }
            let t = theta.as_array();
            for k in 0..JOINT_DIM {
                row[self.context_width + k] = t[k];
            }
        }
        predict(&self.params, &x)
            .expect("validated dims")
            .column(0)
            .to_vec()
    }
}

/// Per-epoch mean training BCE for the classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierTrainLog {
    pub bce: Vec<f64>,
}

/// Trains a feasibility net on per-user contexts and union-point labels by
/// seeded mini-batch Adam.
fn train_classifier(
    contexts: &[Vec<f64>],
    labels: &[&[bool]],
    points: &[JointConfig],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(FeasibilityNet, ClassifierTrainLog), ModelError> {
    assert_eq!(contexts.len(), labels.len());
    if points.is_empty() || contexts.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let context_width = contexts[0].len();
    assert!(contexts.iter().all(|c| c.len() == context_width));
    let n_points = points.len();
    let width = context_width + JOINT_DIM;

    let mut rng = stream_rng(seed, 0xC1A55, context_width as u64, 0);
    let mut net = MlpParams::init(
        &[width, config.hidden, config.hidden, 1],
        &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
        &mut rng,
    );
    let mut opt = AdamState::new(&net, config.lr);

    let theta_rows: Vec<[f64; 4]> = points.iter().map(|p| p.as_array()).collect();
    let mut order: Vec<u64> = (0..(contexts.len() * n_points) as u64).collect();
    let mut log = ClassifierTrainLog {
        bce: Vec::with_capacity(config.epochs),
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut x = Array2::zeros((b, width));
            let mut y = Array2::zeros((b, 1));
            for (r, &flat) in chunk.iter().enumerate() {
                let u = (flat as usize) / n_points;
                let i = (flat as usize) % n_points;
                let mut row = x.row_mut(r);
                for (k, &c) in contexts[u].iter().enumerate() {
                    row[k] = c;
                }
                for k in 0..JOINT_DIM {
                    row[context_width + k] = theta_rows[i][k];
                }
                y[[r, 0]] = f64::from(labels[u][i]);
            }
            let cache = forward(&net, &x)?;
            let (loss, lg) = crate::nn::bce_loss(cache.output(), &y);
            let grads = backward(&net, &cache, &lg)?;
            adam_step(&mut net, &grads, &mut opt)?;
            epoch_loss += loss * b as f64;
            seen += b;
        }
        log.bce.push(epoch_loss / seen as f64);
    }
    Ok((FeasibilityNet::new(net, context_width, config.hidden)?, log))
}

/// Trains the classifier on latent embeddings from a frozen encoder.
/// Embeddings are computed once per user.
pub fn train_feasibility(
    dataset: &ClassificationDataset,
    encoder: &Encoder,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(FeasibilityNet, ClassifierTrainLog), ModelError> {
    let contexts: Vec<Vec<f64>> = dataset
        .users
        .iter()
        .map(|u| encoder.embed(&u.scores))
        .collect();
    let labels: Vec<&[bool]> = dataset.users.iter().map(|u| u.labels.as_slice()).collect();
    train_classifier(&contexts, &labels, &dataset.union_configs, config, seed)
}

/// Everything a predictor may know about a user at query time.
#[derive(Debug, Clone, Copy)]
pub struct UserInfo {
    pub scores: ScoreVector,
    pub condition_id: u32,
}

/// A trained feasibility model queried with user information.
pub trait FeasibilityModel: Sync {
    fn probs(&self, user: &UserInfo, thetas: &[JointConfig]) -> Vec<f64>;

    fn prob(&self, user: &UserInfo, theta: &JointConfig) -> f64 {
        self.probs(user, std::slice::from_ref(theta))[0]
    }
}

/// Decision thresholds for the optimistic and conservative operating points.
pub const OPTIMISTIC_THRESHOLD: f64 = 0.5;
pub const CONSERVATIVE_THRESHOLD: f64 = 0.95;

/// The score-conditioned predictor: encoder + feasibility net + decision
/// threshold.
#[derive(Debug, Clone)]
pub struct GracePredictor {
    pub encoder: Encoder,
    pub net: FeasibilityNet,
    pub threshold: f64,
}

impl GracePredictor {
    pub fn new(encoder: Encoder, net: FeasibilityNet) -> Result<Self, ModelError> {
        if net.context_width() != encoder.latent_dim() {
            return Err(ModelError::ArchitectureMismatch {
                expected: vec![encoder.latent_dim() + JOINT_DIM],
                got: vec![net.context_width() + JOINT_DIM],
            });
        }
        Ok(Self {
            encoder,
            net,
            threshold: OPTIMISTIC_THRESHOLD,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Probability that `theta` is reachable plus the thresholded verdict.
    pub fn predict(&self, scores: &ScoreVector, theta: &JointConfig) -> (f64, bool) {
        let z = self.encoder.embed(scores);
        let p = self.net.probs(&z, std::slice::from_ref(theta))[0];
        (p, p >= self.threshold)
    }
}

impl FeasibilityModel for GracePredictor {
    fn probs(&self, user: &UserInfo, thetas: &[JointConfig]) -> Vec<f64> {
        let z = self.encoder.embed(&user.scores);
        self.net.probs(&z, thetas)
    }
}

/// Baseline conditioned on the ground-truth condition id (one-hot); unseen
/// ids map to the all-zero encoding with a logged warning.
#[derive(Debug, Clone)]
pub struct GtConditionPredictor {
    pub net: FeasibilityNet,
    pub known_conditions: Vec<u32>,
}

impl GtConditionPredictor {
    pub fn encode_condition(&self, condition_id: u32) -> Vec<f64> {
        let mut onehot = vec![0.0; self.known_conditions.len()];
        match self.known_conditions.iter().position(|&c| c == condition_id) {
            Some(idx) => onehot[idx] = 1.0,
            None => {
                log::warn!(
                    "condition id {condition_id} unseen in training; using the all-zero encoding"
                );
            }
        }
        onehot
    }
}

impl FeasibilityModel for GtConditionPredictor {
    fn probs(&self, user: &UserInfo, thetas: &[JointConfig]) -> Vec<f64> {
        self.net.probs(&self.encode_condition(user.condition_id), thetas)
    }
}

/// Baseline with no user information: joint configuration only.
#[derive(Debug, Clone)]
pub struct UserAgnosticPredictor {
    pub net: FeasibilityNet,
}

impl FeasibilityModel for UserAgnosticPredictor {
    fn probs(&self, _user: &UserInfo, thetas: &[JointConfig]) -> Vec<f64> {
        self.net.probs(&[], thetas)
    }
}

/// Trains the ground-truth-condition baseline. The one-hot width is the
/// number of condition slots (the four known conditions), independent of how
/// many appear in this training split.
pub fn train_gt_condition(
    dataset: &ClassificationDataset,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(GtConditionPredictor, ClassifierTrainLog), ModelError> {
    let known_conditions: Vec<u32> = (1..=N_CONDITIONS as u32).collect();
    let contexts: Vec<Vec<f64>> = dataset
        .users
        .iter()
        .map(|u| {
            let mut onehot = vec![0.0; known_conditions.len()];
            if let Some(idx) = known_conditions.iter().position(|&c| c == u.condition_id) {
                onehot[idx] = 1.0;
            }
            onehot
        })
        .collect();
    let labels: Vec<&[bool]> = dataset.users.iter().map(|u| u.labels.as_slice()).collect();
    let (net, log) = train_classifier(&contexts, &labels, &dataset.union_configs, config, seed)?;
    Ok((
        GtConditionPredictor {
            net,
            known_conditions,
        },
        log,
    ))
}

/// Trains the user-agnostic baseline (joints only).
pub fn train_user_agnostic(
    dataset: &ClassificationDataset,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(UserAgnosticPredictor, ClassifierTrainLog), ModelError> {
    let contexts: Vec<Vec<f64>> = dataset.users.iter().map(|_| Vec::new()).collect();
    let labels: Vec<&[bool]> = dataset.users.iter().map(|u| u.labels.as_slice()).collect();
    let (net, log) = train_classifier(&contexts, &labels, &dataset.union_configs, config, seed)?;
    Ok((UserAgnosticPredictor { net }, log))
}

/// The three trainable prediction methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Grace,
    GtCondition,
    UserAgnostic,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Grace => "grace",
            Method::GtCondition => "gt-condition",
            Method::UserAgnostic => "user-agnostic",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "grace" => Some(Method::Grace),
            "gt-condition" => Some(Method::GtCondition),
            "user-agnostic" => Some(Method::UserAgnostic),
            _ => None,
        }
    }

    pub fn all() -> [Method; 3] {
        [Method::Grace, Method::GtCondition, Method::UserAgnostic]
    }
}

/// A trained model of any method behind one query interface.
pub enum TrainedModel {
    Grace(GracePredictor),
    GtCondition(GtConditionPredictor),
    UserAgnostic(UserAgnosticPredictor),
}

impl FeasibilityModel for TrainedModel {
    fn probs(&self, user: &UserInfo, thetas: &[JointConfig]) -> Vec<f64> {
        match self {
            TrainedModel::Grace(m) => m.probs(user, thetas),
            TrainedModel::GtCondition(m) => m.probs(user, thetas),
            TrainedModel::UserAgnostic(m) => m.probs(user, thetas),
        }
    }
}

/// Trains the requested method on a classification dataset.
pub fn train_method(
    dataset: &ClassificationDataset,
    method: Method,
    encoder_config: &EncoderConfig,
    classifier_config: &ClassifierConfig,
    seed: u64,
) -> Result<TrainedModel, ModelError> {
    match method {
        Method::Grace => {
            let users: Vec<(ScoreVector, u32)> = dataset
                .users
                .iter()
                .map(|u| (u.scores, u.condition_id))
                .collect();
            let (encoder, _decoder, _log) = train_encoder(&users, encoder_config, seed)?;
            let (net, _clog) = train_feasibility(dataset, &encoder, classifier_config, seed)?;
            Ok(TrainedModel::Grace(GracePredictor::new(encoder, net)?))
        }
        Method::GtCondition => {
            let (m, _) = train_gt_condition(dataset, classifier_config, seed)?;
            Ok(TrainedModel::GtCondition(m))
        }
        Method::UserAgnostic => {
            let (m, _) = train_user_agnostic(dataset, classifier_config, seed)?;
            Ok(TrainedModel::UserAgnostic(m))
        }
    }
}

/// Serialization helpers for the model bundle.
pub fn encoder_to_weight_file(encoder: &Encoder, config: &EncoderConfig) -> WeightFile {
    WeightFile::from_params(
        encoder.params(),
        Some(serde_json::to_value(config).unwrap()),
    )
}

pub fn decoder_to_weight_file(decoder: &Decoder, config: &EncoderConfig) -> WeightFile {
    WeightFile::from_params(
        decoder.params(),
        Some(serde_json::to_value(config).unwrap()),
    )
}

pub fn classifier_to_weight_file(net: &FeasibilityNet, config: &ClassifierConfig) -> WeightFile {
    WeightFile::from_params(net.params(), Some(serde_json::to_value(config).unwrap()))
}

pub fn encoder_from_weight_file(
    file: &WeightFile,
    config: &EncoderConfig,
) -> Result<Encoder, ModelError> {
    Encoder::new(file.to_params()?, config.hidden, config.latent)
}

pub fn decoder_from_weight_file(
    file: &WeightFile,
    config: &EncoderConfig,
) -> Result<Decoder, ModelError> {
    Decoder::new(file.to_params()?, config.hidden, config.latent)
}

pub fn classifier_from_weight_file(
    file: &WeightFile,
    context_width: usize,
    config: &ClassifierConfig,
) -> Result<FeasibilityNet, ModelError> {
    FeasibilityNet::new(file.to_params()?, context_width, config.hidden)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::TrueFrom;
    use crate::gridlab::{assemble, GridSpec};
    use crate::Membership;

    fn score(v: f64) -> ScoreVector {
        ScoreVector::from_array([v; 6])
    }

    fn toy_users() -> Vec<(ScoreVector, u32)> {
        vec![
            (score(0.95), 1),
            (ScoreVector::from_array([0.9, 1.0, 0.95, 1.0, 0.9, 0.95]), 1),
            (score(0.45), 2),
            (ScoreVector::from_array([0.5, 0.4, 0.45, 0.5, 0.55, 0.4]), 2),
            (score(0.15), 3),
            (ScoreVector::from_array([0.1, 0.2, 0.15, 0.1, 0.2, 0.15]), 3),
        ]
    }

    fn box_dataset() -> crate::gridlab::ClassificationDataset {
        // Three archetypal box sizes, two users each, labels from the boxes.
        let sets: Vec<TrueFrom> = [1.0, 0.6, 0.3]
            .iter()
            .map(|&hi| TrueFrom {
                intervals: [(0.0, hi), (0.0, hi), (0.0, hi), (0.0, hi)],
                coupling: 0.0,
            })
            .collect();
        let users = toy_users();
        let records: Vec<crate::datagen::UserRecord> = users
            .iter()
            .enumerate()
            .map(|(i, (s, c))| crate::datagen::UserRecord {
                participant_id: (i + 1) as u32,
                condition_id: *c,
                scores: *s,
                from_samples: vec![
                    JointConfig::from_array([0.0; 4]),
                    JointConfig::from_array([1.0; 4]),
                ],
                true_from: sets[(*c - 1) as usize].clone(),
            })
            .collect();
        let memberships: Vec<&(dyn Membership + Sync)> = records
            .iter()
            .map(|r| &r.true_from as &(dyn Membership + Sync))
            .collect();
        assemble(&records, &memberships, 6).unwrap()
    }

    #[test]
    fn encoder_architecture_is_validated() {
        let mut rng = stream_rng(1, 0, 0, 0);
        let good = MlpParams::init(
            &[6, 16, 4],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        );
        assert!(Encoder::new(good, 16, 4).is_ok());
        let bad = MlpParams::init(
            &[6, 16, 3],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        );
        assert!(matches!(
            Encoder::new(bad, 16, 4),
            Err(ModelError::ArchitectureMismatch { .. })
        ));
    }

    #[test]
    fn feasibility_net_input_widths() {
        let mut rng = stream_rng(2, 0, 0, 0);
        let grace_net = MlpParams::init(
            &[8, 16, 16, 1],
            &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            &mut rng,
        );
        let net = FeasibilityNet::new(grace_net, 4, 16).unwrap();
        assert_eq!(net.params().input_dim(), 8);
        let ua_net = MlpParams::init(
            &[4, 16, 16, 1],
            &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            &mut rng,
        );
        let net = FeasibilityNet::new(ua_net, 0, 16).unwrap();
        assert_eq!(net.params().input_dim(), 4);
    }

    #[test]
    fn encoder_training_reduces_reconstruction_error() {
        let cfg = EncoderConfig {
            epochs: 400,
            ..EncoderConfig::default()
        };
        for seed in 0..5 {
            let (_e, _d, log) = train_encoder(&toy_users(), &cfg, seed).unwrap();
            assert!(!log.contrastive_undefined);
            let first = log.mse[0];
            let last = *log.mse.last().unwrap();
            assert!(last < first, "seed {seed}: {first} -> {last}");
        }
    }

    #[test]
    fn encoder_separates_conditions_in_latent_space() {
        let (enc, _dec, _log) = train_encoder(&toy_users(), &EncoderConfig::default(), 7).unwrap();
        let users = toy_users();
        let scores: Vec<ScoreVector> = users.iter().map(|(s, _)| *s).collect();
        let z = enc.embed_batch(&scores);
        let dist = |i: usize, j: usize| {
            let d = &z.row(i) - &z.row(j);
            d.dot(&d).sqrt()
        };
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for i in 0..users.len() {
            for j in (i + 1)..users.len() {
                if users[i].1 == users[j].1 {
                    intra.push(dist(i, j));
                } else {
                    inter.push(dist(i, j));
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&intra) < mean(&inter),
            "intra {} vs inter {}",
            mean(&intra),
            mean(&inter)
        );
    }

    #[test]
    fn single_condition_disables_contrastive_term() {
        let users: Vec<(ScoreVector, u32)> =
            toy_users().into_iter().map(|(s, _)| (s, 2)).collect();
        let cfg = EncoderConfig {
            epochs: 50,
            ..EncoderConfig::default()
        };
        let (_e, _d, log) = train_encoder(&users, &cfg, 3).unwrap();
        assert!(log.contrastive_undefined);
        assert!(log.contrastive.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn classifier_fits_box_labels() {
        let ds = box_dataset();
        let cfg = ClassifierConfig {
            batch_size: 512,
            epochs: 60,
            lr: 3e-3,
            ..ClassifierConfig::default()
        };
        let (enc, _dec, _log) =
            train_encoder(&toy_users(), &EncoderConfig::default(), 5).unwrap();
        let (net, log) = train_feasibility(&ds, &enc, &cfg, 5).unwrap();
        assert!(
            log.bce.last().unwrap() < log.bce.first().unwrap(),
            "training loss did not decrease: {:?}",
            log.bce
        );
        // Training accuracy over all users' rows.
        let mut correct = 0usize;
        let mut total = 0usize;
        for user in &ds.users {
            let z = enc.embed(&user.scores);
            let probs = net.probs(&z, &ds.union_configs);
            for (p, &y) in probs.iter().zip(&user.labels) {
                correct += usize::from((*p >= 0.5) == y);
                total += 1;
            }
        }
        let accuracy = correct as f64 / total as f64;
        assert!(accuracy > 0.95, "training accuracy {accuracy}");
    }

    #[test]
    fn threshold_monotonicity_shrinks_reachable_set() {
        let ds = box_dataset();
        let (enc, _d, _l) = train_encoder(&toy_users(), &EncoderConfig::default(), 11).unwrap();
        let cfg = ClassifierConfig {
            batch_size: 512,
            epochs: 10,
            ..ClassifierConfig::default()
        };
        let (net, _) = train_feasibility(&ds, &enc, &cfg, 11).unwrap();
        let grace = GracePredictor::new(enc, net).unwrap();
        let optimistic = grace.clone().with_threshold(OPTIMISTIC_THRESHOLD);
        let conservative = grace.with_threshold(CONSERVATIVE_THRESHOLD);
        let user = &ds.users[0];
        for theta in &ds.union_configs {
            let (p_opt, opt) = optimistic.predict(&user.scores, theta);
            let (p_cons, cons) = conservative.predict(&user.scores, theta);
            assert_eq!(p_opt, p_cons);
            assert!(!cons || opt, "conservative accepted but optimistic refused");
        }
    }

    #[test]
    fn conservative_threshold_rejects_mid_probability() {
        // Probability 0.90: reachable at tau 0.5, not at tau 0.95.
        assert!(0.90 >= OPTIMISTIC_THRESHOLD);
        assert!(0.90 < CONSERVATIVE_THRESHOLD);
    }

    #[test]
    fn gt_condition_unseen_id_maps_to_zero_vector() {
        let ds = box_dataset();
        let cfg = ClassifierConfig {
            batch_size: 512,
            epochs: 2,
            ..ClassifierConfig::default()
        };
        let (m, _) = train_gt_condition(&ds, &cfg, 2).unwrap();
        assert_eq!(m.net.context_width(), 4);
        assert_eq!(m.encode_condition(99), vec![0.0; 4]);
        let probe = [JointConfig::from_array([0.2; 4])];
        let unseen = m.probs(
            &UserInfo {
                scores: score(0.5),
                condition_id: 99,
            },
            &probe,
        );
        let zeroed = m.net.probs(&[0.0; 4], &probe);
        assert_eq!(unseen, zeroed);
    }

    #[test]
    fn user_agnostic_ignores_scores() {
        let ds = box_dataset();
        let cfg = ClassifierConfig {
            batch_size: 512,
            epochs: 2,
            ..ClassifierConfig::default()
        };
        let (m, _) = train_user_agnostic(&ds, &cfg, 2).unwrap();
        assert_eq!(m.net.context_width(), 0);
        let probe = [JointConfig::from_array([0.4; 4])];
        let a = m.probs(
            &UserInfo {
                scores: score(0.9),
                condition_id: 1,
            },
            &probe,
        );
        let b = m.probs(
            &UserInfo {
                scores: score(0.1),
                condition_id: 3,
            },
            &probe,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_are_pure_functions_of_frozen_weights() {
        let ds = box_dataset();
        let (enc, _d, _l) = train_encoder(&toy_users(), &EncoderConfig::default(), 13).unwrap();
        let cfg = ClassifierConfig {
            batch_size: 512,
            epochs: 3,
            ..ClassifierConfig::default()
        };
        let (net, _) = train_feasibility(&ds, &enc, &cfg, 13).unwrap();
        let grace = GracePredictor::new(enc, net).unwrap();
        let theta = JointConfig::from_array([0.3, 0.2, 0.1, 0.4]);
        let (p1, _) = grace.predict(&score(0.7), &theta);
        let (p2, _) = grace.predict(&score(0.7), &theta);
        assert_eq!(p1, p2);
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::all() {
            assert_eq!(Method::parse(m.tag()), Some(m));
        }
        assert_eq!(Method::parse("nonsense"), None);
    }

    #[test]
    fn weight_files_reload_exactly() {
        let (enc, dec, _l) = train_encoder(&toy_users(), &EncoderConfig::default(), 17).unwrap();
        let ecfg = EncoderConfig::default();
        let wf = encoder_to_weight_file(&enc, &ecfg);
        let text = serde_json::to_string(&wf).unwrap();
        let back: WeightFile = serde_json::from_str(&text).unwrap();
        let enc2 = encoder_from_weight_file(&back, &ecfg).unwrap();
        assert_eq!(enc.params().to_flat(), enc2.params().to_flat());
        let wf = decoder_to_weight_file(&dec, &ecfg);
        let dec2 = decoder_from_weight_file(&wf, &ecfg).unwrap();
        assert_eq!(dec.params().to_flat(), dec2.params().to_flat());
    }

    #[test]
    fn grid_spec_unused_helper_consistency() {
        // A 2-per-dim grid has 16 corner points; guards the pow(4) math used
        // throughout training-row indexing.
        let grid = GridSpec::new([0.0; 4], [1.0; 4], 2);
        assert_eq!(grid.len(), 16);
    }
}

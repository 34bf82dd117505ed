//! Episodic training loop.

use super::loss::feature_loss;
use super::optim::adamw_step;
use super::{QuestConfig, QuestParameters};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::head::{EpisodeFeatures, HeadConfig};
use crate::types::Episode;

/// Parameters, optimizer state and loss history of a running training job.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: QuestParameters,
    pub cfg: QuestConfig,
    pub head: HeadConfig,
    pub history: Vec<f64>,
}

impl Trainer {
    pub fn new(params: QuestParameters, cfg: QuestConfig, head: HeadConfig) -> Result<Self> {
        cfg.validate()?;
        head.validate()?;
        params.weights.check_shapes()?;
        if params.weights.fc_depth() != cfg.fc_depth {
            return Err(Error::Training(format!(
                "weights have {} linear stages, config asks for {}",
                params.weights.fc_depth(),
                cfg.fc_depth
            )));
        }
        Ok(Self {
            params,
            cfg,
            head,
            history: Vec::new(),
        })
    }

    /// Fresh parameters sized for `feats`.
    pub fn for_features(feats: &EpisodeFeatures, cfg: QuestConfig, head: HeadConfig) -> Result<Self> {
        let points = feats
            .query
            .first()
            .ok_or_else(|| Error::Training("episode has no query cloud".into()))?
            .point_count();
        let params = QuestParameters::init(feats.channels(), cfg.pooled_len(points), &cfg);
        Self::new(params, cfg, head)
    }

    /// One gradient step on one episode; returns the loss before the update.
    pub fn step(&mut self, feats: &EpisodeFeatures) -> Result<f64> {
        let iter = self.params.adam.step as usize;
        let out = feature_loss(feats, &self.head, &self.params.weights, &self.cfg)?;
        if !out.loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at iteration {iter}")));
        }
        let lr = self.cfg.lr_at(iter);
        adamw_step(
            &mut self.params.weights,
            &out.grads,
            &mut self.params.adam,
            lr,
            &self.cfg,
        );
        if self.params.weights.tensors().iter().any(|(_, _, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Training(format!("non-finite parameters after iteration {iter}")));
        }
        self.history.push(out.loss);
        Ok(out.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: QuestParameters,
    /// Loss of every iteration, in order.
    pub history: Vec<f64>,
}

/// Trains from scratch on at most `max_iters` episodes of `episodes`.
///
/// Parameter shapes follow the first episode.
pub fn train<I>(
    episodes: I,
    encoder: &EncoderConfig,
    head: &HeadConfig,
    cfg: &QuestConfig,
    max_iters: usize,
) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = Result<Episode>>,
{
    let mut trainer: Option<Trainer> = None;
    for episode in episodes.into_iter().take(max_iters) {
        let feats = EpisodeFeatures::encode(&episode?, encoder)?;
        let t = match &mut trainer {
            Some(t) => t,
            None => trainer.insert(Trainer::for_features(&feats, cfg.clone(), head.clone())?),
        };
        t.step(&feats)?;
    }
    let t = trainer.ok_or_else(|| Error::Training("no training episodes".into()))?;
    Ok(TrainOutcome {
        params: t.params,
        history: t.history,
    })
}

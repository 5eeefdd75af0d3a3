//! Mini-batch gradient descent over consecutive frame pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, Normalizer, ProcessorParams, Sample};
use crate::error::{Error, Result};
use crate::graph::Trajectory;
use crate::rewiring::{RewireParams, Rewirer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub step_size: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: 0.05,
            epochs: 200,
            batch: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ProcessorParams,
    /// Mean training loss of each epoch, measured before each batch update.
    pub loss_curve: Vec<f64>,
}

/// Checks the data set and returns the rewirer of every trajectory.
fn prepare(model: &ModelConfig, rewire: &RewireParams, data: &[Trajectory]) -> Result<Vec<Rewirer>> {
    if data.is_empty() {
        return Err(Error::Config("no training trajectories".into()));
    }
    if rewire.layers != model.layers {
        return Err(Error::Config(format!(
            "rewiring uses {} layers, model has {}",
            rewire.layers, model.layers
        )));
    }
    data.iter()
        .enumerate()
        .map(|(k, traj)| {
            if traj.frames.len() < 2 {
                return Err(Error::Config(format!("trajectory {k} has fewer than two frames")));
            }
            traj.validate()?;
            Rewirer::new(&traj.graph, *rewire)
        })
        .collect()
}

/// Trains from a fresh initialization. Normalization statistics are fitted
/// on `data` and frozen.
pub fn train(model: ModelConfig, config: &TrainConfig, rewire: &RewireParams, data: &[Trajectory]) -> Result<TrainReport> {
    config.validate()?;
    model.validate()?;
    let rewirers = prepare(&model, rewire, data)?;
    let pairs: Vec<_> = data
        .iter()
        .flat_map(|t| t.frames.windows(2).map(move |w| (&t.graph, &w[0], &w[1])))
        .collect();
    let mut params = ProcessorParams::init(model, config.seed)?;
    params.normalizer = Normalizer::fit(model.layout, &pairs)?;

    let mut samples = Vec::with_capacity(pairs.len());
    for (traj, rewirer) in data.iter().zip(&rewirers) {
        for w in traj.frames.windows(2) {
            let schedule = rewirer.schedule(&traj.graph, &w[0])?;
            samples.push(Sample::build(&params, &traj.graph, &w[0], &w[1], &schedule)?);
        }
    }

    let names = model.layout.field_names();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch).enumerate() {
            let diverged = |detail: String| Error::Divergence { epoch, batch: b, detail };
            let mut grad = params.zeros_like();
            for &k in chunk {
                let (loss, g) = samples[k].loss_and_grad(&params, &names).map_err(|e| diverged(e.to_string()))?;
                if !loss.is_finite() {
                    return Err(diverged(format!("loss {loss} on sample {k}")));
                }
                total += loss;
                grad.add_scaled(&g, 1.0);
            }
            params.add_scaled(&grad, -config.step_size / chunk.len() as f64);
            if !params.all_finite() {
                return Err(diverged("parameters became non-finite".into()));
            }
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                detail: format!("epoch loss {mean}"),
            });
        }
        loss_curve.push(mean);
    }
    Ok(TrainReport { params, loss_curve })
}

/// Mean loss of `params` over every frame pair of `data`.
pub fn dataset_loss(params: &ProcessorParams, rewire: &RewireParams, data: &[Trajectory]) -> Result<f64> {
    let rewirers = prepare(&params.config, rewire, data)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (traj, rewirer) in data.iter().zip(&rewirers) {
        for w in traj.frames.windows(2) {
            let schedule = rewirer.schedule(&traj.graph, &w[0])?;
            let sample = Sample::build(params, &traj.graph, &w[0], &w[1], &schedule)?;
            total += sample.loss(params);
            count += 1;
        }
    }
    let mean = total / count as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("dataset loss {mean}")));
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewiring::Variant;
    use crate::synth::{gen_synthetic, SynthConfig};

    fn setup(layers: usize) -> (ModelConfig, RewireParams, Vec<Trajectory>) {
        let data = gen_synthetic(&SynthConfig {
            rows: 5,
            cols: 6,
            steps: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        let model = ModelConfig {
            hidden_dim: 6,
            layers,
            ..ModelConfig::default()
        };
        let rewire = RewireParams {
            alpha_percent: 10.0,
            beta: 1.0,
            layers,
            variant: Variant::Adaptive,
        };
        (model, rewire, vec![data])
    }

    #[test]
    fn loss_decreases() {
        let (model, rewire, data) = setup(2);
        let cfg = TrainConfig {
            step_size: 0.02,
            epochs: 30,
            batch: 2,
            seed: 3,
        };
        let report = train(model, &cfg, &rewire, &data).unwrap();
        assert_eq!(report.loss_curve.len(), 30);
        assert!(report.loss_curve[29] < report.loss_curve[0], "{:?}", report.loss_curve);
    }

    #[test]
    fn deterministic_loss_curve() {
        let (model, rewire, data) = setup(2);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(model, &cfg, &rewire, &data).unwrap();
        let b = train(model, &cfg, &rewire, &data).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_curve), bits(&b.loss_curve));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn huge_step_diverges() {
        let (model, rewire, data) = setup(2);
        let cfg = TrainConfig {
            step_size: 1e3,
            epochs: 500,
            batch: 1,
            seed: 0,
        };
        let err = train(model, &cfg, &rewire, &data).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_config() {
        let (model, rewire, data) = setup(2);
        let zero = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(model, &zero, &rewire, &data), Err(Error::Config(_))));
        let wrong_depth = RewireParams { layers: 3, ..rewire };
        assert!(train(model, &TrainConfig::default(), &wrong_depth, &data).is_err());
        assert!(train(model, &TrainConfig::default(), &rewire, &[]).is_err());
    }
}

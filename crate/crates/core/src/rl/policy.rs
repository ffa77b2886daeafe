//! Gaussian actor-critic with a state-independent standard deviation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nn::Mlp;
use super::RlError;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Running per-feature mean and variance used to whiten observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim], count: 0.0, clip: 5.0 }
    }

    /// Merges the statistics of a batch of rows (Chan et al. parallel update).
    pub fn update(&mut self, batch: ArrayView2<f64>) {
        let n = batch.nrows() as f64;
        if n == 0.0 {
            return;
        }
        let mean = batch.mean_axis(Axis(0)).expect("non-empty batch");
        let var = batch.var_axis(Axis(0), 0.0);
        let total = self.count + n;
        for i in 0..self.mean.len() {
            let delta = mean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + var[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s))| ((v - m) / (s + 1e-5).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub mean: Mlp,
    pub value: Mlp,
    pub log_std: Vec<f64>,
    pub obs_norm: RunningNorm,
}

impl PolicyModel {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let sizes = |out: usize| [&[obs_dim][..], hidden, &[out]].concat();
        let gain = 2f64.sqrt();
        let mean = Mlp::orthogonal(&sizes(act_dim), gain, 0.01, rng);
        let value = Mlp::orthogonal(&sizes(1), gain, 1.0, rng);
        Self { mean, value, log_std: vec![init_log_std; act_dim], obs_norm: RunningNorm::new(obs_dim) }
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn param_count(&self) -> usize {
        self.mean.params.len() + self.value.params.len() + self.log_std.len()
    }

    /// Action means and values for a batch of already-normalised observations.
    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>), RlError> {
        let mu = self.mean.forward(obs);
        let v = self.value.forward(obs).column(0).to_owned();
        if mu.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(RlError::NonFinite("network output".into()));
        }
        Ok((mu, v))
    }

    pub fn normalize_batch(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(raw.raw_dim());
        for (mut dst, src) in out.rows_mut().into_iter().zip(raw.rows()) {
            dst.assign(&Array1::from(self.obs_norm.normalize(&src.to_vec())));
        }
        out
    }
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (LOG_2PI + 1.0)).sum()
}

/// Draws `mean + σ ⊙ ε`; with `deterministic` returns the mean itself.
pub fn sample_gaussian<R: Rng>(mean: &[f64], log_std: &[f64], rng: &mut R, deterministic: bool) -> (Vec<f64>, f64) {
    let action: Vec<f64> = if deterministic {
        mean.to_vec()
    } else {
        mean.iter().zip(log_std).map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let lp = gaussian_log_prob(&action, mean, log_std);
    (action, lp)
}

/// Samples an action for one raw (unnormalised) state.
pub fn sample_action<R: Rng>(
    policy: &PolicyModel,
    state: &[f64],
    rng: &mut R,
    deterministic: bool,
) -> Result<(Vec<f64>, f64), RlError> {
    if state.len() != policy.obs_dim() {
        return Err(RlError::Shape(format!("state has {} entries, policy expects {}", state.len(), policy.obs_dim())));
    }
    if state.iter().any(|x| !x.is_finite()) {
        return Err(RlError::NonFinite("state".into()));
    }
    let obs = Array2::from_shape_vec((1, state.len()), policy.obs_norm.normalize(state)).expect("row vector");
    let (mu, _) = policy.forward(obs.view())?;
    Ok(sample_gaussian(mu.row(0).as_slice().expect("contiguous"), &policy.log_std, rng, deterministic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(rng: &mut ChaCha8Rng) -> PolicyModel {
        PolicyModel::new(4, 3, &[8], 0.3f64.ln(), rng)
    }

    #[test]
    fn log_prob_matches_density_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = tiny(&mut rng);
        let state = [0.1, -0.4, 0.7, 2.0];
        let (a, lp) = sample_action(&p, &state, &mut rng, false).unwrap();
        let obs = Array2::from_shape_vec((1, 4), p.obs_norm.normalize(&state)).unwrap();
        let mu = p.mean.forward(obs.view());
        let sigma = 0.3f64;
        let mut density = 1.0;
        for (ai, mi) in a.iter().zip(mu.row(0)) {
            density *= (-(ai - mi).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        }
        assert!((lp - density.ln()).abs() < 1e-9);
    }

    #[test]
    fn deterministic_mode_and_vanishing_sigma_return_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = tiny(&mut rng);
        let state = [0.3, 0.2, -0.1, 0.0];
        let (det, _) = sample_action(&p, &state, &mut rng, true).unwrap();
        p.log_std = vec![-40.0; 3];
        let (tiny_sigma, _) = sample_action(&p, &state, &mut rng, false).unwrap();
        for (a, b) in det.iter().zip(&tiny_sigma) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let p = tiny(&mut ChaCha8Rng::seed_from_u64(1));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| sample_action(&p, &[1.0, 2.0, 3.0, 4.0], &mut rng, false).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn running_norm_matches_batch_statistics() {
        let data = Array2::from_shape_fn((10, 2), |(i, j)| (i * (j + 1)) as f64 + 0.5 * j as f64);
        let mut n = RunningNorm::new(2);
        n.update(data.slice(ndarray::s![..3, ..]));
        n.update(data.slice(ndarray::s![3.., ..]));
        let mean = data.mean_axis(Axis(0)).unwrap();
        let var = data.var_axis(Axis(0), 0.0);
        for j in 0..2 {
            assert!((n.mean[j] - mean[j]).abs() < 1e-12);
            assert!((n.var[j] - var[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = tiny(&mut rng);
        assert!(sample_action(&p, &[0.0; 3], &mut rng, false).is_err());
        assert!(sample_action(&p, &[0.0, f64::NAN, 0.0, 0.0], &mut rng, false).is_err());
    }
}

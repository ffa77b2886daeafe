//! Clipped-surrogate PPO loss, its analytic gradient and the update loop.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::Adam;
use super::policy::{gaussian_entropy, PolicyModel};
use super::{PpoConfig, RlError};

/// Samples for one gradient step. Observations are already normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            obs: self.obs.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            old_log_probs: self.old_log_probs.select(Axis(0), idx),
            advantages: self.advantages.select(Axis(0), idx),
            returns: self.returns.select(Axis(0), idx),
        }
    }

    fn check(&self, policy: &PolicyModel) -> Result<(), RlError> {
        let n = self.len();
        let ok = self.obs.ncols() == policy.obs_dim()
            && self.actions.dim() == (n, policy.act_dim())
            && self.old_log_probs.len() == n
            && self.advantages.len() == n
            && self.returns.len() == n;
        if ok {
            Ok(())
        } else {
            Err(RlError::Shape("minibatch does not match the policy".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Per-sample log-probabilities of `actions` under the current policy.
pub fn log_probs(policy: &PolicyModel, obs: &Array2<f64>, actions: &Array2<f64>) -> Result<Array1<f64>, RlError> {
    let (mu, _) = policy.forward(obs.view())?;
    Ok(Array1::from_iter(actions.rows().into_iter().zip(mu.rows()).map(|(a, m)| {
        super::policy::gaussian_log_prob(a.as_slice().expect("row"), m.as_slice().expect("row"), &policy.log_std)
    })))
}

/// Loss value and gradient laid out as `[mean net | value net | log-std]`.
pub fn loss_and_grad(policy: &PolicyModel, mb: &Minibatch, cfg: &PpoConfig) -> Result<(LossStats, Vec<f64>), RlError> {
    if mb.is_empty() {
        return Err(RlError::Shape("empty minibatch".into()));
    }
    mb.check(policy)?;
    let n = mb.len() as f64;
    let (mu, mean_cache) = policy.mean.forward_cached(mb.obs.view());
    let (v, value_cache) = policy.value.forward_cached(mb.obs.view());
    let sigma: Vec<f64> = policy.log_std.iter().map(|l| l.exp()).collect();
    let lp_const = 0.5 * 1.837_877_066_409_345_3 * sigma.len() as f64 + policy.log_std.iter().sum::<f64>();

    let mut g_mu = Array2::zeros(mu.raw_dim());
    let mut g_ls = vec![0.0; sigma.len()];
    let (mut pl, mut kl, mut clipped) = (0.0, 0.0, 0.0);
    for i in 0..mb.len() {
        let z: Vec<f64> = (0..sigma.len()).map(|k| (mb.actions[[i, k]] - mu[[i, k]]) / sigma[k]).collect();
        let lp = -0.5 * z.iter().map(|x| x * x).sum::<f64>() - lp_const;
        let ratio = (lp - mb.old_log_probs[i]).exp();
        let a = mb.advantages[i];
        let unclipped = ratio * a;
        let bounded = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        pl -= unclipped.min(bounded) / n;
        kl += (mb.old_log_probs[i] - lp) / n;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1.0 / n;
        }
        // d(policy loss)/d(log p); zero where the clipped branch is active
        let d_lp = if unclipped <= bounded { -unclipped / n } else { 0.0 };
        for k in 0..sigma.len() {
            g_mu[[i, k]] = d_lp * z[k] / sigma[k];
            g_ls[k] += d_lp * (z[k] * z[k] - 1.0);
        }
    }
    let resid = &v.column(0) - &mb.returns;
    let vl = resid.iter().map(|r| r * r).sum::<f64>() / n;
    let entropy = gaussian_entropy(&policy.log_std);
    let total = pl + cfg.value_coef * vl - cfg.entropy_coef * entropy;
    if !total.is_finite() {
        return Err(RlError::NonFinite(format!("loss (policy {pl}, value {vl})")));
    }

    let (nm, nv) = (policy.mean.params.len(), policy.value.params.len());
    let mut grad = vec![0.0; nm + nv + g_ls.len()];
    policy.mean.backward(&mean_cache, g_mu.view(), &mut grad[..nm]);
    let g_v = (resid * (2.0 * cfg.value_coef / n)).insert_axis(Axis(1));
    policy.value.backward(&value_cache, g_v.view(), &mut grad[nm..nm + nv]);
    for (dst, g) in grad[nm + nv..].iter_mut().zip(&g_ls) {
        *dst = g - cfg.entropy_coef;
    }
    let stats = LossStats {
        total,
        policy_loss: pl,
        value_loss: vl,
        entropy,
        approx_kl: kl,
        clip_fraction: clipped,
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    };
    Ok((stats, grad))
}

pub fn flat_params(policy: &PolicyModel) -> Vec<f64> {
    [&policy.mean.params[..], &policy.value.params, &policy.log_std].concat()
}

pub fn set_flat_params(policy: &mut PolicyModel, flat: &[f64]) {
    let (nm, nv) = (policy.mean.params.len(), policy.value.params.len());
    policy.mean.params.copy_from_slice(&flat[..nm]);
    policy.value.params.copy_from_slice(&flat[nm..nm + nv]);
    policy.log_std.copy_from_slice(&flat[nm + nv..]);
}

/// Runs `cfg.epochs` passes of shuffled minibatch steps and returns averaged stats.
pub fn ppo_update<R: Rng>(
    policy: &mut PolicyModel,
    optimizer: &mut Adam,
    batch: &Minibatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossStats, RlError> {
    if batch.is_empty() {
        return Err(RlError::Shape("empty batch".into()));
    }
    let mut batch = batch.clone();
    if cfg.normalize_advantages && batch.len() > 1 {
        let mean = batch.advantages.mean().unwrap_or(0.0);
        let std = batch.advantages.std(0.0);
        batch.advantages.mapv_inplace(|a| (a - mean) / (std + 1e-8));
    }
    let mut params = flat_params(policy);
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut sum = LossStats::default();
    let mut steps = 0.0;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch_size) {
            let (stats, mut grad) = loss_and_grad(policy, &batch.select(chunk), cfg)?;
            if stats.grad_norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / stats.grad_norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            optimizer.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(RlError::NonFinite("parameters after optimiser step".into()));
            }
            set_flat_params(policy, &params);
            sum.total += stats.total;
            sum.policy_loss += stats.policy_loss;
            sum.value_loss += stats.value_loss;
            sum.entropy += stats.entropy;
            sum.approx_kl += stats.approx_kl;
            sum.clip_fraction += stats.clip_fraction;
            sum.grad_norm += stats.grad_norm;
            steps += 1.0;
        }
    }
    Ok(LossStats {
        total: sum.total / steps,
        policy_loss: sum.policy_loss / steps,
        value_loss: sum.value_loss / steps,
        entropy: sum.entropy / steps,
        approx_kl: sum.approx_kl / steps,
        clip_fraction: sum.clip_fraction / steps,
        grad_norm: sum.grad_norm / steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tiny(rng: &mut ChaCha8Rng) -> PolicyModel {
        let mut p = PolicyModel::new(2, 2, &[4], -0.5, rng);
        // larger output gains so the surrogate is not flat in the head
        p.mean.params.iter_mut().for_each(|w| *w += rng.gen_range(-0.3..0.3));
        p
    }

    fn random_batch(p: &PolicyModel, n: usize, rng: &mut ChaCha8Rng) -> Minibatch {
        let obs = Array2::from_shape_fn((n, 2), |_| rng.sample(StandardNormal));
        let (mu, _) = p.forward(obs.view()).unwrap();
        let actions = &mu + &Array2::from_shape_fn((n, 2), |_| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let lp = log_probs(p, &obs, &actions).unwrap();
        let old_log_probs = lp.mapv(|l| l + rng.gen_range(-0.3..0.3));
        Minibatch {
            obs,
            actions,
            old_log_probs,
            advantages: Array1::from_shape_fn(n, |_| rng.sample(StandardNormal)),
            returns: Array1::from_shape_fn(n, |_| rng.sample(StandardNormal)),
        }
    }

    #[test]
    fn tiny_net_fits_the_gradient_check_budget() {
        let p = tiny(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.param_count() <= 64, "{}", p.param_count());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = PpoConfig { entropy_coef: 0.01, ..PpoConfig::default() };
        for _ in 0..20 {
            let mut p = tiny(&mut rng);
            let mb = random_batch(&p, 16, &mut rng);
            let (_, grad) = loss_and_grad(&p, &mb, &cfg).unwrap();
            let base = flat_params(&p);
            let h = 1e-5;
            for i in 0..base.len() {
                let mut x = base.clone();
                x[i] = base[i] + h;
                set_flat_params(&mut p, &x);
                let up = loss_and_grad(&p, &mb, &cfg).unwrap().0.total;
                x[i] = base[i] - h;
                set_flat_params(&mut p, &x);
                let down = loss_and_grad(&p, &mb, &cfg).unwrap().0.total;
                set_flat_params(&mut p, &base);
                let fd = (up - down) / (2.0 * h);
                let scale = fd.abs().max(grad[i].abs());
                assert!((fd - grad[i]).abs() <= 1e-4 * scale + 1e-9, "param {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn identity_ratio_gives_negative_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = tiny(&mut rng);
        let mut mb = random_batch(&p, 10, &mut rng);
        mb.old_log_probs = log_probs(&p, &mb.obs, &mb.actions).unwrap();
        mb.advantages.mapv_inplace(f64::abs);
        let (s, _) = loss_and_grad(&p, &mb, &PpoConfig::default()).unwrap();
        assert!((s.policy_loss + mb.advantages.mean().unwrap()).abs() < 1e-12);
        assert_eq!(s.clip_fraction, 0.0);
    }

    #[test]
    fn zero_advantages_leave_the_policy_head_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = tiny(&mut rng);
        let mut mb = random_batch(&p, 32, &mut rng);
        mb.advantages.fill(0.0);
        let (s, grad) = loss_and_grad(&p, &mb, &PpoConfig::default()).unwrap();
        assert_eq!(s.policy_loss, 0.0);
        let nm = p.mean.params.len();
        let nv = p.value.params.len();
        assert!(grad[..nm].iter().all(|g| *g == 0.0));
        assert!(grad[nm + nv..].iter().all(|g| *g == 0.0));
        let before = p.mean.clone();
        let cfg = PpoConfig { normalize_advantages: false, ..PpoConfig::default() };
        let mut opt = Adam::new(p.param_count(), 1e-3);
        ppo_update(&mut p, &mut opt, &mb, &cfg, &mut rng).unwrap();
        assert_eq!(p.mean, before);
    }

    #[test]
    fn updates_reduce_the_value_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = tiny(&mut rng);
        let mb = random_batch(&p, 64, &mut rng);
        let cfg = PpoConfig { epochs: 50, minibatch_size: 64, learning_rate: 1e-2, ..PpoConfig::default() };
        let before = loss_and_grad(&p, &mb, &cfg).unwrap().0.value_loss;
        let mut opt = Adam::new(p.param_count(), cfg.learning_rate);
        ppo_update(&mut p, &mut opt, &mb, &cfg, &mut rng).unwrap();
        let after = loss_and_grad(&p, &mb, &cfg).unwrap().0.value_loss;
        assert!(after < before, "{after} >= {before}");
    }
}

//! Variance-preserving noise schedule, the forward diffusion map and the
//! denoising loss.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Default diffusion horizon.
pub const DEFAULT_STEPS: usize = 200;

/// `(alpha_t, sigma_t)` for `t = 0..=T` with `alpha_t^2 + sigma_t^2 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    beta_start: f64,
    beta_end: f64,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

/// Linear beta ramp over `1..=steps`; `alpha_t = sqrt(prod_{s<=t} (1 - beta_s))`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(invalid!("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(invalid!(
            "betas must satisfy 0 < start <= end < 1, got {} and {}",
            beta_start,
            beta_end
        ));
    }
    let mut alphas = Vec::with_capacity(steps + 1);
    let mut sigmas = Vec::with_capacity(steps + 1);
    alphas.push(1.0);
    sigmas.push(0.0);
    let mut cumprod = 1.0;
    for s in 1..=steps {
        let frac = if steps == 1 { 0.0 } else { (s - 1) as f64 / (steps - 1) as f64 };
        let beta = beta_start + frac * (beta_end - beta_start);
        cumprod *= 1.0 - beta;
        alphas.push(libm::sqrt(cumprod));
        sigmas.push(libm::sqrt(1.0 - cumprod));
    }
    Ok(DiffusionSchedule { beta_start, beta_end, alphas, sigmas })
}

impl DiffusionSchedule {
    /// The standard 1000-step ramp `[1e-4, 0.02]` rescaled so `steps` steps
    /// destroy the signal to the same degree.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let k = 1000.0 / steps as f64;
        make_schedule(steps, 1e-4 * k, 0.02 * k)
    }

    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(invalid!("timestep {} outside 0..={}", t, self.steps()));
        }
        Ok(())
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::scaled_linear(DEFAULT_STEPS).expect("default schedule is valid")
    }
}

/// A latent tensor `[channels, height, width]` tagged with its timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub data: Tensor,
    pub timestep: usize,
}

impl LatentCode {
    pub fn clean(data: Tensor) -> Self {
        Self { data, timestep: 0 }
    }
}

/// Gaussian noise paired with a latent.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub data: Tensor,
}

/// `z_t = alpha_t * z0 + sigma_t * eps`.
pub fn forward_diffuse(
    z0: &LatentCode,
    t: usize,
    eps: &NoiseSample,
    sched: &DiffusionSchedule,
) -> Result<LatentCode> {
    sched.check_timestep(t)?;
    let data = z0.data.lincomb(sched.alpha(t), &eps.data, sched.sigma(t))?;
    Ok(LatentCode { data, timestep: t })
}

/// Mean over elements of the squared difference.
pub fn denoising_loss(pred_eps: &NoiseSample, true_eps: &NoiseSample) -> Result<f64> {
    pred_eps.data.expect_same_shape(&true_eps.data)?;
    Ok(kernels::mean_squared(pred_eps.data.data(), true_eps.data.data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn four_step_ramp_matches_hand_recurrence() {
        let s = make_schedule(4, 0.1, 0.4).unwrap();
        // betas 0.1, 0.2, 0.3, 0.4
        let expected = [1.0, 0.9f64, 0.9 * 0.8, 0.9 * 0.8 * 0.7, 0.9 * 0.8 * 0.7 * 0.6];
        for (t, e) in expected.iter().enumerate() {
            assert!((s.alpha(t) - e.sqrt()).abs() < 1e-15);
        }
        assert!((s.alpha(1) - 0.948_683_298_050_513_8).abs() < 1e-15);
    }

    #[test]
    fn boundary_convention() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        assert_eq!(s.steps(), DEFAULT_STEPS);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_diffuse_substitution() {
        let mut s = make_schedule(1, 0.36, 0.36).unwrap();
        // Force alpha=0.8, sigma=0.6 exactly.
        s.alphas[1] = 0.8;
        s.sigmas[1] = 0.6;
        let z0 = LatentCode::clean(Tensor::new(&[2], alloc::vec![1.0, 0.0]).unwrap());
        let eps = NoiseSample { data: Tensor::new(&[2], alloc::vec![0.0, 1.0]).unwrap() };
        let zt = forward_diffuse(&z0, 1, &eps, &s).unwrap();
        assert_eq!(zt.data.data(), &[0.8, 0.6]);
        assert_eq!(zt.timestep, 1);
        assert!(forward_diffuse(&z0, 2, &eps, &s).is_err());
    }

    #[test]
    fn zero_noise_scales_latent() {
        let s = DiffusionSchedule::default();
        let z0 = LatentCode::clean(Tensor::from_fn(&[4, 8, 8], |i| i as f64 * 0.01));
        let eps = NoiseSample { data: Tensor::zeros(&[4, 8, 8]) };
        let zt = forward_diffuse(&z0, 57, &eps, &s).unwrap();
        assert_eq!(zt.data, z0.data.scaled(s.alpha(57)));
    }

    #[test]
    fn loss_examples() {
        let a = NoiseSample { data: Tensor::new(&[2], alloc::vec![1.0, 1.0]).unwrap() };
        let b = NoiseSample { data: Tensor::zeros(&[2]) };
        assert_eq!(denoising_loss(&a, &b).unwrap(), 1.0);
        assert_eq!(denoising_loss(&a, &a).unwrap(), 0.0);
        let c = NoiseSample { data: Tensor::zeros(&[3]) };
        assert!(denoising_loss(&a, &c).is_err());
        // E||eps||^2 / d = 1.
        let d = 4096;
        let e = NoiseSample { data: rng::normal_tensor(&mut rng::seeded(3), &[d]) };
        let zero = NoiseSample { data: Tensor::zeros(&[d]) };
        let l = denoising_loss(&zero, &e).unwrap();
        assert!((l - 1.0).abs() < 5.0 / (d as f64).sqrt(), "{l}");
    }

    proptest! {
        #[test]
        // Total beta mass is kept below ~30 so 1 - prod(1 - beta) stays
        // distinguishable from 1 in f64.
        fn schedule_invariants(steps in 1usize..300, start in 1e-5f64..0.05, span in 0.0f64..0.05) {
            let end = start + span;
            let s = make_schedule(steps, start, end).unwrap();
            for t in 0..=steps {
                let id = s.alpha(t).powi(2) + s.sigma(t).powi(2);
                prop_assert!((id - 1.0).abs() < 1e-12);
            }
            for t in 1..=steps {
                prop_assert!(s.alpha(t) < s.alpha(t - 1));
                prop_assert!(s.sigma(t) > s.sigma(t - 1));
            }
        }

        #[test]
        fn loss_symmetric_nonnegative(a in proptest::collection::vec(-5.0f64..5.0, 1..32), seed in 0u64..1000) {
            let ta = Tensor::new(&[a.len()], a.clone()).unwrap();
            let tb = rng::normal_tensor(&mut rng::seeded(seed), &[a.len()]);
            let na = NoiseSample { data: ta };
            let nb = NoiseSample { data: tb };
            let l1 = denoising_loss(&na, &nb).unwrap();
            let l2 = denoising_loss(&nb, &na).unwrap();
            prop_assert_eq!(l1, l2);
            prop_assert!(l1 >= 0.0);
            prop_assert_eq!(denoising_loss(&na, &na).unwrap(), 0.0);
            prop_assert!(na == nb || l1 > 0.0);
        }
    }
}

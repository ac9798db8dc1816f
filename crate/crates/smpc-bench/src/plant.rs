//! Truth-plant simulation with Euler-Maruyama substeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smpc_core::{Matrix, Vector};

/// Exact plant dynamics, possibly richer than what the controller knows.
pub trait PlantModel: Send + Sync {
    /// State dimension.
    fn nx(&self) -> usize;
    /// Drift `f(x, u, t)` of the true system.
    fn drift(&self, x: &Vector, u: &Vector, t: f64) -> Vector;
}

/// Stochastic truth plant integrated with Euler-Maruyama substeps.
pub struct TruthPlant<M: PlantModel> {
    /// Exact dynamics.
    pub model: M,
    /// Diffusion matrix of the Wiener process (zero for ODE plants).
    pub sigma_w: Matrix,
    /// Number of substeps per sampling interval (>= 10 by construction).
    pub substeps: usize,
}

impl<M: PlantModel> TruthPlant<M> {
    /// Plant with `substeps` Euler-Maruyama steps per sampling interval.
    pub fn new(model: M, sigma_w: Matrix, substeps: usize) -> Self {
        Self {
            model,
            sigma_w,
            substeps: substeps.max(10),
        }
    }

    /// Advances the state over `[t, t + dt]` under the control signal
    /// `u(t)`, drawing diffusion increments from `rng`.
    pub fn step(
        &self,
        x: &Vector,
        u_of_t: impl Fn(f64) -> Vector,
        t: f64,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vector {
        let nx = self.model.nx();
        let h = dt / self.substeps as f64;
        let sqrt_h = h.sqrt();
        let diffusive = self.sigma_w.amax() > 0.0;
        let mut state = x.clone();
        for s in 0..self.substeps {
            let ts = t + s as f64 * h;
            let u = u_of_t(ts);
            let drift = self.model.drift(&state, &u, ts);
            state += drift * h;
            if diffusive {
                let dw = Vector::from_fn(nx, |_, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * sqrt_h
                });
                state += &self.sigma_w * dw;
            }
        }
        state
    }
}

/// Seeded RNG for rollout `index` of a named noise stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standard normal draw from an RNG.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

//! Hamiltonian dynamics and warmup adaptation primitives.

use rand::Rng;
use rand_distr::StandardNormal;

use super::SamplerError;
use crate::likelihood::BtdPosterior;

/// A differentiable log density over `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for BtdPosterior {
    fn dim(&self) -> usize {
        BtdPosterior::dim(self)
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(x, Some(grad))
    }
}

/// Position and momentum together with the cached log density and gradient
/// at the position.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(
        target: &T,
        position: Vec<f64>,
        momentum: Vec<f64>,
    ) -> Result<Self, SamplerError> {
        let mut grad = vec![0.0; target.dim()];
        let log_density = target.log_density_grad(&position, &mut grad);
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(SamplerError::NonFiniteGradient);
        }
        Ok(Self {
            position,
            momentum,
            log_density,
            grad,
        })
    }

    pub fn kinetic_energy(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .momentum
            .iter()
            .zip(inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    /// Total energy: potential `-log p` plus kinetic.
    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        -self.log_density + self.kinetic_energy(inv_mass)
    }

    fn step_in_place<T: LogDensity + ?Sized>(
        &mut self,
        step_size: f64,
        inv_mass: &[f64],
        target: &T,
    ) -> Result<(), SamplerError> {
        let half = 0.5 * step_size;
        for ((p, g), (q, m)) in self
            .momentum
            .iter_mut()
            .zip(&self.grad)
            .zip(self.position.iter_mut().zip(inv_mass))
        {
            *p += half * g;
            *q += step_size * m * *p;
        }
        self.log_density = target.log_density_grad(&self.position, &mut self.grad);
        if !self.log_density.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(SamplerError::NonFiniteGradient);
        }
        for (p, g) in self.momentum.iter_mut().zip(&self.grad) {
            *p += half * g;
        }
        Ok(())
    }
}

/// One symplectic leapfrog step with potential energy `-log p` and a
/// diagonal inverse mass matrix.
pub fn leapfrog_step<T: LogDensity + ?Sized>(
    point: &PhasePoint,
    step_size: f64,
    inv_mass: &[f64],
    target: &T,
) -> Result<PhasePoint, SamplerError> {
    let mut next = point.clone();
    next.step_in_place(step_size, inv_mass, target)?;
    Ok(next)
}

/// Energy error above which a transition counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Transition {
    pub accept_stat: f64,
    pub divergent: bool,
}

pub(crate) fn draw_momentum<R: Rng>(rng: &mut R, inv_mass: &[f64], out: &mut [f64]) {
    for (p, m) in out.iter_mut().zip(inv_mass) {
        let z: f64 = rng.sample(StandardNormal);
        *p = z / m.sqrt();
    }
}

/// Runs `n_steps` leapfrog steps from `current` and applies the Metropolis
/// correction. `current` is replaced on acceptance.
pub(crate) fn hmc_transition<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    current: &mut PhasePoint,
    step_size: f64,
    n_steps: usize,
    inv_mass: &[f64],
    rng: &mut R,
) -> Transition {
    draw_momentum(rng, inv_mass, &mut current.momentum);
    let h0 = current.hamiltonian(inv_mass);
    let mut proposal = current.clone();
    let mut divergent = false;
    for _ in 0..n_steps {
        if proposal.step_in_place(step_size, inv_mass, target).is_err() {
            divergent = true;
            break;
        }
        let h = proposal.hamiltonian(inv_mass);
        if !h.is_finite() || h - h0 > DIVERGENCE_THRESHOLD {
            divergent = true;
            break;
        }
    }
    if divergent {
        return Transition {
            accept_stat: 0.0,
            divergent: true,
        };
    }
    let log_ratio = h0 - proposal.hamiltonian(inv_mass);
    let accept_stat = log_ratio.min(0.0).exp();
    let u: f64 = rng.random();
    if u < accept_stat {
        *current = proposal;
    }
    Transition {
        accept_stat,
        divergent: false,
    }
}

/// Doubling/halving search for a step size whose single-step acceptance
/// straddles one half.
pub(crate) fn find_reasonable_step_size<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    start: &PhasePoint,
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let mut step = 0.1;
    let mut point = start.clone();
    draw_momentum(rng, inv_mass, &mut point.momentum);
    let h0 = point.hamiltonian(inv_mass);
    let log_ratio = |step: f64| match leapfrog_step(&point, step, inv_mass, target) {
        Ok(next) => {
            let h = next.hamiltonian(inv_mass);
            if h.is_finite() {
                h0 - h
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    };
    let direction = if log_ratio(step) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..60 {
        let lr = log_ratio(step);
        if direction * lr <= direction * 0.5f64.ln() {
            break;
        }
        step *= 2f64.powf(direction);
    }
    step.clamp(1e-8, 10.0)
}

/// Nesterov dual averaging of `log(step_size)` towards a target acceptance
/// statistic.
#[derive(Debug, Clone)]
pub struct DualAverage {
    target: f64,
    mu: f64,
    log_step: f64,
    log_step_avg: f64,
    h_bar: f64,
    count: f64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(target: f64, initial_step: f64) -> Self {
        Self {
            target,
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_avg: 0.0,
            h_bar: 0.0,
            count: 0.0,
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.count += 1.0;
        let eta = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_step = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.count.powf(-Self::KAPPA);
        self.log_step_avg = w * self.log_step + (1.0 - w) * self.log_step_avg;
    }

    pub fn step_size(&self) -> f64 {
        self.log_step.exp()
    }

    /// The averaged iterate, used once adaptation ends.
    pub fn final_step_size(&self) -> f64 {
        if self.count == 0.0 {
            self.step_size()
        } else {
            self.log_step_avg.exp()
        }
    }
}

/// Streaming per-coordinate variance.
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Sample variances shrunk towards `1e-3`, as in Stan's metric
    /// adaptation.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = if n > 1.0 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup phases: an initial fast interval, a sequence of doubling slow
/// windows (iteration ranges) that estimate the metric, and a terminal fast
/// interval.
pub(crate) fn slow_windows(n_warmup: usize) -> Vec<(usize, usize)> {
    if n_warmup < 20 {
        return Vec::new();
    }
    let (init, term, base) = if n_warmup >= 150 {
        (75, 50, 25)
    } else {
        let init = (0.15 * n_warmup as f64) as usize;
        let term = (0.1 * n_warmup as f64) as usize;
        (init, term, n_warmup - init - term)
    };
    let end = n_warmup - term;
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < end {
        let mut stop = start + size;
        // A window that would leave less than twice its size is stretched
        // to the end of the slow phase.
        if stop + 2 * size > end {
            stop = end;
        }
        windows.push((start, stop));
        start = stop;
        size *= 2;
    }
    windows
}

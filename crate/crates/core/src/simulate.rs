//! Trajectory generation and Monte Carlo ensembles.
//!
//! Runs start cold: `l_i(t) = 0` for every `t <= 0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelParams, Trajectory};
use crate::moments::Moments;
use crate::noise::{derive_seed, NoiseSource};

#[inline]
pub fn ramp(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Activation indicators of the last `W` steps: entry `(i, s)` is
/// `l_i(t - s) > 0` for `s = 1..=W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryWindow {
    n: usize,
    width: usize,
    active: Vec<bool>,
}

impl HistoryWindow {
    /// Empty history (cold start).
    pub fn cold(n: usize, width: usize) -> Self {
        Self {
            n,
            width,
            active: vec![false; n * width],
        }
    }

    /// Decodes a packed state where bit `i * width + (s - 1)` is entry `(i, s)`.
    pub fn from_bits(n: usize, width: usize, bits: u64) -> Self {
        let active = (0..n * width).map(|b| bits >> b & 1 == 1).collect();
        Self { n, width, active }
    }

    pub fn to_bits(&self) -> u64 {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .fold(0u64, |acc, (b, _)| acc | 1 << b)
    }

    pub fn n_processes(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Whether process `i` was active `lag` steps ago (`lag >= 1`).
    pub fn get(&self, i: usize, lag: usize) -> bool {
        self.active[i * self.width + lag - 1]
    }

    pub fn set(&mut self, i: usize, lag: usize, value: bool) {
        self.active[i * self.width + lag - 1] = value;
    }

    /// Advances one step: every lag ages by one and `activations` become lag 1.
    pub fn push(&mut self, activations: &[bool]) {
        if self.width == 0 {
            return;
        }
        for (i, &a) in activations.iter().enumerate() {
            let row = &mut self.active[i * self.width..(i + 1) * self.width];
            row.rotate_right(1);
            row[0] = a;
        }
    }
}

/// `h_i = sum_j J[i][j] * (active lags of j among 1..=t*[i][j])`.
pub fn interaction_field(params: &ModelParams, window: &HistoryWindow, i: usize) -> Result<f64> {
    let mut field = 0.0;
    for (j, coupling, lag) in params.incoming(i) {
        if lag > window.width() {
            return Err(Error::WindowTooNarrow {
                needed: lag,
                width: window.width(),
            });
        }
        let count = (1..=lag).filter(|&s| window.get(j, s)).count();
        field += coupling * count as f64;
    }
    Ok(field)
}

/// One update of every process given the window and this step's noise.
pub fn step(params: &ModelParams, window: &HistoryWindow, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != params.n_processes() {
        return Err(Error::Dimension("noise vector length differs from N".into()));
    }
    (0..params.n_processes())
        .map(|i| {
            let h = interaction_field(params, window, i)?;
            Ok(ramp(h + params.theta()[i] + noise[i]))
        })
        .collect()
}

/// Simulates `horizon` steps with noise from `seed`.
pub fn simulate(params: &ModelParams, horizon: usize, seed: u64) -> Result<Trajectory> {
    simulate_with_noise(params, horizon, &NoiseSource::new(seed, params.noise_rates()))
}

pub fn simulate_with_noise(
    params: &ModelParams,
    horizon: usize,
    noise: &NoiseSource,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    let losses = run(params, horizon, noise, |_, _| {});
    Trajectory::new(params.n_processes(), horizon, losses)
}

/// Core loop. Active-lag counts come from running activation counts:
/// `count_j(t, L) = A_j(t) - A_j(t - L)` with `A_j(t)` the number of active
/// steps among `0..t`. `observe(t, losses_at_t)` is called after each step.
fn run(
    params: &ModelParams,
    horizon: usize,
    noise: &NoiseSource,
    mut observe: impl FnMut(usize, &[f64]),
) -> Vec<f64> {
    let n = params.n_processes();
    let incoming: Vec<Vec<(usize, f64, usize)>> =
        (0..n).map(|i| params.incoming(i).collect()).collect();
    let mut streams: Vec<_> = (0..n).map(|i| noise.stream(i)).collect();
    // active_counts[j][t] = A_j(t)
    let mut active_counts: Vec<Vec<u32>> = vec![Vec::with_capacity(horizon + 1); n];
    active_counts.iter_mut().for_each(|a| a.push(0));
    let mut losses = vec![0.0; n * horizon];
    let mut current = vec![0.0; n];

    for t in 0..horizon {
        for i in 0..n {
            let mut h = 0.0;
            for &(j, coupling, lag) in &incoming[i] {
                let counts = &active_counts[j];
                let count = counts[t] - counts[t.saturating_sub(lag)];
                h += coupling * count as f64;
            }
            let xi = streams[i].next().expect("noise stream is infinite");
            let l = ramp(h + params.theta()[i] + xi);
            current[i] = l;
            losses[i * horizon + t] = l;
        }
        for (j, counts) in active_counts.iter_mut().enumerate() {
            let last = counts[t];
            counts.push(last + u32::from(current[j] > 0.0));
        }
        observe(t, &current);
    }
    losses
}

/// Cumulative losses of a trajectory, one row per process.
pub fn cumulative(trajectory: &Trajectory) -> Vec<Vec<f64>> {
    trajectory.cumulative()
}

/// Per-process, per-step sample moments of `z_i(t)` over a cold-start ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleMoments {
    pub n_samples: usize,
    pub horizon: usize,
    /// `mean[i][t]` for zero-based step `t`.
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub mean_se: Vec<Vec<f64>>,
    pub variance_se: Vec<Vec<f64>>,
}

const BLOCK: usize = 32;

/// Sample `k` of the ensemble uses seed `derive_seed(seed, k)`. Samples are
/// grouped in fixed blocks that run in parallel and are merged in block
/// order, so the output does not depend on thread scheduling.
pub fn ensemble_z_moments(
    params: &ModelParams,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<EnsembleMoments> {
    if n_samples < 2 {
        return Err(Error::InvalidValue("ensemble needs at least 2 samples".into()));
    }
    if horizon == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    let n = params.n_processes();
    let n_blocks = n_samples.div_ceil(BLOCK);
    let wave = rayon::current_num_threads().max(1) * 2;
    let mut total = vec![Moments::new(); n * horizon];

    for wave_start in (0..n_blocks).step_by(wave) {
        let blocks: Vec<Vec<Moments>> = (wave_start..(wave_start + wave).min(n_blocks))
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![Moments::new(); n * horizon];
                for k in b * BLOCK..((b + 1) * BLOCK).min(n_samples) {
                    let noise = NoiseSource::new(derive_seed(seed, k as u64), params.noise_rates());
                    let mut z = vec![0.0; n];
                    run(params, horizon, &noise, |t, l| {
                        for i in 0..n {
                            z[i] += l[i];
                            acc[i * horizon + t].push(z[i]);
                        }
                    });
                }
                acc
            })
            .collect();
        for block in &blocks {
            for (tot, m) in total.iter_mut().zip(block) {
                tot.merge(m);
            }
        }
    }

    let grid = |f: fn(&Moments) -> f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| total[i * horizon..(i + 1) * horizon].iter().map(f).collect())
            .collect()
    };
    Ok(EnsembleMoments {
        n_samples,
        horizon,
        mean: grid(Moments::mean),
        variance: grid(Moments::variance),
        mean_se: grid(Moments::mean_std_error),
        variance_se: grid(Moments::variance_std_error),
    })
}

/// `z_i(T)` for each ensemble member (same sub-seeds as
/// [`ensemble_z_moments`]); `result[k][i]`.
pub fn ensemble_final_z(
    params: &ModelParams,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    let n = params.n_processes();
    Ok((0..n_samples)
        .into_par_iter()
        .map(|k| {
            let noise = NoiseSource::new(derive_seed(seed, k as u64), params.noise_rates());
            let mut z = vec![0.0; n];
            run(params, horizon, &noise, |_, l| {
                z.iter_mut().zip(l).for_each(|(zi, li)| *zi += li);
            });
            z
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(j21: f64, lag: usize) -> ModelParams {
        ModelParams::new(
            vec![vec![0.0, 0.0], vec![j21, 0.0]],
            vec![vec![0, 0], vec![lag, 0]],
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn field_without_couplings_is_zero() {
        let p = ModelParams::isolated(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let mut w = HistoryWindow::cold(2, 3);
        w.set(0, 1, true);
        w.set(1, 2, true);
        assert_eq!(interaction_field(&p, &w, 0).unwrap(), 0.0);
        assert_eq!(interaction_field(&p, &w, 1).unwrap(), 0.0);
    }

    #[test]
    fn field_counts_active_lags() {
        let mut w = HistoryWindow::cold(2, 3);
        w.set(0, 1, true);
        assert_eq!(interaction_field(&chain(0.5, 1), &w, 1).unwrap(), 0.5);
        w.set(0, 3, true);
        assert_eq!(interaction_field(&chain(0.5, 3), &w, 1).unwrap(), 1.0);
        // lag 3 is outside a one-step memory
        assert_eq!(interaction_field(&chain(0.5, 1), &w, 1).unwrap(), 0.5);
    }

    #[test]
    fn narrow_window_is_structural_error() {
        let w = HistoryWindow::cold(2, 1);
        assert!(matches!(
            interaction_field(&chain(0.5, 3), &w, 1),
            Err(Error::WindowTooNarrow { needed: 3, width: 1 })
        ));
    }

    #[test]
    fn step_applies_ramp() {
        let p = ModelParams::isolated(vec![-1.0], vec![1.0]).unwrap();
        let w = HistoryWindow::cold(1, 0);
        assert_eq!(step(&p, &w, &[0.4]).unwrap(), vec![0.0]);
        assert!((step(&p, &w, &[1.7]).unwrap()[0] - 0.7).abs() < 1e-15);

        let p = ModelParams::new(
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
            vec![vec![0, 0], vec![1, 0]],
            vec![-1.0, -0.6],
            vec![1.0, 1.0],
        )
        .unwrap();
        let mut w = HistoryWindow::cold(2, 1);
        w.set(0, 1, true);
        let l = step(&p, &w, &[0.1, 0.3]).unwrap();
        assert_eq!(l[0], 0.0);
        assert!((l[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn window_push_and_bits() {
        let mut w = HistoryWindow::cold(2, 2);
        w.push(&[true, false]);
        w.push(&[false, true]);
        assert!(w.get(0, 2) && !w.get(0, 1) && w.get(1, 1) && !w.get(1, 2));
        let round = HistoryWindow::from_bits(2, 2, w.to_bits());
        assert_eq!(round, w);
    }

    #[test]
    fn huge_threshold_gives_zero_trajectory() {
        let p = ModelParams::isolated(vec![-1e9], vec![1.0]).unwrap();
        let traj = simulate(&p, 100, 1).unwrap();
        assert!(traj.row(0).iter().all(|&l| l == 0.0));
    }

    #[test]
    fn first_step_ignores_couplings() {
        let coupled = simulate(&chain(0.9, 2), 5, 11).unwrap();
        let free = simulate(&ModelParams::isolated(vec![-1.0; 2], vec![1.0; 2]).unwrap(), 5, 11)
            .unwrap();
        for i in 0..2 {
            assert_eq!(coupled.get(i, 0), free.get(i, 0));
        }
    }

    #[test]
    fn activation_frequency_matches_closed_form() {
        let p = ModelParams::isolated(vec![-1.0], vec![1.0]).unwrap();
        let n = 1_000_000;
        let traj = simulate(&p, n, 5).unwrap();
        let freq = traj.row(0).iter().filter(|&&l| l > 0.0).count() as f64 / n as f64;

        // Independent oracle: uniform bits pushed straight through Ramp(theta + xi)
        // with a different generator stream, compared against e^{lambda theta}.
        let expected = (-1.0f64).exp();
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((freq - expected).abs() < 5.0 * se, "freq {freq}");
        let oracle_noise = NoiseSource::new(12345, &[1.0]);
        let oracle = oracle_noise
            .stream(0)
            .take(n)
            .filter(|xi| ramp(-1.0 + xi) > 0.0)
            .count() as f64
            / n as f64;
        assert!((oracle - expected).abs() < 5.0 * se);
    }

    #[test]
    fn ensemble_mean_of_isolated_node() {
        let p = ModelParams::isolated(vec![-1.0], vec![1.0]).unwrap();
        let t = 1000;
        let ens = ensemble_z_moments(&p, t, 1000, 3).unwrap();
        let rate = ens.mean[0][t - 1] / t as f64;
        let se = ens.mean_se[0][t - 1] / t as f64;
        assert!((rate - (-1.0f64).exp()).abs() < 5.0 * se, "rate {rate} se {se}");
    }

    #[test]
    fn ensemble_of_two_is_finite() {
        let p = ModelParams::isolated(vec![-0.5], vec![1.0]).unwrap();
        let ens = ensemble_z_moments(&p, 10, 2, 0).unwrap();
        assert!(ens.variance[0].iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(ensemble_z_moments(&p, 10, 1, 0).is_err());
    }

    #[test]
    fn ensemble_is_deterministic() {
        let p = chain(0.5, 2);
        let a = ensemble_z_moments(&p, 50, 100, 9).unwrap();
        let b = ensemble_z_moments(&p, 50, 100, 9).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
        let finals = ensemble_final_z(&p, 50, 100, 9).unwrap();
        let mean_final: f64 = finals.iter().map(|z| z[1]).sum::<f64>() / 100.0;
        assert!((mean_final - a.mean[1][49]).abs() < 1e-9);
    }

    fn arb_params() -> impl Strategy<Value = ModelParams> {
        (1usize..=3).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..0.6, n * n),
                proptest::collection::vec(1usize..=3, n * n),
                proptest::collection::vec(0u8..3, n * n),
                proptest::collection::vec(-2.0f64..-0.05, n),
                proptest::collection::vec(0.3f64..3.0, n),
            )
                .prop_map(move |(js, lags, mask, theta, lambda)| {
                    let j = (0..n)
                        .map(|i| (0..n).map(|k| if mask[i * n + k] == 0 { js[i * n + k] } else { 0.0 }).collect())
                        .collect();
                    let t = (0..n).map(|i| lags[i * n..(i + 1) * n].to_vec()).collect();
                    ModelParams::new(j, t, theta, lambda).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn losses_are_nonnegative_and_seeded(p in arb_params(), seed in any::<u64>()) {
            let a = simulate(&p, 200, seed).unwrap();
            let b = simulate(&p, 200, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for i in 0..p.n_processes() {
                prop_assert!(a.row(i).iter().all(|&l| l >= 0.0));
            }
        }

        #[test]
        fn replay_reproduces_trajectory(p in arb_params(), seed in any::<u64>()) {
            let horizon = 150;
            let noise = NoiseSource::new(seed, p.noise_rates());
            let traj = simulate_with_noise(&p, horizon, &noise).unwrap();
            let n = p.n_processes();
            let mut window = HistoryWindow::cold(n, p.max_lag());
            for t in 0..horizon {
                let xi: Vec<f64> = (0..n).map(|i| noise.draw(i, t)).collect();
                let l = step(&p, &window, &xi).unwrap();
                for i in 0..n {
                    prop_assert_eq!(l[i].to_bits(), traj.get(i, t).to_bits());
                }
                window.push(&l.iter().map(|&x| x > 0.0).collect::<Vec<_>>());
            }
        }

        #[test]
        fn raising_a_coupling_never_lowers_losses(
            p in arb_params(),
            seed in any::<u64>(),
            pick in any::<(usize, usize)>(),
            bump in 0.01f64..0.5,
        ) {
            let n = p.n_processes();
            let (i, j) = (pick.0 % n, pick.1 % n);
            let mut couplings = p.couplings().to_vec();
            let mut lags = p.lags().to_vec();
            couplings[i][j] += bump;
            if lags[i][j] == 0 {
                lags[i][j] = 1;
            }
            let raised = ModelParams::new(couplings, lags, p.theta().to_vec(), p.noise_rates().to_vec()).unwrap();
            let base = simulate(&p, 200, seed).unwrap();
            let high = simulate(&raised, 200, seed).unwrap();
            for k in 0..n {
                for t in 0..200 {
                    prop_assert!(high.get(k, t) >= base.get(k, t));
                }
            }
        }
    }
}

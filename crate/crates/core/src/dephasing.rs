//! Ensemble frequency statistics for a clock built from `N` atoms whose
//! transition frequencies are scattered by their environment.
//!
//! Frequencies are in Hz and times in seconds. Random draws use a
//! counter-addressed ChaCha stream per `(seed, replica, atom)` so results do
//! not depend on how replicas are scheduled across threads.

use std::f64::consts::{LN_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DephasingError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be at least 1")]
    ZeroCount { name: &'static str },
    #[error("time grid must be strictly increasing and non-negative")]
    BadTimeGrid,
    #[error("frequency list is empty")]
    Empty,
}

pub type Result<T> = std::result::Result<T, DephasingError>;

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DephasingError::NonPositive { name, value })
    }
}

/// Standard deviation of a Gaussian with the given full width at half
/// maximum.
pub fn fwhm_to_sigma(fwhm: f64) -> Result<f64> {
    Ok(positive("fwhm", fwhm)? / (2.0 * (2.0 * LN_2).sqrt()))
}

/// Statistical description of an ensemble of clock atoms and the
/// replicas (similarly prepared ensembles) averaged over.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub atom_count: usize,
    pub center_frequency: f64,
    pub fwhm: f64,
    pub seed: u64,
    pub time_grid: Vec<f64>,
    pub replicas: usize,
}

impl Default for EnsembleConfig {
    /// 100 atoms at 100 Hz with a 10% linewidth, 10^4 replicas and a
    /// 0..0.5 s grid sampled every quarter period.
    fn default() -> Self {
        EnsembleConfig {
            atom_count: 100,
            center_frequency: 100.0,
            fwhm: 10.0,
            seed: 0x5eed_2024,
            time_grid: uniform_grid(0.0, 0.5, 201),
            replicas: 10_000,
        }
    }
}

/// `points` evenly spaced values covering `[start, stop]`.
pub fn uniform_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (points - 1) as f64;
            (0..points).map(|i| start + step * i as f64).collect()
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atom_count == 0 {
            return Err(DephasingError::ZeroCount { name: "atom_count" });
        }
        if self.replicas == 0 {
            return Err(DephasingError::ZeroCount { name: "replicas" });
        }
        positive("fwhm", self.fwhm)?;
        if !self.center_frequency.is_finite() {
            return Err(DephasingError::NonPositive {
                name: "center_frequency",
                value: self.center_frequency,
            });
        }
        let ordered = self.time_grid.windows(2).all(|w| w[0] < w[1]);
        if !ordered
            || self
                .time_grid
                .iter()
                .any(|t| t.is_nan() || *t < 0.0 || !t.is_finite())
        {
            return Err(DephasingError::BadTimeGrid);
        }
        Ok(())
    }

    pub fn sigma(&self) -> Result<f64> {
        fwhm_to_sigma(self.fwhm)
    }
}

/// Words reserved per atom in the replica's ChaCha stream. Ziggurat
/// sampling rarely needs more than two.
const WORDS_PER_ATOM: u128 = 64;

fn atom_rng(seed: u64, replica: u64, atom: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng.set_word_pos(atom as u128 * WORDS_PER_ATOM);
    rng
}

fn draw_replica(config: &EnsembleConfig, sigma: f64, replica: usize) -> Vec<f64> {
    (0..config.atom_count)
        .map(|k| {
            let z: f64 =
                StandardNormal.sample(&mut atom_rng(config.seed, replica as u64, k as u64));
            config.center_frequency + sigma * z
        })
        .collect()
}

/// Frequencies of replica 0.
pub fn sample_frequencies(config: &EnsembleConfig) -> Result<Vec<f64>> {
    sample_replica(config, 0)
}

/// Frequencies of the `replica`-th ensemble.
pub fn sample_replica(config: &EnsembleConfig, replica: usize) -> Result<Vec<f64>> {
    config.validate()?;
    Ok(draw_replica(config, config.sigma()?, replica))
}

pub fn mean_frequency(freqs: &[f64]) -> Result<f64> {
    if freqs.is_empty() {
        return Err(DephasingError::Empty);
    }
    Ok(freqs.iter().sum::<f64>() / freqs.len() as f64)
}

/// Average of `cos(2 pi f_k t)` over the ensemble.
pub fn mean_cos_phase(freqs: &[f64], t: f64) -> f64 {
    if freqs.is_empty() {
        return 0.0;
    }
    freqs.iter().map(|f| (2.0 * PI * f * t).cos()).sum::<f64>() / freqs.len() as f64
}

/// Expected mean cosine for independently drifting atoms.
pub fn envelope_independent(t: f64, sigma: f64, f0: f64) -> f64 {
    let w = 2.0 * PI * t;
    (-0.5 * w * w * sigma * sigma).exp() * (2.0 * PI * f0 * t).cos()
}

/// Expected mean cosine when every atom is locked to the ensemble mean:
/// the independent envelope with the width reduced by `sqrt(N)`.
pub fn envelope_locked(t: f64, sigma: f64, f0: f64, atom_count: usize) -> f64 {
    envelope_independent(t, sigma / (atom_count as f64).sqrt(), f0)
}

/// Time at which the Gaussian envelope factor has fallen to `e^{-1/2}`.
pub fn e_folding_time(sigma: f64) -> f64 {
    1.0 / (2.0 * PI * sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseModel {
    /// Each atom precesses at its own frequency.
    Independent,
    /// Every atom precesses at its replica's mean frequency.
    Locked,
}

/// Monte Carlo estimate of the replica-averaged mean cosine.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

const REPLICA_CHUNK: usize = 64;

/// Replica-averaged mean cosine on the config's time grid.
///
/// Replicas are processed in fixed chunks whose partial sums are reduced in
/// chunk order, so the result is bit-identical for any thread count.
pub fn monte_carlo_mean_cos(config: &EnsembleConfig, model: PhaseModel) -> Result<MonteCarloCurve> {
    config.validate()?;
    let sigma = config.sigma()?;
    let grid = &config.time_grid;
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..config.replicas)
        .collect::<Vec<_>>()
        .par_chunks(REPLICA_CHUNK)
        .map(|replicas| {
            let mut sum = vec![0.0; grid.len()];
            let mut sum_sq = vec![0.0; grid.len()];
            for &r in replicas {
                let freqs = draw_replica(config, sigma, r);
                let mean_f = freqs.iter().sum::<f64>() / freqs.len() as f64;
                for (i, &t) in grid.iter().enumerate() {
                    let v = match model {
                        PhaseModel::Independent => mean_cos_phase(&freqs, t),
                        PhaseModel::Locked => (2.0 * PI * mean_f * t).cos(),
                    };
                    sum[i] += v;
                    sum_sq[i] += v * v;
                }
            }
            (sum, sum_sq)
        })
        .collect();
    let mut sum = vec![0.0; grid.len()];
    let mut sum_sq = vec![0.0; grid.len()];
    for (s, q) in &chunks {
        for i in 0..grid.len() {
            sum[i] += s[i];
            sum_sq[i] += q[i];
        }
    }
    let m = config.replicas as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_error = if config.replicas > 1 {
        mean.iter()
            .zip(&sum_sq)
            .map(|(mu, q)| {
                let var = ((q - m * mu * mu) / (m - 1.0)).max(0.0);
                (var / m).sqrt()
            })
            .collect()
    } else {
        vec![f64::INFINITY; grid.len()]
    };
    Ok(MonteCarloCurve {
        times: grid.clone(),
        mean,
        std_error,
    })
}

/// Estimates when the envelope of `values ~ env(t) cos(2 pi f0 t)` drops
/// to `e^{-1/2}`, using only grid points near carrier extrema
/// (`|cos| >= 0.99`) and interpolating linearly between them.
pub fn estimate_e_folding_time(times: &[f64], values: &[f64], f0: f64) -> Option<f64> {
    let target = (-0.5f64).exp();
    let samples: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter_map(|(&t, &v)| {
            let carrier = (2.0 * PI * f0 * t).cos();
            (carrier.abs() >= 0.99).then(|| (t, v / carrier))
        })
        .collect();
    samples.windows(2).find_map(|w| {
        let ((t0, e0), (t1, e1)) = (w[0], w[1]);
        (e0 >= target && e1 < target).then(|| t0 + (e0 - target) * (t1 - t0) / (e0 - e1))
    })
}

/// Parameters of the closed-form Allan deviation. `averaging_time` is the
/// averaging interval, unrelated to the Zeno interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllanParams {
    pub fwhm: f64,
    pub carrier: f64,
    pub atom_count: f64,
    pub cycle_time: f64,
    pub averaging_time: f64,
}

pub fn allan_deviation(p: &AllanParams) -> Result<f64> {
    let fwhm = positive("fwhm", p.fwhm)?;
    let carrier = positive("carrier", p.carrier)?;
    let n = positive("atom_count", p.atom_count)?;
    let tc = positive("cycle_time", p.cycle_time)?;
    let tau = positive("averaging_time", p.averaging_time)?;
    Ok(fwhm / (carrier * n.sqrt()) * (tc / tau).sqrt())
}

/// Normalized histogram: `density` integrates to one over `edges`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn new(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        let mut inside = 0usize;
        for &x in samples {
            if x >= lo && x <= hi {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
                inside += 1;
            }
        }
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let density = counts
            .iter()
            .map(|&c| {
                if inside == 0 {
                    0.0
                } else {
                    c as f64 / (inside as f64 * width)
                }
            })
            .collect();
        Histogram { edges, density }
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn integral(&self) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.density)
            .map(|(w, d)| (w[1] - w[0]) * d)
            .sum()
    }
}

/// Individual-atom versus replica-mean frequency distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthHistograms {
    pub individual: Histogram,
    pub means: Histogram,
    pub individual_std: f64,
    pub mean_std: f64,
}

impl BandwidthHistograms {
    /// Narrowing factor; `sqrt(N)` in expectation.
    pub fn ratio(&self) -> f64 {
        self.individual_std / self.mean_std
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Histograms of every sampled frequency and of the replica means, binned
/// over `f0 ± 4 sigma`.
pub fn bandwidth_histogram(config: &EnsembleConfig, bins: usize) -> Result<BandwidthHistograms> {
    config.validate()?;
    if bins == 0 {
        return Err(DephasingError::ZeroCount { name: "bins" });
    }
    let sigma = config.sigma()?;
    let replicas: Vec<Vec<f64>> = (0..config.replicas)
        .into_par_iter()
        .map(|r| draw_replica(config, sigma, r))
        .collect();
    let individual: Vec<f64> = replicas.iter().flatten().copied().collect();
    let means: Vec<f64> = replicas
        .iter()
        .map(|f| f.iter().sum::<f64>() / f.len() as f64)
        .collect();
    let (lo, hi) = (
        config.center_frequency - 4.0 * sigma,
        config.center_frequency + 4.0 * sigma,
    );
    Ok(BandwidthHistograms {
        individual: Histogram::new(&individual, lo, hi, bins),
        means: Histogram::new(&means, lo, hi, bins),
        individual_std: sample_std(&individual),
        mean_std: if means.len() > 1 {
            sample_std(&means)
        } else {
            f64::NAN
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, replicas: usize) -> EnsembleConfig {
        EnsembleConfig {
            atom_count: n,
            replicas,
            time_grid: uniform_grid(0.0, 0.1, 41),
            ..EnsembleConfig::default()
        }
    }

    #[test]
    fn sigma_from_fwhm() {
        let k = 2.0 * (2.0 * LN_2).sqrt();
        assert!((fwhm_to_sigma(k).unwrap() - 1.0).abs() < 1e-15);
        // 10 / 2.354820045 = 4.246609
        assert!((fwhm_to_sigma(10.0).unwrap() - 4.246609).abs() < 1e-6);
        assert!(fwhm_to_sigma(0.0).is_err());
        assert!(fwhm_to_sigma(-1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_centered() {
        let cfg = small(100_000, 1);
        let a = sample_frequencies(&cfg).unwrap();
        assert_eq!(a, sample_frequencies(&cfg).unwrap());
        let sigma = cfg.sigma().unwrap();
        let mean = mean_frequency(&a).unwrap();
        assert!((mean - 100.0).abs() < 4.0 * sigma / (a.len() as f64).sqrt());
        assert!((sample_std(&a) / sigma - 1.0).abs() < 0.03);

        let narrow = EnsembleConfig {
            fwhm: 1e-12,
            ..small(50, 1)
        };
        assert!(sample_frequencies(&narrow)
            .unwrap()
            .iter()
            .all(|f| (f - 100.0).abs() < 1e-10));
    }

    #[test]
    fn replicas_draw_distinct_streams() {
        let cfg = small(5, 2);
        assert_ne!(
            sample_replica(&cfg, 0).unwrap(),
            sample_replica(&cfg, 1).unwrap()
        );
    }

    #[test]
    fn means_and_cosines() {
        assert_eq!(mean_frequency(&[100.0, 100.0, 100.0]).unwrap(), 100.0);
        assert_eq!(mean_frequency(&[99.0, 101.0]).unwrap(), 100.0);
        assert_eq!(mean_frequency(&[]), Err(DephasingError::Empty));
        assert_eq!(mean_cos_phase(&[3.0, 17.0, 100.0], 0.0), 1.0);
        assert!((mean_cos_phase(&[100.0], 0.005) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_identities() {
        let (sigma, f0) = (fwhm_to_sigma(10.0).unwrap(), 100.0);
        assert_eq!(envelope_independent(0.0, sigma, f0), 1.0);
        let t = e_folding_time(sigma);
        let carrier = (2.0 * PI * f0 * t).cos();
        assert!((envelope_independent(t, sigma, f0) / carrier - (-0.5f64).exp()).abs() < 1e-14);
        assert!((t - 0.03748).abs() < 1e-5);
        for i in 0..50 {
            let t = i as f64 * 0.01;
            assert_eq!(
                envelope_locked(t, sigma, f0, 1),
                envelope_independent(t, sigma, f0)
            );
        }
        assert!((e_folding_time(sigma / 10.0) / t - 10.0).abs() < 1e-12);
    }

    #[test]
    fn allan_closed_form() {
        let p = AllanParams {
            fwhm: 1.0,
            carrier: 1e9,
            atom_count: 100.0,
            cycle_time: 1.0,
            averaging_time: 100.0,
        };
        let s = allan_deviation(&p).unwrap();
        assert!((s - 1e-11).abs() <= 2.0 * f64::EPSILON * 1e-11);
        let quad = allan_deviation(&AllanParams {
            averaging_time: 400.0,
            ..p
        })
        .unwrap();
        assert_eq!(quad, s / 2.0);
        let many = allan_deviation(&AllanParams {
            atom_count: 1e4,
            ..p
        })
        .unwrap();
        assert!((s / many - 10.0).abs() < 1e-14);
        assert!(allan_deviation(&AllanParams {
            cycle_time: 0.0,
            ..p
        })
        .is_err());
    }

    #[test]
    fn histograms_normalized() {
        let h = bandwidth_histogram(&small(9, 2000), 40).unwrap();
        assert!((h.individual.integral() - 1.0).abs() < 1e-12);
        assert!((h.means.integral() - 1.0).abs() < 1e-12);
        assert_eq!(h.individual.centers().len(), 40);
    }

    #[test]
    fn single_atom_has_no_narrowing() {
        let h = bandwidth_histogram(&small(1, 4000), 30).unwrap();
        // both statistics come from the same samples
        assert!((h.ratio() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e_folding_estimate_on_exact_curve() {
        let sigma = fwhm_to_sigma(10.0).unwrap();
        let times = uniform_grid(0.0, 0.2, 801);
        let values: Vec<f64> = times
            .iter()
            .map(|&t| envelope_independent(t, sigma, 100.0))
            .collect();
        let est = estimate_e_folding_time(&times, &values, 100.0).unwrap();
        assert!((est / e_folding_time(sigma) - 1.0).abs() < 0.01);
    }

    #[test]
    fn invalid_configs() {
        assert!(EnsembleConfig {
            atom_count: 0,
            ..small(1, 1)
        }
        .validate()
        .is_err());
        assert!(EnsembleConfig {
            replicas: 0,
            ..small(1, 1)
        }
        .validate()
        .is_err());
        assert!(EnsembleConfig {
            time_grid: vec![0.1, 0.1],
            ..small(1, 1)
        }
        .validate()
        .is_err());
    }
}

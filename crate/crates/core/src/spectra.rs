//! Per-frequency signal-to-noise under a zero-drift diffusion.
//!
//! Frequencies are integer DFT bin indices `k` of an `n_points`-sample real
//! signal, and the periodogram of `x` is `|X_k|² / n`. With that convention a
//! signal built from bins of magnitude `√(n·A/k^α)` has periodogram `A/k^α`, and
//! white noise of per-sample variance `σ²` has expected periodogram `σ²`.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::rng;

/// Power-law initial spectrum `|x̂₀(ω)|² = A/ω^α` sampled on a grid of bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    pub amplitude: f64,
    pub alpha: f64,
    pub omega_grid: Vec<usize>,
    pub n_points: usize,
}

/// Bins 1..128 spaced roughly by √2, so neighbours differ by a sizeable power ratio.
pub const DEFAULT_OMEGA_GRID: [usize; 14] = [1, 2, 3, 4, 6, 8, 11, 16, 23, 32, 45, 64, 91, 128];

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self { amplitude: 1.0, alpha: 2.0, omega_grid: DEFAULT_OMEGA_GRID.to_vec(), n_points: 256 }
    }
}

impl SpectrumSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidRange(format!("spectral amplitude {} must be finite and >= 0", self.amplitude)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidRange(format!("power-law exponent {} must be finite and >= 0", self.alpha)));
        }
        if self.n_points < 4 || !self.n_points.is_power_of_two() {
            return Err(Error::InvalidRange(format!("n_points {} must be a power of two >= 4", self.n_points)));
        }
        if self.omega_grid.is_empty() {
            return Err(Error::InvalidRange("omega grid is empty".into()));
        }
        let nyquist = self.n_points / 2;
        for pair in self.omega_grid.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidRange(format!("omega grid not strictly ascending at {}", pair[1])));
            }
        }
        let (lo, hi) = (self.omega_grid[0], self.omega_grid[self.omega_grid.len() - 1]);
        if lo == 0 || hi > nyquist {
            return Err(Error::InvalidRange(format!("omega grid must lie in [1, {nyquist}], got [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// `A/ω^α`.
    pub fn power(&self, omega: f64) -> f64 {
        self.amplitude / omega.powf(self.alpha)
    }
}

/// Shape of the diffusion coefficient `g(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GKind {
    /// `g(t) = g0`
    Constant,
    /// `g(t) = g0·√t`
    Sqrt,
}

impl GKind {
    pub fn name(self) -> &'static str {
        match self {
            GKind::Constant => "constant",
            GKind::Sqrt => "sqrt",
        }
    }
}

impl std::str::FromStr for GKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "constant" => Ok(GKind::Constant),
            "sqrt" => Ok(GKind::Sqrt),
            other => Err(format!("unknown diffusion coefficient `{other}` (expected constant or sqrt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionNoise {
    pub g0: f64,
    pub kind: GKind,
}

impl Default for DiffusionNoise {
    fn default() -> Self {
        Self { g0: 1.0, kind: GKind::Constant }
    }
}

impl DiffusionNoise {
    pub fn constant(g0: f64) -> Self {
        Self { g0, kind: GKind::Constant }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g0.is_finite() && self.g0 >= 0.0) {
            return Err(Error::InvalidRange(format!("g0 = {} must be finite and >= 0", self.g0)));
        }
        Ok(())
    }

    /// `∫₀ᵗ g(s)² ds`, in closed form.
    pub fn noise_power(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let g2 = self.g0 * self.g0;
        Ok(match self.kind {
            GKind::Constant => g2 * t,
            GKind::Sqrt => 0.5 * g2 * t * t,
        })
    }

    /// The `t` at which the accumulated noise power reaches `power`.
    pub fn time_for_power(&self, power: f64) -> f64 {
        let g2 = self.g0 * self.g0;
        match self.kind {
            GKind::Constant => power / g2,
            GKind::Sqrt => (2.0 * power / g2).sqrt(),
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidRange(format!("time {t} must be finite and >= 0")));
    }
    Ok(())
}

/// `g0²·t` for a constant coefficient.
pub fn noise_power(g0: f64, t: f64) -> Result<f64> {
    DiffusionNoise::constant(g0).noise_power(t)
}

/// Analytic `(A/ω^α) / ∫₀ᵗ g²`.
pub fn snr(spec: &SpectrumSpec, noise: &DiffusionNoise, omega: f64, t: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::InvalidRange(format!("omega {omega} must be > 0")));
    }
    let p = noise.noise_power(t)?;
    if p == 0.0 {
        return Err(Error::InfiniteSnr(format!("no accumulated noise at t = {t}, g0 = {}", noise.g0)));
    }
    Ok(spec.power(omega) / p)
}

/// Time at which the analytic SNR at `omega` falls to `snr_th`.
pub fn threshold_time(spec: &SpectrumSpec, noise: &DiffusionNoise, omega: f64, snr_th: f64) -> Result<f64> {
    if !(omega > 0.0) || !(snr_th > 0.0) {
        return Err(Error::InvalidRange(format!("need omega > 0 and snr_th > 0, got {omega}, {snr_th}")));
    }
    if noise.g0 == 0.0 {
        return Err(Error::InfiniteSnr("g0 = 0 never reaches the threshold".into()));
    }
    Ok(noise.time_for_power(spec.power(omega) / snr_th))
}

/// Real signal with random phases and exact power-law bin magnitudes, plus
/// the largest imaginary component left by the inverse transform.
pub fn synth_powerlaw_signal_with_residue<R: Rng + ?Sized>(spec: &SpectrumSpec, rng: &mut R) -> (Vec<f64>, f64) {
    let n = spec.n_points;
    let half = n / 2;
    let mut bins = vec![Complex::new(0.0, 0.0); n];
    for k in 1..half {
        let mag = (n as f64 * spec.power(k as f64)).sqrt();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let z = Complex::from_polar(mag, phase);
        bins[k] = z;
        bins[n - k] = z.conj();
    }
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    bins[half] = Complex::new(sign * (n as f64 * spec.power(half as f64)).sqrt(), 0.0);

    FftPlanner::new().plan_fft_inverse(n).process(&mut bins);
    let scale = 1.0 / n as f64;
    let residue = bins.iter().fold(0.0f64, |m, z| m.max((z.im * scale).abs()));
    (bins.iter().map(|z| z.re * scale).collect(), residue)
}

pub fn synth_powerlaw_signal<R: Rng + ?Sized>(spec: &SpectrumSpec, rng: &mut R) -> Vec<f64> {
    synth_powerlaw_signal_with_residue(spec, rng).0
}

/// `|X_k|²/n` for `k = 0..=n/2`.
pub fn periodogram(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|z| z.norm_sqr() / n as f64).collect()
}

/// Ensemble-mean signal and noise power per grid bin.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectrum {
    pub t: f64,
    pub signal_power: Vec<f64>,
    pub noise_power: Vec<f64>,
}

impl EmpiricalSpectrum {
    pub fn snr(&self) -> Vec<f64> {
        self.signal_power.iter().zip(&self.noise_power).map(|(s, n)| s / n).collect()
    }

    /// First time the estimated SNR drops below `snr_th`, found by scaling the
    /// noise measured at `self.t` along the known growth law.
    pub fn threshold_times(&self, noise: &DiffusionNoise, snr_th: f64) -> Result<Vec<f64>> {
        let ref_power = noise.noise_power(self.t)?;
        Ok(self
            .signal_power
            .iter()
            .zip(&self.noise_power)
            .map(|(s, n)| noise.time_for_power(ref_power * s / (n * snr_th)))
            .collect())
    }
}

fn one_trial(spec: &SpectrumSpec, sigma: f64, seed: u64, trial: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::indexed(seed, trial);
    let signal = synth_powerlaw_signal(spec, &mut r);
    let noise: Vec<f64> = (0..spec.n_points).map(|_| sigma * rng::normal(&mut r)).collect();
    let (ps, pn) = (periodogram(&signal), periodogram(&noise));
    (spec.omega_grid.iter().map(|&k| ps[k]).collect(), spec.omega_grid.iter().map(|&k| pn[k]).collect())
}

/// Monte-Carlo SNR estimate at time `t`: each trial synthesizes a signal and
/// a single Gaussian noise draw of variance `∫₀ᵗ g²`.
///
/// Trial `i` uses substream `i` of `seed`, and sums are accumulated in trial
/// order, so the result does not depend on the number of worker threads.
pub fn empirical_snr_curve(
    spec: &SpectrumSpec,
    noise: &DiffusionNoise,
    t: f64,
    n_trials: usize,
    seed: u64,
) -> Result<EmpiricalSpectrum> {
    spec.validate()?;
    noise.validate()?;
    if n_trials < 2 {
        return Err(Error::InvalidRange(format!("n_trials = {n_trials}, need at least 2")));
    }
    let power = noise.noise_power(t)?;
    if power == 0.0 {
        return Err(Error::InfiniteSnr(format!("no accumulated noise at t = {t}, g0 = {}", noise.g0)));
    }
    let sigma = power.sqrt();

    #[cfg(feature = "parallel")]
    let trials: Vec<(Vec<f64>, Vec<f64>)> = {
        use rayon::prelude::*;
        (0..n_trials as u64).into_par_iter().map(|i| one_trial(spec, sigma, seed, i)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_trials as u64).map(|i| one_trial(spec, sigma, seed, i)).collect();

    let m = spec.omega_grid.len();
    let (mut s, mut n) = (vec![0.0; m], vec![0.0; m]);
    for (ps, pn) in &trials {
        for j in 0..m {
            s[j] += ps[j];
            n[j] += pn[j];
        }
    }
    let inv = 1.0 / n_trials as f64;
    s.iter_mut().chain(n.iter_mut()).for_each(|v| *v *= inv);
    Ok(EmpiricalSpectrum { t, signal_power: s, noise_power: n })
}

/// Grid frequencies between the 10th and 90th percentile of the grid.
pub fn mid_band(grid: &[usize]) -> Vec<usize> {
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    let at = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        let next = sorted[(i + 1).min(sorted.len() - 1)];
        sorted[i] as f64 * (1.0 - frac) + next as f64 * frac
    };
    let (lo, hi) = (at(0.1), at(0.9));
    grid.iter().copied().filter(|&w| (w as f64) >= lo && (w as f64) <= hi).collect()
}

/// Fraction of adjacent pairs `(a[i], a[i+1])` ordered the same way in both sequences.
pub fn adjacent_order_agreement(a: &[f64], b: &[f64]) -> f64 {
    let pairs = a.len().min(b.len()).saturating_sub(1);
    if pairs == 0 {
        return 1.0;
    }
    let agree = (0..pairs).filter(|&i| (a[i + 1] - a[i]).signum() == (b[i + 1] - b[i]).signum()).count();
    agree as f64 / pairs as f64
}

/// One row of `snr_curve.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRow {
    pub omega: usize,
    pub analytic_snr: f64,
    pub empirical_snr: f64,
    pub t_th_analytic: f64,
    pub t_th_empirical: f64,
}

pub fn snr_table(
    spec: &SpectrumSpec,
    noise: &DiffusionNoise,
    t: f64,
    snr_th: f64,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<SnrRow>> {
    let emp = empirical_snr_curve(spec, noise, t, n_trials, seed)?;
    let emp_snr = emp.snr();
    let emp_th = emp.threshold_times(noise, snr_th)?;
    spec.omega_grid
        .iter()
        .enumerate()
        .map(|(j, &w)| {
            Ok(SnrRow {
                omega: w,
                analytic_snr: snr(spec, noise, w as f64, t)?,
                empirical_snr: emp_snr[j],
                t_th_analytic: threshold_time(spec, noise, w as f64, snr_th)?,
                t_th_empirical: emp_th[j],
            })
        })
        .collect()
}

pub fn snr_table_csv(rows: &[SnrRow]) -> String {
    let mut out = String::from("omega,analytic_snr,empirical_snr,t_th_analytic,t_th_empirical\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e}\n",
            r.omega, r.analytic_snr, r.empirical_snr, r.t_th_analytic, r.t_th_empirical
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> (SpectrumSpec, DiffusionNoise) {
        (SpectrumSpec::default(), DiffusionNoise::default())
    }

    #[test]
    fn noise_power_examples() {
        assert_eq!(noise_power(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(noise_power(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(noise_power(0.5, 4.0).unwrap(), 1.0);
        assert!(noise_power(1.0, -1.0).is_err());
        let sqrt = DiffusionNoise { g0: 2.0, kind: GKind::Sqrt };
        assert_eq!(sqrt.noise_power(3.0).unwrap(), 18.0);
    }

    #[test]
    fn snr_examples() {
        let (spec, noise) = unit();
        assert_eq!(snr(&spec, &noise, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(snr(&spec, &noise, 2.0, 1.0).unwrap(), 0.25);
        for w in [1.0, 3.0, 17.0] {
            let a = snr(&spec, &noise, w, 0.7).unwrap();
            assert!((snr(&spec, &noise, w, 1.4).unwrap() - a / 2.0).abs() <= 1e-15 * a);
        }
        assert!(matches!(snr(&spec, &noise, 1.0, 0.0), Err(Error::InfiniteSnr(_))));
    }

    #[test]
    fn snr_factorizes() {
        for kind in [GKind::Constant, GKind::Sqrt] {
            let noise = DiffusionNoise { g0: 1.3, kind };
            let spec = SpectrumSpec { amplitude: 2.5, alpha: 1.5, ..Default::default() };
            for &w in &spec.omega_grid {
                let t = 0.37;
                let lhs = snr(&spec, &noise, w as f64, t).unwrap() * noise.noise_power(t).unwrap();
                assert!((lhs - spec.power(w as f64)).abs() <= 1e-15 * lhs);
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let (spec, noise) = unit();
        assert_eq!(threshold_time(&spec, &noise, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(threshold_time(&spec, &noise, 2.0, 1.0).unwrap(), 0.25);
        let flat = SpectrumSpec { alpha: 0.0, ..Default::default() };
        let t1 = threshold_time(&flat, &noise, 1.0, 1.0).unwrap();
        assert!(flat.omega_grid.iter().all(|&w| threshold_time(&flat, &noise, w as f64, 1.0).unwrap() == t1));
        // the sqrt coefficient solves g0² t²/2 = P / snr_th
        let sq = DiffusionNoise { g0: 1.0, kind: GKind::Sqrt };
        let t = threshold_time(&spec, &sq, 2.0, 1.0).unwrap();
        assert!((sq.noise_power(t).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn threshold_strictly_decreasing() {
        for alpha in [1.0, 2.0, 3.0] {
            let spec = SpectrumSpec { alpha, ..Default::default() };
            for kind in [GKind::Constant, GKind::Sqrt] {
                let noise = DiffusionNoise { g0: 1.0, kind };
                let th: Vec<f64> =
                    spec.omega_grid.iter().map(|&w| threshold_time(&spec, &noise, w as f64, 1.0).unwrap()).collect();
                assert!(th.windows(2).all(|p| p[1] < p[0]), "alpha {alpha} {kind:?}");
            }
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_signal() {
        let spec = SpectrumSpec { amplitude: 0.0, ..Default::default() };
        let x = synth_powerlaw_signal(&spec, &mut rng::indexed(1, 0));
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthesized_signal_is_real_with_exact_periodogram() {
        let spec = SpectrumSpec::default();
        let mut r = rng::indexed(5, 0);
        for _ in 0..20 {
            let (x, residue) = synth_powerlaw_signal_with_residue(&spec, &mut r);
            assert!(residue < 1e-10, "residue {residue}");
            let p = periodogram(&x);
            assert!(p[0] < 1e-20);
            for k in 1..=spec.n_points / 2 {
                let want = spec.power(k as f64);
                assert!((p[k] - want).abs() <= 1e-9 * want, "bin {k}");
            }
        }
    }

    #[test]
    fn ensemble_periodogram_matches_on_mid_band() {
        let spec = SpectrumSpec::default();
        let band = mid_band(&spec.omega_grid);
        let mut mean = vec![0.0; spec.n_points / 2 + 1];
        for i in 0..2000 {
            let p = periodogram(&synth_powerlaw_signal(&spec, &mut rng::indexed(11, i)));
            mean.iter_mut().zip(p).for_each(|(m, v)| *m += v / 2000.0);
        }
        for w in band {
            let want = spec.power(w as f64);
            assert!((mean[w] - want).abs() < 0.1 * want);
        }
    }

    #[test]
    fn mid_band_excludes_extremes() {
        let band = mid_band(&DEFAULT_OMEGA_GRID);
        // interpolated percentiles are 2.3 and 82.9
        assert_eq!(band, vec![3, 4, 6, 8, 11, 16, 23, 32, 45, 64]);
    }

    #[test]
    fn empirical_matches_analytic_and_scales_with_t() {
        let (spec, noise) = unit();
        let e1 = empirical_snr_curve(&spec, &noise, 1.0, 1000, 3).unwrap();
        for (j, &w) in spec.omega_grid.iter().enumerate() {
            if mid_band(&spec.omega_grid).contains(&w) {
                let a = snr(&spec, &noise, w as f64, 1.0).unwrap();
                assert!((e1.snr()[j] - a).abs() < 0.1 * a, "omega {w}");
            }
        }
        let e4 = empirical_snr_curve(&spec, &noise, 4.0, 1000, 3).unwrap();
        for (a, b) in e1.snr().iter().zip(e4.snr()) {
            assert!((b * 4.0 - a).abs() < 1e-9 * a, "same substreams give exact 1/4 scaling");
        }
    }

    #[test]
    fn empirical_threshold_ordering_matches() {
        for alpha in [1.0, 2.0, 3.0] {
            let spec = SpectrumSpec { alpha, ..Default::default() };
            let noise = DiffusionNoise::default();
            let rows = snr_table(&spec, &noise, 1.0, 1.0, 1000, 9).unwrap();
            let a: Vec<f64> = rows.iter().map(|r| r.t_th_analytic).collect();
            let e: Vec<f64> = rows.iter().map(|r| r.t_th_empirical).collect();
            assert!(adjacent_order_agreement(&a, &e) >= 0.95);
        }
    }

    #[test]
    fn zero_noise_is_signalled() {
        let spec = SpectrumSpec::default();
        let r = empirical_snr_curve(&spec, &DiffusionNoise::constant(0.0), 1.0, 10, 0);
        assert!(matches!(r, Err(Error::InfiniteSnr(_))));
        assert!(matches!(
            empirical_snr_curve(&spec, &DiffusionNoise::default(), 0.0, 10, 0),
            Err(Error::InfiniteSnr(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let bad = |f: fn(&mut SpectrumSpec)| {
            let mut s = SpectrumSpec::default();
            f(&mut s);
            s.validate().is_err()
        };
        assert!(bad(|s| s.n_points = 100));
        assert!(bad(|s| s.omega_grid = vec![0, 1]));
        assert!(bad(|s| s.omega_grid = vec![3, 2]));
        assert!(bad(|s| s.omega_grid = vec![1, 129]));
        assert!(bad(|s| s.alpha = -1.0));
        assert!(SpectrumSpec::default().validate().is_ok());
    }

    #[test]
    fn csv_header() {
        let (spec, noise) = unit();
        let rows = snr_table(&spec, &noise, 1.0, 1.0, 4, 0).unwrap();
        let csv = snr_table_csv(&rows);
        assert!(csv.starts_with("omega,analytic_snr,empirical_snr,t_th_analytic,t_th_empirical\n"));
        assert_eq!(csv.lines().count(), spec.omega_grid.len() + 1);
    }
}

//! Random-state sampling over the subspace `H_n`, Monte Carlo ensemble
//! statistics, exact-trace scaling scans over `(N, n = N^alpha)`, and
//! single-run interference patterns by sequential conditional position
//! sampling.
//!
//! Reproducibility contract: every stochastic task derives its own RNG from
//! the master seed and a task counter ([`stream_rng`]), so parallel scans
//! give bit-identical results regardless of scheduling.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::correlations::{ensemble_variance_c2_exact, mean_c2_exact};
use crate::error::{Error, Result};
use crate::fock::{expectation_band, StateVector, SystemParams, TwoModeOperator};
use crate::modes::ModePair;

/// Grid size for the inverse-CDF draw of each detected position.
const CDF_GRID: usize = 1 << 12;

/// RNG for task number `stream` under a master seed. Streams are
/// independent ChaCha12 counter streams, so any subset of tasks can run in
/// any order (or in parallel) without changing the numbers each one sees.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Draws a state uniformly from the unit sphere of `H_n`: n independent
/// standard complex Gaussian amplitudes, normalized.
pub fn sample_state(params: &SystemParams, rng: &mut impl Rng) -> StateVector {
    let n = params.dim();
    let mut amps: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut amps {
        *z /= norm;
    }
    StateVector::new(params.clone(), amps).expect("dimension matches by construction")
}

/// Sampling plan for one `(N, n)` point.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub params: SystemParams,
    pub samples: usize,
    pub seed: u64,
}

/// Monte Carlo estimates of the ensemble mean and total variance of an
/// observable, with batch-means standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleStats {
    pub mean: f64,
    /// Total variance `mean <A^2> - (mean <A>)^2`: quantum spread plus the
    /// state-to-state spread of `<A>`.
    pub variance: f64,
    pub mean_stderr: f64,
    pub variance_stderr: f64,
    pub samples: usize,
}

/// Estimates mean and total variance of `op` over `samples` random states.
/// Standard errors come from 20 batch means (infinite when fewer than two
/// batches are available — reported, not fatal).
pub fn ensemble_statistics(op: &TwoModeOperator, config: &EnsembleConfig) -> Result<EnsembleStats> {
    if config.samples == 0 {
        return Err(Error::InvalidParams("samples must be >= 1".into()));
    }
    let band = op.to_band_matrix(&config.params)?;
    let band_sq = band.matmul(&band);
    let per_sample: Vec<(f64, f64)> = (0..config.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, i as u64);
            let state = sample_state(&config.params, &mut rng);
            let amps = state.amplitudes();
            (
                expectation_band(&band, amps).re,
                expectation_band(&band_sq, amps).re,
            )
        })
        .collect();
    let batches = config.samples.min(20);
    let batch_size = config.samples / batches;
    let mut batch_means = Vec::with_capacity(batches);
    let mut batch_vars = Vec::with_capacity(batches);
    for b in 0..batches {
        let lo = b * batch_size;
        let hi = if b + 1 == batches { config.samples } else { lo + batch_size };
        let count = (hi - lo) as f64;
        let m1: f64 = per_sample[lo..hi].iter().map(|p| p.0).sum::<f64>() / count;
        let m2: f64 = per_sample[lo..hi].iter().map(|p| p.1).sum::<f64>() / count;
        batch_means.push(m1);
        batch_vars.push(m2 - m1 * m1);
    }
    let mean = per_sample.iter().map(|p| p.0).sum::<f64>() / config.samples as f64;
    let second = per_sample.iter().map(|p| p.1).sum::<f64>() / config.samples as f64;
    let variance = second - mean * mean;
    let spread = |vals: &[f64]| -> f64 {
        if vals.len() < 2 {
            return f64::INFINITY;
        }
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        let ss: f64 = vals.iter().map(|v| (v - avg) * (v - avg)).sum();
        (ss / (vals.len() as f64 - 1.0) / vals.len() as f64).sqrt()
    };
    Ok(EnsembleStats {
        mean,
        variance,
        mean_stderr: spread(&batch_means),
        variance_stderr: spread(&batch_vars),
        samples: config.samples,
    })
}

/// Nearest odd integer to `v`, at least 1.
pub fn round_to_odd(v: f64) -> u64 {
    let down = (v.floor() as i64) | 1; // nearest odd <= floor+1
    let down = down.max(1) as u64;
    let up = down + 2;
    if (v - down as f64).abs() <= (up as f64 - v).abs() {
        down
    } else {
        up
    }
}

/// One grid point of a scaling scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub n_particles: u64,
    pub subspace_dim: usize,
    pub mean: f64,
    pub variance: f64,
    /// delta A / mean A — the primary relative-fluctuation statistic.
    pub rel_fluct: f64,
    /// delta^2 A / mean^2 A, also emitted (see the regime notation caveat).
    pub rel_fluct_sq: f64,
    /// Monte Carlo standard error of the mean; 0 on the exact-trace path.
    pub stderr: f64,
}

/// Relative fluctuations along `n = round_to_odd(N^alpha)` with a log-log
/// slope fit of `rel_fluct` against `N`.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingScan {
    pub alpha: f64,
    pub points: Vec<ScanPoint>,
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Runs a scan with a caller-supplied evaluator returning `(mean, total
/// variance)` at each `(N, n)`. Grid points are independent tasks.
pub fn scaling_scan_with<F>(alpha: f64, n_grid: &[u64], eval: F) -> Result<ScalingScan>
where
    F: Fn(u64, usize) -> Result<(f64, f64)> + Sync,
{
    if n_grid.len() < 3 {
        return Err(Error::DegenerateFit { need: 3, got: n_grid.len() });
    }
    let points: Vec<ScanPoint> = n_grid
        .par_iter()
        .map(|&big_n| {
            if big_n == 0 || big_n % 2 != 0 {
                return Err(Error::InvalidParams(format!(
                    "particle numbers must be positive and even, got {big_n}"
                )));
            }
            let dim = round_to_odd((big_n as f64).powf(alpha)).min(big_n + 1) as usize;
            let (mean, variance) = eval(big_n, dim)?;
            let rel_fluct_sq = variance / (mean * mean);
            Ok(ScanPoint {
                n_particles: big_n,
                subspace_dim: dim,
                mean,
                variance,
                rel_fluct: rel_fluct_sq.max(0.0).sqrt(),
                rel_fluct_sq,
                stderr: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = points.iter().map(|p| (p.n_particles as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rel_fluct.ln()).collect();
    let (slope, slope_stderr) = line_fit(&xs, &ys)?;
    Ok(ScalingScan { alpha, points, slope, slope_stderr })
}

/// Exact-trace scan of the relative fluctuations of `C_2(x)`: the mean is
/// the microcanonical trace of the band operator and the variance the exact
/// second-moment assembly (polynomial plus contraction traces). Band
/// matrices here have dimension `n` and bandwidth <= 6, so the exact path
/// covers the whole grid.
pub fn scaling_scan(
    modes: &ModePair,
    x: f64,
    alpha: f64,
    n_grid: &[u64],
) -> Result<ScalingScan> {
    scaling_scan_with(alpha, n_grid, |big_n, dim| {
        let params = SystemParams::new(big_n, dim)?;
        let mean = mean_c2_exact(modes, x, &params)?;
        let variance = ensemble_variance_c2_exact(modes, x, &params, None)?;
        Ok((mean, variance))
    })
}

/// Least squares y = a + b x; returns `(b, stderr of b)`.
fn line_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let m = xs.len();
    if m < 3 {
        return Err(Error::DegenerateFit { need: 3, got: m });
    }
    let mf = m as f64;
    let xbar = xs.iter().sum::<f64>() / mf;
    let ybar = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    if sxx <= 0.0 {
        return Err(Error::FitNonConvergence("degenerate abscissa in slope fit".into()));
    }
    let b = sxy / sxx;
    let a = ybar - b * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (a + b * x);
            r * r
        })
        .sum();
    let stderr = (ss_res / (mf - 2.0) / sxx).sqrt();
    Ok((b, stderr))
}

/// Fit record of a simulated pattern: `A [1 + V cos(2 k0 x + 2 phi)]`.
#[derive(Debug, Clone, Serialize)]
pub struct PatternFit {
    pub visibility: f64,
    pub phi: f64,
    pub period: f64,
    pub chi2: f64,
}

/// One simulated run: the detected positions, their histogram, and the
/// fringe fit.
#[derive(Debug, Clone)]
pub struct PatternResult {
    pub positions: Vec<f64>,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub fit: PatternFit,
}

/// Cosine/sine of `2 k0 r` on the CDF grid, computed once per run.
fn fringe_tables(k0: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / CDF_GRID as f64;
    (0..CDF_GRID)
        .map(|i| {
            let phase = 2.0 * k0 * i as f64 * h;
            (phase.cos(), phase.sin())
        })
        .unzip()
}

/// Periodic-grid CDF of the conditional density
/// `p(r) = 1 + (2/m) Re(exp(2 i k0 r) s)` on [`CDF_GRID`] points; the last
/// entry is the total integral (1 up to quadrature roundoff).
fn cdf_from_tables(m_remaining: f64, s: Complex64, cos_t: &[f64], sin_t: &[f64]) -> Vec<f64> {
    // Re(e^{i phase} s) = s.re cos(phase) - s.im sin(phase).
    let density =
        |i: usize| 1.0 + 2.0 / m_remaining * (s.re * cos_t[i] - s.im * sin_t[i]);
    let h = 1.0 / CDF_GRID as f64;
    let mut cdf = Vec::with_capacity(CDF_GRID + 1);
    cdf.push(0.0);
    let mut prev = density(0);
    let mut acc = 0.0;
    for i in 1..=CDF_GRID {
        // Periodic wrap at the last panel.
        let next = density(i % CDF_GRID);
        acc += 0.5 * (prev + next) * h;
        cdf.push(acc);
        prev = next;
    }
    cdf
}

#[cfg(test)]
pub(crate) fn conditional_cdf(m_remaining: f64, s: Complex64, k0: f64) -> Vec<f64> {
    let (cos_t, sin_t) = fringe_tables(k0);
    cdf_from_tables(m_remaining, s, &cos_t, &sin_t)
}

fn draw_from_cdf(cdf: &[f64], u: f64) -> f64 {
    let total = *cdf.last().unwrap();
    let target = u * total;
    let mut lo = 0;
    let mut hi = cdf.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cdf[mid] <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let span = cdf[hi] - cdf[lo];
    let frac = if span > 0.0 { (target - cdf[lo]) / span } else { 0.5 };
    (lo as f64 + frac) / CDF_GRID as f64
}

/// Simulates a single measurement run: draws a state from `H_n`, then
/// detects the N particles one at a time. Each detection samples a position
/// from the conditional single-particle density of the current state,
/// applies the annihilation field operator at that position, and
/// renormalizes; the pattern builds up over the run. Histogram is fitted to
/// `A [1 + V cos(2 k0 x + 2 phi)]` by linear least squares.
///
/// Plane-wave modes only (the conditional densities are then two-harmonic
/// trigonometric polynomials); `N <= 1e5` keeps the `O(N^2)` state updates
/// affordable.
pub fn simulate_pattern(
    params: &SystemParams,
    modes: &ModePair,
    bins: usize,
    rng: &mut impl Rng,
) -> Result<PatternResult> {
    let k0 = match modes {
        ModePair::PlaneWave { .. } => modes.wavenumber().unwrap(),
        _ => {
            return Err(Error::InvalidModes(
                "pattern simulation requires plane-wave modes".into(),
            ))
        }
    };
    let big_n = params.n_particles();
    if big_n > 100_000 {
        return Err(Error::InvalidParams(format!(
            "pattern simulation capped at N = 1e5, got {big_n}"
        )));
    }
    if bins < 4 {
        return Err(Error::InvalidParams("need at least 4 histogram bins".into()));
    }
    let state = sample_state(params, rng);
    // Amplitudes over the mode-a occupation A = N/2 + l, supported on a
    // window that widens by at most one per detection.
    let mut d = vec![Complex64::new(0.0, 0.0); big_n as usize + 1];
    let half = params.half_range();
    for l in params.labels() {
        d[(big_n as i64 / 2 + l) as usize] = state.amplitude(l);
    }
    let mut lo = (big_n as i64 / 2 - half) as usize;
    let mut hi = (big_n as i64 / 2 + half) as usize;
    let (cos_t, sin_t) = fringe_tables(k0);
    let mut positions = Vec::with_capacity(big_n as usize);
    for step in 0..big_n {
        let m = big_n - step; // particles remaining before this detection
        // Fringe amplitude s = sum_A sqrt((A+1)(m - A)) d_{A+1} conj(d_A)
        // over the support; the conditional density is
        // (m + 2 Re(e^{2 i k0 r} s)) / m.
        let mut s = Complex64::new(0.0, 0.0);
        let upper = hi.min(m as usize - 1);
        for a in lo..=upper {
            let weight = (((a + 1) as f64) * ((m as usize - a) as f64)).sqrt();
            s += weight * d[a + 1] * d[a].conj();
        }
        let cdf = cdf_from_tables(m as f64, s, &cos_t, &sin_t);
        let r = draw_from_cdf(&cdf, rng.gen::<f64>());
        positions.push(r);
        // Apply psi(r) and renormalize: the new amplitude over A' in
        // 0..m-1 mixes d_{A'+1} (mode a) and d_{A'} (mode b).
        let psi_a = Complex64::from_polar(1.0, k0 * r);
        let psi_b = Complex64::from_polar(1.0, -k0 * r);
        let new_lo = lo.saturating_sub(1);
        let new_hi = hi.min(m as usize - 1);
        let mut norm_sq = 0.0;
        let mut updated = vec![Complex64::new(0.0, 0.0); new_hi - new_lo + 1];
        for (idx, a) in (new_lo..=new_hi).enumerate() {
            let from_a = psi_a * ((a + 1) as f64).sqrt() * d[a + 1];
            let from_b = psi_b * ((m as usize - a) as f64).sqrt() * d[a];
            let e = from_a + from_b;
            norm_sq += e.norm_sqr();
            updated[idx] = e;
        }
        let inv_norm = 1.0 / norm_sq.sqrt();
        for (idx, a) in (new_lo..=new_hi).enumerate() {
            d[a] = updated[idx] * inv_norm;
        }
        if new_hi + 1 < d.len() {
            d[new_hi + 1] = Complex64::new(0.0, 0.0);
        }
        lo = new_lo;
        hi = new_hi;
    }
    let (bin_centers, counts) = histogram(&positions, bins);
    let fit = fit_fringes(&bin_centers, &counts, k0)?;
    Ok(PatternResult { positions, bin_centers, counts, fit })
}

fn histogram(positions: &[f64], bins: usize) -> (Vec<f64>, Vec<u64>) {
    let mut counts = vec![0u64; bins];
    for &r in positions {
        let idx = ((r.rem_euclid(1.0)) * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let centers = (0..bins).map(|i| (i as f64 + 0.5) / bins as f64).collect();
    (centers, counts)
}

/// Linear least squares of the counts on {1, cos 2k0 x, sin 2k0 x}; the
/// fringe parameters follow from the two quadrature amplitudes.
fn fit_fringes(centers: &[f64], counts: &[u64], k0: f64) -> Result<PatternFit> {
    let mut g = [[0.0f64; 3]; 3];
    let mut t = [0.0f64; 3];
    for (&x, &c) in centers.iter().zip(counts) {
        let basis = [1.0, (2.0 * k0 * x).cos(), (2.0 * k0 * x).sin()];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += basis[i] * basis[j];
            }
            t[i] += basis[i] * c as f64;
        }
    }
    let det3 = |m: &[[f64; 3]; 3]| -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let den = det3(&g);
    if den.abs() < 1e-12 {
        return Err(Error::FitNonConvergence("singular fringe fit".into()));
    }
    let solve = |col: usize| {
        let mut m = g;
        for (row, mrow) in m.iter_mut().enumerate() {
            mrow[col] = t[row];
        }
        det3(&m) / den
    };
    let a0 = solve(0);
    let ac = solve(1);
    let asn = solve(2);
    if a0 <= 0.0 {
        return Err(Error::FitNonConvergence("non-positive fitted baseline".into()));
    }
    // a0 [1 + V cos(2 k0 x + 2 phi)] = a0 + a0 V cos(2phi) cos - a0 V sin(2phi) sin.
    let visibility = (ac * ac + asn * asn).sqrt() / a0;
    let phi = 0.5 * (-asn).atan2(ac);
    let mut chi2 = 0.0;
    for (&x, &c) in centers.iter().zip(counts) {
        let model = a0 + ac * (2.0 * k0 * x).cos() + asn * (2.0 * k0 * x).sin();
        chi2 += (c as f64 - model) * (c as f64 - model) / model.max(1.0);
    }
    Ok(PatternFit { visibility, phi, period: std::f64::consts::PI / k0, chi2 })
}

/// Binned estimate of the two-point correlation of one run: the density of
/// ordered pairs at circular separation `x`, comparable with
/// `N^2 [1 + cos(2 k0 x) / 2]`. The grid must be uniform starting at 0 and
/// tiling the unit circle (bin width = spacing).
#[allow(non_snake_case)]
pub fn empirical_C2(positions: &[f64], x_grid: &[f64]) -> Result<Vec<f64>> {
    let bins = x_grid.len();
    if bins < 2 {
        return Err(Error::InvalidParams("need at least 2 grid points".into()));
    }
    let w = x_grid[1] - x_grid[0];
    let uniform = x_grid
        .windows(2)
        .all(|p| ((p[1] - p[0]) - w).abs() < 1e-9 * w.abs().max(1e-12));
    if !uniform || x_grid[0].abs() > 1e-12 || (w * bins as f64 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(
            "bin width incompatible with grid: need a uniform grid from 0 tiling [0, 1)".into(),
        ));
    }
    let mut h = vec![0.0f64; bins];
    for &r in positions {
        let idx = ((r.rem_euclid(1.0)) / w) as usize;
        h[idx.min(bins - 1)] += 1.0;
    }
    let n_pos = positions.len() as f64;
    let mut out = Vec::with_capacity(bins);
    for j in 0..bins {
        let mut pairs = 0.0;
        for b in 0..bins {
            pairs += h[b] * h[(b + j) % bins];
        }
        if j == 0 {
            pairs -= n_pos; // remove self pairs
        }
        out.push(pairs / w);
    }
    Ok(out)
}

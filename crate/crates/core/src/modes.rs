//! Single-particle mode pairs and the symmetrized k-body products built
//! from them.
//!
//! Spatial conventions: plane-wave and tabulated modes live on the periodic
//! unit interval, so `psi = exp(±i k0 r)` with `k0 = 2 pi q` is both
//! unit-modulus and unit-normalized; far-field Gaussian modes live on the
//! real line. Everything is one-dimensional.
//!
//! Two normalizations of the symmetrized product are exposed. [`phi_m`]
//! sums over all `k!` permutations, so identical assignments are counted
//! `m! (k-m)!` times. [`phi_m_normalized`] sums over the distinct subsets
//! instead; this is the convention in which the two-block decomposition
//! identity checked by [`cluster_decompose_check`] holds with unit
//! coefficients, and it is the one used by the fluctuation calculus.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Cap on the particle order of the symmetrized products (`k!` terms).
pub const ORDER_CAP: usize = 6;

const ORTHONORMALITY_TOL: f64 = 1e-8;

/// A pair of orthonormal single-particle wavefunctions.
#[derive(Debug, Clone)]
pub enum ModePair {
    /// Counterpropagating plane waves `exp(±i k0 r)` on the unit interval,
    /// `k0 = 2 pi q` with integer harmonic `q >= 1`.
    PlaneWave { harmonic: u32 },
    /// Two initially separated Gaussians released at `t = 0` and evaluated
    /// in the long-time asymptotic (far-field) form.
    FarFieldGaussian { z_a: f64, z_b: f64, sigma: f64, t: f64 },
    /// Modes tabulated on a grid over the periodic unit interval, evaluated
    /// by linear interpolation.
    Tabulated {
        grid: Vec<f64>,
        values_a: Vec<Complex64>,
        values_b: Vec<Complex64>,
    },
}

/// Where integrals over positions run for a given mode pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// Periodic unit interval `[0, 1)`.
    UnitInterval,
    /// Real line, truncated to the given window for quadrature.
    RealLine { lo: f64, hi: f64 },
}

impl ModePair {
    pub fn plane_wave(harmonic: u32) -> Result<Self> {
        if harmonic == 0 {
            return Err(Error::InvalidModes(
                "plane-wave harmonic must be a positive integer".into(),
            ));
        }
        Ok(Self::PlaneWave { harmonic })
    }

    /// Far-field (asymptotic free evolution) form of two Gaussians of
    /// initial width `sigma` centered at `z_a` and `z_b`, expanded for a
    /// time `t`. The evolved wavefunctions are
    /// `(4 pi i t)^{-1/2} exp(i z^2 / 4t) psi_tilde(z / 2t)`, closed-form
    /// for Gaussian initial data.
    pub fn far_field_gaussian(z_a: f64, z_b: f64, sigma: f64, t: f64) -> Result<Self> {
        if t <= 0.0 {
            return Err(Error::InvalidModes(format!("expansion time must be positive, got {t}")));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidModes(format!("initial width must be positive, got {sigma}")));
        }
        Ok(Self::FarFieldGaussian { z_a, z_b, sigma, t })
    }

    /// Validates unit norm and mutual orthogonality on the periodic unit
    /// interval before accepting tabulated modes.
    pub fn tabulated(
        grid: Vec<f64>,
        values_a: Vec<Complex64>,
        values_b: Vec<Complex64>,
    ) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values_a.len() || grid.len() != values_b.len() {
            return Err(Error::InvalidModes("grid and value arrays must have equal length >= 2".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 || *grid.last().unwrap() >= 1.0 {
            return Err(Error::InvalidModes("grid must be strictly increasing inside [0, 1)".into()));
        }
        // Validation integrals use the tabulated nodes themselves (periodic
        // trapezoid); resampling through the interpolant would bias norms low.
        let weights: Vec<f64> = (0..grid.len())
            .map(|i| {
                let next = grid[(i + 1) % grid.len()] + if i + 1 == grid.len() { 1.0 } else { 0.0 };
                let prev = if i == 0 { grid[grid.len() - 1] - 1.0 } else { grid[i - 1] };
                (next - prev) / 2.0
            })
            .collect();
        let node_integral = |f: &dyn Fn(usize) -> Complex64| -> Complex64 {
            (0..grid.len()).map(|i| f(i) * weights[i]).sum()
        };
        let norm_a = node_integral(&|i| values_a[i].norm_sqr().into());
        let norm_b = node_integral(&|i| values_b[i].norm_sqr().into());
        let overlap = node_integral(&|i| values_a[i].conj() * values_b[i]);
        let pair = Self::Tabulated { grid, values_a, values_b };
        if (norm_a.re - 1.0).abs() > ORTHONORMALITY_TOL
            || (norm_b.re - 1.0).abs() > ORTHONORMALITY_TOL
        {
            return Err(Error::InvalidModes(format!(
                "tabulated modes not unit-normalized: |psi_a|^2 integrates to {:.10}, |psi_b|^2 to {:.10}",
                norm_a.re, norm_b.re
            )));
        }
        if overlap.norm() > ORTHONORMALITY_TOL {
            return Err(Error::InvalidModes(format!(
                "tabulated modes not orthogonal: overlap magnitude {:.3e}",
                overlap.norm()
            )));
        }
        Ok(pair)
    }

    /// Loads tabulated modes from a whitespace-separated text file with
    /// columns `position re_a im_a re_b im_b`; lines starting with `#` are
    /// comments.
    pub fn load_tabulated(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut grid = Vec::new();
        let mut values_a = Vec::new();
        let mut values_b = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            if fields.len() != 5 {
                return Err(Error::Parse(format!(
                    "line {}: expected 5 columns (position re_a im_a re_b im_b), got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            grid.push(fields[0]);
            values_a.push(Complex64::new(fields[1], fields[2]));
            values_b.push(Complex64::new(fields[3], fields[4]));
        }
        Self::tabulated(grid, values_a, values_b)
    }

    pub fn domain(&self) -> Domain {
        match self {
            Self::PlaneWave { .. } | Self::Tabulated { .. } => Domain::UnitInterval,
            Self::FarFieldGaussian { z_a, z_b, sigma, t } => {
                // Evolved envelopes are centered at the origin with density
                // width t/sigma; keep room for offsets of a few widths.
                let spread = t / sigma;
                let pad = 10.0 * spread + z_a.abs() + z_b.abs();
                Domain::RealLine { lo: -pad, hi: pad }
            }
        }
    }

    /// `k0 = 2 pi q` for plane waves; `z0 / 4t` for far-field Gaussians
    /// (the effective time-dependent wavenumber of the interference).
    pub fn wavenumber(&self) -> Option<f64> {
        match self {
            Self::PlaneWave { harmonic } => Some(2.0 * PI * *harmonic as f64),
            Self::FarFieldGaussian { z_a, z_b, t, .. } => Some((z_b - z_a) / (4.0 * t)),
            Self::Tabulated { .. } => None,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::PlaneWave { .. } => "plane_wave",
            Self::FarFieldGaussian { .. } => "far_field_gaussian",
            Self::Tabulated { .. } => "tabulated",
        }
    }

    pub fn eval_a(&self, r: f64) -> Complex64 {
        match self {
            Self::PlaneWave { harmonic } => {
                Complex64::from_polar(1.0, 2.0 * PI * *harmonic as f64 * r)
            }
            Self::FarFieldGaussian { z_a, z_b: _, sigma, t } => {
                far_field_eval(r, *z_a, *sigma, *t)
            }
            Self::Tabulated { grid, values_a, .. } => interp_periodic(grid, values_a, r),
        }
    }

    pub fn eval_b(&self, r: f64) -> Complex64 {
        match self {
            Self::PlaneWave { harmonic } => {
                Complex64::from_polar(1.0, -2.0 * PI * *harmonic as f64 * r)
            }
            Self::FarFieldGaussian { z_a: _, z_b, sigma, t } => {
                far_field_eval(r, *z_b, *sigma, *t)
            }
            Self::Tabulated { grid, values_b, .. } => interp_periodic(grid, values_b, r),
        }
    }

    /// Initial (t = 0) wavefunctions of the far-field Gaussian variant.
    pub fn initial_a(&self, z: f64) -> Result<Complex64> {
        match self {
            Self::FarFieldGaussian { z_a, sigma, .. } => Ok(initial_gaussian(z, *z_a, *sigma)),
            _ => Err(Error::InvalidModes("initial wavefunctions only defined for far-field Gaussians".into())),
        }
    }

    pub fn initial_b(&self, z: f64) -> Result<Complex64> {
        match self {
            Self::FarFieldGaussian { z_b, sigma, .. } => Ok(initial_gaussian(z, *z_b, *sigma)),
            _ => Err(Error::InvalidModes("initial wavefunctions only defined for far-field Gaussians".into())),
        }
    }

}

impl fmt::Display for ModePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PlaneWave { harmonic } => write!(f, "plane_wave(q={harmonic})"),
            Self::FarFieldGaussian { z_a, z_b, sigma, t } => {
                write!(f, "far_field_gaussian(z_a={z_a}, z_b={z_b}, sigma={sigma}, t={t})")
            }
            Self::Tabulated { grid, .. } => write!(f, "tabulated({} points)", grid.len()),
        }
    }
}

/// Normalized initial Gaussian: density standard deviation `sigma`.
fn initial_gaussian(z: f64, center: f64, sigma: f64) -> Complex64 {
    let norm = (2.0 * PI * sigma * sigma).powf(-0.25);
    Complex64::new(norm * (-(z - center).powi(2) / (4.0 * sigma * sigma)).exp(), 0.0)
}

/// Far-field form of a released Gaussian:
/// `(4 pi i t)^{-1/2} e^{i z^2/4t} psi_tilde(z/2t)` with
/// `psi_tilde(k) = (8 pi sigma^2)^{1/4} e^{-i k c - k^2 sigma^2}`.
fn far_field_eval(z: f64, center: f64, sigma: f64, t: f64) -> Complex64 {
    let k = z / (2.0 * t);
    let prefactor = (4.0 * PI * t).powf(-0.5);
    let phase = z * z / (4.0 * t) - k * center - PI / 4.0;
    let mag = (8.0 * PI * sigma * sigma).powf(0.25) * (-k * k * sigma * sigma).exp();
    Complex64::from_polar(prefactor * mag, phase)
}

fn interp_periodic(grid: &[f64], values: &[Complex64], r: f64) -> Complex64 {
    let r = r.rem_euclid(1.0);
    // Index of the last grid point <= r; wraps periodically.
    let idx = match grid.binary_search_by(|g| g.partial_cmp(&r).unwrap()) {
        Ok(i) => return values[i],
        Err(0) => grid.len() - 1,
        Err(i) => i - 1,
    };
    let next = (idx + 1) % grid.len();
    let x0 = grid[idx];
    let mut x1 = grid[next];
    let mut x = r;
    if next == 0 {
        x1 += 1.0;
        if x < x0 {
            x += 1.0;
        }
    }
    let w = (x - x0) / (x1 - x0);
    values[idx] * (1.0 - w) + values[next] * w
}

fn check_order(m: usize, k: usize) -> Result<()> {
    if k > ORDER_CAP {
        return Err(Error::OrderTooLarge { k, cap: ORDER_CAP });
    }
    if m > k {
        return Err(Error::ModeOrderOutOfRange { m, k });
    }
    Ok(())
}

/// Subset-sum symmetrized product: sum over the `C(k, m)` assignments of
/// `m` points to mode a, of the product of mode values.
pub fn phi_m_normalized(modes: &ModePair, m: usize, points: &[f64]) -> Result<Complex64> {
    let k = points.len();
    check_order(m, k)?;
    let values_a: Vec<Complex64> = points.iter().map(|&r| modes.eval_a(r)).collect();
    let values_b: Vec<Complex64> = points.iter().map(|&r| modes.eval_b(r)).collect();
    Ok(phi_from_values(m, &values_a, &values_b))
}

pub(crate) fn phi_from_values(m: usize, values_a: &[Complex64], values_b: &[Complex64]) -> Complex64 {
    let k = values_a.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for mask in 0u32..(1 << k) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let mut prod = Complex64::new(1.0, 0.0);
        for i in 0..k {
            prod *= if mask & (1 << i) != 0 { values_a[i] } else { values_b[i] };
        }
        acc += prod;
    }
    acc
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Permutation-sum symmetrized k-body product with `m` particles in mode a:
/// the subset sum times the multiplicity `m! (k-m)!`.
pub fn phi_m(modes: &ModePair, m: usize, points: &[f64]) -> Result<Complex64> {
    let k = points.len();
    let norm = factorial(m.min(k)) * factorial(k.saturating_sub(m));
    Ok(phi_m_normalized(modes, m, points)? * norm)
}

/// `F_m = |Phi_m|^2` in the permutation convention.
pub fn f_m(modes: &ModePair, m: usize, points: &[f64]) -> Result<f64> {
    Ok(phi_m(modes, m, points)?.norm_sqr())
}

/// `F_m` in the subset convention used by the fluctuation calculus.
pub fn f_m_normalized(modes: &ModePair, m: usize, points: &[f64]) -> Result<f64> {
    Ok(phi_m_normalized(modes, m, points)?.norm_sqr())
}

/// Residual of the two-block decomposition of the subset-convention
/// product over `2k` points:
/// `Phi_M(all) - sum_m Phi_{M-m}(first k) Phi_m(last k)`.
pub fn cluster_decompose_check(modes: &ModePair, m_total: usize, points: &[f64]) -> Result<f64> {
    let two_k = points.len();
    if two_k % 2 != 0 {
        return Err(Error::InvalidModes("cluster check needs an even number of points".into()));
    }
    let k = two_k / 2;
    check_order(m_total.min(two_k), two_k.min(ORDER_CAP * 2))?;
    if m_total > two_k {
        return Err(Error::ModeOrderOutOfRange { m: m_total, k: two_k });
    }
    let whole = phi_m_normalized(modes, m_total, points)?;
    let (first, last) = points.split_at(k);
    let mut sum = Complex64::new(0.0, 0.0);
    let lo = m_total.saturating_sub(k);
    let hi = m_total.min(k);
    for m in lo..=hi {
        sum += phi_m_normalized(modes, m_total - m, first)? * phi_m_normalized(modes, m, last)?;
    }
    Ok((whole - sum).norm())
}

/// Convolution of the two initial modes, its peak, and the local quadratic
/// structure of the log-magnitude around the peak.
#[derive(Debug, Clone)]
pub struct ConvolutionProfile {
    /// Displacements at which the convolution was sampled.
    pub displacements: Vec<f64>,
    /// Log-magnitude `F_ab(z)` of the convolution.
    pub log_magnitude: Vec<f64>,
    /// Phase `phi_ab(z)`.
    pub phase: Vec<f64>,
    /// Peak location of the magnitude.
    pub z0: f64,
    /// Curvature `F_ab''(z0)` (negative at an interior maximum).
    pub curvature: f64,
}

impl ConvolutionProfile {
    /// Ratio `z0 / (2 pi / |F''|)` of the separation condition; the modes
    /// behave like counterpropagating plane waves when this is large.
    pub fn separation_ratio(&self) -> f64 {
        self.z0 * self.curvature.abs() / (2.0 * PI)
    }

    /// Exponent `(z0 F'')^2` governing the suppression of the mixed
    /// overlap integrals in the far field.
    pub fn suppression_exponent(&self) -> f64 {
        (self.z0 * self.curvature).powi(2)
    }
}

/// Numerically evaluates `int psi_a*(z') psi_b(z' + z) dz'` for the initial
/// far-field Gaussian data (or tabulated modes on the unit interval) and
/// extracts peak location, log-magnitude, phase and curvature.
pub fn convolution_profile(modes: &ModePair) -> Result<ConvolutionProfile> {
    let (zs, va, vb, step, periodic) = match modes {
        ModePair::FarFieldGaussian { z_a, z_b, sigma, .. } => {
            let lo = z_a.min(*z_b) - 12.0 * sigma;
            let hi = z_a.max(*z_b) + 12.0 * sigma;
            let count = 1 << 12;
            let step = (hi - lo) / count as f64;
            let zs: Vec<f64> = (0..count).map(|i| lo + i as f64 * step).collect();
            let va: Vec<Complex64> = zs.iter().map(|&z| modes.initial_a(z).unwrap()).collect();
            let vb: Vec<Complex64> = zs.iter().map(|&z| modes.initial_b(z).unwrap()).collect();
            (zs, va, vb, step, false)
        }
        ModePair::Tabulated { .. } => {
            let count = 1 << 12;
            let step = 1.0 / count as f64;
            let zs: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
            let va: Vec<Complex64> = zs.iter().map(|&z| modes.eval_a(z)).collect();
            let vb: Vec<Complex64> = zs.iter().map(|&z| modes.eval_b(z)).collect();
            (zs, va, vb, step, true)
        }
        ModePair::PlaneWave { .. } => {
            return Err(Error::InvalidModes(
                "plane waves are not spatially separated; no convolution profile".into(),
            ))
        }
    };
    // Separation precondition: pointwise overlap of the densities.
    let peak_a = va.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let peak_b = vb.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let overlap = va
        .iter()
        .zip(vb.iter())
        .map(|(a, b)| a.norm() * b.norm())
        .fold(0.0, f64::max);
    if !periodic && overlap > 1e-3 * peak_a * peak_b {
        return Err(Error::InvalidModes(format!(
            "modes not spatially separated: peak density overlap {:.3e}",
            overlap / (peak_a * peak_b)
        )));
    }
    let count = zs.len();
    let lo = zs[0];
    // Displacement grid matches the sample grid, centered on zero shift.
    let mut displacements = Vec::with_capacity(count);
    let mut log_magnitude = Vec::with_capacity(count);
    let mut phase = Vec::with_capacity(count);
    for j in 0..count {
        let z = if periodic {
            j as f64 * step
        } else {
            (j as i64 - count as i64 / 2) as f64 * step
        };
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..count {
            let shifted = if periodic {
                va[i].conj() * vb[(i + j) % count]
            } else {
                let target = zs[i] + z;
                let fi = (target - lo) / step;
                if fi < 0.0 || fi >= (count - 1) as f64 {
                    continue;
                }
                let i0 = fi as usize;
                let w = fi - i0 as f64;
                va[i].conj() * (vb[i0] * (1.0 - w) + vb[i0 + 1] * w)
            };
            acc += shifted;
        }
        acc *= step;
        displacements.push(z);
        log_magnitude.push(acc.norm().max(f64::MIN_POSITIVE).ln());
        phase.push(acc.arg());
    }
    // Peak of the magnitude and a five-point quadratic fit of F_ab there.
    let (best, _) = log_magnitude
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    if !periodic && (best < 2 || best + 2 >= count) {
        return Err(Error::NoInteriorMaximum);
    }
    let window: Vec<(f64, f64)> = (-2i64..=2)
        .map(|d| {
            let idx = if periodic {
                ((best as i64 + d).rem_euclid(count as i64)) as usize
            } else {
                (best as i64 + d) as usize
            };
            (d as f64 * step, log_magnitude[idx])
        })
        .collect();
    let (a2, a1, _a0) = quadratic_fit(&window)?;
    if a2 >= 0.0 {
        return Err(Error::NoInteriorMaximum);
    }
    let z0 = displacements[best] - a1 / (2.0 * a2);
    Ok(ConvolutionProfile {
        displacements,
        log_magnitude,
        phase,
        z0,
        curvature: 2.0 * a2,
    })
}

/// Least-squares fit of `y = a2 x^2 + a1 x + a0`.
fn quadratic_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 3 {
        return Err(Error::DegenerateFit { need: 3, got: points.len() });
    }
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    for &(x, y) in points {
        let mut xp = 1.0;
        for (j, sj) in s.iter_mut().enumerate() {
            *sj += xp;
            if j < 3 {
                t[j] += y * xp;
            }
            xp *= x;
        }
    }
    let _ = n;
    // Solve the 3x3 normal equations by Cramer's rule.
    let m = [
        [s[0], s[1], s[2]],
        [s[1], s[2], s[3]],
        [s[2], s[3], s[4]],
    ];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 {
        return Err(Error::FitNonConvergence("singular quadratic fit".into()));
    }
    let solve = |col: usize| {
        let mut mm = m;
        for (row, mrow) in mm.iter_mut().enumerate() {
            mrow[col] = t[row];
        }
        det(&mm) / d
    };
    let a0 = solve(0);
    let a1 = solve(1);
    let a2 = solve(2);
    Ok((a2, a1, a0))
}

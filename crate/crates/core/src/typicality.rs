//! The fluctuation calculus: overlap integrals I and J of the symmetrized
//! mode products against an integration kernel, assembly of the leading
//! variance coefficients `D_{2k,0}` and `D_{2k-2,2}`, the full leading
//! variance polynomial in `(N, n)`, and the regime classification of the
//! relative fluctuations.
//!
//! The observable is `A_k = integral of a kernel against the normal-ordered
//! k-point density product`. Its ensemble variance over random states drawn
//! from the `n`-dimensional subspace expands, at leading order, in the
//! basis `(N/2)^p n^q`; the observable concentrates (is "typical") iff the
//! top coefficient `D_{2k,0}` vanishes.
//!
//! All `Phi_m` products here use the subset normalization
//! ([`crate::modes::phi_m_normalized`]), in which the two-block cluster
//! decomposition carries unit coefficients and the double-sum identities
//! below hold verbatim.

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modes::{phi_from_values, Domain, ModePair, ORDER_CAP};
use crate::poly::{moment_sum, rat_to_f64, BivariatePoly, Rat};

/// Relative tolerance declaring `D_{2k,0}` zero, scaled by `sum |I_mm|^2`.
pub const TYPICALITY_TOL: f64 = 1e-10;

const QUADRATURE_TOL: f64 = 1e-10;
const QUADRATURE_CAP: usize = 1 << 20;

/// Integration kernel defining a k-particle observable.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// `A(r_1..r_k) = integral dr prod_i delta(r_i - (r + x_{i-1}))` with
    /// `x_0 = 0`: the integrated k-point density correlation at relative
    /// offsets `x_1..x_{k-1}`.
    DeltaComb { offsets: Vec<f64> },
    /// Kernel tabulated on the k-fold tensor grid of `axis` over the
    /// periodic unit interval; `values` has length `axis.len()^k`, indexed
    /// with the first position slowest.
    GridKernel { k: usize, axis: Vec<f64>, values: Vec<f64> },
}

impl KernelSpec {
    pub fn delta_comb(offsets: Vec<f64>) -> Result<Self> {
        let k = offsets.len() + 1;
        if k > ORDER_CAP {
            return Err(Error::OrderTooLarge { k, cap: ORDER_CAP });
        }
        for (i, &x) in offsets.iter().enumerate() {
            if x == 0.0 {
                return Err(Error::InvalidKernel("comb offsets must be nonzero".into()));
            }
            for &y in &offsets[..i] {
                if x == y {
                    return Err(Error::InvalidKernel(format!("coincident comb offsets {x}")));
                }
            }
        }
        Ok(Self::DeltaComb { offsets })
    }

    pub fn grid_kernel(k: usize, axis: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if k == 0 || k > 3 {
            return Err(Error::InvalidKernel("grid kernels support 1 <= k <= 3".into()));
        }
        let g = axis.len();
        if g < 2 || values.len() != g.pow(k as u32) {
            return Err(Error::InvalidKernel(format!(
                "grid kernel needs {}^{k} values, got {}",
                g,
                values.len()
            )));
        }
        if axis.windows(2).any(|w| w[1] <= w[0]) || axis[0] < 0.0 || axis[g - 1] >= 1.0 {
            return Err(Error::InvalidKernel("axis must increase inside [0, 1)".into()));
        }
        Ok(Self::GridKernel { k, axis, values })
    }

    /// Particle order of the observable.
    pub fn order(&self) -> usize {
        match self {
            Self::DeltaComb { offsets } => offsets.len() + 1,
            Self::GridKernel { k, .. } => *k,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::DeltaComb { offsets } => format!(
                "delta_comb(offsets=[{}])",
                offsets.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
            ),
            Self::GridKernel { k, axis, .. } => {
                format!("grid_kernel(k={k}, {} axis points)", axis.len())
            }
        }
    }
}

/// Outcome of the concentration test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "typical")]
    Typical,
    #[serde(rename = "not typical")]
    NotTypical,
}

/// Full result of the fluctuation analysis for one kernel and mode pair.
#[derive(Debug, Clone, Serialize)]
pub struct TypicalityReport {
    pub k: usize,
    pub kernel: String,
    pub mode_variant: String,
    /// `I_{m,m'}` as `[re, im]` pairs, row m, column m'.
    #[serde(rename = "I_table")]
    pub i_table: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "J")]
    pub j_value: f64,
    #[serde(rename = "D_2k0")]
    pub d_2k0: f64,
    #[serde(rename = "D_2k2")]
    pub d_2k2: f64,
    pub verdict: Verdict,
    /// Predicted relative-fluctuation exponent as a function of
    /// `alpha = log n / log N`, as a human-readable piecewise law.
    pub regime: String,
}

impl TypicalityReport {
    pub fn i(&self, m: usize, mp: usize) -> Complex64 {
        let [re, im] = self.i_table[m][mp];
        Complex64::new(re, im)
    }

    /// Natural scale against which `D_{2k,0}` is compared.
    pub fn natural_scale(&self) -> f64 {
        (0..self.i_table.len()).map(|m| self.i(m, m).norm_sqr()).sum()
    }
}

/// Adaptive trapezoid integration, doubling the point count until the
/// relative change drops below `1e-10`. On the periodic unit interval the
/// uniform sum is spectrally accurate for smooth integrands.
pub(crate) fn adaptive_integral(
    f: &(dyn Fn(f64) -> Complex64 + Sync),
    domain: Domain,
) -> Result<Complex64> {
    let mut points = 64usize;
    let mut prev: Option<Complex64> = None;
    loop {
        let value = match domain {
            Domain::UnitInterval => {
                let sum: Complex64 = (0..points)
                    .into_par_iter()
                    .map(|i| f(i as f64 / points as f64))
                    .sum();
                sum / points as f64
            }
            Domain::RealLine { lo, hi } => {
                let step = (hi - lo) / points as f64;
                let sum: Complex64 = (0..=points)
                    .into_par_iter()
                    .map(|i| {
                        let w = if i == 0 || i == points { 0.5 } else { 1.0 };
                        f(lo + i as f64 * step) * w
                    })
                    .sum();
                sum * step
            }
        };
        if let Some(p) = prev {
            let rel = (value - p).norm() / value.norm().max(1e-300);
            // Treat a tiny absolute value as converged-to-zero rather than
            // chasing relative accuracy of pure roundoff.
            if rel < QUADRATURE_TOL || (value - p).norm() < 1e-14 {
                return Ok(value);
            }
            if points >= QUADRATURE_CAP {
                return Err(Error::QuadratureNonConvergence { rel, points });
            }
        }
        prev = Some(value);
        points *= 2;
    }
}

/// Plane-wave subset amplitude `sigma_m = sum over size-m subsets S of the
/// comb positions of exp(i k0 theta_S)`, `theta_S = sum_S x_i - sum_{S^c} x_i`.
fn plane_wave_subset_amplitude(k0: f64, positions: &[f64], m: usize) -> Complex64 {
    let k = positions.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for mask in 0u32..(1 << k) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let mut theta = 0.0;
        for (i, &x) in positions.iter().enumerate() {
            theta += if mask & (1 << i) != 0 { x } else { -x };
        }
        acc += Complex64::from_polar(1.0, k0 * theta);
    }
    acc
}

fn comb_positions(offsets: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(offsets.iter().copied()).collect()
}

/// `I_{m,m'} = integral of the kernel against conj(Phi_{m'}) Phi_m` over
/// the k positions. For a delta comb this is a single 1-D integral over the
/// comb origin; for plane waves that integral has the closed form
/// `delta_{m,m'} |sigma_m|^2` by box orthogonality.
#[allow(non_snake_case)]
pub fn integral_I(
    kernel: &KernelSpec,
    modes: &ModePair,
    m: usize,
    mp: usize,
) -> Result<Complex64> {
    let k = kernel.order();
    if m > k || mp > k {
        return Err(Error::ModeOrderOutOfRange { m: m.max(mp), k });
    }
    match (kernel, modes) {
        (KernelSpec::DeltaComb { offsets }, ModePair::PlaneWave { .. }) => {
            if m != mp {
                return Ok(Complex64::new(0.0, 0.0));
            }
            let k0 = modes.wavenumber().unwrap();
            let positions = comb_positions(offsets);
            // Mirror m > k/2 onto its complement so that the exact float
            // symmetry I_mm = I_{k-m,k-m} holds bitwise; the subset sums of
            // complementary subsets are conjugates of each other.
            let m_eff = m.min(k - m);
            Ok(plane_wave_subset_amplitude(k0, &positions, m_eff)
                .norm_sqr()
                .into())
        }
        (KernelSpec::DeltaComb { offsets }, _) => {
            let positions = comb_positions(offsets);
            let domain = modes.domain();
            let f = |r: f64| {
                let va: Vec<Complex64> = positions.iter().map(|&x| modes.eval_a(r + x)).collect();
                let vb: Vec<Complex64> = positions.iter().map(|&x| modes.eval_b(r + x)).collect();
                phi_from_values(mp, &va, &vb).conj() * phi_from_values(m, &va, &vb)
            };
            adaptive_integral(&f, domain)
        }
        (KernelSpec::GridKernel { k, axis, values }, _) => {
            if !matches!(modes.domain(), Domain::UnitInterval) {
                return Err(Error::InvalidKernel(
                    "grid kernels require modes on the unit interval".into(),
                ));
            }
            let g = axis.len();
            let va: Vec<Complex64> = axis.iter().map(|&r| modes.eval_a(r)).collect();
            let vb: Vec<Complex64> = axis.iter().map(|&r| modes.eval_b(r)).collect();
            let weight = (1.0 / g as f64).powi(*k as i32);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = vec![0usize; *k];
            for flat in 0..values.len() {
                let mut rem = flat;
                for slot in (0..*k).rev() {
                    idx[slot] = rem % g;
                    rem /= g;
                }
                let pa: Vec<Complex64> = idx.iter().map(|&i| va[i]).collect();
                let pb: Vec<Complex64> = idx.iter().map(|&i| vb[i]).collect();
                acc += values[flat]
                    * phi_from_values(mp, &pa, &pb).conj()
                    * phi_from_values(m, &pa, &pb);
            }
            Ok(acc * weight)
        }
    }
}

/// Full `(k+1) x (k+1)` table of `I_{m,m'}`, rows m, columns m'. Entries
/// are independent and computed concurrently; Hermitian symmetry is used to
/// fill the lower triangle.
pub fn i_table(kernel: &KernelSpec, modes: &ModePair) -> Result<Vec<Vec<Complex64>>> {
    let k = kernel.order();
    let upper: Vec<((usize, usize), Result<Complex64>)> = (0..=k)
        .flat_map(|m| (m..=k).map(move |mp| (m, mp)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(m, mp)| ((m, mp), integral_I(kernel, modes, m, mp)))
        .collect();
    let mut table = vec![vec![Complex64::new(0.0, 0.0); k + 1]; k + 1];
    for ((m, mp), val) in upper {
        let v = val?;
        table[m][mp] = v;
        if m != mp {
            table[mp][m] = v.conj();
        }
    }
    Ok(table)
}

/// `J = integral of the kernel against sum_m F_m (k - 2m)`, which by the
/// definition of `I` equals the diagonal contraction
/// `sum_m I_{m,m} (k - 2m)`. Summed in complementary pairs so the exact
/// cancellation for `F_m = F_{k-m}` survives floating point.
#[allow(non_snake_case)]
pub fn integral_J(kernel: &KernelSpec, modes: &ModePair) -> Result<f64> {
    let table = i_table(kernel, modes)?;
    Ok(j_from_table(&table))
}

fn j_from_table(table: &[Vec<Complex64>]) -> f64 {
    let k = table.len() - 1;
    let mut j = 0.0;
    let mut m = 0;
    while 2 * m < k {
        j += (table[m][m].re - table[k - m][k - m].re) * (k as f64 - 2.0 * m as f64);
        m += 1;
    }
    j
}

/// Bounds of the inner index when the outer double sum over `(m, m')` with
/// `0 <= m, m' <= k` is re-grouped by the total `M = m + m''`.
fn block_bounds(m_total: usize, k: usize) -> std::ops::RangeInclusive<usize> {
    m_total.saturating_sub(k)..=m_total.min(k)
}

/// `D_{2k,0} = sum_M sum_{m != m' in the block} I_{M-m,M-m'} I_{m,m'}`,
/// the coefficient of `(N/2)^{2k}` in the leading ensemble variance. Zero
/// iff the observable is typical.
#[allow(non_snake_case)]
pub fn coefficient_D_2k0(kernel: &KernelSpec, modes: &ModePair) -> Result<f64> {
    let table = i_table(kernel, modes)?;
    Ok(d_2k0_from_table(&table))
}

fn d_2k0_from_table(table: &[Vec<Complex64>]) -> f64 {
    let k = table.len() - 1;
    let mut acc = Complex64::new(0.0, 0.0);
    for m_total in 0..=2 * k {
        for m in block_bounds(m_total, k) {
            for mp in block_bounds(m_total, k) {
                if m == mp {
                    continue;
                }
                acc += table[m_total - m][m_total - mp] * table[m][mp];
            }
        }
    }
    acc.re
}

/// `D_{2k-2,2} = (1/12) { J^2 + sum_M sum_{m != m'} I_{M-m,M-m'} I_{m,m'}
/// (2k^2 - k(4M+1) + 2M^2) }`, the coefficient of `(N/2)^{2k-2} n^2`.
#[allow(non_snake_case)]
pub fn coefficient_D_2k2(kernel: &KernelSpec, modes: &ModePair) -> Result<f64> {
    let table = i_table(kernel, modes)?;
    Ok(d_2k2_from_table(&table))
}

fn d_2k2_from_table(table: &[Vec<Complex64>]) -> f64 {
    let k = table.len() - 1;
    let j = j_from_table(table);
    let mut acc = Complex64::new(0.0, 0.0);
    for m_total in 0..=2 * k {
        let kk = k as f64;
        let mm = m_total as f64;
        let weight = 2.0 * kk * kk - kk * (4.0 * mm + 1.0) + 2.0 * mm * mm;
        for m in block_bounds(m_total, k) {
            for mp in block_bounds(m_total, k) {
                if m == mp {
                    continue;
                }
                acc += table[m_total - m][m_total - mp] * table[m][mp] * weight;
            }
        }
    }
    (j * j + acc.re) / 12.0
}

/// Complex numbers with exact rational parts, for the exact polynomial
/// assembly of the variance.
#[derive(Clone)]
struct RatComplex {
    re: Rat,
    im: Rat,
}

impl RatComplex {
    fn from_c64(z: Complex64) -> Self {
        let conv = |x: f64| BigRational::from_f64(x).unwrap_or_else(Rat::zero);
        Self { re: conv(z.re), im: conv(z.im) }
    }

    fn mul(&self, other: &Self) -> Self {
        Self {
            re: &self.re * &other.re - &self.im * &other.im,
            im: &self.re * &other.im + &self.im * &other.re,
        }
    }
}

/// The leading-order ensemble variance of the kernel observable as an
/// exact polynomial in `(N, n)`:
///
/// `sum_M T_M g_{2k,M} - (sum_m I_{m,m} g_{k,m})^2`
///
/// where `g_{k,m}` are the exact Fock moment polynomials and
/// `T_M = sum_{m,m'} Re(I_{M-m,M-m'} I_{m,m'})` comes from the cluster
/// decomposition of `|Phi_M|^2` over the doubled position set. The
/// rationalized assembly reproduces [`coefficient_D_2k0`] at `(2k, 0)` and
/// [`coefficient_D_2k2`] at `(2k-2, 2)` in the `(N/2)^p n^q` basis; a
/// disagreement beyond 1e-8 relative is reported as an internal error.
pub fn variance_polynomial(kernel: &KernelSpec, modes: &ModePair) -> Result<BivariatePoly> {
    let k = kernel.order();
    if 2 * k > crate::poly::MOMENT_ORDER_CAP {
        return Err(Error::OrderTooLarge { k, cap: crate::poly::MOMENT_ORDER_CAP / 2 });
    }
    let table = i_table(kernel, modes)?;
    let rat: Vec<Vec<RatComplex>> = table
        .iter()
        .map(|row| row.iter().map(|&z| RatComplex::from_c64(z)).collect())
        .collect();

    let mut poly = BivariatePoly::zero();
    for m_total in 0..=2 * k {
        let mut t = Rat::zero();
        for m in block_bounds(m_total, k) {
            for mp in block_bounds(m_total, k) {
                t += rat[m_total - m][m_total - mp].mul(&rat[m][mp]).re;
            }
        }
        poly = poly.add(&moment_sum(2 * k, m_total)?.scale(&t));
    }
    let mut mean = BivariatePoly::zero();
    for (m, row) in rat.iter().enumerate().take(k + 1) {
        mean = mean.add(&moment_sum(k, m)?.scale(&row[m].re));
    }
    poly = poly.sub(&mean.square());

    // Consistency triangle against the closed-form coefficient operations.
    let scale = table.iter().enumerate().map(|(m, row)| row[m].norm_sqr()).sum::<f64>();
    let checks = [
        (2 * k as u32, 0u32, d_2k0_from_table(&table)),
        (2 * k as u32 - 2, 2, d_2k2_from_table(&table)),
    ];
    for (p, q, direct) in checks {
        let from_poly = rat_to_f64(&poly.coefficient_half_basis(p, q));
        let tol = 1e-8 * direct.abs().max(scale);
        if (from_poly - direct).abs() > tol {
            return Err(Error::Inconsistency(format!(
                "variance polynomial coefficient ({p},{q}) = {from_poly:.12e} \
                 disagrees with closed form {direct:.12e}"
            )));
        }
    }
    Ok(poly)
}

fn regime_description(d_2k2_zero: bool) -> String {
    if d_2k2_zero {
        "exponent max(-1/2, 2(alpha - 1)); crossover at alpha = 3/4".into()
    } else {
        "exponent max(-1/2, alpha - 1); crossover at alpha = 1/2".into()
    }
}

/// Runs the full analysis for one kernel and mode pair.
pub fn analyze(kernel: &KernelSpec, modes: &ModePair) -> Result<TypicalityReport> {
    let table = i_table(kernel, modes)?;
    let d_2k0 = d_2k0_from_table(&table);
    let d_2k2 = d_2k2_from_table(&table);
    let j = j_from_table(&table);
    let scale: f64 = table.iter().enumerate().map(|(m, row)| row[m].norm_sqr()).sum();
    let verdict = if d_2k0.abs() < TYPICALITY_TOL * scale {
        Verdict::Typical
    } else {
        Verdict::NotTypical
    };
    let regime = match verdict {
        Verdict::NotTypical => "relative fluctuations O(1); no concentration".into(),
        Verdict::Typical => regime_description(d_2k2.abs() < TYPICALITY_TOL * scale),
    };
    Ok(TypicalityReport {
        k: kernel.order(),
        kernel: kernel.describe(),
        mode_variant: modes.variant_name().into(),
        i_table: table.iter().map(|row| row.iter().map(|z| [z.re, z.im]).collect()).collect(),
        j_value: j,
        d_2k0,
        d_2k2,
        verdict,
        regime,
    })
}

/// Predicted log-log slope of the relative fluctuation `deltaA / mean(A)`
/// against N when `n = O(N^alpha)`.
///
/// With a nonzero subleading coefficient the fluctuation is dominated by
/// `N^{2k-1}` below `alpha = 1/2` and by `N^{2k-2} n^2` above it; for
/// density-correlation observables the subleading coefficient also vanishes
/// and the surviving `N^{2k-4} n^4` term moves the crossover to
/// `alpha = 3/4`.
pub fn classify_regime(report: &TypicalityReport, alpha: f64) -> Result<f64> {
    if report.verdict != Verdict::Typical {
        return Err(Error::NotTypical);
    }
    let scale = report.natural_scale();
    let exponent = if report.d_2k2.abs() < TYPICALITY_TOL * scale {
        (-0.5f64).max(2.0 * (alpha - 1.0))
    } else {
        (-0.5f64).max(alpha - 1.0)
    };
    Ok(exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{f_m_normalized, phi_m_normalized};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use std::f64::consts::PI;

    fn plane(q: u32) -> ModePair {
        ModePair::plane_wave(q).unwrap()
    }

    fn c2(x: f64) -> KernelSpec {
        KernelSpec::delta_comb(vec![x]).unwrap()
    }

    /// Smooth orthonormalized periodic mode pair, optionally with
    /// asymmetric amplitudes (so F_m != F_{k-m}).
    fn random_tabulated(seed: u64, asymmetric: bool) -> ModePair {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let count = 1 << 10;
        let grid: Vec<f64> = (0..count).map(|i| i as f64 / count as f64).collect();
        let mut fourier = || -> Vec<Complex64> {
            let coeffs: Vec<(f64, Complex64)> = (1..=3)
                .map(|h| {
                    (h as f64, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                })
                .collect();
            grid.iter()
                .map(|&r| {
                    let mut v = Complex64::new(1.0, 0.0);
                    for &(h, c) in &coeffs {
                        v += c * Complex64::from_polar(1.0, 2.0 * PI * h * r);
                    }
                    v
                })
                .collect()
        };
        let mut va = fourier();
        let mut vb = fourier();
        if asymmetric {
            for (v, &r) in vb.iter_mut().zip(grid.iter()) {
                *v *= 1.0 + 0.5 * (2.0 * PI * r).sin();
            }
        }
        let dot = |x: &[Complex64], y: &[Complex64]| -> Complex64 {
            x.iter().zip(y).map(|(a, b)| a.conj() * b).sum::<Complex64>() / count as f64
        };
        let na = dot(&va, &va).re.sqrt();
        va.iter_mut().for_each(|v| *v /= na);
        let proj = dot(&va, &vb);
        vb.iter_mut().zip(&va).for_each(|(v, a)| *v -= proj * a);
        let nb = dot(&vb, &vb).re.sqrt();
        vb.iter_mut().for_each(|v| *v /= nb);
        ModePair::tabulated(grid, va, vb).unwrap()
    }

    #[test]
    fn plane_wave_i_frozen_values() {
        let x = 0.13;
        let kern = c2(x);
        let m = plane(1);
        let k0 = 2.0 * PI;
        // Off-diagonal vanishes identically; diagonal closed forms frozen
        // from the two-subset expansion.
        assert_eq!(integral_I(&kern, &m, 0, 1).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(integral_I(&kern, &m, 2, 0).unwrap(), Complex64::new(0.0, 0.0));
        let i11 = integral_I(&kern, &m, 1, 1).unwrap();
        assert_relative_eq!(i11.re, 2.0 + 2.0 * (2.0 * k0 * x).cos(), epsilon = 1e-12);
        assert_eq!(i11.im, 0.0);
        let i00 = integral_I(&kern, &m, 0, 0).unwrap();
        assert_relative_eq!(i00.re, 1.0, epsilon = 1e-12);
        assert_eq!(
            integral_I(&kern, &m, 0, 0).unwrap(),
            integral_I(&kern, &m, 2, 2).unwrap()
        );
    }

    #[test]
    fn plane_wave_closed_form_matches_quadrature() {
        // Run the same plane-wave integrand through the generic adaptive
        // quadrature and compare against the box-orthogonality closed form.
        let pw = plane(2);
        for kern in [c2(0.13), KernelSpec::delta_comb(vec![0.21, 0.55]).unwrap()] {
            let k = kern.order();
            let offsets = match &kern {
                KernelSpec::DeltaComb { offsets } => comb_positions(offsets),
                _ => unreachable!(),
            };
            for m in 0..=k {
                for mp in 0..=k {
                    let closed = integral_I(&kern, &pw, m, mp).unwrap();
                    let f = |r: f64| {
                        let va: Vec<Complex64> =
                            offsets.iter().map(|&x| pw.eval_a(r + x)).collect();
                        let vb: Vec<Complex64> =
                            offsets.iter().map(|&x| pw.eval_b(r + x)).collect();
                        phi_from_values(mp, &va, &vb).conj() * phi_from_values(m, &va, &vb)
                    };
                    let quad = adaptive_integral(&f, Domain::UnitInterval).unwrap();
                    assert!(
                        (closed - quad).norm() < 1e-10 * (1.0 + closed.norm()),
                        "k={k} m={m} m'={mp}: closed {closed} quad {quad}"
                    );
                }
            }
        }
    }

    #[test]
    fn i_table_hermitian() {
        for modes in [plane(2), random_tabulated(11, true)] {
            for kern in [c2(0.3), KernelSpec::delta_comb(vec![0.1, 0.37]).unwrap()] {
                let table = i_table(&kern, &modes).unwrap();
                let k = kern.order();
                for m in 0..=k {
                    for mp in 0..=k {
                        assert!(
                            (table[m][mp] - table[mp][m].conj()).norm() < 1e-12,
                            "Hermiticity at ({m},{mp})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn j_plane_waves_exactly_zero() {
        for kern in [c2(0.13), KernelSpec::delta_comb(vec![0.2, 0.41]).unwrap()] {
            assert_eq!(integral_J(&kern, &plane(1)).unwrap(), 0.0);
        }
    }

    #[test]
    fn j_asymmetric_matches_direct_quadrature() {
        let modes = random_tabulated(7, true);
        let x = 0.29;
        let kern = c2(x);
        let j = integral_J(&kern, &modes).unwrap();
        // Direct fixed-resolution quadrature of sum_m F_m (k - 2m) through
        // an independent code path.
        let points = 1 << 14;
        let mut direct = 0.0;
        for i in 0..points {
            let r = i as f64 / points as f64;
            let pos = [r, r + x];
            for m in 0..=2usize {
                direct += f_m_normalized(&modes, m, &pos).unwrap() * (2.0 - 2.0 * m as f64);
            }
        }
        direct /= points as f64;
        assert!(j.abs() > 1e-3, "asymmetric modes should give nonzero J, got {j}");
        assert!(
            // Both sides integrate the piecewise-linear interpolant, with
            // different node placement; agreement is limited by its O(h^2)
            // quadrature error, not by the contraction identity.
            (j - direct).abs() < 5e-4 * direct.abs().max(1e-4),
            "J mismatch: table contraction {j:.10e}, direct quadrature {direct:.10e}"
        );
    }

    #[test]
    fn d_2k0_plane_waves_zero() {
        for kern in [
            c2(0.13),
            c2(0.41),
            KernelSpec::delta_comb(vec![0.2, 0.33]).unwrap(),
        ] {
            for q in [1, 2] {
                let d = coefficient_D_2k0(&kern, &plane(q)).unwrap();
                let table = i_table(&kern, &plane(q)).unwrap();
                let scale: f64 = (0..table.len()).map(|m| table[m][m].norm_sqr()).sum();
                assert!(d.abs() < 1e-10 * scale, "D_2k0 = {d} at scale {scale}");
            }
        }
    }

    #[test]
    fn d_2k0_matches_double_integral_oracle() {
        // Direct evaluation of the defining double integral over the two
        // comb origins (r, r'), with the symmetrized products computed by
        // the independent subset routine.
        let modes = random_tabulated(13, true);
        let x = 0.37;
        let kern = c2(x);
        let d = coefficient_D_2k0(&kern, &modes).unwrap();
        let k = 2usize;
        let points = 1 << 9;
        let mut direct = Complex64::new(0.0, 0.0);
        for i in 0..points {
            let r = i as f64 / points as f64;
            let pos_r = [r, r + x];
            let phi_r: Vec<Complex64> = (0..=k)
                .map(|m| phi_m_normalized(&modes, m, &pos_r).unwrap())
                .collect();
            for j in 0..points {
                let rp = j as f64 / points as f64;
                let pos_rp = [rp, rp + x];
                let phi_rp: Vec<Complex64> = (0..=k)
                    .map(|m| phi_m_normalized(&modes, m, &pos_rp).unwrap())
                    .collect();
                for m_total in 0..=2 * k {
                    for m in block_bounds(m_total, k) {
                        for mp in block_bounds(m_total, k) {
                            if m == mp {
                                continue;
                            }
                            direct += phi_r[m_total - mp].conj()
                                * phi_r[m_total - m]
                                * phi_rp[mp].conj()
                                * phi_rp[m];
                        }
                    }
                }
            }
        }
        let direct = direct.re / (points * points) as f64;
        assert!(d.abs() > 1e-4, "expected nonzero D_2k0 for asymmetric modes");
        assert_relative_eq!(d, direct, max_relative = 1e-4);
    }

    #[test]
    fn d_2k2_plane_waves_zero() {
        for kern in [c2(0.13), KernelSpec::delta_comb(vec![0.11, 0.42]).unwrap()] {
            assert_eq!(coefficient_D_2k2(&kern, &plane(1)).unwrap(), 0.0);
        }
    }

    #[test]
    fn d_2k2_far_field_suppressed() {
        // Separated far-field Gaussians: the mixed overlap integrals are
        // exponentially small in (d / 4 sigma)^2, and so is D_2k2 relative
        // to the diagonal scale.
        let modes = ModePair::far_field_gaussian(-5.0, 5.0, 1.0, 50.0).unwrap();
        let kern = c2(0.13);
        let table = i_table(&kern, &modes).unwrap();
        let scale: f64 = (0..3).map(|m| table[m][m].norm_sqr()).sum();
        let d0 = d_2k0_from_table(&table);
        let d2 = d_2k2_from_table(&table);
        let suppression = (-((10.0f64) / 4.0).powi(2)).exp(); // e^{-(d/4sigma)^2}
        assert!(d0.abs() < scale * suppression.sqrt(), "D_2k0 {d0:.3e} scale {scale:.3e}");
        assert!(d2.abs() < scale * suppression.sqrt(), "D_2k2 {d2:.3e} scale {scale:.3e}");
    }

    #[test]
    fn variance_polynomial_plane_wave_exact_zeros() {
        let kern = c2(0.13);
        let poly = variance_polynomial(&kern, &plane(1)).unwrap();
        assert!(poly.coefficient(4, 0).is_zero(), "coefficient (4,0) must vanish exactly");
        assert!(poly.coefficient(2, 2).is_zero(), "coefficient (2,2) must vanish exactly");
        assert!(!poly.coefficient(0, 4).is_zero(), "the n^4 term survives");
        // Same for a three-point comb (k = 3): top and subleading zero.
        let kern3 = KernelSpec::delta_comb(vec![0.2, 0.47]).unwrap();
        let poly3 = variance_polynomial(&kern3, &plane(1)).unwrap();
        assert!(poly3.coefficient(6, 0).is_zero());
        assert!(poly3.coefficient(4, 2).is_zero());
    }

    #[test]
    fn variance_polynomial_consistency_triangle() {
        for modes in [plane(1), random_tabulated(19, true)] {
            let kern = c2(0.31);
            let poly = variance_polynomial(&kern, &modes).unwrap();
            let d0 = coefficient_D_2k0(&kern, &modes).unwrap();
            let d2 = coefficient_D_2k2(&kern, &modes).unwrap();
            let from0 = rat_to_f64(&poly.coefficient_half_basis(4, 0));
            let from2 = rat_to_f64(&poly.coefficient_half_basis(2, 2));
            assert_relative_eq!(from0, d0, epsilon = 1e-8, max_relative = 1e-8);
            assert_relative_eq!(from2, d2, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn variance_polynomial_number_operator_sanity() {
        // Disjoint-support modes make the |psi_a|^2 grid kernel act as the
        // mode-a number operator: the leading variance polynomial equals
        // c^2 [(n^2-1)/12 - N/2] with c = integral |psi_a|^4 = 2. The N/2
        // deficit is the normal-ordering remainder, O(N^{2k-1}).
        let g = 256;
        let axis: Vec<f64> = (0..g).map(|i| i as f64 / g as f64).collect();
        let sqrt2 = std::f64::consts::SQRT_2;
        let va: Vec<Complex64> = axis
            .iter()
            .map(|&r| Complex64::new(if r < 0.5 { sqrt2 } else { 0.0 }, 0.0))
            .collect();
        let vb: Vec<Complex64> = axis
            .iter()
            .map(|&r| Complex64::new(if r < 0.5 { 0.0 } else { sqrt2 }, 0.0))
            .collect();
        let values: Vec<f64> = va.iter().map(|v| v.norm_sqr()).collect();
        let modes = ModePair::tabulated(axis.clone(), va, vb).unwrap();
        let kern = KernelSpec::grid_kernel(1, axis.clone(), values).unwrap();
        // c = integral |psi_a|^4 = 2 up to the float rounding of sqrt(2)^2;
        // the structural identity below is exact in the rationalized c.
        let c = integral_I(&kern, &modes, 1, 1).unwrap().re;
        assert_relative_eq!(c, 2.0, epsilon = 1e-12);
        let c_rat = Rat::from_f64(c).unwrap();
        let poly = variance_polynomial(&kern, &modes).unwrap();
        for (n_particles, dim) in [(10i64, 3i64), (20, 5), (40, 11)] {
            let got = poly.eval(n_particles, dim);
            let expect = &c_rat
                * &c_rat
                * (Rat::new((dim * dim - 1).into(), 12.into())
                    - Rat::new(n_particles.into(), 2.into()));
            assert_eq!(got, expect, "N={n_particles} n={dim}");
        }
    }

    #[test]
    fn variance_polynomial_collapses_at_n_one() {
        // n = 1: the ensemble is the single state |l=0>; every moment sum
        // degenerates to its l=0 value, so the polynomial at (N, 1) equals
        // the direct single-state normal-ordered variance (which the
        // closed-form evaluation reproduces term by term).
        let kern = c2(0.13);
        let modes = plane(1);
        let poly = variance_polynomial(&kern, &modes).unwrap();
        let table = i_table(&kern, &modes).unwrap();
        for n_particles in [4i64, 8, 12] {
            let got = poly.eval(n_particles, 1);
            // Direct: sum_M T_M <l=0 moment> - (sum_m I_mm <..>)^2 with the
            // same polynomials evaluated at n = 1.
            let rat: Vec<Vec<RatComplex>> = table
                .iter()
                .map(|row| row.iter().map(|&z| RatComplex::from_c64(z)).collect())
                .collect();
            let mut direct = Rat::zero();
            for m_total in 0..=4usize {
                let mut t = Rat::zero();
                for m in block_bounds(m_total, 2) {
                    for mp in block_bounds(m_total, 2) {
                        t += rat[m_total - m][m_total - mp].mul(&rat[m][mp]).re;
                    }
                }
                direct += moment_sum(4, m_total).unwrap().eval(n_particles, 1) * t;
            }
            let mut mean = Rat::zero();
            for m in 0..=2usize {
                mean += moment_sum(2, m).unwrap().eval(n_particles, 1) * rat[m][m].re.clone();
            }
            direct -= mean.clone() * mean;
            assert_eq!(got, direct, "N={n_particles}");
        }
    }

    #[test]
    fn reindexing_identity() {
        // sum_{m,m'} F_{m'}(x) F_m(y) == sum_M sum_{m in block} F_{M-m}(x) F_m(y).
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        let modes = random_tabulated(3, true);
        for k in 1..=3usize {
            let xs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ys: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let fx: Vec<f64> = (0..=k).map(|m| f_m_normalized(&modes, m, &xs).unwrap()).collect();
            let fy: Vec<f64> = (0..=k).map(|m| f_m_normalized(&modes, m, &ys).unwrap()).collect();
            let plain: f64 = fx.iter().flat_map(|a| fy.iter().map(move |b| a * b)).sum();
            let mut regrouped = 0.0;
            for m_total in 0..=2 * k {
                for m in block_bounds(m_total, k) {
                    regrouped += fx[m_total - m] * fy[m];
                }
            }
            assert_relative_eq!(plain, regrouped, max_relative = 1e-12);
        }
    }

    #[test]
    fn report_and_regimes() {
        let report = analyze(&c2(0.13), &plane(1)).unwrap();
        assert_eq!(report.verdict, Verdict::Typical);
        assert_eq!(report.d_2k0, 0.0);
        assert_eq!(report.d_2k2, 0.0);
        assert_eq!(report.j_value, 0.0);
        // Density correlations: crossover at 3/4.
        assert_relative_eq!(classify_regime(&report, 0.5).unwrap(), -0.5);
        assert_relative_eq!(classify_regime(&report, 0.75).unwrap(), -0.5);
        assert_relative_eq!(classify_regime(&report, 0.875).unwrap(), -0.25);
        // Generic typical observable: synthesize a report with D_2k2 != 0.
        let mut generic = report.clone();
        generic.d_2k2 = 1.0;
        assert_relative_eq!(classify_regime(&generic, 0.75).unwrap(), -0.25);
        assert_relative_eq!(classify_regime(&generic, 0.25).unwrap(), -0.5);
        // Non-typical observable has no regime.
        let bad = analyze(&c2(0.37), &random_tabulated(13, true)).unwrap();
        assert_eq!(bad.verdict, Verdict::NotTypical);
        assert!(matches!(classify_regime(&bad, 0.5), Err(Error::NotTypical)));
    }

    #[test]
    fn report_json_shape() {
        let report = analyze(&c2(0.13), &plane(1)).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["k", "kernel", "mode_variant", "I_table", "J", "D_2k0", "D_2k2", "verdict", "regime"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["verdict"], "typical");
        assert_eq!(json["k"], 2);
        assert_eq!(json["I_table"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn kernel_validation() {
        assert!(KernelSpec::delta_comb(vec![0.0]).is_err());
        assert!(KernelSpec::delta_comb(vec![0.2, 0.2]).is_err());
        assert!(KernelSpec::delta_comb(vec![0.1; 6]).is_err());
        assert!(KernelSpec::grid_kernel(2, vec![0.0, 0.5], vec![1.0; 3]).is_err());
        assert!(KernelSpec::grid_kernel(0, vec![0.0, 0.5], vec![]).is_err());
        // Grid kernels reject real-line modes.
        let far = ModePair::far_field_gaussian(-5.0, 5.0, 1.0, 50.0).unwrap();
        let axis: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let kern = KernelSpec::grid_kernel(1, axis, vec![1.0; 8]).unwrap();
        assert!(integral_I(&kern, &far, 0, 0).is_err());
    }

    #[test]
    fn moment_cap_enforced() {
        // k = 4 needs 8th moments, beyond the exact cap.
        let kern = KernelSpec::delta_comb(vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            variance_polynomial(&kern, &plane(1)),
            Err(Error::OrderTooLarge { .. })
        ));
    }

    #[test]
    fn grid_kernel_reproduces_comb_for_k1() {
        // A flat k = 1 grid kernel integrates the plain density; compare
        // with the offset-free delta comb on tabulated modes.
        let modes = random_tabulated(21, true);
        let axis: Vec<f64> = (0..1024).map(|i| i as f64 / 1024.0).collect();
        let flat = KernelSpec::grid_kernel(1, axis, vec![1.0; 1024]).unwrap();
        let comb = KernelSpec::delta_comb(vec![]).unwrap();
        for m in 0..=1usize {
            for mp in 0..=1usize {
                let a = integral_I(&flat, &modes, m, mp).unwrap();
                let b = integral_I(&comb, &modes, m, mp).unwrap();
                assert!((a - b).norm() < 1e-6, "({m},{mp}): {a} vs {b}");
            }
        }
    }
}

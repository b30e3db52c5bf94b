//! Integrated density correlation observables `C_k` as concrete two-mode
//! operators, their leading-order means, the classical reference pattern,
//! and the exact second moment of `C_2` including the field contraction
//! terms.
//!
//! `C_k(x_1..x_{k-1}) = integral dr rho(r) rho(r+x_1) ... rho(r+x_{k-1})`
//! with `rho = psi^dag psi`. At pairwise-distinct nonzero offsets the
//! normal-ordering contact terms of a single `C_k` vanish, so the operator
//! restricted to the two-mode sector is the band matrix assembled here.
//! The *square* of `C_2` is a different story: normal-ordering the product
//! of two normal-ordered two-body factors leaves genuine single-contraction
//! three-body terms (the intermediate state leaves the two-mode sector),
//! which carry the ensemble-independent `N^{2k-1}` part of the variance.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{microcanonical_trace, NormalMonomial, SystemParams, TwoModeOperator};
use crate::modes::{phi_from_values, ModePair, ORDER_CAP};
use crate::poly::{rat_to_f64, BivariatePoly, Rat};
use crate::typicality::{adaptive_integral, variance_polynomial, KernelSpec};

/// An assembled density correlation observable.
#[derive(Debug, Clone)]
pub struct CorrelationObservable {
    pub k: usize,
    /// Relative offsets `x_1..x_{k-1}` (the first density sits at the comb
    /// origin).
    pub offsets: Vec<f64>,
    pub modes: ModePair,
    pub operator: TwoModeOperator,
    /// Whether smeared contact terms were folded in; false means the pure
    /// normal-ordered operator valid at distinct offsets.
    pub includes_lower_order: bool,
}

/// Coefficient cutoff below which a monomial is dropped as pure roundoff,
/// relative to the largest coefficient in the expansion.
const COEFF_CUTOFF: f64 = 1e-14;

/// Integrates a product of field operators along a moving comb: creators
/// at `r + creator_offsets[i]`, annihilators at `r + annihilator_offsets[j]`,
/// integrated over the comb origin `r`. Returns the two-mode operator
///
/// `sum_{p, p'} [ integral conj(Phi_p)(creators) Phi_{p'}(annihilators) dr ]
///  a^dag^p b^dag^{c-p} a^{p'} b^{c-p'}`
///
/// where the subset sums over mode assignments are the same symmetrized
/// products used by the overlap integrals.
pub fn field_product_operator(
    modes: &ModePair,
    creator_offsets: &[f64],
    annihilator_offsets: &[f64],
) -> Result<TwoModeOperator> {
    let c = creator_offsets.len();
    if c != annihilator_offsets.len() {
        return Err(Error::InvalidParams(
            "field products must conserve particle number".into(),
        ));
    }
    if c > ORDER_CAP {
        return Err(Error::OrderTooLarge { k: c, cap: ORDER_CAP });
    }
    let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); c + 1]; c + 1];
    match modes {
        ModePair::PlaneWave { .. } => {
            let k0 = modes.wavenumber().unwrap();
            // Box orthogonality: the r-dependence of an assignment pair is
            // exp(2 i k0 (p' - p) r), so only p = p' survives; the residual
            // phase is the offset sum with +/- signs per mode.
            for p in 0..=c {
                let mut acc = Complex64::new(0.0, 0.0);
                for cre_mask in 0u32..(1 << c) {
                    if cre_mask.count_ones() as usize != p {
                        continue;
                    }
                    let mut cre_phase = 0.0;
                    for (i, &x) in creator_offsets.iter().enumerate() {
                        cre_phase += if cre_mask & (1 << i) != 0 { x } else { -x };
                    }
                    for ann_mask in 0u32..(1 << c) {
                        if ann_mask.count_ones() as usize != p {
                            continue;
                        }
                        let mut ann_phase = 0.0;
                        for (j, &x) in annihilator_offsets.iter().enumerate() {
                            ann_phase += if ann_mask & (1 << j) != 0 { x } else { -x };
                        }
                        acc += Complex64::from_polar(1.0, k0 * (ann_phase - cre_phase));
                    }
                }
                coeffs[p][p] = acc;
            }
        }
        _ => {
            let domain = modes.domain();
            for p in 0..=c {
                for pp in 0..=c {
                    let f = |r: f64| {
                        let ca: Vec<Complex64> =
                            creator_offsets.iter().map(|&x| modes.eval_a(r + x)).collect();
                        let cb: Vec<Complex64> =
                            creator_offsets.iter().map(|&x| modes.eval_b(r + x)).collect();
                        let aa: Vec<Complex64> =
                            annihilator_offsets.iter().map(|&x| modes.eval_a(r + x)).collect();
                        let ab: Vec<Complex64> =
                            annihilator_offsets.iter().map(|&x| modes.eval_b(r + x)).collect();
                        phi_from_values(p, &ca, &cb).conj() * phi_from_values(pp, &aa, &ab)
                    };
                    coeffs[p][pp] = adaptive_integral(&f, domain)?;
                }
            }
        }
    }
    let peak = coeffs
        .iter()
        .flatten()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let mut monomials = Vec::new();
    for p in 0..=c {
        for pp in 0..=c {
            if coeffs[p][pp].norm() > COEFF_CUTOFF * peak {
                monomials.push(NormalMonomial::new(
                    p as u32,
                    (c - p) as u32,
                    pp as u32,
                    (c - pp) as u32,
                    coeffs[p][pp],
                ));
            }
        }
    }
    TwoModeOperator::hermitian(monomials)
}

fn comb_positions(offsets: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(offsets.iter().copied()).collect()
}

/// Assembles `C_k` at pairwise-distinct nonzero offsets as a normal-ordered
/// two-mode operator; `k <= 3` keeps the `4^k` mode-index expansion exact.
#[allow(non_snake_case)]
pub fn assemble_C_k(modes: &ModePair, offsets: &[f64]) -> Result<CorrelationObservable> {
    let k = offsets.len() + 1;
    if k > 3 {
        return Err(Error::OrderTooLarge { k, cap: 3 });
    }
    // Reuses the kernel validation: distinct, nonzero.
    KernelSpec::delta_comb(offsets.to_vec())?;
    let positions = comb_positions(offsets);
    let operator = field_product_operator(modes, &positions, &positions)?;
    Ok(CorrelationObservable {
        k,
        offsets: offsets.to_vec(),
        modes: modes.clone(),
        operator,
        includes_lower_order: false,
    })
}

/// Leading-order ensemble mean of `C_2(x)`:
/// `(N/2)^2 sum_m I_{m,m}` as a polynomial in N. For plane waves this is
/// `N^2 (1 + cos(2 k0 x) / 2)`.
#[allow(non_snake_case)]
pub fn mean_C2_leading(modes: &ModePair, x: f64) -> Result<BivariatePoly> {
    let kernel = KernelSpec::delta_comb(vec![x])?;
    let table = crate::typicality::i_table(&kernel, modes)?;
    let sum: f64 = (0..=2).map(|m| table[m][m].re).sum();
    let coeff = Rat::from_float(sum / 4.0).ok_or_else(|| {
        Error::Inconsistency("non-finite overlap integral".into())
    })?;
    Ok(BivariatePoly::monomial(2, 0, coeff))
}

/// The four three-body operators left by single contractions when the
/// product of two normal-ordered `C_2(x)` factors is normal-ordered again.
/// Contracting an annihilator of the first factor at `u` with a creator of
/// the second at `v` pins the second comb origin to `r + (u - v)` and
/// leaves a three-creator / three-annihilator comb.
pub fn c2_squared_contraction_operators(
    modes: &ModePair,
    x: f64,
) -> Result<[TwoModeOperator; 4]> {
    let combs: [([f64; 3], [f64; 3]); 4] = [
        // contract psi(r + x) with psi^dag(r'):        r' = r + x
        ([0.0, x, 2.0 * x], [0.0, x, 2.0 * x]),
        // contract psi(r + x) with psi^dag(r' + x):    r' = r
        ([0.0, 0.0, x], [0.0, 0.0, x]),
        // contract psi(r) with psi^dag(r'):            r' = r
        ([0.0, x, x], [0.0, x, x]),
        // contract psi(r) with psi^dag(r' + x):        r' = r - x
        ([-x, 0.0, x], [-x, 0.0, x]),
    ];
    let mut out = Vec::with_capacity(4);
    for (cre, ann) in combs {
        out.push(field_product_operator(modes, &cre, &ann)?);
    }
    Ok(out.try_into().expect("four contraction operators"))
}

/// Exact ensemble mean `Tr(rho_n C_2)` via the band matrix.
pub fn mean_c2_exact(modes: &ModePair, x: f64, params: &SystemParams) -> Result<f64> {
    let obs = assemble_C_k(modes, &[x])?;
    microcanonical_trace(&obs.operator, params)
}

/// Exact ensemble variance of `C_2(x)` over random states of the sector:
/// `Tr(rho C_2^2) - Tr(rho C_2)^2`, with `C_2^2` expanded at field level.
///
/// The fully normal-ordered four-body part minus the squared mean is the
/// exact rational [`variance_polynomial`]; the single-contraction
/// three-body traces are added on top. The divergent double-contraction
/// piece `delta(0) C_2` is excluded unless a smearing width is given, in
/// which case it contributes `delta_eps(0) Tr(rho C_2)` with
/// `delta_eps(0) = 1 / (2 sqrt(pi) eps)`.
pub fn ensemble_variance_c2_exact(
    modes: &ModePair,
    x: f64,
    params: &SystemParams,
    smearing: Option<f64>,
) -> Result<f64> {
    let kernel = KernelSpec::delta_comb(vec![x])?;
    let poly = variance_polynomial(&kernel, modes)?;
    let mut var = rat_to_f64(&poly.eval(params.n_particles() as i64, params.dim() as i64));
    for op in c2_squared_contraction_operators(modes, x)? {
        var += microcanonical_trace(&op, params)?;
    }
    if let Some(eps) = smearing {
        if eps <= 0.0 {
            return Err(Error::InvalidParams("smearing width must be positive".into()));
        }
        let delta0 = 1.0 / (2.0 * std::f64::consts::PI.sqrt() * eps);
        var += delta0 * mean_c2_exact(modes, x, params)?;
    }
    if var < 0.0 {
        let scale = mean_c2_exact(modes, x, params)?.powi(2);
        if var < -1e-9 * scale.max(1.0) {
            return Err(Error::NegativeVariance { value: var, scale: scale.sqrt() });
        }
        var = 0.0;
    }
    Ok(var)
}

/// Classical reference density `rho(x) = 2 N cos^2(k0 x + phi)` on the unit
/// box, normalized so the total particle number is `N`.
#[derive(Debug, Clone, Copy)]
pub struct ClassicalPattern {
    pub n_particles: f64,
    pub k0: f64,
    pub phi: f64,
}

pub fn classical_pattern(n_particles: f64, k0: f64, phi: f64) -> ClassicalPattern {
    ClassicalPattern { n_particles, k0, phi }
}

impl ClassicalPattern {
    pub fn density(&self, x: f64) -> f64 {
        2.0 * self.n_particles * (self.k0 * x + self.phi).cos().powi(2)
    }

    /// Two-point autocorrelation `integral rho(r) rho(r+x) dr` in closed
    /// form: `N^2 (1 + cos(2 k0 x) / 2)`, independent of the offset phi.
    pub fn autocorrelation(&self, x: f64) -> f64 {
        self.n_particles * self.n_particles * (1.0 + 0.5 * (2.0 * self.k0 * x).cos())
    }
}

/// One row of an exported correlation curve.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub x: f64,
    pub exact_trace: f64,
    pub leading_formula: f64,
    /// Expectation in a specific sampled state, when requested.
    pub run_expectation: Option<f64>,
}

/// Exact trace and leading formula for `C_2` over a grid of offsets;
/// `state` adds the per-run quantum expectation column.
pub fn correlation_curve(
    modes: &ModePair,
    params: &SystemParams,
    xs: &[f64],
    state: Option<&crate::fock::StateVector>,
) -> Result<Vec<CurvePoint>> {
    xs.iter()
        .map(|&x| {
            let obs = assemble_C_k(modes, &[x])?;
            let exact = microcanonical_trace(&obs.operator, params)?;
            let leading = rat_to_f64(
                &mean_C2_leading(modes, x)?.eval(params.n_particles() as i64, params.dim() as i64),
            );
            let run_expectation = match state {
                Some(s) => Some(crate::fock::expectation(&obs.operator, s)?.re),
                None => None,
            };
            Ok(CurvePoint { x, exact_trace: exact, leading_formula: leading, run_expectation })
        })
        .collect()
}

//! Exact linear algebra of two-mode Fock states at fixed particle number.
//!
//! The basis is `|l> = |N/2+l, N/2-l>` with `N` even. Observables are finite
//! sums of normal-ordered mode monomials `a†^p b†^q a^r b^s`; on the fixed-N
//! sector each number-conserving monomial shifts `l` by `p - r`, so an
//! operator materializes as a band matrix on the sampled subspace.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Fixed particle number `N` (even) and sampled-subspace dimension `n`
/// (odd, `1 <= n <= N+1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemParams {
    n_particles: u64,
    dim: usize,
}

impl SystemParams {
    pub fn new(n_particles: u64, dim: usize) -> Result<Self> {
        if n_particles == 0 || n_particles % 2 != 0 {
            return Err(Error::InvalidParams(format!(
                "particle number must be even and positive, got {n_particles}"
            )));
        }
        if dim % 2 != 1 {
            return Err(Error::InvalidParams(format!(
                "subspace dimension must be odd, got {dim}"
            )));
        }
        if dim as u64 > n_particles + 1 {
            return Err(Error::InvalidParams(format!(
                "subspace dimension {dim} exceeds sector size N+1 = {}",
                n_particles + 1
            )));
        }
        Ok(Self { n_particles, dim })
    }

    pub fn n_particles(&self) -> u64 {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest `|l|` inside the sampled subspace: `(n-1)/2`.
    pub fn half_range(&self) -> i64 {
        (self.dim as i64 - 1) / 2
    }

    /// Iterator over the basis labels `l` of the sampled subspace.
    pub fn labels(&self) -> impl Iterator<Item = i64> {
        let h = self.half_range();
        -h..=h
    }

    /// Occupation of mode a in `|l>`, or `None` outside the full sector.
    pub fn occupation_a(&self, l: i64) -> Option<u64> {
        let half = (self.n_particles / 2) as i64;
        let occ = half + l;
        (0..=self.n_particles as i64).contains(&occ).then_some(occ as u64)
    }

    pub fn occupation_b(&self, l: i64) -> Option<u64> {
        let half = (self.n_particles / 2) as i64;
        let occ = half - l;
        (0..=self.n_particles as i64).contains(&occ).then_some(occ as u64)
    }
}

/// Normal-ordered mode monomial `coefficient * a†^p b†^q a^r b^s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMonomial {
    pub p: u32,
    pub q: u32,
    pub r: u32,
    pub s: u32,
    pub coefficient: Complex64,
}

impl NormalMonomial {
    pub fn new(p: u32, q: u32, r: u32, s: u32, coefficient: Complex64) -> Self {
        Self { p, q, r, s, coefficient }
    }

    pub fn identity() -> Self {
        Self::new(0, 0, 0, 0, Complex64::new(1.0, 0.0))
    }

    /// `a†a`.
    pub fn number_a() -> Self {
        Self::new(1, 0, 1, 0, Complex64::new(1.0, 0.0))
    }

    /// `b†b`.
    pub fn number_b() -> Self {
        Self::new(0, 1, 0, 1, Complex64::new(1.0, 0.0))
    }

    pub fn is_number_conserving(&self) -> bool {
        self.p + self.q == self.r + self.s
    }

    /// Shift in the basis label `l` produced by this monomial.
    pub fn shift(&self) -> i64 {
        self.p as i64 - self.r as i64
    }

    /// Hermitian conjugate monomial.
    pub fn dagger(&self) -> Self {
        Self::new(self.r, self.s, self.p, self.q, self.coefficient.conj())
    }
}

/// `<l_bra| mono |l_ket>` on the full `N`-sector.
///
/// Applies `b^s`, `a^r`, then `a†^p`, `b†^q` to `|l_ket>`, accumulating the
/// square-root factors multiplicatively. Zero if any occupation would go
/// negative or the bra label is inconsistent with the shift.
pub fn matrix_element(
    mono: &NormalMonomial,
    l_bra: i64,
    l_ket: i64,
    params: &SystemParams,
) -> Result<Complex64> {
    if !mono.is_number_conserving() {
        return Err(Error::NotNumberConserving {
            p: mono.p,
            q: mono.q,
            r: mono.r,
            s: mono.s,
        });
    }
    let zero = Complex64::new(0.0, 0.0);
    let (Some(occ_a), Some(occ_b)) = (params.occupation_a(l_ket), params.occupation_b(l_ket))
    else {
        return Ok(zero);
    };
    if params.occupation_a(l_bra).is_none() {
        return Ok(zero);
    }
    if l_bra - l_ket != mono.shift() {
        return Ok(zero);
    }
    let mut amp = 1.0f64;
    // Annihilators first: b^s then a^r.
    let (mut a, mut b) = (occ_a as i64, occ_b as i64);
    for _ in 0..mono.s {
        if b <= 0 {
            return Ok(zero);
        }
        amp *= b as f64;
        b -= 1;
    }
    for _ in 0..mono.r {
        if a <= 0 {
            return Ok(zero);
        }
        amp *= a as f64;
        a -= 1;
    }
    // Creators: a†^p then b†^q.
    for _ in 0..mono.p {
        a += 1;
        amp *= a as f64;
    }
    for _ in 0..mono.q {
        b += 1;
        amp *= b as f64;
    }
    if a + b != params.n_particles as i64 || a > params.n_particles as i64 {
        // Number-conserving monomials keep the total; a can still overflow
        // the sector ceiling (occupation above N is unreachable from it).
        return Ok(zero);
    }
    Ok(mono.coefficient * amp.sqrt())
}

/// Finite sum of normal-ordered monomials, with an optional Hermiticity
/// declaration checked at band-matrix construction.
#[derive(Debug, Clone, Default)]
pub struct TwoModeOperator {
    monomials: Vec<NormalMonomial>,
    declared_hermitian: bool,
}

impl TwoModeOperator {
    pub fn new(monomials: Vec<NormalMonomial>) -> Result<Self> {
        for m in &monomials {
            if !m.is_number_conserving() {
                return Err(Error::NotNumberConserving {
                    p: m.p,
                    q: m.q,
                    r: m.r,
                    s: m.s,
                });
            }
        }
        Ok(Self { monomials, declared_hermitian: false })
    }

    pub fn hermitian(monomials: Vec<NormalMonomial>) -> Result<Self> {
        let mut op = Self::new(monomials)?;
        op.declared_hermitian = true;
        Ok(op)
    }

    pub fn monomials(&self) -> &[NormalMonomial] {
        &self.monomials
    }

    pub fn is_declared_hermitian(&self) -> bool {
        self.declared_hermitian
    }

    /// Maximum `|p - r|` over the monomials.
    pub fn max_bandwidth(&self) -> usize {
        self.monomials
            .iter()
            .map(|m| m.shift().unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            monomials: self
                .monomials
                .iter()
                .map(|m| NormalMonomial { coefficient: m.coefficient * c, ..*m })
                .collect(),
            declared_hermitian: self.declared_hermitian && c.im == 0.0,
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut monomials = self.monomials.clone();
        monomials.extend_from_slice(&other.monomials);
        Self {
            monomials,
            declared_hermitian: self.declared_hermitian && other.declared_hermitian,
        }
    }

    /// Materialize on the sampled subspace `H_n`.
    pub fn to_band_matrix(&self, params: &SystemParams) -> Result<BandMatrix> {
        let width = self.max_bandwidth();
        let mut mat = BandMatrix::zeros(params.dim, width);
        let h = params.half_range();
        for mono in &self.monomials {
            let shift = mono.shift();
            for l_ket in params.labels() {
                let l_bra = l_ket + shift;
                if l_bra.abs() > h {
                    continue;
                }
                let elem = matrix_element(mono, l_bra, l_ket, params)?;
                *mat.entry_mut(l_bra, l_ket) += elem;
            }
        }
        for l_ket in params.labels() {
            for l_bra in params.labels() {
                if (l_bra - l_ket).unsigned_abs() as usize <= width {
                    let e = mat.entry(l_bra, l_ket);
                    if !e.re.is_finite() || !e.im.is_finite() {
                        return Err(Error::EntryOverflow { row: l_bra, col: l_ket });
                    }
                }
            }
        }
        if self.declared_hermitian {
            let scale = mat.max_abs().max(1.0);
            if mat.hermiticity_defect() > 1e-12 * scale {
                return Err(Error::Inconsistency(format!(
                    "declared-Hermitian operator has Hermiticity defect {:.3e} (scale {:.3e})",
                    mat.hermiticity_defect(),
                    scale
                )));
            }
        }
        Ok(mat)
    }
}

/// Band matrix on `H_n`, indexed by the basis label `l`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    dim: usize,
    width: usize,
    /// Diagonals stored row-major: `data[row][d]` is the entry
    /// `(l_bra, l_ket)` with `l_ket - l_bra = d - width`.
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(dim: usize, width: usize) -> Self {
        Self { dim, width, data: vec![Complex64::new(0.0, 0.0); dim * (2 * width + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.width
    }

    fn row_of(&self, l: i64) -> usize {
        (l + (self.dim as i64 - 1) / 2) as usize
    }

    /// Entry `(l_bra, l_ket)`; zero outside the band.
    pub fn entry(&self, l_bra: i64, l_ket: i64) -> Complex64 {
        let d = l_ket - l_bra;
        if d.unsigned_abs() as usize > self.width {
            return Complex64::new(0.0, 0.0);
        }
        let row = self.row_of(l_bra);
        self.data[row * (2 * self.width + 1) + (d + self.width as i64) as usize]
    }

    pub fn entry_mut(&mut self, l_bra: i64, l_ket: i64) -> &mut Complex64 {
        let d = l_ket - l_bra;
        assert!(d.unsigned_abs() as usize <= self.width, "outside band");
        let row = self.row_of(l_bra);
        let w = self.width;
        &mut self.data[row * (2 * w + 1) + (d + w as i64) as usize]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let h = (self.dim as i64 - 1) / 2;
        let mut worst = 0.0f64;
        for l in -h..=h {
            for d in -(self.width as i64)..=self.width as i64 {
                let lp = l + d;
                if lp.abs() > h {
                    continue;
                }
                let defect = (self.entry(l, lp) - self.entry(lp, l).conj()).norm();
                worst = worst.max(defect);
            }
        }
        worst
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        let h = (self.dim as i64 - 1) / 2;
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for l in -h..=h {
            let row = self.row_of(l);
            let mut acc = Complex64::new(0.0, 0.0);
            for d in -(self.width as i64)..=self.width as i64 {
                let lp = l + d;
                if lp.abs() > h {
                    continue;
                }
                acc += self.data[row * (2 * self.width + 1) + (d + self.width as i64) as usize]
                    * v[self.row_of(lp)];
            }
            out[row] = acc;
        }
        out
    }

    /// Band-matrix product; the bandwidth adds.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let h = (self.dim as i64 - 1) / 2;
        let w = self.width + other.width;
        let mut out = Self::zeros(self.dim, w);
        for l in -h..=h {
            for d in -(w as i64)..=w as i64 {
                let lp = l + d;
                if lp.abs() > h {
                    continue;
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for dm in -(self.width as i64)..=self.width as i64 {
                    let mid = l + dm;
                    if mid.abs() > h || (lp - mid).unsigned_abs() as usize > other.width {
                        continue;
                    }
                    acc += self.entry(l, mid) * other.entry(mid, lp);
                }
                *out.entry_mut(l, lp) = acc;
            }
        }
        out
    }

    /// `(1/n) Tr` over the sampled subspace.
    pub fn normalized_trace(&self) -> Complex64 {
        let h = (self.dim as i64 - 1) / 2;
        let sum: Complex64 = (-h..=h).map(|l| self.entry(l, l)).sum();
        sum / self.dim as f64
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        let h = (self.dim as i64 - 1) / 2;
        (-h..=h).map(|l| self.entry(l, l)).collect()
    }
}

/// Unit-norm state over the sampled subspace.
#[derive(Debug, Clone)]
pub struct StateVector {
    params: SystemParams,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub const NORM_TOLERANCE: f64 = 1e-12;

    pub fn new(params: SystemParams, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != params.dim() {
            return Err(Error::DimensionMismatch {
                op_n: params.dim(),
                state_n: amplitudes.len(),
            });
        }
        let norm2: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(Error::InvalidParams(format!(
                "state norm^2 = {norm2} deviates from 1 beyond {}",
                Self::NORM_TOLERANCE
            )));
        }
        Ok(Self { params, amplitudes })
    }

    /// Basis state `|l>`.
    pub fn basis(params: SystemParams, l: i64) -> Result<Self> {
        if l.abs() > params.half_range() {
            return Err(Error::InvalidParams(format!("label {l} outside subspace")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); params.dim()];
        amplitudes[(l + params.half_range()) as usize] = Complex64::new(1.0, 0.0);
        Ok(Self { params, amplitudes })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, l: i64) -> Complex64 {
        self.amplitudes[(l + self.params.half_range()) as usize]
    }
}

/// `<Phi| A |Phi>` via band-matrix-vector product.
pub fn expectation(op: &TwoModeOperator, state: &StateVector) -> Result<Complex64> {
    let mat = op.to_band_matrix(state.params())?;
    Ok(expectation_band(&mat, state.amplitudes()))
}

pub fn expectation_band(mat: &BandMatrix, amplitudes: &[Complex64]) -> Complex64 {
    assert_eq!(mat.dim(), amplitudes.len());
    let av = mat.matvec(amplitudes);
    amplitudes
        .iter()
        .zip(av.iter())
        .map(|(c, w)| c.conj() * w)
        .sum()
}

/// `(1/n) sum_{|l|<n/2} <l| A |l>`.
pub fn microcanonical_trace(op: &TwoModeOperator, params: &SystemParams) -> Result<f64> {
    let mat = op.to_band_matrix(params)?;
    let tr = mat.normalized_trace();
    Ok(tr.re)
}

/// `Tr(rho_n A^2) - [Tr(rho_n A)]^2` for a Hermitian operator, via the
/// band-matrix square. Stabilized against cancellation by centering the
/// operator on its normalized trace first.
pub fn ensemble_variance_exact(op: &TwoModeOperator, params: &SystemParams) -> Result<f64> {
    let mat = op.to_band_matrix(params)?;
    let scale = mat.max_abs().max(1.0);
    if mat.hermiticity_defect() > 1e-10 * scale {
        return Err(Error::Inconsistency(format!(
            "ensemble variance requires a Hermitian operator (defect {:.3e})",
            mat.hermiticity_defect()
        )));
    }
    let mean = mat.normalized_trace();
    let mut centered = mat.clone();
    let h = (params.dim() as i64 - 1) / 2;
    for l in -h..=h {
        *centered.entry_mut(l, l) -= mean;
    }
    let sq = centered.matmul(&centered);
    let var = sq.normalized_trace().re;
    if var < -1e-9 * scale * scale {
        return Err(Error::NegativeVariance { value: var, scale });
    }
    Ok(var.max(0.0))
}

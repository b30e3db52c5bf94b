//! Exact bivariate polynomials in the particle number `N` and the subspace
//! dimension `n`, with arbitrary-precision rational coefficients.
//!
//! The fluctuation analysis rests on exact cancellations between Fock-space
//! moment sums, so the coefficients are kept as `BigRational` throughout and
//! the centered power sums over `l` are evaluated symbolically (Faulhaber).

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Rat = BigRational;

fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

/// Polynomial in `(N, n)` stored as a sparse map from `(power of N, power
/// of n)` to a nonzero rational coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BivariatePoly {
    terms: BTreeMap<(u32, u32), Rat>,
}

impl BivariatePoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Rat) -> Self {
        Self::monomial(0, 0, c)
    }

    pub fn one() -> Self {
        Self::constant(Rat::one())
    }

    /// `c * N^p * n^q`.
    pub fn monomial(p: u32, q: u32, c: Rat) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert((p, q), c);
        }
        Self { terms }
    }

    /// Exact rational image of a float; preserves exact zeros.
    pub fn from_f64(x: f64) -> Self {
        match Rat::from_float(x) {
            Some(r) => Self::constant(r),
            None => panic!("non-finite coefficient {x}"),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(u32, u32), &Rat)> {
        self.terms.iter()
    }

    /// Exact coefficient of `N^p n^q`, zero if absent.
    pub fn coefficient(&self, p: u32, q: u32) -> Rat {
        self.terms.get(&(p, q)).cloned().unwrap_or_else(Rat::zero)
    }

    /// Coefficient with respect to the `(N/2)^p n^q` basis, i.e. the
    /// `D_{p,q}` convention: `2^p` times the plain `N^p n^q` coefficient.
    pub fn coefficient_half_basis(&self, p: u32, q: u32) -> Rat {
        self.coefficient(p, q) * Rat::from_integer(BigInt::from(2).pow(p))
    }

    pub fn degree_n_var(&self) -> u32 {
        self.terms.keys().map(|&(p, _)| p).max().unwrap_or(0)
    }

    pub fn degree_dim_var(&self) -> u32 {
        self.terms.keys().map(|&(_, q)| q).max().unwrap_or(0)
    }

    fn insert(&mut self, key: (u32, u32), c: Rat) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(key) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                let sum = e.get().clone() + c;
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&k, c) in &other.terms {
            out.insert(k, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&k, c) in &other.terms {
            out.insert(k, -c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = Self::zero();
        for (&k, c) in &self.terms {
            out.insert(k, -c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (&(p1, q1), c1) in &self.terms {
            for (&(p2, q2), c2) in &other.terms {
                out.insert((p1 + p2, q1 + q2), c1 * c2);
            }
        }
        out
    }

    pub fn scale(&self, c: &Rat) -> Self {
        let mut out = Self::zero();
        for (&k, v) in &self.terms {
            out.insert(k, v * c);
        }
        out
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    /// Exact evaluation at integer `(N, n)`.
    pub fn eval(&self, n_particles: i64, dim: i64) -> Rat {
        let np = Rat::from_integer(BigInt::from(n_particles));
        let nd = Rat::from_integer(BigInt::from(dim));
        let mut acc = Rat::zero();
        for (&(p, q), c) in &self.terms {
            let mut t = c.clone();
            for _ in 0..p {
                t *= &np;
            }
            for _ in 0..q {
                t *= &nd;
            }
            acc += t;
        }
        acc
    }

    pub fn eval_f64(&self, n_particles: f64, dim: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(p, q), c)| {
                rat_to_f64(c) * n_particles.powi(p as i32) * dim.powi(q as i32)
            })
            .sum()
    }

    /// Divide exactly by the variable `n`; every term must carry `q >= 1`.
    fn div_exact_by_dim(&self) -> Self {
        let mut out = Self::zero();
        for (&(p, q), c) in &self.terms {
            assert!(q >= 1, "polynomial not divisible by n");
            out.insert((p, q - 1), c.clone());
        }
        out
    }
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Fall back through a reduced quotient for very large terms.
        let (num, den) = (r.numer(), r.denom());
        let quot = num / den;
        quot.to_f64().unwrap_or(f64::INFINITY)
    })
}

impl fmt::Display for BivariatePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        // Highest total degree first reads like the asymptotic expansion.
        let mut keys: Vec<_> = self.terms.keys().copied().collect();
        keys.sort_by_key(|&(p, q)| (std::cmp::Reverse(p + q), std::cmp::Reverse(p)));
        for (i, (p, q)) in keys.iter().copied().enumerate() {
            let c = &self.terms[&(p, q)];
            if i == 0 {
                if c.is_negative() {
                    write!(f, "-")?;
                }
            } else if c.is_negative() {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mag = c.abs();
            let unit_coeff = mag.is_one() && (p, q) != (0, 0);
            if !unit_coeff {
                write!(f, "{mag}")?;
            }
            match p {
                0 => {}
                1 => write!(f, "{}N", if unit_coeff { "" } else { "*" })?,
                _ => write!(f, "{}N^{p}", if unit_coeff { "" } else { "*" })?,
            }
            let star = if p > 0 || !unit_coeff { "*" } else { "" };
            match q {
                0 => {}
                1 => write!(f, "{star}n")?,
                _ => write!(f, "{star}n^{q}")?,
            }
        }
        Ok(())
    }
}

impl Serialize for BivariatePoly {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            terms: Vec<(u32, u32, &'a str)>,
        }
        let rendered: Vec<String> = self
            .terms
            .values()
            .map(|c| format!("{}/{}", c.numer(), c.denom()))
            .collect();
        let repr = Repr {
            terms: self
                .terms
                .keys()
                .zip(rendered.iter())
                .map(|(&(p, q), s)| (p, q, s.as_str()))
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BivariatePoly {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            terms: Vec<(u32, u32, String)>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut poly = BivariatePoly::zero();
        for (p, q, s) in repr.terms {
            let (num, den) = s
                .split_once('/')
                .ok_or_else(|| D::Error::custom("coefficient must be num/den"))?;
            let num: BigInt = num.parse().map_err(D::Error::custom)?;
            let den: BigInt = den.parse().map_err(D::Error::custom)?;
            if den.is_zero() {
                return Err(D::Error::custom("zero denominator"));
            }
            poly.insert((p, q), Rat::new(num, den));
        }
        Ok(poly)
    }
}

/// Univariate polynomial with rational coefficients, ascending powers.
/// Internal helper for the Faulhaber machinery.
#[derive(Debug, Clone)]
struct UniPoly(Vec<Rat>);

impl UniPoly {
    fn zero() -> Self {
        UniPoly(vec![])
    }

    fn constant(c: Rat) -> Self {
        UniPoly(vec![c])
    }

    fn trim(mut self) -> Self {
        while self.0.last().is_some_and(Zero::is_zero) {
            self.0.pop();
        }
        self
    }

    fn add(&self, other: &Self) -> Self {
        let len = self.0.len().max(other.0.len());
        let mut out = vec![Rat::zero(); len];
        for (i, c) in self.0.iter().enumerate() {
            out[i] += c;
        }
        for (i, c) in other.0.iter().enumerate() {
            out[i] += c;
        }
        UniPoly(out).trim()
    }

    fn scale(&self, c: &Rat) -> Self {
        UniPoly(self.0.iter().map(|x| x * c).collect()).trim()
    }

    fn mul(&self, other: &Self) -> Self {
        if self.0.is_empty() || other.0.is_empty() {
            return Self::zero();
        }
        let mut out = vec![Rat::zero(); self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        UniPoly(out).trim()
    }

    /// Substitute another polynomial for the variable.
    fn compose(&self, inner: &Self) -> Self {
        let mut acc = Self::zero();
        for c in self.0.iter().rev() {
            acc = acc.mul(inner).add(&Self::constant(c.clone()));
        }
        acc
    }
}

fn binomial(n: u32, k: u32) -> Rat {
    let mut acc = Rat::one();
    for i in 0..k {
        acc *= rat((n - i) as i64, (i + 1) as i64);
    }
    acc
}

/// Faulhaber sum `S_j(M) = sum_{i=1}^{M} i^j` as a polynomial in `M`.
fn faulhaber(j: u32) -> UniPoly {
    // (M+1)^{j+1} - 1 = sum_{i=0}^{j} C(j+1, i) S_i(M)
    let mut table: Vec<UniPoly> = Vec::with_capacity(j as usize + 1);
    for jj in 0..=j {
        let mut rhs = {
            // (M+1)^{jj+1} - 1, expanded binomially: sum_{t=1}^{jj+1} C(jj+1,t) M^t
            let mut coeffs = vec![Rat::zero(); jj as usize + 2];
            for t in 1..=jj + 1 {
                coeffs[t as usize] = binomial(jj + 1, t);
            }
            UniPoly(coeffs).trim()
        };
        for (i, s_i) in table.iter().enumerate() {
            rhs = rhs.add(&s_i.scale(&-binomial(jj + 1, i as u32)));
        }
        table.push(rhs.scale(&rat(1, (jj + 1) as i64)));
    }
    table.pop().expect("table nonempty")
}

/// Closed-form polynomial in `n` equal to the centered power sum
/// `sum_{l=-(n-1)/2}^{(n-1)/2} l^j` over the odd-dimensional symmetric range.
/// Zero for odd `j`.
pub fn power_sum(j: u32) -> BivariatePoly {
    if j == 0 {
        return BivariatePoly::monomial(0, 1, Rat::one());
    }
    if j % 2 == 1 {
        return BivariatePoly::zero();
    }
    // 2 * S_j((n-1)/2), composed symbolically.
    let half = UniPoly(vec![rat(-1, 2), rat(1, 2)]); // (n-1)/2
    let composed = faulhaber(j).compose(&half).scale(&rat(2, 1));
    let mut out = BivariatePoly::zero();
    for (q, c) in composed.0.into_iter().enumerate() {
        out.insert((0, q as u32), c);
    }
    out
}

pub const MOMENT_ORDER_CAP: usize = 6;

/// Exact polynomial in `(N, n)` equal to
/// `(1/n) sum_{|l|<n/2} prod_{A=0}^{m-1}(N/2+l-A) prod_{B=0}^{k-m-1}(N/2-l-B)`.
///
/// This is the Fock-space moment multiplying `F_m` in the ensemble average
/// of the normal-ordered 2k-point function.
pub fn moment_sum(k: usize, m: usize) -> Result<BivariatePoly> {
    if k > MOMENT_ORDER_CAP {
        return Err(Error::OrderTooLarge {
            k,
            cap: MOMENT_ORDER_CAP,
        });
    }
    if m > k {
        return Err(Error::ModeOrderOutOfRange { m, k });
    }
    // Polynomial in l with BivariatePoly (N-only) coefficients, ascending in l.
    let half_n = BivariatePoly::monomial(1, 0, rat(1, 2));
    let mut in_l: Vec<BivariatePoly> = vec![BivariatePoly::one()];
    let mul_linear = |coeffs: &mut Vec<BivariatePoly>, c0: BivariatePoly, c1: Rat| {
        // multiply by (c0 + c1 * l)
        let mut out = vec![BivariatePoly::zero(); coeffs.len() + 1];
        for (i, a) in coeffs.iter().enumerate() {
            out[i] = out[i].add(&a.mul(&c0));
            out[i + 1] = out[i + 1].add(&a.scale(&c1));
        }
        *coeffs = out;
    };
    for a in 0..m {
        let c0 = half_n.sub(&BivariatePoly::constant(rat(a as i64, 1)));
        mul_linear(&mut in_l, c0, Rat::one());
    }
    for b in 0..(k - m) {
        let c0 = half_n.sub(&BivariatePoly::constant(rat(b as i64, 1)));
        mul_linear(&mut in_l, c0, -Rat::one());
    }
    let mut total = BivariatePoly::zero();
    for (j, coeff) in in_l.iter().enumerate() {
        if coeff.is_zero() {
            continue;
        }
        total = total.add(&coeff.mul(&power_sum(j as u32)));
    }
    Ok(total.div_exact_by_dim())
}

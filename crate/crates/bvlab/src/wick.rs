//! Exact evaluation of Gaussian moments and perturbed Gaussian / Fresnel /
//! Berezin integrals: brute-force perfect-matching sums (the oracle) and
//! Feynman-graph organization, plus Pfaffians, Berezin integration and
//! superdeterminants.

use crate::feyngraph::{enumerate, for_each_matching, Graph, ValencyProfile};
use crate::graded::{apply_contraction_exp, Context, FormalSeries, GradedPolynomial};
use crate::linalg::Mat;
use crate::num::{factorial, Rat};
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WickError {
    #[error("matrix is not {0} as required by its kind")]
    WrongSymmetry(&'static str),
    #[error("quadratic form is singular")]
    Singular,
    #[error("perturbation degree {0} below 3 in loop expansion")]
    DegreeTooLow(usize),
    #[error("series constant term must be 1")]
    BadConstantTerm,
    #[error("tensor index {0} out of range {1}")]
    IndexRange(usize, usize),
    #[error("odd perturbation degree must be even, found {0}")]
    OddDegree(usize),
    #[error("graph error: {0}")]
    Graph(#[from] crate::feyngraph::GraphError),
}

/// Kind of quadratic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadKind {
    EvenSymmetric,
    OddAntisymmetric,
}

/// An exact quadratic form together with its cached inverse.
#[derive(Debug, Clone)]
pub struct QuadraticData {
    pub dim: usize,
    pub matrix: Mat,
    pub kind: QuadKind,
    pub inverse: Mat,
}

impl QuadraticData {
    pub fn new(matrix: Mat, kind: QuadKind) -> Result<Self, WickError> {
        assert_eq!(matrix.rows, matrix.cols);
        let n = matrix.rows;
        for i in 0..n {
            for j in 0..n {
                match kind {
                    QuadKind::EvenSymmetric => {
                        if matrix[(i, j)] != matrix[(j, i)] {
                            return Err(WickError::WrongSymmetry("symmetric"));
                        }
                    }
                    QuadKind::OddAntisymmetric => {
                        if matrix[(i, j)] != -matrix[(j, i)].clone() {
                            return Err(WickError::WrongSymmetry("antisymmetric"));
                        }
                    }
                }
            }
        }
        let inverse = matrix.inverse().ok_or(WickError::Singular)?;
        Ok(QuadraticData { dim: n, matrix, kind, inverse })
    }
}

/// Gaussian moment `<< x_{i_1} ... x_{i_k} >>` as a sum over perfect
/// matchings of products of inverse-matrix entries; signed for the odd
/// kind. Odd-length index lists give 0.
pub fn wick_moment(q: &QuadraticData, indices: &[usize]) -> Rat {
    if indices.len() % 2 != 0 {
        return Rat::zero();
    }
    moment_rec(&q.inverse, indices, q.kind == QuadKind::OddAntisymmetric)
}

fn moment_rec(eta: &Mat, indices: &[usize], signed: bool) -> Rat {
    if indices.is_empty() {
        return Rat::one();
    }
    if indices.len() % 2 != 0 {
        return Rat::zero();
    }
    let mut acc = Rat::zero();
    let i0 = indices[0];
    for j in 1..indices.len() {
        let e = eta[(i0, indices[j])].clone();
        if e.is_zero() {
            continue;
        }
        let rest: Vec<usize> = indices[1..j]
            .iter()
            .chain(indices[j + 1..].iter())
            .copied()
            .collect();
        let mut term = e * moment_rec(eta, &rest, signed);
        if signed && j % 2 == 0 {
            term = -term;
        }
        acc += term;
    }
    acc
}

// ---------------------------------------------------------------------------
// sparse symmetric / antisymmetric tensors
// ---------------------------------------------------------------------------

/// Sparse fully symmetric (even) or antisymmetric (odd) tensor; values are
/// stored at sorted index tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseTensor {
    pub degree: usize,
    pub dim: usize,
    pub antisymmetric: bool,
    entries: BTreeMap<Vec<usize>, Rat>,
}

impl SparseTensor {
    pub fn new(degree: usize, dim: usize, antisymmetric: bool) -> Self {
        SparseTensor { degree, dim, antisymmetric, entries: BTreeMap::new() }
    }

    /// Adds a value; the index tuple may be in any order (symmetrized on
    /// ingest, with the permutation sign for the antisymmetric kind).
    pub fn add(&mut self, indices: &[usize], value: Rat) -> Result<(), WickError> {
        assert_eq!(indices.len(), self.degree);
        for &i in indices {
            if i >= self.dim {
                return Err(WickError::IndexRange(i, self.dim));
            }
        }
        let (sorted, sign) = sort_with_sign(indices);
        if self.antisymmetric && sign == 0 {
            return Ok(());
        }
        let v = if self.antisymmetric && sign < 0 { -value } else { value };
        let e = self.entries.entry(sorted).or_insert_with(Rat::zero);
        *e += v;
        Ok(())
    }

    /// Value at an arbitrary index tuple.
    pub fn get(&self, indices: &[usize]) -> Rat {
        let (sorted, sign) = sort_with_sign(indices);
        if self.antisymmetric && sign == 0 {
            return Rat::zero();
        }
        let v = self.entries.get(&sorted).cloned().unwrap_or_else(Rat::zero);
        if self.antisymmetric && sign < 0 {
            -v
        } else {
            v
        }
    }

    /// The monomial expansion of `P(x) = sum_{i_1..i_d} T x_{i_1}..x_{i_d}`:
    /// pairs (sorted tuple, coefficient including ordering multiplicity).
    pub fn monomials(&self) -> Vec<(Vec<usize>, Rat)> {
        self.entries
            .iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|(idx, v)| (idx.clone(), v.clone() * tuple_multiplicity(idx, self.antisymmetric)))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| v.is_zero())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<usize>, &Rat)> {
        self.entries.iter()
    }
}

/// Number of distinct orderings of a sorted tuple (d! for pairwise distinct,
/// the multinomial in general; antisymmetric tuples are always distinct).
fn tuple_multiplicity(sorted: &[usize], antisymmetric: bool) -> Rat {
    let d = sorted.len() as u64;
    if antisymmetric {
        return factorial(d);
    }
    let mut m = factorial(d);
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            m /= factorial(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        m /= factorial(run);
    }
    m
}

/// Sorts an index tuple, returning (sorted, sign): the parity of the sorting
/// permutation, or 0 when indices repeat.
pub fn sort_with_sign(indices: &[usize]) -> (Vec<usize>, i32) {
    let mut v = indices.to_vec();
    let mut sign = 1i32;
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    for w in v.windows(2) {
        if w[0] == w[1] {
            return (v, 0);
        }
    }
    (v, sign)
}

/// Polynomial perturbation `p(x) = sum_d g_d/d! P_d(x)`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub dim: usize,
    /// (degree, coupling symbol, tensor); at most one term per degree.
    pub terms: Vec<(usize, String, SparseTensor)>,
}

impl Perturbation {
    pub fn new(dim: usize) -> Self {
        Perturbation { dim, terms: Vec::new() }
    }

    pub fn with_term(mut self, degree: usize, symbol: &str, tensor: SparseTensor) -> Self {
        assert_eq!(tensor.degree, degree);
        assert_eq!(tensor.dim, self.dim);
        assert!(self.terms.iter().all(|(d, _, _)| *d != degree), "one tensor per degree");
        self.terms.push((degree, symbol.to_string(), tensor));
        self.terms.sort_by_key(|(d, _, _)| *d);
        self
    }

    pub fn symbols(&self) -> Vec<String> {
        self.terms.iter().map(|(_, s, _)| s.clone()).collect()
    }
}

// ---------------------------------------------------------------------------
// multivariate coupling series
// ---------------------------------------------------------------------------

/// Truncated multivariate power series in named coupling constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingSeries {
    pub symbols: Vec<String>,
    /// exponent vector -> coefficient
    pub terms: BTreeMap<Vec<u32>, Rat>,
    /// total order cap: exponent vectors with sum > order are unknown
    pub order: u32,
}

impl CouplingSeries {
    pub fn zero(symbols: &[String], order: u32) -> Self {
        CouplingSeries { symbols: symbols.to_vec(), terms: BTreeMap::new(), order }
    }

    pub fn one(symbols: &[String], order: u32) -> Self {
        let mut s = Self::zero(symbols, order);
        s.terms.insert(vec![0; s.symbols.len()], Rat::one());
        s
    }

    pub fn set(&mut self, exps: Vec<u32>, coeff: Rat) {
        assert_eq!(exps.len(), self.symbols.len());
        if exps.iter().sum::<u32>() <= self.order {
            if coeff.is_zero() {
                self.terms.remove(&exps);
            } else {
                self.terms.insert(exps, coeff);
            }
        }
    }

    pub fn coeff(&self, exps: &[u32]) -> Rat {
        self.terms.get(exps).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn add(&self, other: &CouplingSeries) -> CouplingSeries {
        assert_eq!(self.symbols, other.symbols);
        let order = self.order.min(other.order);
        let mut out = CouplingSeries::zero(&self.symbols, order);
        for (e, c) in self.terms.iter().chain(other.terms.iter()) {
            if e.iter().sum::<u32>() <= order {
                let entry = out.terms.entry(e.clone()).or_insert_with(Rat::zero);
                *entry += c.clone();
            }
        }
        out.terms.retain(|_, c| !c.is_zero());
        out
    }

    pub fn scale(&self, r: &Rat) -> CouplingSeries {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= r.clone();
        }
        out.terms.retain(|_, c| !c.is_zero());
        out
    }

    pub fn mul(&self, other: &CouplingSeries) -> CouplingSeries {
        assert_eq!(self.symbols, other.symbols);
        let order = self.order.min(other.order);
        let mut out = CouplingSeries::zero(&self.symbols, order);
        for (ea, ca) in self.terms.iter() {
            for (eb, cb) in other.terms.iter() {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                if e.iter().sum::<u32>() <= order {
                    let entry = out.terms.entry(e).or_insert_with(Rat::zero);
                    *entry += ca.clone() * cb.clone();
                }
            }
        }
        out.terms.retain(|_, c| !c.is_zero());
        out
    }

    /// exp of a series with zero constant term.
    pub fn exp(&self) -> CouplingSeries {
        let zero_exp = vec![0u32; self.symbols.len()];
        assert!(self.coeff(&zero_exp).is_zero(), "exp needs zero constant term");
        let mut out = CouplingSeries::one(&self.symbols, self.order);
        let mut power = CouplingSeries::one(&self.symbols, self.order);
        for k in 1..=self.order as u64 {
            power = power.mul(self);
            if power.terms.is_empty() {
                break;
            }
            out = out.add(&power.scale(&(Rat::one() / factorial(k))));
        }
        out
    }

    /// log of a series with constant term 1.
    pub fn log(&self) -> Result<CouplingSeries, WickError> {
        let zero_exp = vec![0u32; self.symbols.len()];
        if !self.coeff(&zero_exp).is_one() {
            return Err(WickError::BadConstantTerm);
        }
        let mut g = self.clone();
        g.terms.remove(&zero_exp);
        let mut out = CouplingSeries::zero(&self.symbols, self.order);
        let mut power = CouplingSeries::one(&self.symbols, self.order);
        for k in 1..=self.order as u64 {
            power = power.mul(&g);
            if power.terms.is_empty() {
                break;
            }
            let sign = if k % 2 == 1 { Rat::one() } else { -Rat::one() };
            out = out.add(&power.scale(&(sign / Rat::from_integer(k.into()))));
        }
        Ok(out)
    }

    /// Multiplicative inverse of a series with constant term 1.
    pub fn inverse(&self) -> Result<CouplingSeries, WickError> {
        let zero_exp = vec![0u32; self.symbols.len()];
        if !self.coeff(&zero_exp).is_one() {
            return Err(WickError::BadConstantTerm);
        }
        let one = CouplingSeries::one(&self.symbols, self.order);
        let delta = one.add(&self.scale(&-Rat::one())); // 1 - self
        let mut inv = one.clone();
        let mut power = one;
        for _ in 0..self.order {
            power = power.mul(&delta);
            if power.terms.is_empty() {
                break;
            }
            inv = inv.add(&power);
        }
        Ok(inv)
    }

    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut parts = Vec::new();
        for (e, c) in self.terms.iter() {
            let mut factors = vec![crate::num::rat_to_string(c)];
            for (s, &k) in self.symbols.iter().zip(e.iter()) {
                if k == 1 {
                    factors.push(s.clone());
                } else if k > 1 {
                    factors.push(format!("{}^{}", s, k));
                }
            }
            parts.push(factors.join("*"));
        }
        parts.join(" + ")
    }
}

/// Symbolic Gaussian / Fresnel prefactor kept apart from the rational
/// series: `(2*pi)^{tp/2} hbar^{hp/2} |det Q|^{-1/2} exp(i*pi*phase/4)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prefactor {
    pub two_pi_half_power: i64,
    pub hbar_half_power: i64,
    pub det_q: Rat,
    /// signature phase in eighth turns (Fresnel); 0 for Gaussian
    pub phase_eighths: i64,
}

impl Prefactor {
    pub fn gaussian(n: usize, det_q: Rat) -> Self {
        Prefactor { two_pi_half_power: n as i64, hbar_half_power: 0, det_q, phase_eighths: 0 }
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if self.two_pi_half_power != 0 {
            parts.push(format!("(2*pi)^({}/2)", self.two_pi_half_power));
        }
        if self.hbar_half_power != 0 {
            parts.push(format!("hbar^({}/2)", self.hbar_half_power));
        }
        parts.push(format!(
            "|det Q|^(-1/2), det Q = {}",
            crate::num::rat_to_string(&self.det_q)
        ));
        if self.phase_eighths != 0 {
            parts.push(format!("exp(i*pi*{}/4)", self.phase_eighths));
        }
        parts.join(" * ")
    }
}

// ---------------------------------------------------------------------------
// perturbative expectation: oracle and graph routes
// ---------------------------------------------------------------------------

/// Which evaluation route to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    GraphSum,
    Oracle,
}

/// Exponent vectors with total sum <= max, in sorted order.
pub fn multi_counts(num_terms: usize, max_total: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; num_terms]];
    let mut frontier = vec![vec![0u32; num_terms]];
    for _ in 0..max_total {
        let mut next = Vec::new();
        for f in frontier.iter() {
            for i in 0..num_terms {
                if f[i + 1..].iter().all(|&x| x == 0) {
                    let mut g = f.clone();
                    g[i] += 1;
                    next.push(g);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out.sort();
    out.dedup();
    out
}

/// `< prod factors >` by brute-force Wick contraction (the oracle).
fn product_moment_oracle(q: &QuadraticData, factors: &[&SparseTensor], signed: bool) -> Rat {
    let monos: Vec<Vec<(Vec<usize>, Rat)>> = factors.iter().map(|t| t.monomials()).collect();
    if monos.iter().any(|m| m.is_empty()) {
        return Rat::zero();
    }
    let mut acc = Rat::zero();
    let mut choice = vec![0usize; factors.len()];
    loop {
        let mut coeff = Rat::one();
        let mut indices: Vec<usize> = Vec::new();
        for (f, &c) in choice.iter().enumerate() {
            let (idx, v) = &monos[f][c];
            coeff *= v.clone();
            indices.extend_from_slice(idx);
        }
        if !coeff.is_zero() {
            acc += coeff * moment_rec(&q.inverse, &indices, signed);
        }
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return acc;
            }
            choice[pos] += 1;
            if choice[pos] < monos[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Feynman state sum of a graph: vertex `v` carries `tensors[v]`, edges
/// carry `eta`. For `signed`, includes the odd matching sign of the
/// representative labeling.
pub fn state_sum(g: &Graph, tensors: &[&SparseTensor], eta: &Mat, signed: bool) -> Rat {
    let n = eta.rows;
    let he = g.half_edge_count();
    let edges = g.edges();
    let mut stars: Vec<Vec<usize>> = vec![Vec::new(); g.vertex_count];
    for h in 0..he {
        stars[g.incidence[h] as usize].push(h);
    }
    let sign = if signed {
        let mut seq: Vec<usize> = Vec::with_capacity(he);
        for (a, b) in edges.iter() {
            seq.push(*a as usize);
            seq.push(*b as usize);
        }
        let (_, s) = sort_with_sign(&seq);
        s
    } else {
        1
    };
    if sign == 0 {
        return Rat::zero();
    }
    if he == 0 {
        let mut w = Rat::one();
        for t in tensors.iter().take(g.vertex_count) {
            w *= t.get(&[]);
        }
        return w;
    }
    let mut total = Rat::zero();
    let mut state = vec![0usize; he];
    'odometer: loop {
        let mut w = Rat::one();
        for (a, b) in edges.iter() {
            let e = eta[(state[*a as usize], state[*b as usize])].clone();
            if e.is_zero() {
                w = Rat::zero();
                break;
            }
            w *= e;
        }
        if !w.is_zero() {
            for (v, star) in stars.iter().enumerate() {
                let idx: Vec<usize> = star.iter().map(|&h| state[h]).collect();
                let t = tensors[v].get(&idx);
                if t.is_zero() {
                    w = Rat::zero();
                    break;
                }
                w *= t;
            }
        }
        total += w;
        let mut pos = 0;
        loop {
            if pos == he {
                break 'odometer;
            }
            state[pos] += 1;
            if state[pos] < n {
                break;
            }
            state[pos] = 0;
            pos += 1;
        }
    }
    if sign < 0 {
        -total
    } else {
        total
    }
}

/// Perturbative expectation `<< exp p >>` as a truncated multivariate
/// series in the couplings.
pub fn perturbative_expectation(
    q: &QuadraticData,
    p: &Perturbation,
    max_total_order: u32,
    route: Route,
) -> Result<CouplingSeries, WickError> {
    let signed = q.kind == QuadKind::OddAntisymmetric;
    if signed {
        for (d, _, _) in p.terms.iter() {
            if d % 2 != 0 {
                return Err(WickError::OddDegree(*d));
            }
        }
    }
    let symbols = p.symbols();
    let mut out = CouplingSeries::zero(&symbols, max_total_order);
    for counts in multi_counts(p.terms.len(), max_total_order) {
        let coeff = expectation_coefficient(q, p, &counts, route)?;
        if !coeff.is_zero() {
            out.set(counts, coeff);
        }
    }
    Ok(out)
}

/// Coefficient of `prod_d g_d^{v_d}` in `<< exp p >>`.
fn expectation_coefficient(
    q: &QuadraticData,
    p: &Perturbation,
    counts: &[u32],
    route: Route,
) -> Result<Rat, WickError> {
    if counts.iter().all(|&c| c == 0) {
        return Ok(Rat::one());
    }
    let signed = q.kind == QuadKind::OddAntisymmetric;
    match route {
        Route::Oracle => {
            // 1 / prod v_d! d!^{v_d}
            let mut norm = Rat::one();
            let mut factors: Vec<&SparseTensor> = Vec::new();
            for ((d, _, t), &v) in p.terms.iter().zip(counts.iter()) {
                norm *= factorial(v as u64);
                for _ in 0..v {
                    norm *= factorial(*d as u64);
                    factors.push(t);
                }
            }
            Ok(product_moment_oracle(q, &factors, signed) / norm)
        }
        Route::GraphSum => {
            let profile = ValencyProfile::new(
                &p.terms
                    .iter()
                    .zip(counts.iter())
                    .filter(|(_, &v)| v > 0)
                    .map(|((d, _, _), &v)| (*d as u32, v))
                    .collect::<Vec<_>>(),
            );
            if profile.half_edges() % 2 != 0 {
                return Ok(Rat::zero());
            }
            let classes = enumerate(&profile, Some(64))?;
            let mut acc = Rat::zero();
            for class in classes.iter() {
                let g = &class.canonical_form;
                let tensors: Vec<&SparseTensor> = (0..g.vertex_count)
                    .map(|v| {
                        let val = g.valency(v);
                        &p.terms.iter().find(|(d, _, _)| *d == val).unwrap().2
                    })
                    .collect();
                let phi = state_sum(g, &tensors, &q.inverse, signed);
                acc += phi / class.aut_order.clone();
            }
            Ok(acc)
        }
    }
}

/// Connected-only graph evaluation: `log << exp p >>` term by term.
pub fn connected_expectation(
    q: &QuadraticData,
    p: &Perturbation,
    max_total_order: u32,
) -> Result<CouplingSeries, WickError> {
    let signed = q.kind == QuadKind::OddAntisymmetric;
    let symbols = p.symbols();
    let mut out = CouplingSeries::zero(&symbols, max_total_order);
    for counts in multi_counts(p.terms.len(), max_total_order) {
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let profile = ValencyProfile::new(
            &p.terms
                .iter()
                .zip(counts.iter())
                .filter(|(_, &v)| v > 0)
                .map(|((d, _, _), &v)| (*d as u32, v))
                .collect::<Vec<_>>(),
        );
        if profile.half_edges() % 2 != 0 {
            continue;
        }
        let classes = enumerate(&profile, Some(64))?;
        let mut acc = Rat::zero();
        for class in classes.iter() {
            let g = &class.canonical_form;
            if !g.is_connected() {
                continue;
            }
            let tensors: Vec<&SparseTensor> = (0..g.vertex_count)
                .map(|v| {
                    let val = g.valency(v);
                    &p.terms.iter().find(|(d, _, _)| *d == val).unwrap().2
                })
                .collect();
            let phi = state_sum(g, &tensors, &q.inverse, signed);
            acc += phi / class.aut_order.clone();
        }
        if !acc.is_zero() {
            out.set(counts, acc);
        }
    }
    Ok(out)
}

/// Formal log of an all-graphs series (the connected-graph generating
/// function); the constant term must be 1.
pub fn log_connected(series: &CouplingSeries) -> Result<CouplingSeries, WickError> {
    series.log()
}

/// Loop expansion: coefficients of `hbar^k`, k = 0..=order, of
/// `sum_Gamma hbar^{-chi} Phi / |Aut|` for perturbations of degrees >= 3.
pub fn loop_expansion(
    q: &QuadraticData,
    p: &Perturbation,
    hbar_order: u32,
) -> Result<Vec<Rat>, WickError> {
    for (d, _, _) in p.terms.iter() {
        if *d < 3 {
            return Err(WickError::DegreeTooLow(*d));
        }
    }
    let signed = q.kind == QuadKind::OddAntisymmetric;
    let mut out = vec![Rat::zero(); hbar_order as usize + 1];
    out[0] = Rat::one(); // the empty graph
    let degrees: Vec<usize> = p.terms.iter().map(|(d, _, _)| *d).collect();
    let mut counts = vec![0u32; degrees.len()];
    let budget = 2 * hbar_order as i64;
    let mut err: Option<WickError> = None;
    let mut add = |counts: &[u32]| {
        if err.is_some() {
            return;
        }
        let he: usize = degrees.iter().zip(counts).map(|(d, &c)| d * c as usize).sum();
        if he % 2 != 0 {
            return;
        }
        let e = (he / 2) as i64;
        let v: i64 = counts.iter().map(|&c| c as i64).sum();
        let chi_neg = e - v;
        if chi_neg < 0 || chi_neg > hbar_order as i64 {
            return;
        }
        let profile = ValencyProfile::new(
            &degrees
                .iter()
                .zip(counts)
                .filter(|(_, &c)| c > 0)
                .map(|(&d, &c)| (d as u32, c))
                .collect::<Vec<_>>(),
        );
        match enumerate(&profile, Some(64)) {
            Ok(classes) => {
                for class in classes {
                    let g = &class.canonical_form;
                    let tensors: Vec<&SparseTensor> = (0..g.vertex_count)
                        .map(|v| {
                            let val = g.valency(v);
                            &p.terms.iter().find(|(d, _, _)| *d == val).unwrap().2
                        })
                        .collect();
                    let phi = state_sum(g, &tensors, &q.inverse, signed);
                    out[chi_neg as usize] += phi / class.aut_order;
                }
            }
            Err(e) => err = Some(WickError::Graph(e)),
        }
    };
    count_rec(0, &mut counts, &degrees, budget, &mut add);
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn count_rec(
    slot: usize,
    counts: &mut Vec<u32>,
    degrees: &[usize],
    budget: i64,
    f: &mut dyn FnMut(&[u32]),
) {
    if slot == degrees.len() {
        if counts.iter().any(|&c| c > 0) {
            f(counts);
        }
        return;
    }
    let unit = (degrees[slot] as i64 - 2).max(1);
    let mut c = 0u32;
    loop {
        counts[slot] = c;
        let used = unit * c as i64;
        if used > budget {
            counts[slot] = 0;
            return;
        }
        count_rec(slot + 1, counts, degrees, budget - used, f);
        c += 1;
    }
}

// ---------------------------------------------------------------------------
// observables: colored graphs
// ---------------------------------------------------------------------------

/// An observable `Psi = sum_d Psi_d / d!` with homogeneous tensor pieces.
#[derive(Debug, Clone)]
pub struct Observable {
    pub dim: usize,
    pub pieces: Vec<(usize, SparseTensor)>,
}

impl Observable {
    /// The plain monomial observable `x_{i_1} ... x_{i_d}`.
    pub fn monomial(dim: usize, indices: &[usize]) -> Self {
        let d = indices.len();
        let (sorted, _) = sort_with_sign(indices);
        let mult = tuple_multiplicity(&sorted, false);
        let mut t = SparseTensor::new(d, dim, false);
        // Psi = T/d! with T symmetric; we need (1/d!)*T(x) = x^sorted,
        // and T(x) contributes value*mult per sorted tuple.
        t.add(&sorted, factorial(d as u64) / mult).unwrap();
        Observable { dim, pieces: vec![(d, t)] }
    }
}

/// Normalized expectation of a product of observables in the perturbed
/// Gaussian measure, via the colored-graph sum: each nonzero color occurs
/// exactly once and every connected component touches a nonzero color.
pub fn expectation_with_observables(
    q: &QuadraticData,
    p: &Perturbation,
    observables: &[Observable],
    max_total_order: u32,
) -> Result<CouplingSeries, WickError> {
    let signed = q.kind == QuadKind::OddAntisymmetric;
    let symbols = p.symbols();
    let mut out = CouplingSeries::zero(&symbols, max_total_order);
    // all piece-choice vectors
    let piece_choices: Vec<Vec<usize>> = {
        let mut acc = vec![Vec::new()];
        for obs in observables {
            let mut next = Vec::new();
            for base in acc.iter() {
                for pi in 0..obs.pieces.len() {
                    let mut b = base.clone();
                    b.push(pi);
                    next.push(b);
                }
            }
            acc = next;
        }
        acc
    };
    for counts in multi_counts(p.terms.len(), max_total_order) {
        let mut total = Rat::zero();
        for choice in piece_choices.iter() {
            // build stars
            let mut incidence: Vec<u32> = Vec::new();
            let mut colors: Vec<u32> = Vec::new();
            let mut tensors: Vec<&SparseTensor> = Vec::new();
            let mut vid = 0u32;
            let mut group = Rat::one();
            for ((d, _, t), &v) in p.terms.iter().zip(counts.iter()) {
                group *= factorial(v as u64);
                for _ in 0..v {
                    group *= factorial(*d as u64);
                    for _ in 0..*d {
                        incidence.push(vid);
                    }
                    colors.push(0);
                    tensors.push(t);
                    vid += 1;
                }
            }
            for (j, obs) in observables.iter().enumerate() {
                let (d, t) = &obs.pieces[choice[j]];
                group *= factorial(*d as u64);
                for _ in 0..*d {
                    incidence.push(vid);
                }
                colors.push(j as u32 + 1);
                tensors.push(t);
                vid += 1;
            }
            let he = incidence.len();
            if he % 2 != 0 {
                continue;
            }
            let mut classes: BTreeMap<String, (Graph, u64)> = BTreeMap::new();
            if he == 0 {
                let g = Graph::new(vid as usize, incidence.clone(), Vec::new())
                    .with_colors(colors.clone());
                classes.insert(g.canonical_key(), (g, 1));
            } else {
                for_each_matching(he, |matching| {
                    let g = Graph::new(vid as usize, incidence.clone(), matching.to_vec())
                        .with_colors(colors.clone());
                    let key = g.canonical_key();
                    classes.entry(key).or_insert_with(|| (g, 0)).1 += 1;
                });
            }
            for (_, (g, count)) in classes.into_iter() {
                let touches = g
                    .components()
                    .iter()
                    .all(|comp| comp.vertex_color.iter().any(|&c| c != 0));
                if !touches {
                    continue;
                }
                let aut = group.clone() / Rat::from_integer(count.into());
                let phi = state_sum(&g, &tensors, &q.inverse, signed);
                total += phi / aut;
            }
        }
        if !total.is_zero() {
            out.set(counts, total);
        }
    }
    Ok(out)
}

/// Oracle for observables: `<< e^p Psi_1 ... Psi_r >> / << e^p >>`
/// evaluated term by term with the Wick moment recursion.
pub fn observables_oracle(
    q: &QuadraticData,
    p: &Perturbation,
    observables: &[Observable],
    max_total_order: u32,
) -> Result<CouplingSeries, WickError> {
    let signed = q.kind == QuadKind::OddAntisymmetric;
    let symbols = p.symbols();
    let piece_choices: Vec<Vec<usize>> = {
        let mut acc = vec![Vec::new()];
        for obs in observables {
            let mut next = Vec::new();
            for base in acc.iter() {
                for pi in 0..obs.pieces.len() {
                    let mut b = base.clone();
                    b.push(pi);
                    next.push(b);
                }
            }
            acc = next;
        }
        acc
    };
    let mut numer = CouplingSeries::zero(&symbols, max_total_order);
    for counts in multi_counts(p.terms.len(), max_total_order) {
        let mut norm = Rat::one();
        let mut base_factors: Vec<&SparseTensor> = Vec::new();
        for ((d, _, t), &v) in p.terms.iter().zip(counts.iter()) {
            norm *= factorial(v as u64);
            for _ in 0..v {
                norm *= factorial(*d as u64);
                base_factors.push(t);
            }
        }
        let mut total = Rat::zero();
        for choice in piece_choices.iter() {
            let mut fs = base_factors.clone();
            let mut obs_norm = Rat::one();
            for (j, obs) in observables.iter().enumerate() {
                let (d, t) = &obs.pieces[choice[j]];
                obs_norm *= factorial(*d as u64);
                fs.push(t);
            }
            total += product_moment_oracle(q, &fs, signed) / obs_norm;
        }
        let c = total / norm;
        if !c.is_zero() {
            numer.set(counts, c);
        }
    }
    let denom = perturbative_expectation(q, p, max_total_order, Route::Oracle)?;
    Ok(numer.mul(&denom.inverse()?))
}

// ---------------------------------------------------------------------------
// Pfaffian, Berezin, determinants
// ---------------------------------------------------------------------------

/// Pfaffian of an antisymmetric matrix by signed expansion along the first
/// row; 0 for odd dimension.
pub fn pfaffian(a: &Mat) -> Result<Rat, WickError> {
    assert_eq!(a.rows, a.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            if a[(i, j)] != -a[(j, i)].clone() {
                return Err(WickError::WrongSymmetry("antisymmetric"));
            }
        }
    }
    Ok(pf_rec(a, &(0..a.rows).collect::<Vec<_>>()))
}

fn pf_rec(a: &Mat, live: &[usize]) -> Rat {
    let n = live.len();
    if n == 0 {
        return Rat::one();
    }
    if n % 2 != 0 {
        return Rat::zero();
    }
    let mut acc = Rat::zero();
    let i0 = live[0];
    for (jpos, &j) in live.iter().enumerate().skip(1) {
        let v = a[(i0, j)].clone();
        if v.is_zero() {
            continue;
        }
        let rest: Vec<usize> = live[1..jpos]
            .iter()
            .chain(live[jpos + 1..].iter())
            .copied()
            .collect();
        let mut term = v * pf_rec(a, &rest);
        if jpos % 2 == 0 {
            term = -term;
        }
        acc += term;
    }
    acc
}

/// Berezin integral over the listed odd variables: the list is the
/// innermost-first integration order, so the integral of
/// `theta_{i1}*...*theta_{in}` written in list order is 1. Returns the
/// coefficient polynomial in the remaining variables.
pub fn berezin_integrate(
    p: &GradedPolynomial,
    ordered_vars: &[&str],
) -> Result<GradedPolynomial, crate::graded::GradedError> {
    let ctx = p.ctx.clone();
    let ids: Vec<u32> = ordered_vars
        .iter()
        .map(|n| {
            ctx.lookup(n)
                .map(|i| i as u32)
                .ok_or_else(|| crate::graded::GradedError::UnknownVariable(n.to_string()))
        })
        .collect::<Result<_, _>>()?;
    for &id in ids.iter() {
        assert_eq!(
            ctx.var(id as usize).parity(),
            crate::graded::Parity::Odd,
            "berezin integration over an even variable"
        );
    }
    let positions: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let (_, perm_sign) = sort_with_sign(&positions);
    assert!(perm_sign != 0, "repeated integration variable");
    let mut out = GradedPolynomial::zero(&ctx);
    for (m, s) in p.terms() {
        if !ids.iter().all(|&id| m.contains(id)) {
            continue;
        }
        // move the listed vars (in canonical relative order) to the front,
        // counting crossings over odd non-listed variables
        let mut crossings = 0usize;
        let mut rest: Vec<(u32, u32)> = Vec::new();
        for &(v, e) in m.0.iter() {
            if ids.contains(&v) {
                crossings += rest
                    .iter()
                    .filter(|(u, _)| ctx.var(*u as usize).parity() == crate::graded::Parity::Odd)
                    .count();
            } else {
                rest.push((v, e));
            }
        }
        let mut sign = if crossings % 2 == 0 { 1 } else { -1 };
        sign *= perm_sign;
        let coeff = if sign < 0 { s.neg() } else { s.clone() };
        out.add_term(crate::graded::Mono(rest), coeff);
    }
    Ok(out)
}

/// `det B` via the Berezin integral of `exp(B(thetabar, theta))` over odd
/// variable pairs.
pub fn det_via_pairs(b: &Mat) -> Rat {
    let n = b.rows;
    assert_eq!(n, b.cols);
    if n == 0 {
        return Rat::one();
    }
    let mut vars: Vec<crate::graded::GradedVariable> = Vec::new();
    for i in 0..n {
        vars.push(crate::graded::GradedVariable { name: format!("tb{}", i), degree: 1 });
        vars.push(crate::graded::GradedVariable { name: format!("t{}", i), degree: 1 });
    }
    let ctx = Context::new(vars);
    let mut quad = GradedPolynomial::zero(&ctx);
    for i in 0..n {
        for j in 0..n {
            if b[(i, j)].is_zero() {
                continue;
            }
            let tb = GradedPolynomial::var(&ctx, &format!("tb{}", i)).unwrap();
            let t = GradedPolynomial::var(&ctx, &format!("t{}", j)).unwrap();
            quad = quad.add(&tb.mul(&t).unwrap().scale(&b[(i, j)])).unwrap();
        }
    }
    let mut acc = GradedPolynomial::one(&ctx);
    let mut pow = GradedPolynomial::one(&ctx);
    for k in 1..=n as u64 {
        pow = pow.mul(&quad).unwrap().scale(&(Rat::one() / Rat::from_integer(k.into())));
        if pow.is_zero() {
            break;
        }
        acc = acc.add(&pow).unwrap();
    }
    let names: Vec<String> = (0..n)
        .flat_map(|i| [format!("tb{}", i), format!("t{}", i)])
        .collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let res = berezin_integrate(&acc, &refs).unwrap();
    res.coeff(&crate::graded::Mono::unit()).coeff(0)
}

/// Polygon series `det(-B) exp(-sum_{k<=order} alpha^k/k tr (B^{-1}P)^k)`;
/// equals the Taylor expansion of `det(-B + alpha P)` to that order.
pub fn polygon_series(b: &Mat, p: &Mat, order: u32) -> Result<CouplingSeries, WickError> {
    let n = b.rows;
    let binv = b.inverse().ok_or(WickError::Singular)?;
    let bp = binv.mul(p);
    let symbols = vec!["alpha".to_string()];
    let det_minus_b = b.scale(&-Rat::one()).det();
    let mut expo = CouplingSeries::zero(&symbols, order);
    let mut power = Mat::identity(n);
    for k in 1..=order {
        power = power.mul(&bp);
        let mut tr = Rat::zero();
        for i in 0..n {
            tr += power[(i, i)].clone();
        }
        expo.set(vec![k], -tr / Rat::from_integer((k as i64).into()));
    }
    Ok(expo.exp().scale(&det_minus_b))
}

/// Taylor expansion of `det(-B + alpha P)` by row multilinearity (oracle
/// for the polygon series).
pub fn det_expansion_oracle(b: &Mat, p: &Mat, order: u32) -> CouplingSeries {
    let n = b.rows;
    let symbols = vec!["alpha".to_string()];
    let mut out = CouplingSeries::zero(&symbols, order);
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones();
        if k > order {
            continue;
        }
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = if mask & (1 << i) != 0 {
                    p[(i, j)].clone()
                } else {
                    -b[(i, j)].clone()
                };
            }
        }
        let d = m.det();
        if !d.is_zero() {
            let prev = out.coeff(&[k]);
            out.set(vec![k], prev + d);
        }
    }
    out
}

/// Block supermatrix.
#[derive(Debug, Clone)]
pub struct SuperMatrix {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

/// `Sdet J = det(A - B D^{-1} C) / det(D)`.
pub fn sdet(j: &SuperMatrix) -> Result<Rat, WickError> {
    let dinv = j.d.inverse().ok_or(WickError::Singular)?;
    let schur = j.a.sub(&j.b.mul(&dinv).mul(&j.c));
    Ok(schur.det() / j.d.det())
}

/// Supertrace `tr A - tr D`.
pub fn supertrace(j: &SuperMatrix) -> Rat {
    let mut tr = Rat::zero();
    for i in 0..j.a.rows {
        tr += j.a[(i, i)].clone();
    }
    for i in 0..j.d.rows {
        tr -= j.d[(i, i)].clone();
    }
    tr
}

// ---------------------------------------------------------------------------
// superspace perturbative integrals
// ---------------------------------------------------------------------------

/// A perturbation term on a superspace: bi-valency (j even legs, k odd
/// legs). Entries are (sorted even tuple, strictly increasing odd tuple,
/// value); the tensor is symmetric in even slots, antisymmetric in odd.
#[derive(Debug, Clone)]
pub struct SuperTerm {
    pub even_degree: usize,
    pub odd_degree: usize,
    pub symbol: String,
    pub entries: Vec<(Vec<usize>, Vec<usize>, Rat)>,
}

/// Quadratic data on a superspace plus mixed perturbation terms.
#[derive(Debug, Clone)]
pub struct SuperQuadraticData {
    pub even: QuadraticData,
    pub odd: QuadraticData,
    pub terms: Vec<SuperTerm>,
}

/// Normalized perturbative expectation over a superspace, via parity-tagged
/// graphs with the odd matching sign (`Route::GraphSum`) or iterated Wick
/// (`Route::Oracle`).
pub fn super_perturbative(
    data: &SuperQuadraticData,
    max_total_order: u32,
    route: Route,
) -> Result<CouplingSeries, WickError> {
    for t in data.terms.iter() {
        if t.odd_degree % 2 != 0 {
            return Err(WickError::OddDegree(t.odd_degree));
        }
    }
    let symbols: Vec<String> = data.terms.iter().map(|t| t.symbol.clone()).collect();
    let mut out = CouplingSeries::zero(&symbols, max_total_order);
    for counts in multi_counts(data.terms.len(), max_total_order) {
        let c = super_coefficient(data, &counts, route)?;
        if !c.is_zero() {
            out.set(counts, c);
        }
    }
    Ok(out)
}

fn super_coefficient(
    data: &SuperQuadraticData,
    counts: &[u32],
    route: Route,
) -> Result<Rat, WickError> {
    if counts.iter().all(|&c| c == 0) {
        return Ok(Rat::one());
    }
    match route {
        Route::Oracle => {
            let mut norm = Rat::one();
            let mut vertices: Vec<&SuperTerm> = Vec::new();
            for (t, &v) in data.terms.iter().zip(counts.iter()) {
                norm *= factorial(v as u64);
                for _ in 0..v {
                    norm *= factorial(t.even_degree as u64) * factorial(t.odd_degree as u64);
                    vertices.push(t);
                }
            }
            if vertices.iter().any(|t| t.entries.is_empty()) {
                return Ok(Rat::zero());
            }
            let mut acc = Rat::zero();
            let mut choice = vec![0usize; vertices.len()];
            'outer: loop {
                let mut coeff = Rat::one();
                let mut even_idx: Vec<usize> = Vec::new();
                let mut odd_idx: Vec<usize> = Vec::new();
                for (vi, &c) in choice.iter().enumerate() {
                    let t = vertices[vi];
                    let (je, jo, v) = &t.entries[c];
                    let mult = tuple_multiplicity(je, false) * factorial(t.odd_degree as u64);
                    coeff *= v.clone() * mult;
                    even_idx.extend_from_slice(je);
                    odd_idx.extend_from_slice(jo);
                }
                if !coeff.is_zero() {
                    let me = moment_rec(&data.even.inverse, &even_idx, false);
                    let mo = moment_rec(&data.odd.inverse, &odd_idx, true);
                    acc += coeff * me * mo;
                }
                let mut pos = 0;
                loop {
                    if pos == choice.len() {
                        break 'outer;
                    }
                    choice[pos] += 1;
                    if choice[pos] < vertices[pos].entries.len() {
                        break;
                    }
                    choice[pos] = 0;
                    pos += 1;
                }
            }
            Ok(acc / norm)
        }
        Route::GraphSum => {
            let mut incidence: Vec<u32> = Vec::new();
            let mut parity: Vec<u8> = Vec::new();
            let mut vertex_terms: Vec<&SuperTerm> = Vec::new();
            let mut colors: Vec<u32> = Vec::new();
            let mut vid = 0u32;
            let mut group = Rat::one();
            for (ti, (t, &v)) in data.terms.iter().zip(counts.iter()).enumerate() {
                group *= factorial(v as u64);
                for _ in 0..v {
                    group *= factorial(t.even_degree as u64) * factorial(t.odd_degree as u64);
                    for _ in 0..t.even_degree {
                        incidence.push(vid);
                        parity.push(0);
                    }
                    for _ in 0..t.odd_degree {
                        incidence.push(vid);
                        parity.push(1);
                    }
                    vertex_terms.push(t);
                    colors.push(ti as u32);
                    vid += 1;
                }
            }
            let he = incidence.len();
            let even_hes: Vec<usize> = (0..he).filter(|&h| parity[h] == 0).collect();
            let odd_hes: Vec<usize> = (0..he).filter(|&h| parity[h] == 1).collect();
            if even_hes.len() % 2 != 0 || odd_hes.len() % 2 != 0 {
                return Ok(Rat::zero());
            }
            let mut classes: BTreeMap<String, (Graph, u64)> = BTreeMap::new();
            for_each_matching(even_hes.len(), |em| {
                for_each_matching(odd_hes.len(), |om| {
                    let mut matching = vec![0u32; he];
                    for (i, &mi) in em.iter().enumerate() {
                        matching[even_hes[i]] = even_hes[mi as usize] as u32;
                    }
                    for (i, &mi) in om.iter().enumerate() {
                        matching[odd_hes[i]] = odd_hes[mi as usize] as u32;
                    }
                    let g = Graph::new(vid as usize, incidence.clone(), matching)
                        .with_parities(parity.clone())
                        .with_colors(colors.clone());
                    let key = g.canonical_key();
                    classes.entry(key).or_insert_with(|| (g, 0)).1 += 1;
                });
            });
            let mut acc = Rat::zero();
            for (_, (g, count)) in classes.into_iter() {
                let aut = group.clone() / Rat::from_integer(count.into());
                let phi = super_state_sum(&g, &vertex_terms, data);
                acc += phi / aut;
            }
            Ok(acc)
        }
    }
}

/// State sum of a parity-tagged graph, including the odd matching sign of
/// the representative labeling (well defined on the isomorphism class).
fn super_state_sum(g: &Graph, vertex_terms: &[&SuperTerm], data: &SuperQuadraticData) -> Rat {
    let odd_positions: Vec<usize> =
        (0..g.half_edge_count()).filter(|&h| g.he_parity[h] == 1).collect();
    let rank_of: BTreeMap<usize, usize> =
        odd_positions.iter().enumerate().map(|(r, &h)| (h, r)).collect();
    let mut seq: Vec<usize> = Vec::new();
    for (a, b) in g.edges() {
        if g.he_parity[a as usize] == 1 {
            seq.push(rank_of[&(a as usize)]);
            seq.push(rank_of[&(b as usize)]);
        }
    }
    let (_, sign) = sort_with_sign(&seq);
    if sign == 0 {
        return Rat::zero();
    }
    let he = g.half_edge_count();
    let edges = g.edges();
    let mut stars_even: Vec<Vec<usize>> = vec![Vec::new(); g.vertex_count];
    let mut stars_odd: Vec<Vec<usize>> = vec![Vec::new(); g.vertex_count];
    for h in 0..he {
        if g.he_parity[h] == 0 {
            stars_even[g.incidence[h] as usize].push(h);
        } else {
            stars_odd[g.incidence[h] as usize].push(h);
        }
    }
    let dims: Vec<usize> = (0..he)
        .map(|h| if g.he_parity[h] == 0 { data.even.dim } else { data.odd.dim })
        .collect();
    let mut total = Rat::zero();
    let mut state = vec![0usize; he];
    'odometer: loop {
        let mut w = Rat::one();
        for (a, b) in edges.iter() {
            let (a, b) = (*a as usize, *b as usize);
            let e = if g.he_parity[a] == 0 {
                data.even.inverse[(state[a], state[b])].clone()
            } else {
                data.odd.inverse[(state[a], state[b])].clone()
            };
            if e.is_zero() {
                w = Rat::zero();
                break;
            }
            w *= e;
        }
        if !w.is_zero() {
            for v in 0..g.vertex_count {
                let je: Vec<usize> = stars_even[v].iter().map(|&h| state[h]).collect();
                let jo: Vec<usize> = stars_odd[v].iter().map(|&h| state[h]).collect();
                let t = super_entry_value(vertex_terms[v], &je, &jo);
                if t.is_zero() {
                    w = Rat::zero();
                    break;
                }
                w *= t;
            }
        }
        total += w;
        let mut pos = 0;
        loop {
            if pos == he {
                break 'odometer;
            }
            state[pos] += 1;
            if state[pos] < dims[pos] {
                break;
            }
            state[pos] = 0;
            pos += 1;
        }
    }
    if sign < 0 {
        -total
    } else {
        total
    }
}

fn super_entry_value(t: &SuperTerm, even_idx: &[usize], odd_idx: &[usize]) -> Rat {
    let (se, _) = sort_with_sign(even_idx);
    let (so, sign_o) = sort_with_sign(odd_idx);
    if sign_o == 0 && !odd_idx.is_empty() {
        return Rat::zero();
    }
    for (je, jo, v) in t.entries.iter() {
        if *je == se && *jo == so {
            return if sign_o < 0 { -v.clone() } else { v.clone() };
        }
    }
    Rat::zero()
}

// ---------------------------------------------------------------------------
// differential-operator form
// ---------------------------------------------------------------------------

/// Evaluates `exp(1/2 Q^{-1}(d,d)) exp(p)|_{x=0}` by iterated symbolic
/// differentiation; agrees with `perturbative_expectation`.
pub fn exp_operator_form(
    q: &QuadraticData,
    p: &Perturbation,
    max_total_order: u32,
) -> Result<CouplingSeries, WickError> {
    let n = q.dim;
    let ctx = Context::new(
        (0..n)
            .map(|i| crate::graded::GradedVariable { name: format!("x{}", i), degree: 0 })
            .collect(),
    );
    let half = crate::num::rat(1, 2);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let c = q.inverse[(i, j)].clone() * half.clone();
            if !c.is_zero() {
                pairs.push((i as u32, j as u32, FormalSeries::constant(c)));
            }
        }
    }
    let symbols = p.symbols();
    let mut out = CouplingSeries::zero(&symbols, max_total_order);
    for counts in multi_counts(p.terms.len(), max_total_order) {
        if counts.iter().all(|&c| c == 0) {
            out.set(counts, Rat::one());
            continue;
        }
        let mut norm = Rat::one();
        let mut poly = GradedPolynomial::one(&ctx);
        for ((d, _, t), &v) in p.terms.iter().zip(counts.iter()) {
            norm *= factorial(v as u64);
            for _ in 0..v {
                norm *= factorial(*d as u64);
                let mut pd = GradedPolynomial::zero(&ctx);
                for (idx, c) in t.monomials() {
                    let mut mono = GradedPolynomial::constant(&ctx, c);
                    for &i in idx.iter() {
                        mono = mono.mul(&GradedPolynomial::var_id(&ctx, i as u32)).unwrap();
                    }
                    pd = pd.add(&mono).unwrap();
                }
                poly = poly.mul(&pd).unwrap();
            }
        }
        let contracted = apply_contraction_exp(&poly, &pairs, None);
        let c = contracted.coeff(&crate::graded::Mono::unit()).coeff(0) / norm;
        if !c.is_zero() {
            out.set(counts, c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, rat};

    fn std_1d() -> QuadraticData {
        QuadraticData::new(Mat::from_rows(vec![vec![int(1)]]), QuadKind::EvenSymmetric).unwrap()
    }

    #[test]
    fn wick_pair_moment() {
        let q = QuadraticData::new(
            Mat::from_rows(vec![vec![int(2), int(1)], vec![int(1), int(1)]]),
            QuadKind::EvenSymmetric,
        )
        .unwrap();
        assert_eq!(wick_moment(&q, &[0, 1]), q.inverse[(0, 1)]);
        assert_eq!(wick_moment(&q, &[0]), int(0));
    }

    #[test]
    fn gaussian_even_moments_1d() {
        let q = std_1d();
        for m in 0..=5u64 {
            let idx = vec![0usize; (2 * m) as usize];
            assert_eq!(wick_moment(&q, &idx), crate::num::odd_double_factorial(m));
        }
    }

    #[test]
    fn odd_quartic_moment_signs() {
        let a = Mat::from_rows(vec![
            vec![int(0), int(1), int(2), int(3)],
            vec![int(-1), int(0), int(4), int(5)],
            vec![int(-2), int(-4), int(0), int(6)],
            vec![int(-3), int(-5), int(-6), int(0)],
        ]);
        let q = QuadraticData::new(a, QuadKind::OddAntisymmetric).unwrap();
        let e = &q.inverse;
        let expect = e[(0, 1)].clone() * e[(2, 3)].clone()
            - e[(0, 2)].clone() * e[(1, 3)].clone()
            + e[(0, 3)].clone() * e[(1, 2)].clone();
        assert_eq!(wick_moment(&q, &[0, 1, 2, 3]), expect);
    }

    fn quartic_1d() -> Perturbation {
        let mut t = SparseTensor::new(4, 1, false);
        t.add(&[0, 0, 0, 0], int(1)).unwrap();
        Perturbation::new(1).with_term(4, "lambda", t)
    }

    #[test]
    fn quartic_series_known_coefficients() {
        let q = std_1d();
        let p = quartic_1d();
        for route in [Route::Oracle, Route::GraphSum] {
            let s = perturbative_expectation(&q, &p, 3, route).unwrap();
            for n in 0..=3u32 {
                let expect = crate::num::odd_double_factorial(2 * n as u64)
                    / factorial(n as u64)
                    / factorial(4).pow(n as i32);
                assert_eq!(s.coeff(&[n]), expect, "n = {} route {:?}", n, route);
            }
        }
    }

    #[test]
    fn quartic_first_orders_match_paper_split() {
        let q = std_1d();
        let p = quartic_1d();
        let s = perturbative_expectation(&q, &p, 2, Route::GraphSum).unwrap();
        assert_eq!(s.coeff(&[1]), rat(1, 8));
        assert_eq!(s.coeff(&[2]), rat(1, 128) + rat(1, 48) + rat(1, 16));
    }

    #[test]
    fn empty_perturbation_is_one() {
        let q = std_1d();
        let p = Perturbation::new(1);
        let s = perturbative_expectation(&q, &p, 3, Route::GraphSum).unwrap();
        assert_eq!(s.coeff(&[]), int(1));
    }

    #[test]
    fn connected_log_duality() {
        let q = std_1d();
        let p = quartic_1d();
        let full = perturbative_expectation(&q, &p, 3, Route::GraphSum).unwrap();
        let conn = connected_expectation(&q, &p, 3).unwrap();
        assert_eq!(conn.coeff(&[1]), rat(1, 8));
        assert_eq!(conn.coeff(&[2]), rat(1, 48) + rat(1, 16));
        assert_eq!(conn.exp(), full);
        assert_eq!(log_connected(&full).unwrap(), conn);
    }

    #[test]
    fn random_2d_cubic_routes_agree() {
        let q = QuadraticData::new(
            Mat::from_rows(vec![vec![int(2), int(1)], vec![int(1), int(3)]]),
            QuadKind::EvenSymmetric,
        )
        .unwrap();
        let mut t = SparseTensor::new(3, 2, false);
        t.add(&[0, 0, 0], rat(1, 2)).unwrap();
        t.add(&[0, 0, 1], rat(-1, 3)).unwrap();
        t.add(&[1, 1, 1], int(1)).unwrap();
        let p = Perturbation::new(2).with_term(3, "g", t);
        let full_graph = perturbative_expectation(&q, &p, 3, Route::GraphSum).unwrap();
        let full_oracle = perturbative_expectation(&q, &p, 3, Route::Oracle).unwrap();
        assert_eq!(full_graph, full_oracle);
        let conn = connected_expectation(&q, &p, 3).unwrap();
        assert_eq!(conn.exp(), full_graph);
    }

    #[test]
    fn loop_expansion_cubic_first_order() {
        let q = std_1d();
        let mut t = SparseTensor::new(3, 1, false);
        t.add(&[0, 0, 0], int(1)).unwrap();
        let p = Perturbation::new(1).with_term(3, "g", t);
        let le = loop_expansion(&q, &p, 1).unwrap();
        assert_eq!(le[0], int(1));
        // theta 1/12 + dumbbell 1/8
        assert_eq!(le[1], rat(1, 12) + rat(1, 8));
    }

    #[test]
    fn loop_expansion_rejects_low_degree() {
        let q = std_1d();
        let mut t = SparseTensor::new(2, 1, false);
        t.add(&[0, 0], int(1)).unwrap();
        let p = Perturbation::new(1).with_term(2, "m", t);
        assert_eq!(loop_expansion(&q, &p, 1).unwrap_err(), WickError::DegreeTooLow(2));
    }

    #[test]
    fn loop_expansion_matches_coupling_substitution() {
        // quartic: g_4 = hbar, so hbar^k coefficient = lambda^k coefficient
        let q = std_1d();
        let p = quartic_1d();
        let le = loop_expansion(&q, &p, 3).unwrap();
        let s = perturbative_expectation(&q, &p, 3, Route::GraphSum).unwrap();
        for k in 0..=3u32 {
            assert_eq!(le[k as usize], s.coeff(&[k]), "hbar order {}", k);
        }
    }

    #[test]
    fn observables_pair_no_perturbation() {
        let q = QuadraticData::new(
            Mat::from_rows(vec![vec![int(2), int(1)], vec![int(1), int(1)]]),
            QuadKind::EvenSymmetric,
        )
        .unwrap();
        let p = Perturbation::new(2);
        let obs = vec![Observable::monomial(2, &[0]), Observable::monomial(2, &[1])];
        let s = expectation_with_observables(&q, &p, &obs, 0).unwrap();
        assert_eq!(s.coeff(&[]), q.inverse[(0, 1)]);
        let s1 = expectation_with_observables(&q, &p, &[Observable::monomial(2, &[0])], 0).unwrap();
        assert_eq!(s1.coeff(&[]), int(0));
    }

    #[test]
    fn observables_match_oracle_quartic() {
        let q = std_1d();
        let p = quartic_1d();
        let obs = vec![Observable::monomial(1, &[0, 0])];
        let colored = expectation_with_observables(&q, &p, &obs, 1).unwrap();
        let oracle = observables_oracle(&q, &p, &obs, 1).unwrap();
        assert_eq!(colored.coeff(&[0]), oracle.coeff(&[0]));
        assert_eq!(colored.coeff(&[1]), oracle.coeff(&[1]));
        assert_eq!(colored.coeff(&[0]), int(1)); // <x^2> at zeroth order
    }

    #[test]
    fn pfaffian_block_diagonal() {
        let m = Mat::from_rows(vec![
            vec![int(0), int(2), int(0), int(0)],
            vec![int(-2), int(0), int(0), int(0)],
            vec![int(0), int(0), int(0), int(5)],
            vec![int(0), int(0), int(-5), int(0)],
        ]);
        assert_eq!(pfaffian(&m).unwrap(), int(10));
    }

    #[test]
    fn pfaffian_4x4_formula() {
        let m = Mat::from_rows(vec![
            vec![int(0), int(1), int(2), int(3)],
            vec![int(-1), int(0), int(4), int(5)],
            vec![int(-2), int(-4), int(0), int(6)],
            vec![int(-3), int(-5), int(-6), int(0)],
        ]);
        assert_eq!(pfaffian(&m).unwrap(), int(6 - 10 + 12));
        assert_eq!(pfaffian(&m).unwrap().pow(2), m.det());
    }

    #[test]
    fn pfaffian_odd_dim_zero() {
        let m = Mat::from_rows(vec![
            vec![int(0), int(1), int(2)],
            vec![int(-1), int(0), int(3)],
            vec![int(-2), int(-3), int(0)],
        ]);
        assert_eq!(pfaffian(&m).unwrap(), int(0));
    }

    #[test]
    fn berezin_1d() {
        let ctx = Context::from_pairs(&[("th", 1)]);
        let th = GradedPolynomial::var(&ctx, "th").unwrap();
        let p = GradedPolynomial::constant(&ctx, int(3)).add(&th.scale(&int(7))).unwrap();
        let out = berezin_integrate(&p, &["th"]).unwrap();
        assert_eq!(out.coeff(&crate::graded::Mono::unit()).coeff(0), int(7));
    }

    #[test]
    fn berezin_2d_picks_top() {
        let ctx = Context::from_pairs(&[("th1", 1), ("th2", 1)]);
        let t1 = GradedPolynomial::var(&ctx, "th1").unwrap();
        let t2 = GradedPolynomial::var(&ctx, "th2").unwrap();
        let p = GradedPolynomial::constant(&ctx, int(4))
            .add(&t1.scale(&int(5)))
            .unwrap()
            .add(&t2.scale(&int(6)))
            .unwrap()
            .add(&t1.mul(&t2).unwrap().scale(&int(7)))
            .unwrap();
        let out = berezin_integrate(&p, &["th1", "th2"]).unwrap();
        assert_eq!(out.coeff(&crate::graded::Mono::unit()).coeff(0), int(7));
        let out2 = berezin_integrate(&p, &["th2", "th1"]).unwrap();
        assert_eq!(out2.coeff(&crate::graded::Mono::unit()).coeff(0), int(-7));
    }

    #[test]
    fn berezin_stokes() {
        let ctx = Context::from_pairs(&[("th1", 1), ("th2", 1)]);
        let t1 = GradedPolynomial::var(&ctx, "th1").unwrap();
        let t2 = GradedPolynomial::var(&ctx, "th2").unwrap();
        let g = t1.mul(&t2).unwrap().add(&t1).unwrap();
        let dg = g.derive_left_named("th1").unwrap();
        let out = berezin_integrate(&dg, &["th1", "th2"]).unwrap();
        assert!(out.is_zero());
    }

    #[test]
    fn det_via_pairs_matches_det() {
        let id = Mat::identity(3);
        assert_eq!(det_via_pairs(&id), int(1));
        let d23 = Mat::from_rows(vec![vec![int(2), int(0)], vec![int(0), int(3)]]);
        assert_eq!(det_via_pairs(&d23), int(6));
        let m = Mat::from_rows(vec![
            vec![int(1), int(2), int(0), int(1)],
            vec![int(0), int(1), int(3), int(-1)],
            vec![rat(1, 2), int(0), int(1), int(0)],
            vec![int(1), int(1), int(0), int(2)],
        ]);
        assert_eq!(det_via_pairs(&m), m.det());
    }

    #[test]
    fn polygon_series_matches_det_expansion() {
        let b = Mat::from_rows(vec![
            vec![int(2), int(1), int(0)],
            vec![int(0), int(1), int(1)],
            vec![int(1), int(0), int(3)],
        ]);
        let p = Mat::from_rows(vec![
            vec![int(1), int(0), int(2)],
            vec![int(1), int(1), int(0)],
            vec![int(0), int(2), int(1)],
        ]);
        let series = polygon_series(&b, &p, 3).unwrap();
        let oracle = det_expansion_oracle(&b, &p, 3);
        for k in 0..=3u32 {
            assert_eq!(series.coeff(&[k]), oracle.coeff(&[k]), "alpha^{}", k);
        }
    }

    #[test]
    fn polygon_series_1x1() {
        let b = Mat::from_rows(vec![vec![int(5)]]);
        let p = Mat::from_rows(vec![vec![int(3)]]);
        let s = polygon_series(&b, &p, 1).unwrap();
        assert_eq!(s.coeff(&[0]), int(-5));
        assert_eq!(s.coeff(&[1]), int(3));
    }

    #[test]
    fn polygon_series_zero_perturbation() {
        let b = Mat::from_rows(vec![vec![int(2), int(1)], vec![int(0), int(3)]]);
        let p = Mat::zeros(2, 2);
        let s = polygon_series(&b, &p, 2).unwrap();
        assert_eq!(s.coeff(&[0]), b.scale(&int(-1)).det());
        assert_eq!(s.coeff(&[1]), int(0));
    }

    #[test]
    fn sdet_diagonal_blocks() {
        let j = SuperMatrix {
            a: Mat::from_rows(vec![vec![int(2), int(0)], vec![int(0), int(3)]]),
            b: Mat::zeros(2, 2),
            c: Mat::zeros(2, 2),
            d: Mat::from_rows(vec![vec![int(4), int(0)], vec![int(0), int(5)]]),
        };
        assert_eq!(sdet(&j).unwrap(), rat(6, 20));
    }

    #[test]
    fn sdet_first_order_is_supertrace() {
        // Sdet(id + eps j) = 1 + eps Str j + O(eps^2), checked at two eps
        let j = SuperMatrix {
            a: Mat::from_rows(vec![vec![int(2)]]),
            b: Mat::zeros(1, 1),
            c: Mat::zeros(1, 1),
            d: Mat::from_rows(vec![vec![int(5)]]),
        };
        let str_j = supertrace(&j);
        for eps in [rat(1, 100), rat(1, 1000)] {
            let je = SuperMatrix {
                a: Mat::identity(1).add(&j.a.scale(&eps)),
                b: j.b.scale(&eps),
                c: j.c.scale(&eps),
                d: Mat::identity(1).add(&j.d.scale(&eps)),
            };
            let sd = sdet(&je).unwrap();
            let err = sd - Rat::one() - eps.clone() * str_j.clone();
            // remainder must be O(eps^2): divide and check boundedness
            let ratio = err / (eps.clone() * eps.clone());
            assert!(ratio.denom() != &num_bigint::BigInt::from(0));
            assert!(
                num_traits::Signed::abs(&crate::num::rat_to_f64(&ratio)) < 100.0,
                "remainder not O(eps^2)"
            );
        }
    }

    #[test]
    fn sdet_multiplicative() {
        let j = SuperMatrix {
            a: Mat::from_rows(vec![vec![int(2)]]),
            b: Mat::zeros(1, 1),
            c: Mat::zeros(1, 1),
            d: Mat::from_rows(vec![vec![int(3)]]),
        };
        let k = SuperMatrix {
            a: Mat::from_rows(vec![vec![int(1)]]),
            b: Mat::zeros(1, 1),
            c: Mat::zeros(1, 1),
            d: Mat::from_rows(vec![vec![int(2)]]),
        };
        let jk = SuperMatrix {
            a: j.a.mul(&k.a).add(&j.b.mul(&k.c)),
            b: j.a.mul(&k.b).add(&j.b.mul(&k.d)),
            c: j.c.mul(&k.a).add(&j.d.mul(&k.c)),
            d: j.c.mul(&k.b).add(&j.d.mul(&k.d)),
        };
        assert_eq!(sdet(&jk).unwrap(), sdet(&j).unwrap() * sdet(&k).unwrap());
    }

    #[test]
    fn exp_operator_form_matches_graphs() {
        let q = std_1d();
        let p = quartic_1d();
        let op = exp_operator_form(&q, &p, 2).unwrap();
        let gs = perturbative_expectation(&q, &p, 2, Route::GraphSum).unwrap();
        assert_eq!(op, gs);
        assert_eq!(op.coeff(&[1]), rat(1, 8));
    }

    #[test]
    fn exp_operator_form_2d_cubic() {
        let q = QuadraticData::new(
            Mat::from_rows(vec![vec![int(1), int(0)], vec![int(0), int(2)]]),
            QuadKind::EvenSymmetric,
        )
        .unwrap();
        let mut t = SparseTensor::new(3, 2, false);
        t.add(&[0, 0, 1], int(1)).unwrap();
        t.add(&[1, 1, 1], rat(1, 5)).unwrap();
        let p = Perturbation::new(2).with_term(3, "g", t);
        let op = exp_operator_form(&q, &p, 2).unwrap();
        let oracle = perturbative_expectation(&q, &p, 2, Route::Oracle).unwrap();
        assert_eq!(op, oracle);
    }

    #[test]
    fn super_perturbative_matches_oracle_faux_qed() {
        // one photon mode; one (theta, thetabar) pair; vertex x*theta*thetabar
        let qe =
            QuadraticData::new(Mat::from_rows(vec![vec![int(1)]]), QuadKind::EvenSymmetric)
                .unwrap();
        let d11 = int(2);
        let qo = QuadraticData::new(
            Mat::from_rows(vec![vec![int(0), -d11.clone()], vec![d11.clone(), int(0)]]),
            QuadKind::OddAntisymmetric,
        )
        .unwrap();
        let term = SuperTerm {
            even_degree: 1,
            odd_degree: 2,
            symbol: "g".into(),
            entries: vec![(vec![0], vec![0, 1], int(1))],
        };
        let data = SuperQuadraticData { even: qe, odd: qo, terms: vec![term] };
        let graph = super_perturbative(&data, 2, Route::GraphSum).unwrap();
        let oracle = super_perturbative(&data, 2, Route::Oracle).unwrap();
        assert_eq!(graph, oracle);
    }

    #[test]
    fn super_perturbative_random_small() {
        let qe = QuadraticData::new(
            Mat::from_rows(vec![vec![int(2), int(1)], vec![int(1), int(2)]]),
            QuadKind::EvenSymmetric,
        )
        .unwrap();
        let qo = QuadraticData::new(
            Mat::from_rows(vec![vec![int(0), int(3)], vec![int(-3), int(0)]]),
            QuadKind::OddAntisymmetric,
        )
        .unwrap();
        let term = SuperTerm {
            even_degree: 2,
            odd_degree: 2,
            symbol: "g".into(),
            entries: vec![
                (vec![0, 1], vec![0, 1], rat(1, 2)),
                (vec![0, 0], vec![0, 1], rat(-1, 3)),
            ],
        };
        let data = SuperQuadraticData { even: qe, odd: qo, terms: vec![term] };
        let graph = super_perturbative(&data, 2, Route::GraphSum).unwrap();
        let oracle = super_perturbative(&data, 2, Route::Oracle).unwrap();
        assert_eq!(graph, oracle);
    }
}

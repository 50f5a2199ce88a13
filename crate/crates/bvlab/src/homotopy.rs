//! Abstract BF theory of a unimodular dgLa, induction-data validation,
//! diagrammatic homotopy transfer producing unimodular L-infinity
//! operations, relation checking, and the fiber-BV pushforward oracle.
//!
//! All diagram sums are evaluated through the superfield fixed point
//!   C = iota(A') + sum_m 1/m! (-K) lambda_m(C,...,C)
//! computed inside the graded polynomial algebra, so every Koszul sign is
//! produced by the algebra itself rather than by hand-rolled tensor rules.

use crate::graded::{
    qme_residual, Context, DarbouxPairing, FormalSeries, GradedPolynomial, GradedVariable, Mono,
};
use crate::linalg::Mat;
use crate::num::{factorial, rat, Rat};
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HomotopyError {
    #[error("induction data invalid: {0}")]
    BadInduction(String),
    #[error("restricted quadratic form on the Lagrangian is degenerate")]
    DegenerateRestriction,
    #[error("action is not of BF-infinity shape: {0}")]
    BadAnsatz(String),
    #[error("graded algebra error: {0}")]
    Graded(#[from] crate::graded::GradedError),
}

// ---------------------------------------------------------------------------
// dgLa data
// ---------------------------------------------------------------------------

/// A finite-dimensional dg Lie algebra given by structure constants over a
/// graded basis: `d^a_b = <e^a, d e_b>`, `f^a_{bc} = <e^a, [e_b, e_c]>`.
#[derive(Debug, Clone)]
pub struct DgLaData {
    /// (name, degree)
    pub basis: Vec<(String, i64)>,
    pub differential: BTreeMap<(usize, usize), Rat>,
    pub bracket: BTreeMap<(usize, usize, usize), Rat>,
}

impl DgLaData {
    pub fn new(basis: Vec<(String, i64)>) -> Self {
        DgLaData { basis, differential: BTreeMap::new(), bracket: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn degree(&self, i: usize) -> i64 {
        self.basis[i].1
    }

    fn parity(&self, i: usize) -> i64 {
        self.degree(i).rem_euclid(2)
    }

    pub fn set_d(&mut self, a: usize, b: usize, v: Rat) {
        if v.is_zero() {
            self.differential.remove(&(a, b));
        } else {
            self.differential.insert((a, b), v);
        }
    }

    /// Sets `f^a_{bc}` and the graded-antisymmetric mirror entry.
    pub fn set_bracket(&mut self, a: usize, b: usize, c: usize, v: Rat) {
        let mirror = if (self.parity(b) * self.parity(c)) % 2 == 0 {
            -v.clone()
        } else {
            v.clone()
        };
        if v.is_zero() {
            self.bracket.remove(&(a, b, c));
        } else {
            self.bracket.insert((a, b, c), v);
        }
        if b != c {
            if mirror.is_zero() {
                self.bracket.remove(&(a, c, b));
            } else {
                self.bracket.insert((a, c, b), mirror);
            }
        }
    }

    pub fn d(&self, a: usize, b: usize) -> Rat {
        self.differential.get(&(a, b)).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn f(&self, a: usize, b: usize, c: usize) -> Rat {
        self.bracket.get(&(a, b, c)).cloned().unwrap_or_else(Rat::zero)
    }

    /// Applies a degree-preserving basis change `e_i -> sum_j T_{ji} e_j`
    /// (T invertible), producing an isomorphic dgLa with messier constants.
    pub fn change_basis(&self, t: &Mat) -> DgLaData {
        let n = self.dim();
        assert_eq!((t.rows, t.cols), (n, n));
        for i in 0..n {
            for j in 0..n {
                if !t[(i, j)].is_zero() {
                    assert_eq!(self.degree(i), self.degree(j), "basis change must preserve degree");
                }
            }
        }
        let tinv = t.inverse().expect("basis change must be invertible");
        let mut out = DgLaData::new(self.basis.clone());
        for a in 0..n {
            for b in 0..n {
                let mut acc = Rat::zero();
                for x in 0..n {
                    for y in 0..n {
                        let v = tinv[(a, x)].clone() * self.d(x, y) * t[(y, b)].clone();
                        acc += v;
                    }
                }
                if !acc.is_zero() {
                    out.differential.insert((a, b), acc);
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut acc = Rat::zero();
                    for ((x, y, z), v) in self.bracket.iter() {
                        let w = tinv[(a, *x)].clone()
                            * v.clone()
                            * t[(*y, b)].clone()
                            * t[(*z, c)].clone();
                        acc += w;
                    }
                    if !acc.is_zero() {
                        out.bracket.insert((a, b, c), acc);
                    }
                }
            }
        }
        out
    }
}

/// Report of structural checks, listing failures with witnesses.
#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Verifies d^2 = 0, graded Leibniz, graded Jacobi and unimodularity
/// `Str [x,-] = 0`; failures are reported with witnesses.
pub fn check_dgla(v: &DgLaData) -> CheckReport {
    let n = v.dim();
    let mut report = CheckReport::default();
    for ((a, b), val) in v.differential.iter() {
        if !val.is_zero() && v.degree(*a) != v.degree(*b) + 1 {
            report
                .failures
                .push(format!("d^{}_{} nonzero but degrees are not offset by 1", a, b));
        }
    }
    for ((a, b, c), val) in v.bracket.iter() {
        if !val.is_zero() && v.degree(*a) != v.degree(*b) + v.degree(*c) {
            report.failures.push(format!("f^{}_{}{} violates degree additivity", a, b, c));
        }
    }
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let lhs = v.f(a, b, c);
                let sign = if (v.parity(b) * v.parity(c)) % 2 == 0 {
                    -Rat::one()
                } else {
                    Rat::one()
                };
                let rhs = sign * v.f(a, c, b);
                if lhs != rhs {
                    report
                        .failures
                        .push(format!("bracket not graded-antisymmetric at ({},{},{})", a, b, c));
                }
            }
        }
    }
    for a in 0..n {
        for b in 0..n {
            let mut acc = Rat::zero();
            for m in 0..n {
                acc += v.d(a, m) * v.d(m, b);
            }
            if !acc.is_zero() {
                report.failures.push(format!("(d^2)^{}_{} = {}", a, b, acc));
            }
        }
    }
    // Leibniz: d[e_b, e_c] = [d e_b, e_c] + (-1)^{|b|} [e_b, d e_c]
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut lhs = Rat::zero();
                for m in 0..n {
                    lhs += v.d(a, m) * v.f(m, b, c);
                }
                let mut rhs = Rat::zero();
                for m in 0..n {
                    rhs += v.f(a, m, c) * v.d(m, b);
                    let sgn = if v.parity(b) % 2 == 0 { Rat::one() } else { -Rat::one() };
                    rhs += sgn * v.f(a, b, m) * v.d(m, c);
                }
                if lhs != rhs {
                    report.failures.push(format!("Leibniz fails at ({},{},{})", a, b, c));
                }
            }
        }
    }
    // Jacobi: [e_b,[e_c,e_e]] = [[e_b,e_c],e_e] + (-1)^{|b||c|}[e_c,[e_b,e_e]]
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for e in 0..n {
                    let mut lhs = Rat::zero();
                    for m in 0..n {
                        lhs += v.f(a, b, m) * v.f(m, c, e);
                    }
                    let mut rhs = Rat::zero();
                    for m in 0..n {
                        rhs += v.f(a, m, e) * v.f(m, b, c);
                        let sgn = if (v.parity(b) * v.parity(c)) % 2 == 0 {
                            Rat::one()
                        } else {
                            -Rat::one()
                        };
                        rhs += sgn * v.f(a, c, m) * v.f(m, b, e);
                    }
                    if lhs != rhs {
                        report
                            .failures
                            .push(format!("Jacobi fails at ({},{},{},{})", a, b, c, e));
                    }
                }
            }
        }
    }
    // unimodularity: Str ad(e_b) = sum_a (-1)^{|a|} f^a_{ba} = 0
    for b in 0..n {
        let mut acc = Rat::zero();
        for a in 0..n {
            let sgn = if v.parity(a) % 2 == 0 { Rat::one() } else { -Rat::one() };
            acc += sgn * v.f(a, b, a);
        }
        if !acc.is_zero() {
            report
                .failures
                .push(format!("unimodularity fails: Str ad({}) = {}", v.basis[b].0, acc));
        }
    }
    report
}

// ---------------------------------------------------------------------------
// BF fields and actions
// ---------------------------------------------------------------------------

/// The BF field context over a graded basis: variables `A_name` of ghost
/// number `1 - |a|` and `B_name` of ghost number `|a| - 2`, with the
/// Darboux pairing `(A^a, B_a)` weighted by `(-1)^{|a|}`.
#[derive(Debug, Clone)]
pub struct BfFields {
    pub ctx: Context,
    pub a_vars: Vec<u32>,
    pub b_vars: Vec<u32>,
    pub pairing: DarbouxPairing,
    pub basis: Vec<(String, i64)>,
}

pub fn bf_fields(basis: &[(String, i64)]) -> BfFields {
    let mut vars: Vec<GradedVariable> = Vec::new();
    // B variables first so that left B-derivatives see no odd jumps
    for (name, deg) in basis.iter() {
        vars.push(GradedVariable { name: format!("B_{}", name), degree: deg - 2 });
    }
    for (name, deg) in basis.iter() {
        vars.push(GradedVariable { name: format!("A_{}", name), degree: 1 - deg });
    }
    let ctx = Context::new(vars);
    let n = basis.len();
    let b_vars: Vec<u32> = (0..n as u32).collect();
    let a_vars: Vec<u32> = (n as u32..2 * n as u32).collect();
    let pairs: Vec<(String, String, i32)> = basis
        .iter()
        .map(|(name, deg)| {
            let sign = if deg.rem_euclid(2) == 0 { 1 } else { -1 };
            (format!("A_{}", name), format!("B_{}", name), sign)
        })
        .collect();
    let pair_refs: Vec<(&str, &str, i32)> =
        pairs.iter().map(|(a, b, s)| (a.as_str(), b.as_str(), *s)).collect();
    let pairing = DarbouxPairing::new_signed(&ctx, &pair_refs).unwrap();
    BfFields { ctx, a_vars, b_vars, pairing, basis: basis.to_vec() }
}

/// A BF-infinity action: ghost degree 0, classical part linear in B, the
/// h-part free of B.
#[derive(Debug, Clone)]
pub struct EffectiveAction {
    pub fields: BfFields,
    pub poly: GradedPolynomial,
}

impl EffectiveAction {
    pub fn validate(&self) -> Result<(), HomotopyError> {
        for (m, s) in self.poly.terms() {
            let bdeg: u32 = m
                .0
                .iter()
                .filter(|(v, _)| self.fields.b_vars.contains(v))
                .map(|(_, e)| e)
                .sum();
            let classical = !s.coeff(0).is_zero();
            let quantum = s.coeffs().any(|(k, c)| *k >= 1 && !c.is_zero());
            if classical && bdeg != 1 {
                return Err(HomotopyError::BadAnsatz(format!(
                    "classical term with B-degree {}",
                    bdeg
                )));
            }
            if quantum && bdeg != 0 {
                return Err(HomotopyError::BadAnsatz("h-part depends on B".into()));
            }
        }
        if let Some(d) = self.poly.degree() {
            if d != 0 {
                return Err(HomotopyError::BadAnsatz(format!("ghost degree {}", d)));
            }
        }
        Ok(())
    }

    pub fn qme_residual(&self, h_order: u32) -> Result<GradedPolynomial, HomotopyError> {
        Ok(qme_residual(&self.poly, &self.fields.pairing, h_order)?)
    }

    /// Shifted operation tensor `lambda^a_{b1..bn}`: the read-off
    /// normalized so the classical action is
    /// `sum_n 1/n! lambda^a_{b..} B_a A^{b1}..A^{bn}` (left derivatives,
    /// b1 applied first).
    pub fn shifted_l(&self, a: usize, bs: &[usize]) -> Rat {
        let mut p = self.poly.h_coefficient(0).derive_left(self.fields.b_vars[a]);
        for &b in bs {
            p = p.derive_left(self.fields.a_vars[b]);
        }
        let zero: Vec<u32> = (0..self.fields.ctx.len() as u32).collect();
        p.set_zero(&zero).coeff(&Mono::unit()).coeff(0)
    }

    /// Quantum operation tensor (coefficient of h) with the same read-off.
    pub fn shifted_q(&self, bs: &[usize]) -> Rat {
        let mut p = self.poly.h_coefficient(1);
        for &b in bs {
            p = p.derive_left(self.fields.a_vars[b]);
        }
        let zero: Vec<u32> = (0..self.fields.ctx.len() as u32).collect();
        p.set_zero(&zero).coeff(&Mono::unit()).coeff(0)
    }

    /// Unshifted operation via the recorded decalage sign rule
    /// `l^a_{b..} = (-1)^{sum_{i<j} (|b_i|+1)|b_j|} lambda^a_{b..}`.
    pub fn unshifted_l(&self, a: usize, bs: &[usize]) -> Rat {
        let mut sign = 0i64;
        for i in 0..bs.len() {
            for j in i + 1..bs.len() {
                sign += (self.fields.basis[bs[i]].1 + 1) * self.fields.basis[bs[j]].1;
            }
        }
        let v = self.shifted_l(a, bs);
        if sign.rem_euclid(2) == 1 {
            -v
        } else {
            v
        }
    }
}

/// The abstract BF action `S = <B, dA + 1/2 [A,A]>` with the paper's
/// explicit sign on the cubic term.
pub fn build_bf_action(v: &DgLaData) -> EffectiveAction {
    let fields = bf_fields(&v.basis);
    let ctx = &fields.ctx;
    let mut poly = GradedPolynomial::zero(ctx);
    for ((a, b), val) in v.differential.iter() {
        let term = GradedPolynomial::var_id(ctx, fields.b_vars[*a])
            .mul(&GradedPolynomial::var_id(ctx, fields.a_vars[*b]))
            .unwrap()
            .scale(val);
        poly = poly.add(&term).unwrap();
    }
    let half = rat(1, 2);
    for ((a, b, c), val) in v.bracket.iter() {
        // sign (-1)^{(|b|+1)|c|}
        let s = (v.degree(*b) + 1) * v.degree(*c);
        let mut coeff = val.clone() * half.clone();
        if s.rem_euclid(2) == 1 {
            coeff = -coeff;
        }
        let term = GradedPolynomial::var_id(ctx, fields.b_vars[*a])
            .mul(&GradedPolynomial::var_id(ctx, fields.a_vars[*b]))
            .unwrap()
            .mul(&GradedPolynomial::var_id(ctx, fields.a_vars[*c]))
            .unwrap()
            .scale(&coeff);
        poly = poly.add(&term).unwrap();
    }
    EffectiveAction { fields, poly }
}

// ---------------------------------------------------------------------------
// induction data
// ---------------------------------------------------------------------------

/// Induction (HPT) data from V to V': inclusion, projection and chain
/// homotopy as exact matrices over the graded bases.
#[derive(Debug, Clone)]
pub struct InductionData {
    /// iota: V' -> V, dim V x dim V'
    pub iota: Mat,
    /// p: V -> V', dim V' x dim V
    pub p: Mat,
    /// K: V -> V (degree -1), dim V x dim V
    pub k: Mat,
}

fn matrix_of_d(v: &DgLaData) -> Mat {
    let n = v.dim();
    let mut m = Mat::zeros(n, n);
    for ((a, b), val) in v.differential.iter() {
        m[(*a, *b)] = val.clone();
    }
    m
}

/// Verifies all six identities of the induction-data definition exactly.
pub fn validate_induction(v: &DgLaData, vp: &[(String, i64)], data: &InductionData) -> CheckReport {
    let mut report = CheckReport::default();
    let n = v.dim();
    let np = vp.len();
    let d = matrix_of_d(v);
    let dp = data.p.mul(&d).mul(&data.iota);
    for a in 0..np {
        for b in 0..np {
            if !dp[(a, b)].is_zero() && vp[a].1 != vp[b].1 + 1 {
                report.failures.push(format!("induced d' violates degrees at ({},{})", a, b));
            }
        }
    }
    if !data.p.mul(&data.iota).sub(&Mat::identity(np)).is_zero() {
        report.failures.push("p iota != id".into());
    }
    if !d.mul(&data.iota).sub(&data.iota.mul(&dp)).is_zero() {
        report.failures.push("iota is not a chain map".into());
    }
    if !data.p.mul(&d).sub(&dp.mul(&data.p)).is_zero() {
        report.failures.push("p is not a chain map".into());
    }
    let homotopy = d.mul(&data.k).add(&data.k.mul(&d));
    let target = Mat::identity(n).sub(&data.iota.mul(&data.p));
    if !homotopy.sub(&target).is_zero() {
        report.failures.push("dK + Kd != id - iota p".into());
    }
    if !data.k.mul(&data.k).is_zero() {
        report.failures.push("K^2 != 0".into());
    }
    if !data.k.mul(&data.iota).is_zero() {
        report.failures.push("K iota != 0".into());
    }
    if !data.p.mul(&data.k).is_zero() {
        report.failures.push("p K != 0".into());
    }
    report
}

/// Bases of the abstract Hodge decomposition
/// `V = iota(V') + d(V'') + K(V'')` as column matrices; errors unless the
/// concatenation is a basis of V.
pub fn hodge_split(v: &DgLaData, data: &InductionData) -> Result<(Mat, Mat, Mat), HomotopyError> {
    let n = v.dim();
    let d = matrix_of_d(v);
    let ip = data.iota.mul(&data.p);
    let dk = d.mul(&data.k);
    let kd = data.k.mul(&d);
    let b1 = column_space_basis(&ip);
    let b2 = column_space_basis(&dk);
    let b3 = column_space_basis(&kd);
    let total_cols = b1.cols + b2.cols + b3.cols;
    if total_cols != n {
        return Err(HomotopyError::BadInduction(format!(
            "Hodge pieces have ranks {}+{}+{} != {}",
            b1.cols, b2.cols, b3.cols, n
        )));
    }
    let mut concat = Mat::zeros(n, n);
    for (offset, b) in [(0, &b1), (b1.cols, &b2), (b1.cols + b2.cols, &b3)] {
        for c in 0..b.cols {
            for r in 0..n {
                concat[(r, offset + c)] = b[(r, c)].clone();
            }
        }
    }
    if concat.det().is_zero() {
        return Err(HomotopyError::BadInduction("Hodge pieces do not span".into()));
    }
    Ok((b1, b2, b3))
}

// ---------------------------------------------------------------------------
// homotopy transfer
// ---------------------------------------------------------------------------

/// A transferred structure: the effective BF-infinity action on V', whose
/// coefficient tensors are the unimodular L-infinity operations.
#[derive(Debug, Clone)]
pub struct ULInfinityStructure {
    pub action: EffectiveAction,
    pub max_order: usize,
}

/// Diagrammatic homotopy transfer of a BF-infinity action along induction
/// data: rooted trees with `-K` on internal edges, one-loop wheels as
/// exact supertraces over V, and direct images of input quantum vertices.
pub fn transfer(
    input: &EffectiveAction,
    v_basis: &[(String, i64)],
    vp_basis: &[(String, i64)],
    data: &InductionData,
    max_leaves: usize,
) -> Result<ULInfinityStructure, HomotopyError> {
    input.validate()?;
    let n = v_basis.len();
    let np = vp_basis.len();
    let mut vars: Vec<GradedVariable> = Vec::new();
    for (name, deg) in v_basis.iter() {
        vars.push(GradedVariable { name: format!("B_{}", name), degree: deg - 2 });
    }
    for (name, deg) in vp_basis.iter() {
        vars.push(GradedVariable { name: format!("Bp_{}", name), degree: deg - 2 });
    }
    for (name, deg) in v_basis.iter() {
        vars.push(GradedVariable { name: format!("A_{}", name), degree: 1 - deg });
    }
    for (name, deg) in vp_basis.iter() {
        vars.push(GradedVariable { name: format!("Ap_{}", name), degree: 1 - deg });
    }
    for (name, deg) in v_basis.iter() {
        vars.push(GradedVariable { name: format!("Z_{}", name), degree: 1 - deg });
    }
    let ctx = Context::new(vars);
    let b_ids: Vec<u32> = (0..n as u32).collect();
    let bp_ids: Vec<u32> = (n as u32..(n + np) as u32).collect();
    let a_ids: Vec<u32> = ((n + np) as u32..(2 * n + np) as u32).collect();
    let ap_ids: Vec<u32> = ((2 * n + np) as u32..(2 * n + 2 * np) as u32).collect();
    let z_ids: Vec<u32> = ((2 * n + 2 * np) as u32..(3 * n + 2 * np) as u32).collect();

    let s_big = reindex(&input.poly, &ctx)?;
    let s_classical = s_big.h_coefficient(0);
    let s_quantum = s_big.h_coefficient(1); // B-free by the ansatz
    let mut s_quad = GradedPolynomial::zero(&ctx);
    let mut s_int = GradedPolynomial::zero(&ctx);
    for (m, s) in s_classical.terms() {
        let adeg: u32 = m.0.iter().filter(|(v, _)| a_ids.contains(v)).map(|(_, e)| e).sum();
        let target = if adeg <= 1 { &mut s_quad } else { &mut s_int };
        target.add_term(m.clone(), s.clone());
    }
    // M^a = d/dB_a S_int (B variables sit leftmost in the context)
    let m_ops: Vec<GradedPolynomial> = b_ids.iter().map(|&b| s_int.derive_left(b)).collect();

    let iota_a: Vec<GradedPolynomial> = (0..n)
        .map(|b| {
            let mut acc = GradedPolynomial::zero(&ctx);
            for ap in 0..np {
                if !data.iota[(b, ap)].is_zero() {
                    acc = acc
                        .add(
                            &GradedPolynomial::var_id(&ctx, ap_ids[ap])
                                .scale(&data.iota[(b, ap)]),
                        )
                        .unwrap();
                }
            }
            acc
        })
        .collect();

    let apply_neg_k = |vvec: &[GradedPolynomial]| -> Vec<GradedPolynomial> {
        (0..n)
            .map(|a| {
                let mut acc = GradedPolynomial::zero(&ctx);
                for b in 0..n {
                    if !data.k[(a, b)].is_zero() {
                        acc = acc.add(&vvec[b].scale(&-data.k[(a, b)].clone())).unwrap();
                    }
                }
                acc
            })
            .collect()
    };

    // fixed point C = iota A' + (-K) M(C), truncated at A'-degree max_leaves
    let eval_m = |c: &[GradedPolynomial]| -> Vec<GradedPolynomial> {
        let map: BTreeMap<u32, GradedPolynomial> =
            a_ids.iter().cloned().zip(c.iter().cloned()).collect();
        m_ops
            .iter()
            .map(|op| op.substitute(&map).truncate_degree_in(&ap_ids, max_leaves as u32))
            .collect()
    };
    let mut c = iota_a.clone();
    for _ in 0..=max_leaves {
        let m_of_c = eval_m(&c);
        let correction = apply_neg_k(&m_of_c);
        let mut next = Vec::with_capacity(n);
        for b in 0..n {
            next.push(
                iota_a[b]
                    .add(&correction[b])
                    .unwrap()
                    .truncate_degree_in(&ap_ids, max_leaves as u32),
            );
        }
        if next == c {
            break;
        }
        c = next;
    }

    // tree part: substitute A -> C, B -> p* B'
    let mut subst: BTreeMap<u32, GradedPolynomial> = BTreeMap::new();
    for (i, &aid) in a_ids.iter().enumerate() {
        subst.insert(aid, c[i].clone());
    }
    for (a, &bid) in b_ids.iter().enumerate() {
        let mut acc = GradedPolynomial::zero(&ctx);
        for ap in 0..np {
            if !data.p[(ap, a)].is_zero() {
                acc = acc
                    .add(&GradedPolynomial::var_id(&ctx, bp_ids[ap]).scale(&data.p[(ap, a)]))
                    .unwrap();
            }
        }
        subst.insert(bid, acc);
    }
    let tree_part = s_quad
        .add(&s_int)
        .unwrap()
        .substitute(&subst)
        .truncate_degree_in(&ap_ids, max_leaves as u32);

    // input quantum vertices: substitute A -> C directly
    let mut q_subst: BTreeMap<u32, GradedPolynomial> = BTreeMap::new();
    for (i, &aid) in a_ids.iter().enumerate() {
        q_subst.insert(aid, c[i].clone());
    }
    let q_direct = s_quantum
        .substitute(&q_subst)
        .truncate_degree_in(&ap_ids, max_leaves as u32)
        .mul_h(1);

    // one-loop wheels: N_0 = Z, N_{k+1} = (-K)[dB S_int](A -> C + N_k),
    // Z-linear part; supertrace with sign (-1)^{deg_V}
    let z_vec: Vec<GradedPolynomial> =
        (0..n).map(|b| GradedPolynomial::var_id(&ctx, z_ids[b])).collect();
    let mut wheels = GradedPolynomial::zero(&ctx);
    let mut nk = z_vec.clone();
    for cycle_len in 1..=max_leaves {
        let arg: Vec<GradedPolynomial> = (0..n).map(|b| c[b].add(&nk[b]).unwrap()).collect();
        let map: BTreeMap<u32, GradedPolynomial> =
            a_ids.iter().cloned().zip(arg.into_iter()).collect();
        let stepped: Vec<GradedPolynomial> = m_ops
            .iter()
            .map(|op| {
                let full = op.substitute(&map);
                let lin = full
                    .truncate_degree_in(&z_ids, 1)
                    .sub(&full.truncate_degree_in(&z_ids, 0))
                    .unwrap();
                lin.truncate_degree_in(&ap_ids, max_leaves as u32)
            })
            .collect();
        nk = apply_neg_k(&stepped);
        let mut tr = GradedPolynomial::zero(&ctx);
        for a in 0..n {
            let coeff = nk[a].derive_left(z_ids[a]).set_zero(&z_ids);
            let signed = if v_basis[a].1.rem_euclid(2) == 1 { coeff.neg() } else { coeff };
            tr = tr.add(&signed).unwrap();
        }
        let weight = Rat::one() / Rat::from_integer((cycle_len as i64).into());
        wheels = wheels.add(&tr.scale(&weight)).unwrap();
    }
    let wheel_part = wheels.truncate_degree_in(&ap_ids, max_leaves as u32).mul_h(1);

    let total = tree_part.add(&q_direct).unwrap().add(&wheel_part).unwrap();
    let fields = bf_fields(vp_basis);
    let result = reindex(&total.truncate_h(2), &fields.ctx)?;
    let action = EffectiveAction { fields, poly: result };
    action.validate()?;
    Ok(ULInfinityStructure { action, max_order: max_leaves })
}

/// Re-expresses a polynomial in another context by variable names; the
/// monomial reordering signs are produced by the algebra itself.
pub fn reindex(p: &GradedPolynomial, target: &Context) -> Result<GradedPolynomial, HomotopyError> {
    let mut out = GradedPolynomial::zero(target);
    for (m, s) in p.terms() {
        let mut acc = GradedPolynomial::constant(target, Rat::one()).scale_series(s);
        for &(v, e) in m.0.iter() {
            let name = &p.ctx.var(v as usize).name;
            let tid = target.lookup(name).ok_or_else(|| {
                HomotopyError::BadAnsatz(format!("variable {} missing in target context", name))
            })?;
            assert_eq!(
                target.var(tid).degree,
                p.ctx.var(v as usize).degree,
                "degree mismatch reindexing {}",
                name
            );
            for _ in 0..e {
                acc = acc.mul(&GradedPolynomial::var_id(target, tid as u32)).unwrap();
            }
        }
        out = out.add(&acc).unwrap();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// uL-infinity relation checking
// ---------------------------------------------------------------------------

/// Verifies the quadratic uL-infinity relation families for n <= n_max by
/// exact expansion over the basis: the B'-linear classical part of the QME
/// residual at A'-degree n is the homotopy Jacobi relation, the h-part at
/// A'-degree n the homotopy unimodularity relation.
pub fn check_ulinfty(ul: &ULInfinityStructure, n_max: usize) -> CheckReport {
    let mut report = CheckReport::default();
    let residual = match ul.action.qme_residual(2) {
        Ok(r) => r,
        Err(e) => {
            report.failures.push(format!("QME residual failed: {}", e));
            return report;
        }
    };
    let ap_ids = &ul.action.fields.a_vars;
    let classical = residual.h_coefficient(0);
    let quantum = residual.h_coefficient(1);
    for n in 1..=n_max {
        let class_n = classical
            .truncate_degree_in(ap_ids, n as u32)
            .sub(&classical.truncate_degree_in(ap_ids, n as u32 - 1))
            .unwrap();
        if !class_n.is_zero() {
            report.failures.push(format!(
                "homotopy Jacobi relation fails at n = {}: residual {}",
                n,
                class_n.to_text()
            ));
        }
        let quant_n = quantum
            .truncate_degree_in(ap_ids, n as u32)
            .sub(&quantum.truncate_degree_in(ap_ids, n as u32 - 1))
            .unwrap();
        if !quant_n.is_zero() {
            report.failures.push(format!(
                "homotopy unimodularity relation fails at n = {}: residual {}",
                n,
                quant_n.to_text()
            ));
        }
    }
    report
}

// ---------------------------------------------------------------------------
// fiber BV pushforward oracle
// ---------------------------------------------------------------------------

/// Evaluates the fiber BV integral perturbatively by direct Wick
/// contraction over the Lagrangian `L = im(K)[1] + im(K*)[-2]`, without
/// graph organization. Agrees with `transfer` order by order.
pub fn pushforward_oracle(
    input: &EffectiveAction,
    v_basis: &[(String, i64)],
    vp_basis: &[(String, i64)],
    data: &InductionData,
    coupling_order: usize,
) -> Result<EffectiveAction, HomotopyError> {
    input.validate()?;
    let n = v_basis.len();
    let np = vp_basis.len();
    let k = &data.k;
    let u_basis = column_space_basis(k);
    let w_basis = column_space_basis(&k.transpose());
    let nf = u_basis.cols;
    if w_basis.cols != nf {
        return Err(HomotopyError::DegenerateRestriction);
    }
    let u_degrees: Vec<i64> = (0..nf)
        .map(|c| {
            let r = (0..n).find(|&r| !u_basis[(r, c)].is_zero()).unwrap();
            1 - v_basis[r].1
        })
        .collect();
    let w_degrees: Vec<i64> = (0..nf)
        .map(|c| {
            let r = (0..n).find(|&r| !w_basis[(r, c)].is_zero()).unwrap();
            v_basis[r].1 - 2
        })
        .collect();
    for c in 0..nf {
        for r in 0..n {
            if !u_basis[(r, c)].is_zero() {
                assert_eq!(1 - v_basis[r].1, u_degrees[c], "im K basis not homogeneous");
            }
            if !w_basis[(r, c)].is_zero() {
                assert_eq!(v_basis[r].1 - 2, w_degrees[c], "im K* basis not homogeneous");
            }
        }
    }
    let mut vars: Vec<GradedVariable> = Vec::new();
    for (name, deg) in vp_basis.iter() {
        vars.push(GradedVariable { name: format!("Bp_{}", name), degree: deg - 2 });
    }
    for (j, d) in w_degrees.iter().enumerate() {
        vars.push(GradedVariable { name: format!("w_{}", j), degree: *d });
    }
    for (name, deg) in vp_basis.iter() {
        vars.push(GradedVariable { name: format!("Ap_{}", name), degree: 1 - deg });
    }
    for (i, d) in u_degrees.iter().enumerate() {
        vars.push(GradedVariable { name: format!("u_{}", i), degree: *d });
    }
    let ctx = Context::new(vars);
    let bp_ids: Vec<u32> = (0..np as u32).collect();
    let w_ids: Vec<u32> = (np as u32..(np + nf) as u32).collect();
    let ap_ids: Vec<u32> = ((np + nf) as u32..(np + nf + np) as u32).collect();
    let u_ids: Vec<u32> = ((np + nf + np) as u32..(np + nf + np + nf) as u32).collect();
    let mut sub_map: BTreeMap<String, GradedPolynomial> = BTreeMap::new();
    for b in 0..n {
        let mut acc = GradedPolynomial::zero(&ctx);
        for ap in 0..np {
            if !data.iota[(b, ap)].is_zero() {
                acc = acc
                    .add(&GradedPolynomial::var_id(&ctx, ap_ids[ap]).scale(&data.iota[(b, ap)]))
                    .unwrap();
            }
        }
        for i in 0..nf {
            if !u_basis[(b, i)].is_zero() {
                acc = acc
                    .add(&GradedPolynomial::var_id(&ctx, u_ids[i]).scale(&u_basis[(b, i)]))
                    .unwrap();
            }
        }
        sub_map.insert(format!("A_{}", v_basis[b].0), acc);
    }
    for a in 0..n {
        let mut acc = GradedPolynomial::zero(&ctx);
        for ap in 0..np {
            if !data.p[(ap, a)].is_zero() {
                acc = acc
                    .add(&GradedPolynomial::var_id(&ctx, bp_ids[ap]).scale(&data.p[(ap, a)]))
                    .unwrap();
            }
        }
        for j in 0..nf {
            if !w_basis[(a, j)].is_zero() {
                acc = acc
                    .add(&GradedPolynomial::var_id(&ctx, w_ids[j]).scale(&w_basis[(a, j)]))
                    .unwrap();
            }
        }
        sub_map.insert(format!("B_{}", v_basis[a].0), acc);
    }
    let mut s_sub = GradedPolynomial::zero(&ctx);
    for (m, s) in input.poly.terms() {
        let mut acc = GradedPolynomial::constant(&ctx, Rat::one()).scale_series(s);
        for &(v, e) in m.0.iter() {
            let name = &input.poly.ctx.var(v as usize).name;
            let img = sub_map
                .get(name)
                .cloned()
                .unwrap_or_else(|| panic!("missing substitution for {}", name));
            for _ in 0..e {
                acc = acc.mul(&img).unwrap();
            }
            if acc.is_zero() {
                break;
            }
        }
        s_sub = s_sub.add(&acc).unwrap();
    }
    let ext_ids: Vec<u32> = bp_ids.iter().chain(ap_ids.iter()).cloned().collect();
    let fiber_ids: Vec<u32> = w_ids.iter().chain(u_ids.iter()).cloned().collect();
    let mut s_quad_ext = GradedPolynomial::zero(&ctx);
    let mut s_fiber_quad = GradedPolynomial::zero(&ctx);
    let mut s_rest = GradedPolynomial::zero(&ctx);
    for (m, s) in s_sub.h_coefficient(0).terms() {
        let fiber_deg: u32 =
            m.0.iter().filter(|(v, _)| fiber_ids.contains(v)).map(|(_, e)| e).sum();
        let total_deg = m.total_exp();
        if total_deg == 2 && fiber_deg == 0 {
            s_quad_ext.add_term(m.clone(), s.clone());
        } else if total_deg == 2 && fiber_deg == 2 {
            s_fiber_quad.add_term(m.clone(), s.clone());
        } else if total_deg == 2 {
            return Err(HomotopyError::BadInduction(
                "quadratic cross term survives the Lagrangian restriction".into(),
            ));
        } else {
            s_rest.add_term(m.clone(), s.clone());
        }
    }
    let s_rest = s_rest.add(&s_sub.h_coefficient(1).mul_h(1)).unwrap();
    // fiber quadratic form: S_fq = sum G_{ji} w_j u_i (w before u in the
    // canonical order since w ids are smaller)
    let mut g = Mat::zeros(nf, nf);
    for (m, s) in s_fiber_quad.terms() {
        let mut wj = None;
        let mut ui = None;
        for &(v, _) in m.0.iter() {
            if let Some(pos) = w_ids.iter().position(|&x| x == v) {
                wj = Some(pos);
            }
            if let Some(pos) = u_ids.iter().position(|&x| x == v) {
                ui = Some(pos);
            }
        }
        match (wj, ui) {
            (Some(j), Some(i)) => g[(j, i)] = s.coeff(0),
            _ => {
                return Err(HomotopyError::BadInduction(
                    "fiber quadratic form is not of w-u type".into(),
                ))
            }
        }
    }
    let ginv = g.inverse().ok_or(HomotopyError::DegenerateRestriction)?;
    // contraction pairs: <u_i w_j> = -h (G^{-1})_{ij} (-1)^{p(u_i)}
    let mut pairs: Vec<(u32, u32, FormalSeries)> = Vec::new();
    for i in 0..nf {
        for j in 0..nf {
            if ginv[(i, j)].is_zero() {
                continue;
            }
            let mut coeff = -ginv[(i, j)].clone();
            if u_degrees[i].rem_euclid(2) == 1 {
                coeff = -coeff;
            }
            pairs.push((u_ids[i], w_ids[j], FormalSeries::monomial(1, coeff)));
        }
    }
    // <exp(S_rest/h)> with Laurent bookkeeping via a common h offset
    let kmax = coupling_order + 3;
    let offset = kmax as u32;
    let h_keep = offset + 2 + coupling_order as u32;
    let mut numer = GradedPolynomial::zero(&ctx); // h^{offset} <e^{S_rest/h}>
    let mut power = GradedPolynomial::one(&ctx);
    for kk in 0..=kmax {
        let contracted = crate::graded::apply_contraction_exp(&power, &pairs, Some(h_keep))
            .set_zero(&fiber_ids)
            .truncate_degree_in(&ext_ids, coupling_order as u32);
        let shift_up = offset - kk as u32;
        let term = contracted.mul_h(shift_up).scale(&(Rat::one() / factorial(kk as u64)));
        numer = numer.add(&term).unwrap();
        if kk < kmax {
            power = power
                .mul(&s_rest)
                .unwrap()
                .truncate_degree_in(&ext_ids, coupling_order as u32)
                .truncate_h(h_keep);
        }
    }
    // h * log(numer h^{-offset})
    let x = numer.sub(&GradedPolynomial::one(&ctx).mul_h(offset)).unwrap();
    let max_m = coupling_order + 2;
    let common = offset * max_m as u32;
    let mut log_acc = GradedPolynomial::zero(&ctx);
    let mut xpow = GradedPolynomial::one(&ctx);
    for m in 1..=max_m {
        xpow = xpow
            .mul(&x)
            .unwrap()
            .truncate_degree_in(&ext_ids, coupling_order as u32)
            .truncate_h(offset * m as u32 + 2 + coupling_order as u32);
        let sign = if m % 2 == 1 { Rat::one() } else { -Rat::one() };
        let lift = common - offset * m as u32;
        log_acc = log_acc
            .add(&xpow.mul_h(lift).scale(&(sign / Rat::from_integer((m as i64).into()))))
            .unwrap();
    }
    let mut s_prime = s_quad_ext;
    for (m, s) in log_acc.terms() {
        if m.0.is_empty() {
            continue; // vacuum normalization terms
        }
        for (kpow, cval) in s.coeffs() {
            let actual = *kpow as i64 - common as i64 + 1;
            if (0..=1).contains(&actual) && !cval.is_zero() {
                let mut t = GradedPolynomial::zero(&ctx);
                t.add_term(m.clone(), FormalSeries::monomial(actual as u32, cval.clone()));
                s_prime = s_prime.add(&t).unwrap();
            }
        }
    }
    let fields = bf_fields(vp_basis);
    let result = reindex(&s_prime, &fields.ctx)?;
    Ok(EffectiveAction { fields, poly: result })
}

/// Basis of the column space as degree-homogeneous columns (row reduction
/// of the transpose).
fn column_space_basis(m: &Mat) -> Mat {
    let mut rr = m.transpose();
    let (rank, _) = rr.row_reduce();
    let mut out = Mat::zeros(m.rows, rank);
    for r in 0..rank {
        for c in 0..m.rows {
            out[(c, r)] = rr[(r, c)].clone();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// fixtures (shared by the CLI, the acceptance suite and unit tests)
// ---------------------------------------------------------------------------

pub mod fixtures {
    use super::*;

    /// so(3): degree 0, f^a_{bc} = epsilon_{abc}, d = 0.
    pub fn so3() -> DgLaData {
        let mut v = DgLaData::new(vec![("x".into(), 0), ("y".into(), 0), ("z".into(), 0)]);
        v.set_bracket(0, 1, 2, Rat::one());
        v.set_bracket(1, 2, 0, Rat::one());
        v.set_bracket(2, 0, 1, Rat::one());
        v
    }

    /// The 2-dimensional non-unimodular algebra [e, h] = e.
    pub fn non_unimodular_eh() -> DgLaData {
        let mut v = DgLaData::new(vec![("e".into(), 0), ("h".into(), 0)]);
        v.set_bracket(0, 0, 1, Rat::one());
        v
    }

    /// Two-term acyclic complex R --id--> R with zero bracket (degrees 0, 1).
    pub fn acyclic_two_term() -> DgLaData {
        let mut v = DgLaData::new(vec![("u".into(), 0), ("du".into(), 1)]);
        v.set_d(1, 0, Rat::one());
        v
    }

    /// Four-dimensional unimodular dgLa with nontrivial homotopy and a
    /// nonvanishing transferred l_3: basis y, z (degree 1), x, w (degree
    /// 2); d z = x; [y,y] = x, [y,z] = x + w.
    pub fn four_term_toy() -> DgLaData {
        let mut v = DgLaData::new(vec![
            ("y".into(), 1),
            ("z".into(), 1),
            ("x".into(), 2),
            ("w".into(), 2),
        ]);
        v.set_d(2, 1, Rat::one());
        // odd-odd brackets are symmetric; insert both orderings directly
        v.bracket.insert((2, 0, 0), Rat::one()); // [y,y] = x
        v.bracket.insert((2, 0, 1), Rat::one()); // [y,z] = x + w
        v.bracket.insert((3, 0, 1), Rat::one());
        v.bracket.insert((2, 1, 0), Rat::one());
        v.bracket.insert((3, 1, 0), Rat::one());
        v
    }

    /// Canonical induction data for `four_term_toy` onto V' = span{y, w}.
    pub fn four_term_induction() -> (Vec<(String, i64)>, InductionData) {
        let vp = vec![("y".to_string(), 1), ("w".to_string(), 2)];
        let iota = Mat::from_rows(vec![
            vec![Rat::one(), Rat::zero()],
            vec![Rat::zero(), Rat::zero()],
            vec![Rat::zero(), Rat::zero()],
            vec![Rat::zero(), Rat::one()],
        ]);
        let p = Mat::from_rows(vec![
            vec![Rat::one(), Rat::zero(), Rat::zero(), Rat::zero()],
            vec![Rat::zero(), Rat::zero(), Rat::zero(), Rat::one()],
        ]);
        let mut k = Mat::zeros(4, 4);
        k[(1, 2)] = Rat::one(); // K x = z
        (vp, InductionData { iota, p, k })
    }

    /// so(3) tensored with the three-term cdga (w0, alpha, d alpha):
    /// 9-dimensional unimodular dgLa whose retract so(3) (x) w0 is a dg
    /// Lie subalgebra, so all trees with internal edges vanish.
    pub fn so3_three_term() -> DgLaData {
        let g = so3();
        let mut basis = Vec::new();
        for (w, wdeg) in [("w0", 0i64), ("al", 1), ("be", 2)] {
            for (gn, _) in g.basis.iter() {
                basis.push((format!("{}_{}", gn, w), wdeg));
            }
        }
        let mut v = DgLaData::new(basis);
        let idx = |w: usize, gi: usize| w * 3 + gi;
        for gi in 0..3 {
            v.set_d(idx(2, gi), idx(1, gi), Rat::one()); // d alpha = beta
        }
        for ((a, b, c), val) in g.bracket.clone() {
            for w in 0..3 {
                // [g (x) w0, g' (x) wk] = [g,g'] (x) wk, both orders; w0 is
                // the unit and is even, so no Koszul signs appear
                v.bracket.insert((idx(w, a), idx(0, b), idx(w, c)), val.clone());
                if w != 0 {
                    v.bracket.insert((idx(w, a), idx(w, b), idx(0, c)), val.clone());
                }
            }
        }
        v
    }

    /// Induction data for `so3_three_term` onto so(3) (x) w0.
    pub fn so3_three_term_induction() -> (Vec<(String, i64)>, InductionData) {
        let vp: Vec<(String, i64)> = vec![("x".into(), 0), ("y".into(), 0), ("z".into(), 0)];
        let mut iota = Mat::zeros(9, 3);
        let mut p = Mat::zeros(3, 9);
        for gi in 0..3 {
            iota[(gi, gi)] = Rat::one();
            p[(gi, gi)] = Rat::one();
        }
        let mut k = Mat::zeros(9, 9);
        for gi in 0..3 {
            k[(3 + gi, 6 + gi)] = Rat::one(); // K(beta) = alpha
        }
        (vp, InductionData { iota, p, k })
    }

    /// A 6-dimensional unimodular dgLa: so(3) plus an acyclic two-term
    /// complex with zero bracket, conjugated by a fixed dense
    /// degree-preserving basis change.
    pub fn six_dim_scrambled() -> DgLaData {
        let mut v = DgLaData::new(vec![
            ("a".to_string(), 0),
            ("b".to_string(), 0),
            ("c".to_string(), 0),
            ("u".to_string(), 0),
            ("v".to_string(), 1),
            ("k".to_string(), -1),
        ]);
        // so(3) on indices 0,1,2
        v.set_bracket(0, 1, 2, Rat::one());
        v.set_bracket(1, 2, 0, Rat::one());
        v.set_bracket(2, 0, 1, Rat::one());
        // acyclic pair: d u = v
        v.set_d(4, 3, Rat::one());
        // scramble the degree-0 block (indices 0..=3)
        let mut t = Mat::identity(6);
        let block = [[1, 1, 0, 2], [0, 1, 1, 0], [1, 0, 1, 0], [0, 2, 0, 1]];
        for i in 0..4 {
            for j in 0..4 {
                t[(i, j)] = crate::num::int(block[i][j]);
            }
        }
        v.change_basis(&t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::int;

    #[test]
    fn so3_passes_checks() {
        let report = check_dgla(&fixtures::so3());
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn non_unimodular_detected() {
        let report = check_dgla(&fixtures::non_unimodular_eh());
        assert!(!report.passed());
        assert!(report.failures.iter().any(|f| f.contains("unimodularity")));
        assert!(report.failures.iter().all(|f| f.contains("unimodularity")));
    }

    #[test]
    fn two_term_passes() {
        let report = check_dgla(&fixtures::acyclic_two_term());
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn toy_fixtures_are_unimodular_dglas() {
        for v in [
            fixtures::four_term_toy(),
            fixtures::so3_three_term(),
            fixtures::six_dim_scrambled(),
        ] {
            let report = check_dgla(&v);
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    #[test]
    fn bf_action_qme_holds_iff_dgla() {
        let s = build_bf_action(&fixtures::so3());
        assert!(s.qme_residual(2).unwrap().is_zero());
        let s4 = build_bf_action(&fixtures::four_term_toy());
        assert!(
            s4.qme_residual(2).unwrap().is_zero(),
            "{}",
            s4.qme_residual(2).unwrap().to_text()
        );
        let s9 = build_bf_action(&fixtures::so3_three_term());
        assert!(s9.qme_residual(2).unwrap().is_zero());
        let s6 = build_bf_action(&fixtures::six_dim_scrambled());
        assert!(s6.qme_residual(2).unwrap().is_zero());
        // non-unimodular: residual = h * (nonzero linear term in ghosts)
        let bad = build_bf_action(&fixtures::non_unimodular_eh());
        let res = bad.qme_residual(2).unwrap();
        assert!(!res.is_zero());
        assert!(res.h_coefficient(0).is_zero(), "classical part should vanish");
        let h1 = res.h_coefficient(1);
        assert!(!h1.is_zero());
        assert!(h1.terms().all(|(m, _)| m.total_exp() == 1));
    }

    #[test]
    fn abelian_zero_action() {
        let v = DgLaData::new(vec![("t".into(), 0)]);
        let s = build_bf_action(&v);
        assert!(s.poly.is_zero());
    }

    #[test]
    fn induction_validation() {
        let v = fixtures::four_term_toy();
        let (vp, data) = fixtures::four_term_induction();
        let report = validate_induction(&v, &vp, &data);
        assert!(report.passed(), "{:?}", report.failures);
        let idmat = Mat::identity(4);
        let iddata = InductionData { iota: idmat.clone(), p: idmat, k: Mat::zeros(4, 4) };
        let report = validate_induction(&v, &v.basis, &iddata);
        assert!(report.passed(), "{:?}", report.failures);
        let mut bad = fixtures::four_term_induction().1;
        bad.k[(1, 2)] = int(2);
        let report = validate_induction(&v, &vp, &bad);
        assert!(!report.passed());
    }

    #[test]
    fn hodge_split_shapes() {
        let v = fixtures::four_term_toy();
        let (_, data) = fixtures::four_term_induction();
        let (b1, b2, b3) = hodge_split(&v, &data).unwrap();
        assert_eq!((b1.cols, b2.cols, b3.cols), (2, 1, 1));
        let idmat = Mat::identity(4);
        let iddata = InductionData { iota: idmat.clone(), p: idmat, k: Mat::zeros(4, 4) };
        let (c1, c2, c3) = hodge_split(&v, &iddata).unwrap();
        assert_eq!((c1.cols, c2.cols, c3.cols), (4, 0, 0));
    }

    #[test]
    fn transfer_identity_data_restricts() {
        let v = fixtures::so3();
        let s = build_bf_action(&v);
        let idmat = Mat::identity(3);
        let data = InductionData { iota: idmat.clone(), p: idmat, k: Mat::zeros(3, 3) };
        let out = transfer(&s, &v.basis, &v.basis, &data, 4).unwrap();
        let expect = reindex(&s.poly, &out.action.fields.ctx).unwrap();
        assert_eq!(out.action.poly, expect);
    }

    #[test]
    fn transfer_subalgebra_degeneracy() {
        // so3 (x) w0 is a dg Lie subalgebra: the effective action is the
        // plain two-diagram abstract BF action of so(3)
        let v = fixtures::so3_three_term();
        let s = build_bf_action(&v);
        let (vp, data) = fixtures::so3_three_term_induction();
        let out = transfer(&s, &v.basis, &vp, &data, 4).unwrap();
        let expect = build_bf_action(&fixtures::so3());
        let expect_poly = reindex(&expect.poly, &out.action.fields.ctx).unwrap();
        assert_eq!(out.action.poly, expect_poly);
    }

    #[test]
    fn transfer_four_term_l3_matches_hpt_formula() {
        let v = fixtures::four_term_toy();
        let s = build_bf_action(&v);
        let (vp, data) = fixtures::four_term_induction();
        let out = transfer(&s, &v.basis, &vp, &data, 4).unwrap();
        // l2(y,y) = p[y,y] = p(x) = 0
        assert_eq!(out.action.shifted_l(0, &[0, 0]), int(0));
        assert_eq!(out.action.shifted_l(1, &[0, 0]), int(0));
        // l3(y,y,y) from p[iota y, -K[iota y, iota y]] + (2 more
        // distributions): p[y, -K x] = -p[y, z] = -(x + w)|_{V'} = -w,
        // three times
        let l3 = out.action.unshifted_l(1, &[0, 0, 0]);
        assert_eq!(l3, int(-3), "transferred l3(y,y,y), w-component");
        assert!(out.action.qme_residual(2).unwrap().is_zero());
    }

    #[test]
    fn transferred_structures_pass_ulinfty() {
        let v = fixtures::four_term_toy();
        let s = build_bf_action(&v);
        let (vp, data) = fixtures::four_term_induction();
        let out = transfer(&s, &v.basis, &vp, &data, 5).unwrap();
        let report = check_ulinfty(&out, 4);
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn dgla_viewed_as_ulinfty_passes() {
        let s = build_bf_action(&fixtures::so3());
        let ul = ULInfinityStructure { action: s, max_order: 4 };
        let report = check_ulinfty(&ul, 4);
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn corrupt_tensor_fails_targeted_relation() {
        let v = fixtures::four_term_toy();
        let s = build_bf_action(&v);
        let (vp, data) = fixtures::four_term_induction();
        let mut out = transfer(&s, &v.basis, &vp, &data, 4).unwrap();
        let ctx = &out.action.fields.ctx;
        let bump = GradedPolynomial::var_id(ctx, out.action.fields.b_vars[1])
            .mul(&GradedPolynomial::var_id(ctx, out.action.fields.a_vars[0]))
            .unwrap()
            .mul(&GradedPolynomial::var_id(ctx, out.action.fields.a_vars[0]))
            .unwrap()
            .mul(&GradedPolynomial::var_id(ctx, out.action.fields.a_vars[0]))
            .unwrap();
        out.action.poly = out.action.poly.add(&bump).unwrap();
        let report = check_ulinfty(&out, 4);
        assert!(!report.passed());
    }

    #[test]
    fn decalage_assert_n2_bracket() {
        for v in [fixtures::so3(), fixtures::four_term_toy()] {
            let s = build_bf_action(&v);
            for a in 0..v.dim() {
                for b in 0..v.dim() {
                    for c in 0..v.dim() {
                        assert_eq!(
                            s.unshifted_l(a, &[b, c]),
                            v.f(a, b, c),
                            "f^{}_{}{} mismatch",
                            a,
                            b,
                            c
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_matches_transfer_four_term() {
        let v = fixtures::four_term_toy();
        let s = build_bf_action(&v);
        let (vp, data) = fixtures::four_term_induction();
        let t = transfer(&s, &v.basis, &vp, &data, 5).unwrap();
        let o = pushforward_oracle(&s, &v.basis, &vp, &data, 5).unwrap();
        let t_poly = reindex(&t.action.poly, &o.fields.ctx).unwrap();
        assert_eq!(o.poly, t_poly);
    }

    #[test]
    fn oracle_matches_transfer_so3_three_term() {
        let v = fixtures::so3_three_term();
        let s = build_bf_action(&v);
        let (vp, data) = fixtures::so3_three_term_induction();
        let t = transfer(&s, &v.basis, &vp, &data, 4).unwrap();
        let o = pushforward_oracle(&s, &v.basis, &vp, &data, 4).unwrap();
        let t_poly = reindex(&t.action.poly, &o.fields.ctx).unwrap();
        assert_eq!(o.poly, t_poly);
    }

    #[test]
    fn oracle_quadratic_acyclic_gives_zero_on_point() {
        let v = fixtures::acyclic_two_term();
        let s = build_bf_action(&v);
        let vp: Vec<(String, i64)> = Vec::new();
        let iota = Mat::zeros(2, 0);
        let p = Mat::zeros(0, 2);
        let mut k = Mat::zeros(2, 2);
        k[(0, 1)] = Rat::one();
        let data = InductionData { iota, p, k };
        let o = pushforward_oracle(&s, &v.basis, &vp, &data, 3).unwrap();
        assert!(o.poly.is_zero(), "{}", o.poly.to_text());
    }
}

//! Stationary-phase and Laplace asymptotic series with diagrammatic
//! corrections, numeric oscillatory/Laplace quadrature oracles, Stirling
//! coefficients, Borel summation via Padé continuation, and the
//! finite-dimensional Faddeev-Popov comparison demo.

use crate::feyngraph::{connected_groupoid_volume, for_each_matching, Graph, ValencyProfile};
use crate::linalg::Mat;
use crate::num::{bernoulli, factorial, rat, rat_to_f64, Rat};
use crate::wick::SparseTensor;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AsymptoticsError {
    #[error("Hessian is degenerate")]
    DegenerateHessian,
    #[error("Hessian is not positive definite (required for the Laplace method)")]
    NotPositiveDefinite,
    #[error("loop order {0} beyond the graph budget {1}")]
    LoopBudget(u32, u32),
    #[error("Borel continuation not found within the Pade budget")]
    NoContinuation,
    #[error("quadrature failed to converge")]
    QuadratureDiverged,
    #[error("stirling calibration failed: c_1 != 1/12 (loop-count convention broken)")]
    StirlingCalibration,
}

// ---------------------------------------------------------------------------
// complex helper
// ---------------------------------------------------------------------------

/// Minimal complex arithmetic for the numeric oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C {
    pub re: f64,
    pub im: f64,
}

impl C {
    pub const ZERO: C = C { re: 0.0, im: 0.0 };
    pub fn new(re: f64, im: f64) -> C {
        C { re, im }
    }
    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
    pub fn exp_i(phase: f64) -> C {
        C { re: phase.cos(), im: phase.sin() }
    }
    pub fn scale(self, s: f64) -> C {
        C { re: self.re * s, im: self.im * s }
    }
}

impl std::ops::Add for C {
    type Output = C;
    fn add(self, o: C) -> C {
        C::new(self.re + o.re, self.im + o.im)
    }
}
impl std::ops::Sub for C {
    type Output = C;
    fn sub(self, o: C) -> C {
        C::new(self.re - o.re, self.im - o.im)
    }
}
impl std::ops::Mul for C {
    type Output = C;
    fn mul(self, o: C) -> C {
        C::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

// ---------------------------------------------------------------------------
// adaptive Gauss-Legendre quadrature
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration.
fn gl_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

thread_local! {
    static GL8: (Vec<f64>, Vec<f64>) = gl_nodes(8);
    static GL16: (Vec<f64>, Vec<f64>) = gl_nodes(16);
}

fn gl_apply<F: Fn(f64) -> C>(f: &F, a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> C {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = C::ZERO;
    for (x, w) in nodes.iter().zip(weights) {
        acc = acc + f(mid + half * x).scale(w * half);
    }
    acc
}

/// Adaptive complex-valued quadrature: GL16 against GL8 with bisection.
pub fn integrate<F: Fn(f64) -> C>(f: &F, a: f64, b: f64, tol: f64) -> Result<C, AsymptoticsError> {
    fn rec<F: Fn(f64) -> C>(
        f: &F,
        a: f64,
        b: f64,
        tol: f64,
        depth: u32,
        n8: &(Vec<f64>, Vec<f64>),
        n16: &(Vec<f64>, Vec<f64>),
    ) -> Result<C, AsymptoticsError> {
        let coarse = gl_apply(f, a, b, &n8.0, &n8.1);
        let fine = gl_apply(f, a, b, &n16.0, &n16.1);
        if (fine - coarse).abs() <= tol || (b - a) < 1e-13 {
            return Ok(fine);
        }
        if depth > 44 {
            return Err(AsymptoticsError::QuadratureDiverged);
        }
        let mid = 0.5 * (a + b);
        let left = rec(f, a, mid, tol * 0.5, depth + 1, n8, n16)?;
        let right = rec(f, mid, b, tol * 0.5, depth + 1, n8, n16)?;
        Ok(left + right)
    }
    GL8.with(|n8| GL16.with(|n16| rec(f, a, b, tol, 0, n8, n16)))
}

/// Real-valued convenience wrapper.
pub fn integrate_real<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, AsymptoticsError> {
    Ok(integrate(&|x| C::new(f(x), 0.0), a, b, tol)?.re)
}

// ---------------------------------------------------------------------------
// numeric oracles
// ---------------------------------------------------------------------------

/// Oscillatory oracle: `lim_{eps->0} int g(x) exp(i k f(x) - eps x^2) dx`
/// by adaptive quadrature on a decreasing eps-sequence with Neville
/// extrapolation to eps = 0.
pub fn numeric_oscillatory_oracle<F, G>(
    f: F,
    g: G,
    k: f64,
    eps0: f64,
) -> Result<C, AsymptoticsError>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let eps_seq = [eps0, eps0 * 0.5, eps0 * 0.25, eps0 * 0.125];
    let evals: Vec<(f64, C)> = eps_seq
        .iter()
        .map(|&eps| {
            let cutoff = (45.0 / eps).sqrt();
            let integrand = |x: f64| {
                let damp = (-eps * x * x).exp();
                C::exp_i(k * f(x)).scale(g(x) * damp)
            };
            integrate(&integrand, -cutoff, cutoff, 1e-10).map(|v| (eps, v))
        })
        .collect::<Result<_, _>>()?;
    // Neville extrapolation to eps = 0, componentwise
    let extrapolate = |pick: &dyn Fn(&C) -> f64| -> f64 {
        let xs: Vec<f64> = evals.iter().map(|(e, _)| *e).collect();
        let mut y: Vec<f64> = evals.iter().map(|(_, v)| pick(v)).collect();
        let n = y.len();
        for level in 1..n {
            for i in 0..n - level {
                y[i] = (xs[i + level] * y[i] - xs[i] * y[i + 1]) / (xs[i + level] - xs[i]);
            }
        }
        y[0]
    };
    Ok(C::new(extrapolate(&|c| c.re), extrapolate(&|c| c.im)))
}

/// Laplace oracle: `int g(x) exp(-f(x)/hbar) dx` over a window where the
/// integrand is non-negligible.
pub fn numeric_laplace_oracle<F, G>(f: F, g: G, hbar: f64) -> Result<f64, AsymptoticsError>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let fmin = (-4000..=4000)
        .map(|i| f(i as f64 * 0.01))
        .fold(f64::INFINITY, f64::min);
    let negligible = |x: f64| (-(f(x) - fmin) / hbar).exp() * g(x).abs() < 1e-18;
    let mut lo = -1.0;
    while !negligible(lo) && lo > -60.0 {
        lo -= 0.5;
    }
    let mut hi = 1.0;
    while !negligible(hi) && hi < 60.0 {
        hi += 0.5;
    }
    let integrand = |x: f64| (-(f(x) - fmin) / hbar).exp() * g(x);
    let scaled = integrate_real(&integrand, lo, hi, 1e-13)?;
    Ok(scaled * (-fmin / hbar).exp())
}

// ---------------------------------------------------------------------------
// critical point data and asymptotic expansions
// ---------------------------------------------------------------------------

/// Exact jet data of (f, rho) at a nondegenerate critical point.
#[derive(Debug, Clone)]
pub struct CriticalPointData {
    pub dim: usize,
    /// f(x_0), exact
    pub critical_value: Rat,
    pub hessian: Mat,
    /// (degree >= 3, symmetric tensor of d-th partials of f)
    pub higher: Vec<(usize, SparseTensor)>,
    /// (degree >= 0, symmetric tensor of d-th partials of rho); degree 0 is
    /// rho(x_0)
    pub density_jet: Vec<(usize, SparseTensor)>,
}

impl CriticalPointData {
    pub fn constant_density(mut self, rho0: Rat) -> Self {
        let mut t = SparseTensor::new(0, self.dim, false);
        t.add(&[], rho0).unwrap();
        self.density_jet = vec![(0, t)];
        self
    }
}

/// Asymptotic regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `int mu e^{i f / hbar}`
    StationaryPhase,
    /// `int mu e^{-f / hbar}`
    Laplace,
}

/// Prefactor data plus correction coefficients by power of hbar. The
/// corrections are exact complex rationals (re, im); for the Laplace
/// regime imaginary parts vanish.
#[derive(Debug, Clone)]
pub struct AsymptoticExpansion {
    pub regime: Regime,
    pub dim: usize,
    pub critical_value: Rat,
    pub det_hessian: Rat,
    /// signature of the Hessian (phase e^{i pi sig/4} for stationary phase)
    pub signature: i64,
    /// coefficient of hbar^k, k = 0.., including the density factor
    pub corrections: Vec<(Rat, Rat)>,
}

impl AsymptoticExpansion {
    /// Numeric evaluation of the truncated expansion at a given hbar.
    pub fn evaluate(&self, hbar: f64) -> C {
        let n = self.dim as f64;
        let det = rat_to_f64(&self.det_hessian);
        let f0 = rat_to_f64(&self.critical_value);
        let base = (2.0 * std::f64::consts::PI * hbar).powf(n / 2.0) / det.abs().sqrt();
        let mut series = C::ZERO;
        let mut hk = 1.0;
        for (re, im) in self.corrections.iter() {
            series = series + C::new(rat_to_f64(re), rat_to_f64(im)).scale(hk);
            hk *= hbar;
        }
        match self.regime {
            Regime::Laplace => series.scale((-f0 / hbar).exp() * base),
            Regime::StationaryPhase => {
                let phase = C::exp_i(f0 / hbar)
                    * C::exp_i(std::f64::consts::FRAC_PI_4 * self.signature as f64);
                (phase * series).scale(base)
            }
        }
    }
}

/// Signature of a symmetric rational matrix by congruence diagonalization.
pub fn signature(m: &Mat) -> i64 {
    let n = m.rows;
    let mut a = m.clone();
    let mut sig = 0i64;
    for k in 0..n {
        if a[(k, k)].is_zero() {
            let mut fixed = false;
            for j in k + 1..n {
                if !a[(k, j)].is_zero() {
                    for c in 0..n {
                        let v = a[(j, c)].clone();
                        a[(k, c)] += v;
                    }
                    for r in 0..n {
                        let v = a[(r, j)].clone();
                        a[(r, k)] += v;
                    }
                    fixed = true;
                    break;
                }
            }
            if !fixed {
                continue;
            }
        }
        let pivot = a[(k, k)].clone();
        sig += if pivot.is_positive() { 1 } else { -1 };
        for r in k + 1..n {
            if !a[(r, k)].is_zero() {
                let fac = a[(r, k)].clone() / pivot.clone();
                for c in 0..n {
                    let v = a[(k, c)].clone() * fac.clone();
                    a[(r, c)] -= v;
                }
            }
        }
        for c in k + 1..n {
            if !a[(k, c)].is_zero() {
                let fac = a[(k, c)].clone() / pivot.clone();
                for r in 0..n {
                    let v = a[(r, k)].clone() * fac.clone();
                    a[(r, c)] -= v;
                }
            }
        }
    }
    sig
}

/// Sum of Phi/|Aut| over colored classes with the given neutral vertex
/// content plus one marked (density) vertex.
fn colored_profile_sum(
    eta: &Mat,
    neutral: &[(usize, &SparseTensor, u32)],
    marked: (usize, &SparseTensor),
) -> Rat {
    let mut incidence: Vec<u32> = Vec::new();
    let mut colors: Vec<u32> = Vec::new();
    let mut tensors: Vec<&SparseTensor> = Vec::new();
    let mut vid = 0u32;
    let mut group = Rat::one();
    for (d, t, c) in neutral.iter() {
        group *= factorial(*c as u64);
        for _ in 0..*c {
            group *= factorial(*d as u64);
            for _ in 0..*d {
                incidence.push(vid);
            }
            colors.push(0);
            tensors.push(*t);
            vid += 1;
        }
    }
    let (md, mt) = marked;
    group *= factorial(md as u64);
    for _ in 0..md {
        incidence.push(vid);
    }
    colors.push(1);
    tensors.push(mt);
    vid += 1;
    let he = incidence.len();
    if he % 2 != 0 {
        return Rat::zero();
    }
    let mut classes: BTreeMap<String, (Graph, u64)> = BTreeMap::new();
    if he == 0 {
        let g = Graph::new(vid as usize, incidence, Vec::new()).with_colors(colors);
        classes.insert(g.canonical_key(), (g, 1));
    } else {
        for_each_matching(he, |matching| {
            let g = Graph::new(vid as usize, incidence.clone(), matching.to_vec())
                .with_colors(colors.clone());
            let key = g.canonical_key();
            classes.entry(key).or_insert_with(|| (g, 0)).1 += 1;
        });
    }
    let mut acc = Rat::zero();
    for (_, (g, count)) in classes {
        let aut = group.clone() / Rat::from_integer(count.into());
        let phi = crate::wick::state_sum(&g, &tensors, eta, false);
        acc += phi / aut;
    }
    acc
}

fn correction_series(
    cp: &CriticalPointData,
    loop_order: u32,
    regime: Regime,
) -> Result<Vec<(Rat, Rat)>, AsymptoticsError> {
    if loop_order > 6 {
        return Err(AsymptoticsError::LoopBudget(loop_order, 6));
    }
    let eta = cp
        .hessian
        .inverse()
        .ok_or(AsymptoticsError::DegenerateHessian)?;
    let mut out = vec![(Rat::zero(), Rat::zero()); loop_order as usize + 1];
    let degrees: Vec<usize> = cp.higher.iter().map(|(d, _)| *d).collect();
    let laplace_tensors: Vec<SparseTensor> = cp
        .higher
        .iter()
        .map(|(d, t)| {
            let mut neg = SparseTensor::new(*d, cp.dim, false);
            for (idx, v) in t.entries() {
                neg.add(idx, -v.clone()).unwrap();
            }
            neg
        })
        .collect();
    let mut counts = vec![0u32; degrees.len()];
    let budget = 2 * loop_order as i64;
    enumerate_counts(0, &mut counts, &degrees, budget, &mut |counts| {
        for (md, mt) in cp.density_jet.iter() {
            let he: usize =
                degrees.iter().zip(counts).map(|(d, &c)| d * c as usize).sum::<usize>() + md;
            if he % 2 != 0 {
                continue;
            }
            let e = (he / 2) as i64;
            let vn: i64 = counts.iter().map(|&c| c as i64).sum();
            // hbar power 1 - chi, the marked vertex included in chi
            let hpow = 1 - ((vn + 1) - e);
            if hpow < 0 || hpow > loop_order as i64 {
                continue;
            }
            let neutral: Vec<(usize, &SparseTensor, u32)> = match regime {
                Regime::Laplace => degrees
                    .iter()
                    .zip(laplace_tensors.iter())
                    .zip(counts.iter())
                    .filter(|(_, &c)| c > 0)
                    .map(|((&d, t), &c)| (d, t, c))
                    .collect(),
                Regime::StationaryPhase => cp
                    .higher
                    .iter()
                    .zip(counts.iter())
                    .filter(|(_, &c)| c > 0)
                    .map(|((d, t), &c)| (*d, t, c))
                    .collect(),
            };
            let val = colored_profile_sum(&eta, &neutral, (*md, mt));
            if val.is_zero() {
                continue;
            }
            match regime {
                Regime::Laplace => {
                    out[hpow as usize].0 += val;
                }
                Regime::StationaryPhase => {
                    // every edge carries i and every neutral vertex carries i
                    let ipow = ((e + vn) % 4 + 4) % 4;
                    match ipow {
                        0 => out[hpow as usize].0 += val,
                        1 => out[hpow as usize].1 += val,
                        2 => out[hpow as usize].0 -= val,
                        _ => out[hpow as usize].1 -= val,
                    }
                }
            }
        }
    });
    Ok(out)
}

fn enumerate_counts(
    slot: usize,
    counts: &mut Vec<u32>,
    degrees: &[usize],
    budget: i64,
    f: &mut dyn FnMut(&[u32]),
) {
    if slot == degrees.len() {
        f(counts);
        return;
    }
    let unit = (degrees[slot] as i64 - 2).max(1);
    let mut c = 0u32;
    loop {
        counts[slot] = c;
        if unit * c as i64 > budget {
            counts[slot] = 0;
            return;
        }
        enumerate_counts(slot + 1, counts, degrees, budget - unit * c as i64, f);
        c += 1;
    }
}

/// Stationary-phase asymptotic expansion at one critical point: prefactor
/// `e^{i f(x0)/hbar} (2 pi hbar)^{n/2} |det f''|^{-1/2} e^{i pi sign/4}`
/// and corrections from graphs with edges `i (f'')^{-1}`, neutral vertices
/// `i d^d f` and one density vertex.
pub fn stationary_phase_series(
    cp: &CriticalPointData,
    loop_order: u32,
) -> Result<AsymptoticExpansion, AsymptoticsError> {
    let det = cp.hessian.det();
    if det.is_zero() {
        return Err(AsymptoticsError::DegenerateHessian);
    }
    let corrections = correction_series(cp, loop_order, Regime::StationaryPhase)?;
    Ok(AsymptoticExpansion {
        regime: Regime::StationaryPhase,
        dim: cp.dim,
        critical_value: cp.critical_value.clone(),
        det_hessian: det,
        signature: signature(&cp.hessian),
        corrections,
    })
}

/// Laplace (Feynman-Laplace) expansion at the unique interior minimum:
/// prefactor `e^{-f(x0)/hbar} (2 pi hbar)^{n/2} (det f'')^{-1/2}`,
/// corrections from graphs with vertices `-d^d f` and one density vertex.
pub fn laplace_series(
    cp: &CriticalPointData,
    loop_order: u32,
) -> Result<AsymptoticExpansion, AsymptoticsError> {
    for k in 1..=cp.dim {
        let mut sub = Mat::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                sub[(i, j)] = cp.hessian[(i, j)].clone();
            }
        }
        if !sub.det().is_positive() {
            return Err(AsymptoticsError::NotPositiveDefinite);
        }
    }
    let corrections = correction_series(cp, loop_order, Regime::Laplace)?;
    Ok(AsymptoticExpansion {
        regime: Regime::Laplace,
        dim: cp.dim,
        critical_value: cp.critical_value.clone(),
        det_hessian: cp.hessian.det(),
        signature: cp.dim as i64,
        corrections,
    })
}

// ---------------------------------------------------------------------------
// Stirling coefficients
// ---------------------------------------------------------------------------

/// Stirling correction coefficients `c_n`, n = 1..=n_max (budget 3):
/// `c_n = sum over connected graphs with n+1 loops (all valencies >= 3) of
/// (-1)^{#vertices} / |Aut|`. Asserts the calibration value c_1 = 1/12.
pub fn stirling_coefficients(n_max: u32) -> Result<Vec<Rat>, AsymptoticsError> {
    if n_max > 3 {
        return Err(AsymptoticsError::LoopBudget(n_max, 3));
    }
    let mut out = Vec::new();
    for n in 1..=n_max {
        let mut cn = Rat::zero();
        for profile in profiles_with_excess(n as i64) {
            let vol = connected_groupoid_volume(&profile)
                .map_err(|_| AsymptoticsError::QuadratureDiverged)?;
            let v: i64 = profile.counts.values().map(|&c| c as i64).sum();
            cn += if v % 2 == 0 { vol } else { -vol };
        }
        out.push(cn);
    }
    if !out.is_empty() && out[0] != rat(1, 12) {
        return Err(AsymptoticsError::StirlingCalibration);
    }
    Ok(out)
}

/// Valency profiles (d >= 3) with `sum_d (d-2) V_d = 2*excess`, i.e. all
/// ways a graph can have E - V = excess.
pub fn profiles_with_excess(excess: i64) -> Vec<ValencyProfile> {
    let mut out = Vec::new();
    let dmax = (2 * excess + 2) as u32;
    let mut counts: Vec<(u32, u32)> = Vec::new();
    fn rec(
        d: u32,
        dmax: u32,
        left: i64,
        counts: &mut Vec<(u32, u32)>,
        out: &mut Vec<ValencyProfile>,
    ) {
        if left == 0 {
            out.push(ValencyProfile::new(counts));
            return;
        }
        if d > dmax {
            return;
        }
        let unit = (d - 2) as i64;
        let max_c = left / unit;
        for c in (0..=max_c).rev() {
            if c > 0 {
                counts.push((d, c as u32));
            }
            rec(d + 1, dmax, left - unit * c, counts, out);
            if c > 0 {
                counts.pop();
            }
        }
    }
    rec(3, dmax, 2 * excess, &mut counts, &mut out);
    out.retain(|p| p.half_edges() % 2 == 0);
    out
}

/// The Bernoulli closed form `c_n = B_{n+1} / (n (n+1))`.
pub fn stirling_closed_form(n: u32) -> Rat {
    let b = bernoulli(n as usize + 1);
    b[n as usize + 1].clone() / Rat::from_integer((n as i64 * (n as i64 + 1)).into())
}

/// `Gamma(z)` by the truncated Stirling asymptotics with the given
/// correction coefficients.
pub fn stirling_gamma(z: f64, coeffs: &[Rat]) -> f64 {
    let mut corr = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        corr += rat_to_f64(c) / z.powi(k as i32 + 1);
    }
    z.powf(z) * (-z).exp() * (2.0 * std::f64::consts::PI / z).sqrt() * corr.exp()
}

// ---------------------------------------------------------------------------
// Borel summation
// ---------------------------------------------------------------------------

/// Borel summation of `sum a_n z^n` at `z > 0`: Padé continuation of the
/// Borel transform `sum a_n t^n / n!`, then `int_0^inf e^{-t} B(t z) dt`
/// by quadrature. Errors when two consecutive Padé orders disagree.
pub fn borel_sum(coeffs: &[Rat], z: f64, tol: f64) -> Result<f64, AsymptoticsError> {
    if coeffs.len() < 4 {
        return Err(AsymptoticsError::NoContinuation);
    }
    let borel: Vec<Rat> = coeffs
        .iter()
        .enumerate()
        .map(|(n, a)| a.clone() / factorial(n as u64))
        .collect();
    let full = borel_sum_pade(&borel, z, borel.len() - 1)?;
    let prev = borel_sum_pade(&borel, z, borel.len() - 2)?;
    if (full - prev).abs() > tol.max(1e-12) * (1.0 + full.abs()) {
        return Err(AsymptoticsError::NoContinuation);
    }
    Ok(full)
}

fn borel_sum_pade(borel: &[Rat], z: f64, order: usize) -> Result<f64, AsymptoticsError> {
    let n = order / 2;
    let m = order - n;
    let (num, den) = pade(borel, m, n).ok_or(AsymptoticsError::NoContinuation)?;
    let nf: Vec<f64> = num.iter().map(rat_to_f64).collect();
    let df: Vec<f64> = den.iter().map(rat_to_f64).collect();
    let eval = |t: f64| -> Result<f64, AsymptoticsError> {
        let x = t * z;
        let mut nv = 0.0;
        for c in nf.iter().rev() {
            nv = nv * x + c;
        }
        let mut dv = 0.0;
        for c in df.iter().rev() {
            dv = dv * x + c;
        }
        if dv.abs() < 1e-12 {
            return Err(AsymptoticsError::NoContinuation);
        }
        Ok(nv / dv)
    };
    let mut t = 0.0;
    while t <= 60.0 {
        eval(t)?; // pole scan along the integration path
        t += 0.25;
    }
    let integrand = |t: f64| C::new((-t).exp() * eval(t).unwrap_or(0.0), 0.0);
    Ok(integrate(&integrand, 0.0, 60.0, 1e-11)?.re)
}

/// Exact Padé [m/n]: (numerator, denominator) with den[0] = 1, matching
/// the series through order m+n.
pub fn pade(series: &[Rat], m: usize, n: usize) -> Option<(Vec<Rat>, Vec<Rat>)> {
    if series.len() < m + n + 1 {
        return None;
    }
    let c = |k: i64| -> Rat {
        if k < 0 {
            Rat::zero()
        } else {
            series.get(k as usize).cloned().unwrap_or_else(Rat::zero)
        }
    };
    let mut den = vec![Rat::one()];
    if n > 0 {
        let mut a = Mat::zeros(n, n);
        let mut rhs = vec![Rat::zero(); n];
        for i in 1..=n {
            for j in 1..=n {
                a[(i - 1, j - 1)] = c(m as i64 + i as i64 - j as i64);
            }
            rhs[i - 1] = -c(m as i64 + i as i64);
        }
        let b = crate::linalg::solve_least_constrained(&a, &rhs)?;
        den.extend(b);
    }
    let mut num = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let mut acc = Rat::zero();
        for (j, bj) in den.iter().enumerate() {
            acc += bj.clone() * c(k as i64 - j as i64);
        }
        num.push(acc);
    }
    Some((num, den))
}

/// Exponential integral `E_1(x)`, x > 0 (series for small x, modified
/// Lentz continued fraction otherwise). Reference values for tests.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0);
    if x < 1.0 {
        let gamma = 0.577_215_664_901_532_9;
        let mut sum = 0.0;
        let mut term = 1.0;
        for n in 1..60 {
            term *= -x / n as f64;
            sum -= term / n as f64;
        }
        -gamma - x.ln() + sum
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1e300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let a = -(i as f64) * (i as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            if c.abs() < tiny {
                c = tiny;
            }
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        h * (-x).exp()
    }
}

// ---------------------------------------------------------------------------
// Faddeev-Popov finite-dimensional demo
// ---------------------------------------------------------------------------

/// Built-in rotation-invariant integrands for the Faddeev-Popov demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpCatalogue {
    /// S = (r^2 - 1)^2 with a compactly supported radial bump density
    QuarticWell,
    /// S = r^2 with Gaussian density e^{-r^2}
    GaussianDamped,
}

impl FpCatalogue {
    pub fn action(&self, r2: f64) -> f64 {
        match self {
            FpCatalogue::QuarticWell => {
                let d = r2 - 1.0;
                d * d
            }
            FpCatalogue::GaussianDamped => r2,
        }
    }

    pub fn density(&self, r2: f64) -> f64 {
        match self {
            FpCatalogue::QuarticWell => {
                // smooth bump supported on r < 2
                let s = r2 / 4.0;
                if s >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - s)).exp() * std::f64::consts::E
                }
            }
            FpCatalogue::GaussianDamped => (-r2).exp(),
        }
    }

    pub fn cutoff(&self) -> f64 {
        match self {
            FpCatalogue::QuarticWell => 2.0,
            FpCatalogue::GaussianDamped => 7.0,
        }
    }
}

/// Both sides of the Faddeev-Popov identity for `G = U(1)` acting by
/// rotations on the plane, gauge `phi(x) = x_2` (so N = 2 intersections
/// per orbit): lhs is the honest 2-D integral `int mu e^{iS/hbar}`, rhs is
/// `(Vol G / N) int dx1 rho |FP| e^{iS/hbar}` on the section, with
/// `FP(x) = <d phi, v> = x_1` the Faddeev-Popov determinant.
pub fn faddeev_popov_compare(
    example: FpCatalogue,
    hbar: f64,
) -> Result<(C, C), AsymptoticsError> {
    let cutoff = example.cutoff();
    let tol = 1e-9;
    let lhs = {
        let outer = |x1: f64| {
            let f = |x2: f64| {
                let r2 = x1 * x1 + x2 * x2;
                C::exp_i(example.action(r2) / hbar).scale(example.density(r2))
            };
            integrate(&f, -cutoff, cutoff, tol).unwrap_or(C::ZERO)
        };
        integrate(&outer, -cutoff, cutoff, tol * 10.0)?
    };
    let vol_g = 2.0 * std::f64::consts::PI;
    let n_intersections = 2.0;
    let rhs_1d = {
        let f = |x1: f64| {
            let r2 = x1 * x1;
            C::exp_i(example.action(r2) / hbar).scale(example.density(r2) * x1.abs())
        };
        integrate(&f, -cutoff, cutoff, tol)?
    };
    Ok((lhs, rhs_1d.scale(vol_g / n_intersections)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::int;

    #[test]
    fn gauss_integral_numeric() {
        let v = integrate_real(&|x: f64| (-x * x).exp(), -8.0, 8.0, 1e-12).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn gaussian_fourth_moment_numeric() {
        let v = integrate_real(&|x: f64| (-0.5 * x * x).exp() * x.powi(4), -12.0, 12.0, 1e-12)
            .unwrap();
        assert!((v - 3.0 * (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn fresnel_integral_numeric() {
        let v = numeric_oscillatory_oracle(|x| x * x, |_| 1.0, 1.0, 0.04).unwrap();
        let expect = C::exp_i(std::f64::consts::FRAC_PI_4).scale(std::f64::consts::PI.sqrt());
        assert!((v - expect).abs() < 1e-6, "got {:?} expect {:?}", v, expect);
    }

    #[test]
    fn signature_morse() {
        let m = Mat::from_rows(vec![vec![int(2), int(0)], vec![int(0), int(-2)]]);
        assert_eq!(signature(&m), 0);
        let p = Mat::from_rows(vec![vec![int(2), int(1)], vec![int(1), int(2)]]);
        assert_eq!(signature(&p), 2);
        let q = Mat::from_rows(vec![vec![int(0), int(1)], vec![int(1), int(0)]]);
        assert_eq!(signature(&q), 0);
    }

    fn quartic_cp(coeff4: Rat) -> CriticalPointData {
        // f = x^2/2 + coeff4 x^4: f'' = 1, d^4 f = 24 coeff4
        let mut t4 = SparseTensor::new(4, 1, false);
        t4.add(&[0, 0, 0, 0], int(24) * coeff4).unwrap();
        CriticalPointData {
            dim: 1,
            critical_value: int(0),
            hessian: Mat::from_rows(vec![vec![int(1)]]),
            higher: vec![(4, t4)],
            density_jet: vec![],
        }
        .constant_density(int(1))
    }

    #[test]
    fn laplace_pure_quadratic_no_corrections() {
        let mut cp = quartic_cp(int(0));
        cp.higher.clear();
        let exp = laplace_series(&cp, 3).unwrap();
        assert_eq!(exp.corrections[0].0, int(1));
        for k in 1..=3 {
            assert_eq!(exp.corrections[k], (int(0), int(0)));
        }
    }

    #[test]
    fn laplace_rejects_indefinite() {
        let mut cp = quartic_cp(int(1));
        cp.hessian = Mat::from_rows(vec![vec![int(-1)]]);
        assert_eq!(
            laplace_series(&cp, 1).unwrap_err(),
            AsymptoticsError::NotPositiveDefinite
        );
    }

    #[test]
    fn laplace_series_vs_quadrature() {
        // f = x^2/2 + x^4: corrections are (-1)^n (4n-1)!!/n!
        let cp = quartic_cp(int(1));
        let exp = laplace_series(&cp, 2).unwrap();
        assert_eq!(exp.corrections[1].0, int(-3)); // figure-eight: -24/8
        assert_eq!(exp.corrections[2].0, rat(105, 2));
        let hbar = 0.01;
        let numeric =
            numeric_laplace_oracle(|x| 0.5 * x * x + x.powi(4), |_| 1.0, hbar).unwrap();
        let series = exp.evaluate(hbar).re;
        let err = (numeric - series).abs() / numeric.abs();
        // predicted error: the first dropped term |c_3| hbar^3
        let c3 = rat_to_f64(&laplace_series(&cp, 3).unwrap().corrections[3].0).abs();
        assert!(
            err < 1.5 * c3 * hbar.powi(3),
            "relative error {} exceeds predicted {}",
            err,
            c3 * hbar.powi(3)
        );
    }

    #[test]
    fn laplace_order_improves_with_loops() {
        // gentler quartic so the hbar range is in the asymptotic regime
        let cp = quartic_cp(rat(1, 24));
        let hbars = [0.1, 0.05, 0.025];
        for loops in 0..=2u32 {
            let exp = laplace_series(&cp, loops).unwrap();
            let errs: Vec<f64> = hbars
                .iter()
                .map(|&h| {
                    let numeric = numeric_laplace_oracle(
                        |x| 0.5 * x * x + x.powi(4) / 24.0,
                        |_| 1.0,
                        h,
                    )
                    .unwrap();
                    ((numeric - exp.evaluate(h).re) / numeric).abs()
                })
                .collect();
            let o1 = (errs[0] / errs[1]).log2();
            let o2 = (errs[1] / errs[2]).log2();
            let fitted = o1.min(o2);
            assert!(
                fitted >= loops as f64 + 0.8,
                "loop order {}: fitted {} (errors {:?})",
                loops,
                fitted,
                errs
            );
        }
    }

    #[test]
    fn stationary_phase_morse_signature_zero() {
        let cp = CriticalPointData {
            dim: 2,
            critical_value: int(0),
            hessian: Mat::from_rows(vec![vec![int(2), int(0)], vec![int(0), int(-2)]]),
            higher: vec![],
            density_jet: vec![],
        }
        .constant_density(int(1));
        let exp = stationary_phase_series(&cp, 1).unwrap();
        assert_eq!(exp.signature, 0);
    }

    #[test]
    fn stationary_phase_vs_oscillatory_oracle() {
        // f = x^2/2 + x^4/4!: the hbar^1 correction is -i/8 (figure-eight)
        let mut t4 = SparseTensor::new(4, 1, false);
        t4.add(&[0, 0, 0, 0], int(1)).unwrap();
        let cp = CriticalPointData {
            dim: 1,
            critical_value: int(0),
            hessian: Mat::from_rows(vec![vec![int(1)]]),
            higher: vec![(4, t4)],
            density_jet: vec![],
        }
        .constant_density(int(1));
        let exp = stationary_phase_series(&cp, 1).unwrap();
        assert_eq!(exp.corrections[1], (int(0), rat(-1, 8)));
        let hbar: f64 = 0.1;
        let numeric = numeric_oscillatory_oracle(
            |x| 0.5 * x * x + x.powi(4) / 24.0,
            |_| 1.0,
            1.0 / hbar,
            0.4,
        )
        .unwrap();
        let series = exp.evaluate(hbar);
        assert!(
            (numeric - series).abs() / series.abs() < 2e-3,
            "numeric {:?} series {:?}",
            numeric,
            series
        );
    }

    #[test]
    fn stirling_small_coefficients() {
        let c = stirling_coefficients(3).unwrap();
        assert_eq!(c[0], rat(1, 12));
        assert_eq!(c[1], int(0));
        assert_eq!(c[2], rat(-1, 360));
        for n in 1..=3u32 {
            assert_eq!(c[n as usize - 1], stirling_closed_form(n), "n = {}", n);
        }
    }

    #[test]
    fn stirling_numeric_factorial() {
        let coeffs = stirling_coefficients(3).unwrap();
        let n = 20.0f64;
        let gamma21 = stirling_gamma(n + 1.0, &coeffs); // Gamma(21) = 20!
        let mut fact20 = 1.0f64;
        for k in 2..=20u32 {
            fact20 *= k as f64;
        }
        let rel = (fact20 / gamma21 - 1.0).abs();
        assert!(rel < 1e-4, "relative {}", rel);
    }

    #[test]
    fn borel_alternating_factorials() {
        // a_n = (-1)^n n!: Borel sum at z equals e^{1/z} E_1(1/z) / z
        let coeffs: Vec<Rat> = (0..14)
            .map(|n| {
                let f = factorial(n as u64);
                if n % 2 == 0 {
                    f
                } else {
                    -f
                }
            })
            .collect();
        let z = 0.1;
        let v = borel_sum(&coeffs, z, 1e-8).unwrap();
        let reference = (1.0f64 / z).exp() * exp_integral_e1(1.0 / z) / z;
        assert!((v - reference).abs() < 1e-6, "borel {} vs reference {}", v, reference);
    }

    #[test]
    fn borel_convergent_geometric() {
        // a_n = (1/2)^n at z = 1/2: ordinary sum 4/3
        let coeffs: Vec<Rat> = (0..14).map(|n| rat(1, 2).pow(n)).collect();
        let v = borel_sum(&coeffs, 0.5, 1e-7).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-6, "got {}", v);
    }

    #[test]
    fn borel_asymptotic_property() {
        // |f_Borel(z) - sum_{n<=N} a_n z^n| = O(z^{N+1}) as z -> 0
        let coeffs: Vec<Rat> = (0..14)
            .map(|n| {
                let f = factorial(n as u64);
                if n % 2 == 0 {
                    f
                } else {
                    -f
                }
            })
            .collect();
        let nn = 3usize;
        for &z in [0.1, 0.05, 0.025].iter() {
            let v = borel_sum(&coeffs, z, 1e-8).unwrap();
            let partial: f64 = coeffs[..=nn]
                .iter()
                .enumerate()
                .map(|(k, a)| rat_to_f64(a) * z.powi(k as i32))
                .sum();
            let ratio = (v - partial).abs() / z.powi(nn as i32 + 1);
            // bounded by roughly |a_{N+1}| = 24
            assert!(ratio < 60.0, "z {} ratio {}", z, ratio);
        }
    }

    #[test]
    fn pade_exact_rational() {
        let series: Vec<Rat> = (0..6)
            .map(|n| if n % 2 == 0 { int(1) } else { int(-1) })
            .collect();
        let (num, den) = pade(&series, 0, 1).unwrap();
        assert_eq!(num, vec![int(1)]);
        assert_eq!(den, vec![int(1), int(1)]);
    }

    #[test]
    fn e1_reference_values() {
        assert!((exp_integral_e1(1.0) - 0.21938393439552026).abs() < 1e-12);
        assert!((exp_integral_e1(10.0) - 4.156968929685324e-6).abs() < 1e-16);
    }

    #[test]
    fn fp_gaussian_damped_exact() {
        let (lhs, rhs) = faddeev_popov_compare(FpCatalogue::GaussianDamped, 0.5).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs();
        assert!(rel < 1e-6, "lhs {:?} rhs {:?} rel {}", lhs, rhs, rel);
    }

    #[test]
    fn fp_quartic_well() {
        let (lhs, rhs) = faddeev_popov_compare(FpCatalogue::QuarticWell, 0.05).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs();
        assert!(rel < 1e-4, "lhs {:?} rhs {:?} rel {}", lhs, rhs, rel);
    }

    #[test]
    fn stationary_reparameterization_invariance() {
        // |det f''|^{-1/2} rho is invariant under x -> a x when the density
        // jet transforms with the Jacobian
        let mk = |a: i64| {
            let mut rho = SparseTensor::new(0, 1, false);
            rho.add(&[], int(a)).unwrap();
            CriticalPointData {
                dim: 1,
                critical_value: int(0),
                hessian: Mat::from_rows(vec![vec![int(a * a)]]),
                higher: vec![],
                density_jet: vec![(0, rho)],
            }
        };
        let v1 = stationary_phase_series(&mk(1), 0).unwrap().evaluate(0.1);
        let v3 = stationary_phase_series(&mk(3), 0).unwrap().evaluate(0.1);
        assert!((v1 - v3).abs() < 1e-12);
    }
}

//! Exact rational scalars and small parsing/printing helpers.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// The scalar type of the whole crate: arbitrary-precision rationals.
pub type Rat = BigRational;

/// `p/q` as a [`Rat`].
pub fn rat(p: i64, q: i64) -> Rat {
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// Integer as a [`Rat`].
pub fn int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact factorial.
pub fn factorial(n: u64) -> Rat {
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= BigInt::from(k);
    }
    Rat::from_integer(acc)
}

/// Double factorial `(2m-1)!! = 1*3*5*...*(2m-1)`; `odd_double_factorial(0) = 1`.
pub fn odd_double_factorial(m: u64) -> Rat {
    let mut acc = BigInt::one();
    let mut k: u64 = 3;
    while m >= 1 && k <= 2 * m - 1 {
        acc *= BigInt::from(k);
        k += 2;
    }
    Rat::from_integer(acc)
}

/// Bernoulli numbers B_0..B_n (B_1 = -1/2 convention), exact.
pub fn bernoulli(n: usize) -> Vec<Rat> {
    // recurrence: sum_{j=0}^{m} C(m+1,j) B_j = 0 for m >= 1
    let mut b: Vec<Rat> = Vec::with_capacity(n + 1);
    b.push(Rat::one());
    for m in 1..=n {
        let mut acc = Rat::zero();
        for (j, bj) in b.iter().enumerate() {
            acc += binomial(m as u64 + 1, j as u64) * bj;
        }
        let c = -acc / binomial(m as u64 + 1, m as u64);
        b.push(c);
    }
    b
}

/// Exact binomial coefficient.
pub fn binomial(n: u64, k: u64) -> Rat {
    if k > n {
        return Rat::zero();
    }
    let mut acc = Rat::one();
    for i in 0..k {
        acc *= Rat::new(BigInt::from(n - i), BigInt::from(i + 1));
    }
    acc
}

/// Renders a rational as `num` or `num/den` (den always positive).
pub fn rat_to_string(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `num` or `num/den` with optional sign.
pub fn rat_from_str(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        Some(Rat::new(n, d))
    } else {
        let n: BigInt = s.parse().ok()?;
        Some(Rat::from_integer(n))
    }
}

/// Rational to f64 (for the numeric oracles only).
pub fn rat_to_f64(r: &Rat) -> f64 {
    // split into quotient and remainder to stay accurate for large values
    let n = r.numer();
    let d = r.denom();
    let (q, rem) = num_integer::Integer::div_rem(n, d);
    let qf = bigint_to_f64(&q);
    let rf = bigint_to_f64(&rem) / bigint_to_f64(d);
    qf + rf
}

fn bigint_to_f64(n: &BigInt) -> f64 {
    let s = n.to_string();
    s.parse::<f64>().unwrap_or(if n.is_negative() {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_factorial_small() {
        assert_eq!(odd_double_factorial(0), int(1));
        assert_eq!(odd_double_factorial(1), int(1));
        assert_eq!(odd_double_factorial(2), int(3));
        assert_eq!(odd_double_factorial(3), int(15));
        assert_eq!(odd_double_factorial(8), int(2027025));
    }

    #[test]
    fn bernoulli_values() {
        let b = bernoulli(4);
        assert_eq!(b[0], int(1));
        assert_eq!(b[1], rat(-1, 2));
        assert_eq!(b[2], rat(1, 6));
        assert_eq!(b[3], int(0));
        assert_eq!(b[4], rat(-1, 30));
    }

    #[test]
    fn rat_roundtrip() {
        for s in ["3/2", "-7", "0", "-22/7"] {
            let r = rat_from_str(s).unwrap();
            assert_eq!(rat_to_string(&r), s);
        }
    }
}

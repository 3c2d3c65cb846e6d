//! Closed-form probabilities that favorites fail to produce a holonic
//! structure, and a Monte Carlo oracle under the independent-choice model.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::ProbError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProbParams {
    pub n: u64,
    pub c: u32,
    pub k: u32,
}

impl ProbParams {
    pub fn new(n: u64, c: u32, k: u32) -> Result<Self, ProbError> {
        let p = ProbParams { n, c, k };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), ProbError> {
        if self.n < 4 {
            return Err(ProbError::DomainError(format!(
                "N = {} but N >= 4 is required",
                self.n
            )));
        }
        if self.c < 1 || self.k < 1 {
            return Err(ProbError::DomainError("C and K must be >= 1".into()));
        }
        Ok(())
    }

    fn ck(&self) -> u32 {
        self.c * self.k
    }
}

/// An exact value and its nearest double.
#[derive(Debug, Clone, PartialEq)]
pub struct Exact {
    pub value: BigRational,
}

impl Exact {
    fn new(value: BigRational) -> Self {
        Exact { value }
    }

    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }

    /// `numer/denom` in lowest terms.
    pub fn fraction(&self) -> String {
        if self.value.denom().is_one() {
            self.value.numer().to_string()
        } else {
            format!("{}/{}", self.value.numer(), self.value.denom())
        }
    }
}

fn int(x: u64) -> BigInt {
    BigInt::from(x)
}

fn ratio(n: BigInt, d: BigInt) -> BigRational {
    BigRational::new(n, d)
}

/// `(N-1)^-C`.
pub fn p_favorite(n: u64, c: u32) -> Result<Exact, ProbError> {
    if n < 2 {
        return Err(ProbError::DomainError(format!(
            "N = {n} but N >= 2 is required"
        )));
    }
    if c < 1 {
        return Err(ProbError::DomainError("C must be >= 1".into()));
    }
    Ok(Exact::new(ratio(BigInt::one(), int(n - 1).pow(c))))
}

/// `(1/((N-3)(N-2)(N-1)))^(CK)`.
pub fn p_triple(p: &ProbParams) -> Result<Exact, ProbError> {
    p.check()?;
    let base = int(p.n - 3) * int(p.n - 2) * int(p.n - 1);
    Ok(Exact::new(ratio(BigInt::one(), base.pow(p.ck()))))
}

/// Ordered triples `N(N-1)(N-2)`.
pub fn arrangements3(n: u64) -> BigInt {
    int(n) * int(n.saturating_sub(1)) * int(n.saturating_sub(2))
}

/// `N(N-1)(N-2) * p_triple`. A union-style bound, so it can exceed 1.
pub fn p_any_triple(p: &ProbParams) -> Result<Exact, ProbError> {
    let t = p_triple(p)?;
    Ok(Exact::new(
        t.value * BigRational::from_integer(arrangements3(p.n)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    /// `N(N-1)(N-2) / (N-3)^(3CK)`.
    pub middle: Exact,
    /// `3CK - 3`, the exponent of the approximation `N^-(3CK-3)`.
    pub exponent: i64,
    pub approx: Exact,
}

pub fn p_bound(p: &ProbParams) -> Result<Bound, ProbError> {
    p.check()?;
    let middle = ratio(arrangements3(p.n), int(p.n - 3).pow(3 * p.ck()));
    let exponent = 3 * p.ck() as i64 - 3;
    let approx = if exponent >= 0 {
        ratio(BigInt::one(), int(p.n).pow(exponent as u32))
    } else {
        BigRational::from_integer(int(p.n).pow((-exponent) as u32))
    };
    Ok(Bound {
        middle: Exact::new(middle),
        exponent,
        approx: Exact::new(approx),
    })
}

/// Plain double-precision evaluation of `p_triple`, kept separate from the
/// exact path so the two can be cross-checked.
pub fn p_triple_f64(p: &ProbParams) -> f64 {
    let n = p.n as f64;
    (1.0 / ((n - 3.0) * (n - 2.0) * (n - 1.0))).powi(p.ck() as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum McEvent {
    /// One agent settles on a given peer as its favorite.
    Favorite,
    /// A given ordered triple of agents all settle on their designated
    /// favorites.
    Triple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McResult {
    pub estimate: f64,
    pub stderr: f64,
    pub hits: u64,
    pub trials: u64,
}

fn trial_seed(seed: u64, idx: u64) -> u64 {
    // splitmix64 over the pair, so neighboring trials get unrelated streams
    let mut z = seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One trial. Each interaction's best responder is uniform over the pool;
/// the event needs every draw to hit its designated peer (index 0).
fn trial(p: &ProbParams, event: McEvent, seed: u64, idx: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, idx));
    let pools: &[u64] = match event {
        McEvent::Favorite => &[p.n - 1],
        McEvent::Triple => &[p.n - 1, p.n - 2, p.n - 3],
    };
    let slots = match event {
        McEvent::Favorite => p.c,
        McEvent::Triple => p.c * p.k,
    };
    pools
        .iter()
        .all(|pool| (0..slots).all(|_| rng.gen_range(0..*pool) == 0))
}

fn summarize(hits: u64, trials: u64) -> McResult {
    let est = hits as f64 / trials as f64;
    McResult {
        estimate: est,
        stderr: (est * (1.0 - est) / trials as f64).sqrt(),
        hits,
        trials,
    }
}

fn mc_check(p: &ProbParams, event: McEvent, trials: u64) -> Result<(), ProbError> {
    if trials == 0 {
        return Err(ProbError::DomainError("need at least one trial".into()));
    }
    match event {
        McEvent::Favorite if p.n < 2 || p.c < 1 => {
            Err(ProbError::DomainError("N >= 2 and C >= 1".into()))
        }
        McEvent::Favorite => Ok(()),
        McEvent::Triple => p.check(),
    }
}

/// Parallel Monte Carlo estimate. Trial `i` uses a stream derived from
/// `(seed, i)`, so the result equals [`mc_estimate_serial`].
pub fn mc_estimate(
    p: &ProbParams,
    event: McEvent,
    trials: u64,
    seed: u64,
) -> Result<McResult, ProbError> {
    mc_check(p, event, trials)?;
    let hits = (0..trials)
        .into_par_iter()
        .filter(|i| trial(p, event, seed, *i))
        .count() as u64;
    Ok(summarize(hits, trials))
}

pub fn mc_estimate_serial(
    p: &ProbParams,
    event: McEvent,
    trials: u64,
    seed: u64,
) -> Result<McResult, ProbError> {
    mc_check(p, event, trials)?;
    let hits = (0..trials).filter(|i| trial(p, event, seed, *i)).count() as u64;
    Ok(summarize(hits, trials))
}

/// Closed form matching an event, for 3-sigma comparison.
pub fn closed_form(p: &ProbParams, event: McEvent) -> Result<Exact, ProbError> {
    match event {
        McEvent::Favorite => p_favorite(p.n, p.c),
        McEvent::Triple => p_triple(p),
    }
}

/// Whether `|estimate - exact| <= 3 sigma`, with sigma taken from the
/// closed form rather than the sample.
pub fn within_three_sigma(mc: &McResult, exact: f64) -> bool {
    let sigma = (exact * (1.0 - exact) / mc.trials as f64).sqrt();
    (mc.estimate - exact).abs() <= 3.0 * sigma
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport {
    /// First N in the range where `p_any_triple < 1`, if any.
    pub onset: Option<u64>,
    pub strictly_decreasing: bool,
    pub terminal: Exact,
    pub passes: bool,
}

/// Sweeps `p_any_triple` over `n_range`. Passes when the values are strictly
/// decreasing across the range and the last value is below `eps`.
pub fn asymptotic_check(
    c: u32,
    k: u32,
    n_range: std::ops::RangeInclusive<u64>,
    eps: f64,
) -> Result<AsymptoticReport, ProbError> {
    let (lo, hi) = (*n_range.start(), *n_range.end());
    if lo > hi {
        return Err(ProbError::DomainError("empty range".into()));
    }
    ProbParams::new(lo, c, k)?;
    let one = BigRational::one();
    let mut onset = None;
    let mut decreasing = true;
    let mut prev: Option<BigRational> = None;
    let mut last = BigRational::zero();
    for n in n_range {
        let v = p_any_triple(&ProbParams { n, c, k })?.value;
        if onset.is_none() && v < one {
            onset = Some(n);
        }
        if let Some(pv) = &prev {
            if v >= *pv {
                decreasing = false;
            }
        }
        prev = Some(v.clone());
        last = v;
    }
    let terminal = Exact::new(last);
    let passes = decreasing && terminal.to_f64() < eps;
    Ok(AsymptoticReport {
        onset,
        strictly_decreasing: decreasing,
        terminal,
        passes,
    })
}

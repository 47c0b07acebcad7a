//! The regression-based exercise policy and the low-biased estimate.
//!
//! At date `r` with `q` rights left the policy exercises the count `n` that
//! maximizes `imm_n + fac_n * Crho[q - n]` (smallest `n` on ties) whenever
//! that maximum is at least `C1[q]`, and then continues from `rho(r)`.
//! Rights still held at the cemetery are exercised there.

use crate::contract::{ContractSpec, ExerciseChain};
use crate::error::{Error, Result};
use crate::model::{path_rng, MarketModel, PricePath};
use crate::regress::{Continuation, ContinuationKind};
use crate::stats::{chunked_reduce, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyDecision {
    /// Rights exercised at the current date.
    pub exercise_now: usize,
    /// Date from which the policy continues.
    pub next_admissible: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub chain: ExerciseChain,
    pub payoff: f64,
}

/// The policy's decision at `date` with `remaining` rights and spot `price`.
pub fn decide<C: Continuation + ?Sized>(
    cont: &C,
    spec: &ContractSpec,
    date: usize,
    remaining: usize,
    price: f64,
) -> PolicyDecision {
    let cemetery = spec.cemetery();
    if date >= cemetery {
        return PolicyDecision {
            exercise_now: remaining,
            next_admissible: cemetery,
        };
    }
    let wait = PolicyDecision {
        exercise_now: 0,
        next_admissible: date + 1,
    };
    if remaining == 0 {
        return wait;
    }
    let first = spec.rights() - remaining + 1;
    let mut best = f64::NEG_INFINITY;
    let mut best_n = 0;
    let mut value = 0.0;
    let mut factor = 1.0;
    for n in 1..=spec.volume(date, price).min(remaining) {
        let p = first + n - 1;
        value += factor * spec.u(p, date, price);
        factor *= spec.v(p, date, price);
        let cand = value + factor * cont.continuation(ContinuationKind::Refraction, date, remaining - n, price);
        if cand > best {
            best = cand;
            best_n = n;
        }
    }
    if best >= cont.continuation(ContinuationKind::OneStep, date, remaining, price) {
        PolicyDecision {
            exercise_now: best_n,
            next_admissible: spec.refraction(date),
        }
    } else {
        wait
    }
}

/// Follows the policy along `path` from `start_date` with `rights` left, the
/// first exercise allowed no earlier than `earliest`. Calls `record(date, n)`
/// for each exercise and returns the realized payoff.
fn follow<C, F>(
    cont: &C,
    spec: &ContractSpec,
    path: PricePath<'_>,
    start_date: usize,
    rights: usize,
    earliest: usize,
    mut record: F,
) -> f64
where
    C: Continuation + ?Sized,
    F: FnMut(usize, usize),
{
    let cemetery = spec.cemetery();
    let mut date = start_date.max(earliest).min(cemetery);
    let mut remaining = rights;
    let mut total = 0.0;
    let mut factor = 1.0;
    while remaining > 0 {
        let price = path.price(date);
        let d = decide(cont, spec, date, remaining, price);
        if d.exercise_now > 0 {
            let first = spec.rights() - remaining + 1;
            let (value, fac) = spec.immediate(first, d.exercise_now, date, price);
            total += factor * value;
            factor *= fac;
            remaining -= d.exercise_now;
            record(date, d.exercise_now);
        }
        date = d.next_admissible;
    }
    total
}

/// Runs the policy and returns the exercise dates together with the payoff.
///
/// `rights` must not exceed the contract's; the problem with `q` rights left
/// uses the contract's last `q` rights.
pub fn run_policy<C: Continuation + ?Sized>(
    cont: &C,
    spec: &ContractSpec,
    path: PricePath<'_>,
    start_date: usize,
    rights: usize,
    earliest: usize,
) -> PolicyOutcome {
    assert!(rights <= spec.rights(), "more rights than the contract holds");
    let mut dates = Vec::with_capacity(rights);
    let payoff = follow(cont, spec, path, start_date, rights, earliest, |date, n| {
        dates.extend(std::iter::repeat_n(date, n))
    });
    PolicyOutcome {
        chain: ExerciseChain::new(dates).expect("policy dates are non-decreasing"),
        payoff,
    }
}

/// Payoff of the policy without recording the chain.
pub fn policy_payoff<C: Continuation + ?Sized>(
    cont: &C,
    spec: &ContractSpec,
    path: PricePath<'_>,
    start_date: usize,
    rights: usize,
) -> f64 {
    follow(cont, spec, path, start_date, rights, 0, |_, _| {})
}

/// Low-biased estimate with the companion averages needed at date 0 by the
/// dual. Index `l` of the vectors is the number of rights, `0..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerEstimate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Policy value from date 0.
    pub value: Vec<f64>,
    /// Policy value started at date 1.
    pub one_step: Vec<f64>,
    /// Policy value started at `rho(0)`.
    pub refraction_step: Vec<f64>,
}

/// Averages the policy payoff over `count` fresh paths drawn with `seed`.
pub fn lower_bound<C: Continuation + ?Sized>(
    cont: &C,
    spec: &ContractSpec,
    model: &MarketModel,
    count: usize,
    seed: u64,
) -> Result<LowerEstimate> {
    if model.horizon != spec.horizon() {
        return Err(Error::HorizonMismatch {
            what: "model",
            found: model.horizon,
            expected: spec.horizon(),
        });
    }
    if count == 0 {
        return Err(Error::invalid("count", "need at least one path"));
    }
    let rights = spec.rights();
    let width = spec.cemetery() + 1;
    let rho0 = spec.refraction(0);
    // per l: [value, one_step, refraction_step]
    let acc = chunked_reduce(
        count,
        |range| {
            let mut row = vec![0.0; width];
            let mut sums = vec![[Moments::default(); 3]; rights + 1];
            for m in range {
                let mut rng = path_rng(seed, m as u64);
                model.fill_path(&mut row, model.s0, &mut rng);
                let path = PricePath::new(0, &row);
                for (l, slot) in sums.iter_mut().enumerate().skip(1) {
                    slot[0].push(policy_payoff(cont, spec, path, 0, l));
                    slot[1].push(policy_payoff(cont, spec, path, 1, l));
                    slot[2].push(policy_payoff(cont, spec, path, rho0, l));
                }
            }
            sums
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                for s in 0..3 {
                    x[s].merge(&y[s]);
                }
            }
        },
    )
    .expect("count > 0");
    Ok(LowerEstimate {
        mean: acc[rights][0].mean,
        std: acc[rights][0].std_of_mean(),
        count,
        value: acc.iter().map(|s| s[0].mean).collect(),
        one_step: acc.iter().map(|s| s[1].mean).collect(),
        refraction_step: acc.iter().map(|s| s[2].mean).collect(),
    })
}

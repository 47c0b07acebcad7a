//! Generic additive/multiplicative cashflows with volume caps and refraction.
//!
//! An exercise chain `j_1 <= ... <= j_L` pays
//! `sum_k U^k(j_k) * prod_{l<k} V^l(j_l)`. Rights are numbered `1..=L` in the
//! order they are exercised; an auxiliary problem with `q` rights left uses the
//! last `q` of them, i.e. indices `L - q + 1..=L`.
//!
//! Inadmissible chains are excluded outright rather than assigned a large
//! negative payoff.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which cashflow the rights pay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cashflow {
    /// `U^p = (S - K)^+`, `V = 1`.
    Swing { strike: f64 },
    /// `-exp(-alpha * sum Z)` written as `V^l = exp(-alpha Z)`, `U^L = -exp(-alpha Z)`.
    ExpUtility { alpha: f64, strike: f64 },
    /// Sale of shares under linear log-price impact `G(t) = b (1 - a t)^+`.
    Liquidation { a: f64, b: f64 },
}

/// Maximum number of rights exercisable per date (before the cemetery).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VolumeProfile {
    /// One right per date.
    Unit,
    /// Two rights on weekend dates, one otherwise. Date 0 is a Monday.
    OffPeak,
    /// No cap beyond the number of rights.
    Unlimited,
    /// Explicit cap per date `0..=T`.
    Schedule(Vec<usize>),
}

/// Next admissible date after an exercise at date `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Refraction {
    /// `rho(i) = min(i + delta, T + 1)`.
    Constant(usize),
    /// Explicit `rho(i)` per date `0..=T`, each in `i+1..=T+1`.
    Schedule(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    rights: usize,
    horizon: usize,
    cashflow: Cashflow,
    volume: VolumeProfile,
    refraction: Refraction,
}

impl ContractSpec {
    pub fn new(
        rights: usize,
        horizon: usize,
        cashflow: Cashflow,
        volume: VolumeProfile,
        refraction: Refraction,
    ) -> Result<Self> {
        if rights < 1 {
            return Err(Error::invalid("rights", "need at least one right"));
        }
        if horizon < 1 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        match cashflow {
            Cashflow::Swing { strike } if !strike.is_finite() => {
                return Err(Error::invalid("strike", "must be finite"))
            }
            Cashflow::ExpUtility { alpha, strike } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::invalid("alpha", "must be finite and > 0"));
                }
                if !strike.is_finite() {
                    return Err(Error::invalid("strike", "must be finite"));
                }
            }
            Cashflow::Liquidation { a, b } => {
                if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
                    return Err(Error::invalid("impact", "a and b must be finite and > 0"));
                }
                if horizon as f64 > 1.0 / a {
                    return Err(Error::invalid(
                        "impact",
                        format!("liquidation needs T <= 1/a, got T = {horizon}, 1/a = {}", 1.0 / a),
                    ));
                }
            }
            _ => {}
        }
        match &volume {
            VolumeProfile::Schedule(caps) => {
                if caps.len() != horizon + 1 {
                    return Err(Error::invalid("volume", "schedule must cover dates 0..=T"));
                }
                if caps.iter().any(|&c| c < 1) {
                    return Err(Error::invalid("volume", "caps must be >= 1"));
                }
            }
            VolumeProfile::Unit | VolumeProfile::OffPeak | VolumeProfile::Unlimited => {}
        }
        match &refraction {
            Refraction::Constant(delta) => {
                if *delta < 1 {
                    return Err(Error::invalid("delta", "refraction period must be >= 1"));
                }
            }
            Refraction::Schedule(next) => {
                if next.len() != horizon + 1 {
                    return Err(Error::invalid("refraction", "schedule must cover dates 0..=T"));
                }
                if next.iter().enumerate().any(|(i, &r)| r <= i || r > horizon + 1) {
                    return Err(Error::invalid("refraction", "need i < rho(i) <= T + 1"));
                }
            }
        }
        Ok(ContractSpec {
            rights,
            horizon,
            cashflow,
            volume,
            refraction,
        })
    }

    /// Swing option paying `(S - K)^+` per right.
    pub fn swing(
        strike: f64,
        rights: usize,
        horizon: usize,
        volume: VolumeProfile,
        delta: usize,
    ) -> Result<Self> {
        Self::new(
            rights,
            horizon,
            Cashflow::Swing { strike },
            volume,
            Refraction::Constant(delta),
        )
    }

    /// Exponential utility `-exp(-alpha * sum_k (S_{j_k} - K)^+)`.
    pub fn exp_utility(
        alpha: f64,
        strike: f64,
        rights: usize,
        horizon: usize,
        volume: VolumeProfile,
        delta: usize,
    ) -> Result<Self> {
        Self::new(
            rights,
            horizon,
            Cashflow::ExpUtility { alpha, strike },
            volume,
            Refraction::Constant(delta),
        )
    }

    /// Liquidation of `rights` shares with impact `b (1 - a t)^+`; unconstrained
    /// volume and unit refraction.
    pub fn liquidation(a: f64, b: f64, rights: usize, horizon: usize) -> Result<Self> {
        Self::new(
            rights,
            horizon,
            Cashflow::Liquidation { a, b },
            VolumeProfile::Unlimited,
            Refraction::Constant(1),
        )
    }

    pub fn rights(&self) -> usize {
        self.rights
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cemetery(&self) -> usize {
        self.horizon + 1
    }

    pub fn cashflow(&self) -> &Cashflow {
        &self.cashflow
    }

    pub fn volume_profile(&self) -> &VolumeProfile {
        &self.volume
    }

    pub fn refraction_rule(&self) -> &Refraction {
        &self.refraction
    }

    /// Same contract with a different number of rights.
    pub fn with_rights(&self, rights: usize) -> Result<Self> {
        Self::new(
            rights,
            self.horizon,
            self.cashflow,
            self.volume.clone(),
            self.refraction.clone(),
        )
    }

    /// Strike used by the default regression basis, if the cashflow has one.
    pub fn strike(&self) -> Option<f64> {
        match self.cashflow {
            Cashflow::Swing { strike } | Cashflow::ExpUtility { strike, .. } => Some(strike),
            Cashflow::Liquidation { .. } => None,
        }
    }

    fn z(strike: f64, price: f64) -> f64 {
        (price - strike).max(0.0)
    }

    /// `U^p` at `date` for right `p` in `1..=L`.
    pub fn u(&self, p: usize, date: usize, price: f64) -> f64 {
        debug_assert!(p >= 1 && p <= self.rights);
        match self.cashflow {
            Cashflow::Swing { strike } => Self::z(strike, price),
            Cashflow::ExpUtility { alpha, strike } => {
                if p == self.rights {
                    -(-alpha * Self::z(strike, price)).exp()
                } else {
                    0.0
                }
            }
            Cashflow::Liquidation { a, b } => {
                if date > self.horizon {
                    0.0
                } else {
                    price * (b * (a * date as f64 - 1.0) * (p - 1) as f64).exp()
                }
            }
        }
    }

    /// `V^l` at `date` for `l` in `1..L`; `1` for `l >= L`.
    pub fn v(&self, l: usize, date: usize, price: f64) -> f64 {
        if l >= self.rights {
            return 1.0;
        }
        match self.cashflow {
            Cashflow::Swing { .. } => 1.0,
            Cashflow::ExpUtility { alpha, strike } => (-alpha * Self::z(strike, price)).exp(),
            Cashflow::Liquidation { a, b } => {
                if date > self.horizon {
                    1.0
                } else {
                    (-a * b * date as f64).exp()
                }
            }
        }
    }

    /// True when `U^p = (S - K)^+` and `V = 1`.
    pub fn is_additive(&self) -> bool {
        matches!(self.cashflow, Cashflow::Swing { .. })
    }

    /// Volume cap `v_j`, in `1..=L`; `L` at the cemetery.
    pub fn volume(&self, date: usize, _price: f64) -> usize {
        if date > self.horizon {
            return self.rights;
        }
        let cap = match &self.volume {
            VolumeProfile::Unit => 1,
            VolumeProfile::OffPeak => {
                if date % 7 >= 5 {
                    2
                } else {
                    1
                }
            }
            VolumeProfile::Unlimited => self.rights,
            VolumeProfile::Schedule(caps) => caps[date],
        };
        cap.clamp(1, self.rights)
    }

    /// `rho(i)`: first date a later exercise may happen after exercising at `i`.
    /// The cemetery maps to itself.
    pub fn refraction(&self, date: usize) -> usize {
        let cemetery = self.cemetery();
        if date >= cemetery {
            return cemetery;
        }
        match &self.refraction {
            Refraction::Constant(delta) => (date + delta).min(cemetery),
            Refraction::Schedule(next) => next[date],
        }
    }

    /// Value and multiplier of exercising `n` rights at once, starting with
    /// right index `first`: `sum_{p} U^p prod_{l<p} V^l` and `prod V^l` over
    /// `first..first + n`.
    pub fn immediate(&self, first: usize, n: usize, date: usize, price: f64) -> (f64, f64) {
        let mut value = 0.0;
        let mut factor = 1.0;
        for p in first..first + n {
            value += factor * self.u(p, date, price);
            factor *= self.v(p, date, price);
        }
        (value, factor)
    }

    /// Payoff of exercising the last `remaining` rights at the cemetery.
    pub fn cemetery_value(&self, remaining: usize) -> f64 {
        if remaining == 0 {
            return 0.0;
        }
        let first = self.rights - remaining + 1;
        self.immediate(first, remaining, self.cemetery(), 0.0).0
    }
}

/// Non-decreasing exercise dates `j_1 <= ... <= j_p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExerciseChain(Vec<usize>);

impl ExerciseChain {
    pub fn new(dates: Vec<usize>) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("chain", "dates must be non-decreasing"));
        }
        Ok(ExerciseChain(dates))
    }

    pub fn dates(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Number of rights in `prefix` exercised at its last date.
pub fn exercise_count(prefix: &[usize]) -> usize {
    match prefix.last() {
        Some(&last) => prefix.iter().rev().take_while(|&&d| d == last).count(),
        None => 0,
    }
}

/// Whether every prefix of `dates` respects the volume caps and the
/// refraction rule. `prices` is indexed by date over `0..=T+1`.
pub fn is_admissible(spec: &ContractSpec, dates: &[usize], prices: &[f64]) -> bool {
    let cemetery = spec.cemetery();
    let mut run = 0;
    for (idx, &d) in dates.iter().enumerate() {
        if d > cemetery {
            return false;
        }
        if idx == 0 {
            run = 1;
        } else {
            let prev = dates[idx - 1];
            if d < prev {
                return false;
            }
            if d == prev {
                run += 1;
            } else {
                if d < spec.refraction(prev) {
                    return false;
                }
                run = 1;
            }
        }
        if run > spec.volume(d, prices[d]) {
            return false;
        }
    }
    true
}

/// Pre-cashflow of a full chain of `L` dates.
pub fn chain_payoff(spec: &ContractSpec, chain: &ExerciseChain, prices: &[f64]) -> f64 {
    chain_payoff_from(spec, 1, chain.dates(), prices)
}

/// Payoff of rights `first..first + dates.len()` exercised at `dates`.
pub fn chain_payoff_from(spec: &ContractSpec, first: usize, dates: &[usize], prices: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut factor = 1.0;
    for (offset, &d) in dates.iter().enumerate() {
        let p = first + offset;
        total += factor * spec.u(p, d, prices[d]);
        factor *= spec.v(p, d, prices[d]);
    }
    total
}

/// All non-decreasing chains of `len` dates in `from..=T+1` that are admissible.
pub fn admissible_chains(
    spec: &ContractSpec,
    from: usize,
    len: usize,
    prices: &[f64],
) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut chain = Vec::with_capacity(len);
    extend_chains(spec, from, len, prices, &mut chain, &mut out);
    out
}

fn extend_chains(
    spec: &ContractSpec,
    from: usize,
    len: usize,
    prices: &[f64],
    chain: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if chain.len() == len {
        out.push(chain.clone());
        return;
    }
    let lo = chain.last().copied().unwrap_or(from);
    for d in lo..=spec.cemetery() {
        chain.push(d);
        if is_admissible(spec, chain, prices) {
            extend_chains(spec, from, len, prices, chain, out);
        }
        chain.pop();
    }
}

//! High-biased estimate from the pathwise dual.
//!
//! The value process of the policy is sampled by nested simulation along each
//! outer path. Its one-step and refraction-step conditional means then stand
//! in for the Doob martingale and compensator increments inside the recursive
//! pathwise maximum `theta`, whose outer average is the upper estimate.

use std::io::Write;

use rayon::prelude::*;

use crate::contract::{admissible_chains, ContractSpec};
use crate::error::{Error, Result};
use crate::model::{derive_seed, path_rng, MarketModel, PathSet, PricePath};
use crate::primal::{policy_payoff, LowerEstimate};
use crate::regress::Continuation;
use crate::stats::{chunked_reduce, Moments};

/// Value-process samples along one outer path, for rights `0..=L` and dates
/// `0..=T+1`. Row `l = 0` is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SnellPath {
    rights: usize,
    width: usize,
    yhat: Vec<f64>,
    e_one: Vec<f64>,
    e_rho: Vec<f64>,
}

impl SnellPath {
    /// All entries zero; `horizon` is `T`.
    pub fn zeros(rights: usize, horizon: usize) -> Self {
        let width = horizon + 2;
        let n = (rights + 1) * width;
        SnellPath {
            rights,
            width,
            yhat: vec![0.0; n],
            e_one: vec![0.0; n],
            e_rho: vec![0.0; n],
        }
    }

    pub fn rights(&self) -> usize {
        self.rights
    }

    pub fn cemetery(&self) -> usize {
        self.width - 1
    }

    fn idx(&self, l: usize, date: usize) -> usize {
        l * self.width + date
    }

    /// Sets `Y^l_j`, `E_j Y^l_{j+1}` and `E_j Y^l_{rho(j)}`. Ignored for `l = 0`.
    pub fn set(&mut self, l: usize, date: usize, yhat: f64, e_one: f64, e_rho: f64) {
        if l == 0 {
            return;
        }
        let i = self.idx(l, date);
        self.yhat[i] = yhat;
        self.e_one[i] = e_one;
        self.e_rho[i] = e_rho;
    }

    pub fn yhat(&self, l: usize, date: usize) -> f64 {
        self.yhat[self.idx(l, date)]
    }

    pub fn e_one(&self, l: usize, date: usize) -> f64 {
        self.e_one[self.idx(l, date)]
    }

    pub fn e_rho(&self, l: usize, date: usize) -> f64 {
        self.e_rho[self.idx(l, date)]
    }
}

/// Value-process samples for every outer path.
#[derive(Debug, Clone, PartialEq)]
pub struct SnellSample {
    pub paths: Vec<SnellPath>,
}

/// Estimates the policy's value process along each outer path.
///
/// For every outer path `m` and date `1 <= j <= T`, `inner_count` paths are
/// drawn from `S^m_j` with seed `derive_seed(seed, [m, j])`, and the policy is
/// run on each of them from `j`, `j + 1` and `rho(j)`. Date 0 reuses the
/// averages of `lower`, which come from many more paths.
pub fn sample_snell<C: Continuation + ?Sized>(
    cont: &C,
    spec: &ContractSpec,
    model: &MarketModel,
    outer: &PathSet,
    inner_count: usize,
    lower: &LowerEstimate,
    seed: u64,
) -> Result<SnellSample> {
    let horizon = spec.horizon();
    if model.horizon != horizon || outer.horizon() != horizon || outer.first_date() != 0 {
        return Err(Error::HorizonMismatch {
            what: "outer paths",
            found: outer.horizon(),
            expected: horizon,
        });
    }
    if inner_count == 0 {
        return Err(Error::invalid("inner_count", "need at least one inner path"));
    }
    let rights = spec.rights();
    if lower.value.len() != rights + 1 {
        return Err(Error::invalid("lower", "estimate was built for another number of rights"));
    }
    let cemetery = spec.cemetery();
    let paths = (0..outer.count())
        .into_par_iter()
        .map(|m| {
            let mut snell = SnellPath::zeros(rights, horizon);
            let mut row = vec![0.0; cemetery + 1];
            let mut sums = vec![[0.0; 3]; rights + 1];
            for l in 1..=rights {
                snell.set(
                    l,
                    0,
                    lower.value[l],
                    lower.one_step[l],
                    lower.refraction_step[l],
                );
                let c = spec.cemetery_value(l);
                snell.set(l, cemetery, c, c, c);
            }
            for date in 1..=horizon {
                let rho = spec.refraction(date);
                let inner_seed = derive_seed(seed, &[m as u64, date as u64]);
                sums.iter_mut().for_each(|s| *s = [0.0; 3]);
                for nu in 0..inner_count {
                    let mut rng = path_rng(inner_seed, nu as u64);
                    let slice = &mut row[date..];
                    model.fill_path(slice, outer.price(m, date), &mut rng);
                    let path = PricePath::new(date, slice);
                    for (l, s) in sums.iter_mut().enumerate().skip(1) {
                        s[0] += policy_payoff(cont, spec, path, date, l);
                        s[1] += policy_payoff(cont, spec, path, date + 1, l);
                        s[2] += policy_payoff(cont, spec, path, rho, l);
                    }
                }
                let n = inner_count as f64;
                for (l, s) in sums.iter().enumerate().skip(1) {
                    snell.set(l, date, s[0] / n, s[1] / n, s[2] / n);
                }
            }
            snell
        })
        .collect();
    Ok(SnellSample { paths })
}

/// `theta^{n,L}_i` for `n = 0..=L` and dates `0..=T+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaState {
    width: usize,
    theta: Vec<f64>,
}

impl ThetaState {
    pub fn get(&self, n: usize, date: usize) -> f64 {
        self.theta[n * self.width + date]
    }

    /// `theta^{0,L}_0`.
    pub fn value(&self) -> f64 {
        self.theta[0]
    }
}

/// The recursive pathwise maximum for arbitrary penalty inputs.
///
/// `step(l, i)` is the penalty for waiting from `i` to `i + 1` in the
/// `l`-rights problem, `-(M^l_{i+1} - M^l_i)`; `jump(l, i)` is the penalty
/// for moving to `rho(i)` after an exercise at `i`,
/// `-(M^l_{rho(i)} - M^l_i) + A^l_{rho(i)} - E_i A^l_{rho(i)}`. Both are only
/// queried for `l >= 1`.
pub fn theta_with<S, J>(spec: &ContractSpec, prices: &[f64], step: S, jump: J) -> ThetaState
where
    S: Fn(usize, usize) -> f64,
    J: Fn(usize, usize) -> f64,
{
    let rights = spec.rights();
    let cemetery = spec.cemetery();
    let width = cemetery + 1;
    let mut theta = vec![0.0; (rights + 1) * width];
    for n in 0..=rights {
        theta[n * width + cemetery] = spec.cemetery_value(rights - n);
    }
    for i in (0..cemetery).rev() {
        let price = prices[i];
        let rho = spec.refraction(i);
        let cap = spec.volume(i, price);
        for n in 0..=rights {
            let left = rights - n;
            if left == 0 {
                theta[n * width + i] = 0.0;
                continue;
            }
            let mut best = theta[n * width + i + 1] + step(left, i);
            let mut value = 0.0;
            let mut factor = 1.0;
            for nu in 1..=cap.min(left) {
                let p = n + nu;
                value += factor * spec.u(p, i, price);
                factor *= spec.v(p, i, price);
                let pen = if left == nu { 0.0 } else { jump(left - nu, i) };
                let cand = value + factor * (theta[(n + nu) * width + rho] + pen);
                if cand > best {
                    best = cand;
                }
            }
            theta[n * width + i] = best;
        }
    }
    ThetaState { width, theta }
}

/// `theta` with penalties read off value-process samples.
pub fn theta_state(spec: &ContractSpec, snell: &SnellPath, prices: &[f64]) -> ThetaState {
    theta_with(
        spec,
        prices,
        |l, i| snell.e_one(l, i) - snell.yhat(l, i + 1),
        |l, i| snell.e_rho(l, i) - snell.yhat(l, spec.refraction(i)),
    )
}

/// `theta^{0,L}_0` along one outer path.
pub fn theta_recursion(spec: &ContractSpec, snell: &SnellPath, prices: &[f64]) -> f64 {
    theta_state(spec, snell, prices).value()
}

/// Explicit pathwise maximum over all admissible chains from date 0, for the
/// same penalty inputs as [`theta_with`]. Exponential in `L`; for checks only.
pub fn theta_by_enumeration<S, J>(spec: &ContractSpec, prices: &[f64], step: S, jump: J) -> f64
where
    S: Fn(usize, usize) -> f64,
    J: Fn(usize, usize) -> f64,
{
    let rights = spec.rights();
    let mut best = f64::NEG_INFINITY;
    for chain in admissible_chains(spec, 0, rights, prices) {
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut prev = 0;
        for (idx, &d) in chain.iter().enumerate() {
            let k = idx + 1;
            let l = rights - k + 1;
            let mut term = spec.u(k, d, prices[d]);
            if k == 1 || d == prev {
                // waiting from j_{k-1} (or date 0) to j_k
                term += (prev..d).map(|r| step(l, r)).sum::<f64>();
            } else {
                let rho = spec.refraction(prev);
                term += jump(l, prev) + (rho..d).map(|r| step(l, r)).sum::<f64>();
            }
            total += weight * term;
            weight *= spec.v(k, d, prices[d]);
            prev = d;
        }
        best = best.max(total);
    }
    best
}

/// Pathwise maximum over admissible chains from `start` of the gap bound on
/// `Y*_start - Y_start`, with value-process inputs `snell`.
pub fn snell_gap(spec: &ContractSpec, snell: &SnellPath, prices: &[f64], start: usize) -> f64 {
    let rights = spec.rights();
    let mut best = f64::NEG_INFINITY;
    for chain in admissible_chains(spec, start, rights, prices) {
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut prev: Option<usize> = None;
        for (idx, &d) in chain.iter().enumerate() {
            let k = idx + 1;
            let l = rights - k + 1;
            let from = match prev {
                None => start,
                Some(p) => spec.refraction(p),
            };
            for r in from..d {
                total += weight * (snell.e_one(l, r) - snell.yhat(l, r));
            }
            if prev.is_none_or(|p| d > p) {
                total += weight * (exercise_value(spec, snell, k, d, prices[d]) - snell.yhat(l, d));
            }
            weight *= spec.v(k, d, prices[d]);
            prev = Some(d);
        }
        best = best.max(total);
    }
    best
}

/// `max_n sum_{p=k}^{k+n-1} U^p prod V + prod V * E_d Y^{L-k-n+1}_{rho(d)}`.
fn exercise_value(spec: &ContractSpec, snell: &SnellPath, k: usize, date: usize, price: f64) -> f64 {
    let left = spec.rights() - k + 1;
    let mut best = f64::NEG_INFINITY;
    let mut value = 0.0;
    let mut factor = 1.0;
    for n in 1..=spec.volume(date, price).min(left) {
        let p = k + n - 1;
        value += factor * spec.u(p, date, price);
        factor *= spec.v(p, date, price);
        let rest = left - n;
        let cont = if rest == 0 { 0.0 } else { snell.e_rho(rest, date) };
        best = best.max(value + factor * cont);
    }
    best
}

/// The non-recursive bound on `Y*_start - Y_start`: positive parts of the
/// one-step defects summed over dates, plus the largest exercise defect per
/// right, each weighted by products of pathwise maxima of `V`.
pub fn corollary_bound(spec: &ContractSpec, snell: &SnellPath, prices: &[f64], start: usize) -> f64 {
    let rights = spec.rights();
    let cemetery = spec.cemetery();
    // vmax[k] = prod_{l <= k} max_{j >= start} V^l_j
    let mut vmax = vec![1.0; rights + 1];
    for k in 1..=rights {
        let m = (start..=cemetery)
            .map(|j| spec.v(k, j, prices[j]))
            .fold(f64::NEG_INFINITY, f64::max);
        vmax[k] = vmax[k - 1] * m;
    }
    let mut total = 0.0;
    for r in start..cemetery {
        let worst = (0..rights)
            .map(|k| vmax[k] * (snell.e_one(rights - k, r) - snell.yhat(rights - k, r)).max(0.0))
            .fold(0.0, f64::max);
        total += worst;
    }
    for k in 1..=rights {
        let l = rights - k + 1;
        let worst = (start..=cemetery)
            .map(|j| (exercise_value(spec, snell, k, j, prices[j]) - snell.yhat(l, j)).max(0.0))
            .fold(0.0, f64::max);
        total += vmax[k - 1] * worst;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperEstimate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Outer average of `theta^{0,L}_0`.
pub fn upper_bound(spec: &ContractSpec, outer: &PathSet, snell: &SnellSample) -> Result<UpperEstimate> {
    if snell.paths.len() != outer.count() || outer.count() == 0 {
        return Err(Error::invalid("snell", "need one sample per outer path"));
    }
    let m = chunked_reduce(
        outer.count(),
        |range| {
            let mut acc = Moments::default();
            for m in range {
                acc.push(theta_recursion(spec, &snell.paths[m], outer.path(m).prices()));
            }
            acc
        },
        |a, b| a.merge(&b),
    )
    .expect("nonempty");
    Ok(UpperEstimate {
        mean: m.mean,
        std: m.std_of_mean(),
        count: outer.count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
}

/// `[lower - 1.96 std_lower, upper + 1.96 std_upper]`.
pub fn confidence_interval(lower: &LowerEstimate, upper: &UpperEstimate) -> ConfidenceInterval {
    ConfidenceInterval {
        low: lower.mean - 1.96 * lower.std,
        high: upper.mean + 1.96 * upper.std,
    }
}

/// Writes `path,theta` for every outer path.
pub fn write_theta_csv<W: Write>(
    spec: &ContractSpec,
    outer: &PathSet,
    snell: &SnellSample,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "theta"])?;
    for (m, s) in snell.paths.iter().enumerate() {
        let theta = theta_recursion(spec, s, outer.path(m).prices());
        w.write_record([m.to_string(), format!("{theta:?}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `path,date,rights,yhat,e_one,e_rho` for the first `limit` paths.
pub fn write_snell_csv<W: Write>(snell: &SnellSample, limit: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "date", "rights", "yhat", "e_one", "e_rho"])?;
    for (m, s) in snell.paths.iter().take(limit).enumerate() {
        for l in 1..=s.rights() {
            for j in 0..=s.cemetery() {
                w.write_record([
                    m.to_string(),
                    j.to_string(),
                    l.to_string(),
                    format!("{:?}", s.yhat(l, j)),
                    format!("{:?}", s.e_one(l, j)),
                    format!("{:?}", s.e_rho(l, j)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::VolumeProfile;

    #[test]
    fn toy_theta_without_penalties() {
        let spec = ContractSpec::swing(0.0, 2, 2, VolumeProfile::Unit, 1).unwrap();
        let prices = [1.0, 3.0, 2.0, 0.0];
        let theta = theta_with(&spec, &prices, |_, _| 0.0, |_, _| 0.0);
        assert_eq!(theta.value(), 5.0);
        assert_eq!(theta.get(2, 0), 0.0);
        assert_eq!(theta.get(0, 3), 0.0);
        assert_eq!(theta_by_enumeration(&spec, &prices, |_, _| 0.0, |_, _| 0.0), 5.0);
    }

    #[test]
    fn exputil_cemetery_boundary() {
        let spec = ContractSpec::exp_utility(1.0, 1.0, 3, 2, VolumeProfile::Unit, 1).unwrap();
        let prices = [0.5, 0.5, 0.5, 0.0];
        let theta = theta_with(&spec, &prices, |_, _| 0.0, |_, _| 0.0);
        for n in 0..3 {
            assert_eq!(theta.get(n, 3), -1.0);
        }
        assert_eq!(theta.get(3, 3), 0.0);
        assert_eq!(theta.value(), -1.0);
    }

    #[test]
    fn zero_variance_interval() {
        let lower = LowerEstimate {
            mean: 1.0,
            std: 0.0,
            count: 1,
            value: vec![],
            one_step: vec![],
            refraction_step: vec![],
        };
        let upper = UpperEstimate {
            mean: 1.5,
            std: 0.0,
            count: 1,
        };
        let ci = confidence_interval(&lower, &upper);
        assert_eq!((ci.low, ci.high), (1.0, 1.5));
    }
}

//! End-to-end runs: regression, lower estimate, nested value-process sample,
//! upper estimate and confidence interval, and result tables over `(delta, L)`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{Cashflow, ContractSpec, Refraction, VolumeProfile};
use crate::dual::{confidence_interval, sample_snell, upper_bound, ConfidenceInterval, SnellSample, UpperEstimate};
use crate::error::{Error, Result};
use crate::model::{derive_seed, MarketModel, PathSet};
use crate::primal::{lower_bound, LowerEstimate};
use crate::regress::{fit_continuation, BasisSet, ContinuationTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Swing,
    #[serde(alias = "exp-utility")]
    Exputil,
    Liquidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Unit,
    Offpeak,
}

/// Everything one pricing run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sigma: f64,
    pub meanrev: f64,
    pub mu: f64,
    pub s0: f64,
    pub horizon: usize,
    pub preset: PresetKind,
    pub strike: f64,
    /// Risk aversion of the exponential-utility preset.
    pub alpha: f64,
    /// Impact decay and level of the liquidation preset.
    pub impact_a: f64,
    pub impact_b: f64,
    pub rights: usize,
    pub delta: usize,
    pub volume: VolumeKind,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n4: usize,
    pub seed: u64,
    /// Write 0 instead of the wall time so tables can be compared byte for byte.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sigma: 0.5,
            meanrev: 0.9,
            mu: 0.0,
            s0: 1.0,
            horizon: 50,
            preset: PresetKind::Swing,
            strike: 1.0,
            alpha: 1.0,
            impact_a: 0.02,
            impact_b: 0.1,
            rights: 2,
            delta: 1,
            volume: VolumeKind::Unit,
            n1: 1000,
            n2: 300_000,
            n3: 2000,
            n4: 100,
            seed: 2024,
            timing: true,
        }
    }
}

impl ExperimentConfig {
    /// Regression path count used for a volume profile when none is given.
    pub fn default_n1(volume: VolumeKind) -> usize {
        match volume {
            VolumeKind::Unit => 1000,
            VolumeKind::Offpeak => 10_000,
        }
    }

    pub fn model(&self) -> Result<MarketModel> {
        MarketModel::new(self.sigma, self.meanrev, self.mu, self.s0, self.horizon)
    }

    pub fn contract(&self) -> Result<ContractSpec> {
        let volume = match self.volume {
            VolumeKind::Unit => VolumeProfile::Unit,
            VolumeKind::Offpeak => VolumeProfile::OffPeak,
        };
        match self.preset {
            PresetKind::Swing => ContractSpec::swing(self.strike, self.rights, self.horizon, volume, self.delta),
            PresetKind::Exputil => {
                ContractSpec::exp_utility(self.alpha, self.strike, self.rights, self.horizon, volume, self.delta)
            }
            PresetKind::Liquidation => ContractSpec::new(
                self.rights,
                self.horizon,
                Cashflow::Liquidation {
                    a: self.impact_a,
                    b: self.impact_b,
                },
                volume,
                Refraction::Constant(self.delta),
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.contract()?;
        for (name, n) in [("n1", self.n1), ("n2", self.n2), ("n3", self.n3), ("n4", self.n4)] {
            if n < 1 {
                return Err(Error::invalid(name, "path counts must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub delta: usize,
    pub rights: usize,
    pub lower: f64,
    pub upper: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std_lower: f64,
    pub std_upper: f64,
    pub seconds: f64,
}

/// Intermediate objects of a run, for diagnostics.
pub struct RunArtifacts {
    pub table: ContinuationTable,
    pub lower: LowerEstimate,
    pub outer: PathSet,
    pub snell: SnellSample,
    pub upper: UpperEstimate,
    pub interval: ConfidenceInterval,
}

/// Runs all four steps, each with its own seed derived from `config.seed`.
/// A precomputed regression table may be passed in place of step 1.
pub fn run_with(config: &ExperimentConfig, table: Option<ContinuationTable>) -> Result<RunArtifacts> {
    config.validate()?;
    let model = config.model()?;
    let spec = config.contract()?;
    let table = match table {
        Some(t) => {
            if t.horizon() != spec.horizon() || t.rights() != spec.rights() {
                return Err(Error::invalid("table", "table does not match the contract"));
            }
            t
        }
        None => {
            let paths = model.simulate_paths(config.n1, derive_seed(config.seed, &[1]));
            fit_continuation(&model, &spec, &paths, &BasisSet::for_contract(&spec))?
        }
    };
    let lower = lower_bound(&table, &spec, &model, config.n2, derive_seed(config.seed, &[2]))?;
    let outer = model.simulate_paths(config.n3, derive_seed(config.seed, &[3]));
    let snell = sample_snell(
        &table,
        &spec,
        &model,
        &outer,
        config.n4,
        &lower,
        derive_seed(config.seed, &[4]),
    )?;
    let upper = upper_bound(&spec, &outer, &snell)?;
    let interval = confidence_interval(&lower, &upper);
    Ok(RunArtifacts {
        table,
        lower,
        outer,
        snell,
        upper,
        interval,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultRow> {
    let start = Instant::now();
    let run = run_with(config, None)?;
    Ok(row_from(config, &run, start))
}

fn row_from(config: &ExperimentConfig, run: &RunArtifacts, start: Instant) -> ResultRow {
    ResultRow {
        delta: config.delta,
        rights: config.rights,
        lower: run.lower.mean,
        upper: run.upper.mean,
        ci_low: run.interval.low,
        ci_high: run.interval.high,
        std_lower: run.lower.std,
        std_upper: run.upper.std,
        seconds: if config.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    }
}

/// One run per `(delta, L)` pair, rows in grid order (`delta` outer).
/// Rows run concurrently on a pool of `workers` threads; a failing row does
/// not stop the others.
pub fn run_table(
    base: &ExperimentConfig,
    deltas: &[usize],
    rights: &[usize],
    workers: usize,
) -> Result<Vec<Result<ResultRow>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let grid: Vec<ExperimentConfig> = deltas
        .iter()
        .flat_map(|&delta| {
            rights.iter().map(move |&l| ExperimentConfig {
                delta,
                rights: l,
                ..base.clone()
            })
        })
        .collect();
    Ok(pool.install(|| grid.par_iter().map(run_experiment).collect()))
}

pub const CSV_HEADER: &str = "delta,L,lower,upper,ci_low,ci_high,std_lower,std_upper,seconds";

/// Writes the header and one line per row.
pub fn write_rows<W: Write>(rows: &[ResultRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.delta,
            r.rights,
            sig6(r.lower),
            sig6(r.upper),
            sig6(r.ci_low),
            sig6(r.ci_high),
            sig6(r.std_lower),
            sig6(r.std_upper),
            sig6(r.seconds)
        )?;
    }
    Ok(())
}

/// `x` with 6 significant digits in the style of C's `%g`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(sig6(3.31162345), "3.31162");
        assert_eq!(sig6(10.0219), "10.0219");
        assert_eq!(sig6(0.00123456789), "0.00123457");
        assert_eq!(sig6(1.0e-5), "1e-05");
        assert_eq!(sig6(1234567.0), "1.23457e+06");
        assert_eq!(sig6(9.9999996), "10");
        assert_eq!(sig6(-0.5), "-0.5");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn empty_grid_writes_header_only() {
        let rows = run_table(&ExperimentConfig::default(), &[], &[2], 1).unwrap();
        assert!(rows.is_empty());
        let mut buf = Vec::new();
        write_rows(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn invalid_rows_fail_alone() {
        let base = ExperimentConfig {
            horizon: 5,
            n1: 50,
            n2: 100,
            n3: 4,
            n4: 3,
            ..Default::default()
        };
        let rows = run_table(&base, &[0, 1], &[1], 1).unwrap();
        assert!(rows[0].is_err());
        assert!(rows[1].is_ok());
    }
}

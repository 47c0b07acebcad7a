//! Least-squares Monte Carlo for the auxiliary dynamic program.
//!
//! Backward over dates, the pathwise value of the `q`-rights problem is
//! `max(C1[q], max_n imm_n + fac_n * Crho[q - n])`, where `C1` and `Crho` are
//! regressions of the realized values one step ahead and one refraction step
//! ahead on basis functions of the current price. All paths enter every
//! regression.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::ContractSpec;
use crate::error::{Error, Result};
use crate::model::{MarketModel, PathSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BasisFunction {
    Constant,
    Linear,
    Call { strike: f64 },
}

impl BasisFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            BasisFunction::Constant => 1.0,
            BasisFunction::Linear => x,
            BasisFunction::Call { strike } => (x - strike).max(0.0),
        }
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisFunction::Constant => write!(f, "const"),
            BasisFunction::Linear => write!(f, "linear"),
            BasisFunction::Call { strike } => write!(f, "call:{strike:?}"),
        }
    }
}

impl FromStr for BasisFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "const" => Ok(BasisFunction::Constant),
            "linear" => Ok(BasisFunction::Linear),
            other => {
                let strike = other
                    .strip_prefix("call:")
                    .and_then(|k| k.parse::<f64>().ok())
                    .ok_or_else(|| Error::MalformedTable(format!("unknown basis function `{other}`")))?;
                Ok(BasisFunction::Call { strike })
            }
        }
    }
}

/// Ordered regression basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet(Vec<BasisFunction>);

impl BasisSet {
    pub fn new(functions: Vec<BasisFunction>) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::invalid("basis", "need at least one function"));
        }
        Ok(BasisSet(functions))
    }

    /// `{1, x, (x - K)^+}`.
    pub fn standard(strike: f64) -> Self {
        BasisSet(vec![
            BasisFunction::Constant,
            BasisFunction::Linear,
            BasisFunction::Call { strike },
        ])
    }

    /// Standard basis for a contract. Contracts without a strike put the kink at 1.
    pub fn for_contract(spec: &ContractSpec) -> Self {
        Self::standard(spec.strike().unwrap_or(1.0))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.0
    }

    pub fn dot(&self, coeffs: &[f64], x: f64) -> f64 {
        self.0.iter().zip(coeffs).map(|(f, c)| c * f.eval(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContinuationKind {
    /// `E_j[Y_{j+1}]`.
    OneStep,
    /// `E_j[Y_{rho(j)}]`.
    Refraction,
}

impl ContinuationKind {
    fn label(self) -> &'static str {
        match self {
            ContinuationKind::OneStep => "one",
            ContinuationKind::Refraction => "rho",
        }
    }
}

/// Continuation values as a function of date, rights left and current price.
pub trait Continuation: Sync {
    fn continuation(&self, kind: ContinuationKind, date: usize, rights: usize, price: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
enum Row {
    Fit(Vec<f64>),
    Fixed(f64),
}

/// Fitted continuation values for dates `0..T` and rights `0..=L`. Dates at or
/// beyond `T` evaluate to the cemetery payoff of the remaining rights, which is
/// zero for swing contracts.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationTable {
    basis: BasisSet,
    horizon: usize,
    rights: usize,
    cemetery: Vec<f64>,
    one: Vec<Row>,
    rho: Vec<Row>,
}

impl ContinuationTable {
    /// Table with every fitted row set to the cemetery value.
    pub fn new(basis: BasisSet, horizon: usize, cemetery: Vec<f64>) -> Result<Self> {
        if cemetery.is_empty() || cemetery[0] != 0.0 {
            return Err(Error::invalid("cemetery", "need values for 0..=L with zero at 0"));
        }
        let rights = cemetery.len() - 1;
        let rows: Vec<Row> = (0..horizon)
            .flat_map(|_| cemetery.iter().map(|&c| Row::Fixed(c)))
            .collect();
        Ok(ContinuationTable {
            basis,
            horizon,
            rights,
            cemetery,
            one: rows.clone(),
            rho: rows,
        })
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rights(&self) -> usize {
        self.rights
    }

    fn index(&self, date: usize, rights: usize) -> usize {
        date * (self.rights + 1) + rights
    }

    fn rows_mut(&mut self, kind: ContinuationKind) -> &mut Vec<Row> {
        match kind {
            ContinuationKind::OneStep => &mut self.one,
            ContinuationKind::Refraction => &mut self.rho,
        }
    }

    fn check_slot(&self, date: usize, rights: usize) -> Result<()> {
        if date >= self.horizon || rights == 0 || rights > self.rights {
            return Err(Error::invalid(
                "slot",
                format!("need date < {} and rights in 1..={}", self.horizon, self.rights),
            ));
        }
        Ok(())
    }

    pub fn set_coefficients(
        &mut self,
        kind: ContinuationKind,
        date: usize,
        rights: usize,
        coeffs: Vec<f64>,
    ) -> Result<()> {
        self.check_slot(date, rights)?;
        if coeffs.len() != self.basis.len() {
            return Err(Error::invalid("coefficients", "length must match the basis"));
        }
        let idx = self.index(date, rights);
        self.rows_mut(kind)[idx] = Row::Fit(coeffs);
        Ok(())
    }

    pub fn set_fixed(&mut self, kind: ContinuationKind, date: usize, rights: usize, value: f64) -> Result<()> {
        self.check_slot(date, rights)?;
        let idx = self.index(date, rights);
        self.rows_mut(kind)[idx] = Row::Fixed(value);
        Ok(())
    }

    /// Fitted coefficients, or `None` for a fixed row.
    pub fn coefficients(&self, kind: ContinuationKind, date: usize, rights: usize) -> Option<&[f64]> {
        if date >= self.horizon || rights == 0 || rights > self.rights {
            return None;
        }
        let rows = match kind {
            ContinuationKind::OneStep => &self.one,
            ContinuationKind::Refraction => &self.rho,
        };
        match &rows[self.index(date, rights)] {
            Row::Fit(c) => Some(c),
            Row::Fixed(_) => None,
        }
    }

    pub fn eval(&self, kind: ContinuationKind, date: usize, rights: usize, price: f64) -> f64 {
        if rights == 0 {
            return 0.0;
        }
        if date >= self.horizon {
            return self.cemetery[rights];
        }
        let rows = match kind {
            ContinuationKind::OneStep => &self.one,
            ContinuationKind::Refraction => &self.rho,
        };
        match &rows[self.index(date, rights)] {
            Row::Fit(c) => self.basis.dot(c, price),
            Row::Fixed(v) => *v,
        }
    }

    /// Writes the table as CSV with a `#`-prefixed preamble.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let basis: Vec<String> = self.basis.functions().iter().map(|f| f.to_string()).collect();
        let cemetery: Vec<String> = self.cemetery.iter().map(|c| format!("{c:?}")).collect();
        writeln!(out, "# basis={}", basis.join(";"))?;
        writeln!(out, "# horizon={}", self.horizon)?;
        writeln!(out, "# cemetery={}", cemetery.join(";"))?;
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let mut header = vec!["date".to_string(), "rights".into(), "kind".into(), "form".into()];
        header.extend((0..self.basis.len()).map(|i| format!("c{i}")));
        w.write_record(&header)?;
        for kind in [ContinuationKind::OneStep, ContinuationKind::Refraction] {
            let rows = match kind {
                ContinuationKind::OneStep => &self.one,
                ContinuationKind::Refraction => &self.rho,
            };
            for date in 0..self.horizon {
                for rights in 1..=self.rights {
                    let mut rec = vec![date.to_string(), rights.to_string(), kind.label().to_string()];
                    match &rows[self.index(date, rights)] {
                        Row::Fit(c) => {
                            rec.push("fit".into());
                            rec.extend(c.iter().map(|x| format!("{x:?}")));
                        }
                        Row::Fixed(v) => {
                            rec.push("const".into());
                            rec.push(format!("{v:?}"));
                        }
                    }
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut basis = None;
        let mut horizon = None;
        let mut cemetery = None;
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.trim().split_once('=') else {
                    continue;
                };
                match key.trim() {
                    "basis" => {
                        let fs = value
                            .split(';')
                            .map(str::parse)
                            .collect::<Result<Vec<BasisFunction>>>()?;
                        basis = Some(BasisSet::new(fs)?);
                    }
                    "horizon" => {
                        horizon = Some(value.trim().parse::<usize>().map_err(|e| {
                            Error::MalformedTable(format!("horizon: {e}"))
                        })?)
                    }
                    "cemetery" => {
                        cemetery = Some(
                            value
                                .split(';')
                                .map(|v| v.trim().parse::<f64>())
                                .collect::<Result<Vec<_>, _>>()
                                .map_err(|e| Error::MalformedTable(format!("cemetery: {e}")))?,
                        )
                    }
                    _ => {}
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let missing = |what: &str| Error::MalformedTable(format!("missing `{what}` preamble"));
        let basis = basis.ok_or_else(|| missing("basis"))?;
        let horizon = horizon.ok_or_else(|| missing("horizon"))?;
        let cemetery = cemetery.ok_or_else(|| missing("cemetery"))?;
        let mut table = ContinuationTable::new(basis, horizon, cemetery)?;
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(body.as_bytes());
        let bad = |msg: String| Error::MalformedTable(msg);
        for rec in reader.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("short record {rec:?}")));
            let date: usize = field(0)?.parse().map_err(|e| bad(format!("date: {e}")))?;
            let rights: usize = field(1)?.parse().map_err(|e| bad(format!("rights: {e}")))?;
            let kind = match field(2)? {
                "one" => ContinuationKind::OneStep,
                "rho" => ContinuationKind::Refraction,
                other => return Err(bad(format!("unknown kind `{other}`"))),
            };
            let values = rec
                .iter()
                .skip(4)
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("value: {e}")))?;
            match field(3)? {
                "fit" => table.set_coefficients(kind, date, rights, values)?,
                "const" if values.len() == 1 => table.set_fixed(kind, date, rights, values[0])?,
                other => return Err(bad(format!("bad row form `{other}`"))),
            }
        }
        Ok(table)
    }
}

impl Continuation for ContinuationTable {
    fn continuation(&self, kind: ContinuationKind, date: usize, rights: usize, price: f64) -> f64 {
        self.eval(kind, date, rights, price)
    }
}

/// Minimum-norm least-squares solution of `design * coeffs = targets`, one
/// coefficient column per target column. Singular values below
/// `max(n, d) * eps * sigma_max` are dropped.
///
/// The design is reduced to its triangular factor by Householder QR first and
/// only the small `d x d` factor goes through the SVD; nalgebra's SVD of tall
/// rank-deficient matrices can return wrong factors.
pub fn least_squares(design: &DMatrix<f64>, targets: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = design.shape();
    if n < d {
        let svd = design.clone().svd(true, true);
        let tol = svd.singular_values.max() * n.max(d) as f64 * f64::EPSILON;
        return svd.solve(targets, tol).expect("U and V were requested");
    }
    let qr = design.clone().qr();
    let mut rhs = targets.clone();
    qr.q_tr_mul(&mut rhs);
    let r = qr.r();
    let svd = r.svd(true, true);
    let tol = svd.singular_values.max() * n.max(d) as f64 * f64::EPSILON;
    svd.solve(&rhs.rows(0, d).into_owned(), tol)
        .expect("U and V were requested")
}

/// Runs the backward regression over the paths of `paths` (dates `0..=T+1`).
pub fn fit_continuation(
    model: &MarketModel,
    spec: &ContractSpec,
    paths: &PathSet,
    basis: &BasisSet,
) -> Result<ContinuationTable> {
    let horizon = spec.horizon();
    if model.horizon != horizon {
        return Err(Error::HorizonMismatch {
            what: "model",
            found: model.horizon,
            expected: horizon,
        });
    }
    if paths.first_date() != 0 || paths.horizon() != horizon {
        return Err(Error::HorizonMismatch {
            what: "paths",
            found: paths.horizon(),
            expected: horizon,
        });
    }
    let n = paths.count();
    if n == 0 {
        return Err(Error::invalid("paths", "need at least one path"));
    }
    let rights = spec.rights();
    let stride = rights + 1;
    let cemetery_values: Vec<f64> = (0..=rights).map(|q| spec.cemetery_value(q)).collect();
    let mut table = ContinuationTable::new(basis.clone(), horizon, cemetery_values.clone())?;

    // values[date][m * stride + q]
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); horizon + 2];
    values[horizon + 1] = (0..n).flat_map(|_| cemetery_values.iter().copied()).collect();

    let d = basis.len();
    for date in (0..=horizon).rev() {
        if date < horizon {
            let next_rho = spec.refraction(date);
            let design = DMatrix::from_fn(n, d, |m, c| basis.functions()[c].eval(paths.price(m, date)));
            let fit_rho = next_rho <= horizon;
            let cols = if fit_rho { 2 * rights } else { rights };
            let targets = DMatrix::from_fn(n, cols, |m, c| {
                let (src, q) = if c < rights {
                    (date + 1, c + 1)
                } else {
                    (next_rho, c - rights + 1)
                };
                values[src][m * stride + q]
            });
            let coeffs = least_squares(&design, &targets);
            for q in 1..=rights {
                let col = |c: usize| coeffs.column(c).iter().copied().collect::<Vec<f64>>();
                table.set_coefficients(ContinuationKind::OneStep, date, q, col(q - 1))?;
                if fit_rho {
                    table.set_coefficients(ContinuationKind::Refraction, date, q, col(rights + q - 1))?;
                } else {
                    table.set_fixed(ContinuationKind::Refraction, date, q, cemetery_values[q])?;
                }
            }
        }
        let mut current = vec![0.0; n * stride];
        let table_ref = &table;
        let fill = |(m, row): (usize, &mut [f64])| {
            let price = paths.price(m, date);
            for (q, slot) in row.iter_mut().enumerate().skip(1) {
                *slot = dp_value(spec, table_ref, date, q, price);
            }
        };
        if n * stride >= 1 << 12 {
            current.par_chunks_mut(stride).enumerate().for_each(fill);
        } else {
            current.chunks_mut(stride).enumerate().for_each(fill);
        }
        values[date] = current;
    }
    Ok(table)
}

/// One backward step of the dynamic program with approximate continuations.
pub fn dp_value<C: Continuation + ?Sized>(
    spec: &ContractSpec,
    cont: &C,
    date: usize,
    remaining: usize,
    price: f64,
) -> f64 {
    if remaining == 0 {
        return 0.0;
    }
    let first = spec.rights() - remaining + 1;
    let mut best = cont.continuation(ContinuationKind::OneStep, date, remaining, price);
    let mut value = 0.0;
    let mut factor = 1.0;
    for k in 1..=spec.volume(date, price).min(remaining) {
        let p = first + k - 1;
        value += factor * spec.u(p, date, price);
        factor *= spec.v(p, date, price);
        let cand = value + factor * cont.continuation(ContinuationKind::Refraction, date, remaining - k, price);
        if cand > best {
            best = cand;
        }
    }
    best
}

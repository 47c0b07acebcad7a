//! Exact solutions on small non-recombining trees.
//!
//! Two independent solvers are provided: the backward dynamic program over
//! nodes with exact conditional expectations, and a search over exercise
//! decisions one right at a time that only uses chain admissibility and chain
//! payoffs. The exact envelopes then feed the dual machinery, which must
//! reproduce the price on every path.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contract::{chain_payoff_from, is_admissible, Cashflow, ContractSpec, Refraction, VolumeProfile};
use crate::dual::{corollary_bound, snell_gap, theta_recursion, theta_with, SnellPath};
use crate::error::{Error, Result};
use crate::model::PricePath;
use crate::primal::policy_payoff;
use crate::regress::{Continuation, ContinuationKind};

/// Largest tree the dynamic program accepts.
pub const MAX_NODES: usize = 10_000;
/// Limits for the decision search.
pub const MAX_ENUMERATION_NODES: usize = 2_000;
pub const MAX_ENUMERATION_RIGHTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
struct Node {
    date: usize,
    price: f64,
    parent: Option<usize>,
    children: Vec<(usize, f64)>,
}

/// A finite probability space: a tree of spot prices over dates `0..=T`.
/// Node 0 is the root; the cemetery (price 0) is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTree {
    horizon: usize,
    nodes: Vec<Node>,
}

impl FiniteTree {
    /// Tree with a single root at price `s0`; grow it with [`FiniteTree::add_child`].
    pub fn new(horizon: usize, s0: f64) -> Result<Self> {
        if horizon < 1 || !(s0 > 0.0) {
            return Err(Error::invalid("tree", "need T >= 1 and a positive root price"));
        }
        Ok(FiniteTree {
            horizon,
            nodes: vec![Node {
                date: 0,
                price: s0,
                parent: None,
                children: Vec::new(),
            }],
        })
    }

    /// Adds a child of `parent` reached with `probability`; returns its id.
    pub fn add_child(&mut self, parent: usize, price: f64, probability: f64) -> Result<usize> {
        let date = self.nodes[parent].date + 1;
        if date > self.horizon {
            return Err(Error::invalid("tree", "children beyond the horizon"));
        }
        if !(price > 0.0) || !(0.0..=1.0).contains(&probability) {
            return Err(Error::invalid("tree", "need a positive price and a probability in [0, 1]"));
        }
        if self.nodes.len() >= MAX_NODES {
            return Err(Error::InstanceTooLarge(format!("more than {MAX_NODES} nodes")));
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            date,
            price,
            parent: Some(parent),
            children: Vec::new(),
        });
        self.nodes[parent].children.push((id, probability));
        Ok(id)
    }

    /// Single deterministic path with `prices` on dates `0..=T`.
    pub fn path(prices: &[f64]) -> Result<Self> {
        let mut tree = FiniteTree::new(prices.len().saturating_sub(1), prices[0])?;
        let mut node = 0;
        for &p in &prices[1..] {
            node = tree.add_child(node, p, 1.0)?;
        }
        Ok(tree)
    }

    /// Random tree with `branching` children per node, log-normal price moves
    /// and random transition probabilities.
    pub fn random(horizon: usize, branching: usize, s0: f64, seed: u64) -> Result<Self> {
        let total: usize = (0..=horizon).map(|t| branching.pow(t as u32)).sum();
        if total > MAX_NODES {
            return Err(Error::InstanceTooLarge(format!("{total} nodes exceed {MAX_NODES}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = FiniteTree::new(horizon, s0)?;
        let mut frontier = vec![0];
        for _ in 0..horizon {
            let mut next = Vec::new();
            for &node in &frontier {
                let weights: Vec<f64> = (0..branching).map(|_| rng.random_range(0.1..1.0)).collect();
                let sum: f64 = weights.iter().sum();
                let parent_price = tree.nodes[node].price;
                for w in weights {
                    let price = parent_price * rng.random_range(-0.6f64..0.6).exp();
                    next.push(tree.add_child(node, price, w / sum)?);
                }
            }
            frontier = next;
        }
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        for n in &self.nodes {
            if n.date < self.horizon {
                let total: f64 = n.children.iter().map(|c| c.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("tree", "child probabilities must sum to 1"));
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn date(&self, node: usize) -> usize {
        self.nodes[node].date
    }

    pub fn price(&self, node: usize) -> f64 {
        self.nodes[node].price
    }

    /// Nodes at the horizon.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].date == self.horizon)
    }

    /// Node ids from the root to `leaf`.
    pub fn ancestry(&self, leaf: usize) -> Vec<usize> {
        let mut ids = vec![leaf];
        while let Some(p) = self.nodes[*ids.last().unwrap()].parent {
            ids.push(p);
        }
        ids.reverse();
        ids
    }

    /// Prices along the path ending at `node`, padded with the cemetery's 0
    /// when `node` is a leaf.
    pub fn path_prices(&self, node: usize) -> Vec<f64> {
        let mut prices: Vec<f64> = self.ancestry(node).iter().map(|&n| self.nodes[n].price).collect();
        if self.nodes[node].date == self.horizon {
            prices.push(0.0);
        }
        prices
    }

    /// Probability of reaching `node` from the root.
    pub fn probability(&self, node: usize) -> f64 {
        let mut p = 1.0;
        let mut n = node;
        while let Some(parent) = self.nodes[n].parent {
            p *= self.nodes[parent]
                .children
                .iter()
                .find(|c| c.0 == n)
                .map(|c| c.1)
                .unwrap_or(0.0);
            n = parent;
        }
        p
    }

    /// `E[f(node at date target) | node]` for `target >= date(node)`, `target <= T`.
    pub fn expectation<F: Fn(usize) -> f64>(&self, node: usize, target: usize, f: &F) -> f64 {
        let n = &self.nodes[node];
        if n.date == target {
            return f(node);
        }
        n.children.iter().map(|&(c, p)| p * self.expectation(c, target, f)).sum()
    }
}

/// Snell envelopes `Y*^l` at every node for `l = 0..=L`, together with the
/// conditional means the dynamic program used.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    rights: usize,
    values: Vec<f64>,
    one_step: Vec<f64>,
    refraction_step: Vec<f64>,
}

impl ExactSolution {
    /// `Y*^L_0`.
    pub fn value(&self) -> f64 {
        self.values[self.rights]
    }

    pub fn envelope(&self, node: usize, l: usize) -> f64 {
        self.values[node * (self.rights + 1) + l]
    }

    /// `E_node Y*^l_{date + 1}`.
    pub fn one_step(&self, node: usize, l: usize) -> f64 {
        self.one_step[node * (self.rights + 1) + l]
    }

    /// `E_node Y*^l_{rho(date)}`.
    pub fn refraction_step(&self, node: usize, l: usize) -> f64 {
        self.refraction_step[node * (self.rights + 1) + l]
    }
}

fn check_instance(tree: &FiniteTree, spec: &ContractSpec) -> Result<()> {
    if tree.horizon != spec.horizon() {
        return Err(Error::HorizonMismatch {
            what: "tree",
            found: tree.horizon,
            expected: spec.horizon(),
        });
    }
    if tree.node_count() * (spec.rights() + 1) > MAX_NODES * 8 {
        return Err(Error::InstanceTooLarge("too many node and rights states".into()));
    }
    Ok(())
}

/// Conditional expectation of `values[., l]` at `target` (cemetery allowed).
fn expect_envelope(
    tree: &FiniteTree,
    spec: &ContractSpec,
    values: &[f64],
    node: usize,
    target: usize,
    l: usize,
) -> f64 {
    let stride = spec.rights() + 1;
    if target > tree.horizon {
        spec.cemetery_value(l)
    } else {
        tree.expectation(node, target, &|n| values[n * stride + l])
    }
}

/// Backward dynamic program with exact conditional expectations.
pub fn exact_value(tree: &FiniteTree, spec: &ContractSpec) -> Result<ExactSolution> {
    check_instance(tree, spec)?;
    let rights = spec.rights();
    let stride = rights + 1;
    let n = tree.node_count();
    let mut values = vec![0.0; n * stride];
    let mut one_step = vec![0.0; n * stride];
    let mut refraction_step = vec![0.0; n * stride];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&id| std::cmp::Reverse(tree.date(id)));
    for id in order {
        let date = tree.date(id);
        let price = tree.price(id);
        let rho = spec.refraction(date);
        for l in 1..=rights {
            one_step[id * stride + l] = expect_envelope(tree, spec, &values, id, date + 1, l);
            refraction_step[id * stride + l] = expect_envelope(tree, spec, &values, id, rho, l);
        }
        for l in 1..=rights {
            let first = rights - l + 1;
            let mut best = one_step[id * stride + l];
            for k in 1..=spec.volume(date, price).min(l) {
                let (imm, fac) = spec.immediate(first, k, date, price);
                best = best.max(imm + fac * refraction_step[id * stride + l - k]);
            }
            values[id * stride + l] = best;
        }
    }
    Ok(ExactSolution {
        rights,
        values,
        one_step,
        refraction_step,
    })
}

/// The optimal value found by searching over exercise decisions.
///
/// At every node the holder either exercises the next right (when the
/// extended chain stays admissible) or moves on; payoffs are evaluated only
/// once the chain is complete. Shares no code with [`exact_value`].
pub fn exact_value_enumeration(tree: &FiniteTree, spec: &ContractSpec) -> Result<f64> {
    check_instance(tree, spec)?;
    if tree.node_count() > MAX_ENUMERATION_NODES || spec.rights() > MAX_ENUMERATION_RIGHTS {
        return Err(Error::InstanceTooLarge(format!(
            "enumeration is limited to {MAX_ENUMERATION_NODES} nodes and {MAX_ENUMERATION_RIGHTS} rights"
        )));
    }
    let mut prefix = Vec::with_capacity(spec.rights());
    Ok(search(tree, spec, 0, &mut prefix))
}

fn search(tree: &FiniteTree, spec: &ContractSpec, node: usize, prefix: &mut Vec<usize>) -> f64 {
    let rights = spec.rights();
    let date = tree.date(node);
    let prices = || {
        let mut p = tree.path_prices(node);
        p.resize(spec.cemetery() + 1, 0.0);
        p
    };
    if prefix.len() == rights {
        return chain_payoff_from(spec, 1, prefix, &prices());
    }
    let mut best = f64::NEG_INFINITY;
    prefix.push(date);
    if is_admissible(spec, prefix, &prices()) {
        best = search(tree, spec, node, prefix);
    }
    prefix.pop();
    let wait = if date == tree.horizon {
        let cemetery = spec.cemetery();
        let len = prefix.len();
        prefix.resize(rights, cemetery);
        let v = chain_payoff_from(spec, 1, prefix, &prices());
        prefix.truncate(len);
        v
    } else {
        tree.nodes[node]
            .children
            .iter()
            .map(|&(c, p)| p * search(tree, spec, c, prefix))
            .sum()
    };
    best.max(wait)
}

/// Value-process inputs along the path ending at `leaf` taken from `solution`.
fn exact_snell_path(tree: &FiniteTree, spec: &ContractSpec, solution: &ExactSolution, leaf: usize) -> SnellPath {
    let rights = spec.rights();
    let mut snell = SnellPath::zeros(rights, spec.horizon());
    for (date, node) in tree.ancestry(leaf).into_iter().enumerate() {
        for l in 1..=rights {
            snell.set(
                l,
                date,
                solution.envelope(node, l),
                solution.one_step(node, l),
                solution.refraction_step(node, l),
            );
        }
    }
    for l in 1..=rights {
        let c = spec.cemetery_value(l);
        snell.set(l, spec.cemetery(), c, c, c);
    }
    snell
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualCheck {
    /// `max |theta^{0,L}_0 - Y*^L_0|` over paths.
    pub theta_deviation: f64,
    /// Largest pathwise gap bound with exact envelopes.
    pub gap: f64,
    /// Largest non-recursive bound with exact envelopes.
    pub corollary: f64,
}

/// Evaluates the dual quantities on every path with the exact envelopes.
pub fn verify_dual_exactness(tree: &FiniteTree, spec: &ContractSpec) -> Result<DualCheck> {
    let solution = exact_value(tree, spec)?;
    let target = solution.value();
    let mut check = DualCheck {
        theta_deviation: 0.0,
        gap: f64::NEG_INFINITY,
        corollary: f64::NEG_INFINITY,
    };
    for leaf in tree.leaves() {
        let prices = tree.path_prices(leaf);
        let snell = exact_snell_path(tree, spec, &solution, leaf);
        let theta = theta_recursion(spec, &snell, &prices);
        check.theta_deviation = check.theta_deviation.max((theta - target).abs());
        check.gap = check.gap.max(snell_gap(spec, &snell, &prices, 0));
        check.corollary = check.corollary.max(corollary_bound(spec, &snell, &prices, 0));
    }
    Ok(check)
}

/// `E[theta^{0,L}_0]` when the penalties come from the exact Doob
/// decomposition of an arbitrary adapted family `envelope(node, l)`.
pub fn expected_theta<F>(tree: &FiniteTree, spec: &ContractSpec, envelope: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    check_instance(tree, spec)?;
    let rights = spec.rights();
    let stride = rights + 1;
    let mut values = vec![0.0; tree.node_count() * stride];
    for node in 0..tree.node_count() {
        for l in 1..=rights {
            values[node * stride + l] = envelope(node, l);
        }
    }
    let mut total = 0.0;
    for leaf in tree.leaves() {
        let ids = tree.ancestry(leaf);
        let prices = tree.path_prices(leaf);
        let y = |l: usize, date: usize| {
            if date > tree.horizon {
                spec.cemetery_value(l)
            } else {
                values[ids[date] * stride + l]
            }
        };
        let e = |l: usize, date: usize, target: usize| {
            expect_envelope(tree, spec, &values, ids[date], target, l)
        };
        let theta = theta_with(
            spec,
            &prices,
            |l, i| e(l, i, i + 1) - y(l, i + 1),
            |l, i| {
                let rho = spec.refraction(i);
                e(l, i, rho) - y(l, rho)
            },
        );
        total += tree.probability(leaf) * theta.value();
    }
    Ok(total)
}

/// Exact continuation values on a tree, looked up by `(date, price)`.
pub struct TreeContinuation {
    rights: usize,
    horizon: usize,
    cemetery: Vec<f64>,
    lookup: HashMap<(usize, u64), usize>,
    solution: ExactSolution,
}

impl TreeContinuation {
    pub fn new(tree: &FiniteTree, spec: &ContractSpec, solution: ExactSolution) -> Result<Self> {
        let mut lookup = HashMap::new();
        for node in 0..tree.node_count() {
            if lookup.insert((tree.date(node), tree.price(node).to_bits()), node).is_some() {
                return Err(Error::invalid("tree", "two nodes share a date and price"));
            }
        }
        Ok(TreeContinuation {
            rights: spec.rights(),
            horizon: tree.horizon,
            cemetery: (0..=spec.rights()).map(|l| spec.cemetery_value(l)).collect(),
            lookup,
            solution,
        })
    }
}

impl Continuation for TreeContinuation {
    fn continuation(&self, kind: ContinuationKind, date: usize, rights: usize, price: f64) -> f64 {
        if rights == 0 {
            return 0.0;
        }
        if date > self.horizon {
            return self.cemetery[rights];
        }
        debug_assert!(rights <= self.rights);
        let node = self.lookup[&(date, price.to_bits())];
        match kind {
            ContinuationKind::OneStep => self.solution.one_step(node, rights),
            ContinuationKind::Refraction => self.solution.refraction_step(node, rights),
        }
    }
}

/// Expected payoff over the tree of the policy driven by `cont` from date 0.
pub fn policy_value<C: Continuation + ?Sized>(tree: &FiniteTree, spec: &ContractSpec, cont: &C) -> f64 {
    tree.leaves()
        .map(|leaf| {
            let prices = tree.path_prices(leaf);
            tree.probability(leaf) * policy_payoff(cont, spec, PricePath::new(0, &prices), 0, spec.rights())
        })
        .sum()
}

/// Which cashflow a random instance uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    Swing,
    ExpUtility,
    Liquidation,
}

/// A random small instance: `T <= 5`, `L <= 3`, volume caps in `{1, 2}`,
/// refraction period in `{1, 2, 3}`.
pub fn random_instance(kind: InstanceKind, seed: u64) -> Result<(FiniteTree, ContractSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(1..=5usize);
    let rights = rng.random_range(1..=3usize);
    let delta = rng.random_range(1..=3usize);
    let branching = if horizon >= 5 { 2 } else { rng.random_range(2..=3usize) };
    let caps: Vec<usize> = (0..=horizon).map(|_| rng.random_range(1..=2usize)).collect();
    let strike = rng.random_range(0.7..1.3);
    let cashflow = match kind {
        InstanceKind::Swing => Cashflow::Swing { strike },
        InstanceKind::ExpUtility => Cashflow::ExpUtility {
            alpha: rng.random_range(0.3..2.0),
            strike,
        },
        InstanceKind::Liquidation => Cashflow::Liquidation {
            a: 1.0 / (horizon as f64 + rng.random_range(0.0..3.0)),
            b: rng.random_range(0.05..0.5),
        },
    };
    let spec = ContractSpec::new(
        rights,
        horizon,
        cashflow,
        VolumeProfile::Schedule(caps),
        Refraction::Constant(delta),
    )?;
    let tree = FiniteTree::random(horizon, branching, 1.0, rng.random())?;
    Ok((tree, spec))
}

/// Worst-case deviations over a batch of random instances.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    /// `max |exact_value - exact_value_enumeration|`.
    pub cross_validation: f64,
    pub theta_deviation: f64,
    pub gap: f64,
    pub corollary: f64,
    /// `max (policy value with exact continuations - exact value)`, absolute.
    pub policy_deviation: f64,
}

impl OracleReport {
    pub fn passes(&self, tol_dual: f64, tol_cross: f64) -> bool {
        self.cross_validation < tol_cross
            && self.theta_deviation < tol_dual
            && self.gap.abs() < tol_dual
            && self.corollary.abs() < tol_dual
            && self.policy_deviation < tol_dual
    }
}

/// Runs every oracle check on `count` random instances cycling through the
/// three cashflows.
pub fn oracle_suite(count: usize, seed: u64) -> Result<OracleReport> {
    let kinds = [InstanceKind::Swing, InstanceKind::ExpUtility, InstanceKind::Liquidation];
    let mut report = OracleReport::default();
    for i in 0..count {
        let (tree, spec) = random_instance(kinds[i % 3], crate::model::derive_seed(seed, &[i as u64]))?;
        let exact = exact_value(&tree, &spec)?;
        let enumerated = exact_value_enumeration(&tree, &spec)?;
        let dual = verify_dual_exactness(&tree, &spec)?;
        let value = exact.value();
        let cont = TreeContinuation::new(&tree, &spec, exact)?;
        let policy = policy_value(&tree, &spec, &cont);
        report.instances += 1;
        report.cross_validation = report.cross_validation.max((value - enumerated).abs());
        report.theta_deviation = report.theta_deviation.max(dual.theta_deviation);
        report.gap = report.gap.max(dual.gap.abs());
        report.corollary = report.corollary.max(dual.corollary.abs());
        report.policy_deviation = report.policy_deviation.max((policy - value).abs());
    }
    Ok(report)
}

use multistop::contract::is_admissible;
use multistop::oracle::{exact_value, policy_value, random_instance, FiniteTree, InstanceKind, TreeContinuation};
use multistop::primal::{decide, lower_bound, run_policy};
use multistop::regress::{fit_continuation, Continuation};
use multistop::{BasisSet, ContinuationKind, ContractSpec, MarketModel, PricePath, VolumeProfile};
use proptest::prelude::*;

fn kind(i: u8) -> InstanceKind {
    match i % 3 {
        0 => InstanceKind::Swing,
        1 => InstanceKind::ExpUtility,
        _ => InstanceKind::Liquidation,
    }
}

/// A regression table fitted on simulated paths, applied on the tree.
fn fitted_for(spec: &ContractSpec, seed: u64) -> multistop::ContinuationTable {
    let model = MarketModel::new(0.5, 0.5, 0.0, 1.0, spec.horizon()).unwrap();
    let paths = model.simulate_paths(300, seed);
    fit_continuation(&model, spec, &paths, &BasisSet::for_contract(spec)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn policies_never_beat_the_exact_value(k in 0u8..3, seed in any::<u64>()) {
        let (tree, spec) = random_instance(kind(k), seed).unwrap();
        let exact = exact_value(&tree, &spec).unwrap();
        let table = fitted_for(&spec, seed);
        prop_assert!(policy_value(&tree, &spec, &table) <= exact.value() + 1e-10);
        let value = exact.value();
        let cont = TreeContinuation::new(&tree, &spec, exact).unwrap();
        prop_assert!((policy_value(&tree, &spec, &cont) - value).abs() < 1e-10);
    }

    #[test]
    fn policy_chains_are_admissible(k in 0u8..3, seed in any::<u64>(), start in 0usize..3) {
        let (tree, spec) = random_instance(kind(k), seed).unwrap();
        let table = fitted_for(&spec, seed ^ 1);
        for leaf in tree.leaves() {
            let prices = tree.path_prices(leaf);
            let start = start.min(spec.horizon());
            let out = run_policy(&table, &spec, PricePath::new(0, &prices), start, spec.rights(), 0);
            prop_assert_eq!(out.chain.len(), spec.rights());
            prop_assert!(out.chain.dates()[0] >= start);
            prop_assert!(is_admissible(&spec, out.chain.dates(), &prices));
        }
    }

    /// With one right per date and unit refraction the rule is the familiar
    /// "exercise when Z + C(l - 1) >= C(l)".
    #[test]
    fn unit_volume_rule(seed in any::<u64>(), date in 0usize..20, q in 1usize..4, price in 0.2f64..3.0) {
        let spec = ContractSpec::swing(1.0, 3, 20, VolumeProfile::Unit, 1).unwrap();
        let table = {
            let model = MarketModel::new(0.5, 0.9, 0.0, 1.0, 20).unwrap();
            fit_continuation(&model, &spec, &model.simulate_paths(200, seed), &BasisSet::standard(1.0)).unwrap()
        };
        let z = (price - 1.0f64).max(0.0);
        let go = z + table.continuation(ContinuationKind::Refraction, date, q - 1, price)
            >= table.continuation(ContinuationKind::OneStep, date, q, price);
        let d = decide(&table, &spec, date, q, price);
        prop_assert_eq!(d.exercise_now, usize::from(go));
        prop_assert_eq!(d.next_admissible, date + 1);
    }
}

#[test]
fn exact_continuations_on_the_toy_path() {
    let tree = FiniteTree::path(&[1.0, 3.0, 2.0]).unwrap();
    let spec = ContractSpec::swing(0.0, 2, 2, VolumeProfile::Unit, 1).unwrap();
    let cont = TreeContinuation::new(&tree, &spec, exact_value(&tree, &spec).unwrap()).unwrap();
    let prices = [1.0, 3.0, 2.0, 0.0];
    let out = run_policy(&cont, &spec, PricePath::new(0, &prices), 0, 2, 0);
    assert_eq!(out.chain.dates(), &[1, 2]);
    assert_eq!(out.payoff, 5.0);
}

#[test]
fn lower_bound_carries_companion_values() {
    let model = MarketModel::new(0.5, 0.9, 0.0, 1.0, 30).unwrap();
    let spec = ContractSpec::swing(1.0, 3, 30, VolumeProfile::Unit, 2).unwrap();
    let table = fit_continuation(&model, &spec, &model.simulate_paths(1000, 1), &BasisSet::standard(1.0)).unwrap();
    let est = lower_bound(&table, &spec, &model, 20_000, 2).unwrap();
    assert_eq!(est.value.len(), 4);
    assert_eq!(est.value[0], 0.0);
    assert_eq!(est.mean, est.value[3]);
    assert!(est.std > 0.0);
    // value from date 0 is at least the value from a later start, up to noise
    for l in 1..=3 {
        assert!(est.value[l] + 4.0 * est.std >= est.one_step[l], "l = {l}");
        assert!(est.one_step[l] + 4.0 * est.std >= est.refraction_step[l], "l = {l}");
        assert!(est.value[l] > est.value[l - 1]);
    }
}

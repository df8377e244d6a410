//! Randomized checks over synthetic cases and configurations.

use blackstart::caseio::{expand_node_breaker, export_metrics, export_plan};
use blackstart::model::Network;
use blackstart::report::export_report;
use blackstart::sequencer::{choose_next, run, Config, GeneratorKey, LoadKey};
use blackstart::synth::{synth_case, SynthSpec};
use proptest::prelude::*;

mod common;

use common::{bundled, check_critical_protection, check_stage1_units, check_stage_discipline};

fn synth(zones: usize, buses: usize, seed: u64) -> Network {
    expand_node_breaker(&synth_case(&SynthSpec {
        zones,
        buses_per_zone: buses,
        seed,
    }))
    .unwrap()
}

fn config() -> impl Strategy<Value = Config> {
    (
        prop_oneof![Just(0.0), Just(0.05), Just(0.3), Just(1.0)],
        prop_oneof![Just(0.5), Just(0.8), Just(1.0)],
        prop_oneof![Just(5.0), Just(20.0), Just(45.0)],
        any::<bool>(),
        prop_oneof![
            Just(GeneratorKey::MaxMw),
            Just(GeneratorKey::MinMw),
            Just(GeneratorKey::Distance)
        ],
        prop_oneof![Just(LoadKey::MinMw), Just(LoadKey::MaxMw)],
    )
        .prop_map(|(alpha, beta, inc, parallel, gkey, lkey)| Config {
            criterion1_alpha: alpha,
            criterion4_beta: beta,
            load_inc_mw: inc,
            parallel_subareas: parallel,
            criterion2_key: gkey,
            criterion3_key: lkey,
            ..Config::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn stage_discipline_holds(seed in 0u64..10_000, zones in 1usize..4, buses in 4usize..8, cfg in config()) {
        let net = synth(zones, buses, seed);
        let out = run(&net, &[], &cfg).unwrap();
        check_stage_discipline(&net, &out.plan, cfg.parallel_subareas).map_err(TestCaseError::fail)?;
        check_stage1_units(&net, &out.plan).map_err(TestCaseError::fail)?;
        check_critical_protection(&net, &out.plan).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn identical_inputs_give_identical_files(seed in 0u64..10_000, cfg in config()) {
        let net = synth(2, 5, seed);
        let a = run(&net, &[], &cfg).unwrap();
        let b = run(&net, &[], &cfg).unwrap();
        prop_assert_eq!(export_plan(&a.plan), export_plan(&b.plan));
        prop_assert_eq!(export_metrics(&a.plan), export_metrics(&b.plan));
        prop_assert_eq!(export_report(&a.plan, &a.network), export_report(&b.plan, &b.network));
    }

    #[test]
    fn criterion1_is_scale_free(
        headroom in 0.0f64..5_000.0,
        alpha in 0.0f64..=1.0,
        next in 0.1f64..500.0,
        k in prop_oneof![Just(0.5f64), Just(2.0), Just(4.0), Just(0.25)],
    ) {
        prop_assert_eq!(choose_next(headroom, alpha, Some(next), true), choose_next(headroom * k, alpha, Some(next * k), true));
    }
}

#[test]
fn stage_discipline_on_bundled_case() {
    let net = bundled();
    let plan = run(&net, &[], &Config::default()).unwrap().plan;
    check_stage_discipline(&net, &plan, true).unwrap();
    check_stage1_units(&net, &plan).unwrap();
    check_critical_protection(&net, &plan).unwrap();
}

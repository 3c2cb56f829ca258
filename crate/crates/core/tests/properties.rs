//! Invariants checked over generated inputs.

use num_rational::Ratio;
use proptest::prelude::*;
use vita_sim::dataflow::{run_model_vita, simulate, AcceleratorSpec, Phase, TimingOnly};
use vita_sim::dse::{
    balance_residual, enumerate_configs, mac_units, search_optimal, ConfigBounds, ResourceBudget,
};
use vita_sim::golden::{golden_model, toy_model, EncoderDims};
use vita_sim::modelzoo::{
    build_workload, builtin_model, mac_breakdown, ImageDims, MacCounting, ModelSpec, StageSpec,
};
use vita_sim::perfmodel::{analyze, validate_against_trace};
use vita_sim::quant::{quantize, read_tensor, requantize, write_tensor, QTensor};

fn plain_model(d: u32, heads: u32, m: u32, depth: u32, patch: u32) -> ModelSpec {
    ModelSpec {
        name: "generated".into(),
        patch_size: patch,
        stages: vec![StageSpec {
            depth,
            latent_dim: d,
            heads,
            mlp_hidden: m,
            window: None,
            patch_merge_in: false,
        }],
        include_class_token: false,
        mac_counting: MacCounting::AllMatmuls,
    }
}

fn small_model() -> impl Strategy<Value = (ModelSpec, ImageDims)> {
    (1u32..=4, 1u32..=24, 1u32..=96, 1u32..=3, 2u32..=12).prop_map(|(k, dh, m, depth, side)| {
        (plain_model(k * dh, k, m, depth, 1), ImageDims::square(side))
    })
}

fn small_config() -> impl Strategy<Value = [u32; 4]> {
    prop::array::uniform4(1u32..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn mac_fractions_sum_to_one((model, image) in small_model()) {
        let b = mac_breakdown(&build_workload(&model, &image).unwrap()).unwrap();
        prop_assert_eq!(b.msa + b.mlp + b.patch_merge, Ratio::from_integer(1));
    }

    #[test]
    fn report_invariants((model, image) in small_model(), cfg in small_config()) {
        let spec = AcceleratorSpec::with_config(cfg[0], cfg[1], cfg[2], cfg[3]);
        let r = analyze(&build_workload(&model, &image).unwrap(), &spec).unwrap();
        prop_assert_eq!(r.phases.total(), r.total_cycles);
        prop_assert!(r.hue > 0.0 && r.hue <= 1.0);
        prop_assert!((r.fps * r.energy_j - spec.power_w).abs() < 1e-9);
        prop_assert_eq!(r.mac_units, mac_units(cfg));
    }

    #[test]
    fn analytical_matches_trace((model, image) in small_model(), cfg in small_config(), overlap in any::<bool>()) {
        let spec = AcceleratorSpec {
            overlap_projection: overlap,
            ..AcceleratorSpec::with_config(cfg[0], cfg[1], cfg[2], cfg[3])
        };
        let w = build_workload(&model, &image).unwrap();
        let r = analyze(&w, &spec).unwrap();
        let s = simulate(&w.stages, &spec, &mut TimingOnly).unwrap();
        if r.peak_bytes_per_cycle <= spec.dram_bytes_per_cycle() {
            let d = validate_against_trace(&r, &s);
            prop_assert!(d.is_ok(), "{:?}", d);
        } else {
            prop_assert!(r.total_cycles >= s.trace.span, "{} < {}", r.total_cycles, s.trace.span);
        }
    }

    #[test]
    fn schedules_are_legal_and_spans_tile((model, image) in small_model(), cfg in small_config(), overlap in any::<bool>()) {
        let spec = AcceleratorSpec {
            overlap_projection: overlap,
            ..AcceleratorSpec::with_config(cfg[0], cfg[1], cfg[2], cfg[3])
        };
        let w = build_workload(&model, &image).unwrap();
        let s = simulate(&w.stages, &spec, &mut TimingOnly).unwrap();
        prop_assert!(s.trace.find_overlap().is_none());
        let mut t = 0;
        for sp in &s.spans {
            prop_assert_eq!(sp.start, t);
            t = sp.end;
        }
        prop_assert_eq!(t, s.trace.span);
        prop_assert_eq!(s.spans.last().map(|p| p.phase), Some(Phase::Store));
    }

    #[test]
    fn extra_overhead_lowers_hue((model, image) in small_model(), cfg in small_config(), drain in 1u64..64) {
        let base = AcceleratorSpec::with_config(cfg[0], cfg[1], cfg[2], cfg[3]);
        let slower = AcceleratorSpec { phase_drain_cycles: base.phase_drain_cycles + drain, ..base.clone() };
        let w = build_workload(&model, &image).unwrap();
        let a = analyze(&w, &base).unwrap();
        let b = analyze(&w, &slower).unwrap();
        prop_assert!(b.total_cycles > a.total_cycles);
        prop_assert!(b.hue < a.hue);
    }

    #[test]
    fn residual_zero_iff_balanced(cfg in prop::array::uniform4(1u32..=16), d in 1u64..2048, n in 1u64..2048) {
        let [k1, k2, k3, k4] = cfg.map(u64::from);
        let zero = balance_residual(cfg, d, n) == Ratio::from_integer(0);
        prop_assert_eq!(zero, d * k3 * k4 == n * k1 * k2);
    }

    #[test]
    fn dataflow_matches_golden(
        k in 1usize..=4, dh in 1usize..=16, n in 1usize..=24, m in 1usize..=48, depth in 1usize..=2,
        cfg in small_config(), seed in any::<u64>(),
    ) {
        let dims = EncoderDims { tokens: n, dim: k * dh, heads: k, mlp_hidden: m, depth };
        let (w, x, _, _) = toy_model(dims, seed).unwrap();
        let spec = AcceleratorSpec::with_config(cfg[0], cfg[1], cfg[2], cfg[3]);
        let (out, _) = run_model_vita(&w, &x, &spec).unwrap();
        let golden = golden_model(&w, &x).unwrap();
        prop_assert_eq!(out.data(), golden.data());
    }

    #[test]
    fn requantize_saturates(acc in any::<i32>(), bias in any::<i32>(), mult in -4.0f64..4.0) {
        let q = requantize(acc, bias, mult);
        prop_assert!((-127..=127).contains(&q));
    }

    #[test]
    fn quantization_error_is_half_a_step(values in prop::collection::vec(-10.0f64..10.0, 1..64), scale in 0.01f64..0.2) {
        let t = quantize(&values, vec![values.len()], scale).unwrap();
        for (v, q) in values.iter().zip(t.dequantize()) {
            if v.abs() <= 127.0 * scale {
                prop_assert!((v - q).abs() <= scale / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn tensor_io_round_trips(rows in 1usize..8, cols in 1usize..8, seed in any::<i8>(), scale in 1e-3f64..1.0) {
        let data: Vec<i8> = (0..rows * cols).map(|i| seed.wrapping_add(i as i8).max(-127)).collect();
        let t = QTensor::new(vec![rows, cols], data, scale).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        prop_assert_eq!(read_tensor(buf.as_slice()).unwrap(), t);
    }
}

/// At fixed MAC-unit count and without tiling padding, ViT-B/16 utilization
/// never improves as the engine balance residual grows.
#[test]
fn hue_monotone_in_residual_at_fixed_units() {
    let w = build_workload(&builtin_model("vit_b16").unwrap(), &ImageDims::square(256)).unwrap();
    let configs = enumerate_configs(
        &ResourceBudget::zc7020(),
        &ConfigBounds::default(),
        &w.stages,
        &AcceleratorSpec::default(),
    )
    .unwrap();
    let padding_free = |c: &[u32; 4]| {
        let [k1, k2, k3, k4] = c.map(u64::from);
        256 % k1 == 0 && 768 % k2 == 0 && 64 % k3 == 0 && 64 % k4 == 0
    };
    let mut by_units: std::collections::BTreeMap<u64, Vec<(Ratio<u64>, f64)>> = Default::default();
    for c in configs.into_iter().filter(padding_free) {
        let spec = AcceleratorSpec::with_config(c[0], c[1], c[2], c[3]);
        let hue = analyze(&w, &spec).unwrap().hue;
        by_units
            .entry(mac_units(c))
            .or_default()
            .push((balance_residual(c, 768, 256), hue));
    }
    let mut pairs = 0;
    for group in by_units.values() {
        for a in group {
            for b in group.iter().filter(|b| a.0 < b.0) {
                pairs += 1;
                assert!(a.1 >= b.1 - 1e-12, "{a:?} vs {b:?}");
            }
        }
    }
    assert!(pairs > 100, "only {pairs} comparable pairs");
}

#[test]
fn every_enumerated_config_is_feasible() {
    let w = build_workload(&builtin_model("deit_s").unwrap(), &ImageDims::square(224)).unwrap();
    for budget in [ResourceBudget::zc7020(), ResourceBudget::zcu102()] {
        let cap = (1.0 - budget.control_lut_reserve) * budget.lut_budget as f64;
        let configs = enumerate_configs(
            &budget,
            &ConfigBounds::default(),
            &w.stages,
            &AcceleratorSpec::default(),
        )
        .unwrap();
        for c in configs {
            assert!((mac_units(c) * budget.luts_per_mac) as f64 <= cap, "{c:?}");
            let spec = budget.apply(&AcceleratorSpec::with_config(c[0], c[1], c[2], c[3]));
            assert!(
                analyze(&w, &spec).unwrap().check_resources().is_ok(),
                "{c:?}"
            );
        }
    }
}

#[test]
fn dse_is_deterministic_across_thread_counts() {
    let model = builtin_model("deit_t").unwrap();
    let run = |threads| {
        search_optimal(
            &model,
            &ImageDims::square(224),
            &ResourceBudget::zc7020(),
            &ConfigBounds::uniform(1, 12),
            &AcceleratorSpec::default(),
            Some(threads),
        )
        .unwrap()
    };
    let a = serde_json::to_string(&run(1)).unwrap();
    let b = serde_json::to_string(&run(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn deit_t_search_beats_reference_residual() {
    let r = search_optimal(
        &builtin_model("deit_t").unwrap(),
        &ImageDims::square(224),
        &ResourceBudget::zc7020(),
        &ConfigBounds::default(),
        &AcceleratorSpec::default(),
        None,
    )
    .unwrap();
    assert!(r.top().residual() < balance_residual([16, 6, 8, 4], 192, 196));
}

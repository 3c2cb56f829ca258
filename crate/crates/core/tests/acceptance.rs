//! Acceptance criteria 1-10. Prints one [PASS]/[FAIL] line per criterion and
//! fails if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vita_sim::dataflow::{
    first_divergence, run_model_vita, simulate, AcceleratorSpec, TimingOnly,
    DEFAULT_LN_ELEMS_PER_CYCLE,
};
use vita_sim::dse::{search_optimal, ConfigBounds, ResourceBudget};
use vita_sim::golden::{cosine_similarity, float_forward, golden_model, toy_model, EncoderDims};
use vita_sim::modelzoo::{
    build_workload, builtin_model, mac_breakdown, memory_footprint, ImageDims, BUILTIN_MODELS,
};
use vita_sim::perfmodel::reference::{reference_perf, REFERENCE_MAC_SPLIT, REFERENCE_PERF};
use vita_sim::perfmodel::{analyze, calibrate_ln_rate, validate_against_trace, PerfReport};

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let mut o = f();
    let dt = t0.elapsed();
    if dt > limit {
        o.pass = false;
        o.detail.push_str(&format!("; took {dt:.2?} > {limit:?}"));
    } else {
        o.detail.push_str(&format!("; {dt:.2?}"));
    }
    o
}

fn report(name: &str, side: u32) -> PerfReport {
    let w = build_workload(&builtin_model(name).unwrap(), &ImageDims::square(side)).unwrap();
    analyze(&w, &AcceleratorSpec::default()).unwrap()
}

fn c1_mac_split() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &REFERENCE_MAC_SPLIT {
        let w = build_workload(
            &builtin_model(r.model).unwrap(),
            &ImageDims::square(r.image_side),
        )
        .unwrap();
        let b = mac_breakdown(&w).unwrap();
        let tol = if r.model == "swin_t" { 0.5 } else { 0.2 };
        let worst = [
            (b.msa_pct() - r.msa_pct).abs(),
            (b.mlp_pct() - r.mlp_pct).abs(),
            (b.patch_merge_pct() - r.patch_merge_pct).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        pass &= worst <= tol;
        parts.push(format!("{}@{} max|d|={worst:.3}", r.model, r.image_side));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn c2_footprint() -> Outcome {
    let fp = memory_footprint(&builtin_model("vit_b16").unwrap(), &ImageDims::square(256)).unwrap();
    let s = fp.first();
    let pass = s.input == 192 * 1024
        && [s.w_q, s.w_k, s.w_v, s.w_msa]
            .iter()
            .all(|&b| b == 576 * 1024);
    Outcome {
        pass,
        detail: format!(
            "input {} B, W_Q {} W_K {} W_V {} W_msa {} B",
            s.input, s.w_q, s.w_k, s.w_v, s.w_msa
        ),
    }
}

fn c3_strong_rows() -> Outcome {
    let calibrated = calibrate_ln_rate(
        &builtin_model("vit_b16").unwrap(),
        &ImageDims::square(256),
        &AcceleratorSpec::default(),
        2.17,
    )
    .unwrap()
    .expect("2.17 fps reachable");
    let anchor = report("vit_b16", 256);
    let frozen = (calibrated - DEFAULT_LN_ELEMS_PER_CYCLE).abs() < 0.005
        && format!("{:.2}", anchor.fps) == "2.17";
    let mut pass = frozen;
    let mut parts = vec![format!(
        "calibration ln rate {calibrated:.4} (frozen {DEFAULT_LN_ELEMS_PER_CYCLE}), vit_b16@256 fps {:.4}",
        anchor.fps
    )];
    for (model, side, hue_tol, fps_tol) in [("vit_b16", 224, 3.0, 0.10), ("deit_s", 224, 3.0, 0.15)]
    {
        let r = report(model, side);
        let p = reference_perf(model, side).unwrap();
        let dh = 100.0 * r.hue - p.hue_pct;
        let df = (r.fps - p.fps) / p.fps;
        let hue_ok = dh.abs() <= hue_tol;
        let fps_ok = df.abs() <= fps_tol;
        pass &= hue_ok && fps_ok;
        parts.push(format!(
            "{model}@{side} HUE {:.2}% vs {} ({dh:+.2} pts, {}) fps {:.3} vs {} ({:+.1}%, {})",
            100.0 * r.hue,
            p.hue_pct,
            if hue_ok { "ok" } else { "out" },
            r.fps,
            p.fps,
            100.0 * df,
            if fps_ok { "ok" } else { "out" }
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c4_weak_rows() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (model, tol) in [("deit_t", 5.0), ("swin_t", 6.0)] {
        let r = report(model, 224);
        let p = reference_perf(model, 224).unwrap();
        let dh = 100.0 * r.hue - p.hue_pct;
        let ok = dh.abs() <= tol;
        pass &= ok;
        parts.push(format!(
            "{model} HUE {:.2}% vs {} ({dh:+.2} pts, {}); fps {:.3} vs {} ({:+.1}%, not gated)",
            100.0 * r.hue,
            p.hue_pct,
            if ok { "ok" } else { "out" },
            r.fps,
            p.fps,
            100.0 * (r.fps - p.fps) / p.fps
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c5_energy() -> Outcome {
    let power = AcceleratorSpec::default().power_w;
    let mut pass = true;
    let mut parts = Vec::new();
    for p in &REFERENCE_PERF {
        let e = power / p.fps;
        let ok = format!("{e:.3}") == format!("{:.3}", p.energy_j);
        pass &= ok;
        parts.push(format!("{:.3}", e));
        let r = report(p.model, p.image_side);
        pass &= (r.fps * r.energy_j - power).abs() < 1e-12;
    }
    Outcome {
        pass,
        detail: format!("0.88/fps = {}", parts.join(", ")),
    }
}

fn c6_dse() -> Outcome {
    let r = search_optimal(
        &builtin_model("vit_b16").unwrap(),
        &ImageDims::square(256),
        &ResourceBudget::zc7020(),
        &ConfigBounds::default(),
        &AcceleratorSpec::default(),
        None,
    )
    .unwrap();
    let top = r.top();
    Outcome {
        pass: top.config == [16, 6, 8, 4] && top.residual() == 0.into(),
        detail: format!(
            "{} configs, top-1 {:?} residual {} HUE {:.4}",
            r.evaluated, top.config, top.balance_residual, top.hue
        ),
    }
}

fn c7_bit_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cases = 120;
    let mut failures = Vec::new();
    for _ in 0..cases {
        let heads = rng.gen_range(1..=4usize);
        let dh = rng.gen_range(1..=(96 / heads));
        let dims = EncoderDims {
            tokens: rng.gen_range(1..=64),
            dim: heads * dh,
            heads,
            mlp_hidden: rng.gen_range(1..=128),
            depth: rng.gen_range(1..=2),
        };
        let cfg: [u32; 4] = std::array::from_fn(|_| rng.gen_range(1..=8));
        let seed = rng.gen::<u64>();
        let spec = AcceleratorSpec {
            overlap_projection: rng.gen_bool(0.25),
            ..AcceleratorSpec::with_config(cfg[0], cfg[1], cfg[2], cfg[3])
        };
        let (w, x, _, _) = toy_model(dims, seed).unwrap();
        let g = golden_model(&w, &x).unwrap();
        let (o, s) = run_model_vita(&w, &x, &spec).unwrap();
        if g.data() != o.data() || s.trace.find_overlap().is_some() {
            failures.push(format!(
                "{dims:?} {cfg:?} seed {seed}: {:?}",
                first_divergence(&g, &o)
            ));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "{cases} triples, {} mismatches {}",
            failures.len(),
            failures.join(" | ")
        ),
    }
}

fn c8_bandwidth() -> Outcome {
    let spec = AcceleratorSpec::default();
    let w = build_workload(&builtin_model("vit_b16").unwrap(), &ImageDims::square(256)).unwrap();
    let r = analyze(&w, &spec).unwrap();
    let s = simulate(&w.stages, &spec, &mut TimingOnly).unwrap();
    let limit = spec.dram_bytes_per_cycle();
    let peaks_ok = r.bandwidth.per_phase.iter().all(|(_, d)| *d < limit);
    let trace_stall = s.trace.stall_cycles();
    Outcome {
        pass: r.avg_bytes_per_cycle < limit
            && r.peak_bytes_per_cycle < limit
            && peaks_ok
            && r.phases.stall == 0
            && trace_stall == 0,
        detail: format!(
            "avg {:.3} peak {:.3} B/cycle (limit {limit}); stalls analytic {} trace {trace_stall}",
            r.avg_bytes_per_cycle, r.peak_bytes_per_cycle, r.phases.stall
        ),
    }
}

fn c9_model_trace() -> Outcome {
    let spec = AcceleratorSpec::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in BUILTIN_MODELS {
        for side in [224u32, 256] {
            let w = build_workload(&builtin_model(name).unwrap(), &ImageDims::square(side));
            let Ok(w) = w else { continue };
            let r = analyze(&w, &spec).unwrap();
            let s = simulate(&w.stages, &spec, &mut TimingOnly).unwrap();
            let rel = (r.total_cycles as f64 - s.trace.span as f64).abs() / s.trace.span as f64;
            let phases_ok = validate_against_trace(&r, &s).is_ok();
            pass &= rel <= 0.01 && phases_ok;
            parts.push(format!(
                "{name}@{side} {:.4}%{}",
                100.0 * rel,
                if phases_ok { "" } else { " (phase divergence)" }
            ));
        }
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn c10_fidelity() -> Outcome {
    let dims = EncoderDims {
        tokens: 16,
        dim: 48,
        heads: 3,
        mlp_hidden: 96,
        depth: 2,
    };
    let mut worst = f64::INFINITY;
    for seed in 0..20 {
        let (w, x, fm, xf) = toy_model(dims, seed).unwrap();
        let q = golden_model(&w, &x).unwrap().dequantize();
        let f = float_forward(&fm, &xf).unwrap();
        worst = worst.min(cosine_similarity(&f, &q));
    }
    Outcome {
        pass: worst >= 0.99,
        detail: format!("min cosine over 20 seeds {worst:.5}"),
    }
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

#[test]
fn acceptance() {
    let s = Duration::from_secs;
    let criteria: Vec<Criterion> = vec![
        ("1 MAC split reproduction", s(1), c1_mac_split),
        ("2 memory footprint", s(1), c2_footprint),
        ("3 performance, strong rows", s(5), c3_strong_rows),
        ("4 performance, weak rows", s(5), c4_weak_rows),
        ("5 energy identity", s(1), c5_energy),
        ("6 DSE recovers (16,6,8,4)", s(120), c6_dse),
        ("7 bit-exact dataflow vs golden", s(120), c7_bit_exact),
        ("8 DRAM bandwidth below 1 word/cycle", s(5), c8_bandwidth),
        ("9 analytical vs trace within 1%", s(600), c9_model_trace),
        ("10 quantization fidelity", s(60), c10_fidelity),
    ];
    let mut failed = Vec::new();
    println!();
    for (name, limit, f) in criteria {
        let o = timed(limit, f);
        println!(
            "[{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

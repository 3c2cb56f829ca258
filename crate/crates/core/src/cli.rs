//! Command-line front end. Exit codes: 0 success, 1 domain failure
//! (mismatch, resource overflow, infeasible search, model divergence),
//! 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::dataflow::{
    first_divergence, run_model_vita_with_fault, simulate, AcceleratorSpec, Fault, TimingOnly,
};
use crate::dse::{search_optimal, ConfigBounds, ResourceBudget};
use crate::error::{Error, Result};
use crate::golden::{golden_model, toy_model, EncoderDims};
use crate::modelzoo::{
    build_workload, builtin_model, mac_breakdown, memory_footprint, stage_geometry, ImageDims,
    ModelSpec, BUILTIN_MODELS,
};
use crate::perfmodel::reference::{reference_mac_split, reference_perf, VIT_B16_256_FOOTPRINT};
use crate::perfmodel::{analyze, validate_against_trace, PerfReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Default toy encoder for `verify` without a model.
pub const TOY_DIMS: EncoderDims = EncoderDims {
    tokens: 16,
    dim: 32,
    heads: 2,
    mlp_hidden: 64,
    depth: 2,
};

#[derive(Parser, Debug)]
#[command(
    name = "vita-sim",
    version,
    about = "Functional, cycle and design-space model of a ViT edge accelerator"
)]
pub struct Cli {
    /// Emit a JSON envelope {command, version, inputs, results} instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// List builtin models.
    Models,
    /// MAC breakdown, token count and memory footprint of a model.
    Workload(WorkloadArgs),
    /// Run the golden reference and the scheduled int8 datapath and compare bytes.
    Verify(VerifyArgs),
    /// Analytical cycles, utilization, frame rate, energy and bandwidth.
    Perf(PerfArgs),
    /// Rank PE block shapes under an FPGA budget.
    Dse(DseArgs),
    /// Dump the event trace of the timing simulation as CSV.
    Trace(TraceArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Builtin model name (see `models`).
    #[arg(long, conflicts_with = "model_file")]
    pub model: Option<String>,
    /// Model description in TOML.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Input image as HxW or HxWxC.
    #[arg(long, default_value = "224x224")]
    pub image: String,
}

#[derive(Args, Debug, Clone)]
pub struct SpecArgs {
    /// Accelerator spec in TOML; unspecified fields keep their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// PE block shape override as k1,k2,k3,k4.
    #[arg(long, value_parser = parse_config)]
    pub config: Option<[u32; 4]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    Paper,
}

#[derive(Args, Debug)]
pub struct WorkloadArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Print deltas against published figures.
    #[arg(long, value_enum)]
    pub compare: Option<Reference>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Full-size single-stage model; omitted means the toy encoder.
    #[arg(long, conflicts_with = "model_file")]
    pub model: Option<String>,
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long, default_value = "224x224")]
    pub image: String,
    /// Override depth (layers) of the functional run.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test hook: perturb one MLP accumulator so the outputs must differ.
    #[arg(long)]
    pub inject_fault: bool,
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(Args, Debug)]
pub struct PerfArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_enum)]
    pub compare: Option<Reference>,
    /// Report configurations that overflow LUT or BRAM instead of failing.
    #[arg(long)]
    pub allow_overbudget: bool,
    /// Also run the event simulator and check the analytical model against it.
    #[arg(long)]
    pub validate: bool,
}

#[derive(Args, Debug)]
pub struct DseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Budget preset: zc7020 or zcu102.
    #[arg(long, default_value = "zc7020", conflicts_with = "budget_file")]
    pub budget: String,
    /// Budget in TOML (fields of the presets).
    #[arg(long)]
    pub budget_file: Option<PathBuf>,
    /// Spec supplying clock, power and overhead parameters.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of ranked configurations to print.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Worker threads (default: VITA_SIM_THREADS or all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Upper bound for k1 and k3 (k2 and k4 stay at 16).
    #[arg(long, default_value_t = 64)]
    pub max_k: u32,
    /// Emit the ranking as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn parse_config(s: &str) -> std::result::Result<[u32; 4], String> {
    let v: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<u32>| format!("expected k1,k2,k3,k4, got {} values", v.len()))
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Resource { .. }
        | Error::NoFeasibleConfig
        | Error::ModelDivergence(_)
        | Error::Numeric(_)
        | Error::OverflowRisk { .. }
        | Error::EmptyWorkload => EXIT_FAILURE,
        Error::UnknownModel(_)
        | Error::Shape(_)
        | Error::UnsupportedFunctionalModel(_)
        | Error::InvalidSpec(_)
        | Error::Parse(_)
        | Error::Io(_) => EXIT_USAGE,
    }
}

/// Parse `std::env::args` and run; returns the process exit code.
pub fn main_entry() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let res = match &cli.command {
        Command::Models => cmd_models(cli.json, out),
        Command::Workload(a) => cmd_workload(a, cli.json, out),
        Command::Verify(a) => cmd_verify(a, cli.json, out),
        Command::Perf(a) => cmd_perf(a, cli.json, out),
        Command::Dse(a) => cmd_dse(a, cli.json, out),
        Command::Trace(a) => cmd_trace(a, out),
    };
    match res {
        Ok(code) => code,
        // Downstream reader closed early (`| head`).
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn envelope(command: &str, inputs: Value, results: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs,
        "results": results,
    })
}

fn emit_json(out: &mut dyn Write, v: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn resolve_model(name: Option<&str>, file: Option<&PathBuf>) -> Result<ModelSpec> {
    match (name, file) {
        (_, Some(path)) => ModelSpec::load_toml(path),
        (Some(n), None) => builtin_model(n),
        (None, None) => builtin_model("vit_b16"),
    }
}

fn resolve_spec(args: &SpecArgs) -> Result<AcceleratorSpec> {
    let mut spec = match &args.spec {
        Some(p) => AcceleratorSpec::load_toml(p)?,
        None => AcceleratorSpec::default(),
    };
    if let Some([k1, k2, k3, k4]) = args.config {
        spec.k1 = k1;
        spec.k2 = k2;
        spec.k3 = k3;
        spec.k4 = k4;
    }
    spec.validate()?;
    Ok(spec)
}

fn model_inputs(model: &ModelSpec, image: &ImageDims) -> Value {
    json!({ "model": model.name, "image": image.to_string() })
}

fn cmd_models(as_json: bool, out: &mut dyn Write) -> Result<i32> {
    let models: Vec<ModelSpec> = BUILTIN_MODELS
        .iter()
        .map(|n| builtin_model(n))
        .collect::<Result<_>>()?;
    if as_json {
        emit_json(out, &envelope("models", json!({}), json!(models)))?;
        return Ok(EXIT_OK);
    }
    writeln!(
        out,
        "{:<8} {:>5} {:>6} {:>5} {:>6} {:>6}  window",
        "model", "patch", "stages", "depth", "dim", "heads"
    )?;
    for m in &models {
        let depth: u32 = m.stages.iter().map(|s| s.depth).sum();
        let s0 = &m.stages[0];
        writeln!(
            out,
            "{:<8} {:>5} {:>6} {:>5} {:>6} {:>6}  {}",
            m.name,
            m.patch_size,
            m.stages.len(),
            depth,
            s0.latent_dim,
            s0.heads,
            s0.window.map_or("-".to_string(), |w| w.to_string())
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_workload(a: &WorkloadArgs, as_json: bool, out: &mut dyn Write) -> Result<i32> {
    let model = resolve_model(a.model.model.as_deref(), a.model.model_file.as_ref())?;
    let image: ImageDims = a.model.image.parse()?;
    let w = build_workload(&model, &image)?;
    let b = mac_breakdown(&w)?;
    let fp = memory_footprint(&model, &image)?;
    let first = fp.first();
    let reference = a.compare.and_then(|_| {
        reference_mac_split(&model.name, image.height).filter(|_| image.height == image.width)
    });
    let footprint_ref =
        (a.compare.is_some() && model.name == "vit_b16" && image == ImageDims::square(256))
            .then_some(VIT_B16_256_FOOTPRINT);
    let measured_fp = [
        ("input", first.input),
        ("w_q", first.w_q),
        ("w_k", first.w_k),
        ("w_v", first.w_v),
        ("w_msa", first.w_msa),
    ];

    if as_json {
        let mut results = json!({
            "tokens": first.tokens,
            "stages": w.stages.iter().map(|g| json!({"tokens": g.tokens, "dim": g.dim, "heads": g.heads, "depth": g.depth})).collect::<Vec<_>>(),
            "total_macs": b.total_macs,
            "useful_macs": w.useful_macs(),
            "msa_pct": b.msa_pct(),
            "mlp_pct": b.mlp_pct(),
            "patch_merge_pct": b.patch_merge_pct(),
            "msa_fraction": b.msa.to_string(),
            "mlp_fraction": b.mlp.to_string(),
            "patch_merge_fraction": b.patch_merge.to_string(),
            "footprint": fp,
            "weight_bytes": fp.total_weight_bytes(&model),
        });
        if let Some(r) = reference {
            results["compare"] = json!({
                "msa_pct": r.msa_pct, "mlp_pct": r.mlp_pct, "patch_merge_pct": r.patch_merge_pct,
                "msa_delta": b.msa_pct() - r.msa_pct, "mlp_delta": b.mlp_pct() - r.mlp_pct,
                "patch_merge_delta": b.patch_merge_pct() - r.patch_merge_pct,
            });
        }
        if let Some(f) = footprint_ref {
            results["compare_footprint"] = json!(f
                .iter()
                .zip(measured_fp)
                .map(|((n, want), (_, got))| json!({"name": n, "bytes": got, "reference": want, "delta": got as i64 - *want as i64}))
                .collect::<Vec<_>>());
        }
        emit_json(
            out,
            &envelope("workload", model_inputs(&model, &image), results),
        )?;
        return Ok(EXIT_OK);
    }

    writeln!(out, "model {} image {}", model.name, image)?;
    for g in &w.stages {
        writeln!(
            out,
            "stage {}: N={} D={} heads={} depth={}",
            g.index, g.tokens, g.dim, g.heads, g.depth
        )?;
    }
    writeln!(
        out,
        "total MACs {}  (on-array useful {})",
        b.total_macs,
        w.useful_macs()
    )?;
    writeln!(
        out,
        "MSA {:.2}%  MLP {:.2}%  patch-merge {:.2}%",
        b.msa_pct(),
        b.mlp_pct(),
        b.patch_merge_pct()
    )?;
    if let Some(r) = reference {
        writeln!(
            out,
            "published MSA {:.1}% ({:+.2})  MLP {:.1}% ({:+.2})  patch-merge {:.1}% ({:+.2})",
            r.msa_pct,
            b.msa_pct() - r.msa_pct,
            r.mlp_pct,
            b.mlp_pct() - r.mlp_pct,
            r.patch_merge_pct,
            b.patch_merge_pct() - r.patch_merge_pct
        )?;
    } else if a.compare.is_some() {
        writeln!(out, "no published MAC split for this model and image")?;
    }
    writeln!(out, "first-stage footprint (bytes):")?;
    for (name, bytes) in measured_fp
        .iter()
        .chain([("w_fc1", first.w_fc1), ("w_fc2", first.w_fc2)].iter())
    {
        let kb = *bytes as f64 / 1024.0;
        match footprint_ref.and_then(|f| f.iter().find(|(n, _)| n == name).map(|p| p.1)) {
            Some(want) => writeln!(
                out,
                "  {name:<6} {bytes:>10} ({kb:.0} KB)  published {want} ({:+})",
                *bytes as i64 - want as i64
            )?,
            None => writeln!(out, "  {name:<6} {bytes:>10} ({kb:.0} KB)")?,
        }
    }
    writeln!(
        out,
        "weights, all layers: {} bytes",
        fp.total_weight_bytes(&model)
    )?;
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs, as_json: bool, out: &mut dyn Write) -> Result<i32> {
    let spec = resolve_spec(&a.spec)?;
    let (label, mut dims) = if a.model.is_none() && a.model_file.is_none() {
        ("toy".to_string(), TOY_DIMS)
    } else {
        let model = resolve_model(a.model.as_deref(), a.model_file.as_ref())?;
        if !model.is_single_plain_stage() {
            return Err(Error::UnsupportedFunctionalModel(model.name));
        }
        let image: ImageDims = a.image.parse()?;
        let tokens = stage_geometry(&model, &image)?[0].tokens as usize;
        (model.name.clone(), EncoderDims::from_model(&model, tokens)?)
    };
    if let Some(d) = a.depth {
        dims.depth = d;
    }
    let (weights, input, _, _) = toy_model(dims, a.seed)?;
    let golden = golden_model(&weights, &input)?;
    let fault = a.inject_fault.then_some(Fault {
        layer: 0,
        token: 0,
        col: 0,
    });
    if fault.is_some() && dims.depth == 0 {
        return Err(Error::Shape(
            "--inject-fault needs at least one layer".into(),
        ));
    }
    let (ours, schedule) = run_model_vita_with_fault(&weights, &input, &spec, fault)?;
    let divergence = first_divergence(&golden, &ours);
    let summary = schedule.trace.summary();
    let legal = schedule.trace.find_overlap().is_none();
    let ok = divergence.is_none() && legal;

    if as_json {
        let results = json!({
            "match": divergence.is_none(),
            "legal_schedule": legal,
            "first_divergence": divergence.map(|(r, c, g, o)| json!({"row": r, "col": c, "golden": g, "dataflow": o})),
            "dims": dims,
            "trace": summary,
        });
        let inputs = json!({"model": label, "seed": a.seed, "inject_fault": a.inject_fault, "config": spec.config()});
        emit_json(out, &envelope("verify", inputs, results))?;
    } else {
        writeln!(
            out,
            "{label}: N={} D={} heads={} M={} depth={} seed={} config={:?}",
            dims.tokens,
            dims.dim,
            dims.heads,
            dims.mlp_hidden,
            dims.depth,
            a.seed,
            spec.config()
        )?;
        match divergence {
            None => writeln!(out, "outputs byte-identical ({} bytes)", golden.len())?,
            Some((r, c, g, o)) => writeln!(
                out,
                "MISMATCH at token {r}, channel {c}: golden {g}, dataflow {o}"
            )?,
        }
        writeln!(
            out,
            "trace: {} events, span {} cycles, {} weight bytes fetched, {} stall cycles, {}",
            summary.events,
            summary.span,
            summary.fetched_bytes,
            summary.stall_cycles,
            if legal {
                "no resource conflicts"
            } else {
                "RESOURCE CONFLICT"
            }
        )?;
        for (name, e) in &summary.engines {
            writeln!(
                out,
                "  {name:<12} {:>8} events {:>12} busy {:>6.1}%",
                e.events,
                e.busy_cycles,
                100.0 * e.utilization
            )?;
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn perf_results(r: &PerfReport, reference: Option<Value>, validation: Option<Value>) -> Value {
    let mut v = json!(r);
    if let Some(x) = reference {
        v["compare"] = x;
    }
    if let Some(x) = validation {
        v["validation"] = x;
    }
    v
}

fn cmd_perf(a: &PerfArgs, as_json: bool, out: &mut dyn Write) -> Result<i32> {
    let model = resolve_model(a.model.model.as_deref(), a.model.model_file.as_ref())?;
    let image: ImageDims = a.model.image.parse()?;
    let spec = resolve_spec(&a.spec)?;
    let w = build_workload(&model, &image)?;
    let r = analyze(&w, &spec)?;
    if !a.allow_overbudget {
        r.check_resources()?;
    }
    let reference = a.compare.and_then(|_| {
        (image.height == image.width)
            .then(|| reference_perf(&model.name, image.height))
            .flatten()
    });
    let validation = if a.validate {
        let s = simulate(&w.stages, &spec, &mut TimingOnly)?;
        Some(validate_against_trace(&r, &s)?)
    } else {
        None
    };

    if as_json {
        let cmp = reference.map(|p| {
            json!({
                "hue_pct": p.hue_pct, "fps": p.fps, "energy_j": p.energy_j,
                "hue_delta_pts": 100.0 * r.hue - p.hue_pct,
                "fps_delta_rel": (r.fps - p.fps) / p.fps,
                "energy_delta": r.energy_j - p.energy_j,
            })
        });
        let inputs =
            json!({"model": model.name, "image": image.to_string(), "config": spec.config()});
        emit_json(
            out,
            &envelope(
                "perf",
                inputs,
                perf_results(&r, cmp, validation.map(|d| json!(d))),
            ),
        )?;
        return Ok(EXIT_OK);
    }

    writeln!(
        out,
        "model {} image {} config {:?} (U={})",
        r.model, r.image, r.config, r.mac_units
    )?;
    if r.starved {
        writeln!(
            out,
            "DRAM bandwidth is zero: every weight fetch stalls forever"
        )?;
        return Ok(EXIT_OK);
    }
    writeln!(out, "total cycles {}", r.total_cycles)?;
    for (name, c) in r.phases.named() {
        writeln!(
            out,
            "  {name:<12} {c:>12} ({:>5.2}%)",
            100.0 * c as f64 / r.total_cycles as f64
        )?;
    }
    writeln!(
        out,
        "HUE {:.2}%  fps {:.3}  energy {:.4} J",
        100.0 * r.hue,
        r.fps,
        r.energy_j
    )?;
    writeln!(
        out,
        "DRAM avg {:.3} B/cycle, peak {:.3} B/cycle, stalls {} cycles",
        r.avg_bytes_per_cycle, r.peak_bytes_per_cycle, r.phases.stall
    )?;
    writeln!(
        out,
        "BRAM peak {} / {} bytes{}  LUT {} / {}",
        r.bram_peak_bytes,
        r.bram_budget,
        if r.bram_fits { "" } else { " (OVER BUDGET)" },
        r.lut_usage,
        r.lut_budget
    )?;
    if let Some(p) = reference {
        writeln!(
            out,
            "published HUE {:.1}% ({:+.2} pts)  fps {:.2} ({:+.1}%)  energy {:.3} J ({:+.4})",
            p.hue_pct,
            100.0 * r.hue - p.hue_pct,
            p.fps,
            100.0 * (r.fps - p.fps) / p.fps,
            p.energy_j,
            r.energy_j - p.energy_j
        )?;
    } else if a.compare.is_some() {
        writeln!(out, "no published performance row for this model and image")?;
    }
    if let Some(d) = validation {
        writeln!(
            out,
            "event simulation: {} cycles ({:.4}% from analytical)",
            d.trace_total,
            100.0 * d.total_rel
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_dse(a: &DseArgs, as_json: bool, out: &mut dyn Write) -> Result<i32> {
    let model = resolve_model(a.model.model.as_deref(), a.model.model_file.as_ref())?;
    let image: ImageDims = a.model.image.parse()?;
    let budget = match &a.budget_file {
        Some(p) => ResourceBudget::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => ResourceBudget::preset(&a.budget)?,
    };
    let base = match &a.spec {
        Some(p) => AcceleratorSpec::load_toml(p)?,
        None => AcceleratorSpec::default(),
    };
    let bounds = ConfigBounds {
        k1: (1, a.max_k),
        k3: (1, a.max_k),
        ..ConfigBounds::default()
    };
    let r = search_optimal(&model, &image, &budget, &bounds, &base, a.threads)?;
    let top = a.top;
    if a.csv {
        r.write_csv(&mut *out, Some(top))?;
        return Ok(EXIT_OK);
    }
    if as_json {
        let inputs =
            json!({"model": model.name, "image": image.to_string(), "budget": budget, "top": top});
        let results = json!({
            "evaluated": r.evaluated,
            "ranked": r.ranked.iter().take(top).collect::<Vec<_>>(),
        });
        emit_json(out, &envelope("dse", inputs, results))?;
        return Ok(EXIT_OK);
    }
    writeln!(
        out,
        "{} on {}: {} feasible configurations (U <= {})",
        model.name,
        image,
        r.evaluated,
        budget.max_mac_units()
    )?;
    writeln!(
        out,
        "{:>4}  {:<16} {:>4} {:>12} {:>8} {:>8} {:>10} {:>6}",
        "rank", "k1,k2,k3,k4", "U", "cycles", "HUE%", "fps", "residual", "exact"
    )?;
    for (i, c) in r.ranked.iter().take(top).enumerate() {
        let [k1, k2, k3, k4] = c.config;
        writeln!(
            out,
            "{:>4}  {:<16} {:>4} {:>12} {:>8.2} {:>8.3} {:>10} {:>6}",
            i + 1,
            format!("{k1},{k2},{k3},{k4}"),
            c.mac_units,
            c.total_cycles,
            100.0 * c.hue,
            c.fps,
            c.balance_residual,
            c.balance_exact
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_trace(a: &TraceArgs, out: &mut dyn Write) -> Result<i32> {
    let model = resolve_model(a.model.model.as_deref(), a.model.model_file.as_ref())?;
    let image: ImageDims = a.model.image.parse()?;
    let spec = resolve_spec(&a.spec)?;
    let stages = stage_geometry(&model, &image)?;
    let s = simulate(&stages, &spec, &mut TimingOnly)?;
    match &a.out {
        Some(p) => s
            .trace
            .write_csv(std::io::BufWriter::new(std::fs::File::create(p)?))?,
        None => s.trace.write_csv(&mut *out)?,
    }
    Ok(EXIT_OK)
}

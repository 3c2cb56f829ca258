//! Schedule-faithful execution: the accelerator spec, the event simulator,
//! its buffer plan and trace, and the int8 datapath it drives.

mod buffers;
mod cost;
mod exec;
mod schedule;
mod spec;
mod trace;

pub use buffers::{
    mlp_passes, pass_ranges, plan_buffers, Buffer, BufferPlan, PhaseBuffers, StageBufferPlan,
};
pub use cost::{stage_costs, MergeCosts, MlpPass, StageCosts};
pub use exec::{
    attention_head_rows, first_divergence, functional_geometry, run_mlp_fused, run_model_vita,
    run_model_vita_with_fault, run_msa_pipelined, stream_qkv_head, Fault, Int8Datapath,
};
pub use schedule::{
    overlap_heads, simulate, simulate_part, Datapath, LnSite, Part, PhaseSpan, Schedule, TimingOnly,
};
pub use spec::{AcceleratorSpec, DEFAULT_LN_ELEMS_PER_CYCLE};
pub use trace::{Engine, EngineSummary, Phase, ScheduleTrace, TraceEvent, TraceSummary};

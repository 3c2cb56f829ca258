use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Engine {
    Qkv1,
    Qkv2,
    Qkv3,
    AttnScore,
    Softmax,
    AttnApply,
    /// Projection partial sums on PE blocks 1-3 (overlap mode only).
    ProjPartial,
    Proj,
    MlpHidden,
    MlpOutput,
    PatchMerge,
    Ln,
    Fetch,
    Io,
    Stall,
}

impl Engine {
    pub const ALL: [Engine; 15] = [
        Engine::Qkv1,
        Engine::Qkv2,
        Engine::Qkv3,
        Engine::AttnScore,
        Engine::Softmax,
        Engine::AttnApply,
        Engine::ProjPartial,
        Engine::Proj,
        Engine::MlpHidden,
        Engine::MlpOutput,
        Engine::PatchMerge,
        Engine::Ln,
        Engine::Fetch,
        Engine::Io,
        Engine::Stall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Qkv1 => "QKV1",
            Engine::Qkv2 => "QKV2",
            Engine::Qkv3 => "QKV3",
            Engine::AttnScore => "ATTN_SCORE",
            Engine::Softmax => "SOFTMAX",
            Engine::AttnApply => "ATTN_APPLY",
            Engine::ProjPartial => "PROJ_PARTIAL",
            Engine::Proj => "PROJ",
            Engine::MlpHidden => "MLP_HIDDEN",
            Engine::MlpOutput => "MLP_OUTPUT",
            Engine::PatchMerge => "PATCH_MERGE",
            Engine::Ln => "LN",
            Engine::Fetch => "FETCH",
            Engine::Io => "IO",
            Engine::Stall => "STALL",
        }
    }

    /// Hardware resource the event occupies; events sharing one must not overlap.
    pub fn resource(self) -> Option<&'static str> {
        match self {
            Engine::Qkv1 => Some("block1"),
            Engine::Qkv2 => Some("block2"),
            Engine::Qkv3 => Some("block3"),
            Engine::ProjPartial => Some("blocks1-3"),
            Engine::AttnScore => Some("block4"),
            Engine::Softmax => Some("softmax"),
            Engine::AttnApply => Some("block5"),
            Engine::Proj | Engine::PatchMerge => Some("pool"),
            Engine::MlpHidden => Some("pool-half-a"),
            Engine::MlpOutput => Some("pool-half-b"),
            Engine::Ln => Some("layernorm"),
            Engine::Fetch | Engine::Io => Some("dram"),
            Engine::Stall => None,
        }
    }

    /// Whether the event does PE-array arithmetic.
    pub fn is_compute(self) -> bool {
        !matches!(
            self,
            Engine::Fetch | Engine::Io | Engine::Stall | Engine::Ln
        )
    }
}

/// Schedule phase an event belongs to. Each (phase, layer) pair is one
/// contiguous instance on the timeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Load,
    PatchMerge,
    Ln1,
    Msa,
    Projection,
    Ln2,
    Mlp,
    Store,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub engine: Engine,
    pub phase: Phase,
    /// Global encoder-layer index across stages (stage index for patch merging).
    pub layer: u32,
    pub head: Option<u32>,
    pub index: u32,
    pub start: u64,
    pub end: u64,
    pub bytes: u64,
}

impl TraceEvent {
    pub fn duration(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub events: Vec<TraceEvent>,
    /// Cycle at which the final write-back completes.
    pub span: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSummary {
    pub events: u64,
    pub busy_cycles: u64,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub span: u64,
    pub events: u64,
    pub fetched_bytes: u64,
    pub stall_cycles: u64,
    pub engines: BTreeMap<String, EngineSummary>,
}

impl ScheduleTrace {
    pub fn busy_cycles(&self, engine: Engine) -> u64 {
        self.events
            .iter()
            .filter(|e| e.engine == engine)
            .map(|e| e.duration())
            .sum()
    }

    pub fn fetched_bytes(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| e.engine == Engine::Fetch)
            .map(|e| e.bytes)
            .sum()
    }

    pub fn stall_cycles(&self) -> u64 {
        self.busy_cycles(Engine::Stall)
    }

    pub fn summary(&self) -> TraceSummary {
        let mut engines = BTreeMap::new();
        for eng in Engine::ALL {
            let evs: Vec<&TraceEvent> = self.events.iter().filter(|e| e.engine == eng).collect();
            if evs.is_empty() {
                continue;
            }
            let busy: u64 = evs.iter().map(|e| e.duration()).sum();
            engines.insert(
                eng.name().to_string(),
                EngineSummary {
                    events: evs.len() as u64,
                    busy_cycles: busy,
                    utilization: if self.span > 0 {
                        busy as f64 / self.span as f64
                    } else {
                        0.0
                    },
                },
            );
        }
        TraceSummary {
            span: self.span,
            events: self.events.len() as u64,
            fetched_bytes: self.fetched_bytes(),
            stall_cycles: self.stall_cycles(),
            engines,
        }
    }

    /// CSV with columns `engine,layer,head,index,start,end,bytes`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["engine", "layer", "head", "index", "start", "end", "bytes"])
            .map_err(Error::from)?;
        for e in &self.events {
            out.write_record([
                e.engine.name().to_string(),
                e.layer.to_string(),
                e.head.map(|h| h.to_string()).unwrap_or_default(),
                e.index.to_string(),
                e.start.to_string(),
                e.end.to_string(),
                e.bytes.to_string(),
            ])
            .map_err(Error::from)?;
        }
        out.flush()?;
        Ok(())
    }

    /// First pair of events that occupy conflicting hardware at the same time.
    pub fn find_overlap(&self) -> Option<(TraceEvent, TraceEvent)> {
        let mut evs: Vec<TraceEvent> = self
            .events
            .iter()
            .copied()
            .filter(|e| e.end > e.start && e.engine.resource().is_some())
            .collect();
        evs.sort_by_key(|e| (e.start, e.end));
        let mut active: Vec<TraceEvent> = Vec::new();
        for e in evs {
            active.retain(|a| a.end > e.start);
            if let Some(a) = active.iter().find(|a| conflicts(a.engine, e.engine)) {
                return Some((*a, e));
            }
            active.push(e);
        }
        None
    }
}

/// Whether two engines share hardware. Pool-wide operations use every PE block.
fn conflicts(a: Engine, b: Engine) -> bool {
    use Engine::*;
    let pool_wide = |e: Engine| matches!(e, Proj | PatchMerge | MlpHidden | MlpOutput);
    let block = |e: Engine| matches!(e, Qkv1 | Qkv2 | Qkv3 | ProjPartial | AttnScore | AttnApply);
    let e1 = |e: Engine| matches!(e, Qkv1 | Qkv2 | Qkv3 | ProjPartial);
    if a == b {
        return true;
    }
    if matches!((a, b), (MlpHidden, MlpOutput) | (MlpOutput, MlpHidden)) {
        return false;
    }
    if (pool_wide(a) && (pool_wide(b) || block(b))) || (pool_wide(b) && block(a)) {
        return true;
    }
    (a == ProjPartial && e1(b)) || (b == ProjPartial && e1(a)) || a.resource() == b.resource()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(engine: Engine, start: u64, end: u64) -> TraceEvent {
        TraceEvent {
            engine,
            phase: Phase::Msa,
            layer: 0,
            head: Some(0),
            index: 0,
            start,
            end,
            bytes: 0,
        }
    }

    #[test]
    fn csv_layout() {
        let t = ScheduleTrace {
            events: vec![ev(Engine::Qkv1, 0, 5)],
            span: 5,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "engine,layer,head,index,start,end,bytes\nQKV1,0,0,0,0,5,0\n"
        );
    }

    #[test]
    fn overlap_detection() {
        let ok = ScheduleTrace {
            events: vec![
                ev(Engine::Qkv1, 0, 5),
                ev(Engine::Qkv2, 0, 5),
                ev(Engine::AttnScore, 2, 4),
                ev(Engine::Qkv1, 5, 9),
            ],
            span: 9,
        };
        assert!(ok.find_overlap().is_none());
        let bad = ScheduleTrace {
            events: vec![ev(Engine::Qkv1, 0, 5), ev(Engine::Qkv1, 4, 9)],
            span: 9,
        };
        assert!(bad.find_overlap().is_some());
        let pool = ScheduleTrace {
            events: vec![ev(Engine::Proj, 0, 5), ev(Engine::AttnApply, 4, 9)],
            span: 9,
        };
        assert!(pool.find_overlap().is_some());
    }
}

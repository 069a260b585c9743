//! JSON interchange format for schedules and simulated timelines.
//!
//! A [`ScheduleDocument`] lists every pass with its device, start and
//! duration. Documents in `cells` units describe design-grid schedules,
//! documents in `time` units describe simulated timelines. Every document is
//! validated on load: collisions, missing or out-of-order dependencies and
//! placement mismatches are rejected.
//!
//! ```
//! use pipeblock::{assemble, build_v_block, ScheduleDocument, VVariant};
//!
//! let block = build_v_block(4, VVariant::Min).unwrap();
//! let doc = ScheduleDocument::from_schedule(&assemble(&block, 8).unwrap());
//! let text = doc.to_json().unwrap();
//! assert_eq!(ScheduleDocument::parse(&text, true).unwrap(), doc);
//! ```

use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::assemble::{first_collision, squeeze};
use crate::error::{Error, Result};
use crate::model::{
    for_each_dependency, BuildingBlock, GridSchedule, PassId, PassIndex, PassKind, Provenance,
    RunTimeProfile, ScheduleViolation, ScheduledPass, Topology,
};
use crate::sim::SimResult;

pub const FORMAT_VERSION: u32 = 1;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Cells,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub devices: usize,
    pub num_stages: usize,
    /// One stage-to-device map per model replica.
    pub placement: Vec<Vec<usize>>,
    /// Activation memory of each stage, in units of `m`.
    pub stage_mem: Vec<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub device: usize,
    pub stage: usize,
    pub kind: PassKind,
    pub microbatch: usize,
    #[serde(serialize_with = "compact_number")]
    pub start: f64,
    #[serde(serialize_with = "compact_number")]
    pub duration: f64,
    /// Only present in hand-written documents; must match the document units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Units>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PassRecord {
    pub fn id(&self) -> PassId {
        PassId::new(self.stage, self.kind, self.microbatch)
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub block: String,
    #[serde(default)]
    pub steps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<RunTimeProfile>,
    /// The generating block, so analysis does not depend on the gallery.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_block: Option<BuildingBlock>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub format_version: u32,
    pub topology: TopologyDoc,
    pub units: Units,
    /// Inferred from the passes when absent.
    #[serde(default)]
    pub microbatches: Option<usize>,
    /// Sorted by device, then start.
    pub passes: Vec<PassRecord>,
    #[serde(default)]
    pub metadata: Metadata,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn compact_number<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

const TOP_FIELDS: &[&str] = &["format_version", "topology", "units", "microbatches", "passes", "metadata"];
const TOPOLOGY_FIELDS: &[&str] = &["devices", "num_stages", "placement", "stage_mem"];
const PASS_FIELDS: &[&str] = &["device", "stage", "kind", "microbatch", "start", "duration", "units"];
const METADATA_FIELDS: &[&str] = &["block", "steps", "profile", "building_block"];
const PROFILE_FIELDS: &[&str] = &["t_f", "t_b", "t_w", "t_bw", "comm"];

fn reject_unknown(value: &Value, known: &[&str], at: &str) -> Result<()> {
    if let Value::Object(map) = value {
        if let Some(key) = map.keys().find(|k| !known.contains(&k.as_str())) {
            let loc = if at.is_empty() { key.clone() } else { format!("{at}.{key}") };
            return Err(Error::Document(format!("unknown field `{key}` at {loc}")));
        }
    }
    Ok(())
}

fn strict_check(value: &Value) -> Result<()> {
    reject_unknown(value, TOP_FIELDS, "")?;
    if let Some(t) = value.get("topology") {
        reject_unknown(t, TOPOLOGY_FIELDS, "topology")?;
    }
    if let Some(Value::Array(passes)) = value.get("passes") {
        for (i, p) in passes.iter().enumerate() {
            reject_unknown(p, PASS_FIELDS, &format!("passes[{i}]"))?;
        }
    }
    if let Some(m) = value.get("metadata") {
        reject_unknown(m, METADATA_FIELDS, "metadata")?;
        if let Some(p) = m.get("profile") {
            reject_unknown(p, PROFILE_FIELDS, "metadata.profile")?;
        }
    }
    Ok(())
}

impl ScheduleDocument {
    /// A design-grid document; passes are in cells.
    pub fn from_schedule(schedule: &GridSchedule) -> Self {
        let passes = schedule
            .passes()
            .map(|p| PassRecord {
                device: p.device,
                stage: p.id.stage,
                kind: p.id.kind,
                microbatch: p.id.microbatch,
                start: p.start as f64,
                duration: p.cells as f64,
                units: None,
                extra: Map::new(),
            })
            .collect();
        let mut doc = Self {
            format_version: FORMAT_VERSION,
            topology: topology_doc(&schedule.topology),
            units: Units::Cells,
            microbatches: Some(schedule.microbatches),
            passes,
            metadata: Metadata {
                block: schedule.provenance.block.clone(),
                steps: schedule.provenance.steps.clone(),
                ..Metadata::default()
            },
            extra: Map::new(),
        };
        doc.canonicalize();
        doc
    }

    /// A simulated timeline of `schedule`; passes are in time units.
    pub fn from_simulation(schedule: &GridSchedule, sim: &SimResult, profile: &RunTimeProfile) -> Self {
        let mut doc = Self::from_schedule(schedule);
        doc.units = Units::Time;
        doc.metadata.profile = Some(*profile);
        doc.metadata.steps.push("simulate".into());
        doc.passes = sim
            .passes
            .iter()
            .map(|p| PassRecord {
                device: p.device,
                stage: p.id.stage,
                kind: p.id.kind,
                microbatch: p.id.microbatch,
                start: p.start,
                duration: p.end - p.start,
                units: None,
                extra: Map::new(),
            })
            .collect();
        doc.canonicalize();
        doc
    }

    pub fn with_block(mut self, block: &BuildingBlock) -> Self {
        self.metadata.building_block = Some(block.clone());
        self
    }

    /// Sorts passes by device, start and pass.
    pub fn canonicalize(&mut self) {
        self.passes.sort_by(|a, b| {
            (a.device, a.start)
                .partial_cmp(&(b.device, b.start))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.id().cmp(&b.id()))
        });
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a document.
    ///
    /// With `strict`, fields outside the format are rejected; otherwise they
    /// are kept and emitted again.
    pub fn parse(text: &str, strict: bool) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        if strict {
            strict_check(&value)?;
        }
        let mut de = serde_json::Deserializer::from_str(text);
        let mut doc: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            Error::Document(format!("at {path}: {}", e.into_inner()))
        })?;
        doc.check()?;
        doc.to_schedule()?;
        doc.canonicalize();
        Ok(doc)
    }

    pub fn microbatch_count(&self) -> usize {
        self.microbatches
            .unwrap_or_else(|| self.passes.iter().map(|p| p.microbatch + 1).max().unwrap_or(0))
    }

    pub fn topology(&self) -> Result<Topology> {
        let t = &self.topology;
        let topo = Topology::new(t.devices, t.placement.clone(), t.stage_mem.clone())?;
        if topo.num_stages() != t.num_stages {
            return Err(Error::Document(format!(
                "at topology.num_stages: {} stages declared, placement has {}",
                t.num_stages,
                topo.num_stages()
            )));
        }
        Ok(topo)
    }

    fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Document(format!(
                "at format_version: unsupported version {}",
                self.format_version
            )));
        }
        let topo = self.topology()?;
        let n = self.microbatch_count();
        for (i, p) in self.passes.iter().enumerate() {
            let at = format!("passes[{i}]");
            if let Some(u) = p.units {
                if u != self.units {
                    return Err(Error::Document(format!("at {at}: mixed units, {u:?} in a {:?} document", self.units)));
                }
            }
            if p.stage == 0 || p.stage > topo.num_stages() {
                return Err(Error::Document(format!("at {at}.stage: stage {} out of range", p.stage)));
            }
            if p.device == 0 || p.device > topo.devices() {
                return Err(Error::Document(format!("at {at}.device: device {} out of range", p.device)));
            }
            if p.microbatch >= n {
                return Err(Error::Document(format!("at {at}.microbatch: microbatch {} out of range", p.microbatch)));
            }
            if !p.start.is_finite() || !p.duration.is_finite() || p.duration < 0.0 {
                return Err(Error::Document(format!("at {at}: start and duration must be finite")));
            }
            if self.units == Units::Cells
                && (p.start.fract() != 0.0 || p.duration != p.kind.cells() as f64)
            {
                return Err(Error::Document(format!(
                    "at {at}: cell documents need integer starts and {} cell(s) for {}",
                    p.kind.cells(),
                    p.kind
                )));
            }
        }
        Ok(())
    }

    /// The schedule on the design grid.
    ///
    /// Timelines are mapped back to the grid by replaying their pass order.
    pub fn to_schedule(&self) -> Result<GridSchedule> {
        self.check()?;
        let topo = self.topology()?;
        let n = self.microbatch_count();
        let provenance = Provenance { block: self.metadata.block.clone(), steps: self.metadata.steps.clone() };
        let schedule = match self.units {
            Units::Cells => {
                let passes = self.passes.iter().map(|p| ScheduledPass {
                    id: p.id(),
                    device: p.device,
                    start: p.start as i64,
                    cells: p.kind.cells(),
                });
                let s = GridSchedule::from_passes(topo, n, passes, provenance);
                if let Some(c) = first_collision(&s) {
                    return Err(Error::Collision(Box::new(c)));
                }
                s
            }
            Units::Time => {
                self.check_timeline(&topo, n)?;
                let mut order: Vec<&PassRecord> = self.passes.iter().collect();
                order.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.device.cmp(&b.device)));
                let passes = order.iter().enumerate().map(|(rank, p)| ScheduledPass {
                    id: p.id(),
                    device: p.device,
                    start: rank as i64,
                    cells: p.kind.cells(),
                });
                squeeze(&GridSchedule::from_passes(topo, n, passes, provenance))
            }
        };
        if let Some(v) = schedule.validate().into_iter().next() {
            return Err(match v {
                ScheduleViolation::Overlap { device, cell, first, second } => {
                    Error::Collision(Box::new(crate::assemble::CollisionReport { device, cell, first, second }))
                }
                other => Error::InvalidSchedule(other.to_string()),
            });
        }
        Ok(schedule)
    }

    fn check_timeline(&self, topo: &Topology, n: usize) -> Result<()> {
        let mut lanes: Vec<Vec<&PassRecord>> = vec![Vec::new(); topo.devices()];
        for p in &self.passes {
            lanes[p.device - 1].push(p);
        }
        for (d, lane) in lanes.iter_mut().enumerate() {
            lane.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in lane.windows(2) {
                if w[1].start < w[0].end() - TIME_EPS {
                    return Err(Error::InvalidSchedule(format!(
                        "overlap on device {} at time {}: {} and {}",
                        d + 1,
                        w[1].start,
                        w[0].id(),
                        w[1].id()
                    )));
                }
            }
        }
        let index = PassIndex::new(topo.num_stages());
        let mut ends = vec![None; index.size(n)];
        for p in &self.passes {
            ends[index.of(p.id())] = Some(p.end());
        }
        for p in &self.passes {
            let mut bad = None;
            for_each_dependency(p.id(), topo.num_stages(), |dep| {
                if let Some(end) = ends[index.of(dep)] {
                    if p.start < end - TIME_EPS {
                        bad = Some(dep);
                    }
                }
            });
            if let Some(dep) = bad {
                return Err(Error::InvalidSchedule(format!("{} starts before its dependency {dep} ends", p.id())));
            }
        }
        Ok(())
    }
}

fn topology_doc(t: &Topology) -> TopologyDoc {
    TopologyDoc {
        devices: t.devices(),
        num_stages: t.num_stages(),
        placement: t.placements().to_vec(),
        stage_mem: t.stage_mems().to_vec(),
        extra: Map::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::assemble;
    use crate::gallery::{build_gallery, build_v_block, GalleryParams, VVariant};
    use crate::memory::exact_peak;
    use crate::sim::simulate;

    fn v_min_doc() -> ScheduleDocument {
        let b = build_v_block(4, VVariant::Min).unwrap();
        ScheduleDocument::from_schedule(&assemble(&b, 8).unwrap())
    }

    #[test]
    fn round_trip_is_identity() {
        let doc = v_min_doc();
        let text = doc.to_json().unwrap();
        let back = ScheduleDocument::parse(&text, true).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn cells_are_emitted_as_integers() {
        let text = v_min_doc().to_json().unwrap();
        assert!(text.contains("\"duration\": 1\n") || text.contains("\"duration\": 1,"));
        assert!(!text.contains("\"start\": 0.0"));
    }

    #[test]
    fn overlap_names_device_and_cell() {
        let mut doc = v_min_doc();
        let cell = doc.passes.iter().find(|p| p.device == 2).unwrap().start;
        let j = doc.passes.iter().rposition(|p| p.device == 2).unwrap();
        doc.passes[j].start = cell;
        let err = doc.to_schedule().unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Collision(_)), "{msg}");
        assert!(msg.contains("device 2") && msg.contains(&format!("cell {cell}")), "{msg}");
    }

    #[test]
    fn unknown_fields_strict_and_lenient() {
        let mut v: Value = serde_json::from_str(&v_min_doc().to_json().unwrap()).unwrap();
        v["passes"][3]["colour"] = Value::from("red");
        v["note"] = Value::from("kept");
        let text = v.to_string();
        let err = ScheduleDocument::parse(&text, true).unwrap_err().to_string();
        assert!(err.contains("note") || err.contains("passes[3].colour"), "{err}");
        let doc = ScheduleDocument::parse(&text, false).unwrap();
        assert_eq!(doc.extra.get("note"), Some(&Value::from("kept")));
        assert!(doc.to_json().unwrap().contains("colour"));
    }

    #[test]
    fn schema_errors_carry_a_path() {
        let mut v: Value = serde_json::from_str(&v_min_doc().to_json().unwrap()).unwrap();
        v["passes"][5]["kind"] = Value::from("X");
        let err = ScheduleDocument::parse(&v.to_string(), false).unwrap_err().to_string();
        assert!(err.contains("passes[5].kind"), "{err}");
    }

    #[test]
    fn mixed_units_rejected() {
        let mut v: Value = serde_json::from_str(&v_min_doc().to_json().unwrap()).unwrap();
        v["passes"][0]["units"] = Value::from("time");
        let err = ScheduleDocument::parse(&v.to_string(), false).unwrap_err().to_string();
        assert!(err.contains("mixed units"), "{err}");
    }

    #[test]
    fn missing_dependency_rejected() {
        let mut doc = v_min_doc();
        let k = doc.passes.iter().position(|p| p.kind == PassKind::F && p.stage == 1).unwrap();
        doc.passes.remove(k);
        assert!(matches!(doc.to_schedule(), Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn hand_written_gpipe_peak() {
        let (d, n) = (3usize, 4usize);
        let mut passes = Vec::new();
        for i in 1..=d {
            for j in 0..n {
                let f = (i - 1 + j) as i64;
                let bw = (d + n - 1) as i64 + 2 * (d - i + j) as i64;
                passes.push(serde_json::json!({"device": i, "stage": i, "kind": "F", "microbatch": j, "start": f, "duration": 1}));
                passes.push(serde_json::json!({"device": i, "stage": i, "kind": "BW", "microbatch": j, "start": bw, "duration": 2}));
            }
        }
        let text = serde_json::json!({
            "format_version": 1,
            "topology": {"devices": d, "num_stages": d, "placement": [[1, 2, 3]], "stage_mem": [1.0, 1.0, 1.0]},
            "units": "cells",
            "passes": passes,
        })
        .to_string();
        let doc = ScheduleDocument::parse(&text, true).unwrap();
        let trace = exact_peak(&doc.to_schedule().unwrap());
        assert_eq!(trace.per_device, vec![n as f64; d]);
    }

    #[test]
    fn timeline_maps_back_to_the_grid() {
        let b = build_gallery("1f1b", 4, GalleryParams::default()).unwrap();
        let s = assemble(&b, 8).unwrap();
        let profile = RunTimeProfile::new(1.5, 2.0, 0.5).unwrap();
        let sim = simulate(&s, &profile).unwrap();
        let doc = ScheduleDocument::from_simulation(&s, &sim, &profile);
        let back = ScheduleDocument::parse(&doc.to_json().unwrap(), true).unwrap();
        assert_eq!(back.units, Units::Time);
        let grid = back.to_schedule().unwrap();
        let again = simulate(&grid, &profile).unwrap();
        assert!((again.makespan - sim.makespan).abs() < 1e-9);
    }

    #[test]
    fn empty_document_parses() {
        let text = r#"{"format_version":1,"topology":{"devices":2,"num_stages":2,"placement":[[1,2]],"stage_mem":[1,1]},"units":"cells","passes":[]}"#;
        let doc = ScheduleDocument::parse(text, true).unwrap();
        assert!(doc.to_schedule().unwrap().is_empty());
    }

    #[test]
    fn newer_versions_rejected() {
        let text = r#"{"format_version":2,"topology":{"devices":1,"num_stages":1,"placement":[[1]],"stage_mem":[1]},"units":"cells","passes":[]}"#;
        assert!(ScheduleDocument::parse(text, false).unwrap_err().to_string().contains("format_version"));
    }
}

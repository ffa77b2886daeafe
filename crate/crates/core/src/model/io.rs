//! JSON file format for reference HOI sequences.
//!
//! Only positions, rotation features and contact labels are stored;
//! velocities and the interaction graph are recomputed on load. Optional
//! velocity fields are accepted and compared against the recomputed values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{BodyLayout, FrameTracks, ModelError, RefHoiSequence};
use crate::contact::{AggregationMap, ContactGraphState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    version: u32,
    fps: u32,
    layout: BodyLayout,
    cg: CgBlock,
    objects: ObjectsBlock,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CgBlock {
    nodes: Vec<String>,
    aggregation: BTreeMap<String, Option<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectsBlock {
    count: usize,
    names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    body_pos: Vec<Vec<f64>>,
    body_rot: Vec<Vec<f64>>,
    obj_pos: Vec<Vec<f64>>,
    obj_rot: Vec<Vec<f64>>,
    cg_edges: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body_pos_vel: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body_rot_vel: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obj_pos_vel: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obj_rot_vel: Option<Vec<Vec<f64>>>,
}

/// A stored velocity field that disagrees with the recomputed differences.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityWarning {
    pub field: &'static str,
    /// Frame with the largest deviation.
    pub frame: usize,
    pub max_deviation: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub warnings: Vec<VelocityWarning>,
}

fn rows_to_array(rows: &[Vec<f64>], frame: usize, field: &str) -> Result<Array2<f64>, ModelError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::Frame { frame, detail: format!("ragged rows in `{field}`") });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| ModelError::Frame { frame, detail: format!("`{field}`: {e}") })
}

fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn stack_field(
    frames: &[FrameRecord],
    field: &'static str,
    get: impl Fn(&FrameRecord) -> &Vec<Vec<f64>>,
    rows: usize,
    cols: usize,
) -> Result<Array3<f64>, ModelError> {
    let mut out = Array3::zeros((frames.len(), rows, cols));
    for (fi, f) in frames.iter().enumerate() {
        let a = rows_to_array(get(f), fi, field)?;
        if a.dim() != (rows, cols) {
            return Err(ModelError::Frame {
                frame: fi,
                detail: format!("`{field}` has shape {:?}, expected {:?}", a.dim(), (rows, cols)),
            });
        }
        out.index_axis_mut(Axis(0), fi).assign(&a);
    }
    Ok(out)
}

fn parse_edges(values: &[f64], frame: usize) -> Result<ContactGraphState, ModelError> {
    let mut edges = Vec::with_capacity(values.len());
    for (edge, &v) in values.iter().enumerate() {
        if v == 0.0 {
            edges.push(0);
        } else if v == 1.0 {
            edges.push(1);
        } else {
            return Err(ModelError::NonBinaryEdge { frame, edge, value: v });
        }
    }
    Ok(ContactGraphState::from_edges(edges))
}

fn parse(text: &str) -> Result<(RefHoiSequence, LoadReport), ModelError> {
    let file: SequenceFile = serde_json::from_str(text)?;
    if file.version != FORMAT_VERSION {
        return Err(ModelError::Schema(format!(
            "unsupported version {}, expected {FORMAT_VERSION}",
            file.version
        )));
    }
    if file.objects.count != file.objects.names.len() {
        return Err(ModelError::Schema(format!(
            "objects.count = {} but {} names given",
            file.objects.count,
            file.objects.names.len()
        )));
    }
    file.layout.validate()?;
    let cg_map = AggregationMap::new(file.cg.nodes, file.cg.aggregation)?;
    let (b, d, r, m) = (
        file.layout.body_count,
        file.layout.spatial_dim,
        file.layout.rot_feature_dim,
        file.objects.count,
    );
    let frames = &file.frames;
    let j = cg_map.edge_count();
    let mut cg = Vec::with_capacity(frames.len());
    for (fi, f) in frames.iter().enumerate() {
        if f.cg_edges.len() != j {
            return Err(ModelError::Frame {
                frame: fi,
                detail: format!("{} CG edges, expected {j}", f.cg_edges.len()),
            });
        }
        cg.push(parse_edges(&f.cg_edges, fi)?);
    }
    let tracks = FrameTracks {
        body_pos: stack_field(frames, "body_pos", |f| &f.body_pos, b, d)?,
        body_rot: stack_field(frames, "body_rot", |f| &f.body_rot, b, r)?,
        obj_pos: stack_field(frames, "obj_pos", |f| &f.obj_pos, m, d)?,
        obj_rot: stack_field(frames, "obj_rot", |f| &f.obj_rot, m, r)?,
        cg,
    };
    let seq = RefHoiSequence::from_tracks(file.layout, file.fps, file.objects.names, cg_map, tracks)?;

    let mut report = LoadReport::default();
    type Getter = fn(&FrameRecord) -> Option<&Vec<Vec<f64>>>;
    let checks: [(&'static str, Getter, usize); 4] = [
        ("body_pos_vel", |f| f.body_pos_vel.as_ref(), 0),
        ("body_rot_vel", |f| f.body_rot_vel.as_ref(), 1),
        ("obj_pos_vel", |f| f.obj_pos_vel.as_ref(), 2),
        ("obj_rot_vel", |f| f.obj_rot_vel.as_ref(), 3),
    ];
    for (field, get, which) in checks {
        let mut worst: Option<(usize, f64)> = None;
        for (fi, (rec, st)) in frames.iter().zip(&seq.frames).enumerate() {
            let Some(rows) = get(rec) else { continue };
            let stored = rows_to_array(rows, fi, field)?;
            let recomputed = match which {
                0 => &st.body.pos_vel,
                1 => &st.body.rot_vel,
                2 => &st.object.pos_vel,
                _ => &st.object.rot_vel,
            };
            if stored.dim() != recomputed.dim() {
                return Err(ModelError::Frame {
                    frame: fi,
                    detail: format!("`{field}` shape {:?}, expected {:?}", stored.dim(), recomputed.dim()),
                });
            }
            let dev = (&stored - recomputed).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if dev > 0.0 && worst.is_none_or(|(_, w)| dev > w) {
                worst = Some((fi, dev));
            }
        }
        if let Some((frame, max_deviation)) = worst {
            log::warn!("stored `{field}` deviates from recomputed differences by up to {max_deviation} (frame {frame})");
            report.warnings.push(VelocityWarning { field, frame, max_deviation });
        }
    }
    Ok((seq, report))
}

pub fn sequence_from_json(text: &str) -> Result<RefHoiSequence, ModelError> {
    parse(text).map(|(s, _)| s)
}

pub fn sequence_to_json(seq: &RefHoiSequence) -> Result<String, ModelError> {
    let file = SequenceFile {
        version: FORMAT_VERSION,
        fps: seq.fps,
        layout: seq.layout.clone(),
        cg: CgBlock { nodes: seq.cg_map.nodes.clone(), aggregation: seq.cg_map.assignment.clone() },
        objects: ObjectsBlock { count: seq.object_names.len(), names: seq.object_names.clone() },
        frames: seq
            .frames
            .iter()
            .map(|f| FrameRecord {
                body_pos: array_to_rows(&f.body.pos),
                body_rot: array_to_rows(&f.body.rot),
                obj_pos: array_to_rows(&f.object.pos),
                obj_rot: array_to_rows(&f.object.rot),
                cg_edges: f.cg.as_f64(),
                body_pos_vel: None,
                body_rot_vel: None,
                obj_pos_vel: None,
                obj_rot_vel: None,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn load_sequence_with_report(path: impl AsRef<Path>) -> Result<(RefHoiSequence, LoadReport), ModelError> {
    parse(&fs::read_to_string(path)?)
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<RefHoiSequence, ModelError> {
    load_sequence_with_report(path).map(|(s, _)| s)
}

pub fn save_sequence(seq: &RefHoiSequence, path: impl AsRef<Path>) -> Result<(), ModelError> {
    seq.validate()?;
    fs::write(path, sequence_to_json(seq)?)?;
    Ok(())
}

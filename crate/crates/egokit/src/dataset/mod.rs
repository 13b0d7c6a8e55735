//! Episodic dataset store and the synthetic scene generator.
//!
//! A dataset is a directory with `meta/modality.json` (the semantic layout
//! of the 109-entry state and action records), `meta/episodes.json` (the
//! index) and per-episode binary tracks: hand parameters as contiguous
//! float32 records, per-frame extrinsics, depth maps and schematic RGB
//! rasters. Synthetic desk-scale episodes substitute for a curated corpus;
//! they are deterministic in the scene seed.

mod raster;
mod store;
mod synth;

pub use raster::RgbImage;
pub use store::Store;
pub use synth::{synthesize_episode, SceneSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmpolicy::MotionChunk;
use crate::handmodel::{
    absolute_to_relative, HandError, HandParams, HAND_PARAM_DIM,
};
use crate::renderer::{CameraExtrinsics, CameraIntrinsics, DepthMap, RenderError};
use crate::rotmath::{matrix_to_rot6d, RotError};

/// Number of synthetic task classes.
pub const NUM_TASK_TOKENS: usize = 8;

/// Task class names, index-aligned with [`TaskToken`].
pub const TASK_NAMES: [&str; NUM_TASK_TOKENS] = [
    "reach", "grasp", "lift", "rotate-cw", "rotate-ccw", "place", "stir", "pour-mime",
];

fn instruction_for(token: u8) -> String {
    match token {
        0 => "reach toward the object on the desk".to_string(),
        1 => "grasp the object on the desk".to_string(),
        2 => "grasp the object and lift it up".to_string(),
        3 => "rotate the object clockwise".to_string(),
        4 => "rotate the object counterclockwise".to_string(),
        5 => "pick up the object and place it to the side".to_string(),
        6 => "stir around the object".to_string(),
        7 => "mime pouring from the object".to_string(),
        _ => unreachable!("task token out of range"),
    }
}

/// Small-integer task class with its instruction template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskToken(pub u8);

impl TaskToken {
    pub fn new(t: u8) -> Result<Self, DatasetError> {
        if (t as usize) < NUM_TASK_TOKENS {
            Ok(TaskToken(t))
        } else {
            Err(DatasetError::InvalidTaskToken(t))
        }
    }

    pub fn name(&self) -> &'static str {
        TASK_NAMES[self.0 as usize]
    }

    pub fn instruction(&self) -> String {
        instruction_for(self.0)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("episode needs at least 2 frames")]
    TooShort,
    #[error("clip length bound must be at least 3, got {0}")]
    InvalidMaxLen(usize),
    #[error("task token {0} out of range")]
    InvalidTaskToken(u8),
    #[error("object leaves the camera frustum for more than half of the episode")]
    FrustumViolation,
    #[error("store format version mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt payload: {detail}")]
    CorruptPayload { detail: String },
    #[error("invalid modality config: {0}")]
    InvalidModality(String),
    #[error("unknown episode id {0}")]
    UnknownEpisode(String),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Rotation(#[from] RotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("index serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// One semantic segment of a state or action record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub offset: usize,
    pub length: usize,
    /// Rotation encoding of the segment, when it is one (`"rot6d"`).
    pub rotation_rep: Option<String>,
    pub units: String,
}

/// Reserved annotation switches. The schema keeps them so stores can carry
/// validity indicators and success labels; no operation consumes them yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSpec {
    pub task_instruction: bool,
    pub validity: bool,
    pub success: bool,
}

/// Semantic map of the state and action vectors stored in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityConfig {
    pub version: u32,
    pub state: Vec<FieldSpec>,
    pub action: Vec<FieldSpec>,
    pub annotations: AnnotationSpec,
}

impl ModalityConfig {
    /// The canonical 109-entry hand layout for both records.
    pub fn hand_layout() -> Self {
        let segments = |relative: bool| {
            vec![
                FieldSpec {
                    name: "theta".into(),
                    offset: 0,
                    length: 90,
                    rotation_rep: Some("rot6d".into()),
                    units: "unitless".into(),
                },
                FieldSpec {
                    name: "beta".into(),
                    offset: 90,
                    length: 10,
                    rotation_rep: None,
                    units: "unitless".into(),
                },
                FieldSpec {
                    name: "r".into(),
                    offset: 100,
                    length: 6,
                    rotation_rep: Some("rot6d".into()),
                    units: "unitless".into(),
                },
                FieldSpec {
                    name: "t".into(),
                    offset: 106,
                    length: 3,
                    rotation_rep: None,
                    units: if relative { "meters (relative)".into() } else { "meters".into() },
                },
            ]
        };
        ModalityConfig {
            version: 1,
            state: segments(false),
            action: segments(true),
            annotations: AnnotationSpec {
                task_instruction: true,
                validity: true,
                success: true,
            },
        }
    }

    /// Checks that each record's fields partition `[0, 109)` exactly and
    /// that the rotation segments declare their representation.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (label, fields) in [("state", &self.state), ("action", &self.action)] {
            let mut sorted: Vec<&FieldSpec> = fields.iter().collect();
            sorted.sort_by_key(|f| f.offset);
            let mut cursor = 0;
            for f in &sorted {
                if f.offset != cursor {
                    return Err(DatasetError::InvalidModality(format!(
                        "{label} record has a gap or overlap at offset {cursor}"
                    )));
                }
                cursor += f.length;
            }
            if cursor != HAND_PARAM_DIM {
                return Err(DatasetError::InvalidModality(format!(
                    "{label} record covers {cursor} entries, expected {HAND_PARAM_DIM}"
                )));
            }
            for f in &sorted {
                if (f.name == "theta" || f.name == "r") && f.rotation_rep.is_none() {
                    return Err(DatasetError::InvalidModality(format!(
                        "{label} segment {} must declare its rotation representation",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One synchronized observation step. Depth, RGB and extrinsics are
/// optional so decoded trajectories can serialize through the same format
/// with a hand track only.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Raw 109-entry hand record; stored exactly as on disk.
    pub hand: [f32; HAND_PARAM_DIM],
    pub extrinsics: Option<CameraExtrinsics>,
    pub depth: Option<DepthMap>,
    pub rgb: Option<RgbImage>,
    pub valid: bool,
}

impl Frame {
    /// Quantizes an f64 hand state to its storage record.
    pub fn from_params(h: &HandParams) -> Frame {
        let packed = h.pack();
        let mut hand = [0.0f32; HAND_PARAM_DIM];
        for (dst, src) in hand.iter_mut().zip(packed.iter()) {
            *dst = *src as f32;
        }
        Frame {
            hand,
            extrinsics: None,
            depth: None,
            rgb: None,
            valid: true,
        }
    }

    pub fn params(&self) -> Result<HandParams, HandError> {
        let v: Vec<f64> = self.hand.iter().map(|&x| x as f64).collect();
        HandParams::unpack(&v)
    }
}

/// A contiguous observation sequence sharing one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub task: TaskToken,
    pub instruction: String,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    /// Synthesis provenance, when the episode came from the generator.
    pub scene: Option<SceneSpec>,
    /// Reserved success label; never consumed.
    pub success: Option<bool>,
}

impl Episode {
    pub fn new(
        id: String,
        task: TaskToken,
        intrinsics: CameraIntrinsics,
        frames: Vec<Frame>,
    ) -> Result<Self, DatasetError> {
        if frames.len() < 2 {
            return Err(DatasetError::TooShort);
        }
        Ok(Episode {
            id,
            instruction: task.instruction(),
            task,
            intrinsics,
            frames,
            scene: None,
            success: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Splits an episode into clips strictly shorter than `max_len`, balanced
/// so every clip keeps at least two frames. Concatenating the clips
/// reproduces the source frame sequence; task metadata is copied through.
pub fn clip_episode(e: &Episode, max_len: usize) -> Result<Vec<Episode>, DatasetError> {
    if max_len < 3 {
        return Err(DatasetError::InvalidMaxLen(max_len));
    }
    if e.len() < 2 {
        return Err(DatasetError::TooShort);
    }
    if e.len() < max_len {
        return Ok(vec![e.clone()]);
    }
    let target = max_len - 1;
    let n = e.len();
    let clips = n.div_ceil(target);
    let base = n / clips;
    let remainder = n % clips;
    let mut out = Vec::with_capacity(clips);
    let mut cursor = 0;
    for c in 0..clips {
        let len = base + usize::from(c < remainder);
        let mut clip = e.clone();
        clip.id = format!("{}_c{:03}", e.id, c);
        clip.frames = e.frames[cursor..cursor + len].to_vec();
        cursor += len;
        out.push(clip);
    }
    debug_assert_eq!(cursor, n);
    Ok(out)
}

/// One supervision pair: the conditioning state at step `k`, references to
/// its observation frame, and the relative motion chunk covering steps
/// `k+1 ..= k+l`.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub h_k: HandParams,
    /// Index of the conditioning frame inside the source episode.
    pub frame_index: usize,
    pub task: TaskToken,
    pub target: MotionChunk,
}

/// Builds one sample per valid conditioning step: targets carry the wrist
/// pose of each future step relative to `h_k`, the future finger pose, and
/// `h_k`'s shape coefficients repeated.
pub fn make_training_samples(
    e: &Episode,
    l: usize,
) -> Result<Vec<TrainingSample>, DatasetError> {
    if e.len() <= l {
        return Err(DatasetError::TooShort);
    }
    let params: Vec<HandParams> = e
        .frames
        .iter()
        .map(|f| f.params())
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(e.len() - l);
    for k in 0..e.len() - l {
        let h_k = &params[k];
        let base = h_k.wrist_pose()?;
        let mut rows = Vec::with_capacity(l);
        for j in 1..=l {
            let future = &params[k + j];
            let rel = absolute_to_relative(&base, &future.wrist_pose()?);
            let mut row = future.clone();
            row.beta = h_k.beta;
            row.r = matrix_to_rot6d(&rel.rot);
            row.t = rel.t;
            rows.push(row.pack());
        }
        out.push(TrainingSample {
            h_k: h_k.clone(),
            frame_index: k,
            task: e.task,
            target: MotionChunk::from_rows(&rows),
        });
    }
    Ok(out)
}

//! On-disk dataset layout.
//!
//! ```text
//! <root>/
//!   meta/modality.json     semantic record layout (see ModalityConfig)
//!   meta/episodes.json     index: ids, task metadata, tracks, checksums
//!   episodes/<id>/hand.f32             frames x 109 float32 LE records
//!   episodes/<id>/extrinsics.f32       frames x 16 float32 LE (T_cw row-major)
//!   episodes/<id>/depth/frame_NNNNNN.dpth
//!   episodes/<id>/rgb/frame_NNNNNN.ppm
//! ```
//!
//! Every payload file is checksummed (SHA-256) into the index; reads verify
//! before returning. Reads are concurrent-safe, writes single-writer.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetError, Episode, Frame, ModalityConfig, TaskToken};
use crate::handmodel::HAND_PARAM_DIM;
use crate::renderer::{CameraExtrinsics, CameraIntrinsics, DepthMap};
use crate::dataset::{RgbImage, SceneSpec};

const INDEX_VERSION: u32 = 1;
const STORE_FPS: u32 = 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IntrinsicsEntry {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl IntrinsicsEntry {
    fn from(i: &CameraIntrinsics) -> Self {
        IntrinsicsEntry {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
        }
    }

    fn build(&self) -> Result<CameraIntrinsics, DatasetError> {
        Ok(CameraIntrinsics::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EpisodeEntry {
    id: String,
    num_frames: usize,
    task_token: u8,
    instruction: String,
    intrinsics: IntrinsicsEntry,
    valid: Vec<bool>,
    success: Option<bool>,
    scene: Option<SceneSpec>,
    tracks: Vec<String>,
    checksums: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreIndex {
    version: u32,
    name: String,
    fps: u32,
    episodes: Vec<EpisodeEntry>,
}

/// Handle to a dataset directory.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    name: String,
}

impl Store {
    /// Creates a fresh dataset with the canonical hand modality layout.
    pub fn create(root: impl AsRef<Path>, name: &str) -> Result<Store, DatasetError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("meta"))?;
        std::fs::create_dir_all(root.join("episodes"))?;
        let modality = ModalityConfig::hand_layout();
        modality.validate()?;
        write_json(&root.join("meta/modality.json"), &modality)?;
        let index = StoreIndex {
            version: INDEX_VERSION,
            name: name.to_string(),
            fps: STORE_FPS,
            episodes: Vec::new(),
        };
        write_json(&root.join("meta/episodes.json"), &index)?;
        Ok(Store { root, name: name.to_string() })
    }

    /// Opens an existing dataset, validating its modality config.
    pub fn open(root: impl AsRef<Path>) -> Result<Store, DatasetError> {
        let root = root.as_ref().to_path_buf();
        let modality: ModalityConfig = read_json(&root.join("meta/modality.json"))?;
        if modality.version != 1 {
            return Err(DatasetError::FormatVersionMismatch(format!(
                "modality.json version {}",
                modality.version
            )));
        }
        modality.validate()?;
        let index = Self::read_index(&root)?;
        Ok(Store { root, name: index.name })
    }

    fn read_index(root: &Path) -> Result<StoreIndex, DatasetError> {
        let index: StoreIndex = read_json(&root.join("meta/episodes.json"))?;
        if index.version != INDEX_VERSION {
            return Err(DatasetError::FormatVersionMismatch(format!(
                "episodes.json version {}",
                index.version
            )));
        }
        Ok(index)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn modality(&self) -> Result<ModalityConfig, DatasetError> {
        read_json(&self.root.join("meta/modality.json"))
    }

    pub fn episode_ids(&self) -> Result<Vec<String>, DatasetError> {
        Ok(Self::read_index(&self.root)?
            .episodes
            .iter()
            .map(|e| e.id.clone())
            .collect())
    }

    /// Serializes an episode and registers it in the index. Existing
    /// entries with the same id are replaced.
    pub fn write_episode(&self, e: &Episode) -> Result<(), DatasetError> {
        let dir = self.root.join("episodes").join(&e.id);
        std::fs::create_dir_all(&dir)?;
        let mut checksums = BTreeMap::new();
        let mut tracks = vec!["hand".to_string()];

        let hand_bytes = encode_hand_track(&e.frames);
        std::fs::write(dir.join("hand.f32"), &hand_bytes)?;
        checksums.insert("hand.f32".to_string(), sha256_hex(&hand_bytes));

        let with_extr = e.frames.iter().filter(|f| f.extrinsics.is_some()).count();
        if with_extr > 0 {
            if with_extr != e.frames.len() {
                return Err(DatasetError::CorruptPayload {
                    detail: format!("episode {} has a partial extrinsics track", e.id),
                });
            }
            let bytes = encode_extrinsics_track(&e.frames);
            std::fs::write(dir.join("extrinsics.f32"), &bytes)?;
            checksums.insert("extrinsics.f32".to_string(), sha256_hex(&bytes));
            tracks.push("extrinsics".to_string());
        }

        let with_depth = e.frames.iter().filter(|f| f.depth.is_some()).count();
        if with_depth > 0 {
            if with_depth != e.frames.len() {
                return Err(DatasetError::CorruptPayload {
                    detail: format!("episode {} has a partial depth track", e.id),
                });
            }
            std::fs::create_dir_all(dir.join("depth"))?;
            for (i, f) in e.frames.iter().enumerate() {
                let rel = format!("depth/frame_{i:06}.dpth");
                let path = dir.join(&rel);
                f.depth.as_ref().unwrap().save(&path)?;
                checksums.insert(rel, sha256_hex(&std::fs::read(&path)?));
            }
            tracks.push("depth".to_string());
        }

        let with_rgb = e.frames.iter().filter(|f| f.rgb.is_some()).count();
        if with_rgb > 0 {
            if with_rgb != e.frames.len() {
                return Err(DatasetError::CorruptPayload {
                    detail: format!("episode {} has a partial rgb track", e.id),
                });
            }
            std::fs::create_dir_all(dir.join("rgb"))?;
            for (i, f) in e.frames.iter().enumerate() {
                let rel = format!("rgb/frame_{i:06}.ppm");
                let path = dir.join(&rel);
                f.rgb.as_ref().unwrap().save(&path)?;
                checksums.insert(rel, sha256_hex(&std::fs::read(&path)?));
            }
            tracks.push("rgb".to_string());
        }

        let entry = EpisodeEntry {
            id: e.id.clone(),
            num_frames: e.len(),
            task_token: e.task.0,
            instruction: e.instruction.clone(),
            intrinsics: IntrinsicsEntry::from(&e.intrinsics),
            valid: e.frames.iter().map(|f| f.valid).collect(),
            success: e.success,
            scene: e.scene.clone(),
            tracks,
            checksums,
        };

        let mut index = Self::read_index(&self.root)?;
        index.episodes.retain(|x| x.id != e.id);
        index.episodes.push(entry);
        index.episodes.sort_by(|a, b| a.id.cmp(&b.id));
        write_json(&self.root.join("meta/episodes.json"), &index)?;
        Ok(())
    }

    /// Reads an episode back, verifying every payload checksum.
    pub fn read_episode(&self, id: &str) -> Result<Episode, DatasetError> {
        let index = Self::read_index(&self.root)?;
        let entry = index
            .episodes
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| DatasetError::UnknownEpisode(id.to_string()))?;
        let dir = self.root.join("episodes").join(id);

        let verified = |rel: &str| -> Result<Vec<u8>, DatasetError> {
            let path = dir.join(rel);
            let bytes = std::fs::read(&path).map_err(|e| DatasetError::CorruptPayload {
                detail: format!("episode {id}: missing or unreadable {rel} ({e})"),
            })?;
            let want = entry.checksums.get(rel).ok_or_else(|| {
                DatasetError::CorruptPayload {
                    detail: format!("episode {id}: no checksum recorded for {rel}"),
                }
            })?;
            let got = sha256_hex(&bytes);
            if &got != want {
                return Err(DatasetError::CorruptPayload {
                    detail: format!("episode {id}: checksum mismatch for {rel}"),
                });
            }
            Ok(bytes)
        };

        let hand = decode_hand_track(&verified("hand.f32")?, entry.num_frames, id)?;
        let has = |t: &str| entry.tracks.iter().any(|x| x == t);

        let extr: Option<Vec<CameraExtrinsics>> = if has("extrinsics") {
            Some(decode_extrinsics_track(
                &verified("extrinsics.f32")?,
                entry.num_frames,
                id,
            )?)
        } else {
            None
        };

        let mut frames = Vec::with_capacity(entry.num_frames);
        for i in 0..entry.num_frames {
            let depth = if has("depth") {
                let rel = format!("depth/frame_{i:06}.dpth");
                verified(&rel)?;
                Some(DepthMap::load(dir.join(&rel))?)
            } else {
                None
            };
            let rgb = if has("rgb") {
                let rel = format!("rgb/frame_{i:06}.ppm");
                verified(&rel)?;
                Some(RgbImage::load(dir.join(&rel))?)
            } else {
                None
            };
            frames.push(Frame {
                hand: hand[i],
                extrinsics: extr.as_ref().map(|v| v[i]),
                depth,
                rgb,
                valid: entry.valid.get(i).copied().unwrap_or(true),
            });
        }

        let mut episode = Episode::new(
            id.to_string(),
            TaskToken::new(entry.task_token)?,
            entry.intrinsics.build()?,
            frames,
        )?;
        episode.instruction = entry.instruction.clone();
        episode.scene = entry.scene.clone();
        episode.success = entry.success;
        Ok(episode)
    }
}

fn encode_hand_track(frames: &[Frame]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(frames.len() * HAND_PARAM_DIM * 4);
    for f in frames {
        for x in &f.hand {
            bytes.write_f32::<LittleEndian>(*x).expect("vec write");
        }
    }
    bytes
}

fn decode_hand_track(
    bytes: &[u8],
    num_frames: usize,
    id: &str,
) -> Result<Vec<[f32; HAND_PARAM_DIM]>, DatasetError> {
    if bytes.len() != num_frames * HAND_PARAM_DIM * 4 {
        return Err(DatasetError::CorruptPayload {
            detail: format!("episode {id}: hand.f32 has wrong length {}", bytes.len()),
        });
    }
    let mut r = bytes;
    let mut out = Vec::with_capacity(num_frames);
    for _ in 0..num_frames {
        let mut rec = [0.0f32; HAND_PARAM_DIM];
        for x in rec.iter_mut() {
            *x = r.read_f32::<LittleEndian>().expect("length checked");
        }
        out.push(rec);
    }
    Ok(out)
}

fn encode_extrinsics_track(frames: &[Frame]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(frames.len() * 16 * 4);
    for f in frames {
        let m = f.extrinsics.as_ref().unwrap().to_matrix();
        for row in 0..4 {
            for col in 0..4 {
                bytes.write_f32::<LittleEndian>(m[(row, col)] as f32).expect("vec write");
            }
        }
    }
    bytes
}

fn decode_extrinsics_track(
    bytes: &[u8],
    num_frames: usize,
    id: &str,
) -> Result<Vec<CameraExtrinsics>, DatasetError> {
    if bytes.len() != num_frames * 64 {
        return Err(DatasetError::CorruptPayload {
            detail: format!("episode {id}: extrinsics.f32 has wrong length {}", bytes.len()),
        });
    }
    let mut r = bytes;
    let mut out = Vec::with_capacity(num_frames);
    for _ in 0..num_frames {
        let mut m = Matrix4::zeros();
        for row in 0..4 {
            for col in 0..4 {
                m[(row, col)] = r.read_f32::<LittleEndian>().expect("length checked") as f64;
            }
        }
        out.push(CameraExtrinsics::from_matrix(&m)?);
    }
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let text = serde_json::to_string_pretty(value)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .map_err(|e| DatasetError::CorruptPayload {
            detail: format!("cannot open {}: {e}", path.display()),
        })?
        .read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

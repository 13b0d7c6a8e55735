//! Parametric right-hand model.
//!
//! A hand state is a 109-vector `[theta; beta; r; t]`: 15 finger-joint
//! rotations in 6D form (90), 10 shape coefficients, the wrist rotation in
//! 6D form (6) and the wrist translation in meters (3). [`forward`] turns a
//! state plus a [`HandAsset`] into 21 joint positions and a posed vertex set
//! via shape blendshapes, forward kinematics and linear blend skinning.

mod asset;

pub use asset::{
    HandAsset, NO_PARENT, NUM_ARTICULATED, NUM_JOINTS, NUM_SHAPE, TOY_VERTEX_COUNT,
};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::rotmath::{self, rot6d_to_matrix, Rot6D, RotError, RotMatrix};

/// Dimension of the flattened hand parameter vector.
pub const HAND_PARAM_DIM: usize = 109;

/// Number of articulated finger joints (3 per finger, 5 fingers).
pub const NUM_FINGER_JOINTS: usize = 15;

#[derive(Debug, Error)]
pub enum HandError {
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Rotation(#[from] RotError),
    #[error("invalid hand asset: {0}")]
    InvalidAsset(String),
    #[error("bad asset container magic")]
    BadMagic,
    #[error("unsupported asset container version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decomposed hand state `[theta; beta; r; t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HandParams {
    /// Per-finger-joint rotations, parent-relative, 6D form.
    pub theta: [Rot6D; NUM_FINGER_JOINTS],
    /// Shape coefficients.
    pub beta: [f64; NUM_SHAPE],
    /// Wrist rotation, 6D form.
    pub r: Rot6D,
    /// Wrist translation, meters, camera frame.
    pub t: Vector3<f64>,
}

impl HandParams {
    /// The rest state: identity rotations everywhere, zero shape and
    /// translation.
    pub fn rest() -> Self {
        HandParams {
            theta: [Rot6D::IDENTITY; NUM_FINGER_JOINTS],
            beta: [0.0; NUM_SHAPE],
            r: Rot6D::IDENTITY,
            t: Vector3::zeros(),
        }
    }

    /// Flattens to the canonical 109-vector layout.
    pub fn pack(&self) -> [f64; HAND_PARAM_DIM] {
        let mut out = [0.0; HAND_PARAM_DIM];
        for (j, rot) in self.theta.iter().enumerate() {
            out[j * 6..(j + 1) * 6].copy_from_slice(rot.as_array());
        }
        out[90..100].copy_from_slice(&self.beta);
        out[100..106].copy_from_slice(self.r.as_array());
        out[106] = self.t.x;
        out[107] = self.t.y;
        out[108] = self.t.z;
        out
    }

    /// Inverse of [`HandParams::pack`].
    pub fn unpack(v: &[f64]) -> Result<Self, HandError> {
        if v.len() != HAND_PARAM_DIM {
            return Err(HandError::LengthMismatch {
                expected: HAND_PARAM_DIM,
                got: v.len(),
            });
        }
        let mut theta = [Rot6D::IDENTITY; NUM_FINGER_JOINTS];
        for (j, rot) in theta.iter_mut().enumerate() {
            *rot = Rot6D::from_slice(&v[j * 6..(j + 1) * 6]);
        }
        let mut beta = [0.0; NUM_SHAPE];
        beta.copy_from_slice(&v[90..100]);
        Ok(HandParams {
            theta,
            beta,
            r: Rot6D::from_slice(&v[100..106]),
            t: Vector3::new(v[106], v[107], v[108]),
        })
    }

    /// The wrist pose `(r, t)` as a rigid transform.
    pub fn wrist_pose(&self) -> Result<WristPose, RotError> {
        Ok(WristPose {
            rot: rot6d_to_matrix(&self.r)?,
            t: self.t,
        })
    }
}

/// 21 joint positions in meters, wrist first.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    pub joints: [Vector3<f64>; NUM_JOINTS],
}

impl JointSet {
    pub fn wrist(&self) -> &Vector3<f64> {
        &self.joints[0]
    }
}

/// A rigid wrist transform: rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WristPose {
    pub rot: RotMatrix,
    pub t: Vector3<f64>,
}

impl WristPose {
    pub fn identity() -> Self {
        WristPose {
            rot: RotMatrix::IDENTITY,
            t: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.apply(p) + self.t
    }
}

/// Composes a base-frame relative pose onto its base:
/// `abs = (base_R * rel_R, base_R * rel_t + base_t)`. The identity relative
/// pose is the no-motion case.
pub fn relative_to_absolute(base: &WristPose, rel: &WristPose) -> WristPose {
    WristPose {
        rot: base.rot.compose(&rel.rot),
        t: base.rot.apply(&rel.t) + base.t,
    }
}

/// Expresses an absolute pose relative to a base, inverse of
/// [`relative_to_absolute`].
pub fn absolute_to_relative(base: &WristPose, abs: &WristPose) -> WristPose {
    let rt = base.rot.transpose();
    WristPose {
        rot: rt.compose(&abs.rot),
        t: rt.apply(&(abs.t - base.t)),
    }
}

/// An affine map `x -> r * x + t`.
#[derive(Clone, Copy)]
struct Affine {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Affine {
    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }
}

/// Runs the forward model: shape blendshapes, then forward kinematics over
/// the 16-part tree, then linear blend skinning. Returns the 21 joints and
/// the posed vertices.
///
/// The wrist transform acts about the origin of the asset frame, so the
/// posed wrist joint is `t + R * J_wrist(beta)`.
pub fn forward(
    asset: &HandAsset,
    h: &HandParams,
) -> Result<(JointSet, Vec<Vector3<f64>>), HandError> {
    let r_glob = rot6d_to_matrix(&h.r)?;
    let mut finger_rots = Vec::with_capacity(NUM_FINGER_JOINTS);
    for a in &h.theta {
        finger_rots.push(rot6d_to_matrix(a)?);
    }

    let shaped = asset.shaped_vertices(&h.beta);
    let rest_joints = asset.regress_articulated(&shaped);

    // Global affine per articulated part. The root acts about the asset
    // origin; every finger joint pivots about its own rest position.
    let mut global = Vec::with_capacity(NUM_ARTICULATED);
    global.push(Affine {
        r: *r_glob.matrix(),
        t: h.t,
    });
    for k in 1..NUM_ARTICULATED {
        let parent = &global[asset.parent_of(k)];
        let rk = finger_rots[k - 1].matrix();
        let jk = rest_joints[k];
        global.push(Affine {
            r: parent.r * rk,
            t: parent.apply(&(jk - rk * jk)),
        });
    }

    let mut joints = [Vector3::zeros(); NUM_JOINTS];
    joints[0] = global[0].apply(&rest_joints[0]);
    for k in 1..NUM_ARTICULATED {
        joints[k] = global[asset.parent_of(k)].apply(&rest_joints[k]);
    }

    // Linear blend skinning; weight rows are sparse in practice.
    let mut vertices = Vec::with_capacity(shaped.len());
    for (v, p) in shaped.iter().enumerate() {
        let mut out = Vector3::zeros();
        for (k, g) in global.iter().enumerate() {
            let w = asset.skin_weight(v, k);
            if w != 0.0 {
                out += g.apply(p) * w;
            }
        }
        vertices.push(out);
    }

    // Fingertip sites are pure regressor leaves over the posed mesh.
    for row in NUM_ARTICULATED..NUM_JOINTS {
        joints[row] = asset.regress_row(row, &vertices);
    }

    Ok((JointSet { joints }, vertices))
}

/// Joint positions only, skipping vertex skinning where possible.
///
/// Exact for assets whose fingertip regressor rows touch only vertices
/// rigidly bound to a single part (the toy asset is built that way); the
/// routine falls back internally on the blended-vertex path for rows that
/// are not rigid.
pub fn forward_joints(asset: &HandAsset, h: &HandParams) -> Result<JointSet, HandError> {
    let kin = kinematics(asset, h)?;
    Ok(kin.joints(asset))
}

/// Intermediate kinematic state shared by [`forward_joints`] and the
/// analytic joint Jacobian in the retargeting module.
pub(crate) struct Kinematics {
    pub(crate) global: Vec<(Matrix3<f64>, Vector3<f64>)>,
    pub(crate) rest_joints: Vec<Vector3<f64>>,
    pub(crate) shaped_tip_anchors: Vec<(usize, Vector3<f64>)>,
}

pub(crate) fn kinematics(asset: &HandAsset, h: &HandParams) -> Result<Kinematics, HandError> {
    let r_glob = rot6d_to_matrix(&h.r)?;
    let mut finger_rots = Vec::with_capacity(NUM_FINGER_JOINTS);
    for a in &h.theta {
        finger_rots.push(rot6d_to_matrix(a)?);
    }
    let shaped = asset.shaped_vertices(&h.beta);
    let rest_joints = asset.regress_articulated(&shaped);

    let mut global: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(NUM_ARTICULATED);
    global.push((*r_glob.matrix(), h.t));
    for k in 1..NUM_ARTICULATED {
        let (pr, pt) = global[asset.parent_of(k)];
        let rk = finger_rots[k - 1].matrix();
        let jk = rest_joints[k];
        global.push((pr * rk, pr * (jk - rk * jk) + pt));
    }

    let shaped_tip_anchors = (NUM_ARTICULATED..NUM_JOINTS)
        .map(|row| {
            let part = asset.tip_part(row);
            (part, asset.regress_row(row, &shaped))
        })
        .collect();

    Ok(Kinematics {
        global,
        rest_joints,
        shaped_tip_anchors,
    })
}

impl Kinematics {
    pub(crate) fn joints(&self, asset: &HandAsset) -> JointSet {
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        let (r0, t0) = self.global[0];
        joints[0] = r0 * self.rest_joints[0] + t0;
        for k in 1..NUM_ARTICULATED {
            let (pr, pt) = self.global[asset.parent_of(k)];
            joints[k] = pr * self.rest_joints[k] + pt;
        }
        for (i, (part, anchor)) in self.shaped_tip_anchors.iter().enumerate() {
            let (r, t) = self.global[*part];
            joints[NUM_ARTICULATED + i] = r * anchor + t;
        }
        JointSet { joints }
    }
}

/// Convenience wrapper: geodesic + Euclidean distance between wrist poses.
pub fn wrist_pose_distance(a: &WristPose, b: &WristPose) -> (f64, f64) {
    (
        rotmath::geodesic_distance(&a.rot, &b.rot),
        (a.t - b.t).norm(),
    )
}

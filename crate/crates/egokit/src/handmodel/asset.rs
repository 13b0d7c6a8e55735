//! Hand asset data and the `HAST` binary container.
//!
//! An asset bundles everything the forward model needs: a template mesh,
//! shape blendshapes, a joint regressor, the kinematic tree, skinning
//! weights and the template-shape bone offsets. The bundled toy asset is
//! generated procedurally; it mirrors the vertex count of the licensed
//! MANO mesh (778) with five three-joint finger chains.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! magic   "HAST" (4 bytes)
//! version u32 (currently 1)
//! V       u32  vertex count
//! J       u32  regressed joint count (21)
//! P       u32  articulated part count (16)
//! S       u32  shape component count (10)
//! template_vertices  V*3  f32
//! shape_basis        V*S*3 f32 (vertex-major, then component, then xyz)
//! joint_regressor    J*V  f32 (row-major)
//! kinematic_tree     P    u32 (0xFFFF_FFFF for the root)
//! skinning_weights   V*P  f32 (row-major)
//! rest_joint_offsets P*3  f32 (offset from parent at the template shape)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::HandError;

/// Number of regressed joints: wrist, 15 finger joints, 5 fingertips.
pub const NUM_JOINTS: usize = 21;

/// Number of articulated parts in the kinematic tree.
pub const NUM_ARTICULATED: usize = 16;

/// Number of shape blendshape components.
pub const NUM_SHAPE: usize = 10;

/// Vertex count of the bundled toy asset.
pub const TOY_VERTEX_COUNT: usize = 778;

/// Parent sentinel for the root of the kinematic tree.
pub const NO_PARENT: u32 = u32::MAX;

const MAGIC: &[u8; 4] = b"HAST";
const VERSION: u32 = 1;

/// Immutable hand model data. See the module docs for the on-disk form.
#[derive(Debug, Clone, PartialEq)]
pub struct HandAsset {
    template_vertices: Vec<Vector3<f64>>,
    /// Per-vertex displacement of each shape component, `V * S` entries,
    /// vertex-major.
    shape_basis: Vec<Vector3<f64>>,
    /// `NUM_JOINTS` rows of `V` weights each, rows summing to 1.
    joint_regressor: Vec<f64>,
    kinematic_tree: [u32; NUM_ARTICULATED],
    /// `V` rows of `NUM_ARTICULATED` weights each, rows summing to 1.
    skinning_weights: Vec<f64>,
    rest_joint_offsets: [Vector3<f64>; NUM_ARTICULATED],
    /// Part each fingertip regressor row rides on (derived at build time).
    tip_parts: [usize; NUM_JOINTS - NUM_ARTICULATED],
}

impl HandAsset {
    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn template_vertices(&self) -> &[Vector3<f64>] {
        &self.template_vertices
    }

    pub fn parent_of(&self, part: usize) -> usize {
        debug_assert!(part > 0, "root has no parent");
        self.kinematic_tree[part] as usize
    }

    pub fn kinematic_tree(&self) -> &[u32; NUM_ARTICULATED] {
        &self.kinematic_tree
    }

    pub fn rest_joint_offsets(&self) -> &[Vector3<f64>; NUM_ARTICULATED] {
        &self.rest_joint_offsets
    }

    pub(crate) fn skin_weight(&self, vertex: usize, part: usize) -> f64 {
        self.skinning_weights[vertex * NUM_ARTICULATED + part]
    }

    pub(crate) fn tip_part(&self, row: usize) -> usize {
        self.tip_parts[row - NUM_ARTICULATED]
    }

    /// Template plus the weighted shape displacements.
    pub fn shaped_vertices(&self, beta: &[f64; NUM_SHAPE]) -> Vec<Vector3<f64>> {
        let mut out = self.template_vertices.clone();
        for (v, vert) in out.iter_mut().enumerate() {
            let basis = &self.shape_basis[v * NUM_SHAPE..(v + 1) * NUM_SHAPE];
            for (b, disp) in beta.iter().zip(basis) {
                if *b != 0.0 {
                    *vert += disp * *b;
                }
            }
        }
        out
    }

    /// Per-vertex displacement of one shape component.
    pub fn shape_direction(&self, vertex: usize, component: usize) -> &Vector3<f64> {
        &self.shape_basis[vertex * NUM_SHAPE + component]
    }

    /// Applies one regressor row to a vertex set.
    pub fn regress_row(&self, row: usize, vertices: &[Vector3<f64>]) -> Vector3<f64> {
        let weights = &self.joint_regressor[row * self.vertex_count()..];
        let mut out = Vector3::zeros();
        for (v, p) in vertices.iter().enumerate() {
            let w = weights[v];
            if w != 0.0 {
                out += p * w;
            }
        }
        out
    }

    /// The 16 articulated joint positions for a vertex set.
    pub fn regress_articulated(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        (0..NUM_ARTICULATED).map(|r| self.regress_row(r, vertices)).collect()
    }

    /// All 21 regressed joint positions for a vertex set.
    pub fn regress_all(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        (0..NUM_JOINTS).map(|r| self.regress_row(r, vertices)).collect()
    }

    fn validate(&self) -> Result<(), HandError> {
        let v = self.vertex_count();
        if self.shape_basis.len() != v * NUM_SHAPE {
            return Err(HandError::InvalidAsset("shape basis size mismatch".into()));
        }
        if self.joint_regressor.len() != NUM_JOINTS * v {
            return Err(HandError::InvalidAsset("regressor size mismatch".into()));
        }
        if self.skinning_weights.len() != v * NUM_ARTICULATED {
            return Err(HandError::InvalidAsset("skinning size mismatch".into()));
        }
        if self.kinematic_tree[0] != NO_PARENT {
            return Err(HandError::InvalidAsset("part 0 must be the root".into()));
        }
        for (k, &p) in self.kinematic_tree.iter().enumerate().skip(1) {
            if p as usize >= k {
                return Err(HandError::InvalidAsset(format!(
                    "kinematic tree not topologically ordered at part {k}"
                )));
            }
        }
        for row in 0..NUM_JOINTS {
            let sum: f64 = self.joint_regressor[row * v..(row + 1) * v].iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(HandError::InvalidAsset(format!(
                    "regressor row {row} sums to {sum}, expected 1"
                )));
            }
        }
        for vert in 0..v {
            let sum: f64 = self.skinning_weights
                [vert * NUM_ARTICULATED..(vert + 1) * NUM_ARTICULATED]
                .iter()
                .sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(HandError::InvalidAsset(format!(
                    "skinning row {vert} sums to {sum}, expected 1"
                )));
            }
        }
        // the stored bone offsets must agree with the template regressor
        let joints = self.regress_articulated(&self.template_vertices);
        for k in 0..NUM_ARTICULATED {
            let expected = if k == 0 {
                joints[0]
            } else {
                joints[k] - joints[self.kinematic_tree[k] as usize]
            };
            if (expected - self.rest_joint_offsets[k]).norm() > 1e-5 {
                return Err(HandError::InvalidAsset(format!(
                    "rest joint offset {k} disagrees with the template regressor"
                )));
            }
        }
        Ok(())
    }

    /// Derives which part each fingertip row is rigidly bound to, checking
    /// that its support really is rigid.
    fn derive_tip_parts(&mut self) -> Result<(), HandError> {
        let v = self.vertex_count();
        for row in NUM_ARTICULATED..NUM_JOINTS {
            let weights = &self.joint_regressor[row * v..(row + 1) * v];
            let mut part: Option<usize> = None;
            for (vert, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for k in 0..NUM_ARTICULATED {
                    let sw = self.skin_weight(vert, k);
                    if sw == 0.0 {
                        continue;
                    }
                    if sw != 1.0 {
                        return Err(HandError::InvalidAsset(format!(
                            "fingertip row {row} is supported on a blended vertex"
                        )));
                    }
                    match part {
                        None => part = Some(k),
                        Some(p) if p == k => {}
                        Some(_) => {
                            return Err(HandError::InvalidAsset(format!(
                                "fingertip row {row} spans multiple parts"
                            )))
                        }
                    }
                }
            }
            self.tip_parts[row - NUM_ARTICULATED] = part.ok_or_else(|| {
                HandError::InvalidAsset(format!("fingertip row {row} has empty support"))
            })?;
        }
        Ok(())
    }

    /// Writes the asset in the `HAST` container format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HandError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.vertex_count() as u32)?;
        w.write_u32::<LittleEndian>(NUM_JOINTS as u32)?;
        w.write_u32::<LittleEndian>(NUM_ARTICULATED as u32)?;
        w.write_u32::<LittleEndian>(NUM_SHAPE as u32)?;
        for p in &self.template_vertices {
            write_vec3(&mut w, p)?;
        }
        for d in &self.shape_basis {
            write_vec3(&mut w, d)?;
        }
        for x in &self.joint_regressor {
            w.write_f32::<LittleEndian>(*x as f32)?;
        }
        for p in &self.kinematic_tree {
            w.write_u32::<LittleEndian>(*p)?;
        }
        for x in &self.skinning_weights {
            w.write_f32::<LittleEndian>(*x as f32)?;
        }
        for p in &self.rest_joint_offsets {
            write_vec3(&mut w, p)?;
        }
        Ok(())
    }

    /// Loads and validates a `HAST` container.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HandError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(HandError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(HandError::UnsupportedVersion(version));
        }
        let v = r.read_u32::<LittleEndian>()? as usize;
        let nj = r.read_u32::<LittleEndian>()? as usize;
        let np = r.read_u32::<LittleEndian>()? as usize;
        let ns = r.read_u32::<LittleEndian>()? as usize;
        if nj != NUM_JOINTS || np != NUM_ARTICULATED || ns != NUM_SHAPE {
            return Err(HandError::InvalidAsset(format!(
                "unsupported dimension table (V={v}, J={nj}, P={np}, S={ns})"
            )));
        }
        let template_vertices = read_vec3s(&mut r, v)?;
        let shape_basis = read_vec3s(&mut r, v * NUM_SHAPE)?;
        let joint_regressor = read_f32s(&mut r, NUM_JOINTS * v)?;
        let mut kinematic_tree = [0u32; NUM_ARTICULATED];
        for p in kinematic_tree.iter_mut() {
            *p = r.read_u32::<LittleEndian>()?;
        }
        let skinning_weights = read_f32s(&mut r, v * NUM_ARTICULATED)?;
        let offsets = read_vec3s(&mut r, NUM_ARTICULATED)?;
        let mut rest_joint_offsets = [Vector3::zeros(); NUM_ARTICULATED];
        rest_joint_offsets.copy_from_slice(&offsets);

        let mut asset = HandAsset {
            template_vertices,
            shape_basis,
            joint_regressor,
            kinematic_tree,
            skinning_weights,
            rest_joint_offsets,
            tip_parts: [0; NUM_JOINTS - NUM_ARTICULATED],
        };
        asset.validate()?;
        asset.derive_tip_parts()?;
        Ok(asset)
    }

    /// The bundled procedural toy hand: 778 vertices, five three-joint
    /// finger chains, ten shape components. Deterministic.
    pub fn toy() -> Self {
        build_toy_asset()
    }
}

fn write_vec3<W: Write>(w: &mut W, p: &Vector3<f64>) -> std::io::Result<()> {
    w.write_f32::<LittleEndian>(p.x as f32)?;
    w.write_f32::<LittleEndian>(p.y as f32)?;
    w.write_f32::<LittleEndian>(p.z as f32)
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f32::<LittleEndian>()? as f64);
    }
    Ok(out)
}

fn read_vec3s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<Vector3<f64>>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = r.read_f32::<LittleEndian>()? as f64;
        let y = r.read_f32::<LittleEndian>()? as f64;
        let z = r.read_f32::<LittleEndian>()? as f64;
        out.push(Vector3::new(x, y, z));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Procedural toy asset
// ---------------------------------------------------------------------------

/// Hand frame: wrist at the origin, fingers along +y, palm normal +z,
/// thumb-to-pinky spread along x. Units are meters.
struct ToyLayout {
    finger_base_x: [f64; 5],
    palm_length: f64,
    segment_lengths: [[f64; 3]; 5],
    finger_radius: [f64; 3],
}

impl ToyLayout {
    fn new() -> Self {
        let base = [0.034, 0.027, 0.020];
        let scale = [0.82, 0.95, 1.0, 0.93, 0.78];
        let mut segment_lengths = [[0.0; 3]; 5];
        for (f, s) in scale.iter().enumerate() {
            for (seg, b) in base.iter().enumerate() {
                segment_lengths[f][seg] = b * s;
            }
        }
        ToyLayout {
            finger_base_x: [-0.044, -0.022, 0.0, 0.022, 0.044],
            palm_length: 0.085,
            segment_lengths,
            finger_radius: [0.0085, 0.0075, 0.0065],
        }
    }

    /// Rest position of articulated part `k` (0 = wrist).
    fn joint_position(&self, k: usize) -> Vector3<f64> {
        if k == 0 {
            return Vector3::zeros();
        }
        let f = (k - 1) / 3;
        let seg = (k - 1) % 3;
        let mut y = self.palm_length;
        for s in 0..seg {
            y += self.segment_lengths[f][s];
        }
        Vector3::new(self.finger_base_x[f], y, 0.0)
    }

    fn tip_position(&self, f: usize) -> Vector3<f64> {
        let lens = &self.segment_lengths[f];
        Vector3::new(
            self.finger_base_x[f],
            self.palm_length + lens[0] + lens[1] + lens[2],
            0.0,
        )
    }
}

/// Regressor target sites: 16 articulated joints then 5 fingertips, each
/// backed by four marker vertices in a zero-mean tetrahedral pattern and
/// rigidly skinned to the part the site moves with.
fn marker_offsets() -> [Vector3<f64>; 4] {
    let d = 0.004;
    [
        Vector3::new(d, d, d),
        Vector3::new(d, -d, -d),
        Vector3::new(-d, d, -d),
        Vector3::new(-d, -d, d),
    ]
}

fn build_toy_asset() -> HandAsset {
    let layout = ToyLayout::new();
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    // part each vertex is bound to, with an optional secondary blend
    let mut binds: Vec<(usize, f64, usize)> = Vec::new(); // (part, weight, secondary part)
    let mut marker_sites: Vec<(usize, [usize; 4])> = Vec::new(); // (row, vertex ids)

    // marker clusters, one per regressor row
    for row in 0..NUM_JOINTS {
        let (site, part) = if row == 0 {
            (Vector3::zeros(), 0)
        } else if row < NUM_ARTICULATED {
            // a joint moves with its parent part
            let parent = if (row - 1) % 3 == 0 { 0 } else { row - 1 };
            (layout.joint_position(row), parent)
        } else {
            let f = row - NUM_ARTICULATED;
            (layout.tip_position(f), 1 + f * 3 + 2)
        };
        let mut ids = [0usize; 4];
        for (i, off) in marker_offsets().iter().enumerate() {
            ids[i] = vertices.len();
            vertices.push(site + off);
            binds.push((part, 1.0, 0));
        }
        marker_sites.push((row, ids));
    }

    // palm skin: golden-angle spiral over an ellipse, alternating z sides
    let palm_count = 214;
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    for i in 0..palm_count {
        let r = ((i as f64 + 0.5) / palm_count as f64).sqrt();
        let a = golden * i as f64;
        let x = 0.050 * r * a.cos();
        let y = 0.0425 + 0.0425 * r * a.sin();
        let z = if i % 2 == 0 { 0.012 } else { -0.012 };
        vertices.push(Vector3::new(x, y, z));
        binds.push((0, 1.0, 0));
    }

    // finger skin: rings along each bone segment; the ring nearest the
    // proximal joint blends toward the parent part
    for f in 0..5 {
        for seg in 0..3 {
            let part = 1 + f * 3 + seg;
            let parent = if seg == 0 { 0 } else { part - 1 };
            let start = layout.joint_position(part);
            let radius = layout.finger_radius[seg];
            let len = layout.segment_lengths[f][seg];
            for ring in 0..4 {
                let u = (ring as f64 + 0.5) / 4.0;
                let (w, second) = if ring == 0 { (0.75, parent) } else { (1.0, 0) };
                for p in 0..8 {
                    let a = p as f64 / 8.0 * std::f64::consts::TAU;
                    vertices.push(Vector3::new(
                        start.x + radius * a.cos(),
                        start.y + u * len,
                        radius * a.sin(),
                    ));
                    binds.push((part, w, second));
                }
            }
        }
    }
    assert_eq!(vertices.len(), TOY_VERTEX_COUNT);

    let v = vertices.len();
    let mut skinning_weights = vec![0.0; v * NUM_ARTICULATED];
    for (vert, (part, w, second)) in binds.iter().enumerate() {
        skinning_weights[vert * NUM_ARTICULATED + part] = *w;
        if *w < 1.0 {
            skinning_weights[vert * NUM_ARTICULATED + second] += 1.0 - w;
        }
    }

    let mut joint_regressor = vec![0.0; NUM_JOINTS * v];
    for (row, ids) in &marker_sites {
        for id in ids {
            joint_regressor[row * v + id] = 0.25;
        }
    }

    let mut kinematic_tree = [0u32; NUM_ARTICULATED];
    kinematic_tree[0] = NO_PARENT;
    for k in 1..NUM_ARTICULATED {
        kinematic_tree[k] = if (k - 1) % 3 == 0 { 0 } else { (k - 1) as u32 };
    }

    // ten shape components: scale, finger length, palm width, thickness,
    // then six low-frequency displacement fields
    let mut shape_basis = vec![Vector3::zeros(); v * NUM_SHAPE];
    for (vert, p) in vertices.iter().enumerate() {
        let basis = &mut shape_basis[vert * NUM_SHAPE..(vert + 1) * NUM_SHAPE];
        basis[0] = p * 0.08;
        basis[1] = Vector3::new(0.0, 0.06 * (p.y - 0.02).max(0.0), 0.0);
        basis[2] = Vector3::new(0.06 * p.x, 0.0, 0.0);
        basis[3] = Vector3::new(0.0, 0.0, 0.35 * p.z);
        for (c, b) in basis.iter_mut().enumerate().skip(4) {
            let k = c as f64;
            *b = Vector3::new(
                0.003 * (31.0 * p.y + 1.3 * k).sin(),
                0.003 * (27.0 * p.x + 0.7 * k).cos(),
                0.003 * (23.0 * (p.x + p.y) + 2.1 * k).sin(),
            );
        }
    }

    let mut rest_joint_offsets = [Vector3::zeros(); NUM_ARTICULATED];
    for k in 0..NUM_ARTICULATED {
        rest_joint_offsets[k] = if k == 0 {
            layout.joint_position(0)
        } else {
            layout.joint_position(k) - layout.joint_position(kinematic_tree[k] as usize)
        };
    }

    let mut asset = HandAsset {
        template_vertices: vertices,
        shape_basis,
        joint_regressor,
        kinematic_tree,
        skinning_weights,
        rest_joint_offsets,
        tip_parts: [0; NUM_JOINTS - NUM_ARTICULATED],
    };
    asset.validate().expect("toy asset must validate");
    asset.derive_tip_parts().expect("toy asset tips are rigid");
    asset
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_asset_shape() {
        let asset = HandAsset::toy();
        assert_eq!(asset.vertex_count(), TOY_VERTEX_COUNT);
        assert_eq!(asset.kinematic_tree()[0], NO_PARENT);
        for k in 1..NUM_ARTICULATED {
            assert!((asset.kinematic_tree()[k] as usize) < k);
        }
    }

    #[test]
    fn toy_asset_regressor_matches_layout() {
        let asset = HandAsset::toy();
        let layout = ToyLayout::new();
        let joints = asset.regress_articulated(asset.template_vertices());
        for (k, j) in joints.iter().enumerate() {
            assert!((j - layout.joint_position(k)).norm() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.hast");
        let asset = HandAsset::toy();
        asset.save(&path).unwrap();
        let loaded = HandAsset::load(&path).unwrap();
        assert_eq!(loaded.vertex_count(), asset.vertex_count());
        assert_eq!(loaded.kinematic_tree(), asset.kinematic_tree());
        // float payloads round through f32
        for (a, b) in loaded
            .template_vertices()
            .iter()
            .zip(asset.template_vertices())
        {
            assert!((a - b).norm() < 1e-6);
        }
        // loading what we saved twice is bit-stable
        let path2 = dir.path().join("toy2.hast");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hast");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(HandAsset::load(&path), Err(HandError::BadMagic)));

        let path = dir.path().join("futuristic.hast");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            HandAsset::load(&path),
            Err(HandError::UnsupportedVersion(99))
        ));
    }
}

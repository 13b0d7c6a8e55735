//! Rotation representations and SO(3) operations.
//!
//! Rotations cross module boundaries in two forms: the continuous 6D
//! encoding ([`Rot6D`], the first two columns of a rotation matrix) used
//! inside parameter vectors, and validated 3x3 matrices ([`RotMatrix`]).
//! The SVD projection [`project_to_so3`] and the chordal mean
//! [`average_rotations`] are the primitives the trajectory decoder relies on.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Orthonormality / determinant tolerance for [`RotMatrix`] validation.
pub const ROT_TOL: f64 = 1e-6;

/// Norm threshold below which a 6D column counts as zero.
const DEGENERATE_NORM: f64 = 1e-9;

/// Minimum angle (radians) between the two 6D columns.
const DEGENERATE_ANGLE: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum RotError {
    /// 6D input whose columns are (near-)parallel or (near-)zero.
    #[error("degenerate 6D rotation input: {0}")]
    DegenerateInput(&'static str),
    /// A 3x3 matrix that fails the rotation invariants.
    #[error("matrix is not a rotation: {0}")]
    InvalidRotation(&'static str),
    /// SVD projection input with two or more vanishing singular values.
    #[error("matrix rank below 2, cannot project to SO(3)")]
    RankDeficient,
}

/// Continuous 6D rotation encoding: the first two columns of a rotation
/// matrix, stacked `[c0, c1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn new(a: [f64; 6]) -> Self {
        Rot6D(a)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        let mut a = [0.0; 6];
        a.copy_from_slice(&s[..6]);
        Rot6D(a)
    }

    pub fn col0(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn col1(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn as_array(&self) -> &[f64; 6] {
        &self.0
    }
}

/// A validated rotation matrix: orthonormal within [`ROT_TOL`] (Frobenius)
/// and determinant +1 within [`ROT_TOL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix(Matrix3<f64>);

impl RotMatrix {
    pub const IDENTITY: RotMatrix = RotMatrix(Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0,
    ));

    /// Validates the rotation invariants before wrapping.
    pub fn try_new(m: Matrix3<f64>) -> Result<Self, RotError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(RotError::InvalidRotation("non-finite entries"));
        }
        let gram_defect = (m.transpose() * m - Matrix3::identity()).norm();
        if gram_defect > ROT_TOL {
            return Err(RotError::InvalidRotation("not orthonormal"));
        }
        if (m.determinant() - 1.0).abs() > ROT_TOL {
            return Err(RotError::InvalidRotation("determinant is not +1"));
        }
        Ok(RotMatrix(m))
    }

    /// Wraps without validation. Reserved for construction sites that
    /// guarantee the invariants algebraically (axis-angle, SVD projection).
    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        RotMatrix(m)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let m = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            angle,
        );
        RotMatrix(m.into_inner())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> RotMatrix {
        RotMatrix(self.0.transpose())
    }

    /// Rotation composition `self * rhs`.
    pub fn compose(&self, rhs: &RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * rhs.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// Converts a 6D encoding to a rotation matrix: normalize the first column,
/// Gram-Schmidt the second, complete with the cross product.
pub fn rot6d_to_matrix(a: &Rot6D) -> Result<RotMatrix, RotError> {
    let a0 = a.col0();
    let a1 = a.col1();
    if !a0.iter().chain(a1.iter()).all(|v| v.is_finite()) {
        return Err(RotError::DegenerateInput("non-finite entries"));
    }
    let n0 = a0.norm();
    let n1 = a1.norm();
    if n0 < DEGENERATE_NORM || n1 < DEGENERATE_NORM {
        return Err(RotError::DegenerateInput("near-zero column norm"));
    }
    let b0 = a0 / n0;
    let u = a1 - b0 * b0.dot(&a1);
    // sin of the angle between the columns
    if u.norm() / n1 < DEGENERATE_ANGLE {
        return Err(RotError::DegenerateInput("columns are parallel"));
    }
    let b1 = u.normalize();
    let b2 = b0.cross(&b1);
    Ok(RotMatrix(Matrix3::from_columns(&[b0, b1, b2])))
}

/// Reads the first two columns of a validated rotation back into 6D form.
pub fn matrix_to_rot6d(m: &RotMatrix) -> Rot6D {
    let c0 = m.0.column(0);
    let c1 = m.0.column(1);
    Rot6D([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]])
}

/// Geodesic angle between two rotations, `acos((trace(R1^T R2) - 1) / 2)`,
/// in `[0, pi]`. The trace argument is clamped so floating-point noise at
/// the endpoints cannot produce NaN.
pub fn geodesic_distance(r1: &RotMatrix, r2: &RotMatrix) -> f64 {
    let c = ((r1.0.transpose() * r2.0).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

/// Frobenius-nearest rotation to an arbitrary 3x3 matrix via SVD:
/// `R = U V^T`, negating the column of `U` paired with the smallest
/// singular value when the product would be a reflection.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<RotMatrix, RotError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(RotError::InvalidRotation("non-finite entries"));
    }
    let svd = m.svd(true, true);
    let sv = svd.singular_values;
    if sv.iter().filter(|&&s| s < DEGENERATE_NORM).count() >= 2 {
        return Err(RotError::RankDeficient);
    }
    let mut u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    if (u * v_t).determinant() < 0.0 {
        let (min_idx, _) = sv
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three singular values");
        u.column_mut(min_idx).neg_mut();
    }
    Ok(RotMatrix(u * v_t))
}

/// Chordal mean of rotations: average elementwise, then project back to
/// SO(3). Errors propagate from the projection.
pub fn average_rotations(rs: &[RotMatrix]) -> Result<RotMatrix, RotError> {
    assert!(!rs.is_empty(), "average_rotations needs at least one input");
    let mut acc = Matrix3::zeros();
    for r in rs {
        acc += r.0;
    }
    acc /= rs.len() as f64;
    project_to_so3(&acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Uniform-ish random rotation from an axis-angle draw.
    pub(crate) fn random_rotation(rng: &mut impl rand::Rng) -> RotMatrix {
        let axis = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        );
        let angle = rng.random::<f64>() * std::f64::consts::PI;
        RotMatrix::from_axis_angle(&axis, angle)
    }

    fn frob_defect(m: &Matrix3<f64>) -> f64 {
        (m.transpose() * m - Matrix3::identity()).norm()
    }

    /// Independent Gram-Schmidt oracle, written out longhand.
    fn gram_schmidt_oracle(a: &Rot6D) -> Matrix3<f64> {
        let a0 = a.col0();
        let a1 = a.col1();
        let b0 = a0 / a0.norm();
        let mut b1 = a1 - b0 * (b0[0] * a1[0] + b0[1] * a1[1] + b0[2] * a1[2]);
        b1 /= b1.norm();
        let b2 = Vector3::new(
            b0[1] * b1[2] - b0[2] * b1[1],
            b0[2] * b1[0] - b0[0] * b1[2],
            b0[0] * b1[1] - b0[1] * b1[0],
        );
        Matrix3::from_columns(&[b0, b1, b2])
    }

    #[test]
    fn rot6d_canonical_basis_gives_identity() {
        let r = rot6d_to_matrix(&Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(r.matrix(), &Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn rot6d_normalization_removes_scale() {
        let r = rot6d_to_matrix(&Rot6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_abs_diff_eq!(r.matrix(), &Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn rot6d_random_inputs_give_valid_rotations() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..500 {
            let a = Rot6D(std::array::from_fn(|_| rng.random::<f64>() * 4.0 - 2.0));
            match rot6d_to_matrix(&a) {
                Ok(r) => {
                    assert!(frob_defect(r.matrix()) < 1e-6);
                    assert_abs_diff_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-6);
                    assert_abs_diff_eq!(r.matrix(), &gram_schmidt_oracle(&a), epsilon = 1e-9);
                }
                Err(RotError::DegenerateInput(_)) => {} // vanishing draw, allowed
                Err(e) => panic!("unexpected error {e:?}"),
            }
        }
    }

    #[test]
    fn rot6d_degenerate_inputs_error() {
        assert_eq!(
            rot6d_to_matrix(&Rot6D([0.0; 6])),
            Err(RotError::DegenerateInput("near-zero column norm"))
        );
        assert_eq!(
            rot6d_to_matrix(&Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(RotError::DegenerateInput("columns are parallel"))
        );
        // anti-parallel is just as degenerate
        assert_eq!(
            rot6d_to_matrix(&Rot6D([1.0, 1.0, 0.0, -1.0, -1.0, 0.0])),
            Err(RotError::DegenerateInput("columns are parallel"))
        );
    }

    #[test]
    fn matrix_to_rot6d_identity_and_z90() {
        assert_eq!(
            matrix_to_rot6d(&RotMatrix::IDENTITY).0,
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        let z90 = RotMatrix::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let a = matrix_to_rot6d(&z90);
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (got, want) in a.0.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn rot6d_round_trip_on_random_rotations() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).unwrap();
            max_err = max_err.max((back.matrix() - r.matrix()).norm());
        }
        assert!(max_err < 1e-6, "round-trip error {max_err}");
    }

    #[test]
    fn try_new_rejects_non_rotations() {
        assert!(RotMatrix::try_new(Matrix3::identity() * 2.0).is_err());
        // reflection: orthonormal but det = -1
        let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert_eq!(
            RotMatrix::try_new(refl),
            Err(RotError::InvalidRotation("determinant is not +1"))
        );
    }

    #[test]
    fn geodesic_identities() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            assert_abs_diff_eq!(geodesic_distance(&r, &r), 0.0, epsilon = 1e-7);
        }
        for &alpha in &[0.1, 0.5, 1.0, 2.0, 3.0] {
            let r = RotMatrix::from_axis_angle(&Vector3::new(1.0, 2.0, -1.0), alpha);
            assert_abs_diff_eq!(
                geodesic_distance(&RotMatrix::IDENTITY, &r),
                alpha,
                epsilon = 1e-9
            );
        }
        let antipode = RotMatrix::from_axis_angle(&Vector3::x(), std::f64::consts::PI);
        assert_abs_diff_eq!(
            geodesic_distance(&RotMatrix::IDENTITY, &antipode),
            std::f64::consts::PI,
            epsilon = 1e-9
        );
    }

    #[test]
    fn geodesic_is_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            assert_abs_diff_eq!(
                geodesic_distance(&a, &b),
                geodesic_distance(&b, &a),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn projection_fixed_point_and_scale_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let p = project_to_so3(r.matrix()).unwrap();
            assert!((p.matrix() - r.matrix()).norm() < 1e-6);
            for &c in &[0.5, 2.0, 17.0] {
                let p = project_to_so3(&(r.matrix() * c)).unwrap();
                assert!((p.matrix() - r.matrix()).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_symmetric_pair_is_identity() {
        // keep the half-angle below pi/2 so the chordal mean stays rank 3
        for i in 1..30 {
            let alpha = i as f64 * 0.05;
            let rp = RotMatrix::from_axis_angle(&Vector3::z(), alpha);
            let rm = RotMatrix::from_axis_angle(&Vector3::z(), -alpha);
            let mean = (rp.matrix() + rm.matrix()) / 2.0;
            let p = project_to_so3(&mean).unwrap();
            assert!((p.matrix() - Matrix3::identity()).norm() < 1e-6, "alpha={alpha}");
        }
    }

    #[test]
    fn projection_corrects_reflections() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let refl = r.matrix() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
            assert!(refl.determinant() < 0.0);
            let p = project_to_so3(&refl).unwrap();
            assert!(frob_defect(p.matrix()) < 1e-6);
            assert_abs_diff_eq!(p.matrix().determinant(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn projection_rank_deficient_errors() {
        let mut m = Matrix3::zeros();
        m[(0, 0)] = 1.0;
        assert_eq!(project_to_so3(&m), Err(RotError::RankDeficient));
        assert_eq!(project_to_so3(&Matrix3::zeros()), Err(RotError::RankDeficient));
    }

    #[test]
    fn average_identical_rotations_is_identity_on_them() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let r = random_rotation(&mut rng);
        let avg = average_rotations(&[r, r, r]).unwrap();
        assert!((avg.matrix() - r.matrix()).norm() < 1e-9);
        // steady-state trunk size used throughout the pipeline
        let avg16 = average_rotations(&vec![r; 16]).unwrap();
        assert!((avg16.matrix() - r.matrix()).norm() < 1e-9);
    }

    #[test]
    fn average_symmetric_pair_is_identity() {
        let d = 10.0_f64.to_radians();
        let pair = [
            RotMatrix::from_axis_angle(&Vector3::z(), d),
            RotMatrix::from_axis_angle(&Vector3::z(), -d),
        ];
        let avg = average_rotations(&pair).unwrap();
        assert!((avg.matrix() - Matrix3::identity()).norm() < 1e-6);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_rotation() -> impl Strategy<Value = RotMatrix> {
            (
                [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
                0.0f64..std::f64::consts::PI,
            )
                .prop_filter("axis must not vanish", |(axis, _)| {
                    axis.iter().map(|v| v * v).sum::<f64>() > 1e-4
                })
                .prop_map(|(axis, angle)| {
                    RotMatrix::from_axis_angle(&Vector3::new(axis[0], axis[1], axis[2]), angle)
                })
        }

        proptest! {
            #[test]
            fn triangle_inequality(a in arb_rotation(), b in arb_rotation(), c in arb_rotation()) {
                let d_ac = geodesic_distance(&a, &c);
                let d_ab = geodesic_distance(&a, &b);
                let d_bc = geodesic_distance(&b, &c);
                prop_assert!(d_ac <= d_ab + d_bc + 1e-6);
            }

            #[test]
            fn projection_scale_invariant(r in arb_rotation(), c in 1e-3f64..100.0) {
                let p = project_to_so3(&(r.matrix() * c)).unwrap();
                prop_assert!((p.matrix() - r.matrix()).norm() < 1e-6);
            }

            #[test]
            fn rot6d_round_trip_is_identity_after_normalization(r in arb_rotation()) {
                let a = matrix_to_rot6d(&r);
                let m = rot6d_to_matrix(&a).unwrap();
                let a2 = matrix_to_rot6d(&m);
                let m2 = rot6d_to_matrix(&a2).unwrap();
                prop_assert!((m.matrix() - m2.matrix()).norm() < 1e-9);
                for (x, y) in a.0.iter().zip(a2.0.iter()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}

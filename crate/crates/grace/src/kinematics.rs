//! Rotation algebra, shoulder Euler decomposition, elbow angle extraction, and
//! a 4-DOF forward kinematics map for the right arm.
//!
//! The shoulder is parameterized by the Y-X'-Y'' intrinsic Euler sequence
//! (plane of elevation, elevation in plane, axial rotation); the elbow is a
//! single flexion angle about the local x axis. The rest pose (all angles
//! zero) hangs straight down along -y.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

/// Tolerance for the orthonormality and determinant checks on rotation input.
pub const ROTATION_TOL: f64 = 1e-9;

/// Below this value of |sin(elevation)| the Y-X'-Y'' decomposition is singular.
pub const GIMBAL_LOCK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("matrix is not orthonormal: max |R^T R - I| entry = {0:.3e}")]
    NotOrthonormal(f64),
    #[error("matrix is not a proper rotation: det = {0:.12}")]
    ImproperRotation(f64),
    #[error("arm segment lengths must be strictly positive: got {0}")]
    NonPositiveLength(f64),
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Validates orthonormality (`R^T R = I`) and `det R = +1` to within
    /// [`ROTATION_TOL`] per entry.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, KinematicsError> {
        let r = Self { m };
        let rt_r = r.transpose().mul(&r);
        let mut max_dev: f64 = 0.0;
        for (i, row) in rt_r.m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((v - expect).abs());
            }
        }
        if max_dev > ROTATION_TOL {
            return Err(KinematicsError::NotOrthonormal(max_dev));
        }
        let det = r.det();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(KinematicsError::ImproperRotation(det));
        }
        Ok(r)
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for (k, row) in other.m.iter().enumerate() {
                    acc += self.m[i][k] * row[j];
                }
                out[i][j] = acc;
            }
        }
        Self { m: out }
    }

    pub fn apply(&self, v: &[f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entrywise difference between two rotations.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                max = max.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        max
    }
}

/// Maps any real angle into the canonical range `[0, 2*pi)`.
pub fn canonical_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can return exactly TAU when the input is a tiny negative value
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Shortest circular distance between two angles, in `[0, pi]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (canonical_angle(a) - canonical_angle(b)).abs();
    d.min(TAU - d)
}

/// One 4-DOF right-arm joint configuration. All angles canonicalized to
/// `[0, 2*pi)` at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig {
    pub plane_of_elevation: f64,
    pub elevation: f64,
    pub axial_rotation: f64,
    pub elbow_flexion: f64,
}

impl JointConfig {
    pub fn new(
        plane_of_elevation: f64,
        elevation: f64,
        axial_rotation: f64,
        elbow_flexion: f64,
    ) -> Self {
        Self {
            plane_of_elevation: canonical_angle(plane_of_elevation),
            elevation: canonical_angle(elevation),
            axial_rotation: canonical_angle(axial_rotation),
            elbow_flexion: canonical_angle(elbow_flexion),
        }
    }

    pub fn rest() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.plane_of_elevation,
            self.elevation,
            self.axial_rotation,
            self.elbow_flexion,
        ]
    }

    /// Euclidean distance in angle space (no wrap-around).
    pub fn distance(&self, other: &Self) -> f64 {
        let a = self.as_array();
        let b = other.as_array();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Right-arm segment lengths and shoulder position.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArmGeometry {
    pub upper_arm_length: f64,
    pub forearm_length: f64,
    pub shoulder_origin: [f64; 3],
}

impl ArmGeometry {
    pub fn new(
        upper_arm_length: f64,
        forearm_length: f64,
        shoulder_origin: [f64; 3],
    ) -> Result<Self, KinematicsError> {
        if upper_arm_length <= 0.0 {
            return Err(KinematicsError::NonPositiveLength(upper_arm_length));
        }
        if forearm_length <= 0.0 {
            return Err(KinematicsError::NonPositiveLength(forearm_length));
        }
        Ok(Self {
            upper_arm_length,
            forearm_length,
            shoulder_origin,
        })
    }

    pub fn reach(&self) -> f64 {
        self.upper_arm_length + self.forearm_length
    }
}

impl Default for ArmGeometry {
    /// Anthropometric mid-range segment lengths, shoulder at the origin.
    fn default() -> Self {
        Self {
            upper_arm_length: 0.30,
            forearm_length: 0.25,
            shoulder_origin: [0.0, 0.0, 0.0],
        }
    }
}

/// Orientation of segment `j` relative to segment `i`: `R_i^T R_j`.
pub fn relative_rotation(r_i: &Rotation, r_j: &Rotation) -> Rotation {
    r_i.transpose().mul(r_j)
}

/// Shoulder angles recovered from a relative rotation, plus a flag marking the
/// singular configurations where the plane of elevation is not observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShoulderAngles {
    pub plane_of_elevation: f64,
    pub elevation: f64,
    pub axial_rotation: f64,
    pub gimbal_lock: bool,
}

/// Builds the shoulder rotation `Ry(plane) * Rx(elevation) * Ry(axial)`.
pub fn compose_shoulder(plane_of_elevation: f64, elevation: f64, axial_rotation: f64) -> Rotation {
    Rotation::rot_y(plane_of_elevation)
        .mul(&Rotation::rot_x(elevation))
        .mul(&Rotation::rot_y(axial_rotation))
}

/// Decomposes a rotation into the Y-X'-Y'' sequence with elevation in `[0, pi]`.
///
/// At gimbal lock (|sin(elevation)| < [`GIMBAL_LOCK_TOL`]) only the sum
/// (elevation = 0) or difference (elevation = pi) of the two y angles is
/// observable; the convention `plane_of_elevation = 0` is returned and the
/// `gimbal_lock` flag is set.
pub fn decompose_shoulder(rel: &Rotation) -> ShoulderAngles {
    let m = rel.matrix();
    let elevation = m[1][1].clamp(-1.0, 1.0).acos();
    if elevation.sin().abs() < GIMBAL_LOCK_TOL {
        let axial = f64::atan2(m[0][2], m[0][0]);
        return ShoulderAngles {
            plane_of_elevation: 0.0,
            elevation: if m[1][1] > 0.0 { 0.0 } else { PI },
            axial_rotation: canonical_angle(axial),
            gimbal_lock: true,
        };
    }
    let plane = f64::atan2(m[0][1], m[2][1]);
    let axial = f64::atan2(m[1][0], -m[1][2]);
    ShoulderAngles {
        plane_of_elevation: canonical_angle(plane),
        elevation,
        axial_rotation: canonical_angle(axial),
        gimbal_lock: false,
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Angle between the upper-arm and forearm direction vectors in their common
/// plane, in `[0, pi]`. Invariant under scaling of either input.
///
/// Inputs must be nonzero. When the normalized vectors are parallel within
/// 1e-10 (degenerate cross product) the angle is 0 for parallel and pi for
/// anti-parallel by convention.
pub fn elbow_angle(v_upper: &[f64; 3], v_forearm: &[f64; 3]) -> f64 {
    let nu = norm3(v_upper);
    let nf = norm3(v_forearm);
    assert!(nu > 0.0 && nf > 0.0, "elbow_angle requires nonzero vectors");
    let u = [v_upper[0] / nu, v_upper[1] / nu, v_upper[2] / nu];
    let f = [v_forearm[0] / nf, v_forearm[1] / nf, v_forearm[2] / nf];
    let c = cross3(&u, &f);
    let d = dot3(&u, &f);
    if norm3(&c) < 1e-10 {
        return if d >= 0.0 { 0.0 } else { PI };
    }
    // Both unit vectors already lie in the plane spanned by them, so the
    // projection step leaves them unchanged and the in-plane angle is the
    // full angle between them.
    d.clamp(-1.0, 1.0).acos()
}

/// Wrist position for a joint configuration: shoulder, upper arm hanging along
/// the rotated -y axis, forearm folded by the elbow rotation about local x.
pub fn forward_hand_position(cfg: &JointConfig, geom: &ArmGeometry) -> [f64; 3] {
    let r_shoulder = compose_shoulder(cfg.plane_of_elevation, cfg.elevation, cfg.axial_rotation);
    let r_elbow = Rotation::rot_x(cfg.elbow_flexion);
    let upper = r_shoulder.apply(&[0.0, -geom.upper_arm_length, 0.0]);
    let fore = r_shoulder
        .mul(&r_elbow)
        .apply(&[0.0, -geom.forearm_length, 0.0]);
    let o = geom.shoulder_origin;
    [
        o[0] + upper[0] + fore[0],
        o[1] + upper[1] + fore[1],
        o[2] + upper[2] + fore[2],
    ]
}

/// Euclidean distance between two workspace points.
pub fn point_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    norm3(&d)
}

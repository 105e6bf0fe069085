//! Exact 3-D vector and rotation primitives.
//!
//! Rotations are stored as row-major 3×3 matrices because every mapping
//! formula downstream is a plain matrix product. Quaternions only appear at
//! the wire boundary ([`Rot3::from_quaternion`], [`Rot3::to_quaternion`]).

use core::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use crate::{Error, Result};

/// Orthonormality and determinant tolerance used when validating a [`Rot3`].
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub const fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_squared())
    }

    /// Unit vector in the same direction, or `None` for a zero-length vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, other: Vec3, t: f64) -> Vec3 {
        self + (other - self) * t
    }
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a.dot(b)
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    a.cross(b)
}

pub fn norm(a: Vec3) -> f64 {
    a.norm()
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// A general row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Default for Mat3 {
    fn default() -> Self {
        Mat3::IDENTITY
    }
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3::from_rows(c0, c1, c2).transpose()
    }

    pub fn from_row_major(v: [f64; 9]) -> Self {
        Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.0[i])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Cofactor matrix; equals `det · M⁻ᵀ`.
    fn cofactor(&self) -> Mat3 {
        let (r0, r1, r2) = (self.row(0), self.row(1), self.row(2));
        Mat3::from_rows(r1.cross(r2), r2.cross(r0), r0.cross(r1))
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.0.iter().flatten().map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Largest absolute entry of `MᵀM − I`.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.transpose() * *self;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.0[i][j] - target).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut out = self;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] += o.0[i][j];
            }
        }
        out
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        self + o.scale(-1.0)
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        out
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }
}

/// A proper rotation: orthonormal columns and determinant +1, both within
/// [`ROTATION_TOL`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rot3(Mat3);

impl Rot3 {
    pub const IDENTITY: Rot3 = Rot3(Mat3::IDENTITY);

    /// Validates `m` without altering it.
    pub fn new(m: Mat3) -> Result<Rot3> {
        if !m.is_finite() {
            return Err(Error::NonFinite("rotation"));
        }
        if m.orthonormality_residual() > ROTATION_TOL || (m.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation);
        }
        Ok(Rot3(m))
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Rot3> {
        Rot3::new(Mat3::from_row_major(v))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        self.0.to_row_major()
    }

    pub fn transpose(&self) -> Rot3 {
        Rot3(self.0.transpose())
    }

    pub fn inverse(&self) -> Rot3 {
        self.transpose()
    }

    pub fn rot_x(angle: f64) -> Rot3 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Rot3(Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]))
    }

    pub fn rot_y(angle: f64) -> Rot3 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Rot3(Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]))
    }

    pub fn rot_z(angle: f64) -> Rot3 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        Rot3(Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))
    }

    /// Rodrigues' formula. A zero axis yields the identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Rot3 {
        let Some(k) = axis.normalized() else {
            return Rot3::IDENTITY;
        };
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let skew = Mat3([[0.0, -k.z, k.y], [k.z, 0.0, -k.x], [-k.y, k.x, 0.0]]);
        Rot3(Mat3::IDENTITY + skew.scale(s) + (skew * skew).scale(1.0 - c))
    }

    /// Unit axis and angle in `[0, π]`. The axis is `Vec3::Z` for the identity.
    pub fn to_axis_angle(&self) -> (Vec3, f64) {
        let [w, x, y, z] = self.to_quaternion();
        let v = Vec3::new(x, y, z);
        let s = v.norm();
        if s == 0.0 {
            return (Vec3::Z, 0.0);
        }
        (v / s, 2.0 * libm::atan2(s, w))
    }

    /// Unit quaternion `[w, x, y, z]` with `w ≥ 0` (Shepperd's method).
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0 .0;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > m[0][0].max(m[1][1]).max(m[2][2]) {
            let s = 2.0 * libm::sqrt(1.0 + tr);
            [
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            ]
        } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
            let s = 2.0 * libm::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]);
            [
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            ]
        } else if m[1][1] >= m[2][2] {
            let s = 2.0 * libm::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]);
            [
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            ]
        } else {
            let s = 2.0 * libm::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]);
            [
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            ]
        };
        let n = libm::sqrt(q.iter().map(|v| v * v).sum());
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        q.map(|v| sign * v / n)
    }

    /// Builds a rotation from a quaternion `[w, x, y, z]`, normalizing it first.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Rot3> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quaternion"));
        }
        let n = libm::sqrt(q.iter().map(|v| v * v).sum());
        if n < 1e-12 {
            return Err(Error::SingularMatrix);
        }
        let [w, x, y, z] = q.map(|v| v / n);
        Ok(Rot3(Mat3([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])))
    }

    /// Roll/pitch/yaw for `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn to_rpy(&self) -> [f64; 3] {
        let m = &self.0 .0;
        let pitch = libm::asin((-m[2][0]).clamp(-1.0, 1.0));
        let roll = libm::atan2(m[2][1], m[2][2]);
        let yaw = libm::atan2(m[1][0], m[0][0]);
        [roll, pitch, yaw]
    }

    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Rot3 {
        Rot3::rot_z(yaw) * Rot3::rot_y(pitch) * Rot3::rot_x(roll)
    }

    pub fn angle(&self) -> f64 {
        rotation_angle(self)
    }

    /// Angle of the relative rotation `selfᵀ · other`.
    pub fn angle_to(&self, other: &Rot3) -> f64 {
        rotation_angle(&(self.transpose() * *other))
    }

    /// Moves from `self` toward `target` by fraction `t` of the geodesic.
    pub fn slerp(&self, target: &Rot3, t: f64) -> Rot3 {
        let rel = self.transpose() * *target;
        let (axis, angle) = rel.to_axis_angle();
        let stepped = *self * Rot3::from_axis_angle(axis, angle * t);
        orthonormalize(&stepped.0).unwrap_or(stepped)
    }

    /// Moves from `self` toward `target` by at most `max_angle` radians along
    /// the geodesic. Arrives exactly when the remaining angle is within reach.
    pub fn step_toward(&self, target: &Rot3, max_angle: f64) -> Rot3 {
        let rel = self.transpose() * *target;
        let (axis, angle) = rel.to_axis_angle();
        if angle <= max_angle {
            return *target;
        }
        let stepped = *self * Rot3::from_axis_angle(axis, max_angle);
        orthonormalize(&stepped.0).unwrap_or(stepped)
    }
}

impl Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, o: Rot3) -> Rot3 {
        Rot3(self.0 * o.0)
    }
}

impl Mul<Vec3> for Rot3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.0 * v
    }
}

impl From<Rot3> for Mat3 {
    fn from(r: Rot3) -> Mat3 {
        r.0
    }
}

/// Nearest proper rotation to `m` in the Frobenius sense (the orthogonal
/// polar factor), computed by Newton iteration `X ← (X + X⁻ᵀ) / 2`.
pub fn orthonormalize(m: &Mat3) -> Result<Rot3> {
    if !m.is_finite() {
        return Err(Error::NonFinite("matrix"));
    }
    let scale = m.frobenius_norm();
    if scale == 0.0 {
        return Err(Error::SingularMatrix);
    }
    let det = m.determinant();
    // Relative rank test: det of a rank-deficient matrix is ~0 compared to |M|³.
    if det <= 1e-12 * scale * scale * scale {
        return Err(Error::SingularMatrix);
    }

    let mut x = *m;
    for _ in 0..100 {
        let det = x.determinant();
        if det.abs() < f64::MIN_POSITIVE {
            return Err(Error::SingularMatrix);
        }
        let next = (x + x.cofactor().scale(1.0 / det)).scale(0.5);
        let delta = (next - x).frobenius_norm();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    if !x.is_finite() || x.determinant() <= 0.0 {
        return Err(Error::SingularMatrix);
    }
    Rot3::new(x).map_err(|_| Error::SingularMatrix)
}

/// Rotation angle in `[0, π]`: `arccos((tr(R) − 1) / 2)`.
///
/// Evaluated as `atan2(|vee(R − Rᵀ)|, tr(R) − 1)`, which is the same quantity
/// but keeps full precision near 0 and π where `arccos` loses it.
pub fn rotation_angle(r: &Rot3) -> f64 {
    let m = &r.0 .0;
    let skew = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
    let c = (r.0.trace() - 1.0).clamp(-2.0, 2.0);
    libm::atan2(skew.norm(), c)
}

/// Position plus orientation of a hand or end-effector in its world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Rot3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Vec3::ZERO,
        rotation: Rot3::IDENTITY,
    };

    pub const fn new(position: Vec3, rotation: Rot3) -> Self {
        Self { position, rotation }
    }

    /// Row-major homogeneous transform.
    #[rustfmt::skip]
    pub fn to_matrix4(&self) -> [f64; 16] {
        let r = self.rotation.matrix();
        let p = self.position;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], p.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], p.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], p.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// Parses a row-major homogeneous transform, validating the rotation block
    /// and the `[0, 0, 0, 1]` bottom row.
    pub fn from_matrix4(m: [f64; 16]) -> Result<Pose> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transform"));
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::InvalidRotation);
        }
        let rotation = Rot3::from_row_major([m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]])?;
        Ok(Pose::new(Vec3::new(m[3], m[7], m[11]), rotation))
    }

    /// Applies the pose to a point expressed in the local frame.
    pub fn transform_point(&self, local: Vec3) -> Vec3 {
        self.position + self.rotation * local
    }
}
